//! Quality metrics: PSNR and occupancy intersection-over-union.

use crate::error::{MinerError, Result};
use crate::pyramid::{DomainKind, GridSignal};
use serde::Serialize;

/// Metric summary, serialized as one JSON line by the CLI.
#[derive(Debug, Clone, Serialize)]
pub struct MetricReport {
    pub psnr_db: f64,
    pub mse: f64,
    /// Present for volumes only.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub iou: Option<f64>,
}

/// Mean squared error, accumulated in f64.
pub fn mse(a: &GridSignal, b: &GridSignal) -> Result<f64> {
    if a.dims != b.dims || a.channels != b.channels {
        return Err(MinerError::DimMismatch {
            a: a.dims.clone(),
            b: b.dims.clone(),
        });
    }
    let sum: f64 = a
        .values
        .iter()
        .zip(&b.values)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum();
    Ok(sum / a.values.len() as f64)
}

/// PSNR in dB for signals in `[0, 1]` (peak = 1). Identical signals report
/// `f64::INFINITY`.
pub fn psnr(a: &GridSignal, b: &GridSignal) -> Result<f64> {
    let e = mse(a, b)?;
    if e == 0.0 {
        Ok(f64::INFINITY)
    } else {
        Ok(10.0 * (1.0 / e).log10())
    }
}

/// Intersection-over-union of occupancies binarized at `threshold`.
/// An empty union is defined as IoU 1.
pub fn iou(a: &GridSignal, b: &GridSignal, threshold: f32) -> Result<f64> {
    if a.domain_kind != DomainKind::Volume3D || b.domain_kind != DomainKind::Volume3D {
        return Err(MinerError::WrongDomain {
            expected: DomainKind::Volume3D,
        });
    }
    if a.dims != b.dims {
        return Err(MinerError::DimMismatch {
            a: a.dims.clone(),
            b: b.dims.clone(),
        });
    }
    let mut inter = 0u64;
    let mut union = 0u64;
    for (&x, &y) in a.values.iter().zip(&b.values) {
        let xa = x >= threshold;
        let ya = y >= threshold;
        if xa && ya {
            inter += 1;
        }
        if xa || ya {
            union += 1;
        }
    }
    if union == 0 {
        Ok(1.0)
    } else {
        Ok(inter as f64 / union as f64)
    }
}
