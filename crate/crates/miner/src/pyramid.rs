//! Grid signals and multiscale pyramid operators.
//!
//! Downsampling is an exact box mean over `2^j`-per-axis cells; upsampling is
//! cell-centered separable linear interpolation with edge clamping. A
//! Laplacian pyramid holds the lowpass signal at the coarsest level and
//! bandpass residues at finer levels, so summing upsampled levels recovers
//! the input.

use crate::error::{MinerError, Result};

/// What kind of signal a [`GridSignal`] holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DomainKind {
    /// 2D multi-channel image (2 spatial axes).
    Image2D,
    /// 3D scalar volume (3 spatial axes, 1 channel).
    Volume3D,
}

/// Dense sampled signal on a regular grid.
///
/// Samples are stored row-major in axis order with channels interleaved:
/// for dims `[d0, d1]` the sample at `(i0, i1)` channel `c` lives at
/// `((i0 * d1 + i1) * channels + c)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSignal {
    pub dims: Vec<usize>,
    pub channels: usize,
    pub values: Vec<f32>,
    pub domain_kind: DomainKind,
}

impl GridSignal {
    pub fn new(
        dims: Vec<usize>,
        channels: usize,
        values: Vec<f32>,
        domain_kind: DomainKind,
    ) -> Result<Self> {
        let expected_axes = match domain_kind {
            DomainKind::Image2D => 2,
            DomainKind::Volume3D => 3,
        };
        if dims.len() != expected_axes || dims.iter().any(|&d| d == 0) || channels == 0 {
            return Err(MinerError::ShapeMismatch(format!(
                "invalid dims {dims:?} / channels {channels} for {domain_kind:?}"
            )));
        }
        if domain_kind == DomainKind::Volume3D && channels != 1 {
            return Err(MinerError::ShapeMismatch(
                "volumes must have exactly one channel".into(),
            ));
        }
        let expected_len = dims.iter().product::<usize>() * channels;
        if values.len() != expected_len {
            return Err(MinerError::ShapeMismatch(format!(
                "expected {expected_len} values, got {}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(MinerError::NonFiniteSample);
        }
        Ok(Self {
            dims,
            channels,
            values,
            domain_kind,
        })
    }

    /// All-zero signal with the given shape.
    pub fn zeros(dims: Vec<usize>, channels: usize, domain_kind: DomainKind) -> Self {
        let len = dims.iter().product::<usize>() * channels;
        Self {
            dims,
            channels,
            values: vec![0.0; len],
            domain_kind,
        }
    }

    pub fn num_cells(&self) -> usize {
        self.dims.iter().product()
    }

    /// Mean over all samples and channels, accumulated in f64.
    pub fn mean(&self) -> f64 {
        self.values.iter().map(|&v| v as f64).sum::<f64>() / self.values.len() as f64
    }

    /// Elementwise sum; dims and channels must match.
    pub fn add(&self, other: &GridSignal) -> Result<GridSignal> {
        if self.dims != other.dims || self.channels != other.channels {
            return Err(MinerError::DimMismatch {
                a: self.dims.clone(),
                b: other.dims.clone(),
            });
        }
        let mut out = self.clone();
        for (o, v) in out.values.iter_mut().zip(&other.values) {
            *o += v;
        }
        Ok(out)
    }

    /// Elementwise difference; dims and channels must match.
    pub fn sub(&self, other: &GridSignal) -> Result<GridSignal> {
        if self.dims != other.dims || self.channels != other.channels {
            return Err(MinerError::DimMismatch {
                a: self.dims.clone(),
                b: other.dims.clone(),
            });
        }
        let mut out = self.clone();
        for (o, v) in out.values.iter_mut().zip(&other.values) {
            *o -= v;
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PyramidKind {
    Gaussian,
    Laplacian,
}

/// Multiscale stack, ordered finest (scale 0) to coarsest (scale J-1) by index.
#[derive(Debug, Clone)]
pub struct Pyramid {
    /// `levels[j]` is the signal at scale `j`; index 0 is the finest.
    pub levels: Vec<GridSignal>,
    pub kind: PyramidKind,
    pub num_scales: usize,
}

/// Box-mean downsampling by a factor of `2^levels` per axis.
///
/// Every output sample is the arithmetic mean of its `2^levels`-per-axis
/// input cell, accumulated in f64 and stored as f32.
pub fn downsample(signal: &GridSignal, levels: usize) -> Result<GridSignal> {
    let factor = 1usize << levels;
    for &d in &signal.dims {
        if d % factor != 0 {
            return Err(MinerError::NonDivisibleDims {
                dim: d,
                divisor: factor,
            });
        }
    }
    if levels == 0 {
        return Ok(signal.clone());
    }
    let out_dims: Vec<usize> = signal.dims.iter().map(|d| d / factor).collect();
    let ch = signal.channels;
    let mut out = GridSignal::zeros(out_dims.clone(), ch, signal.domain_kind);
    let cell = factor.pow(signal.dims.len() as u32) as f64;

    let mut acc = vec![0.0f64; ch];
    for out_idx in 0..out.num_cells() {
        let oc = unravel(out_idx, &out_dims);
        acc.iter_mut().for_each(|a| *a = 0.0);
        // walk the factor^d input cell
        let cell_count: usize = factor.pow(signal.dims.len() as u32);
        for k in 0..cell_count {
            let mut rem = k;
            let mut in_coord = Vec::with_capacity(oc.len());
            for (axis, &o) in oc.iter().enumerate().rev() {
                let _ = axis;
                let off = rem % factor;
                rem /= factor;
                in_coord.push(o * factor + off);
            }
            in_coord.reverse();
            let base = ravel(&in_coord, &signal.dims) * ch;
            for c in 0..ch {
                acc[c] += signal.values[base + c] as f64;
            }
        }
        let base = out_idx * ch;
        for c in 0..ch {
            out.values[base + c] = (acc[c] / cell) as f32;
        }
    }
    Ok(out)
}

/// Separable linear upsampling by a factor of `2^levels` per axis.
///
/// Output cell centers are mapped into the input cell-center frame; edge
/// cells clamp to the border sample.
pub fn upsample(signal: &GridSignal, levels: usize) -> Result<GridSignal> {
    if levels == 0 {
        return Ok(signal.clone());
    }
    let factor = 1usize << levels;
    let out_dims: Vec<usize> = signal.dims.iter().map(|d| d * factor).collect();
    let ch = signal.channels;
    let mut out = GridSignal::zeros(out_dims.clone(), ch, signal.domain_kind);

    // Per-axis interpolation stencils: (lower index, upper index, upper weight).
    let stencils: Vec<Vec<(usize, usize, f32)>> = signal
        .dims
        .iter()
        .zip(&out_dims)
        .map(|(&in_d, &out_d)| {
            (0..out_d)
                .map(|o| axis_stencil(o, in_d, factor))
                .collect()
        })
        .collect();

    for out_idx in 0..out.num_cells() {
        let oc = unravel(out_idx, &out_dims);
        let base_out = out_idx * ch;
        match oc.len() {
            2 => {
                let (r0, r1, wr) = stencils[0][oc[0]];
                let (c0, c1, wc) = stencils[1][oc[1]];
                for c in 0..ch {
                    let v00 = signal.values[(r0 * signal.dims[1] + c0) * ch + c];
                    let v01 = signal.values[(r0 * signal.dims[1] + c1) * ch + c];
                    let v10 = signal.values[(r1 * signal.dims[1] + c0) * ch + c];
                    let v11 = signal.values[(r1 * signal.dims[1] + c1) * ch + c];
                    let top = v00 * (1.0 - wc) + v01 * wc;
                    let bot = v10 * (1.0 - wc) + v11 * wc;
                    out.values[base_out + c] = top * (1.0 - wr) + bot * wr;
                }
            }
            3 => {
                let (a0, a1, wa) = stencils[0][oc[0]];
                let (b0, b1, wb) = stencils[1][oc[1]];
                let (d0, d1, wd) = stencils[2][oc[2]];
                let d2 = signal.dims[2];
                let d1s = signal.dims[1];
                let sample = |i: usize, j: usize, k: usize, c: usize| {
                    signal.values[((i * d1s + j) * d2 + k) * ch + c]
                };
                for c in 0..ch {
                    let lerp = |x: f32, y: f32, w: f32| x * (1.0 - w) + y * w;
                    let v00 = lerp(sample(a0, b0, d0, c), sample(a0, b0, d1, c), wd);
                    let v01 = lerp(sample(a0, b1, d0, c), sample(a0, b1, d1, c), wd);
                    let v10 = lerp(sample(a1, b0, d0, c), sample(a1, b0, d1, c), wd);
                    let v11 = lerp(sample(a1, b1, d0, c), sample(a1, b1, d1, c), wd);
                    let v0 = lerp(v00, v01, wb);
                    let v1 = lerp(v10, v11, wb);
                    out.values[base_out + c] = lerp(v0, v1, wa);
                }
            }
            _ => unreachable!("signals have 2 or 3 axes"),
        }
    }
    Ok(out)
}

/// Interpolation stencil for one output index along one axis.
///
/// Maps output cell center `o + 0.5` back to input cell-center coordinates;
/// clamps at the borders.
pub(crate) fn axis_stencil(o: usize, in_dim: usize, factor: usize) -> (usize, usize, f32) {
    let u = (o as f32 + 0.5) / factor as f32 - 0.5;
    if u <= 0.0 {
        (0, 0, 0.0)
    } else if u >= (in_dim - 1) as f32 {
        (in_dim - 1, in_dim - 1, 0.0)
    } else {
        let lo = u.floor() as usize;
        (lo, lo + 1, u - lo as f32)
    }
}

/// Build a Gaussian or Laplacian pyramid with `num_scales` levels.
pub fn build_pyramid(signal: &GridSignal, num_scales: usize, kind: PyramidKind) -> Result<Pyramid> {
    assert!(num_scales >= 1, "num_scales must be at least 1");
    let factor = 1usize << (num_scales - 1);
    for &d in &signal.dims {
        if d % factor != 0 {
            return Err(MinerError::NonDivisibleDims {
                dim: d,
                divisor: factor,
            });
        }
    }
    let lowpass: Vec<GridSignal> = (0..num_scales)
        .map(|j| downsample(signal, j))
        .collect::<Result<_>>()?;
    let levels = match kind {
        PyramidKind::Gaussian => lowpass,
        PyramidKind::Laplacian => {
            let mut levels = Vec::with_capacity(num_scales);
            for j in 0..num_scales {
                if j == num_scales - 1 {
                    levels.push(lowpass[j].clone());
                } else {
                    let up = upsample(&lowpass[j + 1], 1)?;
                    levels.push(lowpass[j].sub(&up)?);
                }
            }
            levels
        }
    };
    Ok(Pyramid {
        levels,
        kind,
        num_scales,
    })
}

/// Collapse a Laplacian pyramid back to the original signal.
pub fn reconstruct_pyramid(pyr: &Pyramid) -> Result<GridSignal> {
    if pyr.kind != PyramidKind::Laplacian {
        return Err(MinerError::WrongKind {
            expected: PyramidKind::Laplacian,
            got: pyr.kind,
        });
    }
    let mut acc = pyr.levels[pyr.num_scales - 1].clone();
    for j in (0..pyr.num_scales - 1).rev() {
        acc = upsample(&acc, 1)?.add(&pyr.levels[j])?;
    }
    Ok(acc)
}

pub(crate) fn ravel(coord: &[usize], dims: &[usize]) -> usize {
    let mut idx = 0;
    for (c, d) in coord.iter().zip(dims) {
        idx = idx * d + c;
    }
    idx
}

pub(crate) fn unravel(mut idx: usize, dims: &[usize]) -> Vec<usize> {
    let mut coord = vec![0; dims.len()];
    for axis in (0..dims.len()).rev() {
        coord[axis] = idx % dims[axis];
        idx /= dims[axis];
    }
    coord
}
