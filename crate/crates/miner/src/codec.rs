//! Trained model container, level-of-detail decoding, and the `.minr`
//! binary file format.
//!
//! Decoding walks the scale chain coarse to fine: evaluate the coarsest
//! scale blockwise, then repeatedly upsample by 2 and add the next scale's
//! residue field. Blocks without an MLP contribute exact zeros.
//!
//! File format (little-endian throughout): magic `"MINR"`, `u32` version,
//! header (`domain_kind u8`, `J u8`, `b u16`, `dims u32 x d`, `channels u16`,
//! arch fields `u16` each, `omega0 f32`), then per scale from coarsest to
//! finest an MLP bitmap (LSB-first) followed by packed `f32` parameters of
//! blocks with MLPs in ascending block index, layer-major. A CRC32 over all
//! preceding bytes trails the file.

use crate::blocks::{scatter_block, BlockGrid, LocalCoords};
use crate::error::{MinerError, Result};
use crate::pyramid::{axis_stencil, ravel, upsample, DomainKind, GridSignal, PyramidKind};
use crate::tinynet::{forward, NetArch, TinyNet};
use std::io::{Read, Write};

const MAGIC: &[u8; 4] = b"MINR";
const VERSION: u32 = 1;

/// One scale's worth of block MLPs. `nets[i]` is `Some` exactly when block
/// `i` was given an MLP; pruned-before blocks stay `None` and decode to zero.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelScale {
    pub nets: Vec<Option<TinyNet>>,
}

impl ModelScale {
    pub fn num_nets(&self) -> usize {
        self.nets.iter().filter(|n| n.is_some()).count()
    }
}

/// A fitted multiscale model: everything needed to decode at any scale.
#[derive(Debug, Clone, PartialEq)]
pub struct MinerModel {
    pub domain_kind: DomainKind,
    pub pyramid_kind: PyramidKind,
    pub num_scales: usize,
    pub block_size: usize,
    pub finest_dims: Vec<usize>,
    pub channels: usize,
    pub arch: NetArch,
    /// Indexed by scale, 0 = finest.
    pub scales: Vec<ModelScale>,
}

impl MinerModel {
    pub fn dims_at_scale(&self, scale: usize) -> Vec<usize> {
        self.finest_dims.iter().map(|d| d >> scale).collect()
    }

    /// Total parameters across all stored MLPs.
    pub fn param_count(&self) -> usize {
        let per_net = self.arch.param_count();
        self.scales.iter().map(|s| s.num_nets() * per_net).sum()
    }

    /// The blockwise MLP field at one scale: each block with an MLP is
    /// evaluated on the shared local grid, blocks without one are zero.
    pub fn residue_field(&self, scale: usize) -> Result<GridSignal> {
        let dims = self.dims_at_scale(scale);
        let grid = BlockGrid::new(scale, &dims, self.block_size)?;
        let coords = LocalCoords::new(self.block_size, dims.len());
        let mut field = GridSignal::zeros(dims, self.channels, self.domain_kind);
        for (idx, net) in self.scales[scale].nets.iter().enumerate() {
            if let Some(net) = net {
                let block = forward(net, &coords);
                scatter_block(&mut field, &grid, idx, &block)?;
            }
        }
        Ok(field)
    }

    /// Decode the model's estimate at `scale` (0 = finest).
    pub fn decode(&self, scale: usize) -> Result<GridSignal> {
        if scale >= self.num_scales {
            return Err(MinerError::ScaleOutOfRange {
                scale,
                num_scales: self.num_scales,
            });
        }
        if self.pyramid_kind == PyramidKind::Gaussian {
            // baseline mode: every scale models the full lowpass signal
            return self.residue_field(scale);
        }
        let mut acc = self.residue_field(self.num_scales - 1)?;
        for j in (scale..self.num_scales - 1).rev() {
            acc = upsample(&acc, 1)?.add(&self.residue_field(j)?)?;
        }
        Ok(acc)
    }

    /// Value at one finest-grid sample without decoding the full signal.
    ///
    /// Walks the same interpolation stencil as `decode(0)`, evaluating only
    /// the MLPs and coarse samples the query point touches.
    pub fn decode_point(&self, coord: &[usize]) -> Result<Vec<f32>> {
        if coord.len() != self.finest_dims.len()
            || coord.iter().zip(&self.finest_dims).any(|(&c, &d)| c >= d)
        {
            return Err(MinerError::OutOfDomain {
                coord: coord.to_vec(),
                dims: self.finest_dims.clone(),
            });
        }
        self.sample_estimate(0, coord)
    }

    /// Estimate at one grid sample of `scale`: this scale's block MLP value
    /// plus the interpolated estimate from the next-coarser scale.
    fn sample_estimate(&self, scale: usize, coord: &[usize]) -> Result<Vec<f32>> {
        let mut value = self.block_value(scale, coord);
        if self.pyramid_kind == PyramidKind::Gaussian || scale == self.num_scales - 1 {
            return Ok(value);
        }
        let coarse_dims = self.dims_at_scale(scale + 1);
        let stencils: Vec<(usize, usize, f32)> = coord
            .iter()
            .zip(&coarse_dims)
            .map(|(&c, &d)| axis_stencil(c, d, 2))
            .collect();
        let d = coord.len();
        let mut coarse = vec![0.0f32; self.channels];
        for corner in 0..(1usize << d) {
            let mut weight = 1.0f32;
            let mut cc = Vec::with_capacity(d);
            for (axis, &(lo, hi, w)) in stencils.iter().enumerate() {
                if corner >> axis & 1 == 0 {
                    weight *= 1.0 - w;
                    cc.push(lo);
                } else {
                    weight *= w;
                    cc.push(hi);
                }
            }
            if weight == 0.0 {
                continue;
            }
            let v = self.sample_estimate(scale + 1, &cc)?;
            for (acc, x) in coarse.iter_mut().zip(&v) {
                *acc += weight * x;
            }
        }
        for (v, c) in value.iter_mut().zip(&coarse) {
            *v += c;
        }
        Ok(value)
    }

    /// This scale's MLP contribution at one of its grid samples.
    fn block_value(&self, scale: usize, coord: &[usize]) -> Vec<f32> {
        let b = self.block_size;
        let counts: Vec<usize> = self.dims_at_scale(scale).iter().map(|d| d / b).collect();
        let block_coord: Vec<usize> = coord.iter().map(|&c| c / b).collect();
        let block_idx = ravel(&block_coord, &counts);
        match &self.scales[scale].nets[block_idx] {
            None => vec![0.0; self.channels],
            Some(net) => {
                let local: Vec<f32> = coord
                    .iter()
                    .map(|&c| -1.0 + (2 * (c % b) + 1) as f32 / b as f32)
                    .collect();
                let coords = LocalCoords {
                    dim: local.len(),
                    samples: 1,
                    coords: local,
                };
                forward(net, &coords)
            }
        }
    }

    /// Serialize to the `.minr` format.
    pub fn save<W: Write>(&self, sink: &mut W) -> Result<()> {
        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        let kind_byte = match (self.domain_kind, self.pyramid_kind) {
            (DomainKind::Image2D, PyramidKind::Laplacian) => 0u8,
            (DomainKind::Volume3D, PyramidKind::Laplacian) => 1,
            (DomainKind::Image2D, PyramidKind::Gaussian) => 2,
            (DomainKind::Volume3D, PyramidKind::Gaussian) => 3,
        };
        buf.push(kind_byte);
        buf.push(self.num_scales as u8);
        buf.extend_from_slice(&(self.block_size as u16).to_le_bytes());
        for &d in &self.finest_dims {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        buf.extend_from_slice(&(self.channels as u16).to_le_bytes());
        for v in [
            self.arch.in_dim,
            self.arch.out_dim,
            self.arch.hidden_features,
            self.arch.num_layers,
        ] {
            buf.extend_from_slice(&(v as u16).to_le_bytes());
        }
        buf.extend_from_slice(&self.arch.omega0.to_le_bytes());

        for j in (0..self.num_scales).rev() {
            let nets = &self.scales[j].nets;
            let mut bitmap = vec![0u8; nets.len().div_ceil(8)];
            for (i, net) in nets.iter().enumerate() {
                if net.is_some() {
                    bitmap[i / 8] |= 1 << (i % 8);
                }
            }
            buf.extend_from_slice(&bitmap);
            for net in nets.iter().flatten() {
                for p in &net.params {
                    buf.extend_from_slice(&p.to_le_bytes());
                }
            }
        }
        let crc = crc32fast::hash(&buf);
        buf.extend_from_slice(&crc.to_le_bytes());
        sink.write_all(&buf)?;
        Ok(())
    }

    /// Deserialize from the `.minr` format, verifying the trailing CRC32.
    pub fn load<R: Read>(source: &mut R) -> Result<Self> {
        let mut buf = Vec::new();
        source.read_to_end(&mut buf)?;
        if buf.len() < 8 {
            return Err(MinerError::TruncatedFile);
        }
        if &buf[0..4] != MAGIC {
            return Err(MinerError::BadMagic);
        }
        let payload = &buf[..buf.len() - 4];
        let stored = u32::from_le_bytes(buf[buf.len() - 4..].try_into().unwrap());
        let computed = crc32fast::hash(payload);
        if stored != computed {
            return Err(MinerError::ChecksumMismatch { stored, computed });
        }
        let mut r = Cursor::new(&payload[4..]);
        let version = u32::from_le_bytes(r.take_array()?);
        if version != VERSION {
            return Err(MinerError::UnsupportedVersion(version));
        }
        let kind_byte = r.take_byte()?;
        let (domain_kind, pyramid_kind) = match kind_byte {
            0 => (DomainKind::Image2D, PyramidKind::Laplacian),
            1 => (DomainKind::Volume3D, PyramidKind::Laplacian),
            2 => (DomainKind::Image2D, PyramidKind::Gaussian),
            3 => (DomainKind::Volume3D, PyramidKind::Gaussian),
            _ => return Err(MinerError::TruncatedFile),
        };
        let num_scales = r.take_byte()? as usize;
        let block_size = u16::from_le_bytes(r.take_array()?) as usize;
        let d = match domain_kind {
            DomainKind::Image2D => 2,
            DomainKind::Volume3D => 3,
        };
        let mut finest_dims = Vec::with_capacity(d);
        for _ in 0..d {
            finest_dims.push(u32::from_le_bytes(r.take_array()?) as usize);
        }
        let channels = u16::from_le_bytes(r.take_array()?) as usize;
        let in_dim = u16::from_le_bytes(r.take_array()?) as usize;
        let out_dim = u16::from_le_bytes(r.take_array()?) as usize;
        let hidden_features = u16::from_le_bytes(r.take_array()?) as usize;
        let num_layers = u16::from_le_bytes(r.take_array()?) as usize;
        let omega0 = f32::from_le_bytes(r.take_array()?);
        let arch = NetArch::new(in_dim, out_dim, hidden_features, num_layers, omega0);

        let mut scales = vec![ModelScale { nets: Vec::new() }; num_scales];
        for j in (0..num_scales).rev() {
            let dims_j: Vec<usize> = finest_dims.iter().map(|d| d >> j).collect();
            let total: usize = dims_j.iter().map(|d| d / block_size).product();
            let bitmap = r.take_slice(total.div_ceil(8))?;
            let bitmap = bitmap.to_vec();
            let mut nets = Vec::with_capacity(total);
            for i in 0..total {
                if bitmap[i / 8] >> (i % 8) & 1 == 1 {
                    let mut params = Vec::with_capacity(arch.param_count());
                    for _ in 0..arch.param_count() {
                        params.push(f32::from_le_bytes(r.take_array()?));
                    }
                    nets.push(Some(TinyNet { arch, params }));
                } else {
                    nets.push(None);
                }
            }
            scales[j] = ModelScale { nets };
        }
        if !r.at_end() {
            return Err(MinerError::TruncatedFile);
        }
        Ok(Self {
            domain_kind,
            pyramid_kind,
            num_scales,
            block_size,
            finest_dims,
            channels,
            arch,
            scales,
        })
    }
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    fn take_slice(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(MinerError::TruncatedFile);
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn take_byte(&mut self) -> Result<u8> {
        Ok(self.take_slice(1)?[0])
    }

    fn take_array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take_slice(N)?.try_into().unwrap())
    }

    fn at_end(&self) -> bool {
        self.pos == self.buf.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_model() -> MinerModel {
        let arch = NetArch::new(2, 1, 3, 2, 30.0);
        let scale0 = ModelScale {
            nets: vec![
                Some(TinyNet::init_siren(arch, 1)),
                None,
                None,
                Some(TinyNet::init_siren(arch, 2)),
            ],
        };
        let scale1 = ModelScale {
            nets: vec![Some(TinyNet::init_siren(arch, 3))],
        };
        MinerModel {
            domain_kind: DomainKind::Image2D,
            pyramid_kind: PyramidKind::Laplacian,
            num_scales: 2,
            block_size: 2,
            finest_dims: vec![4, 4],
            channels: 1,
            arch,
            scales: vec![scale0, scale1],
        }
    }

    #[test]
    fn save_load_round_trip_bit_exact() {
        let model = toy_model();
        let mut bytes = Vec::new();
        model.save(&mut bytes).unwrap();
        let loaded = MinerModel::load(&mut bytes.as_slice()).unwrap();
        assert_eq!(loaded, model);
    }

    #[test]
    fn corruption_is_detected() {
        let model = toy_model();
        let mut bytes = Vec::new();
        model.save(&mut bytes).unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x40;
        assert!(matches!(
            MinerModel::load(&mut bytes.as_slice()),
            Err(MinerError::ChecksumMismatch { .. })
        ));
    }

    #[test]
    fn empty_stream_is_truncated() {
        assert!(matches!(
            MinerModel::load(&mut [].as_slice()),
            Err(MinerError::TruncatedFile)
        ));
    }

    #[test]
    fn bad_magic_is_reported() {
        let mut bytes = Vec::new();
        toy_model().save(&mut bytes).unwrap();
        bytes[0] = b'X';
        assert!(matches!(
            MinerModel::load(&mut bytes.as_slice()),
            Err(MinerError::BadMagic)
        ));
    }

    #[test]
    fn param_count_counts_only_stored_nets() {
        let model = toy_model();
        assert_eq!(model.param_count(), 3 * model.arch.param_count());
    }

    #[test]
    fn decode_scale_out_of_range() {
        let model = toy_model();
        assert!(matches!(
            model.decode(2),
            Err(MinerError::ScaleOutOfRange { .. })
        ));
    }

    #[test]
    fn decode_telescopes() {
        let model = toy_model();
        let coarse = model.decode(1).unwrap();
        let fine = model.decode(0).unwrap();
        let rebuilt = upsample(&coarse, 1)
            .unwrap()
            .add(&model.residue_field(0).unwrap())
            .unwrap();
        assert_eq!(rebuilt.values, fine.values);
    }

    #[test]
    fn decode_point_matches_full_decode() {
        let model = toy_model();
        let full = model.decode(0).unwrap();
        for r in 0..4 {
            for c in 0..4 {
                let v = model.decode_point(&[r, c]).unwrap();
                let want = full.values[r * 4 + c];
                assert!(
                    (v[0] - want).abs() < 1e-5,
                    "({r},{c}): {} vs {want}",
                    v[0]
                );
            }
        }
    }

    #[test]
    fn decode_point_rejects_out_of_domain() {
        let model = toy_model();
        assert!(matches!(
            model.decode_point(&[4, 0]),
            Err(MinerError::OutOfDomain { .. })
        ));
    }

    #[test]
    fn pruned_blocks_decode_to_upsampled_coarse() {
        let model = toy_model();
        let fine = model.decode(0).unwrap();
        let up = upsample(&model.decode(1).unwrap(), 1).unwrap();
        // blocks 1 and 2 have no MLP; their samples equal the coarse estimate
        for r in 0..2 {
            for c in 2..4 {
                let i = r * 4 + c;
                assert_eq!(fine.values[i], up.values[i]);
            }
        }
    }
}
