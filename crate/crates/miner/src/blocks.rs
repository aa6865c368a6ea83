//! Block partitioning of a scale and the active-set bookkeeping.
//!
//! Every scale is tiled by disjoint `b`-per-axis blocks. Each block gets its
//! own local coordinate grid in `[-1, 1]`, shared across blocks. The active
//! set tracks which blocks are still being optimized; it only ever shrinks
//! within a scale.

use crate::error::{MinerError, Result};
use crate::pyramid::{ravel, unravel, GridSignal};

/// Partition of one scale into fixed-size blocks.
#[derive(Debug, Clone)]
pub struct BlockGrid {
    pub scale: usize,
    pub block_size: usize,
    /// Blocks per axis, same axis order as the signal dims.
    pub counts: Vec<usize>,
    active: Vec<bool>,
    /// Dense ascending list of active block indices, rebuilt on each prune.
    active_list: Vec<usize>,
}

impl BlockGrid {
    /// Partition `dims_at_scale` into `block_size`-per-axis blocks, all active.
    pub fn new(scale: usize, dims_at_scale: &[usize], block_size: usize) -> Result<Self> {
        for &d in dims_at_scale {
            if d % block_size != 0 {
                return Err(MinerError::NonDivisibleDims {
                    dim: d,
                    divisor: block_size,
                });
            }
        }
        let counts: Vec<usize> = dims_at_scale.iter().map(|d| d / block_size).collect();
        let total = counts.iter().product();
        Ok(Self {
            scale,
            block_size,
            counts,
            active: vec![true; total],
            active_list: (0..total).collect(),
        })
    }

    pub fn total_blocks(&self) -> usize {
        self.active.len()
    }

    pub fn num_active(&self) -> usize {
        self.active_list.len()
    }

    pub fn is_active(&self, index: usize) -> bool {
        self.active[index]
    }

    /// Ascending indices of currently active blocks.
    pub fn active_indices(&self) -> &[usize] {
        &self.active_list
    }

    /// Remove a block from the active set. Idempotent.
    pub fn deactivate(&mut self, index: usize) {
        if self.active[index] {
            self.active[index] = false;
            self.active_list.retain(|&i| i != index);
        }
    }

    /// Deactivate several blocks at once and rebuild the dense list.
    pub fn deactivate_many(&mut self, indices: impl IntoIterator<Item = usize>) {
        for i in indices {
            self.active[i] = false;
        }
        self.active_list = (0..self.active.len()).filter(|&i| self.active[i]).collect();
    }

    /// Samples per block: `block_size^d`.
    pub fn samples_per_block(&self) -> usize {
        self.block_size.pow(self.counts.len() as u32)
    }

    /// Multi-index of a block from its linear index.
    pub fn block_coord(&self, index: usize) -> Vec<usize> {
        unravel(index, &self.counts)
    }

    /// Index of this block's parent in the grid one scale coarser.
    ///
    /// The parent multi-index is the floor of the child multi-index halved
    /// per axis, linearized against the coarse grid's counts.
    pub fn parent_index(&self, child_index: usize) -> Result<usize> {
        if child_index >= self.total_blocks() {
            return Err(MinerError::IndexOutOfRange {
                index: child_index,
                limit: self.total_blocks(),
            });
        }
        let child = self.block_coord(child_index);
        let parent: Vec<usize> = child.iter().map(|&c| c / 2).collect();
        let coarse_counts: Vec<usize> = self.counts.iter().map(|&c| c.div_ceil(2)).collect();
        Ok(ravel(&parent, &coarse_counts))
    }
}

/// Extract one block's samples in local row-major order.
pub fn gather_block(signal: &GridSignal, grid: &BlockGrid, index: usize) -> Result<Vec<f32>> {
    if index >= grid.total_blocks() {
        return Err(MinerError::IndexOutOfRange {
            index,
            limit: grid.total_blocks(),
        });
    }
    let b = grid.block_size;
    let ch = signal.channels;
    let origin: Vec<usize> = grid.block_coord(index).iter().map(|&c| c * b).collect();
    let local_dims = vec![b; grid.counts.len()];
    let samples = grid.samples_per_block();
    let mut out = Vec::with_capacity(samples * ch);
    for s in 0..samples {
        let local = unravel(s, &local_dims);
        let coord: Vec<usize> = origin.iter().zip(&local).map(|(o, l)| o + l).collect();
        let base = ravel(&coord, &signal.dims) * ch;
        out.extend_from_slice(&signal.values[base..base + ch]);
    }
    Ok(out)
}

/// Write one block's samples back into the signal; exact inverse of
/// [`gather_block`].
pub fn scatter_block(
    signal: &mut GridSignal,
    grid: &BlockGrid,
    index: usize,
    block: &[f32],
) -> Result<()> {
    if index >= grid.total_blocks() {
        return Err(MinerError::IndexOutOfRange {
            index,
            limit: grid.total_blocks(),
        });
    }
    let b = grid.block_size;
    let ch = signal.channels;
    if block.len() != grid.samples_per_block() * ch {
        return Err(MinerError::ShapeMismatch(format!(
            "block has {} values, expected {}",
            block.len(),
            grid.samples_per_block() * ch
        )));
    }
    let origin: Vec<usize> = grid.block_coord(index).iter().map(|&c| c * b).collect();
    let local_dims = vec![b; grid.counts.len()];
    for s in 0..grid.samples_per_block() {
        let local = unravel(s, &local_dims);
        let coord: Vec<usize> = origin.iter().zip(&local).map(|(o, l)| o + l).collect();
        let base = ravel(&coord, &signal.dims) * ch;
        signal.values[base..base + ch].copy_from_slice(&block[s * ch..(s + 1) * ch]);
    }
    Ok(())
}

/// Shared per-block coordinate grid, cell-centered in `[-1, 1]` per axis.
///
/// Component `i` along each axis is `-1 + (2i + 1) / b`. Stored flat:
/// `coords[s * dim + axis]` for sample `s` in local row-major order.
#[derive(Debug, Clone)]
pub struct LocalCoords {
    pub dim: usize,
    pub samples: usize,
    pub coords: Vec<f32>,
}

impl LocalCoords {
    pub fn new(block_size: usize, dim: usize) -> Self {
        assert!(block_size >= 1 && (dim == 2 || dim == 3));
        let axis: Vec<f32> = (0..block_size)
            .map(|i| -1.0 + (2 * i + 1) as f32 / block_size as f32)
            .collect();
        let local_dims = vec![block_size; dim];
        let samples = block_size.pow(dim as u32);
        let mut coords = Vec::with_capacity(samples * dim);
        for s in 0..samples {
            let local = unravel(s, &local_dims);
            for &l in &local {
                coords.push(axis[l]);
            }
        }
        Self {
            dim,
            samples,
            coords,
        }
    }

    pub fn sample(&self, s: usize) -> &[f32] {
        &self.coords[s * self.dim..(s + 1) * self.dim]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pyramid::DomainKind;

    #[test]
    fn block_grid_counts() {
        let g = BlockGrid::new(0, &[64, 64], 32).unwrap();
        assert_eq!(g.counts, vec![2, 2]);
        assert_eq!(g.total_blocks(), 4);
        assert_eq!(g.num_active(), 4);

        let g = BlockGrid::new(0, &[32, 32], 32).unwrap();
        assert_eq!(g.total_blocks(), 1);

        let g = BlockGrid::new(0, &[64, 64, 64], 32).unwrap();
        assert_eq!(g.counts, vec![2, 2, 2]);
        assert_eq!(g.total_blocks(), 8);
    }

    #[test]
    fn block_grid_rejects_non_divisible() {
        assert!(matches!(
            BlockGrid::new(0, &[48, 64], 32),
            Err(MinerError::NonDivisibleDims { .. })
        ));
    }

    #[test]
    fn gather_singleton_and_corner() {
        let s = GridSignal::new(
            vec![2, 2],
            1,
            vec![0.0, 1.0, 2.0, 3.0],
            DomainKind::Image2D,
        )
        .unwrap();
        let g = BlockGrid::new(0, &[2, 2], 1).unwrap();
        assert_eq!(gather_block(&s, &g, 3).unwrap(), vec![3.0]);

        let ramp: Vec<f32> = (0..16).map(|i| i as f32).collect();
        let s = GridSignal::new(vec![4, 4], 1, ramp, DomainKind::Image2D).unwrap();
        let g = BlockGrid::new(0, &[4, 4], 2).unwrap();
        assert_eq!(gather_block(&s, &g, 0).unwrap(), vec![0.0, 1.0, 4.0, 5.0]);
    }

    #[test]
    fn gather_scatter_partition_round_trip() {
        let vals: Vec<f32> = (0..96).map(|i| (i as f32 * 0.17).sin()).collect();
        let s = GridSignal::new(vec![4, 8], 3, vals, DomainKind::Image2D).unwrap();
        let g = BlockGrid::new(0, &[4, 8], 2).unwrap();
        let mut out = GridSignal::zeros(vec![4, 8], 3, DomainKind::Image2D);
        for i in 0..g.total_blocks() {
            let block = gather_block(&s, &g, i).unwrap();
            scatter_block(&mut out, &g, i, &block).unwrap();
        }
        assert_eq!(out.values, s.values);
    }

    #[test]
    fn gather_out_of_range() {
        let s = GridSignal::zeros(vec![2, 2], 1, DomainKind::Image2D);
        let g = BlockGrid::new(0, &[2, 2], 1).unwrap();
        assert!(matches!(
            gather_block(&s, &g, 4),
            Err(MinerError::IndexOutOfRange { .. })
        ));
    }

    #[test]
    fn parent_mapping() {
        let fine = BlockGrid::new(0, &[4, 4], 2).unwrap(); // counts (2,2)
        assert_eq!(fine.parent_index(3).unwrap(), 0); // (1,1) -> (0,0)

        let fine = BlockGrid::new(0, &[8, 8], 2).unwrap(); // counts (4,4)
        let child = ravel(&[3, 2], &[4, 4]);
        let parent = fine.parent_index(child).unwrap();
        assert_eq!(unravel(parent, &[2, 2]), vec![1, 1]);
    }

    #[test]
    fn parent_has_2_pow_d_children() {
        let fine = BlockGrid::new(0, &[8, 8], 2).unwrap();
        let mut counts = vec![0usize; 4];
        for c in 0..fine.total_blocks() {
            counts[fine.parent_index(c).unwrap()] += 1;
        }
        assert!(counts.iter().all(|&c| c == 4));
    }

    #[test]
    fn local_coords_cell_centered() {
        let c = LocalCoords::new(1, 2);
        assert_eq!(c.coords, vec![0.0, 0.0]);

        let c = LocalCoords::new(2, 2);
        assert_eq!(c.sample(0), &[-0.5, -0.5]);
        assert_eq!(c.sample(3), &[0.5, 0.5]);

        let axis: Vec<f32> = (0..4).map(|i| -1.0 + (2 * i + 1) as f32 / 4.0).collect();
        assert_eq!(axis, vec![-0.75, -0.25, 0.25, 0.75]);
        let c = LocalCoords::new(4, 3);
        assert_eq!(c.samples, 64);
        // symmetric about 0, strictly inside [-1, 1]
        for s in 0..c.samples {
            for &x in c.sample(s) {
                assert!(x > -1.0 && x < 1.0);
            }
        }
    }

    #[test]
    fn active_set_shrinks() {
        let mut g = BlockGrid::new(0, &[8, 8], 2).unwrap();
        g.deactivate(5);
        g.deactivate(5);
        assert_eq!(g.num_active(), 15);
        assert!(!g.is_active(5));
        g.deactivate_many([0, 1, 2]);
        assert_eq!(g.active_indices().len(), 12);
        assert!(g.active_indices().windows(2).all(|w| w[0] < w[1]));
    }
}
