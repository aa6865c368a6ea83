//! Property-based invariants for the pyramid and block machinery.

use miner::blocks::{gather_block, scatter_block, BlockGrid};
use miner::pyramid::{
    build_pyramid, downsample, reconstruct_pyramid, upsample, DomainKind, GridSignal,
    PyramidKind,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_signal(dims: Vec<usize>, channels: usize, seed: u64) -> GridSignal {
    let kind = if dims.len() == 2 {
        DomainKind::Image2D
    } else {
        DomainKind::Volume3D
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = dims.iter().product::<usize>() * channels;
    let values = (0..n).map(|_| rng.gen_range(-1.0f32..1.0)).collect();
    GridSignal::new(dims, channels, values, kind).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn laplacian_round_trip(
        h in 1usize..3,
        w in 1usize..3,
        channels in 1usize..4,
        num_scales in 1usize..6,
        seed in 0u64..1000,
    ) {
        let signal = random_signal(vec![h * 16, w * 16], channels, seed);
        let pyr = build_pyramid(&signal, num_scales, PyramidKind::Laplacian).unwrap();
        let recon = reconstruct_pyramid(&pyr).unwrap();
        let peak = signal.values.iter().fold(0.0f32, |m, v| m.max(v.abs()));
        for (a, b) in signal.values.iter().zip(&recon.values) {
            prop_assert!((a - b).abs() <= 1e-5 * peak.max(1.0), "{a} vs {b}");
        }
    }

    #[test]
    fn gaussian_levels_are_downsamples(
        num_scales in 1usize..5,
        seed in 0u64..1000,
    ) {
        let signal = random_signal(vec![16, 32], 2, seed);
        let pyr = build_pyramid(&signal, num_scales, PyramidKind::Gaussian).unwrap();
        for (j, level) in pyr.levels.iter().enumerate() {
            let expected = downsample(&signal, j).unwrap();
            prop_assert_eq!(&level.values, &expected.values);
        }
    }

    #[test]
    fn downsample_semigroup(
        a in 0usize..3,
        b in 0usize..3,
        seed in 0u64..1000,
    ) {
        let signal = random_signal(vec![32, 16], 1, seed);
        let joint = downsample(&signal, a + b).unwrap();
        let staged = downsample(&downsample(&signal, a).unwrap(), b).unwrap();
        for (x, y) in joint.values.iter().zip(&staged.values) {
            prop_assert!((x - y).abs() < 1e-6, "{x} vs {y}");
        }
    }

    #[test]
    fn resampling_preserves_constants(
        value in -2.0f32..2.0,
        levels in 0usize..4,
    ) {
        let signal = GridSignal::new(
            vec![16, 16],
            1,
            vec![value; 256],
            DomainKind::Image2D,
        ).unwrap();
        let down = downsample(&signal, levels).unwrap();
        prop_assert!(down.values.iter().all(|&v| (v - value).abs() < 1e-6));
        let up = upsample(&signal, levels).unwrap();
        prop_assert!(up.values.iter().all(|&v| (v - value).abs() < 1e-6));
    }

    #[test]
    fn blocks_partition_the_domain(
        scale in 0usize..3,
        block_size in prop::sample::select(vec![2usize, 4, 8]),
        seed in 0u64..1000,
    ) {
        let dims = vec![16, 24];
        let signal = random_signal(dims.clone(), 2, seed);
        let grid = BlockGrid::new(scale, &dims, block_size).unwrap();

        // round-trip through gather/scatter touches every sample exactly once
        let mut rebuilt = GridSignal::zeros(dims.clone(), 2, DomainKind::Image2D);
        for idx in 0..grid.total_blocks() {
            let block = gather_block(&signal, &grid, idx).unwrap();
            prop_assert_eq!(block.len(), grid.samples_per_block() * 2);
            scatter_block(&mut rebuilt, &grid, idx, &block).unwrap();
        }
        prop_assert_eq!(&rebuilt.values, &signal.values);
    }

    #[test]
    fn volume_round_trip(
        num_scales in 1usize..4,
        seed in 0u64..1000,
    ) {
        let signal = random_signal(vec![8, 16, 8], 1, seed);
        let pyr = build_pyramid(&signal, num_scales, PyramidKind::Laplacian).unwrap();
        let recon = reconstruct_pyramid(&pyr).unwrap();
        for (a, b) in signal.values.iter().zip(&recon.values) {
            prop_assert!((a - b).abs() <= 1e-5, "{a} vs {b}");
        }
    }
}
