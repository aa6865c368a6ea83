//! The coarse-to-fine fitting loop.
//!
//! Scales are trained sequentially from coarsest to finest. At each scale the
//! target is the lowpass signal (coarsest scale, or Gaussian baseline mode)
//! or the residue against the model's decoded coarser estimate. Blocks whose
//! target energy is already below threshold are pruned before optimization;
//! blocks that reach the threshold mid-training are frozen and removed from
//! the active set. Finer-scale blocks can inherit their parent's trained
//! parameters, scaled by 1/2 for images and 1/sqrt(8) for volumes.

use crate::blocks::{gather_block, scatter_block, BlockGrid, LocalCoords};
use crate::codec::{MinerModel, ModelScale};
use crate::error::{MinerError, Result};
use crate::optim::{adam_step, decayed_lr, AdamState};
use crate::pyramid::{downsample, upsample, DomainKind, GridSignal, PyramidKind};
use crate::tinynet::{NetArch, NetBatch, TinyNet};
use std::io::Write;
use std::time::Instant;

/// Hyperparameters of a fit.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub num_scales: usize,
    pub block_size: usize,
    pub hidden_features: usize,
    /// Total linear layers per MLP.
    pub num_layers: usize,
    pub omega0: f32,
    pub base_lr: f32,
    /// Per-epoch exponential learning-rate decay.
    pub gamma: f32,
    pub max_epochs: usize,
    /// Minimum mean-loss improvement; two consecutive epochs below it end
    /// the scale.
    pub loss_delta_stop: f64,
    /// Per-block MSE threshold for both prune tests.
    pub tau: f32,
    /// Optional per-scale override of `tau`, indexed by scale.
    pub tau_per_scale: Option<Vec<f32>>,
    pub pyramid_kind: PyramidKind,
    pub weight_share: bool,
    pub seed: u64,
    pub beta1: f32,
    pub beta2: f32,
    pub epsilon: f32,
}

impl TrainConfig {
    /// Defaults for RGB image fitting: 32x32 patches, 4 linear layers with
    /// 20 features, Adam at 5e-4 with gamma 0.999, 500 epochs per scale.
    pub fn image_defaults() -> Self {
        Self {
            num_scales: 3,
            block_size: 32,
            hidden_features: 20,
            num_layers: 4,
            omega0: 30.0,
            base_lr: 5e-4,
            gamma: 0.999,
            max_epochs: 500,
            loss_delta_stop: 2e-7,
            tau: 1e-4,
            tau_per_scale: None,
            pyramid_kind: PyramidKind::Laplacian,
            weight_share: true,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    /// Defaults for occupancy volume fitting: 22 features, 2 sine-activated
    /// hidden layers (3 linear maps), lr 1e-3, 2000 iterations per scale.
    pub fn volume_defaults() -> Self {
        Self {
            num_scales: 4,
            block_size: 32,
            hidden_features: 22,
            num_layers: 3,
            base_lr: 1e-3,
            max_epochs: 2000,
            ..Self::image_defaults()
        }
    }

    pub fn tau_at(&self, scale: usize) -> f32 {
        match &self.tau_per_scale {
            Some(taus) => taus[scale.min(taus.len() - 1)],
            None => self.tau,
        }
    }

    fn validate(&self, signal: &GridSignal) -> Result<()> {
        assert!(self.num_scales >= 1, "num_scales must be at least 1");
        assert!(self.tau > 0.0, "tau must be positive");
        let divisor = self.block_size << (self.num_scales - 1);
        for &d in &signal.dims {
            if d % divisor != 0 {
                return Err(MinerError::NonDivisibleDims { dim: d, divisor });
            }
        }
        Ok(())
    }
}

/// One row of per-epoch telemetry.
#[derive(Debug, Clone)]
pub struct EpochRecord {
    /// Milliseconds since the start of the fit.
    pub wall_ms: f64,
    pub scale: usize,
    pub epoch: usize,
    /// Mean per-block MSE over blocks evaluated this epoch.
    pub mean_loss: f64,
    /// PSNR of the current full-resolution estimate against the input.
    pub psnr_db: f64,
    pub active_blocks: usize,
    /// Parameters of all MLPs created so far, across scales.
    pub cum_params: usize,
}

pub const CSV_HEADER: &str = "wall_ms,scale,epoch,mean_loss,psnr_db,active_blocks,cum_params";

impl EpochRecord {
    pub fn to_csv_row(&self) -> String {
        format!(
            "{:.3},{},{},{:e},{},{},{}",
            self.wall_ms,
            self.scale,
            self.epoch,
            self.mean_loss,
            if self.psnr_db.is_infinite() {
                "inf".to_string()
            } else {
                format!("{:.4}", self.psnr_db)
            },
            self.active_blocks,
            self.cum_params
        )
    }
}

#[derive(Debug, Clone, Default)]
pub struct TrainLog {
    pub records: Vec<EpochRecord>,
}

impl TrainLog {
    pub fn write_csv<W: Write>(&self, w: &mut W) -> Result<()> {
        writeln!(w, "{CSV_HEADER}")?;
        for r in &self.records {
            writeln!(w, "{}", r.to_csv_row())?;
        }
        Ok(())
    }
}

/// Residue at scale `j`: the lowpass target minus the upsampled coarser
/// estimate.
pub fn compute_residue(
    target_at_scale: &GridSignal,
    coarser_estimate: &GridSignal,
) -> Result<GridSignal> {
    target_at_scale.sub(&upsample(coarser_estimate, 1)?)
}

/// Remove blocks whose per-block mean squared target is at or below `tau`.
/// Returns the number of blocks pruned.
pub fn prune_before(target: &GridSignal, grid: &mut BlockGrid, tau: f32) -> Result<usize> {
    let mut pruned = Vec::new();
    for &idx in grid.active_indices() {
        let block = gather_block(target, grid, idx)?;
        if block_mse_zero(&block) <= tau as f64 {
            pruned.push(idx);
        }
    }
    let n = pruned.len();
    grid.deactivate_many(pruned);
    Ok(n)
}

fn block_mse_zero(block: &[f32]) -> f64 {
    block.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>() / block.len() as f64
}

fn block_mse(pred: &[f32], target: &[f32]) -> f64 {
    pred.iter()
        .zip(target)
        .map(|(&p, &t)| {
            let d = p as f64 - t as f64;
            d * d
        })
        .sum::<f64>()
        / pred.len() as f64
}

/// Deterministic per-block seed so pruning never shifts another block's
/// initialization.
pub fn block_seed(seed: u64, scale: usize, block_index: usize) -> u64 {
    let mut h = seed ^ 0x9e37_79b9_7f4a_7c15;
    for v in [scale as u64, block_index as u64] {
        h ^= v.wrapping_add(0x9e37_79b9_7f4a_7c15)
            .wrapping_add(h << 6)
            .wrapping_add(h >> 2);
        h = h.wrapping_mul(0xff51_afd7_ed55_8ccd);
    }
    h
}

/// Build nets for the active blocks of a fine-scale grid, inheriting each
/// parent's trained parameters when available.
///
/// Images inherit `parent / 2`, volumes `parent / sqrt(8)`. Blocks whose
/// parent has no net (pruned before optimization), or any block when weight
/// sharing is off, fall back to a fresh seeded init.
pub fn init_child_nets(
    parent_nets: &[Option<TinyNet>],
    fine_grid: &BlockGrid,
    domain_kind: DomainKind,
    arch: NetArch,
    cfg: &TrainConfig,
) -> Result<Vec<TinyNet>> {
    let factor = match domain_kind {
        DomainKind::Image2D => 0.5,
        DomainKind::Volume3D => 1.0 / 8.0f32.sqrt(),
    };
    fine_grid
        .active_indices()
        .iter()
        .map(|&idx| {
            let fresh = || {
                TinyNet::init_siren(arch, block_seed(cfg.seed, fine_grid.scale, idx))
            };
            let net = if cfg.weight_share {
                match parent_nets.get(fine_grid.parent_index(idx)?) {
                    Some(Some(parent)) => {
                        let mut child = parent.clone();
                        child.scale_params(factor);
                        child
                    }
                    _ => fresh(),
                }
            } else {
                fresh()
            };
            Ok(net)
        })
        .collect()
}

/// Result of training one scale.
pub struct ScaleOutcome {
    /// `(block index, trained net, converged)` for every block that received
    /// an MLP, in ascending block index.
    pub nets: Vec<(usize, TinyNet, bool)>,
    pub epochs_run: usize,
}

/// Per-epoch statistics handed to the caller during a scale.
pub struct EpochStats<'a> {
    pub epoch: usize,
    pub mean_loss: f64,
    /// Blocks evaluated this epoch (pre-prune).
    pub active_blocks: usize,
    /// Current blockwise estimate of the target field: frozen blocks hold
    /// their converged output, still-training blocks this epoch's output,
    /// pruned-before blocks zero.
    pub field_estimate: &'a GridSignal,
}

/// Minimize the per-block MSE against `target` independently per block.
///
/// `batch` must hold one net per entry of `grid.active_indices()`, in order.
/// Blocks stop when their MSE reaches the scale's convergence threshold
/// (parameters frozen at that epoch, before any further update); the scale
/// stops at `max_epochs`, when every block converged, or when the mean loss
/// stops improving for two consecutive epochs with an unchanged active set.
///
/// At scales with children (`scale > 0`) the convergence threshold is
/// `tau / 2^d` rather than `tau`: a block frozen at `tau` leaves a residue
/// that can locally concentrate up to `2^d`-fold in one child block, which
/// would keep spawning MLPs for signal the coarse scale already captured.
pub fn train_scale(
    target: &GridSignal,
    grid: &mut BlockGrid,
    mut batch: NetBatch,
    cfg: &TrainConfig,
    scale: usize,
    mut on_epoch: impl FnMut(EpochStats),
) -> Result<ScaleOutcome> {
    assert_eq!(batch.len(), grid.num_active(), "one net per active block");
    let dim = target.dims.len();
    let tau = if scale > 0 {
        cfg.tau_at(scale) as f64 / (1 << dim) as f64
    } else {
        cfg.tau_at(scale) as f64
    };
    let coords = LocalCoords::new(cfg.block_size, dim);
    let values_per_block = grid.samples_per_block() * target.channels;

    let mut active: Vec<usize> = grid.active_indices().to_vec();
    let mut targets: Vec<Vec<f32>> = active
        .iter()
        .map(|&idx| gather_block(target, grid, idx))
        .collect::<Result<_>>()?;
    let mut states: Vec<AdamState> = (0..batch.len())
        .map(|_| AdamState::with_constants(batch.arch.param_count(), cfg.beta1, cfg.beta2, cfg.epsilon))
        .collect();

    let mut field = GridSignal::zeros(target.dims.clone(), target.channels, target.domain_kind);
    let mut finished: Vec<(usize, TinyNet, bool)> = Vec::new();
    let mut prev_loss: Option<f64> = None;
    let mut stall_epochs = 0usize;
    let mut epochs_run = 0usize;

    for epoch in 0..cfg.max_epochs {
        if active.is_empty() {
            break;
        }
        epochs_run = epoch + 1;
        let outputs = batch.forward_batched(&coords);
        let losses: Vec<f64> = outputs
            .iter()
            .zip(&targets)
            .map(|(o, t)| block_mse(o, t))
            .collect();
        let mean_loss = losses.iter().sum::<f64>() / losses.len() as f64;

        // every block's current output becomes part of the field estimate
        for (k, &idx) in active.iter().enumerate() {
            scatter_block(&mut field, grid, idx, &outputs[k])?;
        }

        // converged blocks freeze at their pre-update parameters
        let converged: Vec<usize> = (0..active.len())
            .filter(|&k| losses[k] <= tau)
            .collect();

        let lr = decayed_lr(cfg.base_lr, cfg.gamma, epoch);
        let grad_scale = 2.0 / values_per_block as f32;
        let residual_grads: Vec<Vec<f32>> = (0..active.len())
            .map(|k| {
                if losses[k] <= tau {
                    vec![0.0; values_per_block]
                } else {
                    outputs[k]
                        .iter()
                        .zip(&targets[k])
                        .map(|(&p, &t)| grad_scale * (p - t))
                        .collect()
                }
            })
            .collect();
        batch.zero_grads();
        batch.backward(&residual_grads)?;
        for k in 0..active.len() {
            if losses[k] > tau {
                let (net, grads) = batch.net_and_grads_mut(k);
                adam_step(&mut net.params, grads, &mut states[k], lr)?;
            }
        }

        on_epoch(EpochStats {
            epoch,
            mean_loss,
            active_blocks: active.len(),
            field_estimate: &field,
        });

        let set_changed = !converged.is_empty();
        if set_changed {
            // rebuild the dense batch without the converged blocks
            let keep: Vec<bool> = (0..active.len()).map(|k| losses[k] > tau).collect();
            let mut kept_nets = Vec::new();
            let mut kept_states = Vec::new();
            let mut kept_targets = Vec::new();
            let mut kept_active = Vec::new();
            for (k, net) in batch.nets.drain(..).enumerate() {
                if keep[k] {
                    kept_nets.push(net);
                    kept_states.push(states[k].clone());
                    kept_targets.push(std::mem::take(&mut targets[k]));
                    kept_active.push(active[k]);
                } else {
                    finished.push((active[k], net, true));
                    grid.deactivate(active[k]);
                }
            }
            batch = NetBatch::new(batch.arch, kept_nets);
            states = kept_states;
            targets = kept_targets;
            active = kept_active;
        }

        // loss-delta stop; skip comparisons across a pruning event, where
        // the mean is taken over a different block set
        if let Some(prev) = prev_loss {
            // absolute change: an uptick is Adam oscillation, not a plateau
            if !set_changed && (prev - mean_loss).abs() < cfg.loss_delta_stop {
                stall_epochs += 1;
                if stall_epochs >= 2 {
                    break;
                }
            } else {
                stall_epochs = 0;
            }
        }
        prev_loss = if set_changed { None } else { Some(mean_loss) };
    }

    for (k, net) in batch.nets.drain(..).enumerate() {
        finished.push((active[k], net, false));
    }
    finished.sort_by_key(|(idx, _, _)| *idx);
    Ok(ScaleOutcome {
        nets: finished,
        epochs_run,
    })
}

/// Fit a signal end to end. See [`fit_observed`] for streaming telemetry.
pub fn fit(signal: &GridSignal, cfg: &TrainConfig) -> Result<(MinerModel, TrainLog)> {
    fit_observed(signal, cfg, |_| {})
}

/// Fit a signal, invoking `on_record` after every epoch.
pub fn fit_observed(
    signal: &GridSignal,
    cfg: &TrainConfig,
    mut on_record: impl FnMut(&EpochRecord),
) -> Result<(MinerModel, TrainLog)> {
    cfg.validate(signal)?;
    let dim = signal.dims.len();
    let arch = NetArch::new(
        dim,
        signal.channels,
        cfg.hidden_features,
        cfg.num_layers,
        cfg.omega0,
    );
    let num_scales = cfg.num_scales;
    let lowpass: Vec<GridSignal> = (0..num_scales)
        .map(|j| downsample(signal, j))
        .collect::<Result<_>>()?;

    let mut model = MinerModel {
        domain_kind: signal.domain_kind,
        pyramid_kind: cfg.pyramid_kind,
        num_scales,
        block_size: cfg.block_size,
        finest_dims: signal.dims.clone(),
        channels: signal.channels,
        arch,
        scales: (0..num_scales)
            .map(|j| {
                let total: usize = signal
                    .dims
                    .iter()
                    .map(|d| (d >> j) / cfg.block_size)
                    .product();
                ModelScale {
                    nets: vec![None; total],
                }
            })
            .collect(),
    };

    let mut log = TrainLog::default();
    let start = Instant::now();
    let mut cum_params = 0usize;
    let mut coarser_estimate: Option<GridSignal> = None;

    for j in (0..num_scales).rev() {
        let mut grid = BlockGrid::new(j, &lowpass[j].dims, cfg.block_size)?;

        let (target, coarse_up) = if j == num_scales - 1
            || cfg.pyramid_kind == PyramidKind::Gaussian
        {
            (lowpass[j].clone(), None)
        } else {
            let est = coarser_estimate.as_ref().expect("coarser scale trained");
            let up = upsample(est, 1)?;
            (lowpass[j].sub(&up)?, Some(up))
        };

        prune_before(&target, &mut grid, cfg.tau_at(j))?;

        let nets = if j == num_scales - 1 {
            grid.active_indices()
                .iter()
                .map(|&idx| TinyNet::init_siren(arch, block_seed(cfg.seed, j, idx)))
                .collect()
        } else {
            init_child_nets(
                &model.scales[j + 1].nets,
                &grid,
                signal.domain_kind,
                arch,
                cfg,
            )?
        };
        cum_params += nets.len() * arch.param_count();
        let batch = NetBatch::new(arch, nets);

        let outcome = train_scale(&target, &mut grid, batch, cfg, j, |stats| {
            // full-resolution estimate: this scale's field (plus the coarse
            // chain for Laplacian residues) upsampled to the finest grid
            let psnr_db = (|| -> Result<f64> {
                let est_j = match &coarse_up {
                    Some(up) => up.add(stats.field_estimate)?,
                    None => stats.field_estimate.clone(),
                };
                crate::metrics::psnr(&upsample(&est_j, j)?, signal)
            })()
            .unwrap_or(f64::NAN);
            let record = EpochRecord {
                wall_ms: start.elapsed().as_secs_f64() * 1e3,
                scale: j,
                epoch: stats.epoch,
                mean_loss: stats.mean_loss,
                psnr_db,
                active_blocks: stats.active_blocks,
                cum_params,
            };
            on_record(&record);
            log.records.push(record);
        })?;

        for (idx, net, _) in outcome.nets {
            model.scales[j].nets[idx] = Some(net);
        }

        // closing row for the scale, computed from the final parameters so it
        // agrees exactly with decoding the saved model (per-epoch rows hold
        // pre-update outputs)
        let field = model.residue_field(j)?;
        let est_j = match &coarse_up {
            Some(up) => up.add(&field)?,
            None => field.clone(),
        };
        let record = EpochRecord {
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
            scale: j,
            epoch: outcome.epochs_run,
            mean_loss: crate::metrics::mse(&field, &target)?,
            psnr_db: crate::metrics::psnr(&upsample(&est_j, j)?, signal)?,
            active_blocks: grid.num_active(),
            cum_params,
        };
        on_record(&record);
        log.records.push(record);

        if j > 0 && cfg.pyramid_kind == PyramidKind::Laplacian {
            coarser_estimate = Some(model.decode(j)?);
        }
    }

    Ok((model, log))
}
