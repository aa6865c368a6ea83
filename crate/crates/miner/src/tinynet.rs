//! Tiny sinusoidal MLPs: forward evaluation and manual reverse-mode
//! gradients, batched across many blocks.
//!
//! The architecture is fixed per fit: `num_layers` linear maps, every hidden
//! layer followed by `sin(omega0 * z)`, final layer linear. Parameters of one
//! net live in a single flat buffer, layer-major (weights row-major `out x in`,
//! then bias), which keeps the optimizer, weight sharing, and serialization
//! congruent.

use crate::blocks::LocalCoords;
use crate::error::{MinerError, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

/// Shape of every MLP in a fit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NetArch {
    pub in_dim: usize,
    pub out_dim: usize,
    pub hidden_features: usize,
    /// Total number of linear layers (so `num_layers - 1` sine activations).
    pub num_layers: usize,
    /// Frequency scale of the sine nonlinearity.
    pub omega0: f32,
}

impl NetArch {
    pub fn new(
        in_dim: usize,
        out_dim: usize,
        hidden_features: usize,
        num_layers: usize,
        omega0: f32,
    ) -> Self {
        assert!(num_layers >= 2 && hidden_features >= 1 && omega0 > 0.0);
        assert!(in_dim == 2 || in_dim == 3);
        Self {
            in_dim,
            out_dim,
            hidden_features,
            num_layers,
            omega0,
        }
    }

    /// `(fan_in, fan_out)` of each linear layer.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        (0..self.num_layers)
            .map(|l| {
                let fan_in = if l == 0 { self.in_dim } else { self.hidden_features };
                let fan_out = if l == self.num_layers - 1 {
                    self.out_dim
                } else {
                    self.hidden_features
                };
                (fan_in, fan_out)
            })
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.layer_dims()
            .iter()
            .map(|(i, o)| i * o + o)
            .sum()
    }

    /// Offset of layer `l`'s weights in the flat parameter buffer; the bias
    /// follows the `out x in` weight block.
    pub fn layer_offset(&self, layer: usize) -> usize {
        self.layer_dims()
            .iter()
            .take(layer)
            .map(|(i, o)| i * o + o)
            .sum()
    }
}

/// Parameters of one block's MLP, flat and layer-major.
#[derive(Debug, Clone, PartialEq)]
pub struct TinyNet {
    pub arch: NetArch,
    pub params: Vec<f32>,
}

impl TinyNet {
    pub fn zeros(arch: NetArch) -> Self {
        Self {
            arch,
            params: vec![0.0; arch.param_count()],
        }
    }

    /// SIREN-style initialization, deterministic in the seed: first-layer
    /// weights uniform in `[-1/in_dim, 1/in_dim]`, deeper weights uniform in
    /// `[-sqrt(6/fan_in)/omega0, sqrt(6/fan_in)/omega0]`, biases zero.
    pub fn init_siren(arch: NetArch, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::with_capacity(arch.param_count());
        for (l, (fan_in, fan_out)) in arch.layer_dims().iter().enumerate() {
            let limit = if l == 0 {
                1.0 / *fan_in as f32
            } else {
                (6.0 / *fan_in as f32).sqrt() / arch.omega0
            };
            for _ in 0..fan_in * fan_out {
                params.push(rng.gen_range(-limit..=limit));
            }
            params.extend(std::iter::repeat(0.0).take(*fan_out));
        }
        Self { arch, params }
    }

    pub fn weights(&self, layer: usize) -> &[f32] {
        let (fan_in, fan_out) = self.arch.layer_dims()[layer];
        let off = self.arch.layer_offset(layer);
        &self.params[off..off + fan_in * fan_out]
    }

    pub fn bias(&self, layer: usize) -> &[f32] {
        let (fan_in, fan_out) = self.arch.layer_dims()[layer];
        let off = self.arch.layer_offset(layer) + fan_in * fan_out;
        &self.params[off..off + fan_out]
    }

    /// Scale every parameter in place (weight sharing across scales).
    pub fn scale_params(&mut self, factor: f32) {
        for p in &mut self.params {
            *p *= factor;
        }
    }
}

/// Evaluate a net on a shared coordinate grid; output is
/// `samples x out_dim`, row-major.
pub fn forward(net: &TinyNet, coords: &LocalCoords) -> Vec<f32> {
    forward_cached(net, coords).output
}

/// Activations saved by a forward pass, consumed by [`NetBatch::backward`].
struct ForwardPass {
    /// Inputs to each linear layer, `h[0]` being the coordinates.
    h: Vec<Vec<f32>>,
    /// Preactivations `W h + b` of every hidden layer.
    z: Vec<Vec<f32>>,
    output: Vec<f32>,
}

fn forward_cached(net: &TinyNet, coords: &LocalCoords) -> ForwardPass {
    let arch = &net.arch;
    assert_eq!(coords.dim, arch.in_dim, "coordinate dimensionality mismatch");
    let n = coords.samples;
    let dims = arch.layer_dims();
    let mut h: Vec<Vec<f32>> = Vec::with_capacity(arch.num_layers);
    let mut z: Vec<Vec<f32>> = Vec::with_capacity(arch.num_layers - 1);
    h.push(coords.coords.clone());
    for (l, &(fan_in, fan_out)) in dims.iter().enumerate() {
        let w = net.weights(l);
        let b = net.bias(l);
        let input = &h[l];
        let mut pre = vec![0.0f32; n * fan_out];
        for s in 0..n {
            let x = &input[s * fan_in..(s + 1) * fan_in];
            let out = &mut pre[s * fan_out..(s + 1) * fan_out];
            for (o, out_v) in out.iter_mut().enumerate() {
                let row = &w[o * fan_in..(o + 1) * fan_in];
                let mut acc = b[o];
                for (wv, xv) in row.iter().zip(x) {
                    acc += wv * xv;
                }
                *out_v = acc;
            }
        }
        if l == arch.num_layers - 1 {
            return ForwardPass { h, z, output: pre };
        }
        let act: Vec<f32> = pre.iter().map(|&v| (arch.omega0 * v).sin()).collect();
        z.push(pre);
        h.push(act);
    }
    unreachable!()
}

/// Accumulate gradients of the forward map composed with `output_grad` into
/// `grads` (flat, congruent to the net's parameter buffer).
fn backward_single(
    net: &TinyNet,
    pass: &ForwardPass,
    output_grad: &[f32],
    grads: &mut [f32],
) {
    let arch = &net.arch;
    let dims = arch.layer_dims();
    let n = pass.h[0].len() / arch.in_dim;
    let mut g = output_grad.to_vec();
    for l in (0..arch.num_layers).rev() {
        let (fan_in, fan_out) = dims[l];
        let w = net.weights(l);
        let off = arch.layer_offset(l);
        let (gw, gb) = grads[off..off + fan_in * fan_out + fan_out].split_at_mut(fan_in * fan_out);
        // hidden layers: fold the sine derivative into g first
        if l < arch.num_layers - 1 {
            let zl = &pass.z[l];
            for (gv, zv) in g.iter_mut().zip(zl) {
                *gv *= arch.omega0 * (arch.omega0 * zv).cos();
            }
        }
        let input = &pass.h[l];
        let mut g_in = vec![0.0f32; n * fan_in];
        for s in 0..n {
            let gs = &g[s * fan_out..(s + 1) * fan_out];
            let x = &input[s * fan_in..(s + 1) * fan_in];
            let gi = &mut g_in[s * fan_in..(s + 1) * fan_in];
            for (o, &go) in gs.iter().enumerate() {
                gb[o] += go;
                let row = &mut gw[o * fan_in..(o + 1) * fan_in];
                let wrow = &w[o * fan_in..(o + 1) * fan_in];
                for i in 0..fan_in {
                    row[i] += go * x[i];
                    gi[i] += go * wrow[i];
                }
            }
        }
        g = g_in;
    }
}

/// K tiny nets sharing one architecture, trained together.
///
/// Gradient buffers are partitioned per net, so forward and backward
/// parallelize over the net axis without synchronization.
pub struct NetBatch {
    pub arch: NetArch,
    pub nets: Vec<TinyNet>,
    grads: Vec<Vec<f32>>,
    cache: Option<Vec<ForwardPass>>,
}

impl NetBatch {
    pub fn new(arch: NetArch, nets: Vec<TinyNet>) -> Self {
        assert!(nets.iter().all(|n| n.arch == arch));
        let grads = nets
            .iter()
            .map(|_| vec![0.0; arch.param_count()])
            .collect();
        Self {
            arch,
            nets,
            grads,
            cache: None,
        }
    }

    pub fn len(&self) -> usize {
        self.nets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nets.is_empty()
    }

    pub fn grads(&self, k: usize) -> &[f32] {
        &self.grads[k]
    }

    /// Split borrow of one net's parameters and its gradient buffer.
    pub fn net_and_grads_mut(&mut self, k: usize) -> (&mut TinyNet, &[f32]) {
        (&mut self.nets[k], &self.grads[k])
    }

    pub fn zero_grads(&mut self) {
        for g in &mut self.grads {
            g.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    /// Evaluate every net on the shared grid; row `k` equals
    /// `forward(&self.nets[k], coords)`. Activations are cached for the next
    /// [`backward`](Self::backward) call.
    pub fn forward_batched(&mut self, coords: &LocalCoords) -> Vec<Vec<f32>> {
        let passes: Vec<ForwardPass> = self
            .nets
            .par_iter()
            .map(|net| forward_cached(net, coords))
            .collect();
        let outputs = passes.iter().map(|p| p.output.clone()).collect();
        self.cache = Some(passes);
        outputs
    }

    /// Backpropagate per-net output gradients through the cached forward
    /// pass, accumulating into the per-net gradient buffers.
    pub fn backward(&mut self, residual_grads: &[Vec<f32>]) -> Result<()> {
        let passes = self.cache.take().ok_or(MinerError::StaleActivations)?;
        if residual_grads.len() != self.nets.len()
            || passes
                .iter()
                .zip(residual_grads)
                .any(|(p, g)| p.output.len() != g.len())
        {
            return Err(MinerError::ShapeMismatch(
                "residual gradient shape does not match cached forward outputs".into(),
            ));
        }
        self.nets
            .par_iter()
            .zip(passes.par_iter())
            .zip(residual_grads.par_iter())
            .zip(self.grads.par_iter_mut())
            .for_each(|(((net, pass), rg), grads)| {
                backward_single(net, pass, rg, grads);
            });
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn arch2d() -> NetArch {
        NetArch::new(2, 1, 3, 3, 30.0)
    }

    #[test]
    fn init_is_deterministic_and_bounded() {
        let a = TinyNet::init_siren(arch2d(), 7);
        let b = TinyNet::init_siren(arch2d(), 7);
        assert_eq!(a.params, b.params);
        let c = TinyNet::init_siren(arch2d(), 8);
        assert_ne!(a.params, c.params);

        let limit = 1.0 / 2.0;
        assert!(a.weights(0).iter().all(|w| w.abs() <= limit));
        assert!(a.bias(0).iter().all(|&b| b == 0.0));
        let deep_limit = (6.0f32 / 3.0).sqrt() / 30.0;
        assert!(a.weights(1).iter().all(|w| w.abs() <= deep_limit));
    }

    #[test]
    fn zero_net_outputs_zero() {
        let net = TinyNet::zeros(arch2d());
        let coords = LocalCoords::new(4, 2);
        let out = forward(&net, &coords);
        assert!(out.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn constant_net_outputs_final_bias() {
        let arch = NetArch::new(2, 1, 3, 2, 30.0);
        let mut net = TinyNet::zeros(arch);
        // zero first layer -> hidden = sin(0) = 0 -> output = final bias
        let off = arch.layer_offset(1) + 3; // final layer bias
        net.params[off] = 0.75;
        let coords = LocalCoords::new(4, 2);
        let out = forward(&net, &coords);
        assert!(out.iter().all(|&v| v == 0.75));
    }

    #[test]
    fn scalar_net_matches_closed_form() {
        // 2 -> 1 hidden unit -> 1 output, hand-set weights
        let arch = NetArch::new(2, 1, 1, 2, 2.0);
        let mut net = TinyNet::zeros(arch);
        net.params[0] = 0.3; // W0[0,0]
        net.params[1] = -0.2; // W0[0,1]
        net.params[2] = 0.1; // b0
        net.params[3] = 1.5; // W1
        net.params[4] = -0.4; // b1
        let coords = LocalCoords::new(1, 2); // single coordinate (0, 0)
        let out = forward(&net, &coords);
        let expected = 1.5 * (2.0f64 * 0.1).sin() - 0.4;
        assert!((out[0] as f64 - expected).abs() < 1e-6);
    }

    #[test]
    fn batched_matches_per_net_loop() {
        let coords = LocalCoords::new(4, 2);
        let nets: Vec<TinyNet> = (0..3)
            .map(|s| TinyNet::init_siren(arch2d(), 100 + s))
            .collect();
        let expected: Vec<Vec<f32>> = nets.iter().map(|n| forward(n, &coords)).collect();
        let mut batch = NetBatch::new(arch2d(), nets);
        let got = batch.forward_batched(&coords);
        assert_eq!(got, expected);
    }

    #[test]
    fn permuting_nets_permutes_rows() {
        let coords = LocalCoords::new(2, 2);
        let nets: Vec<TinyNet> = (0..3)
            .map(|s| TinyNet::init_siren(arch2d(), 40 + s))
            .collect();
        let mut fwd = NetBatch::new(arch2d(), nets.clone());
        let rows = fwd.forward_batched(&coords);
        let mut rev = NetBatch::new(arch2d(), nets.into_iter().rev().collect());
        let rows_rev = rev.forward_batched(&coords);
        assert_eq!(rows[0], rows_rev[2]);
        assert_eq!(rows[2], rows_rev[0]);
    }

    #[test]
    fn backward_without_forward_is_an_error() {
        let mut batch = NetBatch::new(arch2d(), vec![TinyNet::init_siren(arch2d(), 1)]);
        let err = batch.backward(&[vec![0.0; 16]]);
        assert!(matches!(err, Err(MinerError::StaleActivations)));
    }

    #[test]
    fn zero_output_grad_gives_zero_param_grads() {
        let coords = LocalCoords::new(4, 2);
        let mut batch = NetBatch::new(arch2d(), vec![TinyNet::init_siren(arch2d(), 1)]);
        let out = batch.forward_batched(&coords);
        batch.backward(&[vec![0.0; out[0].len()]]).unwrap();
        assert!(batch.grads(0).iter().all(|&g| g == 0.0));
    }

    #[test]
    fn output_bounded_by_final_layer_norm() {
        let arch = NetArch::new(2, 3, 8, 4, 30.0);
        let net = TinyNet::init_siren(arch, 99);
        let coords = LocalCoords::new(8, 2);
        let out = forward(&net, &coords);
        let last = arch.num_layers - 1;
        for s in 0..coords.samples {
            for o in 0..arch.out_dim {
                let bound: f32 = net.weights(last)
                    [o * arch.hidden_features..(o + 1) * arch.hidden_features]
                    .iter()
                    .map(|w| w.abs())
                    .sum::<f32>()
                    + net.bias(last)[o].abs();
                assert!(out[s * arch.out_dim + o].abs() <= bound + 1e-6);
            }
        }
    }

    /// f64 reference forward for the gradient check.
    fn forward_f64(arch: &NetArch, params: &[f64], coords: &LocalCoords) -> Vec<f64> {
        let dims = arch.layer_dims();
        let n = coords.samples;
        let mut h: Vec<f64> = coords.coords.iter().map(|&c| c as f64).collect();
        let mut off = 0usize;
        for (l, &(fan_in, fan_out)) in dims.iter().enumerate() {
            let w = &params[off..off + fan_in * fan_out];
            let b = &params[off + fan_in * fan_out..off + fan_in * fan_out + fan_out];
            off += fan_in * fan_out + fan_out;
            let mut next = vec![0.0f64; n * fan_out];
            for s in 0..n {
                for o in 0..fan_out {
                    let mut acc = b[o];
                    for i in 0..fan_in {
                        acc += w[o * fan_in + i] * h[s * fan_in + i];
                    }
                    next[s * fan_out + o] = if l == arch.num_layers - 1 {
                        acc
                    } else {
                        (arch.omega0 as f64 * acc).sin()
                    };
                }
            }
            h = next;
        }
        h
    }

    /// Central-difference gradient of `sum(c * output)` in f64.
    fn fd_grad(arch: &NetArch, params: &[f64], coords: &LocalCoords, cvec: &[f64]) -> Vec<f64> {
        let h = 1e-5;
        let mut grad = vec![0.0; params.len()];
        let mut p = params.to_vec();
        for i in 0..p.len() {
            let orig = p[i];
            p[i] = orig + h;
            let up: f64 = forward_f64(arch, &p, coords)
                .iter()
                .zip(cvec)
                .map(|(o, c)| o * c)
                .sum();
            p[i] = orig - h;
            let dn: f64 = forward_f64(arch, &p, coords)
                .iter()
                .zip(cvec)
                .map(|(o, c)| o * c)
                .sum();
            p[i] = orig;
            grad[i] = (up - dn) / (2.0 * h);
        }
        grad
    }

    #[test]
    fn scalar_net_gradient_matches_chain_rule() {
        // single hidden unit, single input sample at (0.5, -0.5)
        let arch = NetArch::new(2, 1, 1, 2, 2.0);
        let mut net = TinyNet::zeros(arch);
        let p = [0.3f32, -0.2, 0.1, 1.5, -0.4];
        net.params.copy_from_slice(&p);
        let mut coords = LocalCoords::new(1, 2);
        coords.coords = vec![0.5, -0.5];

        let mut batch = NetBatch::new(arch, vec![net]);
        batch.forward_batched(&coords);
        batch.backward(&[vec![1.0]]).unwrap();

        // hand-derived: out = w1*sin(om*(a*x + b*y + c)) + b1
        let (om, a, b, c, w1) = (2.0f64, 0.3f64, -0.2f64, 0.1f64, 1.5f64);
        let z = a * 0.5 + b * -0.5 + c;
        let s = (om * z).sin();
        let dc = om * (om * z).cos();
        let expect = [
            w1 * dc * 0.5,  // dW0[0]
            w1 * dc * -0.5, // dW0[1]
            w1 * dc,        // db0
            s,              // dW1
            1.0,            // db1
        ];
        for (g, e) in batch.grads(0).iter().zip(&expect) {
            assert!((*g as f64 - e).abs() < 1e-5, "{g} vs {e}");
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        for seed in 0..4u64 {
            let arch = if seed % 2 == 0 {
                NetArch::new(2, 3, 4, 4, 30.0)
            } else {
                NetArch::new(3, 1, 5, 3, 30.0)
            };
            assert!(arch.param_count() <= 200);
            let net = TinyNet::init_siren(arch, seed);
            let coords = LocalCoords::new(2, arch.in_dim);
            let out_len = coords.samples * arch.out_dim;
            let cvec: Vec<f64> = (0..out_len).map(|i| 0.5 + 0.1 * i as f64).collect();

            let params64: Vec<f64> = net.params.iter().map(|&p| p as f64).collect();
            let expected = fd_grad(&arch, &params64, &coords, &cvec);

            let mut batch = NetBatch::new(arch, vec![net]);
            batch.forward_batched(&coords);
            batch
                .backward(&[cvec.iter().map(|&c| c as f32).collect()])
                .unwrap();

            for (g, e) in batch.grads(0).iter().zip(&expected) {
                let g = *g as f64;
                let rel = (g - e).abs() / (g.abs() + e.abs()).max(1e-8);
                assert!(rel < 1e-4, "grad {g} vs fd {e} (rel {rel})");
            }
        }
    }
}
