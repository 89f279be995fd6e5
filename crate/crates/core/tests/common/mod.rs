#![allow(dead_code)]

use std::path::Path;

use ndarray::{Array1, Array2};
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use sasnet::forward::{forward, Noise};
use sasnet::gbp::{activity_jacobian, backprop, param_jacobians, sgd_step, OutputErrorMode, TrainConfig};
use sasnet::rng::{self, Rng};
use sasnet::sas::{Network, SaSLayer};

/// Random layer with every parameter strictly inside its legal range.
pub fn random_layer(n_in: usize, n_out: usize, rng: &mut Rng) -> SaSLayer {
    let pi = Array2::from_shape_simple_fn((n_in, n_out), || rng.random_range(0.05..0.95));
    let m = Array2::from_shape_simple_fn((n_in, n_out), || StandardNormal.sample(rng));
    let xi = Array2::from_shape_simple_fn((n_in, n_out), || rng.random_range(0.05..1.0));
    SaSLayer::from_params(pi, m, xi).unwrap()
}

pub fn random_network(widths: &[usize], rng: &mut Rng) -> Network {
    let layers = widths.windows(2).map(|w| random_layer(w[0], w[1], rng)).collect();
    Network::from_layers(layers).unwrap()
}

pub fn random_inputs(batch: usize, width: usize, rng: &mut Rng) -> Array2<f64> {
    Array2::from_shape_simple_fn((batch, width), || rng.random_range(0.0..1.0))
}

pub fn random_targets(batch: usize, classes: usize, rng: &mut Rng) -> Array2<f64> {
    let mut t = Array2::zeros((batch, classes));
    for r in 0..batch {
        t[[r, rng.random_range(0..classes)]] = 1.0;
    }
    t
}

pub fn random_eps(widths: &[usize], rng: &mut Rng) -> Vec<Array1<f64>> {
    widths[1..]
        .iter()
        .map(|&n| Array1::from_shape_simple_fn(n, || StandardNormal.sample(rng)))
        .collect()
}

/// Raw parameters of one block as nested vectors `[i][k]`.
#[derive(Clone, Debug)]
pub struct RawBlock {
    pub pi: Vec<Vec<f64>>,
    pub m: Vec<Vec<f64>>,
    pub xi: Vec<Vec<f64>>,
}

pub fn raw(net: &Network) -> Vec<RawBlock> {
    let rows = |a: &Array2<f64>| a.outer_iter().map(|r| r.to_vec()).collect::<Vec<_>>();
    net.layers()
        .iter()
        .map(|l| RawBlock {
            pi: rows(l.pi()),
            m: rows(l.m()),
            xi: rows(l.xi()),
        })
        .collect()
}

/// Pre-activations of one block for one input row, written out with plain
/// loops from the spike-and-slab moment formulas.
pub fn oracle_z(block: &RawBlock, h: &[f64], eps: &[f64]) -> Vec<f64> {
    let n = h.len() as f64;
    let n_out = block.pi[0].len();
    (0..n_out)
        .map(|k| {
            let mut g = 0.0;
            let mut v = 0.0;
            for (i, &hi) in h.iter().enumerate() {
                let (p, m, x) = (block.pi[i][k], block.m[i][k], block.xi[i][k]);
                let mean = (1.0 - p) * m;
                let second = (1.0 - p) * (x + m * m);
                g += hi * mean;
                v += hi * hi * (second - mean * mean);
            }
            g / n.sqrt() + eps[k] * (v / n).max(0.0).sqrt()
        })
        .collect()
}

/// Mean cross-entropy of the whole network over a batch, plain loops.
pub fn oracle_loss(blocks: &[RawBlock], inputs: &Array2<f64>, targets: &Array2<f64>, eps: &[Array1<f64>]) -> f64 {
    let mut total = 0.0;
    for (x, t) in inputs.outer_iter().zip(targets.outer_iter()) {
        let mut h = x.to_vec();
        for (l, b) in blocks.iter().enumerate() {
            let z = oracle_z(b, &h, eps[l].as_slice().unwrap());
            if l + 1 == blocks.len() {
                let mx = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let lse = z.iter().map(|v| (v - mx).exp()).sum::<f64>().ln() + mx;
                total -= z.iter().zip(t.iter()).map(|(zi, ti)| ti * (zi - lse)).sum::<f64>();
            } else {
                h = z.iter().map(|v| v.max(0.0)).collect();
            }
        }
    }
    total / inputs.nrows() as f64
}

/// `|a - b|` relative to the larger magnitude, with magnitudes below `floor`
/// treated as `floor`.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Writes a tiny MNIST-shaped IDX pair (`count` images of 28x28 and labels).
pub fn write_fake_mnist(dir: &Path, prefix: &str, count: usize, seed: u64) {
    let mut r = rng::seeded(seed);
    let mut images = vec![0, 0, 8, 3];
    images.extend_from_slice(&(count as u32).to_be_bytes());
    images.extend_from_slice(&28u32.to_be_bytes());
    images.extend_from_slice(&28u32.to_be_bytes());
    let mut labels = vec![0, 0, 8, 1];
    labels.extend_from_slice(&(count as u32).to_be_bytes());
    for _ in 0..count {
        let label: u8 = r.random_range(0..10);
        labels.push(label);
        // a class-dependent bright band so the task is learnable
        for p in 0..784usize {
            let row = p / 28;
            let on = row / 3 == label as usize && r.random_bool(0.8);
            images.push(if on { r.random_range(128..=255) } else { r.random_range(0..20) });
        }
    }
    std::fs::write(dir.join(format!("{prefix}-images-idx3-ubyte")), images).unwrap();
    std::fs::write(dir.join(format!("{prefix}-labels-idx1-ubyte")), labels).unwrap();
}

/// Plain back-propagation for a one-hidden-layer ReLU/softmax network with
/// the same `1/sqrt(fan_in)` pre-activation scaling.
pub struct PlainBp {
    pub w1: Vec<Vec<f64>>,
    pub w2: Vec<Vec<f64>>,
}

impl PlainBp {
    pub fn step(&mut self, x: &Array2<f64>, t: &Array2<f64>, eta: f64, lambda: f64) {
        let (n0, n1, n2) = (self.w1.len(), self.w2.len(), self.w2[0].len());
        let (s0, s1) = ((n0 as f64).sqrt(), (n1 as f64).sqrt());
        let b = x.nrows() as f64;
        let mut g1 = vec![vec![0.0; n1]; n0];
        let mut g2 = vec![vec![0.0; n2]; n1];
        for (xr, tr) in x.outer_iter().zip(t.outer_iter()) {
            let z1: Vec<f64> = (0..n1).map(|j| (0..n0).map(|i| xr[i] * self.w1[i][j]).sum::<f64>() / s0).collect();
            let h1: Vec<f64> = z1.iter().map(|v| v.max(0.0)).collect();
            let z2: Vec<f64> = (0..n2).map(|k| (0..n1).map(|j| h1[j] * self.w2[j][k]).sum::<f64>() / s1).collect();
            let mx = z2.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let ex: Vec<f64> = z2.iter().map(|v| (v - mx).exp()).collect();
            let sum: f64 = ex.iter().sum();
            let dz2: Vec<f64> = (0..n2).map(|k| ex[k] / sum - tr[k]).collect();
            for j in 0..n1 {
                for k in 0..n2 {
                    g2[j][k] += h1[j] * dz2[k] / s1 / b;
                }
            }
            let dz1: Vec<f64> = (0..n1)
                .map(|j| {
                    let d: f64 = (0..n2).map(|k| self.w2[j][k] * dz2[k]).sum::<f64>() / s1;
                    if z1[j] > 0.0 { d } else { 0.0 }
                })
                .collect();
            for i in 0..n0 {
                for j in 0..n1 {
                    g1[i][j] += xr[i] * dz1[j] / s0 / b;
                }
            }
        }
        for (w, g) in [(&mut self.w1, &g1), (&mut self.w2, &g2)] {
            for (wr, gr) in w.iter_mut().zip(g) {
                for (wv, gv) in wr.iter_mut().zip(gr) {
                    *wv -= eta * (gv + lambda * *wv);
                }
            }
        }
    }
}


pub const FD_STEP: f64 = 1e-6;
/// Derivatives smaller than this are compared in absolute terms.
pub const FD_FLOOR: f64 = 1e-4;

#[derive(Debug, Clone, Copy)]
pub enum Param {
    M,
    Pi,
    Xi,
}

pub fn bump(blocks: &mut [RawBlock], l: usize, p: Param, i: usize, k: usize, by: f64) {
    let b = &mut blocks[l];
    match p {
        Param::M => b.m[i][k] += by,
        Param::Pi => b.pi[i][k] += by,
        Param::Xi => b.xi[i][k] += by,
    }
}

/// Largest relative error seen so far and where it occurred.
#[derive(Debug, Clone, Default)]
pub struct Worst {
    pub err: f64,
    pub at: String,
}

impl Worst {
    fn see(&mut self, analytic: f64, fd: f64, at: impl FnOnce() -> String) {
        let e = rel_err(analytic, fd, FD_FLOOR);
        if e > self.err || e.is_nan() {
            self.err = if e.is_nan() { f64::INFINITY } else { e };
            self.at = format!("{}: analytic {analytic:e}, finite difference {fd:e}", at());
        }
    }
}

pub fn min_hidden_abs_z(net: &Network, inputs: &Array2<f64>, eps: &[Array1<f64>]) -> f64 {
    let trace = forward(net, inputs.view(), Noise::Fixed(eps)).unwrap();
    let hidden = &trace.layers[..trace.layers.len() - 1];
    hidden
        .iter()
        .flat_map(|t| t.z.iter().map(|z| z.abs()))
        .fold(f64::INFINITY, f64::min)
}

/// Activity and parameter Jacobians of every block and sample against
/// central differences of [`oracle_z`].
pub fn jacobian_fd_error(net: &Network, inputs: &Array2<f64>, eps: &[Array1<f64>]) -> (Worst, Worst) {
    let trace = forward(net, inputs.view(), Noise::Fixed(eps)).unwrap();
    let blocks = raw(net);
    let (mut act, mut par) = (Worst::default(), Worst::default());
    for (l, layer) in net.layers().iter().enumerate() {
        let t = &trace.layers[l];
        let e = eps[l].as_slice().unwrap();
        for row in 0..inputs.nrows() {
            let h = trace.activations_into(l).row(row).to_vec();
            let delta = t.delta.row(row);
            let jac = activity_jacobian(layer, h.as_slice().into(), delta, eps[l].view());
            for i in 0..layer.n_in() {
                let (mut up, mut dn) = (h.clone(), h.clone());
                up[i] += FD_STEP;
                dn[i] -= FD_STEP;
                let (zu, zd) = (oracle_z(&blocks[l], &up, e), oracle_z(&blocks[l], &dn, e));
                for k in 0..layer.n_out() {
                    let fd = (zu[k] - zd[k]) / (2.0 * FD_STEP);
                    act.see(jac[[i, k]], fd, || format!("dz/dh block {l} [{i},{k}]"));
                }
            }
            let pj = param_jacobians(layer, h.as_slice().into(), delta, eps[l].view());
            for (p, analytic) in [(Param::M, &pj.dz_dm), (Param::Pi, &pj.dz_dpi), (Param::Xi, &pj.dz_dxi)] {
                for ((i, k), &a) in analytic.indexed_iter() {
                    let mut up = blocks[l].clone();
                    let mut dn = blocks[l].clone();
                    bump(std::slice::from_mut(&mut up), 0, p, i, k, FD_STEP);
                    bump(std::slice::from_mut(&mut dn), 0, p, i, k, -FD_STEP);
                    let fd = (oracle_z(&up, &h, e)[k] - oracle_z(&dn, &h, e)[k]) / (2.0 * FD_STEP);
                    par.see(a, fd, || format!("dz/d{p:?} block {l} [{i},{k}]"));
                }
            }
        }
    }
    (act, par)
}

/// Batched gradients of the mean loss against central differences of
/// [`oracle_loss`].
pub fn loss_fd_error(net: &Network, inputs: &Array2<f64>, targets: &Array2<f64>, eps: &[Array1<f64>]) -> Worst {
    let trace = forward(net, inputs.view(), Noise::Fixed(eps)).unwrap();
    let grads = backprop(net, &trace, targets, OutputErrorMode::Standard).unwrap();
    let blocks = raw(net);
    let mut worst = Worst::default();
    for (l, g) in grads.iter().enumerate() {
        for (p, analytic) in [(Param::M, &g.d_m), (Param::Pi, &g.d_pi), (Param::Xi, &g.d_xi)] {
            for ((i, k), &a) in analytic.indexed_iter() {
                let mut up = blocks.clone();
                let mut dn = blocks.clone();
                bump(&mut up, l, p, i, k, FD_STEP);
                bump(&mut dn, l, p, i, k, -FD_STEP);
                let fd = (oracle_loss(&up, inputs, targets, eps) - oracle_loss(&dn, inputs, targets, eps)) / (2.0 * FD_STEP);
                worst.see(a, fd, || format!("dC/d{p:?} block {l} [{i},{k}]"));
            }
        }
    }
    worst
}

/// Runs `steps` minibatch updates of a 784-20-10 network held at
/// `pi = xi = 0` next to [`PlainBp`], returning the largest `|m - w|` seen and
/// whether `pi` and `xi` stayed exactly zero.
pub fn bp_reduction(seed: u64, steps: usize) -> (f64, bool) {
    let mut r = rng::seeded(seed);
    let mut net = random_network(&[784, 20, 10], &mut r);
    net.make_deterministic();
    let rows = |a: &Array2<f64>| a.outer_iter().map(|x| x.to_vec()).collect::<Vec<_>>();
    let mut oracle = PlainBp {
        w1: rows(net.layers()[0].m()),
        w2: rows(net.layers()[1].m()),
    };
    let cfg = TrainConfig {
        eta: 0.5,
        lambda: 1e-4,
        bp_mode: true,
        ..TrainConfig::default()
    };
    let mut eps_rng = rng::seeded(seed ^ 0x5eed);
    let (mut worst, mut frozen) = (0.0f64, true);
    for _ in 0..steps {
        let x = random_inputs(20, 784, &mut r);
        let t = random_targets(20, 10, &mut r);
        let trace = forward(&net, x.view(), Noise::Sampled(&mut eps_rng)).unwrap();
        let grads = backprop(&net, &trace, &t, OutputErrorMode::Standard).unwrap();
        sgd_step(&mut net, &grads, &cfg).unwrap();
        oracle.step(&x, &t, cfg.eta, cfg.lambda);
        for (layer, w) in net.layers().iter().zip([&oracle.w1, &oracle.w2]) {
            for ((i, k), &m) in layer.m().indexed_iter() {
                worst = worst.max((m - w[i][k]).abs());
            }
            frozen &= layer.pi().iter().chain(layer.xi().iter()).all(|&v| v == 0.0);
        }
    }
    (worst, frozen)
}
