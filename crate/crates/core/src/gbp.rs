//! Generalized back-propagation: gradients of the cross entropy with respect
//! to the spike-and-slab hyperparameters `(pi, m, xi)`, plain SGD on them,
//! and the training loop.
//!
//! With `K = dC/dz` at a downstream layer, the error at the layer below is
//! `delta_i = sum_k K_k dz_k/dh_i` and `K_i = delta_i f'(z_i)`, and every
//! hyperparameter moves by `-eta K dz/dtheta`. The derivatives of `z` follow
//! from `z = G + eps * Delta` with the noise held fixed.

use std::time::Instant;

use ndarray::{Array1, Array2, ArrayView1, Axis, Zip};
use rand::seq::SliceRandom;

use crate::data::Dataset;
use crate::forward::{self, classification_error, mean_cross_entropy, ForwardTrace, Noise};
use crate::rng;
use crate::sas::{clip_params, Network, SaSLayer};
use crate::{Error, Result};

/// Floor on `Delta` wherever it appears in a denominator.
pub const DELTA_FLOOR: f64 = 1e-8;

/// Which error signal is injected at the softmax output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OutputErrorMode {
    /// `K_i = -t_i (1 - h_i)`: only the target class carries error.
    TargetOnly,
    /// `K_i = h_i - t_i`, the exact softmax/cross-entropy derivative.
    #[default]
    Standard,
}

impl std::str::FromStr for OutputErrorMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "target-only" => Ok(Self::TargetOnly),
            "standard" => Ok(Self::Standard),
            other => Err(Error::Config(format!(
                "unknown output error mode {other:?} (expected target-only or standard)"
            ))),
        }
    }
}

impl std::fmt::Display for OutputErrorMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::TargetOnly => "target-only",
            Self::Standard => "standard",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub eta: f64,
    /// l2 strength applied to `m` and `xi`.
    pub lambda: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub output_error_mode: OutputErrorMode,
    /// Pin `pi = 0`, `xi = 0` and update `m` only.
    pub bp_mode: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            eta: 3.0,
            lambda: 1e-4,
            batch_size: 20,
            epochs: 100,
            seed: 0,
            output_error_mode: OutputErrorMode::Standard,
            bp_mode: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(Error::Config(format!("eta must be positive, got {}", self.eta)));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!(
                "lambda must be non-negative, got {}",
                self.lambda
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        Ok(())
    }
}

/// Minibatch-mean gradients for one block.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrads {
    pub d_m: Array2<f64>,
    pub d_pi: Array2<f64>,
    pub d_xi: Array2<f64>,
}

impl LayerGrads {
    pub fn zeros(shape: (usize, usize)) -> Self {
        Self {
            d_m: Array2::zeros(shape),
            d_pi: Array2::zeros(shape),
            d_xi: Array2::zeros(shape),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochMetrics {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub test_error: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunMetrics {
    pub epochs: Vec<EpochMetrics>,
}

impl RunMetrics {
    pub fn last(&self) -> Option<&EpochMetrics> {
        self.epochs.last()
    }
}

/// Error signal `dC/dz` at the output layer for one sample.
pub fn output_error(h_out: ArrayView1<f64>, target: ArrayView1<f64>, mode: OutputErrorMode) -> Array1<f64> {
    match mode {
        OutputErrorMode::TargetOnly => Zip::from(h_out)
            .and(target)
            .map_collect(|&h, &t| -t * (1.0 - h)),
        OutputErrorMode::Standard => Zip::from(h_out).and(target).map_collect(|&h, &t| h - t),
    }
}

fn output_error_rows(h_out: &Array2<f64>, targets: &Array2<f64>, mode: OutputErrorMode) -> Array2<f64> {
    match mode {
        OutputErrorMode::TargetOnly => Zip::from(h_out)
            .and(targets)
            .map_collect(|&h, &t| -t * (1.0 - h)),
        OutputErrorMode::Standard => Zip::from(h_out).and(targets).map_collect(|&h, &t| h - t),
    }
}

/// `dz_k / dh_i` for one sample, indexed `[i, k]`:
/// `mu_ik / sqrt(N) + (rho_ik - mu_ik^2) h_i eps_k / (N Delta_k)`.
pub fn activity_jacobian(
    layer: &SaSLayer,
    h_prev: ArrayView1<f64>,
    delta_next: ArrayView1<f64>,
    eps_next: ArrayView1<f64>,
) -> Array2<f64> {
    let n = layer.n_in() as f64;
    let moments = layer.moments();
    let mut jac = Array2::zeros(layer.shape());
    Zip::indexed(&mut jac)
        .and(&moments.mu)
        .and(&moments.var)
        .for_each(|(i, k), j, &mu, &var| {
            let d = delta_next[k].max(DELTA_FLOOR);
            *j = mu / n.sqrt() + var * h_prev[i] * eps_next[k] / (n * d);
        });
    jac
}

/// `dz_k / dtheta_ik` for `theta` in `m`, `pi`, `xi`, one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamJacobians {
    pub dz_dm: Array2<f64>,
    pub dz_dpi: Array2<f64>,
    pub dz_dxi: Array2<f64>,
}

pub fn param_jacobians(
    layer: &SaSLayer,
    h_prev: ArrayView1<f64>,
    delta_next: ArrayView1<f64>,
    eps_next: ArrayView1<f64>,
) -> ParamJacobians {
    let n = layer.n_in() as f64;
    let shape = layer.shape();
    let mut dz_dm = Array2::zeros(shape);
    let mut dz_dpi = Array2::zeros(shape);
    let mut dz_dxi = Array2::zeros(shape);
    let mu = layer.mu();
    for ((i, k), &pi) in layer.pi().indexed_iter() {
        let m = layer.m()[[i, k]];
        let xi = layer.xi()[[i, k]];
        let h = h_prev[i];
        // noise-driven part shared by all three: h^2 eps / (N Delta)
        let noise = h * h * eps_next[k] / (n * delta_next[k].max(DELTA_FLOOR));
        dz_dm[[i, k]] = (1.0 - pi) * h / n.sqrt() + mu[[i, k]] * pi * noise;
        dz_dpi[[i, k]] = -m * h / n.sqrt() - ((2.0 * pi - 1.0) * m * m + xi) * noise / 2.0;
        dz_dxi[[i, k]] = (1.0 - pi) * noise / 2.0;
    }
    ParamJacobians {
        dz_dm,
        dz_dpi,
        dz_dxi,
    }
}

/// Minibatch-mean hyperparameter gradients for every block, given a trace
/// produced by [`forward::forward`] on the same inputs.
pub fn backprop(
    net: &Network,
    trace: &ForwardTrace,
    targets: &Array2<f64>,
    mode: OutputErrorMode,
) -> Result<Vec<LayerGrads>> {
    let n_blocks = net.layers().len();
    if trace.layers.len() != n_blocks {
        return Err(Error::Consistency(format!(
            "trace has {} layers, network has {n_blocks} blocks",
            trace.layers.len()
        )));
    }
    let batch = trace.input.nrows();
    if targets.nrows() != batch || targets.ncols() != trace.output().ncols() {
        return Err(Error::Consistency(format!(
            "targets {:?} do not match trace output {:?}",
            targets.dim(),
            trace.output().dim()
        )));
    }
    for (l, (t, layer)) in trace.layers.iter().zip(net.layers()).enumerate() {
        if t.z.ncols() != layer.n_out() || trace.activations_into(l).ncols() != layer.n_in() {
            return Err(Error::Consistency(format!("trace layer {l} does not match block {l}")));
        }
    }

    let scale = 1.0 / batch.max(1) as f64;
    let mut k_err = output_error_rows(trace.output(), targets, mode);
    let mut grads = Vec::with_capacity(n_blocks);
    for l in (0..n_blocks).rev() {
        let layer = &net.layers()[l];
        let t = &trace.layers[l];
        let h_prev = trace.activations_into(l);
        let n = layer.n_in() as f64;
        let sqrt_n = n.sqrt();
        let moments = layer.moments();

        // q = K eps / Delta, the per-sample weight of the noise-driven terms
        let mut q = k_err.clone();
        Zip::from(&mut q)
            .and(&t.delta)
            .and_broadcast(&t.eps)
            .for_each(|q, &d, &e| *q *= e / d.max(DELTA_FLOOR));

        let h_sq = h_prev.mapv(|v| v * v);
        let mean_term = h_prev.t().dot(&k_err) * scale;
        let noise_term = h_sq.t().dot(&q) * scale;

        let mut g = LayerGrads::zeros(layer.shape());
        Zip::from(&mut g.d_m)
            .and(layer.pi())
            .and(&moments.mu)
            .and(&mean_term)
            .and(&noise_term)
            .for_each(|dm, &pi, &mu, &a, &b| *dm = (1.0 - pi) * a / sqrt_n + mu * pi * b / n);
        Zip::from(&mut g.d_pi)
            .and(layer.pi())
            .and(layer.m())
            .and(layer.xi())
            .and(&mean_term)
            .and(&noise_term)
            .for_each(|dpi, &pi, &m, &xi, &a, &b| {
                *dpi = -m * a / sqrt_n - ((2.0 * pi - 1.0) * m * m + xi) * b / (2.0 * n)
            });
        Zip::from(&mut g.d_xi)
            .and(layer.pi())
            .and(&noise_term)
            .for_each(|dxi, &pi, &b| *dxi = (1.0 - pi) * b / (2.0 * n));
        grads.push(g);

        if l > 0 {
            let mut delta = k_err.dot(&moments.mu.t()) / sqrt_n;
            let spread = q.dot(&moments.var.t());
            Zip::from(&mut delta)
                .and(h_prev)
                .and(&spread)
                .for_each(|d, &h, &s| *d += h * s / n);
            let z_prev = &trace.layers[l - 1].z;
            Zip::from(&mut delta)
                .and(z_prev)
                .for_each(|d, &z| *d = if z > 0.0 { *d } else { 0.0 });
            k_err = delta;
        }
    }
    grads.reverse();
    Ok(grads)
}

/// One plain SGD step with l2 decay on `m` and `xi`, followed by clipping.
pub fn sgd_step(net: &mut Network, grads: &[LayerGrads], cfg: &TrainConfig) -> Result<()> {
    if grads.len() != net.layers().len() {
        return Err(Error::Dimension(format!(
            "{} gradient blocks for {} network blocks",
            grads.len(),
            net.layers().len()
        )));
    }
    for (layer, g) in net.layers_mut().iter_mut().zip(grads) {
        if g.d_m.dim() != layer.shape() || g.d_pi.dim() != layer.shape() || g.d_xi.dim() != layer.shape() {
            return Err(Error::Dimension(format!(
                "gradient shape {:?} does not match block {:?}",
                g.d_m.dim(),
                layer.shape()
            )));
        }
        let (eta, lambda) = (cfg.eta, cfg.lambda);
        Zip::from(layer.m_mut())
            .and(&g.d_m)
            .for_each(|m, &d| *m -= eta * (d + lambda * *m));
        if cfg.bp_mode {
            layer.pi_mut().fill(0.0);
            layer.xi_mut().fill(0.0);
        } else {
            Zip::from(layer.xi_mut())
                .and(&g.d_xi)
                .for_each(|x, &d| *x -= eta * (d + lambda * *x));
            Zip::from(layer.pi_mut())
                .and(&g.d_pi)
                .for_each(|p, &d| *p -= eta * d);
        }
        clip_params(layer);
    }
    Ok(())
}

/// Test error of the deterministic mean network.
pub fn evaluate(net: &Network, data: &Dataset) -> Result<f64> {
    let probs = forward::predict(net, data.inputs.view())?;
    Ok(classification_error(&probs, &data.labels))
}

fn check_data(net: &Network, data: &Dataset, what: &str) -> Result<()> {
    let widths = net.widths();
    let (n_in, n_out) = (widths[0], *widths.last().unwrap());
    if data.inputs.ncols() != n_in || data.one_hot.ncols() != n_out {
        return Err(Error::Dimension(format!(
            "{what} set is {}->{} but the network is {n_in}->{n_out}",
            data.inputs.ncols(),
            data.one_hot.ncols()
        )));
    }
    Ok(())
}

/// Trains with per-epoch shuffling and one quenched noise draw per
/// minibatch. Randomness comes from the `"shuffle"` and `"eps"` streams of
/// `cfg.seed`.
pub fn train(net: Network, train_set: &Dataset, test_set: &Dataset, cfg: &TrainConfig) -> Result<(Network, RunMetrics)> {
    train_with(net, train_set, test_set, cfg, |_, _| {})
}

/// [`train`] with a callback after every epoch.
pub fn train_with<F>(
    mut net: Network,
    train_set: &Dataset,
    test_set: &Dataset,
    cfg: &TrainConfig,
    mut on_epoch: F,
) -> Result<(Network, RunMetrics)>
where
    F: FnMut(&EpochMetrics, &Network),
{
    cfg.validate()?;
    check_data(&net, train_set, "training")?;
    check_data(&net, test_set, "test")?;
    if cfg.bp_mode {
        net.make_deterministic();
    }
    let mut shuffle_rng = rng::stream(cfg.seed, "shuffle");
    let mut eps_rng = rng::stream(cfg.seed, "eps");
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut metrics = RunMetrics::default();

    for epoch in 1..=cfg.epochs {
        let start = Instant::now();
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let inputs = train_set.inputs.select(Axis(0), chunk);
            let targets = train_set.one_hot.select(Axis(0), chunk);
            let trace = forward::forward(&net, inputs.view(), Noise::Sampled(&mut eps_rng))?;
            loss_sum += mean_cross_entropy(trace.output(), &targets) * chunk.len() as f64;
            let grads = backprop(&net, &trace, &targets, cfg.output_error_mode)?;
            sgd_step(&mut net, &grads, cfg)?;
        }
        let row = EpochMetrics {
            epoch,
            train_loss: loss_sum / train_set.len().max(1) as f64,
            test_error: evaluate(&net, test_set)?,
            seconds: start.elapsed().as_secs_f64(),
        };
        on_epoch(&row, &net);
        metrics.epochs.push(row);
    }
    Ok((net, metrics))
}
