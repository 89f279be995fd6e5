//! Reparameterized forward pass.
//!
//! Each downstream pre-activation is treated as Gaussian with mean
//! `G = sum_k mu_k h_k / sqrt(N)` and variance
//! `Delta^2 = sum_k (rho_k - mu_k^2) h_k^2 / N`, and is realized as
//! `z = G + eps * Delta` with one standard-normal `eps` per neuron. Hidden
//! layers apply ReLU, the output layer applies softmax.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rand_distr::{Distribution, StandardNormal};

use crate::rng::Rng;
use crate::sas::{EffectiveNetwork, Network, SaSLayer};
use crate::{Error, Result};

/// Floor applied to probabilities before taking their logarithm.
pub const PROB_FLOOR: f64 = 1e-12;

/// Inputs and one-hot targets for a minibatch, one sample per row.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub inputs: Array2<f64>,
    pub targets: Array2<f64>,
}

impl Batch {
    pub fn new(inputs: Array2<f64>, targets: Array2<f64>) -> Result<Self> {
        if inputs.nrows() != targets.nrows() {
            return Err(Error::Dimension(format!(
                "{} input rows but {} target rows",
                inputs.nrows(),
                targets.nrows()
            )));
        }
        for (r, row) in targets.outer_iter().enumerate() {
            let ones = row.iter().filter(|&&v| v == 1.0).count();
            let zeros = row.iter().filter(|&&v| v == 0.0).count();
            if ones != 1 || ones + zeros != row.len() {
                return Err(Error::Data(format!("target row {r} is not one-hot")));
            }
        }
        Ok(Self { inputs, targets })
    }

    pub fn len(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.nrows() == 0
    }

    /// Class index of every target row.
    pub fn labels(&self) -> Vec<usize> {
        self.targets.outer_iter().map(|r| argmax(r)).collect()
    }
}

/// Where the per-neuron Gaussian noise comes from.
pub enum Noise<'a> {
    /// `eps = 0`: the deterministic mean network.
    Zeros,
    /// One fresh draw per neuron, shared by every sample of the batch.
    Sampled(&'a mut Rng),
    /// Caller-supplied vectors, one per block.
    Fixed(&'a [Array1<f64>]),
}

/// Quantities recorded for one downstream layer, one row per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerTrace {
    pub g: Array2<f64>,
    pub delta: Array2<f64>,
    pub eps: Array1<f64>,
    pub z: Array2<f64>,
    pub h: Array2<f64>,
}

/// Everything the backward pass needs from a forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub input: Array2<f64>,
    pub layers: Vec<LayerTrace>,
}

impl ForwardTrace {
    /// Softmax output, one row per sample.
    pub fn output(&self) -> &Array2<f64> {
        &self.layers.last().expect("trace has layers").h
    }

    /// Activations entering block `l` (the input for `l = 0`).
    pub fn activations_into(&self, l: usize) -> &Array2<f64> {
        if l == 0 {
            &self.input
        } else {
            &self.layers[l - 1].h
        }
    }

    /// The noise vectors of every layer, in order.
    pub fn eps(&self) -> Vec<Array1<f64>> {
        self.layers.iter().map(|t| t.eps.clone()).collect()
    }
}

/// Mean and standard deviation of the downstream pre-activations for every
/// row of `h_prev`.
pub fn layer_stats(h_prev: ArrayView2<f64>, layer: &SaSLayer) -> Result<(Array2<f64>, Array2<f64>)> {
    if h_prev.ncols() != layer.n_in() {
        return Err(Error::Dimension(format!(
            "activation width {} does not match block input width {}",
            h_prev.ncols(),
            layer.n_in()
        )));
    }
    let n = layer.n_in() as f64;
    let moments = layer.moments();
    let mut g = h_prev.dot(&moments.mu);
    g.mapv_inplace(|v| v / n.sqrt());
    let h_sq = h_prev.mapv(|v| v * v);
    let mut delta = h_sq.dot(&moments.var);
    delta.mapv_inplace(|v| (v / n).max(0.0).sqrt());
    Ok((g, delta))
}

pub fn relu(z: ArrayView1<f64>) -> Array1<f64> {
    z.mapv(|v| v.max(0.0))
}

/// Max-shifted softmax of one vector.
pub fn softmax(z: ArrayView1<f64>) -> Array1<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out = z.mapv(|v| (v - max).exp());
    let sum = out.sum();
    out.mapv_inplace(|v| v / sum);
    out
}

fn softmax_rows(z: &Array2<f64>) -> Array2<f64> {
    let mut out = z.clone();
    for mut row in out.outer_iter_mut() {
        let s = softmax(row.view());
        row.assign(&s);
    }
    out
}

/// `-ln h_t` for the target class `t`, with `h_t` floored at [`PROB_FLOOR`].
pub fn cross_entropy(h: ArrayView1<f64>, target: ArrayView1<f64>) -> f64 {
    -Zip::from(h)
        .and(target)
        .fold(0.0, |acc, &p, &t| acc + t * p.max(PROB_FLOOR).ln())
}

/// Mean cross entropy over the rows of a batch.
pub fn mean_cross_entropy(probs: &Array2<f64>, targets: &Array2<f64>) -> f64 {
    let total: f64 = probs
        .outer_iter()
        .zip(targets.outer_iter())
        .map(|(h, t)| cross_entropy(h, t))
        .sum();
    total / probs.nrows().max(1) as f64
}

/// Runs the reparameterized forward pass over a batch of inputs.
pub fn forward(net: &Network, inputs: ArrayView2<f64>, noise: Noise<'_>) -> Result<ForwardTrace> {
    if inputs.ncols() != net.widths()[0] {
        return Err(Error::Dimension(format!(
            "input width {} does not match network input width {}",
            inputs.ncols(),
            net.widths()[0]
        )));
    }
    if let Noise::Fixed(eps) = &noise {
        let ok = eps.len() == net.layers().len()
            && eps.iter().zip(net.layers()).all(|(e, l)| e.len() == l.n_out());
        if !ok {
            return Err(Error::Dimension(
                "fixed noise vectors do not match the layer widths".into(),
            ));
        }
    }
    let mut noise = noise;
    let n_blocks = net.layers().len();
    let mut layers: Vec<LayerTrace> = Vec::with_capacity(n_blocks);
    for (l, layer) in net.layers().iter().enumerate() {
        let h_prev = match layers.last() {
            Some(t) => t.h.view(),
            None => inputs,
        };
        let (g, delta) = layer_stats(h_prev, layer)?;
        let eps = match &mut noise {
            Noise::Zeros => Array1::zeros(layer.n_out()),
            Noise::Sampled(rng) => {
                Array1::from_shape_simple_fn(layer.n_out(), || StandardNormal.sample(&mut **rng))
            }
            Noise::Fixed(eps) => eps[l].clone(),
        };
        let mut z = delta.clone();
        Zip::from(&mut z)
            .and(&g)
            .and_broadcast(&eps)
            .for_each(|z, &g, &e| *z = g + e * *z);
        let h = if l + 1 == n_blocks {
            softmax_rows(&z)
        } else {
            z.mapv(|v| v.max(0.0))
        };
        layers.push(LayerTrace { g, delta, eps, z, h });
    }
    Ok(ForwardTrace {
        input: inputs.to_owned(),
        layers,
    })
}

/// Output probabilities of the deterministic mean network (`eps = 0`).
pub fn predict(net: &Network, inputs: ArrayView2<f64>) -> Result<Array2<f64>> {
    let mut h = inputs.to_owned();
    let n_blocks = net.layers().len();
    if inputs.ncols() != net.widths()[0] {
        return Err(Error::Dimension(format!(
            "input width {} does not match network input width {}",
            inputs.ncols(),
            net.widths()[0]
        )));
    }
    for (l, layer) in net.layers().iter().enumerate() {
        let n = layer.n_in() as f64;
        let mut z = h.dot(layer.mu());
        z.mapv_inplace(|v| v / n.sqrt());
        h = if l + 1 == n_blocks {
            softmax_rows(&z)
        } else {
            z.mapv(|v| v.max(0.0))
        };
    }
    Ok(h)
}

/// Output probabilities of a point-weight network:
/// `z = W^T h / sqrt(N)`, ReLU on hidden layers, softmax on the output.
pub fn forward_point(net: &EffectiveNetwork, inputs: ArrayView2<f64>) -> Result<Array2<f64>> {
    let first = net.weights.first().map(|w| w.nrows()).unwrap_or(0);
    if inputs.ncols() != first {
        return Err(Error::Dimension(format!(
            "input width {} does not match network input width {first}",
            inputs.ncols()
        )));
    }
    let mut h = inputs.to_owned();
    let n_blocks = net.weights.len();
    for (l, w) in net.weights.iter().enumerate() {
        let n = w.nrows() as f64;
        let mut z = h.dot(w);
        z.mapv_inplace(|v| v / n.sqrt());
        h = if l + 1 == n_blocks {
            softmax_rows(&z)
        } else {
            z.mapv(|v| v.max(0.0))
        };
    }
    Ok(h)
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(v: ArrayView1<f64>) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Fraction of rows whose argmax differs from the label.
pub fn classification_error(probs: &Array2<f64>, labels: &[usize]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let wrong = probs
        .axis_iter(Axis(0))
        .zip(labels)
        .filter(|(row, &label)| argmax(row.view()) != label)
        .count();
    wrong as f64 / labels.len() as f64
}
