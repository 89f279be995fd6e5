//! Inspection of a trained spike-and-slab network: connection entropy,
//! sparsity, weight classes, ensemble accuracy and targeted perturbations.

use std::f64::consts::{E, PI};

use ndarray::Array2;
use rand::seq::index;
use rand_distr::{Distribution, StandardNormal};

use crate::data::Dataset;
use crate::forward::{classification_error, forward_point};
use crate::rng::{self, Rng};
use crate::sas::{sample_effective, EffectiveNetwork, Network, SaSLayer};
use crate::{Error, Result};

/// Density of `N(mean, var)` at `x`.
pub fn gauss_pdf(x: f64, mean: f64, var: f64) -> f64 {
    (-(x - mean).powi(2) / (2.0 * var)).exp() / (2.0 * PI * var).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EntropyMethod {
    MonteCarlo,
    AnalyticGaussian,
    Discrete,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EntropyEstimate {
    /// Nats.
    pub value: f64,
    pub samples: usize,
    pub method: EntropyMethod,
}

/// Sampled estimate of the spike-and-slab connection entropy for `xi > 0`:
///
/// `S = -pi ln[pi + (1-pi) N(0|m,xi)] - (1-pi)/B sum_s ln[(1-pi) phi(eps_s) / sqrt(xi)]`
///
/// The delta term inside the sampled logarithm is dropped since a
/// continuous `eps_s` never lands on it.
pub fn connection_entropy_mc(pi: f64, m: f64, xi: f64, samples: usize, rng: &mut Rng) -> f64 {
    debug_assert!(xi > 0.0);
    let spike = if pi > 0.0 {
        -pi * (pi + (1.0 - pi) * gauss_pdf(0.0, m, xi)).ln()
    } else {
        0.0
    };
    if pi >= 1.0 || samples == 0 {
        return spike;
    }
    let log_norm = 0.5 * (2.0 * PI).ln();
    let offset = (1.0 - pi).ln() - 0.5 * xi.ln() - log_norm;
    let sum: f64 = (0..samples)
        .map(|_| {
            let e: f64 = StandardNormal.sample(rng);
            offset - 0.5 * e * e
        })
        .sum();
    spike - (1.0 - pi) * sum / samples as f64
}

/// Entropy of one connection, choosing the exact form where one exists:
/// `1/2 ln(2 pi e xi)` for a pure slab, the Bernoulli entropy for `xi = 0`,
/// and the sampled estimate otherwise.
pub fn connection_entropy(pi: f64, m: f64, xi: f64, samples: usize, rng: &mut Rng) -> EntropyEstimate {
    if pi >= 1.0 {
        // a certain zero
        return EntropyEstimate {
            value: 0.0,
            samples: 0,
            method: EntropyMethod::Discrete,
        };
    }
    if xi <= 0.0 {
        // Two atoms, at 0 and at m; they merge when m = 0.
        let value = if m == 0.0 {
            0.0
        } else {
            let plogp = |p: f64| if p > 0.0 { p * p.ln() } else { 0.0 };
            -plogp(pi) - plogp(1.0 - pi)
        };
        return EntropyEstimate {
            value,
            samples: 0,
            method: EntropyMethod::Discrete,
        };
    }
    if pi <= 0.0 {
        return EntropyEstimate {
            value: 0.5 * (2.0 * PI * E * xi).ln(),
            samples: 0,
            method: EntropyMethod::AnalyticGaussian,
        };
    }
    EntropyEstimate {
        value: connection_entropy_mc(pi, m, xi, samples, rng),
        samples,
        method: EntropyMethod::MonteCarlo,
    }
}

/// Entropy of every connection in a block.
pub fn block_entropies(layer: &SaSLayer, samples: usize, rng: &mut Rng) -> Array2<f64> {
    let mut out = Array2::zeros(layer.shape());
    for ((idx, &pi), o) in layer.pi().indexed_iter().zip(out.iter_mut()) {
        *o = connection_entropy(pi, layer.m()[idx], layer.xi()[idx], samples, rng).value;
    }
    out
}

/// Mean connection entropy per block.
pub fn layer_entropy_profile(net: &Network, samples: usize, seed: u64) -> Vec<f64> {
    let mut rng = rng::seeded(seed);
    net.layers()
        .iter()
        .map(|l| {
            let s = block_entropies(l, samples, &mut rng);
            s.sum() / s.len() as f64
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SparsityStats {
    /// Expected fraction of absent connections.
    pub mean_pi: f64,
    pub frac_pi_gt_099: f64,
}

pub fn sparsity_profile(net: &Network) -> Vec<SparsityStats> {
    net.layers()
        .iter()
        .map(|l| {
            let n = l.len() as f64;
            SparsityStats {
                mean_pi: l.pi().sum() / n,
                frac_pi_gt_099: l.pi().iter().filter(|&&p| p > 0.99).count() as f64 / n,
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum WeightLabel {
    /// Always present with a fixed value.
    Vip,
    /// Always absent.
    Uip,
    /// Anything in between.
    Var,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Thresholds {
    pub tau_pi: f64,
    pub tau_xi: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            tau_pi: 0.01,
            tau_xi: 1e-3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ClassCounts {
    pub vip: usize,
    pub uip: usize,
    pub var: usize,
}

impl ClassCounts {
    pub fn total(&self) -> usize {
        self.vip + self.uip + self.var
    }

    pub fn fractions(&self) -> (f64, f64, f64) {
        let n = self.total().max(1) as f64;
        (self.vip as f64 / n, self.uip as f64 / n, self.var as f64 / n)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightClasses {
    pub thresholds: Thresholds,
    pub labels: Vec<Array2<WeightLabel>>,
    pub counts: Vec<ClassCounts>,
}

pub fn classify(pi: f64, xi: f64, th: Thresholds) -> WeightLabel {
    if pi <= th.tau_pi && xi <= th.tau_xi {
        WeightLabel::Vip
    } else if pi >= 1.0 - th.tau_pi {
        WeightLabel::Uip
    } else {
        WeightLabel::Var
    }
}

pub fn classify_weights(net: &Network, th: Thresholds) -> Result<WeightClasses> {
    let open = |t: f64| t > 0.0 && t < 0.5;
    if !open(th.tau_pi) || !open(th.tau_xi) {
        return Err(Error::Config(format!(
            "thresholds must lie in (0, 0.5), got tau_pi={} tau_xi={}",
            th.tau_pi, th.tau_xi
        )));
    }
    let mut labels = Vec::with_capacity(net.layers().len());
    let mut counts = Vec::with_capacity(net.layers().len());
    for layer in net.layers() {
        let mut c = ClassCounts::default();
        let mut lab = Array2::from_elem(layer.shape(), WeightLabel::Var);
        for ((idx, &pi), l) in layer.pi().indexed_iter().zip(lab.iter_mut()) {
            *l = classify(pi, layer.xi()[idx], th);
            match *l {
                WeightLabel::Vip => c.vip += 1,
                WeightLabel::Uip => c.uip += 1,
                WeightLabel::Var => c.var += 1,
            }
        }
        labels.push(lab);
        counts.push(c);
    }
    Ok(WeightClasses {
        thresholds: th,
        labels,
        counts,
    })
}

/// Mean and spread of a set of test errors.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorStats {
    pub mean: f64,
    /// Sample standard deviation; zero when there is a single value.
    pub std: f64,
    pub errors: Vec<f64>,
    /// Set when fewer than two values were available.
    pub degenerate: bool,
}

impl ErrorStats {
    fn from_errors(errors: Vec<f64>) -> Self {
        let n = errors.len();
        let mean = errors.iter().sum::<f64>() / n.max(1) as f64;
        let std = if n > 1 {
            (errors.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Self {
            mean,
            std,
            errors,
            degenerate: n < 2,
        }
    }
}

fn point_error(net: &EffectiveNetwork, data: &Dataset) -> Result<f64> {
    let probs = forward_point(net, data.inputs.view())?;
    Ok(classification_error(&probs, &data.labels))
}

/// Test error of `n_samples` networks drawn from the spike-and-slab
/// distribution; sample `i` uses seed `seed + i`.
pub fn ensemble_eval(net: &Network, n_samples: usize, data: &Dataset, seed: u64) -> Result<ErrorStats> {
    if n_samples == 0 {
        return Err(Error::Config("ensemble needs at least one sample".into()));
    }
    let errors = (0..n_samples as u64)
        .map(|i| point_error(&sample_effective(net, seed.wrapping_add(i)), data))
        .collect::<Result<Vec<_>>>()?;
    Ok(ErrorStats::from_errors(errors))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PerturbTarget {
    Vip,
    Uip,
    /// Any connection, regardless of class, with as many perturbed as the
    /// VIP target would perturb.
    All,
}

impl PerturbTarget {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Vip => "VIP",
            Self::Uip => "UIP",
            Self::All => "ALL",
        }
    }
}

impl std::str::FromStr for PerturbTarget {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "vip" => Ok(Self::Vip),
            "uip" => Ok(Self::Uip),
            "all" => Ok(Self::All),
            _ => Err(Error::Config(format!("unknown perturbation target {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PerturbMode {
    TurnOff,
    /// Replace the weight by a draw from `N(0, 1)`.
    TurnOnStandardGaussian,
}

/// What the untouched connections contribute.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Baseline {
    /// Their mean weight `mu`.
    #[default]
    Mean,
    /// A fresh spike-and-slab sample per trial.
    Sampled,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerturbSpec {
    pub target: PerturbTarget,
    pub fraction: f64,
    /// 0-based block index.
    pub layer_index: usize,
    pub mode: PerturbMode,
    pub seed: u64,
    pub baseline: Baseline,
}

impl PerturbSpec {
    /// The conventional pairing: UIP weights are switched on, the others off.
    pub fn standard(target: PerturbTarget, fraction: f64, layer_index: usize, seed: u64) -> Self {
        let mode = match target {
            PerturbTarget::Uip => PerturbMode::TurnOnStandardGaussian,
            _ => PerturbMode::TurnOff,
        };
        Self {
            target,
            fraction,
            layer_index,
            mode,
            seed,
            baseline: Baseline::Mean,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerturbResult {
    pub stats: ErrorStats,
    /// Connections changed in each trial.
    pub n_perturbed: usize,
    /// The requested count exceeded the available connections.
    pub capped: bool,
}

/// Perturbs a random subset of the targeted connections of one block and
/// measures test error, over `n_trials` subsets (trial `t` uses seed
/// `spec.seed + t`).
pub fn perturb_and_eval(
    net: &Network,
    classes: &WeightClasses,
    spec: &PerturbSpec,
    data: &Dataset,
    n_trials: usize,
) -> Result<PerturbResult> {
    if spec.mode == PerturbMode::TurnOnStandardGaussian && spec.target != PerturbTarget::Uip {
        return Err(Error::Config("only UIP connections can be switched on".into()));
    }
    if !(spec.fraction >= 0.0 && spec.fraction.is_finite()) {
        return Err(Error::Config(format!("bad perturbation fraction {}", spec.fraction)));
    }
    if n_trials == 0 {
        return Err(Error::Config("need at least one trial".into()));
    }
    let l = spec.layer_index;
    let labels = classes
        .labels
        .get(l)
        .filter(|lab| lab.dim() == net.layers().get(l).map(SaSLayer::shape).unwrap_or_default())
        .ok_or_else(|| Error::Dimension(format!("no block {l} in the classified network")))?;
    let counts = classes.counts[l];

    let candidates: Vec<(usize, usize)> = labels
        .indexed_iter()
        .filter(|(_, &lab)| match spec.target {
            PerturbTarget::Vip => lab == WeightLabel::Vip,
            PerturbTarget::Uip => lab == WeightLabel::Uip,
            PerturbTarget::All => true,
        })
        .map(|(idx, _)| idx)
        .collect();
    let reference = match spec.target {
        PerturbTarget::Vip | PerturbTarget::All => counts.vip,
        PerturbTarget::Uip => counts.uip,
    };
    let wanted = (spec.fraction * reference as f64).round() as usize;
    let capped = wanted > candidates.len();
    let n_perturbed = wanted.min(candidates.len());

    let mean_net = EffectiveNetwork::from_means(net);
    let mut errors = Vec::with_capacity(n_trials);
    for t in 0..n_trials as u64 {
        let seed = spec.seed.wrapping_add(t);
        let mut eff = match spec.baseline {
            Baseline::Mean => mean_net.clone(),
            Baseline::Sampled => sample_effective(net, rng::derive_seed(seed, "baseline")),
        };
        let mut trial_rng = rng::seeded(seed);
        let picks = index::sample(&mut trial_rng, candidates.len(), n_perturbed);
        let w = &mut eff.weights[l];
        for p in picks.iter() {
            w[candidates[p]] = match spec.mode {
                PerturbMode::TurnOff => 0.0,
                PerturbMode::TurnOnStandardGaussian => StandardNormal.sample(&mut trial_rng),
            };
        }
        errors.push(point_error(&eff, data)?);
    }
    Ok(PerturbResult {
        stats: ErrorStats::from_errors(errors),
        n_perturbed,
        capped,
    })
}

/// Equal-width bin counts over `[lo, hi]`; the last bin is closed.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<u64>,
    pub underflow: u64,
    /// Values above `hi`, and NaNs.
    pub overflow: u64,
}

impl Histogram {
    pub fn bins(&self) -> usize {
        self.counts.len()
    }

    pub fn edges(&self, bin: usize) -> (f64, f64) {
        let w = (self.hi - self.lo) / self.bins() as f64;
        let right = if bin + 1 == self.bins() {
            self.hi
        } else {
            self.lo + w * (bin + 1) as f64
        };
        (self.lo + w * bin as f64, right)
    }

    pub fn in_range(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Index of the fullest bin (lowest index on ties).
    pub fn mode(&self) -> usize {
        let mut best = 0;
        for (i, &c) in self.counts.iter().enumerate() {
            if c > self.counts[best] {
                best = i;
            }
        }
        best
    }
}

pub fn histogram<I>(values: I, bins: usize, range: (f64, f64)) -> Result<Histogram>
where
    I: IntoIterator<Item = f64>,
{
    let (lo, hi) = range;
    if bins == 0 {
        return Err(Error::Config("histogram needs at least one bin".into()));
    }
    if !(lo < hi && lo.is_finite() && hi.is_finite()) {
        return Err(Error::Config(format!("bad histogram range [{lo}, {hi}]")));
    }
    let mut h = Histogram {
        lo,
        hi,
        counts: vec![0; bins],
        underflow: 0,
        overflow: 0,
    };
    let width = (hi - lo) / bins as f64;
    for v in values {
        if v < lo {
            h.underflow += 1;
        } else if v <= hi {
            let b = (((v - lo) / width) as usize).min(bins - 1);
            h.counts[b] += 1;
        } else {
            h.overflow += 1;
        }
    }
    Ok(h)
}

/// Histogram over the observed range of the values (a unit-wide range
/// centred on the value when they are all equal).
pub fn histogram_auto(values: &[f64], bins: usize) -> Result<Histogram> {
    let finite = values.iter().copied().filter(|v| v.is_finite());
    let (lo, hi) = finite.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    let range = if !lo.is_finite() {
        (0.0, 1.0)
    } else if lo == hi {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    };
    histogram(values.iter().copied(), bins, range)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn entropy_special_cases() {
        let mut r = rng::seeded(1);
        for (m, xi) in [(0.3, 2.0), (-1.0, 0.0), (0.0, 0.5)] {
            let e = connection_entropy(1.0, m, xi, 100, &mut r);
            assert_eq!(e.value.to_bits(), 0f64.to_bits());
            assert_eq!(e.samples, 0);
        }
        let e = connection_entropy(0.0, 0.7, 1.0, 100, &mut r);
        assert_eq!(e.method, EntropyMethod::AnalyticGaussian);
        assert_abs_diff_eq!(e.value, 1.418_938_533_204_672_7, epsilon = 1e-12);
        let e = connection_entropy(0.5, 1.0, 0.0, 100, &mut r);
        assert_eq!(e.method, EntropyMethod::Discrete);
        assert_eq!(e.value, 2f64.ln());
        let e = connection_entropy(0.0, 1.0, 0.0, 100, &mut r);
        assert_eq!(e.value, 0.0);
        let e = connection_entropy(0.4, 0.0, 0.0, 100, &mut r);
        assert_eq!(e.value, 0.0);
    }

    #[test]
    fn entropy_mc_converges_to_closed_form() {
        let mut r = rng::seeded(2);
        let exact = 0.5 * (2.0 * PI * E * 2.0).ln();
        assert_abs_diff_eq!(exact, 1.765_512, epsilon = 1e-6);
        let mc = connection_entropy_mc(0.0, 0.5, 2.0, 100_000, &mut r);
        assert!((mc / exact - 1.0).abs() < 0.01, "{mc} vs {exact}");
        let near = connection_entropy(1e-6, 0.5, 1.0, 100_000, &mut r);
        assert_eq!(near.method, EntropyMethod::MonteCarlo);
        assert!((near.value - 0.5 * (2.0 * PI * E).ln()).abs() < 0.01);
    }

    #[test]
    fn entropy_can_be_negative() {
        let mut r = rng::seeded(3);
        assert!(connection_entropy(0.0, 1.0, 1e-4, 10, &mut r).value < 0.0);
    }

    #[test]
    fn profiles_on_uniform_networks() {
        let layers = vec![
            SaSLayer::filled(6, 5, 1.0, 0.4, 0.3).unwrap(),
            SaSLayer::filled(5, 4, 1.0, 0.4, 0.3).unwrap(),
        ];
        let pruned = Network::from_layers(layers).unwrap();
        assert_eq!(layer_entropy_profile(&pruned, 100, 0), vec![0.0, 0.0]);
        let sp = sparsity_profile(&pruned);
        assert!(sp.iter().all(|s| s.mean_pi == 1.0 && s.frac_pi_gt_099 == 1.0));

        let layers = vec![
            SaSLayer::filled(6, 5, 0.0, 0.4, 1.0).unwrap(),
            SaSLayer::filled(5, 4, 0.0, 0.4, 1.0).unwrap(),
        ];
        let slab = Network::from_layers(layers).unwrap();
        for s in layer_entropy_profile(&slab, 100, 0) {
            assert_abs_diff_eq!(s, 0.5 * (2.0 * PI * E).ln(), epsilon = 1e-12);
        }
        assert!(sparsity_profile(&slab).iter().all(|s| s.mean_pi == 0.0));

        let layers = vec![
            SaSLayer::filled(6, 5, 0.5, 0.4, 1.0).unwrap(),
            SaSLayer::filled(5, 4, 0.5, 0.4, 1.0).unwrap(),
        ];
        let half = Network::from_layers(layers).unwrap();
        assert!(sparsity_profile(&half).iter().all(|s| s.mean_pi == 0.5 && s.frac_pi_gt_099 == 0.0));
    }

    #[test]
    fn classification_examples() {
        let th = Thresholds::default();
        assert_eq!(classify(0.0, 0.0, th), WeightLabel::Vip);
        assert_eq!(classify(1.0, 0.7, th), WeightLabel::Uip);
        assert_eq!(classify(0.5, 0.3, th), WeightLabel::Var);
        assert_eq!(classify(0.0, 0.3, th), WeightLabel::Var);
    }

    #[test]
    fn classification_partitions() {
        let mut net = Network::new(&[8, 6, 3], &Default::default()).unwrap();
        let pi = Array2::from_shape_fn((8, 6), |(i, j)| ((i * 6 + j) % 3) as f64 / 2.0);
        *net.layers_mut()[0].pi_mut() = pi;
        net.layers_mut()[0].xi_mut().fill(0.0);
        let wc = classify_weights(&net, Thresholds::default()).unwrap();
        for (c, l) in wc.counts.iter().zip(net.layers()) {
            assert_eq!(c.total(), l.len());
            let (a, b, v) = c.fractions();
            assert_abs_diff_eq!(a + b + v, 1.0, epsilon = 1e-15);
        }
        assert_eq!(wc.counts[0], ClassCounts { vip: 16, uip: 16, var: 16 });
        let bad = Thresholds {
            tau_pi: 0.6,
            tau_xi: 0.1,
        };
        assert!(classify_weights(&net, bad).is_err());
    }

    #[test]
    fn histogram_basics() {
        let h = histogram([0.3; 7], 5, (0.0, 1.0)).unwrap();
        assert_eq!(h.counts.iter().filter(|&&c| c > 0).count(), 1);
        assert_eq!(h.in_range(), 7);
        let h = histogram([-1.0, 0.0, 0.5, 1.0, 2.0, f64::NAN], 2, (0.0, 1.0)).unwrap();
        assert_eq!(h.counts, vec![1, 2]);
        assert_eq!((h.underflow, h.overflow), (1, 2));
        assert_eq!(h.edges(1), (0.5, 1.0));
        let h = histogram(std::iter::empty(), 4, (0.0, 1.0)).unwrap();
        assert_eq!(h.counts, vec![0; 4]);
        assert!(histogram([1.0], 0, (0.0, 1.0)).is_err());
        let h = histogram_auto(&[2.0, 2.0], 3).unwrap();
        assert_eq!(h.counts.iter().filter(|&&c| c > 0).count(), 1);
    }

    #[test]
    fn error_stats_degenerate() {
        let s = ErrorStats::from_errors(vec![0.2]);
        assert_eq!((s.mean, s.std, s.degenerate), (0.2, 0.0, true));
        let s = ErrorStats::from_errors(vec![0.1, 0.3]);
        assert_abs_diff_eq!(s.std, 0.02f64.sqrt(), epsilon = 1e-15);
    }
}
