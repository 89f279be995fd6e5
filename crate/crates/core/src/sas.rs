//! Spike-and-slab connection parameters.
//!
//! A connection weight `w` is zero with probability `pi` (the spike) and is
//! otherwise drawn from `N(m, xi)` (the slab). Its first two moments are
//! `mu = m (1 - pi)` and `rho = (1 - pi)(xi + m^2)`.

use std::sync::OnceLock;

use ndarray::{Array2, Zip};
use rand::Rng as _;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::rng::{self, Rng};
use crate::{Error, Result};

/// How the initial spike probabilities are chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PiInit {
    Constant(f64),
    /// Uniform on `[lo, hi]`.
    Uniform { lo: f64, hi: f64 },
}

/// Initial values for a freshly built network.
#[derive(Debug, Clone, PartialEq)]
pub struct InitConfig {
    pub pi_init: PiInit,
    pub m_init_std: f64,
    pub xi_init: f64,
    pub seed: u64,
}

impl Default for InitConfig {
    fn default() -> Self {
        Self {
            pi_init: PiInit::Constant(0.03),
            m_init_std: 1.0,
            xi_init: 0.1,
            seed: 0,
        }
    }
}

impl InitConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |p: f64| (0.0..=1.0).contains(&p);
        match self.pi_init {
            PiInit::Constant(p) if !unit(p) => {
                return Err(Error::Config(format!("pi_init {p} outside [0, 1]")))
            }
            PiInit::Uniform { lo, hi } if !(unit(lo) && unit(hi) && lo <= hi) => {
                return Err(Error::Config(format!(
                    "pi_init range [{lo}, {hi}] is not a sub-interval of [0, 1]"
                )))
            }
            _ => {}
        }
        if !(self.m_init_std > 0.0 && self.m_init_std.is_finite()) {
            return Err(Error::Config(format!(
                "m_init_std must be positive, got {}",
                self.m_init_std
            )));
        }
        if !(self.xi_init >= 0.0 && self.xi_init.is_finite()) {
            return Err(Error::Config(format!(
                "xi_init must be non-negative, got {}",
                self.xi_init
            )));
        }
        Ok(())
    }
}

/// First and second moments of every connection weight in a block, plus the
/// derived variance `rho - mu^2`.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    pub mu: Array2<f64>,
    pub rho: Array2<f64>,
    pub var: Array2<f64>,
}

impl Moments {
    pub fn variance(&self) -> &Array2<f64> {
        &self.var
    }
}

/// Spike-and-slab parameters of one layer-to-layer block, indexed
/// `[upstream neuron, downstream neuron]`.
///
/// The moment cache is filled on first use and dropped whenever a parameter
/// matrix is borrowed mutably.
#[derive(Debug, Clone)]
pub struct SaSLayer {
    pi: Array2<f64>,
    m: Array2<f64>,
    xi: Array2<f64>,
    moments: OnceLock<Moments>,
}

impl PartialEq for SaSLayer {
    fn eq(&self, other: &Self) -> bool {
        self.pi == other.pi && self.m == other.m && self.xi == other.xi
    }
}

impl SaSLayer {
    /// Builds a block from explicit parameter matrices. Values are stored
    /// as given; call [`clip_params`] to enforce the legal ranges.
    pub fn from_params(pi: Array2<f64>, m: Array2<f64>, xi: Array2<f64>) -> Result<Self> {
        if pi.dim() != m.dim() || pi.dim() != xi.dim() {
            return Err(Error::Dimension(format!(
                "parameter shapes differ: pi {:?}, m {:?}, xi {:?}",
                pi.dim(),
                m.dim(),
                xi.dim()
            )));
        }
        if pi.nrows() == 0 || pi.ncols() == 0 {
            return Err(Error::Dimension(format!("empty block {:?}", pi.dim())));
        }
        Ok(Self {
            pi,
            m,
            xi,
            moments: OnceLock::new(),
        })
    }

    /// A block with every connection set to the same `(pi, m, xi)`.
    pub fn filled(n_in: usize, n_out: usize, pi: f64, m: f64, xi: f64) -> Result<Self> {
        let shape = (n_in, n_out);
        Self::from_params(
            Array2::from_elem(shape, pi),
            Array2::from_elem(shape, m),
            Array2::from_elem(shape, xi),
        )
    }

    pub fn n_in(&self) -> usize {
        self.pi.nrows()
    }

    pub fn n_out(&self) -> usize {
        self.pi.ncols()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.pi.dim()
    }

    pub fn pi(&self) -> &Array2<f64> {
        &self.pi
    }

    pub fn m(&self) -> &Array2<f64> {
        &self.m
    }

    pub fn xi(&self) -> &Array2<f64> {
        &self.xi
    }

    pub fn pi_mut(&mut self) -> &mut Array2<f64> {
        self.moments.take();
        &mut self.pi
    }

    pub fn m_mut(&mut self) -> &mut Array2<f64> {
        self.moments.take();
        &mut self.m
    }

    pub fn xi_mut(&mut self) -> &mut Array2<f64> {
        self.moments.take();
        &mut self.xi
    }

    /// Whether the moment cache currently holds values for the stored
    /// parameters.
    pub fn moments_valid(&self) -> bool {
        self.moments.get().is_some()
    }

    /// Cached moments, computed on demand.
    pub fn moments(&self) -> &Moments {
        self.moments.get_or_init(|| compute_moments(self))
    }

    pub fn mu(&self) -> &Array2<f64> {
        &self.moments().mu
    }

    pub fn rho(&self) -> &Array2<f64> {
        &self.moments().rho
    }

    /// True when every `pi` lies in `[0, 1]` and every `xi` is non-negative.
    pub fn is_legal(&self) -> bool {
        self.pi.iter().all(|p| (0.0..=1.0).contains(p)) && self.xi.iter().all(|&x| x >= 0.0)
    }

    pub fn len(&self) -> usize {
        self.pi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pi.is_empty()
    }
}

/// Draws a fresh block: `pi` from the configured fill, `m` i.i.d. from
/// `N(0, m_init_std^2)`, and `xi` constant.
pub fn init_layer(n_in: usize, n_out: usize, cfg: &InitConfig, rng: &mut Rng) -> Result<SaSLayer> {
    if n_in == 0 || n_out == 0 {
        return Err(Error::Dimension(format!(
            "layer dimensions must be positive, got {n_in}x{n_out}"
        )));
    }
    cfg.validate()?;
    let shape = (n_in, n_out);
    let normal = Normal::new(0.0, cfg.m_init_std)
        .map_err(|e| Error::Config(format!("m_init_std: {e}")))?;
    let m = Array2::from_shape_simple_fn(shape, || normal.sample(rng));
    let pi = match cfg.pi_init {
        PiInit::Constant(p) => Array2::from_elem(shape, p),
        PiInit::Uniform { lo, hi } => {
            Array2::from_shape_simple_fn(shape, || lo + (hi - lo) * rng.random::<f64>())
        }
    };
    let xi = Array2::from_elem(shape, cfg.xi_init);
    let layer = SaSLayer::from_params(pi, m, xi)?;
    layer.moments();
    Ok(layer)
}

/// `mu = m (1 - pi)`, `rho = (1 - pi)(xi + m^2)`.
pub fn compute_moments(layer: &SaSLayer) -> Moments {
    let mu = Zip::from(&layer.m)
        .and(&layer.pi)
        .map_collect(|&m, &p| m * (1.0 - p));
    let rho = Zip::from(&layer.m)
        .and(&layer.pi)
        .and(&layer.xi)
        .map_collect(|&m, &p, &x| (1.0 - p) * (x + m * m));
    let var = Zip::from(&rho).and(&mu).map_collect(|&r, &u| r - u * u);
    Moments { mu, rho, var }
}

/// Projects `pi` onto `[0, 1]` and `xi` onto `[0, inf)`.
pub fn clip_params(layer: &mut SaSLayer) {
    layer.pi_mut().mapv_inplace(|p| p.clamp(0.0, 1.0));
    layer.xi_mut().mapv_inplace(|x| x.max(0.0));
}

/// A feed-forward stack of spike-and-slab blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    widths: Vec<usize>,
    layers: Vec<SaSLayer>,
}

impl Network {
    /// Initializes every block from `cfg`, using the `"init"` stream of
    /// `cfg.seed`.
    pub fn new(widths: &[usize], cfg: &InitConfig) -> Result<Self> {
        check_widths(widths)?;
        let mut rng = rng::stream(cfg.seed, "init");
        let layers = widths
            .windows(2)
            .map(|w| init_layer(w[0], w[1], cfg, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            widths: widths.to_vec(),
            layers,
        })
    }

    pub fn from_layers(layers: Vec<SaSLayer>) -> Result<Self> {
        let first = layers
            .first()
            .ok_or_else(|| Error::Dimension("network needs at least one block".into()))?;
        let mut widths = vec![first.n_in()];
        for (l, layer) in layers.iter().enumerate() {
            let expected = *widths.last().unwrap();
            if layer.n_in() != expected {
                return Err(Error::Dimension(format!(
                    "block {l} has {} inputs but the previous layer has {expected} neurons",
                    layer.n_in()
                )));
            }
            widths.push(layer.n_out());
        }
        check_widths(&widths)?;
        Ok(Self { widths, layers })
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    /// Number of neuron layers, input and output included.
    pub fn depth(&self) -> usize {
        self.widths.len()
    }

    pub fn layers(&self) -> &[SaSLayer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [SaSLayer] {
        &mut self.layers
    }

    pub fn n_connections(&self) -> usize {
        self.layers.iter().map(SaSLayer::len).sum()
    }

    /// Pins `pi = 0` and `xi = 0` everywhere, turning every connection into
    /// a point weight equal to `m`.
    pub fn make_deterministic(&mut self) {
        for layer in &mut self.layers {
            layer.pi_mut().fill(0.0);
            layer.xi_mut().fill(0.0);
        }
    }

    pub fn is_legal(&self) -> bool {
        self.layers.iter().all(SaSLayer::is_legal)
    }

    /// Architecture string such as `784-100-10`.
    pub fn arch_string(&self) -> String {
        format_arch(&self.widths)
    }
}

pub fn format_arch(widths: &[usize]) -> String {
    widths
        .iter()
        .map(usize::to_string)
        .collect::<Vec<_>>()
        .join("-")
}

fn check_widths(widths: &[usize]) -> Result<()> {
    if widths.len() < 3 {
        return Err(Error::Dimension(format!(
            "need at least 3 layers (one hidden), got {}",
            widths.len()
        )));
    }
    if widths.contains(&0) {
        return Err(Error::Dimension(format!("zero-width layer in {widths:?}")));
    }
    Ok(())
}

/// A concrete point-weight network drawn from (or derived from) a
/// spike-and-slab network.
#[derive(Debug, Clone, PartialEq)]
pub struct EffectiveNetwork {
    pub weights: Vec<Array2<f64>>,
    pub source_seed: u64,
}

impl EffectiveNetwork {
    /// The network whose weights are the connection means `mu`.
    pub fn from_means(net: &Network) -> Self {
        Self {
            weights: net.layers().iter().map(|l| l.mu().clone()).collect(),
            source_seed: 0,
        }
    }

    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.weights[0].nrows()];
        w.extend(self.weights.iter().map(|m| m.ncols()));
        w
    }
}

/// Draws one weight from its spike-and-slab distribution.
pub fn sample_weight(pi: f64, m: f64, xi: f64, rng: &mut Rng) -> f64 {
    if rng.random::<f64>() < pi {
        0.0
    } else {
        let eps: f64 = StandardNormal.sample(rng);
        m + xi.sqrt() * eps
    }
}

/// Samples every connection independently: zero with probability `pi`,
/// otherwise `N(m, xi)`.
pub fn sample_effective(net: &Network, seed: u64) -> EffectiveNetwork {
    let mut rng = rng::seeded(seed);
    let weights = net
        .layers()
        .iter()
        .map(|layer| {
            let mut w = Array2::zeros(layer.shape());
            Zip::from(&mut w)
                .and(layer.pi())
                .and(layer.m())
                .and(layer.xi())
                .for_each(|w, &p, &m, &x| *w = sample_weight(p, m, x, &mut rng));
            w
        })
        .collect();
    EffectiveNetwork {
        weights,
        source_seed: seed,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn single(pi: f64, m: f64, xi: f64) -> SaSLayer {
        SaSLayer::filled(1, 1, pi, m, xi).unwrap()
    }

    #[test]
    fn init_fills_pi_and_is_deterministic() {
        let cfg = InitConfig {
            seed: 7,
            ..InitConfig::default()
        };
        let a = init_layer(784, 100, &cfg, &mut rng::seeded(7)).unwrap();
        let b = init_layer(784, 100, &cfg, &mut rng::seeded(7)).unwrap();
        assert_eq!(a.shape(), (784, 100));
        assert!(a.pi().iter().all(|&p| p == 0.03));
        assert!(a.xi().iter().all(|&x| x == 0.1));
        assert_eq!(a.m(), b.m());
        assert!(a.moments_valid());
    }

    #[test]
    fn init_m_statistics() {
        let cfg = InitConfig {
            m_init_std: 1.0,
            seed: 7,
            ..InitConfig::default()
        };
        let layer = init_layer(784, 100, &cfg, &mut rng::seeded(7)).unwrap();
        let n = layer.len() as f64;
        let mean = layer.m().sum() / n;
        let var = layer.m().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!(mean.abs() < 4.0 / n.sqrt(), "mean {mean}");
        assert!((var.sqrt() - 1.0).abs() < 0.02, "std {}", var.sqrt());
    }

    #[test]
    fn init_rejects_bad_input() {
        let cfg = InitConfig::default();
        let mut r = rng::seeded(0);
        assert!(matches!(init_layer(0, 3, &cfg, &mut r), Err(Error::Dimension(_))));
        assert!(matches!(init_layer(3, 0, &cfg, &mut r), Err(Error::Dimension(_))));
        let bad = InitConfig {
            pi_init: PiInit::Constant(1.5),
            ..cfg.clone()
        };
        assert!(matches!(init_layer(2, 2, &bad, &mut r), Err(Error::Config(_))));
        let bad = InitConfig {
            m_init_std: 0.0,
            ..cfg.clone()
        };
        assert!(init_layer(2, 2, &bad, &mut r).is_err());
        let bad = InitConfig {
            xi_init: -1.0,
            ..cfg
        };
        assert!(init_layer(2, 2, &bad, &mut r).is_err());
    }

    #[test]
    fn uniform_pi_init_stays_in_range() {
        let cfg = InitConfig {
            pi_init: PiInit::Uniform { lo: 0.2, hi: 0.4 },
            ..InitConfig::default()
        };
        let layer = init_layer(30, 30, &cfg, &mut rng::seeded(1)).unwrap();
        assert!(layer.pi().iter().all(|p| (0.2..=0.4).contains(p)));
    }

    #[test]
    fn moments_examples() {
        let l = single(1.0, 3.0, 2.0);
        assert_eq!((l.mu()[[0, 0]], l.rho()[[0, 0]]), (0.0, 0.0));
        let l = single(0.0, 2.0, 1.0);
        assert_eq!((l.mu()[[0, 0]], l.rho()[[0, 0]]), (2.0, 5.0));
        let l = single(0.5, 1.0, 0.0);
        assert_eq!((l.mu()[[0, 0]], l.rho()[[0, 0]]), (0.5, 0.5));
        assert_eq!(l.moments().variance()[[0, 0]], 0.25);
    }

    #[test]
    fn mutation_invalidates_cache() {
        let mut l = single(0.0, 2.0, 1.0);
        assert_eq!(l.mu()[[0, 0]], 2.0);
        assert!(l.moments_valid());
        l.m_mut()[[0, 0]] = 4.0;
        assert!(!l.moments_valid());
        assert_eq!(l.mu()[[0, 0]], 4.0);
        assert_eq!(l.rho()[[0, 0]], 17.0);
    }

    #[test]
    fn clip_examples() {
        let mut l = single(1.2, 0.5, -0.1);
        l.moments();
        clip_params(&mut l);
        assert_eq!(l.pi()[[0, 0]], 1.0);
        assert_eq!(l.xi()[[0, 0]], 0.0);
        assert_eq!(l.m()[[0, 0]], 0.5);
        assert!(!l.moments_valid());

        let mut l = single(-0.3, 0.5, 0.7);
        clip_params(&mut l);
        assert_eq!(l.pi()[[0, 0]], 0.0);

        let mut l = single(0.3, -1.0, 0.7);
        clip_params(&mut l);
        assert_eq!((l.pi()[[0, 0]], l.m()[[0, 0]], l.xi()[[0, 0]]), (0.3, -1.0, 0.7));
    }

    #[test]
    fn network_shape_checks() {
        let net = Network::new(&[6, 4, 3], &InitConfig::default()).unwrap();
        assert_eq!(net.depth(), 3);
        assert_eq!(net.layers()[0].shape(), (6, 4));
        assert_eq!(net.layers()[1].shape(), (4, 3));
        assert_eq!(net.arch_string(), "6-4-3");
        assert!(matches!(
            Network::new(&[784, 100], &InitConfig::default()),
            Err(Error::Dimension(_))
        ));
        let a = SaSLayer::filled(3, 4, 0.5, 0.0, 0.1).unwrap();
        let b = SaSLayer::filled(5, 2, 0.5, 0.0, 0.1).unwrap();
        assert!(Network::from_layers(vec![a, b]).is_err());
    }

    #[test]
    fn sampling_degenerate_cases() {
        let mut net = Network::new(&[5, 4, 3], &InitConfig::default()).unwrap();
        for l in net.layers_mut() {
            l.pi_mut().fill(1.0);
        }
        let eff = sample_effective(&net, 3);
        assert!(eff.weights.iter().all(|w| w.iter().all(|&v| v == 0.0)));

        net.make_deterministic();
        let eff = sample_effective(&net, 3);
        for (w, l) in eff.weights.iter().zip(net.layers()) {
            assert_eq!(w, l.m());
        }
        assert_eq!(eff.source_seed, 3);
        assert_eq!(eff.widths(), vec![5, 4, 3]);
    }

    #[test]
    fn sampling_zero_fraction_concentrates() {
        let layers = vec![
            SaSLayer::filled(784, 100, 0.5, 1.0, 0.2).unwrap(),
            SaSLayer::filled(100, 10, 0.5, 1.0, 0.2).unwrap(),
        ];
        let net = Network::from_layers(layers).unwrap();
        let eff = sample_effective(&net, 11);
        let n = 78400.0;
        let zeros = eff.weights[0].iter().filter(|&&w| w == 0.0).count() as f64 / n;
        assert!((zeros - 0.5).abs() < 4.0 * (0.25f64 / n).sqrt(), "zero fraction {zeros}");
        assert_eq!(eff, sample_effective(&net, 11));
        assert_ne!(eff, sample_effective(&net, 12));
    }

    #[test]
    fn sampled_moments_match_analytic() {
        let (pi, m, xi) = (0.3, 1.5, 0.8);
        let l = single(pi, m, xi);
        let (mu, rho) = (l.mu()[[0, 0]], l.rho()[[0, 0]]);
        let mut r = rng::seeded(99);
        let n = 100_000;
        let draws: Vec<f64> = (0..n).map(|_| sample_weight(pi, m, xi, &mut r)).collect();
        let nf = n as f64;
        let mean = draws.iter().sum::<f64>() / nf;
        let second = draws.iter().map(|w| w * w).sum::<f64>() / nf;
        let var1 = draws.iter().map(|w| (w - mean).powi(2)).sum::<f64>() / nf;
        let var2 = draws.iter().map(|w| (w * w - second).powi(2)).sum::<f64>() / nf;
        assert!((mean - mu).abs() < 5.0 * (var1 / nf).sqrt());
        assert!((second - rho).abs() < 5.0 * (var2 / nf).sqrt());
    }

    proptest! {
        #[test]
        fn variance_identity(pi in 0.0f64..=1.0, m in -5.0f64..5.0, xi in 0.0f64..5.0) {
            let l = single(pi, m, xi);
            let var = l.moments().variance()[[0, 0]];
            let closed = (1.0 - pi) * (xi + pi * m * m);
            assert_abs_diff_eq!(var, closed, epsilon = 1e-12);
            prop_assert!(var >= -1e-12);
        }

        #[test]
        fn clip_restores_legality(
            vals in proptest::collection::vec((-2.0f64..3.0, -3.0f64..3.0, -2.0f64..2.0), 12)
        ) {
            let pi = Array2::from_shape_vec((3, 4), vals.iter().map(|v| v.0).collect()).unwrap();
            let m = Array2::from_shape_vec((3, 4), vals.iter().map(|v| v.1).collect()).unwrap();
            let xi = Array2::from_shape_vec((3, 4), vals.iter().map(|v| v.2).collect()).unwrap();
            let mut l = SaSLayer::from_params(pi, m.clone(), xi).unwrap();
            clip_params(&mut l);
            prop_assert!(l.is_legal());
            prop_assert_eq!(l.m(), &m);
            let var = l.moments().variance();
            prop_assert!(var.iter().all(|&v| v >= -1e-12));
        }
    }
}
