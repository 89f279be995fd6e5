//! Command-line front end.
//!
//! Every option can also be given in a `key=value` file passed with
//! `--config`; keys are the long option names without the leading dashes.
//! Precedence is built-in defaults, then the file, then flags. Each run
//! writes the fully resolved settings to `manifest_<command>.txt` in the
//! output directory, which is itself a valid `--config` file.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::analysis::{
    block_entropies, classify_weights, ensemble_eval, histogram, histogram_auto, perturb_and_eval, sparsity_profile,
    Baseline, PerturbSpec, PerturbTarget, Thresholds,
};
use crate::data::{
    export_csv, load_idx, load_network, make_dataset, save_effective, save_network, CsvKind, Dataset, EnsembleRow,
    EntropyHistogramRow, EntropyProfileRow, HyperparamHistogramRow, PerturbationRow, RunManifest, SparsityRow,
    TrainingCurveRow, WeightClassRow,
};
use crate::gbp::{evaluate, train, OutputErrorMode, TrainConfig};
use crate::rng::{self, derive_seed};
use crate::sas::{format_arch, sample_effective, InitConfig, Network, PiInit};
use crate::{Error, Result};

pub const NETWORK_FILE: &str = "network.sasnet";

/// Manifest keys that describe a run but are not settings.
const INFO_KEYS: &[&str] = &["command", "version"];

#[derive(Debug, Parser)]
#[command(name = "sasnet", version, about = "Train and analyze spike-and-slab networks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a network; writes the network, its training curve and a manifest.
    Train(TrainArgs),
    /// Test error of the mean network and of sampled networks.
    Eval(EvalArgs),
    /// Draw point-weight networks from a trained network.
    Sample(SampleArgs),
    /// Sparsity, entropy, weight-class profiles and histograms.
    Analyze(AnalyzeArgs),
    /// Targeted-weight perturbation curves.
    Perturb(PerturbArgs),
}

#[derive(Debug, Args)]
pub struct CommonOpts {
    /// key=value settings file, overridden by flags
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Output directory
    #[arg(long, value_name = "DIR")]
    pub out: Option<String>,
    #[arg(long)]
    pub seed: Option<String>,
}

#[derive(Debug, Args)]
pub struct DataOpts {
    /// Directory holding the four MNIST IDX files (optionally gzipped)
    #[arg(long, value_name = "DIR")]
    pub data_dir: Option<String>,
    #[arg(long)]
    pub train_size: Option<String>,
    #[arg(long)]
    pub train_offset: Option<String>,
    #[arg(long)]
    pub test_size: Option<String>,
    #[arg(long)]
    pub test_offset: Option<String>,
}

#[derive(Debug, Args)]
pub struct ModelOpts {
    /// Layer widths, e.g. 784-100-100-10
    #[arg(long)]
    pub arch: Option<String>,
    /// Initial spike probability: a number, or uniform:LO:HI
    #[arg(long)]
    pub pi_init: Option<String>,
    #[arg(long)]
    pub m_init_std: Option<String>,
    #[arg(long)]
    pub xi_init: Option<String>,
}

#[derive(Debug, Args)]
pub struct OptimOpts {
    #[arg(long)]
    pub eta: Option<String>,
    #[arg(long)]
    pub lambda: Option<String>,
    #[arg(long)]
    pub batch_size: Option<String>,
    #[arg(long)]
    pub epochs: Option<String>,
    /// standard or target-only
    #[arg(long)]
    pub output_error: Option<String>,
    /// Train point weights only (pi = xi = 0)
    #[arg(long)]
    pub bp_mode: bool,
    /// Write 0 in the seconds column so the curve is byte-reproducible
    #[arg(long)]
    pub zero_time: bool,
}

#[derive(Debug, Args)]
pub struct NetworkOpts {
    /// Trained network file
    #[arg(long, value_name = "PATH")]
    pub network: Option<String>,
}

#[derive(Debug, Args)]
pub struct ThresholdOpts {
    #[arg(long)]
    pub tau_pi: Option<String>,
    #[arg(long)]
    pub tau_xi: Option<String>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: CommonOpts,
    #[command(flatten)]
    pub data: DataOpts,
    #[command(flatten)]
    pub model: ModelOpts,
    #[command(flatten)]
    pub optim: OptimOpts,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: CommonOpts,
    #[command(flatten)]
    pub data: DataOpts,
    #[command(flatten)]
    pub network: NetworkOpts,
    /// Number of sampled networks (0 skips the ensemble)
    #[arg(long)]
    pub n_samples: Option<String>,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[command(flatten)]
    pub common: CommonOpts,
    #[command(flatten)]
    pub network: NetworkOpts,
    #[arg(long)]
    pub n_samples: Option<String>,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[command(flatten)]
    pub common: CommonOpts,
    #[command(flatten)]
    pub network: NetworkOpts,
    #[command(flatten)]
    pub thresholds: ThresholdOpts,
    /// Monte-Carlo samples per connection for the entropy (B)
    #[arg(long)]
    pub entropy_samples: Option<String>,
    #[arg(long)]
    pub bins: Option<String>,
}

#[derive(Debug, Args)]
pub struct PerturbArgs {
    #[command(flatten)]
    pub common: CommonOpts,
    #[command(flatten)]
    pub data: DataOpts,
    #[command(flatten)]
    pub network: NetworkOpts,
    #[command(flatten)]
    pub thresholds: ThresholdOpts,
    /// Comma-separated fractions, e.g. 0.1,0.25,0.5
    #[arg(long)]
    pub fractions: Option<String>,
    /// Comma-separated subset of VIP,ALL,UIP
    #[arg(long)]
    pub targets: Option<String>,
    /// 1-based block to perturb
    #[arg(long)]
    pub layer: Option<String>,
    #[arg(long)]
    pub trials: Option<String>,
    /// mean or sampled
    #[arg(long)]
    pub baseline: Option<String>,
}

type Pairs = Vec<(&'static str, String)>;

fn push(out: &mut Pairs, key: &'static str, value: &Option<String>) {
    if let Some(v) = value {
        out.push((key, v.clone()));
    }
}

impl CommonOpts {
    fn pairs(&self, out: &mut Pairs) {
        push(out, "out", &self.out);
        push(out, "seed", &self.seed);
    }
}

impl DataOpts {
    fn pairs(&self, out: &mut Pairs) {
        push(out, "data-dir", &self.data_dir);
        push(out, "train-size", &self.train_size);
        push(out, "train-offset", &self.train_offset);
        push(out, "test-size", &self.test_size);
        push(out, "test-offset", &self.test_offset);
    }
}

impl ModelOpts {
    fn pairs(&self, out: &mut Pairs) {
        push(out, "arch", &self.arch);
        push(out, "pi-init", &self.pi_init);
        push(out, "m-init-std", &self.m_init_std);
        push(out, "xi-init", &self.xi_init);
    }
}

impl OptimOpts {
    fn pairs(&self, out: &mut Pairs) {
        push(out, "eta", &self.eta);
        push(out, "lambda", &self.lambda);
        push(out, "batch-size", &self.batch_size);
        push(out, "epochs", &self.epochs);
        push(out, "output-error", &self.output_error);
        if self.bp_mode {
            out.push(("bp-mode", "true".into()));
        }
        if self.zero_time {
            out.push(("zero-time", "true".into()));
        }
    }
}

impl ThresholdOpts {
    fn pairs(&self, out: &mut Pairs) {
        push(out, "tau-pi", &self.tau_pi);
        push(out, "tau-xi", &self.tau_xi);
    }
}

/// Fully resolved settings shared by all subcommands.
#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    pub arch: Vec<usize>,
    pub data_dir: Option<PathBuf>,
    pub train_size: usize,
    pub train_offset: usize,
    pub test_size: usize,
    pub test_offset: usize,
    pub init: InitConfig,
    pub train: TrainConfig,
    pub zero_time: bool,
    pub network: Option<PathBuf>,
    pub out: PathBuf,
    pub seed: u64,
    pub entropy_samples: usize,
    pub thresholds: Thresholds,
    pub bins: usize,
    pub n_samples: usize,
    pub fractions: Vec<f64>,
    pub targets: Vec<PerturbTarget>,
    /// 1-based.
    pub layer: usize,
    pub trials: usize,
    pub baseline: Baseline,
}

impl Default for Settings {
    fn default() -> Self {
        Self {
            arch: vec![784, 100, 100, 10],
            data_dir: None,
            train_size: 10_000,
            train_offset: 0,
            test_size: 10_000,
            test_offset: 0,
            init: InitConfig::default(),
            train: TrainConfig::default(),
            zero_time: false,
            network: None,
            out: PathBuf::from("out"),
            seed: 0,
            entropy_samples: 100,
            thresholds: Thresholds::default(),
            bins: 20,
            n_samples: 10,
            fractions: vec![0.1, 0.25, 0.5],
            targets: vec![PerturbTarget::Vip, PerturbTarget::All, PerturbTarget::Uip],
            layer: 1,
            trials: 10,
            baseline: Baseline::Mean,
        }
    }
}

fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

fn list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value.split(',').map(|v| num(key, v)).collect()
}

/// Parses `784-100-100-10`; at least three positive widths.
pub fn parse_arch(s: &str) -> Result<Vec<usize>> {
    let widths: Vec<usize> = s
        .split('-')
        .map(|w| w.trim().parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::Config(format!("arch: cannot parse {s:?}")))?;
    if widths.len() < 3 || widths.contains(&0) {
        return Err(Error::Config(format!(
            "arch: need at least three positive widths, got {s:?}"
        )));
    }
    Ok(widths)
}

fn parse_pi_init(s: &str) -> Result<PiInit> {
    match s.strip_prefix("uniform:") {
        Some(rest) => {
            let (lo, hi) = rest
                .split_once(':')
                .ok_or_else(|| Error::Config(format!("pi-init: expected uniform:LO:HI, got {s:?}")))?;
            Ok(PiInit::Uniform {
                lo: num("pi-init", lo)?,
                hi: num("pi-init", hi)?,
            })
        }
        None => Ok(PiInit::Constant(num("pi-init", s)?)),
    }
}

fn show_pi_init(p: &PiInit) -> String {
    match p {
        PiInit::Constant(v) => v.to_string(),
        PiInit::Uniform { lo, hi } => format!("uniform:{lo}:{hi}"),
    }
}

fn parse_baseline(s: &str) -> Result<Baseline> {
    match s {
        "mean" => Ok(Baseline::Mean),
        "sampled" => Ok(Baseline::Sampled),
        other => Err(Error::Config(format!("baseline: expected mean or sampled, got {other:?}"))),
    }
}

fn parse_bool(key: &str, s: &str) -> Result<bool> {
    match s {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        other => Err(Error::Config(format!("{key}: expected true or false, got {other:?}"))),
    }
}

fn join<T: ToString>(items: &[T]) -> String {
    items.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

impl Settings {
    /// Applies one `key=value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "arch" => self.arch = parse_arch(v)?,
            "data-dir" => self.data_dir = Some(PathBuf::from(v)),
            "train-size" => self.train_size = num(key, v)?,
            "train-offset" => self.train_offset = num(key, v)?,
            "test-size" => self.test_size = num(key, v)?,
            "test-offset" => self.test_offset = num(key, v)?,
            "pi-init" => self.init.pi_init = parse_pi_init(v)?,
            "m-init-std" => self.init.m_init_std = num(key, v)?,
            "xi-init" => self.init.xi_init = num(key, v)?,
            "eta" => self.train.eta = num(key, v)?,
            "lambda" => self.train.lambda = num(key, v)?,
            "batch-size" => self.train.batch_size = num(key, v)?,
            "epochs" => self.train.epochs = num(key, v)?,
            "output-error" => self.train.output_error_mode = v.parse::<OutputErrorMode>()?,
            "bp-mode" => self.train.bp_mode = parse_bool(key, v)?,
            "zero-time" => self.zero_time = parse_bool(key, v)?,
            "network" => self.network = Some(PathBuf::from(v)),
            "out" => self.out = PathBuf::from(v),
            "seed" => self.seed = num(key, v)?,
            "entropy-samples" => self.entropy_samples = num(key, v)?,
            "tau-pi" => self.thresholds.tau_pi = num(key, v)?,
            "tau-xi" => self.thresholds.tau_xi = num(key, v)?,
            "bins" => self.bins = num(key, v)?,
            "n-samples" => self.n_samples = num(key, v)?,
            "fractions" => self.fractions = list(key, v)?,
            "targets" => self.targets = list(key, v)?,
            "layer" => self.layer = num(key, v)?,
            "trials" => self.trials = num(key, v)?,
            "baseline" => self.baseline = parse_baseline(v)?,
            other => return Err(Error::Config(format!("unknown setting {other:?}"))),
        }
        self.init.seed = self.seed;
        self.train.seed = self.seed;
        Ok(())
    }

    /// Defaults, then the optional config file, then flag overrides.
    pub fn resolve(config: Option<&Path>, flags: &[(&str, String)]) -> Result<Self> {
        let mut s = Self::default();
        if let Some(path) = config {
            for (k, v) in RunManifest::read(path)?.entries() {
                if !INFO_KEYS.contains(&k.as_str()) {
                    s.set(k, v)?;
                }
            }
        }
        for (k, v) in flags {
            s.set(k, v)?;
        }
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        self.init.validate()?;
        self.train.validate()?;
        let th = self.thresholds;
        if !(th.tau_pi > 0.0 && th.tau_pi < 0.5 && th.tau_xi > 0.0 && th.tau_xi < 0.5) {
            return Err(Error::Config("thresholds must lie in (0, 0.5)".into()));
        }
        if self.fractions.iter().any(|f| !(0.0..=1.0).contains(f)) {
            return Err(Error::Config("fractions must lie in [0, 1]".into()));
        }
        if self.layer == 0 {
            return Err(Error::Config("layer is 1-based".into()));
        }
        if self.bins == 0 || self.entropy_samples == 0 || self.trials == 0 {
            return Err(Error::Config("bins, entropy-samples and trials must be positive".into()));
        }
        Ok(())
    }

    /// Every setting as `key=value`, in a form [`Settings::set`] accepts.
    pub fn manifest(&self, command: &str) -> RunManifest {
        let mut m = RunManifest::new();
        m.set("command", command);
        m.set("version", env!("CARGO_PKG_VERSION"));
        m.set("seed", self.seed);
        m.set("out", self.out.display());
        if let Some(d) = &self.data_dir {
            m.set("data-dir", d.display());
        }
        if let Some(n) = &self.network {
            m.set("network", n.display());
        }
        m.set("train-size", self.train_size);
        m.set("train-offset", self.train_offset);
        m.set("test-size", self.test_size);
        m.set("test-offset", self.test_offset);
        m.set("arch", format_arch(&self.arch));
        m.set("pi-init", show_pi_init(&self.init.pi_init));
        m.set("m-init-std", self.init.m_init_std);
        m.set("xi-init", self.init.xi_init);
        m.set("eta", self.train.eta);
        m.set("lambda", self.train.lambda);
        m.set("batch-size", self.train.batch_size);
        m.set("epochs", self.train.epochs);
        m.set("output-error", self.train.output_error_mode);
        m.set("bp-mode", self.train.bp_mode);
        m.set("zero-time", self.zero_time);
        m.set("entropy-samples", self.entropy_samples);
        m.set("tau-pi", self.thresholds.tau_pi);
        m.set("tau-xi", self.thresholds.tau_xi);
        m.set("bins", self.bins);
        m.set("n-samples", self.n_samples);
        m.set("fractions", join(&self.fractions));
        m.set("targets", self.targets.iter().map(|t| t.as_str()).collect::<Vec<_>>().join(","));
        m.set("layer", self.layer);
        m.set("trials", self.trials);
        m.set(
            "baseline",
            match self.baseline {
                Baseline::Mean => "mean",
                Baseline::Sampled => "sampled",
            },
        );
        m
    }

    fn data_dir(&self) -> Result<&Path> {
        self.data_dir
            .as_deref()
            .ok_or_else(|| Error::Config("--data-dir is required".into()))
    }

    fn network_path(&self) -> Result<&Path> {
        self.network
            .as_deref()
            .ok_or_else(|| Error::Config("--network is required".into()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

fn locate(dir: &Path, name: &str) -> Result<PathBuf> {
    let plain = dir.join(name);
    if plain.exists() {
        return Ok(plain);
    }
    let gz = dir.join(format!("{name}.gz"));
    if gz.exists() {
        return Ok(gz);
    }
    Err(Error::io(
        &plain,
        std::io::Error::new(std::io::ErrorKind::NotFound, "no such file (also tried .gz)"),
    ))
}

/// Loads a contiguous slice of the MNIST training or test split.
pub fn load_mnist(dir: &Path, split: Split, offset: usize, count: usize) -> Result<Dataset> {
    let prefix = match split {
        Split::Train => "train",
        Split::Test => "t10k",
    };
    let images = load_idx(locate(dir, &format!("{prefix}-images-idx3-ubyte"))?)?;
    let labels = load_idx(locate(dir, &format!("{prefix}-labels-idx1-ubyte"))?)?;
    make_dataset(&images, &labels, offset, count)
}

fn check_fit(widths: &[usize], data: &Dataset) -> Result<()> {
    let (first, last) = (widths[0], widths[widths.len() - 1]);
    if first != data.input_width() || last != data.one_hot.ncols() {
        return Err(Error::Shape {
            expected: vec![data.input_width(), data.one_hot.ncols()],
            actual: vec![first, last],
        });
    }
    Ok(())
}

fn create_out(s: &Settings) -> Result<&Path> {
    fs::create_dir_all(&s.out).map_err(|e| Error::io(&s.out, e))?;
    Ok(&s.out)
}

fn finish(s: &Settings, command: &str) -> Result<()> {
    s.manifest(command)
        .write(s.out.join(format!("manifest_{command}.txt")))
}

fn run_train(s: &Settings) -> Result<String> {
    let dir = s.data_dir()?;
    let train_set = load_mnist(dir, Split::Train, s.train_offset, s.train_size)?;
    let test_set = load_mnist(dir, Split::Test, s.test_offset, s.test_size)?;
    check_fit(&s.arch, &train_set)?;
    let net = Network::new(&s.arch, &s.init)?;
    let (net, metrics) = train(net, &train_set, &test_set, &s.train)?;
    let out = create_out(s)?;
    save_network(&net, out.join(NETWORK_FILE))?;
    let rows: Vec<_> = metrics
        .epochs
        .iter()
        .map(|e| TrainingCurveRow {
            epoch: e.epoch,
            train_loss: e.train_loss,
            test_error: e.test_error,
            seconds: if s.zero_time { 0.0 } else { e.seconds },
        })
        .collect();
    export_csv(CsvKind::TrainingCurve, &rows, out.join(CsvKind::TrainingCurve.file_name()))?;
    finish(s, "train")?;
    Ok(match metrics.last() {
        Some(last) => format!(
            "trained {} for {} epochs: train loss {:.4}, test error {:.4}",
            net.arch_string(),
            last.epoch,
            last.train_loss,
            last.test_error
        ),
        None => format!("trained {} for 0 epochs", net.arch_string()),
    })
}

fn run_eval(s: &Settings) -> Result<String> {
    let net = load_network(s.network_path()?)?;
    let test_set = load_mnist(s.data_dir()?, Split::Test, s.test_offset, s.test_size)?;
    check_fit(net.widths(), &test_set)?;
    let det = evaluate(&net, &test_set)?;
    let mut report = format!("deterministic test error {det:.4}");
    let out = create_out(s)?;
    if s.n_samples > 0 {
        let stats = ensemble_eval(&net, s.n_samples, &test_set, derive_seed(s.seed, "sampling"))?;
        let row = EnsembleRow {
            n_samples: s.n_samples,
            mean_error: stats.mean,
            std_error: stats.std,
        };
        export_csv(CsvKind::EnsembleEval, &[row], out.join(CsvKind::EnsembleEval.file_name()))?;
        report += &format!(
            "; ensemble of {} samples {:.4} +/- {:.4}",
            s.n_samples, stats.mean, stats.std
        );
    }
    finish(s, "eval")?;
    Ok(report)
}

fn run_sample(s: &Settings) -> Result<String> {
    let net = load_network(s.network_path()?)?;
    let out = create_out(s)?;
    let base = derive_seed(s.seed, "sampling");
    for i in 0..s.n_samples {
        let eff = sample_effective(&net, base.wrapping_add(i as u64));
        save_effective(&eff, out.join(format!("sample_{i:03}.saseff")))?;
    }
    finish(s, "sample")?;
    Ok(format!("wrote {} sampled networks", s.n_samples))
}

fn run_analyze(s: &Settings) -> Result<String> {
    let net = load_network(s.network_path()?)?;
    let out = create_out(s)?;

    let sparsity: Vec<_> = sparsity_profile(&net)
        .iter()
        .enumerate()
        .map(|(l, st)| SparsityRow {
            layer: l + 1,
            mean_pi: st.mean_pi,
            frac_pi_gt_099: st.frac_pi_gt_099,
        })
        .collect();
    export_csv(CsvKind::SparsityProfile, &sparsity, out.join(CsvKind::SparsityProfile.file_name()))?;

    let mut rng = rng::stream(s.seed, "entropy");
    let mut all_entropies = Vec::with_capacity(net.n_connections());
    let mut profile = Vec::new();
    for (l, layer) in net.layers().iter().enumerate() {
        let e = block_entropies(layer, s.entropy_samples, &mut rng);
        profile.push(EntropyProfileRow {
            layer: l + 1,
            mean_entropy_nats: e.sum() / e.len() as f64,
            samples: s.entropy_samples,
        });
        all_entropies.extend(e.iter().copied());
    }
    export_csv(CsvKind::EntropyProfile, &profile, out.join(CsvKind::EntropyProfile.file_name()))?;
    let eh = histogram_auto(&all_entropies, s.bins)?;
    let rows: Vec<_> = (0..eh.bins())
        .map(|b| {
            let (bin_left, bin_right) = eh.edges(b);
            EntropyHistogramRow {
                bin_left,
                bin_right,
                count: eh.counts[b],
            }
        })
        .collect();
    export_csv(CsvKind::EntropyHistogram, &rows, out.join(CsvKind::EntropyHistogram.file_name()))?;

    let values = |f: fn(&crate::sas::SaSLayer) -> &ndarray::Array2<f64>| -> Vec<f64> {
        net.layers().iter().flat_map(|l| f(l).iter().copied()).collect()
    };
    let pis = values(|l| l.pi());
    let xis = values(|l| l.xi());
    let ms = values(|l| l.m());
    let xi_max = xis.iter().copied().fold(0.0, f64::max);
    let hists = [
        ("pi", histogram(pis.iter().copied(), s.bins, (0.0, 1.0))?),
        (
            "xi",
            histogram(xis.iter().copied(), s.bins, (0.0, if xi_max > 0.0 { xi_max } else { 1.0 }))?,
        ),
        ("m", histogram_auto(&ms, s.bins)?),
    ];
    let mut rows = Vec::new();
    for (param, h) in &hists {
        for b in 0..h.bins() {
            let (bin_left, bin_right) = h.edges(b);
            rows.push(HyperparamHistogramRow {
                param: (*param).to_string(),
                bin_left,
                bin_right,
                count: h.counts[b],
            });
        }
    }
    export_csv(CsvKind::HyperparamHistogram, &rows, out.join(CsvKind::HyperparamHistogram.file_name()))?;

    let classes = classify_weights(&net, s.thresholds)?;
    let rows: Vec<_> = classes
        .counts
        .iter()
        .enumerate()
        .map(|(l, c)| {
            let (vip, uip, var) = c.fractions();
            WeightClassRow {
                layer: l + 1,
                vip_fraction: vip,
                uip_fraction: uip,
                var_fraction: var,
                tau_pi: s.thresholds.tau_pi,
                tau_xi: s.thresholds.tau_xi,
            }
        })
        .collect();
    export_csv(CsvKind::WeightClasses, &rows, out.join(CsvKind::WeightClasses.file_name()))?;

    finish(s, "analyze")?;
    let means: Vec<String> = profile.iter().map(|r| format!("{:.4}", r.mean_entropy_nats)).collect();
    let sp: Vec<String> = sparsity.iter().map(|r| format!("{:.4}", r.mean_pi)).collect();
    Ok(format!(
        "sparsity per block [{}]; entropy per block [{}]",
        sp.join(", "),
        means.join(", ")
    ))
}

fn run_perturb(s: &Settings) -> Result<String> {
    let net = load_network(s.network_path()?)?;
    let test_set = load_mnist(s.data_dir()?, Split::Test, s.test_offset, s.test_size)?;
    check_fit(net.widths(), &test_set)?;
    if s.layer > net.layers().len() {
        return Err(Error::Config(format!(
            "layer {} out of range: the network has {} blocks",
            s.layer,
            net.layers().len()
        )));
    }
    let classes = classify_weights(&net, s.thresholds)?;
    let seed = derive_seed(s.seed, "perturbation");
    let mut rows = Vec::new();
    for &target in &s.targets {
        for &fraction in &s.fractions {
            let mut spec = PerturbSpec::standard(target, fraction, s.layer - 1, seed);
            spec.baseline = s.baseline;
            let r = perturb_and_eval(&net, &classes, &spec, &test_set, s.trials)?;
            rows.push(PerturbationRow {
                target: target.as_str().to_string(),
                layer: s.layer,
                fraction,
                mean_error: r.stats.mean,
                std_error: r.stats.std,
                n_trials: s.trials,
            });
        }
    }
    let out = create_out(s)?;
    export_csv(CsvKind::PerturbationCurve, &rows, out.join(CsvKind::PerturbationCurve.file_name()))?;
    finish(s, "perturb")?;
    Ok(format!("wrote {} perturbation points", rows.len()))
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Train(_) => "train",
            Command::Eval(_) => "eval",
            Command::Sample(_) => "sample",
            Command::Analyze(_) => "analyze",
            Command::Perturb(_) => "perturb",
        }
    }

    fn settings(&self) -> Result<Settings> {
        let mut flags = Pairs::new();
        let common = match self {
            Command::Train(a) => {
                a.data.pairs(&mut flags);
                a.model.pairs(&mut flags);
                a.optim.pairs(&mut flags);
                &a.common
            }
            Command::Eval(a) => {
                a.data.pairs(&mut flags);
                push(&mut flags, "network", &a.network.network);
                push(&mut flags, "n-samples", &a.n_samples);
                &a.common
            }
            Command::Sample(a) => {
                push(&mut flags, "network", &a.network.network);
                push(&mut flags, "n-samples", &a.n_samples);
                &a.common
            }
            Command::Analyze(a) => {
                push(&mut flags, "network", &a.network.network);
                a.thresholds.pairs(&mut flags);
                push(&mut flags, "entropy-samples", &a.entropy_samples);
                push(&mut flags, "bins", &a.bins);
                &a.common
            }
            Command::Perturb(a) => {
                a.data.pairs(&mut flags);
                push(&mut flags, "network", &a.network.network);
                a.thresholds.pairs(&mut flags);
                push(&mut flags, "fractions", &a.fractions);
                push(&mut flags, "targets", &a.targets);
                push(&mut flags, "layer", &a.layer);
                push(&mut flags, "trials", &a.trials);
                push(&mut flags, "baseline", &a.baseline);
                &a.common
            }
        };
        common.pairs(&mut flags);
        Settings::resolve(common.config.as_deref(), &flags)
    }

    /// Runs the subcommand and returns a one-line summary.
    pub fn execute(&self) -> Result<String> {
        let s = self.settings()?;
        match self.name() {
            "train" => run_train(&s),
            "eval" => run_eval(&s),
            "sample" => run_sample(&s),
            "analyze" => run_analyze(&s),
            _ => run_perturb(&s),
        }
    }
}

/// Process exit code for an error: 1 usage/config, 2 data or file format,
/// 3 anything that went wrong while computing.
pub fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config(_) => 1,
        Error::Format(_)
        | Error::Truncated { .. }
        | Error::Data(_)
        | Error::Corruption(_)
        | Error::Shape { .. }
        | Error::Io { .. } => 2,
        Error::Dimension(_) | Error::Consistency(_) => 3,
    }
}

/// Parses `args`, runs the command, reports to stdout/stderr and returns the
/// exit code.
pub fn run<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match cli.command.execute() {
        Ok(summary) => {
            println!("{summary}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
