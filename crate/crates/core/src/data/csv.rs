//! CSV export with fixed schemas.
//!
//! Reals are written in scientific notation with 17 significant digits,
//! which round-trips every `f64` and does not depend on the locale.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CsvKind {
    TrainingCurve,
    SparsityProfile,
    EntropyProfile,
    HyperparamHistogram,
    EntropyHistogram,
    PerturbationCurve,
    EnsembleEval,
    WeightClasses,
}

impl CsvKind {
    pub fn header(self) -> &'static str {
        match self {
            Self::TrainingCurve => "epoch,train_loss,test_error,seconds",
            Self::SparsityProfile => "layer,mean_pi,frac_pi_gt_099",
            Self::EntropyProfile => "layer,mean_entropy_nats,B",
            Self::HyperparamHistogram => "param,bin_left,bin_right,count",
            Self::EntropyHistogram => "bin_left,bin_right,count",
            Self::PerturbationCurve => "target,layer,fraction,mean_error,std_error,n_trials",
            Self::EnsembleEval => "n_samples,mean_error,std_error",
            Self::WeightClasses => "layer,vip_fraction,uip_fraction,var_fraction,tau_pi,tau_xi",
        }
    }

    /// Conventional file name inside an output directory.
    pub fn file_name(self) -> &'static str {
        match self {
            Self::TrainingCurve => "training_curve.csv",
            Self::SparsityProfile => "sparsity_profile.csv",
            Self::EntropyProfile => "entropy_profile.csv",
            Self::HyperparamHistogram => "hyperparam_histogram.csv",
            Self::EntropyHistogram => "entropy_histogram.csv",
            Self::PerturbationCurve => "perturbation_curve.csv",
            Self::EnsembleEval => "ensemble_eval.csv",
            Self::WeightClasses => "weight_classes.csv",
        }
    }
}

fn real(x: f64) -> String {
    format!("{x:.16e}")
}

/// A row type bound to one schema.
pub trait CsvRecord {
    const KIND: CsvKind;
    fn fields(&self) -> Vec<String>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingCurveRow {
    pub epoch: usize,
    pub train_loss: f64,
    pub test_error: f64,
    pub seconds: f64,
}

impl CsvRecord for TrainingCurveRow {
    const KIND: CsvKind = CsvKind::TrainingCurve;
    fn fields(&self) -> Vec<String> {
        vec![
            self.epoch.to_string(),
            real(self.train_loss),
            real(self.test_error),
            real(self.seconds),
        ]
    }
}

/// `layer` is the 1-based block index (block `l` feeds layer `l + 1`).
#[derive(Debug, Clone, PartialEq)]
pub struct SparsityRow {
    pub layer: usize,
    pub mean_pi: f64,
    pub frac_pi_gt_099: f64,
}

impl CsvRecord for SparsityRow {
    const KIND: CsvKind = CsvKind::SparsityProfile;
    fn fields(&self) -> Vec<String> {
        vec![self.layer.to_string(), real(self.mean_pi), real(self.frac_pi_gt_099)]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EntropyProfileRow {
    pub layer: usize,
    pub mean_entropy_nats: f64,
    pub samples: usize,
}

impl CsvRecord for EntropyProfileRow {
    const KIND: CsvKind = CsvKind::EntropyProfile;
    fn fields(&self) -> Vec<String> {
        vec![
            self.layer.to_string(),
            real(self.mean_entropy_nats),
            self.samples.to_string(),
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HyperparamHistogramRow {
    pub param: String,
    pub bin_left: f64,
    pub bin_right: f64,
    pub count: u64,
}

impl CsvRecord for HyperparamHistogramRow {
    const KIND: CsvKind = CsvKind::HyperparamHistogram;
    fn fields(&self) -> Vec<String> {
        vec![
            self.param.clone(),
            real(self.bin_left),
            real(self.bin_right),
            self.count.to_string(),
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EntropyHistogramRow {
    pub bin_left: f64,
    pub bin_right: f64,
    pub count: u64,
}

impl CsvRecord for EntropyHistogramRow {
    const KIND: CsvKind = CsvKind::EntropyHistogram;
    fn fields(&self) -> Vec<String> {
        vec![real(self.bin_left), real(self.bin_right), self.count.to_string()]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationRow {
    pub target: String,
    pub layer: usize,
    pub fraction: f64,
    pub mean_error: f64,
    pub std_error: f64,
    pub n_trials: usize,
}

impl CsvRecord for PerturbationRow {
    const KIND: CsvKind = CsvKind::PerturbationCurve;
    fn fields(&self) -> Vec<String> {
        vec![
            self.target.clone(),
            self.layer.to_string(),
            real(self.fraction),
            real(self.mean_error),
            real(self.std_error),
            self.n_trials.to_string(),
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleRow {
    pub n_samples: usize,
    pub mean_error: f64,
    pub std_error: f64,
}

impl CsvRecord for EnsembleRow {
    const KIND: CsvKind = CsvKind::EnsembleEval;
    fn fields(&self) -> Vec<String> {
        vec![self.n_samples.to_string(), real(self.mean_error), real(self.std_error)]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightClassRow {
    pub layer: usize,
    pub vip_fraction: f64,
    pub uip_fraction: f64,
    pub var_fraction: f64,
    pub tau_pi: f64,
    pub tau_xi: f64,
}

impl CsvRecord for WeightClassRow {
    const KIND: CsvKind = CsvKind::WeightClasses;
    fn fields(&self) -> Vec<String> {
        vec![
            self.layer.to_string(),
            real(self.vip_fraction),
            real(self.uip_fraction),
            real(self.var_fraction),
            real(self.tau_pi),
            real(self.tau_xi),
        ]
    }
}

/// Renders rows under their schema header, one record per line.
pub fn render_csv<R: CsvRecord>(rows: &[R]) -> String {
    let mut out = String::new();
    out.push_str(R::KIND.header());
    out.push('\n');
    for row in rows {
        let _ = writeln!(out, "{}", row.fields().join(","));
    }
    out
}

pub fn export_csv<R: CsvRecord>(kind: CsvKind, rows: &[R], path: impl AsRef<Path>) -> Result<()> {
    if kind != R::KIND {
        return Err(Error::Config(format!(
            "rows of kind {:?} cannot be written as {kind:?}",
            R::KIND
        )));
    }
    let path = path.as_ref();
    fs::write(path, render_csv(rows)).map_err(|e| Error::io(path, e))
}
