//! Classification on aligned data and the leave-one-subject-out harness.
//!
//! The classifier is a closed-form one-vs-rest ridge regression rather than a
//! ν-SVM; the evaluation protocol around it is unchanged.

mod classifier;
mod metrics;

pub use classifier::{predict, train_classifier, ClassifierConfig, LinearModel};
pub use metrics::{accuracy, auc_binary, auc_macro, MacroAuc};

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aligncore::{SolverConfig, SolverMode};
use crate::datamodel::{standardize, LabeledDataset, SubjectData};
use crate::error::{Error, Result};
use crate::trainer::{align_test_subject, fit, SweepConfig};

/// Alignment applied before classification.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// No functional alignment: raw voxels as features.
    Identity,
    Classical,
    Ldha,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Identity, Method::Classical, Method::Ldha];

    pub fn solver_mode(self) -> Option<SolverMode> {
        match self {
            Method::Identity => None,
            Method::Classical => Some(SolverMode::Classical),
            Method::Ldha => Some(SolverMode::Ldha),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Identity => "identity",
            Method::Classical => "classical",
            Method::Ldha => "ldha",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "identity" => Ok(Method::Identity),
            "classical" | "ha" => Ok(Method::Classical),
            "ldha" => Ok(Method::Ldha),
            other => Err(Error::Config(format!("unknown method {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub method: Method,
    /// `mode` is taken from `method`.
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub sweep: SweepConfig,
    #[serde(default)]
    pub classifier: ClassifierConfig,
    /// Keep only this many top-ranked voxels, ranked per fold on the
    /// training subjects.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub voxels: Option<usize>,
}

impl EvalConfig {
    pub fn new(method: Method, solver: SolverConfig, sweep: SweepConfig, classifier: ClassifierConfig) -> Self {
        let solver = match method.solver_mode() {
            Some(mode) => solver.with_mode(mode),
            None => solver,
        };
        EvalConfig {
            method,
            solver,
            sweep,
            classifier,
            voxels: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub held_out_subject_id: String,
    pub accuracy: f64,
    pub auc: f64,
    /// Mean pairwise ISC of the mapped training subjects; absent for identity.
    pub train_isc: Option<f64>,
    pub sweeps: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: Method,
    /// Mean over folds, in percent.
    pub accuracy: f64,
    /// Sample standard deviation over folds.
    pub accuracy_std: f64,
    pub auc: f64,
    pub auc_std: f64,
    pub mean_train_isc: Option<f64>,
    /// `100 / num_classes`, for annotation only.
    pub chance_level: f64,
    pub per_fold: Vec<FoldResult>,
    pub config: EvalConfig,
}

pub(crate) fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (mean, std)
}

fn stack_rows(blocks: &[DMatrix<f64>]) -> DMatrix<f64> {
    let rows = blocks.iter().map(|b| b.nrows()).sum();
    let cols = blocks.first().map_or(0, |b| b.ncols());
    let mut out = DMatrix::zeros(rows, cols);
    let mut at = 0;
    for b in blocks {
        out.rows_mut(at, b.nrows()).copy_from(b);
        at += b.nrows();
    }
    out
}

/// Train on `train`, return features for both sides plus training stats.
/// `held_out` carries data only.
fn fold_features(
    train: &LabeledDataset,
    held_out: &SubjectData,
    cfg: &EvalConfig,
) -> Result<(DMatrix<f64>, DMatrix<f64>, Option<f64>, usize, bool)> {
    match cfg.method.solver_mode() {
        None => {
            let blocks: Vec<_> = train.subjects().iter().map(|s| s.x().clone()).collect();
            Ok((stack_rows(&blocks), held_out.x().clone(), None, 0, true))
        }
        Some(mode) => {
            let solver = cfg.solver.with_mode(mode);
            let res = fit(train, &solver, &cfg.sweep)?;
            let blocks = res
                .mapped(train)?
                .iter()
                .map(standardize)
                .collect::<Result<Vec<_>>>()?;
            let test_map = align_test_subject(held_out, &res.template, &solver)?;
            let test = standardize(&test_map.apply(held_out.x())?)?;
            Ok((stack_rows(&blocks), test, res.final_isc(), res.sweeps, res.converged))
        }
    }
}

fn run_fold(ds: &LabeledDataset, fold: usize, cfg: &EvalConfig) -> Result<FoldResult> {
    let labels = ds.labels().expect("checked by caller");
    let (mut train, mut held_out) = ds.split_out(fold)?;
    if let Some(n) = cfg.voxels {
        let mut cols: Vec<usize> = train.rank_voxels().into_iter().take(n).collect();
        cols.sort_unstable();
        let rows: Vec<usize> = (0..train.t()).collect();
        train = train.select(&rows, &cols)?;
        held_out = SubjectData::standardized(held_out.subject_id(), &held_out.x().select_columns(&cols))?;
    }
    let (train_x, test_x, train_isc, sweeps, converged) = fold_features(&train, &held_out, cfg)?;
    let train_y: Vec<usize> = (0..train.num_subjects())
        .flat_map(|_| labels.as_slice().iter().copied())
        .collect();
    let model = train_classifier(&train_x, &train_y, labels.num_classes(), &cfg.classifier)?;
    let (pred, scores) = predict(&model, &test_x)?;
    Ok(FoldResult {
        held_out_subject_id: held_out.subject_id().to_string(),
        accuracy: accuracy(&pred, labels.as_slice())?,
        auc: auc_macro(&scores, labels.as_slice())?.auc,
        train_isc,
        sweeps,
        converged,
    })
}

/// Leave-one-subject-out evaluation. Each fold trains alignment and the
/// classifier on the remaining subjects; the held-out subject is aligned
/// without its labels, which are used only for scoring.
pub fn loso_evaluate(ds: &LabeledDataset, cfg: &EvalConfig) -> Result<EvalReport> {
    if ds.num_subjects() < 3 {
        return Err(Error::invalid(format!(
            "leave-one-subject-out needs at least 3 subjects, got {}",
            ds.num_subjects()
        )));
    }
    let labels = ds
        .labels()
        .ok_or_else(|| Error::invalid("evaluation needs a labeled dataset"))?;
    if let Some(n) = cfg.voxels {
        if n == 0 || n > ds.v() {
            return Err(Error::Config(format!("voxel count {n} must lie in 1..={}", ds.v())));
        }
    }
    let cfg = EvalConfig {
        voxels: cfg.voxels,
        ..EvalConfig::new(cfg.method, cfg.solver.clone(), cfg.sweep.clone(), cfg.classifier.clone())
    };
    let ds = ds.standardized()?;
    let per_fold = (0..ds.num_subjects())
        .into_par_iter()
        .map(|fold| run_fold(&ds, fold, &cfg))
        .collect::<Result<Vec<_>>>()?;

    let accs: Vec<f64> = per_fold.iter().map(|f| f.accuracy).collect();
    let aucs: Vec<f64> = per_fold.iter().map(|f| f.auc).collect();
    let (accuracy, accuracy_std) = mean_std(&accs);
    let (auc, auc_std) = mean_std(&aucs);
    let iscs: Vec<f64> = per_fold.iter().filter_map(|f| f.train_isc).collect();
    let mean_train_isc = (!iscs.is_empty()).then(|| iscs.iter().sum::<f64>() / iscs.len() as f64);
    Ok(EvalReport {
        method: cfg.method,
        accuracy,
        accuracy_std,
        auc,
        auc_std,
        mean_train_isc,
        chance_level: 100.0 / labels.num_classes() as f64,
        per_fold,
        config: cfg,
    })
}

/// One CSV line per fold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldRow {
    pub fold: usize,
    pub subject: String,
    pub method: Method,
    pub accuracy: f64,
    pub auc: f64,
}

pub fn fold_rows(reports: &[EvalReport]) -> Vec<FoldRow> {
    reports
        .iter()
        .flat_map(|r| {
            r.per_fold.iter().enumerate().map(move |(i, f)| FoldRow {
                fold: i,
                subject: f.held_out_subject_id.clone(),
                method: r.method,
                accuracy: f.accuracy,
                auc: f.auc,
            })
        })
        .collect()
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Config(format!("{other:?}")),
    })?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::schema(format!("{}: {other:?}", path.display())),
    })?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}
