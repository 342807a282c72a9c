//! Experiment configuration and the TR × voxel sweep.

use std::path::PathBuf;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aligncore::SolverConfig;
use crate::datamodel::{LabelVector, LabeledDataset, SyntheticSpec};
use crate::error::{Error, Result};
use crate::mvpeval::{loso_evaluate, mean_std, ClassifierConfig, EvalConfig, EvalReport, Method};
use crate::trainer::SweepConfig;

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SweepGrid {
    pub trs: Vec<usize>,
    pub voxels: Vec<usize>,
}

/// Everything a CLI run needs. Every field is optional in the JSON file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub dataset: Option<PathBuf>,
    pub synthetic: Option<SyntheticSpec>,
    pub solver: SolverConfig,
    pub sweep: SweepConfig,
    pub classifier: ClassifierConfig,
    pub grids: Option<SweepGrid>,
    pub methods: Vec<Method>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub workers: Option<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            dataset: None,
            synthetic: None,
            solver: SolverConfig::default(),
            sweep: SweepConfig::default(),
            classifier: ClassifierConfig::default(),
            grids: None,
            methods: Method::ALL.to_vec(),
            out: None,
            seed: None,
            workers: None,
        }
    }
}

impl ExperimentConfig {
    pub fn eval_config(&self, method: Method) -> EvalConfig {
        EvalConfig::new(method, self.solver.clone(), self.sweep.clone(), self.classifier.clone())
    }
}

/// One row of the long-format sweep table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub tr: usize,
    pub voxels: usize,
    pub method: Method,
    pub mean_acc: f64,
    pub std_acc: f64,
    pub mean_auc: f64,
}

impl SweepRow {
    fn from_report(tr: usize, voxels: usize, r: &EvalReport) -> Self {
        SweepRow {
            tr,
            voxels,
            method: r.method,
            mean_acc: r.accuracy,
            std_acc: r.accuracy_std,
            mean_auc: r.auc,
        }
    }
}

/// The first `tr_count / C` rows of every class, in row order.
pub fn stratified_rows(labels: &LabelVector, tr_count: usize) -> Result<Vec<usize>> {
    let c = labels.num_classes();
    if tr_count < c || tr_count > labels.len() {
        return Err(Error::Config(format!(
            "TR count {tr_count} must lie in {c}..={} (one row per class at least)",
            labels.len()
        )));
    }
    let quota = tr_count / c;
    if let Some((class, n)) = labels.class_counts().iter().enumerate().find(|(_, n)| **n < quota) {
        return Err(Error::Config(format!(
            "class {class} has {n} time points, TR count {tr_count} asks for {quota}"
        )));
    }
    let mut taken = vec![0; c];
    let mut rows = Vec::with_capacity(quota * c);
    for (t, &y) in labels.as_slice().iter().enumerate() {
        if taken[y] < quota {
            taken[y] += 1;
            rows.push(t);
        }
    }
    Ok(rows)
}

/// Keeps a stratified TR prefix of every subject.
pub fn restrict_trs(ds: &LabeledDataset, tr_count: usize) -> Result<LabeledDataset> {
    let labels = ds
        .labels()
        .ok_or_else(|| Error::Config("sweeps need a labeled dataset".into()))?;
    let rows = stratified_rows(labels, tr_count)?;
    let cols: Vec<usize> = (0..ds.v()).collect();
    ds.select(&rows, &cols)
}

fn validate_grid(ds: &LabeledDataset, grid: &SweepGrid, methods: &[Method]) -> Result<()> {
    if grid.trs.is_empty() || grid.voxels.is_empty() {
        return Err(Error::Config("sweep grids must be non-empty".into()));
    }
    if methods.is_empty() {
        return Err(Error::Config("no methods requested".into()));
    }
    if let Some(tr) = grid.trs.iter().find(|&&tr| tr > ds.t()) {
        return Err(Error::Config(format!("TR count {tr} exceeds dataset T = {}", ds.t())));
    }
    if let Some(v) = grid.voxels.iter().find(|&&v| v > ds.v()) {
        return Err(Error::Config(format!("voxel count {v} exceeds dataset V = {}", ds.v())));
    }
    Ok(())
}

/// Runs every `(tr, voxels, method)` cell. Cells may run concurrently; rows
/// come back in grid order. Voxels are ranked inside each fold on the
/// training subjects only. A configured `k` is clamped to each cell's
/// `min(T, V)`.
pub fn run_sweep(ds: &LabeledDataset, grid: &SweepGrid, methods: &[Method], base: &ExperimentConfig) -> Result<Vec<SweepRow>> {
    validate_grid(ds, grid, methods)?;
    let cells: Vec<(usize, usize, Method)> = grid
        .trs
        .iter()
        .flat_map(|&tr| grid.voxels.iter().flat_map(move |&v| methods.iter().map(move |&m| (tr, v, m))))
        .collect();
    cells
        .par_iter()
        .map(|&(tr, voxels, method)| {
            let sub = restrict_trs(ds, tr)?;
            let mut cfg = base.eval_config(method);
            cfg.voxels = Some(voxels);
            cfg.solver.k = cfg.solver.k.map(|k| k.min(sub.t()).min(voxels));
            let report = loso_evaluate(&sub, &cfg)?;
            Ok(SweepRow::from_report(sub.t(), voxels, &report))
        })
        .collect()
}

/// Folds per-fold accuracies of several reports into a single mean/std pair.
pub fn summarize(reports: &[EvalReport]) -> Vec<(Method, f64, f64)> {
    reports
        .iter()
        .map(|r| {
            let accs: Vec<f64> = r.per_fold.iter().map(|f| f.accuracy).collect();
            let (m, s) = mean_std(&accs);
            (r.method, m, s)
        })
        .collect()
}
