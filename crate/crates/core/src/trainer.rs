//! Multi-subject training: iterative alignment sweeps, the shared template
//! and label-free alignment of unseen subjects to that template.

use std::fs;
use std::path::Path;

use log::debug;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::aligncore::{align_to_target, build_alpha, mean_pairwise_isc, solve_pair, AlignmentMap, SolverConfig, SolverMode};
use crate::datamodel::{read_matrix, write_matrix, LabeledDataset, SubjectData};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepStrategy {
    /// Re-solve each subject against the leave-one-out mean of the others.
    #[default]
    Template,
    /// Solve every pair `(i, ℓ > i)`; the latest solution for a subject wins.
    Pairwise,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepConfig {
    pub max_sweeps: usize,
    /// Relative Frobenius change of the mapped data that counts as converged.
    pub tol: f64,
    pub strategy: SweepStrategy,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            max_sweeps: 20,
            tol: 1e-4,
            strategy: SweepStrategy::Template,
        }
    }
}

/// The shared space: mean of the mapped training subjects, stored
/// un-standardized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Template {
    pub g: DMatrix<f64>,
    pub k: usize,
    pub source_subject_ids: Vec<String>,
    pub solver_mode: SolverMode,
}

impl Template {
    pub fn from_mapped(mapped: &[DMatrix<f64>], ids: Vec<String>, mode: SolverMode) -> Result<Self> {
        let first = mapped.first().ok_or_else(|| Error::invalid("template needs at least one subject"))?;
        let mut g = DMatrix::zeros(first.nrows(), first.ncols());
        for m in mapped {
            g += m;
        }
        g /= mapped.len() as f64;
        Ok(Template {
            k: g.ncols(),
            g,
            source_subject_ids: ids,
            solver_mode: mode,
        })
    }
}

#[derive(Debug, Clone)]
pub struct TrainResult {
    pub maps: Vec<AlignmentMap>,
    pub template: Template,
    pub sweeps: usize,
    /// Mean pairwise ISC of the mapped data after each sweep.
    pub objective_trace: Vec<f64>,
    pub converged: bool,
}

impl TrainResult {
    pub fn mapped(&self, train: &LabeledDataset) -> Result<Vec<DMatrix<f64>>> {
        if train.num_subjects() != self.maps.len() {
            return Err(Error::invalid("dataset and maps disagree on the number of subjects"));
        }
        train.subjects().iter().zip(&self.maps).map(|(s, m)| m.apply(s.x())).collect()
    }

    pub fn final_isc(&self) -> Option<f64> {
        self.objective_trace.last().copied()
    }
}

fn relative_change(new: &DMatrix<f64>, old: &DMatrix<f64>) -> f64 {
    let norm = new.norm();
    let diff = (new - old).norm();
    if norm == 0.0 {
        if diff == 0.0 { 0.0 } else { f64::INFINITY }
    } else {
        diff / norm
    }
}

/// Leave-one-out mean of the mapped subjects, re-standardized.
fn pseudo_subject(mapped: &[DMatrix<f64>], skip: usize) -> Result<SubjectData> {
    let mut sum = DMatrix::zeros(mapped[0].nrows(), mapped[0].ncols());
    for (l, m) in mapped.iter().enumerate() {
        if l != skip {
            sum += m;
        }
    }
    sum /= (mapped.len() - 1) as f64;
    SubjectData::standardized("loo-mean", &sum)
}

/// Fits one map per training subject and builds the template.
///
/// Maps start at the truncated identity. A sweep visits subjects in index
/// order and updates each map in place, so later subjects see the earlier
/// updates of the same sweep.
pub fn fit(train: &LabeledDataset, cfg: &SolverConfig, sweep_cfg: &SweepConfig) -> Result<TrainResult> {
    cfg.validate()?;
    if train.num_subjects() < 2 {
        return Err(Error::invalid(format!("training needs at least 2 subjects, got {}", train.num_subjects())));
    }
    if !(sweep_cfg.tol >= 0.0) {
        return Err(Error::invalid("sweep tolerance must be non-negative"));
    }
    let train = train.standardized()?;
    let (t, v) = (train.t(), train.v());
    let limit = t.min(v);
    let k = cfg.k.unwrap_or(limit);
    if k == 0 || k > limit {
        return Err(Error::invalid(format!("k = {k} must lie in 1..={limit}")));
    }
    let cfg = SolverConfig { k: Some(k), ..cfg.clone() };
    let alpha = match cfg.mode {
        SolverMode::Ldha => {
            let labels = train
                .labels()
                .ok_or_else(|| Error::invalid("ldha training needs labels"))?;
            Some(build_alpha(labels))
        }
        SolverMode::Classical => None,
    };
    let subjects = train.subjects();
    let mut maps: Vec<AlignmentMap> = (0..subjects.len())
        .map(|_| AlignmentMap::truncated_identity(v, k, &cfg))
        .collect();
    let mut mapped: Vec<DMatrix<f64>> = subjects.iter().zip(&maps).map(|(s, m)| s.x() * &m.r).collect();

    let mut trace = Vec::new();
    let mut converged = false;
    let mut sweeps = 0;
    while sweeps < sweep_cfg.max_sweeps {
        let previous = mapped.clone();
        match sweep_cfg.strategy {
            SweepStrategy::Template => {
                for i in 0..subjects.len() {
                    let target = pseudo_subject(&mapped, i)?;
                    let map = align_to_target(&subjects[i], &target, alpha.as_ref(), &cfg)?;
                    mapped[i] = subjects[i].x() * &map.r;
                    maps[i] = map;
                }
            }
            SweepStrategy::Pairwise => {
                for i in 0..subjects.len() {
                    for l in (i + 1)..subjects.len() {
                        let (ri, rl) = solve_pair(&subjects[i], &subjects[l], alpha.as_ref(), &cfg)?;
                        mapped[i] = subjects[i].x() * &ri.r;
                        mapped[l] = subjects[l].x() * &rl.r;
                        maps[i] = ri;
                        maps[l] = rl;
                    }
                }
            }
        }
        sweeps += 1;
        let change = mapped
            .iter()
            .zip(&previous)
            .map(|(n, o)| relative_change(n, o))
            .fold(0.0, f64::max);
        let objective = mean_pairwise_isc(&mapped)?;
        debug!("sweep {sweeps}: mean isc {objective:.6}, max relative change {change:.3e}");
        trace.push(objective);
        if change <= sweep_cfg.tol {
            converged = true;
            break;
        }
    }

    let ids = subjects.iter().map(|s| s.subject_id().to_string()).collect();
    let template = Template::from_mapped(&mapped, ids, cfg.mode)?;
    Ok(TrainResult {
        maps,
        template,
        sweeps,
        objective_trace: trace,
        converged,
    })
}

/// Aligns an unseen subject to the template with the classical solver.
/// Labels are never involved.
pub fn align_test_subject(xhat: &SubjectData, template: &Template, cfg: &SolverConfig) -> Result<AlignmentMap> {
    if xhat.t() != template.g.nrows() {
        return Err(Error::invalid(format!(
            "test subject has T = {}, template has T = {}",
            xhat.t(),
            template.g.nrows()
        )));
    }
    let xhat = xhat.to_standardized()?;
    let g = SubjectData::standardized("template", &template.g)?;
    let cfg = SolverConfig {
        mode: SolverMode::Classical,
        k: Some(template.k.min(xhat.t()).min(xhat.v())),
        ..cfg.clone()
    };
    align_to_target(&xhat, &g, None, &cfg)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SidecarSubject {
    pub id: String,
    pub map_file: String,
    pub canonical_corrs: Vec<f64>,
}

/// JSON description written next to the map and template containers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSidecar {
    pub solver: SolverConfig,
    pub sweep: SweepConfig,
    pub sweeps: usize,
    pub converged: bool,
    pub objective_trace: Vec<f64>,
    pub k: usize,
    pub template_file: String,
    pub subjects: Vec<SidecarSubject>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub created_at: Option<String>,
}

pub const SIDECAR_FILE: &str = "train.json";

pub fn save_train_result(
    result: &TrainResult,
    cfg: &SolverConfig,
    sweep_cfg: &SweepConfig,
    dir: &Path,
    created_at: Option<String>,
) -> Result<TrainSidecar> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let template_file = "template.bin".to_string();
    write_matrix(&dir.join(&template_file), &result.template.g)?;
    let mut subjects = Vec::with_capacity(result.maps.len());
    for (i, (id, map)) in result.template.source_subject_ids.iter().zip(&result.maps).enumerate() {
        let map_file = format!("map_{i:03}.bin");
        write_matrix(&dir.join(&map_file), &map.r)?;
        subjects.push(SidecarSubject {
            id: id.clone(),
            map_file,
            canonical_corrs: map.canonical_corrs.clone(),
        });
    }
    let sidecar = TrainSidecar {
        solver: SolverConfig {
            mode: result.template.solver_mode,
            ..cfg.clone()
        },
        sweep: sweep_cfg.clone(),
        sweeps: result.sweeps,
        converged: result.converged,
        objective_trace: result.objective_trace.clone(),
        k: result.template.k,
        template_file,
        subjects,
        created_at,
    };
    let path = dir.join(SIDECAR_FILE);
    fs::write(&path, serde_json::to_string_pretty(&sidecar)? + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(sidecar)
}

pub fn load_train_result(dir: &Path) -> Result<(TrainResult, TrainSidecar)> {
    let path = dir.join(SIDECAR_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let sidecar: TrainSidecar =
        serde_json::from_str(&text).map_err(|e| Error::schema(format!("{}: {e}", path.display())))?;
    let g = read_matrix(&dir.join(&sidecar.template_file))?;
    if g.ncols() != sidecar.k {
        return Err(Error::schema(format!("template has {} columns, sidecar says k = {}", g.ncols(), sidecar.k)));
    }
    let mut maps = Vec::with_capacity(sidecar.subjects.len());
    for s in &sidecar.subjects {
        let r = read_matrix(&dir.join(&s.map_file))?;
        if r.ncols() != sidecar.k {
            return Err(Error::schema(format!("map for {} has {} columns, expected {}", s.id, r.ncols(), sidecar.k)));
        }
        maps.push(AlignmentMap {
            k: r.ncols(),
            r,
            ridge: sidecar.solver.ridge,
            floor: sidecar.solver.floor,
            canonical_corrs: s.canonical_corrs.clone(),
        });
    }
    let template = Template {
        k: g.ncols(),
        g,
        source_subject_ids: sidecar.subjects.iter().map(|s| s.id.clone()).collect(),
        solver_mode: sidecar.solver.mode,
    };
    let result = TrainResult {
        maps,
        template,
        sweeps: sidecar.sweeps,
        objective_trace: sidecar.objective_trace.clone(),
        converged: sidecar.converged,
    };
    Ok((result, sidecar))
}
