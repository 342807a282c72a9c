//! Command-line front end for the `hyperalign` crate.
//!
//! Settings resolve in three layers: built-in defaults, then an optional JSON
//! config file, then command-line flags.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;
use serde::{Deserialize, Serialize};

use hyperalign::datamodel::{
    generate_synthetic, is_standardized, load_dataset, read_csv_matrix, read_labels, save_dataset, LabeledDataset,
    SubjectData, SyntheticSpec,
};
use hyperalign::experiment::{run_sweep, ExperimentConfig, SweepGrid, SweepRow};
use hyperalign::mvpeval::{fold_rows, loso_evaluate, read_csv, write_csv, EvalReport, FoldRow, Method};
use hyperalign::trainer::{fit, save_train_result};

pub const REPORT_JSON: &str = "report.json";
pub const REPORT_CSV: &str = "report.csv";
pub const SWEEP_CSV: &str = "sweep.csv";

#[derive(Debug, Parser)]
#[command(name = "hyperalign", version, about = "Hyperalignment and LDHA on multi-subject response matrices")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Default, Args)]
pub struct GlobalArgs {
    /// JSON experiment config; flags override its fields.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for synthetic data.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Comma-separated methods: identity, classical, ldha.
    #[arg(long, global = true, value_delimiter = ',', value_parser = parse_method)]
    pub method: Option<Vec<Method>>,
    /// Worker threads for folds and sweep cells.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
}

fn parse_method(s: &str) -> std::result::Result<Method, String> {
    s.parse().map_err(|e: hyperalign::Error| e.to_string())
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic dataset.
    Generate(GenerateArgs),
    /// Convert per-subject CSV matrices into a dataset.
    ImportCsv(ImportArgs),
    /// Fit alignment maps and the template on a whole dataset.
    Align(DataArgs),
    /// Leave-one-subject-out evaluation of every requested method.
    Evaluate(DataArgs),
    /// Accuracy over a grid of TR and voxel counts.
    Sweep(SweepArgs),
    /// Summarize the reports found in a directory.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Default, Args)]
pub struct GenerateArgs {
    /// Number of subjects.
    #[arg(long)]
    pub subjects: Option<usize>,
    /// Time points per class.
    #[arg(long)]
    pub t_per_class: Option<usize>,
    #[arg(long)]
    pub classes: Option<usize>,
    /// Voxels per subject.
    #[arg(long)]
    pub voxels: Option<usize>,
    /// Standard deviation of the additive noise.
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Give every subject the same mixing matrix.
    #[arg(long)]
    pub shared_mixing: bool,
}

#[derive(Debug, Clone, Args)]
pub struct ImportArgs {
    /// One integer label per line, one line per row.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Subject matrices, rows = time points; ids come from the file stems.
    #[arg(required = true)]
    pub files: Vec<PathBuf>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct DataArgs {
    /// Dataset manifest; falls back to the config's dataset or synthetic spec.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Comma-separated TR counts, kept class-balanced.
    #[arg(long, value_delimiter = ',')]
    pub trs: Option<Vec<usize>>,
    /// Comma-separated voxel counts, ranked inside each fold.
    #[arg(long, value_delimiter = ',')]
    pub voxels: Option<Vec<usize>>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct ReportArgs {
    /// Directory holding report.json and/or sweep.csv; defaults to --out.
    pub dir: Option<PathBuf>,
}

/// `report.json`: the only output carrying a timestamp.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportFile {
    pub created_at: String,
    pub reports: Vec<EvalReport>,
}

pub fn default_synthetic() -> SyntheticSpec {
    SyntheticSpec {
        num_subjects: 6,
        t_per_class: 10,
        num_classes: 4,
        v: 60,
        noise_sigma: 1.0,
        seed: 0,
        shared_mixing: false,
    }
}

/// Defaults, then the config file, then flags.
pub fn resolve_config(global: &GlobalArgs) -> Result<ExperimentConfig> {
    let mut cfg = match &global.config {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = global.seed {
        cfg.seed = Some(seed);
    }
    if let Some(out) = &global.out {
        cfg.out = Some(out.clone());
    }
    if let Some(methods) = &global.method {
        cfg.methods = methods.clone();
    }
    if let Some(w) = global.workers {
        cfg.workers = Some(w);
    }
    if let (Some(seed), Some(spec)) = (cfg.seed, cfg.synthetic.as_mut()) {
        spec.seed = seed;
    }
    Ok(cfg)
}

fn out_dir(cfg: &ExperimentConfig) -> PathBuf {
    cfg.out.clone().unwrap_or_else(|| PathBuf::from("out"))
}

fn timestamp() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
}

fn load_input(args: &DataArgs, cfg: &ExperimentConfig) -> Result<LabeledDataset> {
    if let Some(path) = args.dataset.as_ref().or(cfg.dataset.as_ref()) {
        return load_dataset(path).with_context(|| format!("loading dataset {}", path.display()));
    }
    match &cfg.synthetic {
        Some(spec) => Ok(generate_synthetic(spec)?),
        None => bail!("no dataset: pass --dataset or set `dataset` or `synthetic` in the config"),
    }
}

fn generate_spec(args: &GenerateArgs, cfg: &ExperimentConfig) -> SyntheticSpec {
    let mut spec = cfg.synthetic.clone().unwrap_or_else(default_synthetic);
    if let Some(n) = args.subjects {
        spec.num_subjects = n;
    }
    if let Some(n) = args.t_per_class {
        spec.t_per_class = n;
    }
    if let Some(n) = args.classes {
        spec.num_classes = n;
    }
    if let Some(n) = args.voxels {
        spec.v = n;
    }
    if let Some(s) = args.sigma {
        spec.noise_sigma = s;
    }
    if args.shared_mixing {
        spec.shared_mixing = true;
    }
    if let Some(seed) = cfg.seed {
        spec.seed = seed;
    }
    spec
}

pub fn run(cli: Cli) -> Result<()> {
    let cfg = resolve_config(&cli.global)?;
    if let Some(n) = cfg.workers {
        if n == 0 {
            bail!("--workers must be at least 1");
        }
        // fails only if a pool already exists, which is harmless
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match &cli.command {
        Command::Generate(args) => cmd_generate(args, &cfg),
        Command::ImportCsv(args) => cmd_import(args, &cfg),
        Command::Align(args) => cmd_align(args, &cfg),
        Command::Evaluate(args) => cmd_evaluate(args, &cfg),
        Command::Sweep(args) => cmd_sweep(args, &cfg),
        Command::Report(args) => cmd_report(args, &cfg),
    }
}

fn cmd_generate(args: &GenerateArgs, cfg: &ExperimentConfig) -> Result<()> {
    let spec = generate_spec(args, cfg);
    let ds = generate_synthetic(&spec)?;
    let manifest = save_dataset(&ds, &out_dir(cfg))?;
    println!(
        "wrote {} subjects ({} x {}, {} classes, sigma {}) to {}",
        ds.num_subjects(),
        ds.t(),
        ds.v(),
        spec.num_classes,
        spec.noise_sigma,
        manifest.display()
    );
    Ok(())
}

fn cmd_import(args: &ImportArgs, cfg: &ExperimentConfig) -> Result<()> {
    let mut subjects = Vec::with_capacity(args.files.len());
    for path in &args.files {
        let m = read_csv_matrix(path)?;
        let id = path
            .file_stem()
            .and_then(|s| s.to_str())
            .with_context(|| format!("no usable file name in {}", path.display()))?;
        let standardized = is_standardized(&m, 1e-9);
        subjects.push(SubjectData::new(id, m, standardized)?);
    }
    let labels = args.labels.as_deref().map(read_labels).transpose()?;
    let ds = LabeledDataset::new(subjects, labels)?;
    let manifest = save_dataset(&ds, &out_dir(cfg))?;
    println!(
        "imported {} subjects ({} x {}) to {}",
        ds.num_subjects(),
        ds.t(),
        ds.v(),
        manifest.display()
    );
    Ok(())
}

fn cmd_align(args: &DataArgs, cfg: &ExperimentConfig) -> Result<()> {
    let ds = load_input(args, cfg)?;
    let mut solver = cfg.solver.clone();
    let aligning: Vec<Method> = cfg.methods.iter().copied().filter(|m| *m != Method::Identity).collect();
    match aligning.as_slice() {
        [] if cfg.methods.is_empty() => {}
        [] => bail!("align needs classical or ldha, not identity alone"),
        [m] => solver.mode = m.solver_mode().expect("filtered above"),
        _ => bail!("align fits one method at a time; pass a single --method"),
    }
    let res = fit(&ds, &solver, &cfg.sweep)?;
    let dir = out_dir(cfg);
    save_train_result(&res, &solver, &cfg.sweep, &dir, Some(timestamp()))?;
    for (i, v) in res.objective_trace.iter().enumerate() {
        println!("sweep {:>3}  mean isc {v:.6}", i + 1);
    }
    println!(
        "{} maps (k = {}) after {} sweeps, converged: {}; written to {}",
        res.maps.len(),
        res.template.k,
        res.sweeps,
        res.converged,
        dir.display()
    );
    Ok(())
}

fn cmd_evaluate(args: &DataArgs, cfg: &ExperimentConfig) -> Result<()> {
    if cfg.methods.is_empty() {
        bail!("no methods requested");
    }
    let ds = load_input(args, cfg)?;
    let mut reports = Vec::with_capacity(cfg.methods.len());
    for &m in &cfg.methods {
        info!("evaluating {m}");
        let r = loso_evaluate(&ds, &cfg.eval_config(m))?;
        println!(
            "{:<10} accuracy {:6.2} ± {:5.2}  auc {:6.2} ± {:5.2}  (chance {:.2})",
            m.as_str(),
            r.accuracy,
            r.accuracy_std,
            r.auc,
            r.auc_std,
            r.chance_level
        );
        reports.push(r);
    }
    let dir = out_dir(cfg);
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let file = ReportFile {
        created_at: timestamp(),
        reports,
    };
    let json_path = dir.join(REPORT_JSON);
    fs::write(&json_path, serde_json::to_string_pretty(&file)? + "\n")
        .with_context(|| format!("writing {}", json_path.display()))?;
    let csv_path = dir.join(REPORT_CSV);
    let rows = fold_rows(&file.reports);
    write_csv(&csv_path, &rows)?;
    let back: Vec<FoldRow> = read_csv(&csv_path)?;
    if back != rows {
        bail!("{} does not read back to the written rows", csv_path.display());
    }
    Ok(())
}

fn cmd_sweep(args: &SweepArgs, cfg: &ExperimentConfig) -> Result<()> {
    let ds = load_input(&args.data, cfg)?;
    let base = cfg.grids.clone().unwrap_or_default();
    let grid = SweepGrid {
        trs: args.trs.clone().unwrap_or(base.trs),
        voxels: args.voxels.clone().unwrap_or(base.voxels),
    };
    let rows = run_sweep(&ds, &grid, &cfg.methods, cfg)?;
    for r in &rows {
        println!(
            "tr {:>5}  voxels {:>6}  {:<10} acc {:6.2} ± {:5.2}  auc {:6.2}",
            r.tr,
            r.voxels,
            r.method.as_str(),
            r.mean_acc,
            r.std_acc,
            r.mean_auc
        );
    }
    let dir = out_dir(cfg);
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join(SWEEP_CSV);
    write_csv(&path, &rows)?;
    let back: Vec<SweepRow> = read_csv(&path)?;
    if back != rows {
        bail!("{} does not read back to the written rows", path.display());
    }
    Ok(())
}

fn cmd_report(args: &ReportArgs, cfg: &ExperimentConfig) -> Result<()> {
    let dir = args.dir.clone().unwrap_or_else(|| out_dir(cfg));
    let mut found = false;
    let json_path = dir.join(REPORT_JSON);
    if json_path.exists() {
        found = true;
        let text = fs::read_to_string(&json_path).with_context(|| format!("reading {}", json_path.display()))?;
        let file: ReportFile =
            serde_json::from_str(&text).with_context(|| format!("parsing {}", json_path.display()))?;
        println!("{} (created {})", json_path.display(), file.created_at);
        print_reports(&file.reports);
    }
    let sweep_path = dir.join(SWEEP_CSV);
    if sweep_path.exists() {
        found = true;
        let rows: Vec<SweepRow> = read_csv(&sweep_path)?;
        println!("{}: {} rows", sweep_path.display(), rows.len());
        for r in &rows {
            println!("  tr {:>5}  voxels {:>6}  {:<10} {:6.2}", r.tr, r.voxels, r.method.as_str(), r.mean_acc);
        }
    }
    if !found {
        bail!("neither {REPORT_JSON} nor {SWEEP_CSV} found in {}", dir.display());
    }
    Ok(())
}

fn print_reports(reports: &[EvalReport]) {
    println!("  {:<10} {:>15} {:>15} {:>9}", "method", "accuracy", "auc", "isc");
    for r in reports {
        let isc = r.mean_train_isc.map_or_else(|| "-".to_string(), |v| format!("{v:.4}"));
        println!(
            "  {:<10} {:>7.2} ± {:<5.2} {:>7.2} ± {:<5.2} {:>9}",
            r.method.as_str(),
            r.accuracy,
            r.accuracy_std,
            r.auc,
            r.auc_std,
            isc
        );
    }
}

/// Reads `report.json` from `dir`.
pub fn read_report(dir: &Path) -> Result<ReportFile> {
    let path = dir.join(REPORT_JSON);
    let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    Ok(serde_json::from_str(&text)?)
}
