//! End-to-end behavior of the training and evaluation pipeline on
//! synthetic data.

use hyperalign::aligncore::{mapped_isc, mean_pairwise_isc, solve_pair, SolverConfig, SolverMode};
use hyperalign::datamodel::{generate_synthetic, LabeledDataset, SyntheticSpec};
use hyperalign::experiment::{run_sweep, ExperimentConfig, SweepGrid};
use hyperalign::mvpeval::{loso_evaluate, EvalConfig, Method};
use hyperalign::trainer::{fit, SweepConfig};

fn spec(subjects: usize, t_per_class: usize, classes: usize, v: usize, sigma: f64, seed: u64) -> SyntheticSpec {
    SyntheticSpec {
        num_subjects: subjects,
        t_per_class,
        num_classes: classes,
        v,
        noise_sigma: sigma,
        seed,
        shared_mixing: false,
    }
}

fn solver(k: usize) -> SolverConfig {
    SolverConfig {
        k: Some(k),
        ..SolverConfig::default()
    }
}

fn eval(ds: &LabeledDataset, method: Method, k: usize) -> f64 {
    let cfg = EvalConfig::new(method, solver(k), SweepConfig::default(), Default::default());
    loso_evaluate(ds, &cfg).unwrap().accuracy
}

#[test]
fn noiseless_pairs_align_exactly() {
    let ds = generate_synthetic(&spec(5, 4, 4, 30, 0.0, 21)).unwrap();
    let cfg = SolverConfig {
        ridge: 0.0,
        k: Some(3),
        ..SolverConfig::classical()
    };
    let s = ds.subjects();
    for j in 1..s.len() {
        let (ri, rj) = solve_pair(&s[0], &s[j], None, &cfg).unwrap();
        let got = mapped_isc(&(s[0].x() * &ri.r), &(s[j].x() * &rj.r)).unwrap();
        assert!((got - 1.0).abs() < 1e-6, "pair (0, {j}): {got}");
    }
}

#[test]
fn subject_order_does_not_matter_without_noise() {
    let ds = generate_synthetic(&spec(4, 5, 4, 24, 0.0, 5)).unwrap();
    let cfg = solver(3);
    let a = fit(&ds, &cfg, &SweepConfig::default()).unwrap();
    let mut reversed = ds.subjects().to_vec();
    reversed.reverse();
    let rev = LabeledDataset::new(reversed, ds.labels().cloned()).unwrap();
    let b = fit(&rev, &cfg, &SweepConfig::default()).unwrap();
    let (ia, ib) = (a.final_isc().unwrap(), b.final_isc().unwrap());
    assert!((ia - ib).abs() <= 1e-4, "{ia} vs {ib}");
}

#[test]
fn noisy_training_improves_on_the_starting_point() {
    let ds = generate_synthetic(&spec(4, 5, 4, 24, 1.0, 8)).unwrap();
    for mode in [SolverMode::Classical, SolverMode::Ldha] {
        let cfg = solver(3).with_mode(mode);
        let res = fit(&ds, &cfg, &SweepConfig::default()).unwrap();
        let start: Vec<_> = ds.subjects().iter().map(|s| s.x().columns(0, 3).into_owned()).collect();
        let initial = mean_pairwise_isc(&start).unwrap();
        let last = res.final_isc().unwrap();
        assert!(last > initial, "{mode:?}: {initial} -> {last}");
    }
}

#[test]
fn noiseless_four_class_loso() {
    let ds = generate_synthetic(&spec(4, 6, 4, 40, 0.0, 13)).unwrap();
    for m in [Method::Classical, Method::Ldha] {
        let acc = eval(&ds, m, 3);
        assert!(acc >= 99.0, "{m}: {acc}");
    }
    let identity = eval(&ds, Method::Identity, 3);
    assert!(identity <= 50.0, "identity {identity} exceeds twice chance");
}

#[test]
fn sweep_accuracy_grows_with_trs_without_noise() {
    let ds = generate_synthetic(&spec(4, 6, 3, 24, 0.0, 2)).unwrap();
    let base = ExperimentConfig {
        solver: solver(2),
        ..ExperimentConfig::default()
    };
    let grid = SweepGrid {
        trs: vec![3, 9, 18],
        voxels: vec![24],
    };
    let rows = run_sweep(&ds, &grid, &[Method::Ldha], &base).unwrap();
    for w in rows.windows(2) {
        assert!(w[1].mean_acc >= w[0].mean_acc, "{} -> {}", w[0].mean_acc, w[1].mean_acc);
    }
}

#[test]
fn ldha_keeps_up_with_classical_across_noise() {
    // eight classes, two TRs each, few voxels: a low-TR regime
    let mut gaps = Vec::new();
    for sigma in [0.5, 1.0, 2.0] {
        let ds = generate_synthetic(&spec(6, 2, 8, 16, sigma, 1)).unwrap();
        let ha = eval(&ds, Method::Classical, 5);
        let ldha = eval(&ds, Method::Ldha, 5);
        assert!(ldha >= ha - 1.0, "sigma {sigma}: ldha {ldha} vs ha {ha}");
        gaps.push(ldha - ha);
    }
    assert!(gaps[1] > 0.0, "{gaps:?}");
}

#[test]
fn voxel_selection_inside_folds() {
    let ds = generate_synthetic(&spec(4, 4, 3, 20, 0.5, 4)).unwrap();
    let mut cfg = EvalConfig::new(Method::Ldha, solver(2), SweepConfig::default(), Default::default());
    let all = loso_evaluate(&ds, &cfg).unwrap();
    cfg.voxels = Some(20);
    let same = loso_evaluate(&ds, &cfg).unwrap();
    for (a, b) in all.per_fold.iter().zip(&same.per_fold) {
        assert_eq!((a.accuracy, a.auc, a.sweeps), (b.accuracy, b.auc, b.sweeps));
        assert!((a.train_isc.unwrap() - b.train_isc.unwrap()).abs() < 1e-12);
    }
    cfg.voxels = Some(8);
    let fewer = loso_evaluate(&ds, &cfg).unwrap();
    assert_eq!(fewer.config.voxels, Some(8));
    cfg.voxels = Some(21);
    assert!(loso_evaluate(&ds, &cfg).is_err());
    cfg.voxels = Some(0);
    assert!(loso_evaluate(&ds, &cfg).is_err());
}
