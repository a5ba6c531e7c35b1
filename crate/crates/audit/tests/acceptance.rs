//! One pass/fail line per acceptance criterion. Set `ACCEPTANCE_ONLY` to a
//! comma-separated list of criterion numbers to run a subset.

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use battdiag::data::{load_dataset, CellData, Mode};
use battdiag::deephpm::{fine_tune, train, Frozen, Structure, TrainConfig, TrainingSet};
use battdiag::features::{compute_bounds, extract_features, SetKind, Variable};
use battdiag::gbt::{fit, softmax, GbtConfig};
use battdiag::knee::{fit_knee_regression, identify_knees, Abscissa, CapacityCurve, KneeConfig, Smoothing};
use battdiag::pipeline::{
    label_cell, prepare, robustness_suite, run_source_experiment, run_target_experiment, write_metrics_csv, Bundle,
    ExperimentManifest, Regime, RobustnessCase,
};
use battdiag::synth::{knee_regression_family, standard_fleet, write_fleet, ScenarioTemplate, KNEE_FAMILY_GCV_PENALTY};
use battdiag_audit::curvature::{check_fades, fd_boundaries, kneed_fades, linear_fades};
use battdiag_audit::percentile::random_log;
use battdiag_audit::{fd, run_oracles, split_scan, Suite};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

// 1: soft targets on the real dataset
const ICL_ENV: &str = "BATTDIAG_ICL_MANIFEST";
const ICL_RMSE_FACTOR: f64 = 3.0;
const ICL_BEST_RMSE: [f64; 3] = [0.0066, 0.0118, 0.0076];
// 2
const AUTODIFF_NETS: usize = 100;
const AUTODIFF_LIMIT: Duration = Duration::from_secs(60);
// 3
const EXP_POINTS: usize = 50;
const EXP_T_MAX: f64 = 3.0;
const EXP_EPOCHS: usize = 20_000;
const EXP_HOLDOUT_RMSE: f64 = 1e-2;
const EXP_G_RANGE: (f64, f64) = (-0.65, -0.35);
const EXP_LIMIT: Duration = Duration::from_secs(300);
// 4
const FREEZE_RUNS: usize = 20;
// 5
const PROTOCOL_SEED: u64 = 7;
const PROTOCOL_EPOCHS: usize = 2000;
const PROTOCOL_FINE_TUNE_EPOCHS: usize = 500;
const PROTOCOL_RMSE_LIFT: f64 = 0.20;
const PROTOCOL_ACCURACY_LIFT: f64 = 0.15;
const PROTOCOL_LIMIT: Duration = Duration::from_secs(900);
// 6
const PARTITION_LOGS: usize = 1000;
const PARTITION_REL: f64 = 1e-6;
// 7
const BLOB_ACCURACY: f64 = 0.95;
const SOFTMAX_SUM_ABS: f64 = 1e-12;
// 8
const KNEE_FADES: usize = 50;
const KNEE_SEED: u64 = 77;
const KNEE_HIT_RATE: f64 = 0.96;
const LINEAR_RPTS: usize = 100;
const LINEAR_NOISE: f64 = 0.002;
// 9
const FAMILY_CELLS: usize = 12;
const FAMILY_SEEDS: u64 = 10;
const FAMILY_SLOPE_REL: f64 = 0.05;
const FAMILY_RHO: f64 = 0.95;
// 10
const ROBUSTNESS_NOISE_SEEDS: usize = 10;

struct Outcome {
    pass: Option<bool>,
    text: String,
}

impl Outcome {
    fn new(pass: bool, text: String) -> Self {
        Self { pass: Some(pass), text }
    }
}

fn secs(d: Duration) -> String {
    format!("{:.1}s", d.as_secs_f64())
}

fn criterion_1() -> Outcome {
    let Ok(path) = std::env::var(ICL_ENV) else {
        return Outcome {
            pass: None,
            text: format!("dataset not supplied (set {ICL_ENV} to a dataset manifest)"),
        };
    };
    let mut cells = load_dataset(Path::new(&path)).expect("dataset loads");
    cells.sort_by(|a, b| a.meta.cell_id.cmp(&b.meta.cell_id));
    let mut exp = ExperimentManifest::new(&path, PROTOCOL_SEED);
    exp.features.set_kinds = vec![SetKind::Iv17];
    let knees = cells
        .iter()
        .find(|c| c.meta.cell_id == "E4B")
        .map(|c| label_cell(c, &exp.knee.config()).expect("E4B labels"));
    let prep = prepare(cells, &exp).expect("dataset prepares");
    let source = run_source_experiment(&exp, &prep, 0).expect("source experiment");
    let rmse = source.reports[0].1.mean_mode_rmse;
    let ok = (0..3).all(|k| rmse[k] <= ICL_RMSE_FACTOR * ICL_BEST_RMSE[k]);
    Outcome::new(
        ok,
        format!(
            "mode RMSE {rmse:.4?} vs {ICL_RMSE_FACTOR}x {ICL_BEST_RMSE:?}; E4B b1/b2 = {:?} hours \
             (the label schema carries no cycle numbers, so the cycle check is not evaluated)",
            knees.map(|k| (k.b1, k.b2))
        ),
    )
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let reports = fd::autodiff_suite(AUTODIFF_NETS, 0);
    let elapsed = start.elapsed();
    let ok = reports.iter().all(|r| r.pass) && elapsed < AUTODIFF_LIMIT;
    let lines: Vec<String> = reports
        .iter()
        .map(|r| format!("{}={:.1e}/{:.0e}", r.name, r.max_rel, r.tolerance))
        .collect();
    Outcome::new(
        ok,
        format!(
            "{AUTODIFF_NETS} nets, max_rel/tol {}; runtime {} (limit {})",
            lines.join(" "),
            secs(elapsed),
            secs(AUTODIFF_LIMIT)
        ),
    )
}

fn criterion_3() -> Outcome {
    let start = Instant::now();
    let ts: Vec<f64> = (0..EXP_POINTS)
        .map(|i| EXP_T_MAX * i as f64 / (EXP_POINTS - 1) as f64)
        .collect();
    let held = |i: usize| i % 5 == 2;
    let rows = |keep: bool| -> (Vec<Vec<f64>>, Vec<f64>) {
        ts.iter()
            .enumerate()
            .filter(|(i, _)| held(*i) != keep)
            .map(|(_, &t)| (vec![t, 0.0], (-t).exp()))
            .unzip()
    };
    let (train_x, train_y) = rows(true);
    let (test_x, test_y) = rows(false);
    let cfg = TrainConfig {
        epochs: EXP_EPOCHS,
        seed: 1,
        ..TrainConfig::default()
    };
    let structure = Structure { layers: 2, neurons: 32 };
    let (model, _) = train(
        &TrainingSet::new(train_x, train_y),
        Mode::Lli,
        SetKind::V3,
        structure,
        &cfg,
    )
    .expect("fixture trains");
    let pred = model.predict_batch(&test_x).unwrap();
    let rmse = (pred.iter().zip(&test_y).map(|(p, y)| (p - y).powi(2)).sum::<f64>() / pred.len() as f64).sqrt();
    let g = model.dynamics_at(std::f64::consts::LN_2, &[0.0], 0.5, &[0.0]).unwrap();
    let elapsed = start.elapsed();
    let ok = rmse < EXP_HOLDOUT_RMSE && (EXP_G_RANGE.0..=EXP_G_RANGE.1).contains(&g) && elapsed < EXP_LIMIT;
    Outcome::new(
        ok,
        format!(
            "held-out RMSE {rmse:.2e} (< {EXP_HOLDOUT_RMSE:e}), G(u=0.5) {g:.3} (in {EXP_G_RANGE:?}); runtime {} (limit {})",
            secs(elapsed),
            secs(EXP_LIMIT)
        ),
    )
}

fn dynamics_bits(m: &battdiag::deephpm::DeepHpmModel) -> Vec<u64> {
    m.dynamics
        .layers()
        .iter()
        .flat_map(|l| l.weight.iter().chain(l.bias.iter()).map(|v| v.to_bits()))
        .collect()
}

fn criterion_4(protocol: Option<&Protocol>) -> Outcome {
    let mut unchanged = 0;
    for k in 0..FREEZE_RUNS {
        let (model, data, cfg) = fd::random_instance(1000 + k as u64);
        let tune = TrainConfig {
            epochs: 50,
            frozen: Frozen::Dynamics,
            seed: k as u64,
            ..cfg
        };
        let (tuned, _) = fine_tune(&model, &data, &tune).expect("fine-tune runs");
        let surrogate_moved = tuned.surrogate != model.surrogate;
        if dynamics_bits(&tuned) == dynamics_bits(&model) && surrogate_moved {
            unchanged += 1;
        }
    }
    let mut ok = unchanged == FREEZE_RUNS;
    let mut text = format!("{unchanged}/{FREEZE_RUNS} standalone fine-tunes left dynamics bit-identical");
    if let Some(p) = protocol {
        let tuned = p.target_fine_tunes;
        ok &= p.freeze_checks == 3 * tuned;
        text += &format!(
            "; protocol verified {} mode models over {tuned} fine-tune runs",
            p.freeze_checks
        );
    }
    Outcome::new(ok, text)
}

struct Protocol {
    cells: Vec<CellData>,
    exp: ExperimentManifest,
    bundle: Bundle,
    none: (f64, f64),
    one_knee: (f64, f64),
    elapsed: Duration,
    freeze_checks: usize,
    target_fine_tunes: usize,
}

fn protocol_manifest(dataset: &Path, seed: u64) -> ExperimentManifest {
    let mut exp = ExperimentManifest::new(dataset, seed);
    exp.features.set_kinds = vec![SetKind::Iv17];
    exp.deephpm.epochs = PROTOCOL_EPOCHS;
    exp.deephpm.fine_tune_epochs = PROTOCOL_FINE_TUNE_EPOCHS;
    exp.robustness.noise_seeds = ROBUSTNESS_NOISE_SEEDS;
    exp
}

fn load_fleet(exp: &ExperimentManifest, dir: &Path) -> (ExperimentManifest, Vec<CellData>) {
    let cells = standard_fleet(&exp.synth.fleet_config(exp.seed)).unwrap();
    let manifest = write_fleet(&cells, exp.seed, dir).unwrap();
    let mut exp = exp.clone();
    exp.dataset.manifest = manifest.clone();
    let mut data = load_dataset(&manifest).unwrap();
    data.sort_by(|a, b| a.meta.cell_id.cmp(&b.meta.cell_id));
    (exp, data)
}

fn run_protocol() -> Protocol {
    let dir = tempfile::tempdir().unwrap();
    let start = Instant::now();
    let (exp, cells) = load_fleet(&protocol_manifest(Path::new("unused"), PROTOCOL_SEED), dir.path());
    let prep = prepare(cells.clone(), &exp).unwrap();
    let source = run_source_experiment(&exp, &prep, 0).unwrap();
    let bundle = source.bundle.unwrap();
    let target = run_target_experiment(&exp, &cells, &bundle, 0).unwrap();
    let elapsed = start.elapsed();
    let score = |r: Regime| {
        let rep = &target.reports.iter().find(|(g, _)| *g == r).expect("regime run").1;
        (rep.mean_rmse(), rep.mean_accuracy)
    };
    Protocol {
        none: score(Regime::None),
        one_knee: score(Regime::OneKnee),
        elapsed,
        freeze_checks: target.freeze_checks,
        target_fine_tunes: target.fine_tunes.iter().filter(|f| !f.cells.is_empty()).count(),
        cells,
        exp,
        bundle,
    }
}

fn criterion_5(p: &Protocol) -> Outcome {
    let rmse_lift = 1.0 - p.one_knee.0 / p.none.0;
    let acc_lift = p.one_knee.1 - p.none.1;
    let ok = rmse_lift >= PROTOCOL_RMSE_LIFT && acc_lift >= PROTOCOL_ACCURACY_LIFT && p.elapsed < PROTOCOL_LIMIT;
    Outcome::new(
        ok,
        format!(
            "(a) mean mode RMSE {:.4} -> {:.4}, lift {:.1}% (>= {:.0}%); (b) phase accuracy {:.3} -> {:.3}, lift {:+.3} (>= {PROTOCOL_ACCURACY_LIFT}); \
             {} repeats, {PROTOCOL_EPOCHS} epochs, {PROTOCOL_FINE_TUNE_EPOCHS} fine-tune epochs; runtime {} (limit {})",
            p.none.0,
            p.one_knee.0,
            100.0 * rmse_lift,
            100.0 * PROTOCOL_RMSE_LIFT,
            p.none.1,
            p.one_knee.1,
            acc_lift,
            p.exp.splits.repeats,
            secs(p.elapsed),
            secs(PROTOCOL_LIMIT)
        ),
    )
}

fn criterion_6() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (mut worst_partition, mut nesting_failures, mut direct_failures) = (0.0_f64, 0, 0);
    for k in 0..PARTITION_LOGS {
        let log = random_log(&mut rng, &format!("R{k}"));
        let vb = compute_bounds(&[&log], Variable::Voltage).unwrap();
        let ib = compute_bounds(&[&log], Variable::Current).unwrap();
        let s = log.samples();
        let end = rng.gen_range(s[1].t..=log.last_time());
        let elapsed = end - log.first_time();
        let get = |kind| extract_features(&log, &vb, &ib, kind, end).unwrap();
        let (v5, i5, v3, i3, iv) = (
            get(SetKind::V5),
            get(SetKind::I5),
            get(SetKind::V3),
            get(SetKind::I3),
            get(SetKind::Iv17),
        );
        for f in [&v5, &i5, &iv] {
            let total: f64 = f.histogram().iter().sum();
            worst_partition = worst_partition.max((total - elapsed).abs() / elapsed);
        }
        let cell = |ci: usize, vi: usize| iv.histogram()[4 * ci + vi];
        let v_sums: Vec<f64> = (0..4)
            .map(|vi| cell(0, vi) + cell(1, vi) + cell(2, vi) + cell(3, vi))
            .collect();
        let i_sums: Vec<f64> = (0..4)
            .map(|ci| cell(ci, 0) + cell(ci, 1) + cell(ci, 2) + cell(ci, 3))
            .collect();
        if v5.histogram() != v_sums.as_slice()
            || i5.histogram() != i_sums.as_slice()
            || v3.histogram() != &v_sums[1..3]
            || i3.histogram() != &i_sums[1..3]
        {
            nesting_failures += 1;
        }
        // direct accumulation with bins from the percentile values
        let bin = |v: f64, p: [f64; 4]| (1..4).filter(|&j| v >= p[j - 1]).count().min(3);
        let (vp, ip) = ([vb.p01, vb.p33, vb.p67, vb.p99], [ib.p01, ib.p33, ib.p67, ib.p99]);
        let mut direct = [[0.0; 4]; 4];
        for w in s.windows(2) {
            let d = w[1].t.min(end) - w[0].t;
            if d > 0.0 {
                direct[bin(w[0].current, ip)][bin(w[0].voltage, vp)] += d;
            }
        }
        let close = (0..16).all(|j| (direct[j / 4][j % 4] - iv.histogram()[j]).abs() <= PARTITION_REL * elapsed);
        if !close {
            direct_failures += 1;
        }
    }
    let ok = worst_partition <= PARTITION_REL && nesting_failures == 0 && direct_failures == 0;
    Outcome::new(
        ok,
        format!(
            "{PARTITION_LOGS} logs: worst partition rel error {worst_partition:.1e} (<= {PARTITION_REL:e}), \
             {nesting_failures} inexact 1D/2D nestings, {direct_failures} grids differing from direct accumulation"
        ),
    )
}

fn blobs(rng: &mut ChaCha8Rng, per_class: usize) -> (Vec<Vec<f64>>, Vec<u8>) {
    let centers = [[0.0, 0.0, 0.0, 0.0], [4.0, 0.0, 2.0, 0.0], [0.0, 4.0, 0.0, 2.0]];
    let noise = Normal::new(0.0, 0.7).unwrap();
    let mut x = Vec::new();
    let mut y = Vec::new();
    for (k, c) in centers.iter().enumerate() {
        for _ in 0..per_class {
            x.push(c.iter().map(|m| m + noise.sample(rng)).collect());
            y.push(k as u8 + 1);
        }
    }
    (x, y)
}

fn criterion_7() -> Outcome {
    let reports = split_scan::split_suite(20, 30, 0);
    let oracle_ok = reports.iter().all(|r| r.pass);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (xtr, ytr) = blobs(&mut rng, 100);
    let (xte, yte) = blobs(&mut rng, 100);
    let names = (0..4).map(|j| format!("f{j}")).collect();
    let model = fit(&xtr, &ytr, names, &GbtConfig::default()).unwrap().model;
    let correct = xte
        .iter()
        .zip(&yte)
        .filter(|(x, &y)| model.predict(x).unwrap() == y)
        .count();
    let accuracy = correct as f64 / yte.len() as f64;
    let mut worst_sum = 0.0_f64;
    for x in &xte {
        worst_sum = worst_sum.max((model.predict_proba(x).unwrap().iter().sum::<f64>() - 1.0).abs());
    }
    for _ in 0..1000 {
        let s = [
            rng.gen_range(-800.0..800.0),
            rng.gen_range(-800.0..800.0),
            rng.gen_range(-800.0..800.0),
        ];
        worst_sum = worst_sum.max((softmax(&s).iter().sum::<f64>() - 1.0).abs());
    }
    let ok = oracle_ok && accuracy >= BLOB_ACCURACY && worst_sum <= SOFTMAX_SUM_ABS;
    let oracle: Vec<String> = reports.iter().map(|r| r.to_string()).collect();
    Outcome::new(
        ok,
        format!(
            "{}; blob accuracy {accuracy:.3} (>= {BLOB_ACCURACY}); worst |sum p - 1| {worst_sum:.1e} (<= {SOFTMAX_SUM_ABS:e})",
            oracle.join("; ")
        ),
    )
}

fn criterion_8() -> Outcome {
    let cfg = KneeConfig::default();
    let checks = check_fades(&kneed_fades(KNEE_FADES, KNEE_SEED), &cfg);
    let hits = checks.iter().filter(|c| c.hit()).count();
    let mut unordered = checks.iter().filter(|c| !c.ordered()).count();
    let mut false_knees = 0;
    for curve in linear_fades(KNEE_FADES, LINEAR_RPTS, LINEAR_NOISE, KNEE_SEED) {
        let t = identify_knees(&curve, &cfg).unwrap();
        false_knees += t.b2.is_some() as usize;
        if let (Some(a), Some(b)) = (t.b1, t.b2) {
            unordered += (a >= b) as usize;
        }
    }
    let rate = hits as f64 / checks.len() as f64;
    let ok = rate >= KNEE_HIT_RATE && false_knees == 0 && unordered == 0;
    Outcome::new(
        ok,
        format!(
            "{hits}/{} kneed fades with b2 within 5% of span of the dense-curvature knee ({:.0}%, need {:.0}%); \
             {false_knees}/{KNEE_FADES} false knees on linear fades; {unordered} cases with b1 >= b2",
            checks.len(),
            100.0 * rate,
            100.0 * KNEE_HIT_RATE
        ),
    )
}

fn criterion_9() -> Outcome {
    let cfg = KneeConfig {
        smoothing: Smoothing::PenalizedGcv(KNEE_FAMILY_GCV_PENALTY),
        ..KneeConfig::default()
    };
    let template = ScenarioTemplate {
        sample_period_s: 3600.0,
        ..ScenarioTemplate::target()
    };
    let (mut worst_slope, mut worst_rho, mut failures) = (0.0_f64, 1.0_f64, 0);
    for seed in 1..=FAMILY_SEEDS {
        let cells = knee_regression_family(&template, FAMILY_CELLS, seed).unwrap();
        let mut pairs = Vec::new();
        for c in &cells {
            let q: Vec<f64> = c.rpts.iter().map(|r| r.t).collect();
            let y = c.rpts.iter().map(|r| r.normalized_capacity).collect();
            let t = identify_knees(&CapacityCurve::new(Abscissa::Hours, q, y).unwrap(), &cfg).unwrap();
            match (t.b1, t.b2) {
                (Some(b1), Some(b2)) if b1 < b2 => pairs.push((b1, b2)),
                _ => failures += 1,
            }
        }
        // the family shares one shape on scaled clocks, so the planted
        // relation is a line through the origin with slope b2/b1
        let base = &cells[0];
        let (b1, b2) = fd_boundaries(&base.spec, base.rpts[0].t, base.rpts[base.rpts.len() - 1].t);
        let planted = b2 / b1;
        let fit = fit_knee_regression(&pairs, Abscissa::Hours).unwrap();
        worst_slope = worst_slope.max((fit.slope / planted - 1.0).abs());
        worst_rho = worst_rho.min(fit.pearson_rho);
    }
    let ok = failures == 0 && worst_slope <= FAMILY_SLOPE_REL && worst_rho >= FAMILY_RHO;
    Outcome::new(
        ok,
        format!(
            "{FAMILY_SEEDS} families of {FAMILY_CELLS}: worst slope error {:.1}% (<= {:.0}%), worst rho {worst_rho:.3} (>= {FAMILY_RHO}), \
             {failures} cells without an ordered onset and knee",
            100.0 * worst_slope,
            100.0 * FAMILY_SLOPE_REL
        ),
    )
}

fn criterion_10(p: &Protocol) -> Outcome {
    let start = Instant::now();
    let r = robustness_suite(&p.exp, &p.cells, &p.bundle, 0).unwrap();
    let case = |c: RobustnessCase| r.cases.iter().find(|(k, _)| *k == c).expect("case run").1.mean_rmse();
    let clean = r.clean.mean_rmse();
    let (n04, n25, missing) = (
        case(RobustnessCase::Noise004),
        case(RobustnessCase::Noise025),
        case(RobustnessCase::MissingExtremes),
    );
    let ok = n25 >= n04 && n04 >= clean && missing - clean < n25 - clean;
    Outcome::new(
        ok,
        format!(
            "{} noise seeds: RMSE clean {clean:.4}, noise 0.04 {n04:.4}, noise 0.25 {n25:.4}, missing extremes {missing:.4}; runtime {}",
            p.exp.robustness.noise_seeds,
            secs(start.elapsed())
        ),
    )
}

/// Every file the library writes for one small manifest.
fn write_run(dir: &Path, jobs: usize) {
    let mut exp = ExperimentManifest::new("unused", 11);
    exp.features.set_kinds = vec![SetKind::Iv17, SetKind::V5];
    exp.deephpm.layers = 2;
    exp.deephpm.neurons = 8;
    exp.deephpm.epochs = 60;
    exp.deephpm.fine_tune_epochs = 20;
    exp.gbt.n_rounds = 10;
    exp.splits.repeats = 2;
    exp.robustness.noise_seeds = 2;
    exp.synth.cells_per_scenario = 4;
    exp.synth.sample_period_s = 120.0;
    exp.synth.n_rpts = 40;
    let (exp, cells) = load_fleet(&exp, &dir.join("fleet"));
    std::fs::write(
        dir.join("resolved.toml"),
        exp.to_toml().replace(&dir.display().to_string(), ""),
    )
    .unwrap();
    let prep = prepare(cells.clone(), &exp).unwrap();
    for (kind, m) in &prep.matrices {
        m.write_csv(&dir.join(format!("features_{kind}.csv"))).unwrap();
    }
    let source = run_source_experiment(&exp, &prep, jobs).unwrap();
    let reports: Vec<_> = source.reports.iter().map(|(_, r)| r.clone()).collect();
    write_metrics_csv(&dir.join("metrics_source.csv"), &reports).unwrap();
    let bundle = source.bundle.unwrap();
    bundle.write(&dir.join("bundle")).unwrap();
    let target = run_target_experiment(&exp, &cells, &bundle, jobs).unwrap();
    let reports: Vec<_> = target.reports.iter().map(|(_, r)| r.clone()).collect();
    write_metrics_csv(&dir.join("metrics_target.csv"), &reports).unwrap();
    let robust = robustness_suite(&exp, &cells, &bundle, jobs).unwrap();
    let mut reports = vec![robust.clean.clone()];
    reports.extend(robust.cases.iter().map(|(_, r)| r.clone()));
    write_metrics_csv(&dir.join("metrics_robustness.csv"), &reports).unwrap();
}

fn files(root: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

fn criterion_11() -> Outcome {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    write_run(a.path(), 1);
    write_run(b.path(), 2);
    let (fa, fb) = (files(a.path()), files(b.path()));
    let differing: Vec<String> = fa
        .iter()
        .filter(|f| {
            std::fs::read(a.path().join(f)).unwrap() != std::fs::read(b.path().join(f)).ok().unwrap_or_default()
        })
        .map(|f| f.display().to_string())
        .collect();
    let ok = fa == fb && differing.is_empty() && !fa.is_empty();
    Outcome::new(
        ok,
        format!(
            "{} files from two runs (1 and 2 workers) compared; {} differ {differing:?}",
            fa.len(),
            differing.len()
        ),
    )
}

fn main() {
    // cargo test passes harness flags such as --nocapture; they do not apply here
    let only: Option<Vec<u32>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|v| v.trim().parse().ok()).collect());
    let wanted = |n: u32| only.as_ref().is_none_or(|o| o.contains(&n));
    let mut failed = 0;
    let mut report = |n: u32, name: &str, o: Outcome| {
        let tag = match o.pass {
            Some(true) => "PASS",
            Some(false) => {
                failed += 1;
                "FAIL"
            }
            None => "SKIP",
        };
        println!("criterion {n:>2} {tag} {name}: {}", o.text);
    };
    let started = Instant::now();
    if wanted(1) {
        report(1, "real-data soft targets", criterion_1());
    }
    if wanted(2) {
        report(2, "autodiff vs finite differences", criterion_2());
    }
    if wanted(3) {
        report(3, "exp(-t) hidden dynamics", criterion_3());
    }
    let protocol = (wanted(4) || wanted(5) || wanted(10)).then(run_protocol);
    if wanted(4) {
        report(4, "freeze contract", criterion_4(protocol.as_ref()));
    }
    if wanted(5) {
        report(5, "transfer lift", criterion_5(protocol.as_ref().unwrap()));
    }
    if wanted(6) {
        report(6, "feature partition and nesting", criterion_6());
    }
    if wanted(7) {
        report(7, "gradient boosting", criterion_7());
    }
    if wanted(8) {
        report(8, "knee detection", criterion_8());
    }
    if wanted(9) {
        report(9, "knee regression", criterion_9());
    }
    if wanted(10) {
        report(10, "robustness ordering", criterion_10(protocol.as_ref().unwrap()));
    }
    if wanted(11) {
        report(11, "determinism", criterion_11());
    }
    let all = run_oracles(Suite::All);
    let oracle_failures = all.iter().filter(|r| !r.pass).count();
    println!("oracles: {} run, {oracle_failures} failed", all.len());
    for r in &all {
        println!("  {r}");
    }
    println!("acceptance finished in {}", secs(started.elapsed()));
    if failed + oracle_failures > 0 {
        std::process::exit(1);
    }
}
