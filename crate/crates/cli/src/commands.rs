//! One function per subcommand. Each loads and validates the manifest,
//! echoes it into the output directory, then writes its artifacts.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;

use battdiag::data::{load_dataset, CellData, DegradationState, Mode, Scenario};
use battdiag::features::{compute_bounds, feature_matrix, Variable, VariableBounds};
use battdiag::knee::{
    fit_knee_regression, predict_knee as predict_b2, smooth_curve, Abscissa, CapacityCurve, KneeCorrelationModel,
};
use battdiag::pipeline::{
    deploy_fine_tuned, evaluate_bundle, label_cell, prepare, robustness_suite, run_source_experiment,
    run_target_experiment, write_metrics_csv, Bundle, ExperimentManifest, MetricsReport,
};
use battdiag::synth::{standard_fleet, write_fleet};

use crate::{CliError, Common, PlotArgs, PredictKneeArgs, WithBundle};

pub const EXPERIMENT_COPY: &str = "experiment.toml";
pub const RESOLVED_FILE: &str = "resolved.toml";

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(io_err(path))
}

fn write_toml<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = toml::to_string(value).map_err(|e| CliError::Runtime(e.to_string()))?;
    write_text(path, &text)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Runtime(e.to_string()))?;
    write_text(path, &text)
}

/// Loads, applies flag overrides, validates, and echoes the manifest.
fn setup(c: &Common) -> Result<ExperimentManifest, CliError> {
    let raw = std::fs::read_to_string(&c.manifest).map_err(io_err(&c.manifest))?;
    let mut exp = ExperimentManifest::load(&c.manifest)?;
    if let Some(seed) = c.seed {
        exp.seed = seed;
    }
    exp.validate()?;
    std::fs::create_dir_all(&c.out).map_err(io_err(&c.out))?;
    write_text(&c.out.join(EXPERIMENT_COPY), &raw)?;
    write_text(&c.out.join(RESOLVED_FILE), &exp.to_toml())?;
    Ok(exp)
}

fn load_cells(exp: &ExperimentManifest) -> Result<Vec<CellData>, CliError> {
    let mut cells = load_dataset(&exp.dataset.manifest).map_err(battdiag::pipeline::PipelineError::from)?;
    cells.sort_by(|a, b| a.meta.cell_id.cmp(&b.meta.cell_id));
    Ok(cells)
}

fn csv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>, CliError> {
    csv::Writer::from_path(path).map_err(|e| CliError::Io {
        path: path.to_path_buf(),
        source: e.into(),
    })
}

fn csv_row<I, S>(w: &mut csv::Writer<std::fs::File>, path: &Path, row: I) -> Result<(), CliError>
where
    I: IntoIterator<Item = S>,
    S: AsRef<[u8]>,
{
    w.write_record(row).map_err(|e| CliError::Io {
        path: path.to_path_buf(),
        source: e.into(),
    })
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

pub fn synth_gen(c: &Common) -> Result<(), CliError> {
    let exp = setup(c)?;
    let cells = standard_fleet(&exp.synth.fleet_config(exp.seed)).map_err(|e| CliError::Runtime(e.to_string()))?;
    let manifest = write_fleet(&cells, exp.seed, &c.out).map_err(|e| CliError::Runtime(e.to_string()))?;
    println!("{}", manifest.display());
    Ok(())
}

#[derive(Serialize)]
struct BoundsFile {
    voltage: VariableBounds,
    current: VariableBounds,
    provenance: Vec<String>,
}

fn source_bounds(cells: &[CellData]) -> Result<BoundsFile, CliError> {
    let source: Vec<&CellData> = cells.iter().filter(|c| c.meta.scenario.is_source()).collect();
    if source.is_empty() {
        return Err(CliError::Invalid("dataset has no source cells".into()));
    }
    let logs: Vec<_> = source.iter().map(|c| &c.log).collect();
    let err = |e: battdiag::features::FeatureError| CliError::Pipeline(e.into());
    Ok(BoundsFile {
        voltage: compute_bounds(&logs, Variable::Voltage).map_err(err)?,
        current: compute_bounds(&logs, Variable::Current).map_err(err)?,
        provenance: source.iter().map(|c| c.meta.cell_id.clone()).collect(),
    })
}

pub fn features_bounds(c: &Common) -> Result<(), CliError> {
    let exp = setup(c)?;
    let cells = load_cells(&exp)?;
    write_toml(&c.out.join("bounds.toml"), &source_bounds(&cells)?)
}

pub fn features_extract(c: &Common) -> Result<(), CliError> {
    let exp = setup(c)?;
    let prep = prepare(load_cells(&exp)?, &exp)?;
    for kind in &exp.features.set_kinds {
        let stem = format!("features_{}", kind.label());
        prep.matrices[kind]
            .write_csv(&c.out.join(format!("{stem}.csv")))
            .map_err(|e| CliError::Pipeline(e.into()))?;
        prep.spaces[kind]
            .write(&c.out.join(format!("{stem}.toml")))
            .map_err(|e| CliError::Pipeline(e.into()))?;
    }
    Ok(())
}

pub fn knees_label(c: &Common) -> Result<(), CliError> {
    let exp = setup(c)?;
    let cells = load_cells(&exp)?;
    let path = c.out.join("knees.csv");
    let mut w = csv_writer(&path)?;
    csv_row(&mut w, &path, ["cell_id", "b1", "b2", "phase_at_each_rpt"])?;
    for cell in &cells {
        let tl = label_cell(cell, &exp.knee.config())?;
        let phases: Vec<String> = tl.labels.iter().map(u8::to_string).collect();
        csv_row(
            &mut w,
            &path,
            [cell.meta.cell_id.clone(), opt(tl.b1), opt(tl.b2), phases.join(";")],
        )?;
    }
    w.flush().map_err(io_err(&path))
}

pub fn knees_fit(c: &Common) -> Result<(), CliError> {
    let exp = setup(c)?;
    let cells = load_cells(&exp)?;
    let mut pairs = Vec::new();
    for cell in &cells {
        let tl = label_cell(cell, &exp.knee.config())?;
        if let (Some(b1), Some(b2)) = (tl.b1, tl.b2) {
            pairs.push((b1, b2));
        }
    }
    let model = fit_knee_regression(&pairs, Abscissa::Hours).map_err(|e| CliError::Pipeline(e.into()))?;
    write_toml(&c.out.join("knee_model.toml"), &model)
}

pub fn predict_knee(a: &PredictKneeArgs) -> Result<(), CliError> {
    let exp = setup(&a.common)?;
    let path = &a.knee_model;
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    let model: KneeCorrelationModel =
        toml::from_str(&text).map_err(|e| CliError::Invalid(format!("{}: {e}", path.display())))?;
    let out = a.common.out.join("knee_predictions.csv");
    let mut w = csv_writer(&out)?;
    csv_row(
        &mut w,
        &out,
        ["cell_id", "b1", "b2_predicted", "b2_observed", "extrapolated"],
    )?;
    if let Some(onset) = a.onset {
        let p = predict_b2(&model, onset);
        csv_row(
            &mut w,
            &out,
            [
                String::new(),
                onset.to_string(),
                p.b2.to_string(),
                String::new(),
                p.extrapolated.to_string(),
            ],
        )?;
        println!("b2={} extrapolated={}", p.b2, p.extrapolated);
    } else {
        for cell in &load_cells(&exp)? {
            let tl = label_cell(cell, &exp.knee.config())?;
            if let Some(b1) = tl.b1 {
                let p = predict_b2(&model, b1);
                csv_row(
                    &mut w,
                    &out,
                    [
                        cell.meta.cell_id.clone(),
                        b1.to_string(),
                        p.b2.to_string(),
                        opt(tl.b2),
                        p.extrapolated.to_string(),
                    ],
                )?;
            }
        }
    }
    w.flush().map_err(io_err(&out))
}

fn write_bundle_metrics(out: &Path, cells: &[CellData], bundle: &Bundle) -> Result<(), CliError> {
    let reports: Vec<MetricsReport> = evaluate_bundle(cells, bundle)?.into_iter().map(|(_, r)| r).collect();
    write_metrics_csv(&out.join("bundle_metrics.csv"), &reports)?;
    Ok(())
}

pub fn train(c: &Common) -> Result<(), CliError> {
    let exp = setup(c)?;
    let cells = load_cells(&exp)?;
    let prep = prepare(cells.clone(), &exp)?;
    let outcome = run_source_experiment(&exp, &prep, c.jobs)?;
    let reports: Vec<MetricsReport> = outcome.reports.iter().map(|(_, r)| r.clone()).collect();
    write_metrics_csv(&c.out.join("metrics_source.csv"), &reports)?;
    #[derive(Serialize)]
    struct Splits<'a> {
        mode: &'a battdiag::pipeline::SplitPlan,
        phase: &'a battdiag::pipeline::SplitPlan,
    }
    write_json(
        &c.out.join("splits_source.json"),
        &Splits {
            mode: &outcome.mode_plan,
            phase: &outcome.phase_plan,
        },
    )?;
    let structures: BTreeMap<&str, _> = Mode::ALL
        .iter()
        .map(|m| (m.name(), outcome.structures[m.index()]))
        .collect();
    write_toml(&c.out.join("structures.toml"), &structures)?;
    if !outcome.search.is_empty() {
        let path = c.out.join("search_trials.csv");
        let mut w = csv_writer(&path)?;
        csv_row(
            &mut w,
            &path,
            ["mode", "trial", "layers", "neurons", "objective", "cached"],
        )?;
        for (mode, s) in &outcome.search {
            for t in &s.trials {
                csv_row(
                    &mut w,
                    &path,
                    [
                        mode.name().to_string(),
                        t.index.to_string(),
                        t.structure.layers.to_string(),
                        t.structure.neurons.to_string(),
                        t.objective.to_string(),
                        t.cached.to_string(),
                    ],
                )?;
            }
        }
        w.flush().map_err(io_err(&path))?;
    }
    let bundle = outcome.bundle.expect("source experiment builds a bundle");
    bundle.write(&c.out.join("bundle"))?;
    write_bundle_metrics(&c.out, &cells, &bundle)
}

fn read_bundle(path: &Path) -> Result<Bundle, CliError> {
    Ok(Bundle::read(path)?)
}

pub fn finetune(a: &WithBundle) -> Result<(), CliError> {
    let c = &a.common;
    let exp = setup(c)?;
    let cells = load_cells(&exp)?;
    let bundle = read_bundle(&a.bundle)?;
    let outcome = run_target_experiment(&exp, &cells, &bundle, c.jobs)?;
    let reports: Vec<MetricsReport> = outcome.reports.iter().map(|(_, r)| r.clone()).collect();
    write_metrics_csv(&c.out.join("metrics_target.csv"), &reports)?;
    write_json(&c.out.join("splits_target.json"), &outcome.plan)?;
    let path = c.out.join("fine_tunes.csv");
    let mut w = csv_writer(&path)?;
    csv_row(&mut w, &path, ["regime", "repeat", "cells"])?;
    for f in &outcome.fine_tunes {
        csv_row(
            &mut w,
            &path,
            [f.regime.name().to_string(), f.repeat.to_string(), f.cells.join(";")],
        )?;
    }
    w.flush().map_err(io_err(&path))?;
    #[derive(Serialize)]
    struct FreezeAudit {
        checked_models: usize,
        violations: usize,
    }
    write_toml(
        &c.out.join("freeze_audit.toml"),
        &FreezeAudit {
            checked_models: outcome.freeze_checks,
            violations: 0,
        },
    )?;
    let tuned = deploy_fine_tuned(&exp, &cells, &bundle, exp.target.deploy_regime)?;
    tuned.write(&c.out.join("bundle"))?;
    write_bundle_metrics(&c.out, &cells, &tuned)
}

pub fn evaluate(a: &WithBundle) -> Result<(), CliError> {
    let exp = setup(&a.common)?;
    let cells = load_cells(&exp)?;
    let bundle = read_bundle(&a.bundle)?;
    write_bundle_metrics(&a.common.out, &cells, &bundle)
}

pub fn robustness(a: &WithBundle) -> Result<(), CliError> {
    let c = &a.common;
    let exp = setup(c)?;
    let cells = load_cells(&exp)?;
    let bundle = read_bundle(&a.bundle)?;
    let outcome = robustness_suite(&exp, &cells, &bundle, c.jobs)?;
    let mut reports = vec![outcome.clean.clone()];
    reports.extend(outcome.cases.iter().map(|(_, r)| r.clone()));
    write_metrics_csv(&c.out.join("metrics_robustness.csv"), &reports)?;
    Ok(())
}

fn scenario_name(s: Scenario) -> &'static str {
    match s {
        Scenario::SourceA => "source_a",
        Scenario::SourceB => "source_b",
        Scenario::Target => "target",
    }
}

pub fn report_plots(a: &PlotArgs) -> Result<(), CliError> {
    let c = &a.common;
    let exp = setup(c)?;
    let cells = load_cells(&exp)?;
    let bundle = a.bundle.as_deref().map(read_bundle).transpose()?;
    let knee = exp.knee.config();

    let cap_path = c.out.join("fig1_capacity.csv");
    let mode_path = c.out.join("fig1_modes.csv");
    let phase_path = c.out.join("fig1_phases.csv");
    let mut cap = csv_writer(&cap_path)?;
    let mut modes = csv_writer(&mode_path)?;
    let mut phases = csv_writer(&phase_path)?;
    csv_row(
        &mut cap,
        &cap_path,
        ["cell_id", "scenario", "t_hours", "capacity_norm", "capacity_smoothed"],
    )?;
    csv_row(
        &mut modes,
        &mode_path,
        ["cell_id", "scenario", "t_hours", "mode", "labeled", "estimated"],
    )?;
    csv_row(
        &mut phases,
        &phase_path,
        ["cell_id", "scenario", "t_hours", "phase", "estimated"],
    )?;
    for cell in &cells {
        let id = &cell.meta.cell_id;
        let sc = scenario_name(cell.meta.scenario).to_string();
        let q: Vec<f64> = cell.rpts.iter().map(|r| r.t).collect();
        let y: Vec<f64> = cell.rpts.iter().map(|r| r.normalized_capacity).collect();
        let curve =
            CapacityCurve::new(Abscissa::Hours, q.clone(), y.clone()).map_err(|e| CliError::Pipeline(e.into()))?;
        let smooth = smooth_curve(&curve, knee.smoothing).map_err(|e| CliError::Pipeline(e.into()))?;
        for (t, v) in q.iter().zip(&y) {
            csv_row(
                &mut cap,
                &cap_path,
                [
                    id.clone(),
                    sc.clone(),
                    t.to_string(),
                    v.to_string(),
                    smooth.eval(*t).value.to_string(),
                ],
            )?;
        }
        let tl = label_cell(cell, &knee)?;
        let estimates = match &bundle {
            Some(b) => {
                let fm = feature_matrix(
                    &[(&cell.log, &cell.rpts[..])],
                    b.space.set_kind,
                    &b.space.voltage_bounds,
                    &b.space.current_bounds,
                )
                .map_err(|e| CliError::Pipeline(e.into()))?;
                let m = b.predict_modes(&fm)?;
                let p = b.predict_phases(&m, &q)?;
                Some((m, p))
            }
            None => None,
        };
        for (i, r) in cell.rpts.iter().enumerate() {
            let t = r.t.to_string();
            for mode in Mode::ALL {
                let labeled = r.modes.map(|s: DegradationState| s.get(mode));
                let est = estimates.as_ref().map(|(m, _)| m[mode.index()][i]);
                csv_row(
                    &mut modes,
                    &mode_path,
                    [
                        id.clone(),
                        sc.clone(),
                        t.clone(),
                        mode.name().to_string(),
                        opt(labeled),
                        opt(est),
                    ],
                )?;
            }
            let est = estimates.as_ref().map_or_else(String::new, |(_, p)| p[i].to_string());
            csv_row(
                &mut phases,
                &phase_path,
                [id.clone(), sc.clone(), t, tl.labels[i].to_string(), est],
            )?;
        }
    }
    for (w, p) in [
        (&mut cap, &cap_path),
        (&mut modes, &mode_path),
        (&mut phases, &phase_path),
    ] {
        w.flush().map_err(io_err(p))?;
    }
    Ok(())
}
