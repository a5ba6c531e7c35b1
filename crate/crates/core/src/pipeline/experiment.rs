//! Source and target experiments over repeated splits.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::bundle::{classify_phases, Bundle, GBT_INPUTS};
use super::config::ExperimentManifest;
use super::metrics::{compute_metrics, MetricsReport, RepeatMetrics};
use super::search::{search_structures, SearchOutcome};
use super::splits::{make_splits, BalanceCriterion, Regime, SplitPlan};
use super::{with_jobs, PipelineError};
use crate::autodiff::Mlp;
use crate::data::{CellData, KneeStatus, Mode, Scenario};
use crate::deephpm::{fine_tune, train, DeepHpmModel, Structure, TrainingSet};
use crate::features::{compute_bounds, feature_matrix, FeatureMatrix, FeatureSpace, SetKind, Variable, VariableBounds};
use crate::gbt::{self, GbtModel};
use crate::knee::{identify_knees, Abscissa, CapacityCurve, KneeConfig, PhaseTimeline};

/// Knee boundaries and per-RPT phase labels from a cell's capacity fade.
pub fn label_cell(cell: &CellData, cfg: &KneeConfig) -> Result<PhaseTimeline, PipelineError> {
    let q: Vec<f64> = cell.rpts.iter().map(|r| r.t).collect();
    let y: Vec<f64> = cell.rpts.iter().map(|r| r.normalized_capacity).collect();
    Ok(identify_knees(&CapacityCurve::new(Abscissa::Hours, q, y)?, cfg)?)
}

/// Loaded cells with phase labels and source-fitted feature spaces.
#[derive(Debug, Clone)]
pub struct Prepared {
    /// Sorted by cell id.
    pub cells: Vec<CellData>,
    pub timelines: BTreeMap<String, PhaseTimeline>,
    pub voltage_bounds: VariableBounds,
    pub current_bounds: VariableBounds,
    /// Rows for every cell, per feature set.
    pub matrices: BTreeMap<SetKind, FeatureMatrix>,
    /// Normalization fitted on source rows only.
    pub spaces: BTreeMap<SetKind, FeatureSpace>,
}

impl Prepared {
    pub fn cell(&self, id: &str) -> Result<&CellData, PipelineError> {
        self.cells
            .binary_search_by(|c| c.meta.cell_id.as_str().cmp(id))
            .map(|i| &self.cells[i])
            .map_err(|_| PipelineError::UnknownCell(id.into()))
    }

    pub fn ids(&self, scenario: Scenario) -> Vec<String> {
        self.cells
            .iter()
            .filter(|c| c.meta.scenario == scenario)
            .map(|c| c.meta.cell_id.clone())
            .collect()
    }

    fn metas(&self, scenario: Scenario) -> Vec<crate::data::CellMeta> {
        self.cells
            .iter()
            .filter(|c| c.meta.scenario == scenario)
            .map(|c| c.meta.clone())
            .collect()
    }
}

/// Labels phases, fits bounds on source cells and extracts every feature
/// set the manifest needs.
pub fn prepare(mut cells: Vec<CellData>, exp: &ExperimentManifest) -> Result<Prepared, PipelineError> {
    cells.sort_by(|a, b| a.meta.cell_id.cmp(&b.meta.cell_id));
    let knee = exp.knee.config();
    let mut timelines = BTreeMap::new();
    for c in &cells {
        timelines.insert(c.meta.cell_id.clone(), label_cell(c, &knee)?);
    }
    let source: Vec<&CellData> = cells.iter().filter(|c| c.meta.scenario.is_source()).collect();
    if source.is_empty() {
        return Err(PipelineError::InvalidConfig("dataset has no source cells".into()));
    }
    let logs: Vec<_> = source.iter().map(|c| &c.log).collect();
    let voltage_bounds = compute_bounds(&logs, Variable::Voltage)?;
    let current_bounds = compute_bounds(&logs, Variable::Current)?;
    let provenance: Vec<String> = source.iter().map(|c| c.meta.cell_id.clone()).collect();
    let kinds: BTreeSet<SetKind> = exp
        .features
        .set_kinds
        .iter()
        .copied()
        .chain([exp.features.bundle_set_kind])
        .collect();
    let mut matrices = BTreeMap::new();
    let mut spaces = BTreeMap::new();
    let pairs: Vec<_> = cells.iter().map(|c| (&c.log, &c.rpts[..])).collect();
    for kind in kinds {
        let fm = feature_matrix(&pairs, kind, &voltage_bounds, &current_bounds)?;
        let src_idx: Vec<usize> = (0..fm.len())
            .filter(|&i| provenance.binary_search(&fm.keys[i].cell_id).is_ok())
            .collect();
        let space = FeatureSpace::fit(&fm.subset(&src_idx), voltage_bounds, current_bounds, provenance.clone());
        matrices.insert(kind, fm);
        spaces.insert(kind, space);
    }
    Ok(Prepared {
        cells,
        timelines,
        voltage_bounds,
        current_bounds,
        matrices,
        spaces,
    })
}

/// Rows of `ids`, cell by cell in the given order.
fn rows_of(fm: &FeatureMatrix, ids: &[String]) -> FeatureMatrix {
    let idx: Vec<usize> = ids.iter().flat_map(|id| fm.cell_rows(id)).collect();
    fm.subset(&idx)
}

fn true_modes(fm: &FeatureMatrix) -> Result<[Vec<f64>; 3], PipelineError> {
    let mut out: [Vec<f64>; 3] = Default::default();
    for (k, t) in fm.keys.iter().zip(&fm.targets) {
        let s = t.ok_or_else(|| PipelineError::MissingModes(k.cell_id.clone()))?;
        for m in Mode::ALL {
            out[m.index()].push(s.get(m));
        }
    }
    Ok(out)
}

fn training_set(space: &FeatureSpace, fm: &FeatureMatrix, mode: Mode) -> Result<TrainingSet, PipelineError> {
    let targets = true_modes(fm)?[mode.index()].clone();
    let mut groups = Vec::with_capacity(fm.len());
    let mut g = 0;
    for (i, k) in fm.keys.iter().enumerate() {
        if i > 0 && k.cell_id != fm.keys[i - 1].cell_id {
            g += 1;
        }
        groups.push(g);
    }
    Ok(TrainingSet::with_groups(space.model_inputs(fm), targets, groups))
}

/// Phase labels of `fm` rows from each cell's timeline.
fn true_phases(
    prep_timelines: &BTreeMap<String, PhaseTimeline>,
    cells: &dyn Fn(&str) -> Option<Vec<f64>>,
    fm: &FeatureMatrix,
) -> Result<Vec<u8>, PipelineError> {
    let mut out = Vec::with_capacity(fm.len());
    for k in &fm.keys {
        let tl = prep_timelines
            .get(&k.cell_id)
            .ok_or_else(|| PipelineError::UnknownCell(k.cell_id.clone()))?;
        let times = cells(&k.cell_id).ok_or_else(|| PipelineError::UnknownCell(k.cell_id.clone()))?;
        let j = times
            .iter()
            .position(|&t| t == k.t)
            .ok_or_else(|| PipelineError::UnknownCell(k.cell_id.clone()))?;
        out.push(tl.labels[j]);
    }
    Ok(out)
}

/// Classifier rows `[lli, lam_ne, lam_pe, t]` from labeled modes, with phases.
fn gbt_rows(prep: &Prepared, ids: &[String]) -> Result<(Vec<Vec<f64>>, Vec<u8>), PipelineError> {
    let (mut x, mut y) = (Vec::new(), Vec::new());
    for id in ids {
        let c = prep.cell(id)?;
        let tl = &prep.timelines[id];
        for (r, &l) in c.rpts.iter().zip(&tl.labels) {
            let m = r.modes.ok_or_else(|| PipelineError::MissingModes(id.clone()))?;
            x.push(vec![m.lli, m.lam_ne, m.lam_pe, r.t]);
            y.push(l);
        }
    }
    Ok((x, y))
}

fn fit_gbt(prep: &Prepared, ids: &[String], exp: &ExperimentManifest, seed: u64) -> Result<GbtModel, PipelineError> {
    let (x, y) = gbt_rows(prep, ids)?;
    let names = GBT_INPUTS.iter().map(|s| s.to_string()).collect();
    let cfg = gbt::GbtConfig { seed, ..exp.gbt };
    Ok(gbt::fit(&x, &y, names, &cfg)?.model)
}

fn train_mode(
    space: &FeatureSpace,
    fm: &FeatureMatrix,
    mode: Mode,
    structure: Structure,
    exp: &ExperimentManifest,
    seed: u64,
) -> Result<DeepHpmModel, PipelineError> {
    let ts = training_set(space, fm, mode)?;
    let (mut model, _) = train(&ts, mode, fm.set_kind, structure, &exp.deephpm.train_config(seed))?;
    model.normalization_ref = super::bundle::FEATURES_FILE.into();
    Ok(model)
}

fn mode_rmse_of(model: &DeepHpmModel, space: &FeatureSpace, fm: &FeatureMatrix) -> Result<f64, PipelineError> {
    let pred = model.predict_batch(&space.model_inputs(fm))?;
    super::metrics::rmse(&pred, &true_modes(fm)?[model.mode.index()])
}

fn kind_index(k: SetKind) -> u64 {
    SetKind::ALL.iter().position(|&x| x == k).unwrap_or(0) as u64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceOutcome {
    /// One report per feature set, in manifest order.
    pub reports: Vec<(SetKind, MetricsReport)>,
    /// Splits of the mode-model cells.
    pub mode_plan: SplitPlan,
    /// Splits of the classifier cells.
    pub phase_plan: SplitPlan,
    /// Structure per mode used for all trainings.
    pub structures: [Structure; 3],
    pub search: Vec<(Mode, SearchOutcome)>,
    #[serde(skip)]
    pub bundle: Option<Bundle>,
}

/// Structure per mode: fixed, or searched on the first split's training
/// cells with the last one held out for validation.
fn choose_structures(
    exp: &ExperimentManifest,
    prep: &Prepared,
    plan: &SplitPlan,
    jobs: usize,
) -> Result<([Structure; 3], Vec<(Mode, SearchOutcome)>), PipelineError> {
    let Some(space) = &exp.deephpm.search else {
        return Ok(([exp.deephpm.structure(); 3], Vec::new()));
    };
    let kind = exp.features.bundle_set_kind;
    let fm = &prep.matrices[&kind];
    let fs = &prep.spaces[&kind];
    let train_ids = &plan.repeats[0].train;
    if train_ids.len() < 2 {
        return Err(PipelineError::InsufficientStratum {
            stratum: "search training cells".into(),
            got: train_ids.len(),
            need: 2,
        });
    }
    let (fit_ids, val_ids) = train_ids.split_at(train_ids.len() - 1);
    let fit_fm = rows_of(fm, fit_ids);
    let val_fm = rows_of(fm, val_ids);
    let outcomes: Vec<Result<SearchOutcome, PipelineError>> = with_jobs(jobs, || {
        Mode::ALL
            .par_iter()
            .map(|&mode| {
                let seed = exp.stage_seed("search", mode.index() as u64);
                search_structures(space, seed, |s| {
                    let m = train_mode(
                        fs,
                        &fit_fm,
                        mode,
                        s,
                        exp,
                        exp.stage_seed("search_train", mode.index() as u64),
                    )?;
                    mode_rmse_of(&m, fs, &val_fm)
                })
            })
            .collect()
    });
    let mut structures = [Structure::default(); 3];
    let mut log = Vec::new();
    for (mode, o) in Mode::ALL.into_iter().zip(outcomes) {
        let o = o?;
        structures[mode.index()] = o.best;
        log.push((mode, o));
    }
    Ok((structures, log))
}

/// Mode models per feature set on protocol-B splits, the classifier on
/// protocol-A splits (true modes as inputs), and the deployable bundle
/// trained on all source cells.
pub fn run_source_experiment(
    exp: &ExperimentManifest,
    prep: &Prepared,
    jobs: usize,
) -> Result<SourceOutcome, PipelineError> {
    exp.validate()?;
    let repeats = exp.splits.repeats;
    let mode_plan = make_splits(
        &prep.metas(Scenario::SourceB),
        BalanceCriterion::TemperatureClass,
        repeats,
        exp.stage_seed("source_b_splits", 0),
    )?;
    let phase_plan = make_splits(
        &prep.metas(Scenario::SourceA),
        BalanceCriterion::KneeOccurrence,
        repeats,
        exp.stage_seed("source_a_splits", 0),
    )?;
    let (structures, search) = choose_structures(exp, prep, &mode_plan, jobs)?;

    let kinds = &exp.features.set_kinds;
    let mode_jobs: Vec<(usize, usize, Mode)> = (0..kinds.len())
        .flat_map(|ki| (0..repeats).flat_map(move |r| Mode::ALL.into_iter().map(move |m| (ki, r, m))))
        .collect();
    let b_ids = prep.ids(Scenario::SourceB);
    let a_ids = prep.ids(Scenario::SourceA);
    let bundle_kind = exp.features.bundle_set_kind;
    let (mode_results, gbt_results, bundle_models, bundle_gbt) = with_jobs(jobs, || {
        let mode_results: Vec<Result<Vec<f64>, PipelineError>> = mode_jobs
            .par_iter()
            .map(|&(ki, r, mode)| {
                let kind = kinds[ki];
                let fm = &prep.matrices[&kind];
                let fs = &prep.spaces[&kind];
                let rep = &mode_plan.repeats[r];
                let seed = exp.stage_seed(
                    "source_train",
                    (kind_index(kind) * 1000 + r as u64) * 3 + mode.index() as u64,
                );
                let model = train_mode(fs, &rows_of(fm, &rep.train), mode, structures[mode.index()], exp, seed)?;
                Ok(model.predict_batch(&fs.model_inputs(&rows_of(fm, &rep.test)))?)
            })
            .collect();
        let gbt_results: Vec<Result<(Vec<u8>, Vec<u8>), PipelineError>> = (0..repeats)
            .into_par_iter()
            .map(|r| {
                let rep = &phase_plan.repeats[r];
                let model = fit_gbt(prep, &rep.train, exp, exp.stage_seed("source_gbt", r as u64))?;
                let (x, y) = gbt_rows(prep, &rep.test)?;
                let pred = x.iter().map(|v| model.predict(v)).collect::<Result<Vec<u8>, _>>()?;
                Ok((pred, y))
            })
            .collect();
        let bundle_models: Vec<Result<DeepHpmModel, PipelineError>> = Mode::ALL
            .par_iter()
            .map(|&mode| {
                let fm = rows_of(&prep.matrices[&bundle_kind], &b_ids);
                let seed = exp.stage_seed("bundle_train", mode.index() as u64);
                train_mode(
                    &prep.spaces[&bundle_kind],
                    &fm,
                    mode,
                    structures[mode.index()],
                    exp,
                    seed,
                )
            })
            .collect();
        let bundle_gbt = fit_gbt(prep, &a_ids, exp, exp.stage_seed("bundle_gbt", 0));
        (mode_results, gbt_results, bundle_models, bundle_gbt)
    });

    let mut phases = Vec::with_capacity(repeats);
    for g in gbt_results {
        phases.push(g?);
    }
    let mut preds: BTreeMap<(usize, usize, Mode), Vec<f64>> = BTreeMap::new();
    for (key, res) in mode_jobs.iter().zip(mode_results) {
        preds.insert(*key, res?);
    }
    let mut reports = Vec::new();
    for (ki, &kind) in kinds.iter().enumerate() {
        let fm = &prep.matrices[&kind];
        let mut per_repeat = Vec::with_capacity(repeats);
        for r in 0..repeats {
            let truth = true_modes(&rows_of(fm, &mode_plan.repeats[r].test))?;
            let pred = [
                preds[&(ki, r, Mode::Lli)].clone(),
                preds[&(ki, r, Mode::LamNe)].clone(),
                preds[&(ki, r, Mode::LamPe)].clone(),
            ];
            let (pp, tp) = &phases[r];
            per_repeat.push(compute_metrics(r, &pred, &truth, pp, tp)?);
        }
        reports.push((
            kind,
            MetricsReport::from_repeats(format!("source_{}", kind.label()), per_repeat),
        ));
    }
    let mut models = Vec::with_capacity(3);
    for m in bundle_models {
        models.push(m?);
    }
    let models: [DeepHpmModel; 3] = models.try_into().expect("three modes");
    let bundle = Bundle::new(
        prep.spaces[&bundle_kind].clone(),
        models,
        bundle_gbt?,
        exp.seed,
        b_ids,
        a_ids,
        exp.knee,
    )?;
    Ok(SourceOutcome {
        reports,
        mode_plan,
        phase_plan,
        structures,
        search,
        bundle: Some(bundle),
    })
}

/// One scenario's cells under a bundle's own feature space.
pub(crate) struct ScenarioData {
    pub metas: Vec<crate::data::CellMeta>,
    pub fm: FeatureMatrix,
    pub timelines: BTreeMap<String, PhaseTimeline>,
    pub times: BTreeMap<String, Vec<f64>>,
}

impl ScenarioData {
    pub fn new(cells: &[CellData], bundle: &Bundle, scenario: Scenario) -> Result<Self, PipelineError> {
        let mut target: Vec<&CellData> = cells.iter().filter(|c| c.meta.scenario == scenario).collect();
        target.sort_by(|a, b| a.meta.cell_id.cmp(&b.meta.cell_id));
        let knee = bundle.meta.knee.config();
        let mut timelines = BTreeMap::new();
        let mut times = BTreeMap::new();
        for c in &target {
            timelines.insert(c.meta.cell_id.clone(), label_cell(c, &knee)?);
            times.insert(c.meta.cell_id.clone(), c.rpts.iter().map(|r| r.t).collect());
        }
        let pairs: Vec<_> = target.iter().map(|c| (&c.log, &c.rpts[..])).collect();
        let fm = feature_matrix(
            &pairs,
            bundle.space.set_kind,
            &bundle.space.voltage_bounds,
            &bundle.space.current_bounds,
        )?;
        Ok(Self {
            metas: target.iter().map(|c| c.meta.clone()).collect(),
            fm,
            timelines,
            times,
        })
    }

    pub fn status(&self, id: &str) -> KneeStatus {
        self.metas
            .iter()
            .find(|m| m.cell_id == id)
            .map_or(KneeStatus::Unknown, |m| m.knee_occurred)
    }

    pub fn plan(&self, exp: &ExperimentManifest) -> Result<SplitPlan, PipelineError> {
        make_splits(
            &self.metas,
            BalanceCriterion::KneeOccurrence,
            exp.splits.repeats,
            exp.stage_seed("target_splits", 0),
        )
    }

    pub fn rows(&self, ids: &[String]) -> FeatureMatrix {
        rows_of(&self.fm, ids)
    }

    pub fn phases(&self, fm: &FeatureMatrix) -> Result<Vec<u8>, PipelineError> {
        true_phases(&self.timelines, &|id| self.times.get(id).cloned(), fm)
    }

    /// Metrics of `bundle` on `fm`, with raw rows optionally replaced.
    pub fn evaluate(
        &self,
        bundle: &Bundle,
        fm: &FeatureMatrix,
        rows: Option<&[Vec<f64>]>,
        repeat: usize,
    ) -> Result<RepeatMetrics, PipelineError> {
        let pred = bundle.predict_modes_rows(rows.unwrap_or(&fm.rows))?;
        let t: Vec<f64> = fm.keys.iter().map(|k| k.t).collect();
        let phase_pred = classify_phases(&bundle.gbt, &pred, &t)?;
        compute_metrics(repeat, &pred, &true_modes(fm)?, &phase_pred, &self.phases(fm)?)
    }
}

fn bit_identical(a: &Mlp, b: &Mlp) -> bool {
    let bits = |m: &Mlp| -> Vec<u64> {
        m.layers()
            .iter()
            .flat_map(|l| {
                l.weight
                    .iter()
                    .chain(l.bias.iter())
                    .map(|v| v.to_bits())
                    .collect::<Vec<_>>()
            })
            .collect()
    };
    a.layers().len() == b.layers().len() && bits(a) == bits(b)
}

/// Fine-tunes every surrogate of `bundle` on `cells` and checks that the
/// dynamics networks did not move.
pub(crate) fn fine_tune_bundle(
    exp: &ExperimentManifest,
    bundle: &Bundle,
    data: &ScenarioData,
    cells: &[String],
    seed_index: u64,
) -> Result<Bundle, PipelineError> {
    if cells.is_empty() {
        return Ok(bundle.clone());
    }
    let fm = data.rows(cells);
    let mut models = Vec::with_capacity(3);
    for mode in Mode::ALL {
        let pre = &bundle.models[mode.index()];
        let ts = training_set(&bundle.space, &fm, mode)?;
        let cfg = exp
            .deephpm
            .fine_tune_config(exp.stage_seed("fine_tune", seed_index * 3 + mode.index() as u64));
        let (tuned, _) = fine_tune(pre, &ts, &cfg)?;
        if !bit_identical(&pre.dynamics, &tuned.dynamics) {
            return Err(PipelineError::FreezeViolation(mode.name().into()));
        }
        models.push(tuned);
    }
    let models: [DeepHpmModel; 3] = models.try_into().expect("three modes");
    Ok(bundle.with_models(models, cells.to_vec()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FineTuneRecord {
    pub regime: Regime,
    pub repeat: usize,
    pub cells: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetOutcome {
    pub plan: SplitPlan,
    /// One report per regime, in manifest order.
    pub reports: Vec<(Regime, MetricsReport)>,
    pub fine_tunes: Vec<FineTuneRecord>,
    /// Mode models whose frozen dynamics network was verified unchanged.
    pub freeze_checks: usize,
}

/// Seed slot of a regime's fine-tune on repeat `r`.
pub(crate) fn fine_tune_slot(regime: Regime, r: usize) -> u64 {
    regime_index(regime) * 1000 + r as u64
}

fn regime_index(r: Regime) -> u64 {
    Regime::ALL.iter().position(|&x| x == r).unwrap_or(0) as u64
}

/// Evaluates the pre-trained bundle and its fine-tuned variants on the
/// target test cells of every split.
pub fn run_target_experiment(
    exp: &ExperimentManifest,
    cells: &[CellData],
    bundle: &Bundle,
    jobs: usize,
) -> Result<TargetOutcome, PipelineError> {
    exp.validate()?;
    let data = ScenarioData::new(cells, bundle, Scenario::Target)?;
    let plan = data.plan(exp)?;
    let mut tasks = Vec::new();
    for &regime in &exp.target.regimes {
        for rep in &plan.repeats {
            let ft = regime.select(&rep.train, |id| data.status(id))?;
            tasks.push((regime, rep.repeat, ft));
        }
    }
    let results: Vec<Result<RepeatMetrics, PipelineError>> = with_jobs(jobs, || {
        tasks
            .par_iter()
            .map(|(regime, r, ft)| {
                let seed_index = fine_tune_slot(*regime, *r);
                let tuned = fine_tune_bundle(exp, bundle, &data, ft, seed_index)?;
                let test = data.rows(&plan.repeats[*r].test);
                data.evaluate(&tuned, &test, None, *r)
            })
            .collect()
    });
    let mut by_regime: BTreeMap<Regime, Vec<RepeatMetrics>> = BTreeMap::new();
    let mut fine_tunes = Vec::new();
    let mut freeze_checks = 0;
    for ((regime, r, ft), res) in tasks.into_iter().zip(results) {
        by_regime.entry(regime).or_default().push(res?);
        if !ft.is_empty() {
            freeze_checks += 3;
        }
        fine_tunes.push(FineTuneRecord {
            regime,
            repeat: r,
            cells: ft,
        });
    }
    let reports = exp
        .target
        .regimes
        .iter()
        .map(|&reg| {
            let reps = by_regime.remove(&reg).unwrap_or_default();
            (reg, MetricsReport::from_repeats(format!("target_{}", reg.name()), reps))
        })
        .collect();
    Ok(TargetOutcome {
        plan,
        reports,
        fine_tunes,
        freeze_checks,
    })
}

fn scenario_name(s: Scenario) -> &'static str {
    match s {
        Scenario::SourceA => "source_a",
        Scenario::SourceB => "source_b",
        Scenario::Target => "target",
    }
}

/// Metrics of one bundle on all cells of each scenario present, as a
/// single-repeat report per scenario.
pub fn evaluate_bundle(cells: &[CellData], bundle: &Bundle) -> Result<Vec<(Scenario, MetricsReport)>, PipelineError> {
    let mut out = Vec::new();
    for scenario in [Scenario::SourceA, Scenario::SourceB, Scenario::Target] {
        let data = ScenarioData::new(cells, bundle, scenario)?;
        if data.metas.is_empty() {
            continue;
        }
        let ids: Vec<String> = data.metas.iter().map(|m| m.cell_id.clone()).collect();
        let m = data.evaluate(bundle, &data.rows(&ids), None, 0)?;
        out.push((
            scenario,
            MetricsReport::from_repeats(format!("bundle_{}", scenario_name(scenario)), vec![m]),
        ));
    }
    Ok(out)
}

/// Bundle fine-tuned on the target cells `regime` selects from all target
/// cells in id order.
pub fn deploy_fine_tuned(
    exp: &ExperimentManifest,
    cells: &[CellData],
    bundle: &Bundle,
    regime: Regime,
) -> Result<Bundle, PipelineError> {
    let data = ScenarioData::new(cells, bundle, Scenario::Target)?;
    let ids: Vec<String> = data.metas.iter().map(|m| m.cell_id.clone()).collect();
    let ft = regime.select(&ids, |id| data.status(id))?;
    fine_tune_bundle(exp, bundle, &data, &ft, 99_999)
}
