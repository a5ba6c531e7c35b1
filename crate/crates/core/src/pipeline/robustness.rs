//! Input perturbations on the target test cells: Gaussian feature noise
//! and zeroed extreme-range histogram cells.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::bundle::Bundle;
use super::config::ExperimentManifest;
use super::experiment::{fine_tune_bundle, fine_tune_slot, ScenarioData};
use super::metrics::{MetricsReport, PhaseMetrics, RepeatMetrics};
use super::splits::Regime;
use super::{with_jobs, PipelineError};
use crate::features::{SetKind, EXTREME_FEATURES};
use crate::gbt::N_CLASSES;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RobustnessCase {
    /// Noise variance 0.04 times the source variance of each feature.
    #[serde(rename = "noise_0_04")]
    Noise004,
    /// Noise variance 0.25 times the source variance of each feature.
    #[serde(rename = "noise_0_25")]
    Noise025,
    #[serde(rename = "missing_extremes")]
    MissingExtremes,
}

impl RobustnessCase {
    pub const ALL: [RobustnessCase; 3] = [
        RobustnessCase::Noise004,
        RobustnessCase::Noise025,
        RobustnessCase::MissingExtremes,
    ];

    pub fn name(self) -> &'static str {
        match self {
            RobustnessCase::Noise004 => "noise_0_04",
            RobustnessCase::Noise025 => "noise_0_25",
            RobustnessCase::MissingExtremes => "missing_extremes",
        }
    }

    pub fn variance_factor(self) -> Option<f64> {
        match self {
            RobustnessCase::Noise004 => Some(0.04),
            RobustnessCase::Noise025 => Some(0.25),
            RobustnessCase::MissingExtremes => None,
        }
    }
}

/// Adds `N(0, factor·σ_j²)` to every histogram column; calendar time is
/// left untouched.
pub fn add_feature_noise(rows: &[Vec<f64>], source_std: &[f64], variance_factor: f64, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = variance_factor.sqrt();
    rows.iter()
        .map(|r| {
            let m = r.len() - 1;
            let mut out = r.clone();
            for j in 0..m {
                let z: f64 = StandardNormal.sample(&mut rng);
                out[j] += scale * source_std[j] * z;
            }
            out
        })
        .collect()
}

/// Zeroes the four extreme-range histogram cells.
pub fn zero_extremes(rows: &[Vec<f64>], set_kind: SetKind) -> Result<Vec<Vec<f64>>, PipelineError> {
    let cols: Vec<usize> = EXTREME_FEATURES
        .iter()
        .map(|name| {
            set_kind
                .names()
                .iter()
                .position(|n| n == name)
                .ok_or_else(|| PipelineError::InvalidConfig(format!("feature set {set_kind} has no {name}")))
        })
        .collect::<Result<_, _>>()?;
    Ok(rows
        .iter()
        .map(|r| {
            let mut out = r.clone();
            for &j in &cols {
                out[j] = 0.0;
            }
            out
        })
        .collect())
}

/// Element-wise mean of metrics over noise draws; confusion counts are summed.
fn average(repeat: usize, draws: &[RepeatMetrics]) -> RepeatMetrics {
    let n = draws.len() as f64;
    let mut confusion = [[0usize; N_CLASSES]; N_CLASSES];
    let mut mode_rmse = [0.0; 3];
    let (mut precision, mut recall, mut f1) = ([0.0; N_CLASSES], [0.0; N_CLASSES], [0.0; N_CLASSES]);
    let mut accuracy = 0.0;
    for d in draws {
        for k in 0..N_CLASSES {
            mode_rmse[k] += d.mode_rmse[k] / n;
            precision[k] += d.phase.precision[k] / n;
            recall[k] += d.phase.recall[k] / n;
            f1[k] += d.phase.f1[k] / n;
            for j in 0..N_CLASSES {
                confusion[k][j] += d.phase.confusion[k][j];
            }
        }
        accuracy += d.phase.accuracy / n;
    }
    RepeatMetrics {
        repeat,
        mode_rmse,
        phase: PhaseMetrics {
            confusion,
            precision,
            recall,
            f1,
            accuracy,
        },
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessOutcome {
    pub regime: Regime,
    pub clean: MetricsReport,
    /// One report per case, in manifest order; noise cases average their
    /// draws within each repeat.
    pub cases: Vec<(RobustnessCase, MetricsReport)>,
}

/// Clean and perturbed metrics of the bundle, fine-tuned per the
/// manifest's robustness regime on each target split.
pub fn robustness_suite(
    exp: &ExperimentManifest,
    cells: &[crate::data::CellData],
    bundle: &Bundle,
    jobs: usize,
) -> Result<RobustnessOutcome, PipelineError> {
    exp.validate()?;
    let data = ScenarioData::new(cells, bundle, crate::data::Scenario::Target)?;
    let plan = data.plan(exp)?;
    let regime = exp.robustness.regime;
    let cases = &exp.robustness.cases;
    let n_seeds = exp.robustness.noise_seeds;
    let per_repeat: Vec<Result<(RepeatMetrics, Vec<RepeatMetrics>), PipelineError>> = with_jobs(jobs, || {
        plan.repeats
            .par_iter()
            .map(|rep| {
                let r = rep.repeat;
                let ft = regime.select(&rep.train, |id| data.status(id))?;
                let tuned = fine_tune_bundle(exp, bundle, &data, &ft, fine_tune_slot(regime, r))?;
                let test = data.rows(&rep.test);
                let clean = data.evaluate(&tuned, &test, None, r)?;
                let mut out = Vec::with_capacity(cases.len());
                for &case in cases {
                    let m = match case.variance_factor() {
                        Some(k) => {
                            let mut draws = Vec::with_capacity(n_seeds);
                            for s in 0..n_seeds {
                                let seed = exp.stage_seed(case.name(), (r * 10_000 + s) as u64);
                                let rows = add_feature_noise(&test.rows, &tuned.space.source_std, k, seed);
                                draws.push(data.evaluate(&tuned, &test, Some(&rows), r)?);
                            }
                            average(r, &draws)
                        }
                        None => {
                            let rows = zero_extremes(&test.rows, tuned.space.set_kind)?;
                            data.evaluate(&tuned, &test, Some(&rows), r)?
                        }
                    };
                    out.push(m);
                }
                Ok((clean, out))
            })
            .collect()
    });
    let mut clean = Vec::new();
    let mut by_case: Vec<Vec<RepeatMetrics>> = vec![Vec::new(); cases.len()];
    for res in per_repeat {
        let (c, ms) = res?;
        clean.push(c);
        for (i, m) in ms.into_iter().enumerate() {
            by_case[i].push(m);
        }
    }
    Ok(RobustnessOutcome {
        regime,
        clean: MetricsReport::from_repeats("robustness_clean", clean),
        cases: cases
            .iter()
            .zip(by_case)
            .map(|(&c, reps)| (c, MetricsReport::from_repeats(format!("robustness_{}", c.name()), reps)))
            .collect(),
    })
}
