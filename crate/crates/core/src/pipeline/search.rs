//! Hyperparameter search over network structures with cached evaluations.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::deephpm::Structure;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampler {
    /// Uniform draws from the grid.
    Random,
    /// Tree-structured Parzen estimator over grid indices.
    Tpe,
    /// Every grid point once, in order; `trials` is ignored.
    Exhaustive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchSpace {
    pub layers: Vec<usize>,
    pub neurons: Vec<usize>,
    pub trials: usize,
    pub sampler: Sampler,
}

impl Default for SearchSpace {
    fn default() -> Self {
        Self {
            layers: vec![2, 4, 6, 8],
            neurons: vec![32, 40, 48, 56, 64],
            trials: 50,
            sampler: Sampler::Random,
        }
    }
}

impl SearchSpace {
    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.layers.is_empty() || self.neurons.is_empty() {
            return Err(PipelineError::InvalidConfig("search grid is empty".into()));
        }
        if self.layers.contains(&0) || self.neurons.contains(&0) {
            return Err(PipelineError::InvalidConfig("search grid values must be >= 1".into()));
        }
        if self.trials == 0 && self.sampler != Sampler::Exhaustive {
            return Err(PipelineError::InvalidConfig("trials must be >= 1".into()));
        }
        Ok(())
    }

    fn structure(&self, (li, ni): (usize, usize)) -> Structure {
        Structure {
            layers: self.layers[li],
            neurons: self.neurons[ni],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub index: usize,
    pub structure: Structure,
    pub objective: f64,
    /// Reused an earlier evaluation of the same structure.
    pub cached: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchOutcome {
    pub best: Structure,
    pub best_objective: f64,
    pub trials: Vec<Trial>,
}

const TPE_STARTUP: usize = 10;
const TPE_GOOD_FRACTION: f64 = 0.25;
const TPE_BANDWIDTH: f64 = 1.0;

/// Discrete Parzen density over `0..n` from observed indices, with one
/// uniform pseudo-observation as prior.
fn parzen(n: usize, obs: &[usize]) -> Vec<f64> {
    let mut p: Vec<f64> = (0..n)
        .map(|i| {
            1.0 / n as f64
                + obs
                    .iter()
                    .map(|&o| {
                        let d = (i as f64 - o as f64) / TPE_BANDWIDTH;
                        (-0.5 * d * d).exp()
                    })
                    .sum::<f64>()
        })
        .collect();
    let s: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= s);
    p
}

fn tpe_propose(space: &SearchSpace, history: &[((usize, usize), f64)], rng: &mut ChaCha8Rng) -> (usize, usize) {
    let mut sorted: Vec<&((usize, usize), f64)> = history.iter().collect();
    sorted.sort_by(|a, b| a.1.total_cmp(&b.1));
    let n_good = ((sorted.len() as f64 * TPE_GOOD_FRACTION).ceil() as usize).max(1);
    let (good, bad) = sorted.split_at(n_good);
    let dens = |set: &[&((usize, usize), f64)]| {
        let li: Vec<usize> = set.iter().map(|h| h.0 .0).collect();
        let ni: Vec<usize> = set.iter().map(|h| h.0 .1).collect();
        (parzen(space.layers.len(), &li), parzen(space.neurons.len(), &ni))
    };
    let (gl, gn) = dens(good);
    let (bl, bn) = dens(bad);
    let mut best = Vec::new();
    let mut best_score = f64::NEG_INFINITY;
    for li in 0..space.layers.len() {
        for ni in 0..space.neurons.len() {
            let score = (gl[li] * gn[ni]) / (bl[li] * bn[ni]);
            if score > best_score {
                best_score = score;
                best = vec![(li, ni)];
            } else if score == best_score {
                best.push((li, ni));
            }
        }
    }
    *best.choose(rng).expect("non-empty grid")
}

/// Minimizes `objective` over the grid; non-finite objectives rank last
/// and ties keep the earliest trial.
pub fn search_structures(
    space: &SearchSpace,
    seed: u64,
    mut objective: impl FnMut(Structure) -> Result<f64, PipelineError>,
) -> Result<SearchOutcome, PipelineError> {
    space.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let grid: Vec<(usize, usize)> = (0..space.layers.len())
        .flat_map(|l| (0..space.neurons.len()).map(move |n| (l, n)))
        .collect();
    let n_trials = match space.sampler {
        Sampler::Exhaustive => grid.len(),
        _ => space.trials,
    };
    let mut cache: BTreeMap<Structure, f64> = BTreeMap::new();
    let mut history: Vec<((usize, usize), f64)> = Vec::new();
    let mut trials = Vec::with_capacity(n_trials);
    for index in 0..n_trials {
        let point = match space.sampler {
            Sampler::Exhaustive => grid[index],
            Sampler::Random => *grid.choose(&mut rng).expect("non-empty grid"),
            Sampler::Tpe if history.len() < TPE_STARTUP => *grid.choose(&mut rng).expect("non-empty grid"),
            Sampler::Tpe => tpe_propose(space, &history, &mut rng),
        };
        let structure = space.structure(point);
        let (value, cached) = match cache.get(&structure) {
            Some(&v) => (v, true),
            None => {
                let v = objective(structure)?;
                let v = if v.is_finite() { v } else { f64::INFINITY };
                cache.insert(structure, v);
                (v, false)
            }
        };
        history.push((point, value));
        trials.push(Trial {
            index,
            structure,
            objective: value,
            cached,
        });
    }
    let best = trials
        .iter()
        .fold(None::<&Trial>, |acc, t| match acc {
            Some(b) if b.objective <= t.objective => Some(b),
            _ => Some(t),
        })
        .expect("at least one trial");
    Ok(SearchOutcome {
        best: best.structure,
        best_objective: best.objective,
        trials,
    })
}
