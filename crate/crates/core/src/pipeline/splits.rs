//! Stratified, seeded train/test splits over cells.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::data::{CellMeta, KneeStatus, TempClass};
use crate::seeds::derive_seed;

pub const DEFAULT_REPEATS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BalanceCriterion {
    /// Half of every temperature class goes to test.
    TemperatureClass,
    /// One cell with and one without a knee go to test.
    KneeOccurrence,
}

/// Amount of target data used to fine-tune the surrogates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    None,
    OneNoKnee,
    OneKnee,
    TwoCells,
}

impl Regime {
    pub const ALL: [Regime; 4] = [Regime::None, Regime::OneNoKnee, Regime::OneKnee, Regime::TwoCells];

    pub fn name(self) -> &'static str {
        match self {
            Regime::None => "none",
            Regime::OneNoKnee => "one_no_knee",
            Regime::OneKnee => "one_knee",
            Regime::TwoCells => "two_cells",
        }
    }

    /// Fine-tuning cells taken from `train` in order: the first cell of
    /// each required knee status.
    pub fn select(self, train: &[String], status: impl Fn(&str) -> KneeStatus) -> Result<Vec<String>, PipelineError> {
        let first = |want: KneeStatus| {
            train
                .iter()
                .find(|id| status(id) == want)
                .cloned()
                .ok_or_else(|| PipelineError::InsufficientStratum {
                    stratum: format!("train cells with knee {want:?}"),
                    got: 0,
                    need: 1,
                })
        };
        Ok(match self {
            Regime::None => Vec::new(),
            Regime::OneNoKnee => vec![first(KneeStatus::No)?],
            Regime::OneKnee => vec![first(KneeStatus::Yes)?],
            Regime::TwoCells => vec![first(KneeStatus::No)?, first(KneeStatus::Yes)?],
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitRepeat {
    pub repeat: usize,
    /// Training cells in random order.
    pub train: Vec<String>,
    /// Test cells sorted by id.
    pub test: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub criterion: BalanceCriterion,
    pub seed: u64,
    pub repeats: Vec<SplitRepeat>,
}

/// Draws `repeats` independent stratified splits.
///
/// Cells whose knee status is unknown always train under
/// [`BalanceCriterion::KneeOccurrence`].
pub fn make_splits(
    cells: &[CellMeta],
    criterion: BalanceCriterion,
    repeats: usize,
    seed: u64,
) -> Result<SplitPlan, PipelineError> {
    if repeats == 0 {
        return Err(PipelineError::InvalidConfig("repeats must be >= 1".into()));
    }
    let mut sorted: Vec<&CellMeta> = cells.iter().collect();
    sorted.sort_by(|a, b| a.cell_id.cmp(&b.cell_id));
    let ids = |pred: &dyn Fn(&CellMeta) -> bool| -> Vec<String> {
        sorted.iter().filter(|c| pred(c)).map(|c| c.cell_id.clone()).collect()
    };
    // (stratum members, number sent to test)
    let mut strata: Vec<(String, Vec<String>, usize)> = Vec::new();
    let mut always_train = Vec::new();
    match criterion {
        BalanceCriterion::TemperatureClass => {
            for class in TempClass::ALL {
                let members = ids(&|c| c.ambient_temp_class == class);
                match members.len() {
                    0 => {}
                    // a lone cell cannot sit on both sides of the split
                    1 => {
                        log::warn!("temperature {class:?} has one cell; it stays in train");
                        always_train.extend(members);
                    }
                    n => strata.push((format!("temperature {class:?}"), members, n / 2)),
                }
            }
            if strata.is_empty() {
                return Err(PipelineError::InsufficientStratum {
                    stratum: "every temperature class".into(),
                    got: sorted.len().min(1),
                    need: 2,
                });
            }
        }
        BalanceCriterion::KneeOccurrence => {
            for status in [KneeStatus::Yes, KneeStatus::No] {
                let members = ids(&|c| c.knee_occurred == status);
                strata.push((format!("knee {status:?}"), members, 1));
            }
            always_train = ids(&|c| c.knee_occurred == KneeStatus::Unknown);
        }
    }
    for (name, members, _) in &strata {
        if members.len() < 2 {
            return Err(PipelineError::InsufficientStratum {
                stratum: name.clone(),
                got: members.len(),
                need: 2,
            });
        }
    }
    let tag = match criterion {
        BalanceCriterion::TemperatureClass => "split_temperature",
        BalanceCriterion::KneeOccurrence => "split_knee",
    };
    let plan = (0..repeats)
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, tag, r as u64));
            let mut train = always_train.clone();
            let mut test = Vec::new();
            for (_, members, k) in &strata {
                let mut m = members.clone();
                m.shuffle(&mut rng);
                test.extend_from_slice(&m[..*k]);
                train.extend_from_slice(&m[*k..]);
            }
            train.shuffle(&mut rng);
            test.sort();
            SplitRepeat { repeat: r, train, test }
        })
        .collect();
    Ok(SplitPlan {
        criterion,
        seed,
        repeats: plan,
    })
}
