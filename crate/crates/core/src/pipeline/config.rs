//! Experiment manifest: one TOML file describing a full run.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::robustness::RobustnessCase;
use super::search::SearchSpace;
use super::splits::{Regime, DEFAULT_REPEATS};
use super::{io_err, PipelineError};
use crate::deephpm::{Frozen, Structure, TrainConfig};
use crate::features::SetKind;
use crate::gbt::GbtConfig;
use crate::knee::{
    KneeConfig, Smoothing, DEFAULT_GCV_PENALTY, DEFAULT_GRID, DEFAULT_KNEE_THRESHOLD, DEFAULT_ONSET_THRESHOLD,
};
use crate::optim::AdamConfig;
use crate::seeds::derive_seed;
use crate::synth::FleetConfig;

pub const EXPERIMENT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    /// Dataset manifest, relative to the experiment manifest.
    pub manifest: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeaturesSection {
    /// Feature sets compared in the source experiment.
    pub set_kinds: Vec<SetKind>,
    /// Feature set of the deployed bundle.
    pub bundle_set_kind: SetKind,
}

impl Default for FeaturesSection {
    fn default() -> Self {
        Self {
            set_kinds: SetKind::ALL.to_vec(),
            bundle_set_kind: SetKind::Iv17,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeepHpmSection {
    pub layers: usize,
    pub neurons: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub w_u: f64,
    pub w_h: f64,
    pub w_ht: f64,
    pub midpoint_collocation: bool,
    pub fine_tune_epochs: usize,
    pub fine_tune_learning_rate: f64,
    /// When present, the structure is searched instead of fixed.
    pub search: Option<SearchSpace>,
}

impl Default for DeepHpmSection {
    fn default() -> Self {
        let s = Structure::default();
        let t = TrainConfig::default();
        Self {
            layers: s.layers,
            neurons: s.neurons,
            epochs: t.epochs,
            learning_rate: t.adam.learning_rate,
            w_u: t.w_u,
            w_h: t.w_h,
            w_ht: t.w_ht,
            midpoint_collocation: t.midpoint_collocation,
            fine_tune_epochs: 500,
            fine_tune_learning_rate: t.adam.learning_rate,
            search: None,
        }
    }
}

impl DeepHpmSection {
    pub fn structure(&self) -> Structure {
        Structure {
            layers: self.layers,
            neurons: self.neurons,
        }
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            adam: AdamConfig {
                learning_rate: self.learning_rate,
                ..AdamConfig::default()
            },
            w_u: self.w_u,
            w_h: self.w_h,
            w_ht: self.w_ht,
            seed,
            frozen: Frozen::None,
            midpoint_collocation: self.midpoint_collocation,
        }
    }

    pub fn fine_tune_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.fine_tune_epochs,
            adam: AdamConfig {
                learning_rate: self.fine_tune_learning_rate,
                ..AdamConfig::default()
            },
            frozen: Frozen::Dynamics,
            ..self.train_config(seed)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KneeSection {
    pub knee_threshold: f64,
    pub onset_threshold: f64,
    /// Degrees-of-freedom inflation of the smoothing criterion; 1 is plain GCV.
    pub gcv_penalty: f64,
}

impl Default for KneeSection {
    fn default() -> Self {
        Self {
            knee_threshold: DEFAULT_KNEE_THRESHOLD,
            onset_threshold: DEFAULT_ONSET_THRESHOLD,
            gcv_penalty: DEFAULT_GCV_PENALTY,
        }
    }
}

impl KneeSection {
    pub fn config(&self) -> KneeConfig {
        KneeConfig {
            knee_threshold: self.knee_threshold,
            onset_threshold: self.onset_threshold,
            grid_points: DEFAULT_GRID,
            smoothing: Smoothing::PenalizedGcv(self.gcv_penalty),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitsSection {
    pub repeats: usize,
}

impl Default for SplitsSection {
    fn default() -> Self {
        Self {
            repeats: DEFAULT_REPEATS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TargetSection {
    pub regimes: Vec<Regime>,
    /// Fine-tuning regime of the deployed target bundle.
    pub deploy_regime: Regime,
}

impl Default for TargetSection {
    fn default() -> Self {
        Self {
            regimes: Regime::ALL.to_vec(),
            deploy_regime: Regime::OneKnee,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RobustnessSection {
    pub cases: Vec<RobustnessCase>,
    /// Noise draws per repeat and noise case.
    pub noise_seeds: usize,
    /// Fine-tuning regime of the models under test.
    pub regime: Regime,
}

impl Default for RobustnessSection {
    fn default() -> Self {
        Self {
            cases: RobustnessCase::ALL.to_vec(),
            noise_seeds: 10,
            regime: Regime::OneKnee,
        }
    }
}

/// Synthetic fleet written by `synth-gen`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    pub cells_per_scenario: usize,
    pub sample_period_s: f64,
    pub n_rpts: usize,
    pub horizon_h: f64,
}

impl Default for SynthSection {
    fn default() -> Self {
        let f = FleetConfig::default();
        Self {
            cells_per_scenario: f.cells_per_scenario,
            sample_period_s: f.sample_period_s,
            n_rpts: f.n_rpts,
            horizon_h: f.horizon_h,
        }
    }
}

impl SynthSection {
    pub fn fleet_config(&self, seed: u64) -> FleetConfig {
        FleetConfig {
            seed,
            cells_per_scenario: self.cells_per_scenario,
            sample_period_s: self.sample_period_s,
            n_rpts: self.n_rpts,
            horizon_h: self.horizon_h,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentManifest {
    pub schema_version: u32,
    pub seed: u64,
    pub dataset: DatasetSection,
    #[serde(default)]
    pub features: FeaturesSection,
    #[serde(default)]
    pub deephpm: DeepHpmSection,
    #[serde(default)]
    pub gbt: GbtConfig,
    #[serde(default)]
    pub knee: KneeSection,
    #[serde(default)]
    pub splits: SplitsSection,
    #[serde(default)]
    pub target: TargetSection,
    #[serde(default)]
    pub robustness: RobustnessSection,
    #[serde(default)]
    pub synth: SynthSection,
}

impl ExperimentManifest {
    /// Defaults around a dataset path.
    pub fn new(dataset_manifest: impl Into<PathBuf>, seed: u64) -> Self {
        Self {
            schema_version: EXPERIMENT_SCHEMA_VERSION,
            seed,
            dataset: DatasetSection {
                manifest: dataset_manifest.into(),
            },
            features: FeaturesSection::default(),
            deephpm: DeepHpmSection::default(),
            gbt: GbtConfig::default(),
            knee: KneeSection::default(),
            splits: SplitsSection::default(),
            target: TargetSection::default(),
            robustness: RobustnessSection::default(),
            synth: SynthSection::default(),
        }
    }

    /// Parses and validates; relative dataset paths resolve against the
    /// manifest's directory.
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        let mut m = Self::parse(&text)?;
        if m.dataset.manifest.is_relative() {
            let base = path.parent().unwrap_or(Path::new("."));
            m.dataset.manifest = base.join(&m.dataset.manifest);
        }
        Ok(m)
    }

    pub fn parse(text: &str) -> Result<Self, PipelineError> {
        let m: Self = toml::from_str(text).map_err(|e| PipelineError::InvalidConfig(e.to_string()))?;
        m.validate()?;
        Ok(m)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("manifest serializes")
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |s: &str| Err(PipelineError::InvalidConfig(s.into()));
        if self.schema_version != EXPERIMENT_SCHEMA_VERSION {
            return bad(&format!("unsupported schema version {}", self.schema_version));
        }
        if self.seed > i64::MAX as u64 {
            return bad("seed must be <= 2^63 - 1");
        }
        if self.features.set_kinds.is_empty() {
            return bad("features.set_kinds is empty");
        }
        let d = &self.deephpm;
        if d.layers == 0 || d.neurons == 0 {
            return bad("deephpm layers and neurons must be >= 1");
        }
        if d.epochs == 0 {
            return bad("deephpm.epochs must be >= 1");
        }
        if !(d.fine_tune_learning_rate > 0.0 && d.fine_tune_learning_rate.is_finite()) {
            return bad("deephpm.fine_tune_learning_rate must be > 0");
        }
        d.train_config(0).validate()?;
        if let Some(s) = &d.search {
            s.validate()?;
        }
        self.gbt.validate()?;
        let k = &self.knee;
        if !(k.knee_threshold > 0.0 && k.onset_threshold > 0.0) {
            return bad("knee thresholds must be > 0");
        }
        if !(k.gcv_penalty >= 1.0 && k.gcv_penalty.is_finite()) {
            return bad("knee.gcv_penalty must be >= 1");
        }
        if self.splits.repeats == 0 {
            return bad("splits.repeats must be >= 1");
        }
        if self.target.regimes.is_empty() {
            return bad("target.regimes is empty");
        }
        let mut regimes = self.target.regimes.clone();
        regimes.sort();
        regimes.dedup();
        if regimes.len() != self.target.regimes.len() {
            return bad("target.regimes has duplicates");
        }
        let mut cases = self.robustness.cases.clone();
        cases.sort();
        cases.dedup();
        if cases.len() != self.robustness.cases.len() {
            return bad("robustness.cases has duplicates");
        }
        let f = &self.synth;
        if f.cells_per_scenario < 4 || f.n_rpts < 8 {
            return bad("synth needs >= 4 cells per scenario and >= 8 RPTs");
        }
        if !(f.sample_period_s > 0.0 && f.horizon_h > 0.0) {
            return bad("synth sample_period_s and horizon_h must be > 0");
        }
        if self.robustness.noise_seeds == 0 {
            return bad("robustness.noise_seeds must be >= 1");
        }
        if self.robustness.cases.contains(&RobustnessCase::MissingExtremes)
            && self.features.bundle_set_kind != SetKind::Iv17
        {
            return bad("missing_extremes needs bundle_set_kind = IV17");
        }
        Ok(())
    }

    /// Seed for a named, indexed stage of the run.
    pub fn stage_seed(&self, tag: &str, index: u64) -> u64 {
        derive_seed(self.seed, tag, index)
    }
}
