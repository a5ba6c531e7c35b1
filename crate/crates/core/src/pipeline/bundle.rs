//! Deployable model bundle: feature space, three mode models and the
//! phase classifier, stored as one directory.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::KneeSection;
use super::{io_err, PipelineError};
use crate::data::Mode;
use crate::deephpm::DeepHpmModel;
use crate::features::{FeatureMatrix, FeatureSpace, SetKind};
use crate::gbt::GbtModel;

pub const BUNDLE_SCHEMA_VERSION: u32 = 1;
pub const BUNDLE_FILE: &str = "bundle.toml";
pub const FEATURES_FILE: &str = "features.toml";
pub const GBT_FILE: &str = "gbt.json";
/// Classifier inputs: the three modes and calendar time in hours.
pub const GBT_INPUTS: [&str; 4] = ["lli", "lam_ne", "lam_pe", "t"];

pub fn model_file(mode: Mode) -> &'static str {
    match mode {
        Mode::Lli => "deephpm_lli.json",
        Mode::LamNe => "deephpm_lam_ne.json",
        Mode::LamPe => "deephpm_lam_pe.json",
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleMeta {
    pub schema_version: u32,
    pub set_kind: SetKind,
    pub seed: u64,
    /// Cells that trained the mode models.
    pub mode_cells: Vec<String>,
    /// Cells that trained the classifier.
    pub phase_cells: Vec<String>,
    /// Cells added by fine-tuning, if any.
    pub fine_tune_cells: Vec<String>,
    pub knee: KneeSection,
    pub features: String,
    pub models: Vec<String>,
    pub gbt: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bundle {
    pub meta: BundleMeta,
    pub space: FeatureSpace,
    /// Indexed by [`Mode::index`].
    pub models: [DeepHpmModel; 3],
    pub gbt: GbtModel,
}

impl Bundle {
    pub fn new(
        space: FeatureSpace,
        models: [DeepHpmModel; 3],
        gbt: GbtModel,
        seed: u64,
        mode_cells: Vec<String>,
        phase_cells: Vec<String>,
        knee: KneeSection,
    ) -> Result<Self, PipelineError> {
        let b = Self {
            meta: BundleMeta {
                schema_version: BUNDLE_SCHEMA_VERSION,
                set_kind: space.set_kind,
                seed,
                mode_cells,
                phase_cells,
                fine_tune_cells: Vec::new(),
                knee,
                features: FEATURES_FILE.into(),
                models: Mode::ALL.iter().map(|&m| model_file(m).to_string()).collect(),
                gbt: GBT_FILE.into(),
            },
            space,
            models,
            gbt,
        };
        b.check()?;
        Ok(b)
    }

    fn check(&self) -> Result<(), PipelineError> {
        let kind = self.space.set_kind;
        if self.meta.set_kind != kind {
            return Err(PipelineError::Bundle("set kind differs from feature space".into()));
        }
        for (i, m) in self.models.iter().enumerate() {
            if m.mode != Mode::ALL[i] {
                return Err(PipelineError::Bundle(format!("model {i} is for {}", m.mode)));
            }
            if m.set_kind != kind || m.input_width() != kind.len() {
                return Err(PipelineError::Bundle(format!(
                    "{} model does not match feature set {kind}",
                    m.mode
                )));
            }
        }
        if self.gbt.n_features() != GBT_INPUTS.len() {
            return Err(PipelineError::Bundle("classifier must take 4 inputs".into()));
        }
        Ok(())
    }

    /// Same bundle with replaced mode models.
    pub fn with_models(&self, models: [DeepHpmModel; 3], fine_tune_cells: Vec<String>) -> Self {
        let mut b = self.clone();
        b.models = models;
        b.meta.fine_tune_cells = fine_tune_cells;
        b
    }

    /// Estimated modes for raw feature rows, one vector per mode.
    pub fn predict_modes(&self, fm: &FeatureMatrix) -> Result<[Vec<f64>; 3], PipelineError> {
        self.predict_modes_rows(&fm.rows)
    }

    pub fn predict_modes_rows(&self, rows: &[Vec<f64>]) -> Result<[Vec<f64>; 3], PipelineError> {
        let z: Vec<Vec<f64>> = rows
            .iter()
            .map(|r| crate::features::to_model_input(&self.space.normalizer, r))
            .collect();
        let p = |k: usize| self.models[k].predict_batch(&z);
        Ok([p(0)?, p(1)?, p(2)?])
    }

    /// Phase per row from modes and calendar time.
    pub fn predict_phases(&self, modes: &[Vec<f64>; 3], t: &[f64]) -> Result<Vec<u8>, PipelineError> {
        classify_phases(&self.gbt, modes, t)
    }

    pub fn write(&self, dir: &Path) -> Result<(), PipelineError> {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
        self.space.write(&dir.join(&self.meta.features))?;
        for (m, name) in self.models.iter().zip(&self.meta.models) {
            m.write(&dir.join(name))?;
        }
        self.gbt.write(&dir.join(&self.meta.gbt))?;
        let path = dir.join(BUNDLE_FILE);
        let text = toml::to_string(&self.meta).map_err(|e| PipelineError::Bundle(e.to_string()))?;
        std::fs::write(&path, text).map_err(io_err(&path))
    }

    pub fn read(dir: &Path) -> Result<Self, PipelineError> {
        let path = dir.join(BUNDLE_FILE);
        let text = std::fs::read_to_string(&path).map_err(io_err(&path))?;
        let meta: BundleMeta = toml::from_str(&text).map_err(|e| PipelineError::Bundle(e.to_string()))?;
        if meta.schema_version != BUNDLE_SCHEMA_VERSION {
            return Err(PipelineError::Bundle(format!(
                "unsupported schema version {}",
                meta.schema_version
            )));
        }
        if meta.models.len() != 3 {
            return Err(PipelineError::Bundle("expected three mode models".into()));
        }
        let space = FeatureSpace::read(&dir.join(&meta.features))?;
        let m = |k: usize| DeepHpmModel::read(&dir.join(&meta.models[k]));
        let models = [m(0)?, m(1)?, m(2)?];
        let gbt = GbtModel::read(&dir.join(&meta.gbt))?;
        let b = Self {
            meta,
            space,
            models,
            gbt,
        };
        b.check()?;
        Ok(b)
    }
}

pub(crate) fn classify_phases(gbt: &GbtModel, modes: &[Vec<f64>; 3], t: &[f64]) -> Result<Vec<u8>, PipelineError> {
    for m in modes {
        if m.len() != t.len() {
            return Err(PipelineError::LengthMismatch {
                left: m.len(),
                right: t.len(),
            });
        }
    }
    (0..t.len())
        .map(|i| Ok(gbt.predict(&[modes[0][i], modes[1][i], modes[2][i], t[i]])?))
        .collect()
}
