//! Deep hidden physics models: a surrogate `F(t, x)` for one degradation
//! mode and a dynamics net `G(t, x, u, u_x)` coupled by the residual
//! `H = F_t - G`.

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AutodiffError, Mat, Mlp, NetBinding, Tangent, Tape, Var};
use crate::data::Mode;
use crate::features::SetKind;
use crate::optim::{Adam, AdamConfig};

pub const MIN_TRAIN_SAMPLES: usize = 4;
pub const MODEL_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum DeepHpmError {
    #[error("need at least {need} samples, got {got}")]
    TooFewSamples { got: usize, need: usize },
    #[error("loss became non-finite at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },
    #[error("input width {got} does not match expected {expected}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("target {index} = {value} outside [0, 1]")]
    TargetOutOfRange { index: usize, value: f64 },
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("model file: {0}")]
    Format(String),
}

/// Shared shape of both networks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Structure {
    pub layers: usize,
    pub neurons: usize,
}

impl Default for Structure {
    fn default() -> Self {
        Self { layers: 2, neurons: 32 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Frozen {
    None,
    Dynamics,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub adam: AdamConfig,
    pub w_u: f64,
    pub w_h: f64,
    pub w_ht: f64,
    pub seed: u64,
    pub frozen: Frozen,
    /// Adds residual-only points halfway between consecutive labels.
    pub midpoint_collocation: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30_000,
            adam: AdamConfig::default(),
            w_u: 1.0,
            w_h: 1.0,
            w_ht: 1.0,
            seed: 0,
            frozen: Frozen::None,
            midpoint_collocation: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), DeepHpmError> {
        for (name, w) in [("w_u", self.w_u), ("w_h", self.w_h), ("w_ht", self.w_ht)] {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(DeepHpmError::InvalidConfig(format!("{name} must be finite and >= 0")));
            }
        }
        let a = &self.adam;
        if !(a.learning_rate > 0.0 && a.learning_rate.is_finite()) {
            return Err(DeepHpmError::InvalidConfig("learning_rate must be > 0".into()));
        }
        if !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) || !(a.epsilon > 0.0) {
            return Err(DeepHpmError::InvalidConfig(
                "adam betas must be in [0,1), epsilon > 0".into(),
            ));
        }
        Ok(())
    }
}

/// Unweighted loss terms and their weighted total.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub l_u: f64,
    pub l_h: f64,
    pub l_ht: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub seed: u64,
    pub epochs: usize,
    pub w_u: f64,
    pub w_h: f64,
    pub w_ht: f64,
    pub midpoint_collocation: bool,
    /// Epochs of surrogate-only training applied after pre-training.
    pub fine_tune_epochs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeepHpmModel {
    pub schema_version: u32,
    pub mode: Mode,
    pub set_kind: SetKind,
    pub structure: Structure,
    /// `F`, input `[t, x_1..x_m]`.
    pub surrogate: Mlp,
    /// `G`, input `[t, x_1..x_m, u, u_x1..u_xm]`.
    pub dynamics: Mlp,
    /// Per feature: whether it varied in the training data. `G` sees
    /// `u_x = 0` along features that did not, since `F` is unconstrained there.
    pub active_features: Vec<bool>,
    /// Name of the feature-space file whose statistics produced the inputs.
    pub normalization_ref: String,
    pub training: TrainingMeta,
}

/// Normalized model inputs `[t, x..]` with targets. Rows sharing a
/// `group` are consecutive labels of one cell.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    pub inputs: Vec<Vec<f64>>,
    pub targets: Vec<f64>,
    pub groups: Vec<usize>,
}

impl TrainingSet {
    pub fn new(inputs: Vec<Vec<f64>>, targets: Vec<f64>) -> Self {
        let groups = vec![0; inputs.len()];
        Self::with_groups(inputs, targets, groups)
    }

    pub fn with_groups(inputs: Vec<Vec<f64>>, targets: Vec<f64>, groups: Vec<usize>) -> Self {
        assert_eq!(inputs.len(), targets.len());
        assert_eq!(inputs.len(), groups.len());
        Self {
            inputs,
            targets,
            groups,
        }
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

struct Batch {
    z: Mat,
    u: Mat,
    /// 1 on labeled rows, 0 on collocation-only rows; `None` when all labeled.
    mask: Option<Mat>,
}

fn to_mat(rows: &[Vec<f64>], width: usize) -> Mat {
    Mat::from_shape_fn((rows.len(), width), |(i, j)| rows[i][j])
}

fn build_batch(data: &TrainingSet, width: usize, midpoints: bool) -> Result<Batch, DeepHpmError> {
    for (i, r) in data.inputs.iter().enumerate() {
        if r.len() != width {
            return Err(DeepHpmError::ShapeMismatch {
                expected: width,
                got: r.len(),
            });
        }
        let u = data.targets[i];
        if !(0.0..=1.0).contains(&u) {
            return Err(DeepHpmError::TargetOutOfRange { index: i, value: u });
        }
    }
    let mut rows = data.inputs.clone();
    let mut u: Vec<f64> = data.targets.clone();
    let mut mask = vec![1.0; rows.len()];
    if midpoints {
        for i in 1..data.len() {
            if data.groups[i] == data.groups[i - 1] {
                let mid = data.inputs[i]
                    .iter()
                    .zip(&data.inputs[i - 1])
                    .map(|(a, b)| 0.5 * (a + b))
                    .collect();
                rows.push(mid);
                u.push(0.0);
                mask.push(0.0);
            }
        }
    }
    let n = rows.len();
    let has_colloc = mask.contains(&0.0);
    Ok(Batch {
        z: to_mat(&rows, width),
        u: Mat::from_shape_vec((n, 1), u).expect("column"),
        mask: has_colloc.then(|| Mat::from_shape_vec((n, 1), mask).expect("column")),
    })
}

/// Builds `F`, `H` and `H_t` for batch input `z`.
///
/// `H_t = F_tt - dG/dt` where `dG/dt` is the derivative of `G` along the
/// input tangent `[1, 0.., F_t, F_x1t..F_xmt]`.
fn residual_graph(tape: &mut Tape, fb: &NetBinding, gb: &NetBinding, active: &[bool], z: Var) -> (Var, Var, Var) {
    let (n, width) = tape.value(z).dim();
    let dirs: Vec<Tangent> = (0..width).map(Tangent::Unit).collect();
    let jet = fb.jet(tape, z, &dirs, Some(0));
    let f = jet.value;
    let f_t = jet.first[0];
    let f_tt = jet.mixed[0];

    let zero = tape.constant(Mat::zeros((n, 1)));
    let gate = |v: &[Var]| -> Vec<Var> {
        v.iter()
            .zip(active)
            .map(|(&d, &on)| if on { d } else { zero })
            .collect()
    };
    let f_x = gate(&jet.first[1..]);
    let f_xt = gate(&jet.mixed[1..]);

    let mut g_parts = vec![z, f];
    g_parts.extend_from_slice(&f_x);
    let g_in = tape.concat(&g_parts);

    let mut dir = vec![tape.constant(Mat::ones((n, 1)))];
    if width > 1 {
        dir.push(tape.constant(Mat::zeros((n, width - 1))));
    }
    dir.push(f_t);
    dir.extend_from_slice(&f_xt);
    let v = tape.concat(&dir);

    let gj = gb.jet(tape, g_in, &[Tangent::Along(v)], None);
    let h = tape.sub(f_t, gj.value);
    let ht = tape.sub(f_tt, gj.first[0]);
    (f, h, ht)
}

struct LossGraph {
    total: Var,
    l_u: Var,
    l_h: Option<Var>,
    l_ht: Option<Var>,
}

fn loss_graph(
    tape: &mut Tape,
    fb: &NetBinding,
    gb: &NetBinding,
    active: &[bool],
    batch: &Batch,
    w: (f64, f64, f64),
) -> LossGraph {
    let z = tape.constant(batch.z.clone());
    let u = tape.constant(batch.u.clone());
    let physics = w.1 != 0.0 || w.2 != 0.0;
    let (f, h, ht) = if physics {
        let (f, h, ht) = residual_graph(tape, fb, gb, active, z);
        (f, Some(h), Some(ht))
    } else {
        (fb.forward(tape, z), None, None)
    };
    let mut err = tape.sub(f, u);
    if let Some(m) = &batch.mask {
        let m = tape.constant(m.clone());
        err = tape.mul(err, m);
    }
    let l_u = tape.sum_squares(err);
    let mut total = tape.scale(l_u, w.0);
    let l_h = h.map(|h| tape.sum_squares(h));
    let l_ht = ht.map(|h| tape.sum_squares(h));
    if let (Some(l_h), Some(l_ht)) = (l_h, l_ht) {
        let a = tape.scale(l_h, w.1);
        let b = tape.scale(l_ht, w.2);
        total = tape.add(total, a);
        total = tape.add(total, b);
    }
    LossGraph { total, l_u, l_h, l_ht }
}

fn read_parts(tape: &Tape, g: &LossGraph) -> LossParts {
    LossParts {
        l_u: tape.scalar(g.l_u),
        l_h: g.l_h.map_or(0.0, |v| tape.scalar(v)),
        l_ht: g.l_ht.map_or(0.0, |v| tape.scalar(v)),
        total: tape.scalar(g.total),
    }
}

impl DeepHpmModel {
    /// Freshly initialized model for `m` features.
    pub fn init(mode: Mode, set_kind: SetKind, m: usize, structure: Structure, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let surrogate = Mlp::xavier(m + 1, structure.layers, structure.neurons, &mut rng);
        let dynamics = Mlp::xavier(2 * (m + 1), structure.layers, structure.neurons, &mut rng);
        Self {
            schema_version: MODEL_SCHEMA_VERSION,
            mode,
            set_kind,
            structure,
            surrogate,
            dynamics,
            active_features: vec![true; m],
            normalization_ref: String::new(),
            training: TrainingMeta {
                seed,
                epochs: 0,
                w_u: 1.0,
                w_h: 1.0,
                w_ht: 1.0,
                midpoint_collocation: false,
                fine_tune_epochs: 0,
            },
        }
    }

    /// Surrogate input width `1 + m`.
    pub fn input_width(&self) -> usize {
        self.surrogate.input_width()
    }

    fn input(&self, t: f64, x: &[f64]) -> Result<Vec<f64>, DeepHpmError> {
        if x.len() + 1 != self.input_width() {
            return Err(DeepHpmError::ShapeMismatch {
                expected: self.input_width() - 1,
                got: x.len(),
            });
        }
        let mut z = Vec::with_capacity(x.len() + 1);
        z.push(t);
        z.extend_from_slice(x);
        Ok(z)
    }

    /// `F(t, x)`, unclipped.
    pub fn predict(&self, t: f64, x: &[f64]) -> Result<f64, DeepHpmError> {
        Ok(self.surrogate.forward(&self.input(t, x)?)?)
    }

    /// `F` over rows of `[t, x..]`.
    pub fn predict_batch(&self, inputs: &[Vec<f64>]) -> Result<Vec<f64>, DeepHpmError> {
        let width = self.input_width();
        if let Some(r) = inputs.iter().find(|r| r.len() != width) {
            return Err(DeepHpmError::ShapeMismatch {
                expected: width,
                got: r.len(),
            });
        }
        if inputs.is_empty() {
            return Ok(Vec::new());
        }
        let mut tape = Tape::new();
        let fb = tape.bind_frozen(&self.surrogate);
        let z = tape.constant(to_mat(inputs, width));
        let out = fb.forward(&mut tape, z);
        Ok(tape.value(out).iter().copied().collect())
    }

    /// `(H, H_t)` at one point.
    pub fn residual(&self, t: f64, x: &[f64]) -> Result<(f64, f64), DeepHpmError> {
        let zrow = self.input(t, x)?;
        let mut tape = Tape::new();
        let fb = tape.bind_frozen(&self.surrogate);
        let gb = tape.bind_frozen(&self.dynamics);
        let z = tape.constant(to_mat(&[zrow], self.input_width()));
        let (_, h, ht) = residual_graph(&mut tape, &fb, &gb, &self.active_features, z);
        Ok((tape.scalar(h), tape.scalar(ht)))
    }

    /// `G(t, x, u, u_x)` at one point.
    pub fn dynamics_at(&self, t: f64, x: &[f64], u: f64, u_x: &[f64]) -> Result<f64, DeepHpmError> {
        let mut z = self.input(t, x)?;
        if u_x.len() != x.len() {
            return Err(DeepHpmError::ShapeMismatch {
                expected: x.len(),
                got: u_x.len(),
            });
        }
        z.push(u);
        z.extend_from_slice(u_x);
        Ok(self.dynamics.forward(&z)?)
    }

    /// Loss terms of this model on `data` under `config`'s weights.
    pub fn loss(&self, data: &TrainingSet, config: &TrainConfig) -> Result<LossParts, DeepHpmError> {
        let batch = build_batch(data, self.input_width(), config.midpoint_collocation)?;
        let mut tape = Tape::new();
        let fb = tape.bind_frozen(&self.surrogate);
        let gb = tape.bind_frozen(&self.dynamics);
        let g = loss_graph(
            &mut tape,
            &fb,
            &gb,
            &self.active_features,
            &batch,
            (config.w_u, config.w_h, config.w_ht),
        );
        Ok(read_parts(&tape, &g))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, DeepHpmError> {
        let m: Self = serde_json::from_str(text).map_err(|e| DeepHpmError::Format(e.to_string()))?;
        if m.schema_version != MODEL_SCHEMA_VERSION {
            return Err(DeepHpmError::Format(format!(
                "unsupported schema version {}",
                m.schema_version
            )));
        }
        if m.dynamics.input_width() != 2 * m.surrogate.input_width()
            || m.active_features.len() + 1 != m.surrogate.input_width()
        {
            return Err(DeepHpmError::Format(
                "dynamics width must be twice surrogate width".into(),
            ));
        }
        Ok(m)
    }

    pub fn write(&self, path: &Path) -> Result<(), DeepHpmError> {
        std::fs::write(path, self.to_json()).map_err(|source| DeepHpmError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn read(path: &Path) -> Result<Self, DeepHpmError> {
        let text = std::fs::read_to_string(path).map_err(|source| DeepHpmError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text)
    }
}

/// Parameter gradients of the training loss at the model's current
/// parameters, ordered weight/bias per layer, `F` first then `G`.
pub fn loss_gradients(
    model: &DeepHpmModel,
    data: &TrainingSet,
    config: &TrainConfig,
) -> Result<(LossParts, Vec<Mat>), DeepHpmError> {
    let batch = build_batch(data, model.input_width(), config.midpoint_collocation)?;
    let mut tape = Tape::new();
    let fb = tape.bind_trainable(&model.surrogate, 0);
    let gb = tape.bind_trainable(&model.dynamics, fb.param_ids().len());
    let g = loss_graph(
        &mut tape,
        &fb,
        &gb,
        &model.active_features,
        &batch,
        (config.w_u, config.w_h, config.w_ht),
    );
    let grads = tape.backward(g.total)?;
    let shapes = param_shapes(&model.surrogate)
        .into_iter()
        .chain(param_shapes(&model.dynamics));
    let out = fb
        .param_ids()
        .iter()
        .chain(gb.param_ids())
        .zip(shapes)
        .map(|(id, s)| grads.get(*id).cloned().unwrap_or_else(|| Mat::zeros(s)))
        .collect();
    Ok((read_parts(&tape, &g), out))
}

fn param_shapes(net: &Mlp) -> Vec<(usize, usize)> {
    net.layers()
        .iter()
        .flat_map(|l| [l.weight.dim(), l.bias.dim()])
        .collect()
}

fn params_mut(net: &mut Mlp) -> Vec<&mut Mat> {
    net.layers_mut()
        .iter_mut()
        .flat_map(|l| [&mut l.weight, &mut l.bias])
        .collect()
}

/// Full-batch Adam on `model` in place; returns the per-epoch loss recorded
/// before each update.
fn optimize(
    model: &mut DeepHpmModel,
    data: &TrainingSet,
    config: &TrainConfig,
) -> Result<Vec<LossParts>, DeepHpmError> {
    config.validate()?;
    let batch = build_batch(data, model.input_width(), config.midpoint_collocation)?;
    let train_g = config.frozen == Frozen::None;
    let mut shapes = param_shapes(&model.surrogate);
    if train_g {
        shapes.extend(param_shapes(&model.dynamics));
    }
    let mut adam = Adam::new(config.adam, &shapes);
    let w = (config.w_u, config.w_h, config.w_ht);
    let mut history = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        let mut tape = Tape::new();
        let fb = tape.bind_trainable(&model.surrogate, 0);
        let gb = if train_g {
            tape.bind_trainable(&model.dynamics, fb.param_ids().len())
        } else {
            tape.bind_frozen(&model.dynamics)
        };
        let g = loss_graph(&mut tape, &fb, &gb, &model.active_features, &batch, w);
        let parts = read_parts(&tape, &g);
        if !parts.total.is_finite() {
            return Err(DeepHpmError::NonFiniteLoss { epoch });
        }
        history.push(parts);
        let grads = tape.backward(g.total)?;
        let zeros: Vec<Mat> = shapes.iter().map(|&s| Mat::zeros(s)).collect();
        let grad_refs: Vec<&Mat> = fb
            .param_ids()
            .iter()
            .chain(gb.param_ids())
            .zip(&zeros)
            .map(|(id, z)| grads.get(*id).unwrap_or(z))
            .collect();
        let mut params = params_mut(&mut model.surrogate);
        if train_g {
            params.extend(params_mut(&mut model.dynamics));
        }
        adam.step(&mut params, &grad_refs);
    }
    Ok(history)
}

fn check_size(data: &TrainingSet) -> Result<(), DeepHpmError> {
    if data.len() < MIN_TRAIN_SAMPLES {
        return Err(DeepHpmError::TooFewSamples {
            got: data.len(),
            need: MIN_TRAIN_SAMPLES,
        });
    }
    Ok(())
}

/// Trains both networks from a seeded initialization.
pub fn train(
    data: &TrainingSet,
    mode: Mode,
    set_kind: SetKind,
    structure: Structure,
    config: &TrainConfig,
) -> Result<(DeepHpmModel, Vec<LossParts>), DeepHpmError> {
    check_size(data)?;
    let width = data.inputs[0].len();
    if width < 2 {
        return Err(DeepHpmError::ShapeMismatch {
            expected: 2,
            got: width,
        });
    }
    let mut model = DeepHpmModel::init(mode, set_kind, width - 1, structure, config.seed);
    model.active_features = (1..width)
        .map(|j| data.inputs.iter().any(|r| r[j] != data.inputs[0][j]))
        .collect();
    let history = optimize(&mut model, data, config)?;
    model.training = TrainingMeta {
        seed: config.seed,
        epochs: config.epochs,
        w_u: config.w_u,
        w_h: config.w_h,
        w_ht: config.w_ht,
        midpoint_collocation: config.midpoint_collocation,
        fine_tune_epochs: 0,
    };
    Ok((model, history))
}

/// Retrains the surrogate on target data with the dynamics net frozen.
pub fn fine_tune(
    pretrained: &DeepHpmModel,
    data: &TrainingSet,
    config: &TrainConfig,
) -> Result<(DeepHpmModel, Vec<LossParts>), DeepHpmError> {
    if config.frozen != Frozen::Dynamics {
        return Err(DeepHpmError::InvalidConfig(
            "fine-tuning requires frozen = dynamics".into(),
        ));
    }
    check_size(data)?;
    let mut model = pretrained.clone();
    let history = optimize(&mut model, data, config)?;
    model.training.fine_tune_epochs += config.epochs;
    Ok((model, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Layer;
    use ndarray::array;

    /// `F(t, x) = t` exactly and `G ≡ 1`.
    fn identity_fixture() -> DeepHpmModel {
        let mut m = DeepHpmModel::init(Mode::Lli, SetKind::V3, 1, Structure { layers: 1, neurons: 1 }, 0);
        m.surrogate = Mlp::from_layers(vec![Layer {
            weight: array![[1.0, 0.0]],
            bias: array![[0.0]],
        }])
        .unwrap();
        m.dynamics = Mlp::from_layers(vec![Layer {
            weight: array![[0.0, 0.0, 0.0, 0.0]],
            bias: array![[1.0]],
        }])
        .unwrap();
        m
    }

    #[test]
    fn exact_cancellation() {
        let m = identity_fixture();
        for t in [0.0, 0.4, 2.5] {
            assert_eq!(m.residual(t, &[0.7]).unwrap(), (0.0, 0.0));
        }
    }

    #[test]
    fn shape_errors() {
        let m = identity_fixture();
        assert!(matches!(
            m.predict(0.0, &[1.0, 2.0]),
            Err(DeepHpmError::ShapeMismatch { .. })
        ));
        assert!(matches!(m.residual(0.0, &[]), Err(DeepHpmError::ShapeMismatch { .. })));
    }

    fn toy_set() -> TrainingSet {
        let inputs: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64 / 5.0, (i as f64 / 5.0).powi(2)]).collect();
        let targets = inputs.iter().map(|z| 0.1 + 0.3 * z[0]).collect();
        TrainingSet::new(inputs, targets)
    }

    #[test]
    fn zero_epochs_returns_initialization() {
        let cfg = TrainConfig {
            epochs: 0,
            seed: 5,
            ..TrainConfig::default()
        };
        let s = Structure { layers: 2, neurons: 4 };
        let (m, h) = train(&toy_set(), Mode::LamNe, SetKind::V3, s, &cfg).unwrap();
        let init = DeepHpmModel::init(Mode::LamNe, SetKind::V3, 1, s, 5);
        assert!(h.is_empty());
        assert_eq!(m.surrogate, init.surrogate);
        assert_eq!(m.dynamics, init.dynamics);
    }

    #[test]
    fn too_few_samples() {
        let cfg = TrainConfig::default();
        let d = TrainingSet::new(vec![vec![0.0, 0.0]; 3], vec![0.0; 3]);
        assert!(matches!(
            train(&d, Mode::Lli, SetKind::V3, Structure::default(), &cfg),
            Err(DeepHpmError::TooFewSamples { got: 3, .. })
        ));
        let m = identity_fixture();
        let ft = TrainConfig {
            frozen: Frozen::Dynamics,
            ..cfg
        };
        let empty = TrainingSet::new(vec![], vec![]);
        assert!(matches!(
            fine_tune(&m, &empty, &ft),
            Err(DeepHpmError::TooFewSamples { got: 0, .. })
        ));
    }

    #[test]
    fn targets_must_be_fractions() {
        let mut d = toy_set();
        d.targets[2] = 1.3;
        let cfg = TrainConfig {
            epochs: 1,
            ..TrainConfig::default()
        };
        assert!(matches!(
            train(&d, Mode::Lli, SetKind::V3, Structure::default(), &cfg),
            Err(DeepHpmError::TargetOutOfRange { index: 2, .. })
        ));
    }

    #[test]
    fn divergence_reports_epoch() {
        let cfg = TrainConfig {
            epochs: 50,
            adam: AdamConfig {
                learning_rate: 1e300,
                ..AdamConfig::default()
            },
            ..TrainConfig::default()
        };
        let r = train(
            &toy_set(),
            Mode::Lli,
            SetKind::V3,
            Structure { layers: 1, neurons: 4 },
            &cfg,
        );
        assert!(matches!(r, Err(DeepHpmError::NonFiniteLoss { epoch }) if epoch >= 1));
    }

    #[test]
    fn training_reduces_loss_and_is_deterministic() {
        let cfg = TrainConfig {
            epochs: 300,
            seed: 2,
            ..TrainConfig::default()
        };
        let s = Structure { layers: 2, neurons: 8 };
        let (a, ha) = train(&toy_set(), Mode::Lli, SetKind::V3, s, &cfg).unwrap();
        let (b, _) = train(&toy_set(), Mode::Lli, SetKind::V3, s, &cfg).unwrap();
        assert_eq!(a.to_json(), b.to_json());
        assert!(ha.last().unwrap().total < ha[0].total);
    }

    #[test]
    fn fine_tune_keeps_dynamics_bits() {
        let cfg = TrainConfig {
            epochs: 50,
            seed: 1,
            ..TrainConfig::default()
        };
        let s = Structure { layers: 2, neurons: 6 };
        let (m, _) = train(&toy_set(), Mode::Lli, SetKind::V3, s, &cfg).unwrap();
        let ft = TrainConfig {
            frozen: Frozen::Dynamics,
            ..cfg
        };
        let mut shifted = toy_set();
        shifted.targets.iter_mut().for_each(|u| *u += 0.2);
        let (t, _) = fine_tune(&m, &shifted, &ft).unwrap();
        assert_eq!(
            serde_json::to_string(&t.dynamics).unwrap(),
            serde_json::to_string(&m.dynamics).unwrap()
        );
        assert_ne!(t.surrogate, m.surrogate);
        assert_eq!(t.training.fine_tune_epochs, 50);
        let plain = TrainConfig {
            frozen: Frozen::None,
            ..cfg
        };
        assert!(matches!(
            fine_tune(&m, &shifted, &plain),
            Err(DeepHpmError::InvalidConfig(_))
        ));
    }

    #[test]
    fn midpoints_only_add_residual_terms() {
        let s = Structure { layers: 1, neurons: 5 };
        let m = DeepHpmModel::init(Mode::Lli, SetKind::V3, 1, s, 3);
        let d = toy_set();
        let base = TrainConfig::default();
        let mid = TrainConfig {
            midpoint_collocation: true,
            ..base
        };
        let a = m.loss(&d, &base).unwrap();
        let b = m.loss(&d, &mid).unwrap();
        assert_eq!(a.l_u, b.l_u);
        assert!(b.l_h > a.l_h);
    }

    #[test]
    fn model_json_round_trip() {
        let m = DeepHpmModel::init(Mode::LamPe, SetKind::Iv17, 17, Structure::default(), 8);
        let back = DeepHpmModel::from_json(&m.to_json()).unwrap();
        assert_eq!(back, m);
    }
}
