//! Multi-class gradient-boosted trees with softmax cross-entropy and Newton
//! leaf weights.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const N_CLASSES: usize = 3;
pub const GBT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum GbtError {
    #[error("no training rows")]
    Empty,
    #[error("all training rows are identical")]
    DegenerateFeatures,
    #[error("row {row}: label {label} not in 1..=3")]
    InvalidLabel { row: usize, label: u8 },
    #[error("input width {got} does not match expected {expected}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("model file: {0}")]
    Format(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GbtConfig {
    pub n_rounds: usize,
    pub learning_rate: f64,
    pub max_depth: usize,
    /// Minimum hessian sum in each child of a split.
    pub min_child_weight: f64,
    pub reg_lambda: f64,
    pub reg_gamma: f64,
    /// Recorded for provenance; fitting is deterministic without sampling.
    pub seed: u64,
}

impl Default for GbtConfig {
    fn default() -> Self {
        Self {
            n_rounds: 100,
            learning_rate: 0.0207,
            max_depth: 8,
            min_child_weight: 7.0,
            reg_lambda: 1.0,
            reg_gamma: 0.0,
            seed: 0,
        }
    }
}

impl GbtConfig {
    pub fn validate(&self) -> Result<(), GbtError> {
        if self.n_rounds < 1 {
            return Err(GbtError::InvalidConfig("n_rounds must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(GbtError::InvalidConfig("learning_rate must be > 0".into()));
        }
        if self.max_depth < 1 {
            return Err(GbtError::InvalidConfig("max_depth must be >= 1".into()));
        }
        if !(self.reg_lambda >= 0.0 && self.min_child_weight >= 0.0 && self.reg_gamma >= 0.0) {
            return Err(GbtError::InvalidConfig("regularizers must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Node {
    /// Rows with `v[feature] < threshold` go left.
    Split {
        feature: usize,
        threshold: f64,
        gain: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        weight: f64,
        hessian_sum: f64,
        depth: usize,
    },
}

/// Nodes in preorder; node 0 is the root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn score(&self, v: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                    ..
                } => i = if v[*feature] < *threshold { *left } else { *right },
                Node::Leaf { weight, .. } => return *weight,
            }
        }
    }

    pub fn depth(&self) -> usize {
        self.nodes
            .iter()
            .filter_map(|n| match n {
                Node::Leaf { depth, .. } => Some(*depth),
                _ => None,
            })
            .max()
            .unwrap_or(0)
    }

    pub fn leaves(&self) -> impl Iterator<Item = (f64, f64, usize)> + '_ {
        self.nodes.iter().filter_map(|n| match n {
            Node::Leaf {
                weight,
                hessian_sum,
                depth,
            } => Some((*weight, *hessian_sum, *depth)),
            _ => None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbtModel {
    pub schema_version: u32,
    pub feature_names: Vec<String>,
    /// `rounds[r][k]` is the tree for class `k` in round `r`.
    pub rounds: Vec<Vec<Tree>>,
    pub config: GbtConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GbtFit {
    pub model: GbtModel,
    /// Mean training cross-entropy after each round.
    pub train_loss: Vec<f64>,
    /// Classes with no training rows (1-based).
    pub empty_classes: Vec<u8>,
}

/// A chosen split at one node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitChoice {
    pub feature: usize,
    pub threshold: f64,
    pub gain: f64,
}

/// Relative gap below which two gains tie and the earlier candidate stays;
/// mirrored partitions reach equal gains through differently rounded sums.
const GAIN_TIE_REL: f64 = 1e-12;

fn leaf_objective(g: f64, h: f64, lambda: f64) -> f64 {
    g * g / (h + lambda)
}

/// Best exact-greedy split of rows `idx`, or `None` when no split has
/// positive gain while keeping both children at or above `min_child_weight`.
///
/// Ties go to the lowest feature index, then the lowest threshold.
pub fn best_split(x: &[Vec<f64>], g: &[f64], h: &[f64], idx: &[usize], cfg: &GbtConfig) -> Option<SplitChoice> {
    let n_features = x.first().map_or(0, Vec::len);
    let g_tot: f64 = idx.iter().map(|&i| g[i]).sum();
    let h_tot: f64 = idx.iter().map(|&i| h[i]).sum();
    let parent = leaf_objective(g_tot, h_tot, cfg.reg_lambda);
    let mut best: Option<SplitChoice> = None;
    let mut order = idx.to_vec();
    for f in 0..n_features {
        order.sort_by(|&a, &b| x[a][f].total_cmp(&x[b][f]));
        let (mut gl, mut hl) = (0.0, 0.0);
        for w in 0..order.len().saturating_sub(1) {
            let i = order[w];
            gl += g[i];
            hl += h[i];
            let (lo, hi) = (x[i][f], x[order[w + 1]][f]);
            if lo == hi {
                continue;
            }
            let (gr, hr) = (g_tot - gl, h_tot - hl);
            if hl < cfg.min_child_weight || hr < cfg.min_child_weight {
                continue;
            }
            let gain = 0.5 * (leaf_objective(gl, hl, cfg.reg_lambda) + leaf_objective(gr, hr, cfg.reg_lambda) - parent)
                - cfg.reg_gamma;
            if gain > 0.0 && best.is_none_or(|b| gain > b.gain + GAIN_TIE_REL * b.gain.abs()) {
                best = Some(SplitChoice {
                    feature: f,
                    threshold: 0.5 * (lo + hi),
                    gain,
                });
            }
        }
    }
    best
}

fn build_node(
    nodes: &mut Vec<Node>,
    x: &[Vec<f64>],
    g: &[f64],
    h: &[f64],
    idx: Vec<usize>,
    depth: usize,
    cfg: &GbtConfig,
) -> usize {
    let at = nodes.len();
    let split = if depth < cfg.max_depth {
        best_split(x, g, h, &idx, cfg)
    } else {
        None
    };
    match split {
        None => {
            let gs: f64 = idx.iter().map(|&i| g[i]).sum();
            let hs: f64 = idx.iter().map(|&i| h[i]).sum();
            nodes.push(Node::Leaf {
                weight: -gs / (hs + cfg.reg_lambda) * cfg.learning_rate,
                hessian_sum: hs,
                depth,
            });
        }
        Some(s) => {
            nodes.push(Node::Split {
                feature: s.feature,
                threshold: s.threshold,
                gain: s.gain,
                left: 0,
                right: 0,
            });
            let (li, ri): (Vec<usize>, Vec<usize>) = idx.into_iter().partition(|&i| x[i][s.feature] < s.threshold);
            let left = build_node(nodes, x, g, h, li, depth + 1, cfg);
            let right = build_node(nodes, x, g, h, ri, depth + 1, cfg);
            if let Node::Split { left: l, right: r, .. } = &mut nodes[at] {
                *l = left;
                *r = right;
            }
        }
    }
    at
}

pub fn build_tree(x: &[Vec<f64>], g: &[f64], h: &[f64], cfg: &GbtConfig) -> Tree {
    let mut nodes = Vec::new();
    build_node(&mut nodes, x, g, h, (0..x.len()).collect(), 0, cfg);
    Tree { nodes }
}

/// Numerically stable softmax.
pub fn softmax(scores: &[f64; N_CLASSES]) -> [f64; N_CLASSES] {
    let m = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e = scores.map(|s| (s - m).exp());
    let z: f64 = e.iter().sum();
    e.map(|v| v / z)
}

fn cross_entropy(scores: &[[f64; N_CLASSES]], y: &[u8]) -> f64 {
    scores
        .iter()
        .zip(y)
        .map(|(s, &c)| -softmax(s)[(c - 1) as usize].ln())
        .sum::<f64>()
        / y.len() as f64
}

/// Fits `config.n_rounds` rounds of one tree per class.
pub fn fit(x: &[Vec<f64>], y: &[u8], feature_names: Vec<String>, config: &GbtConfig) -> Result<GbtFit, GbtError> {
    config.validate()?;
    if x.is_empty() {
        return Err(GbtError::Empty);
    }
    let width = x[0].len();
    if let Some(r) = x.iter().find(|r| r.len() != width) {
        return Err(GbtError::ShapeMismatch {
            expected: width,
            got: r.len(),
        });
    }
    if feature_names.len() != width {
        return Err(GbtError::ShapeMismatch {
            expected: width,
            got: feature_names.len(),
        });
    }
    if y.len() != x.len() {
        return Err(GbtError::ShapeMismatch {
            expected: x.len(),
            got: y.len(),
        });
    }
    if let Some((row, &label)) = y.iter().enumerate().find(|(_, &c)| !(1..=3).contains(&c)) {
        return Err(GbtError::InvalidLabel { row, label });
    }
    if x.iter().all(|r| r == &x[0]) {
        return Err(GbtError::DegenerateFeatures);
    }
    let empty_classes: Vec<u8> = (1..=3).filter(|c| !y.contains(c)).collect();
    for c in &empty_classes {
        log::warn!("class {c} has no training rows and will never be favoured");
    }

    let n = x.len();
    let mut scores = vec![[0.0; N_CLASSES]; n];
    let mut rounds = Vec::with_capacity(config.n_rounds);
    let mut train_loss = Vec::with_capacity(config.n_rounds);
    let mut g = vec![0.0; n];
    let mut h = vec![0.0; n];
    for _ in 0..config.n_rounds {
        let probs: Vec<[f64; N_CLASSES]> = scores.iter().map(softmax).collect();
        let mut trees = Vec::with_capacity(N_CLASSES);
        for k in 0..N_CLASSES {
            for i in 0..n {
                let p = probs[i][k];
                let target = if y[i] as usize == k + 1 { 1.0 } else { 0.0 };
                g[i] = p - target;
                h[i] = p * (1.0 - p);
            }
            trees.push(build_tree(x, &g, &h, config));
        }
        for (s, row) in scores.iter_mut().zip(x) {
            for (k, t) in trees.iter().enumerate() {
                s[k] += t.score(row);
            }
        }
        train_loss.push(cross_entropy(&scores, y));
        rounds.push(trees);
    }
    Ok(GbtFit {
        model: GbtModel {
            schema_version: GBT_SCHEMA_VERSION,
            feature_names,
            rounds,
            config: *config,
        },
        train_loss,
        empty_classes,
    })
}

impl GbtModel {
    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn scores(&self, v: &[f64]) -> Result<[f64; N_CLASSES], GbtError> {
        if v.len() != self.n_features() {
            return Err(GbtError::ShapeMismatch {
                expected: self.n_features(),
                got: v.len(),
            });
        }
        let mut s = [0.0; N_CLASSES];
        for trees in &self.rounds {
            for (k, t) in trees.iter().enumerate() {
                s[k] += t.score(v);
            }
        }
        Ok(s)
    }

    pub fn predict_proba(&self, v: &[f64]) -> Result<[f64; N_CLASSES], GbtError> {
        Ok(softmax(&self.scores(v)?))
    }

    /// Most probable phase in 1..=3; ties go to the earlier phase.
    pub fn predict(&self, v: &[f64]) -> Result<u8, GbtError> {
        Ok(argmax_phase(&self.predict_proba(v)?))
    }

    /// Checks structural invariants against the model's own config.
    pub fn audit(&self) -> Result<(), String> {
        for (r, trees) in self.rounds.iter().enumerate() {
            if trees.len() != N_CLASSES {
                return Err(format!("round {r} has {} trees", trees.len()));
            }
            for (k, t) in trees.iter().enumerate() {
                for (i, n) in t.nodes.iter().enumerate() {
                    match n {
                        Node::Split { left, right, .. } => {
                            if *left <= i || *right <= i || *left >= t.nodes.len() || *right >= t.nodes.len() {
                                return Err(format!("round {r} class {k}: bad children at {i}"));
                            }
                        }
                        Node::Leaf {
                            weight,
                            hessian_sum,
                            depth,
                        } => {
                            if !weight.is_finite() {
                                return Err(format!("round {r} class {k}: non-finite leaf"));
                            }
                            if *depth > self.config.max_depth {
                                return Err(format!("round {r} class {k}: leaf deeper than max_depth"));
                            }
                            if *depth > 0 && *hessian_sum < self.config.min_child_weight {
                                return Err(format!(
                                    "round {r} class {k}: leaf hessian {hessian_sum} below min_child_weight"
                                ));
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, GbtError> {
        let m: Self = serde_json::from_str(text).map_err(|e| GbtError::Format(e.to_string()))?;
        if m.schema_version != GBT_SCHEMA_VERSION {
            return Err(GbtError::Format(format!(
                "unsupported schema version {}",
                m.schema_version
            )));
        }
        m.audit().map_err(GbtError::Format)?;
        Ok(m)
    }

    pub fn write(&self, path: &Path) -> Result<(), GbtError> {
        std::fs::write(path, self.to_json()).map_err(|source| GbtError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn read(path: &Path) -> Result<Self, GbtError> {
        let text = std::fs::read_to_string(path).map_err(|source| GbtError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text)
    }
}

/// Index of the largest probability as a 1-based phase, lowest on ties.
pub fn argmax_phase(p: &[f64; N_CLASSES]) -> u8 {
    let mut best = 0;
    for k in 1..N_CLASSES {
        if p[k] > p[best] {
            best = k;
        }
    }
    best as u8 + 1
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn names(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("f{i}")).collect()
    }

    fn zero_round_model() -> GbtModel {
        GbtModel {
            schema_version: GBT_SCHEMA_VERSION,
            feature_names: names(4),
            rounds: Vec::new(),
            config: GbtConfig::default(),
        }
    }

    #[test]
    fn uniform_without_rounds() {
        let p = zero_round_model().predict_proba(&[0.0; 4]).unwrap();
        for v in p {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        assert_eq!(zero_round_model().predict(&[0.0; 4]).unwrap(), 1);
    }

    #[test]
    fn softmax_closed_form() {
        let e = std::f64::consts::E;
        let p = softmax(&[1.0, 0.0, 0.0]);
        assert!((p[0] - e / (e + 2.0)).abs() < 1e-15);
        assert!((p[1] - 1.0 / (e + 2.0)).abs() < 1e-15);
    }

    #[test]
    fn ties_go_to_lower_phase() {
        assert_eq!(argmax_phase(&[0.2, 0.4, 0.4]), 2);
        assert_eq!(argmax_phase(&[0.5, 0.5, 0.0]), 1);
    }

    #[test]
    fn shape_mismatch() {
        assert!(matches!(
            zero_round_model().predict(&[0.0; 3]),
            Err(GbtError::ShapeMismatch { expected: 4, got: 3 })
        ));
    }

    #[test]
    fn degenerate_and_label_errors() {
        let cfg = GbtConfig::default();
        let x = vec![vec![1.0, 2.0]; 5];
        assert!(matches!(
            fit(&x, &[1, 2, 3, 1, 2], names(2), &cfg),
            Err(GbtError::DegenerateFeatures)
        ));
        let x = vec![vec![1.0], vec![2.0]];
        assert!(matches!(
            fit(&x, &[1, 4], names(1), &cfg),
            Err(GbtError::InvalidLabel { row: 1, label: 4 })
        ));
    }

    #[test]
    fn separated_clusters_split_between() {
        let mut x = Vec::new();
        let mut y = Vec::new();
        for i in 0..20 {
            x.push(vec![i as f64 * 0.01]);
            y.push(1);
            x.push(vec![5.0 + i as f64 * 0.01]);
            y.push(3);
        }
        let cfg = GbtConfig {
            n_rounds: 1,
            min_child_weight: 1.0,
            ..GbtConfig::default()
        };
        let f = fit(&x, &y, names(1), &cfg).unwrap();
        match &f.model.rounds[0][0].nodes[0] {
            Node::Split { threshold, .. } => assert!(*threshold > 0.19 && *threshold < 5.0),
            _ => panic!("root did not split"),
        }
    }

    #[test]
    fn single_class_moves_toward_it() {
        let x: Vec<Vec<f64>> = (0..30).map(|i| vec![i as f64, (i % 7) as f64]).collect();
        let y = vec![2u8; 30];
        let f = fit(&x, &y, names(2), &GbtConfig::default()).unwrap();
        assert_eq!(f.empty_classes, vec![1, 3]);
        for r in &x {
            assert_eq!(f.model.predict(r).unwrap(), 2);
        }
    }

    fn blobs(n_per: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<u8>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, 0.3).unwrap();
        let centers = [[0.0, 0.0, 0.0, 0.0], [3.0, 3.0, 0.0, 1.0], [0.0, 3.0, 3.0, 2.0]];
        let mut x = Vec::new();
        let mut y = Vec::new();
        for _ in 0..n_per {
            for (k, c) in centers.iter().enumerate() {
                x.push(c.iter().map(|v| v + noise.sample(&mut rng)).collect());
                y.push(k as u8 + 1);
            }
        }
        (x, y)
    }

    #[test]
    fn loss_decreases_and_audit_passes() {
        let (x, y) = blobs(30, 4);
        let f = fit(&x, &y, names(4), &GbtConfig::default()).unwrap();
        assert!(f.train_loss.windows(2).all(|w| w[1] <= w[0]));
        f.model.audit().unwrap();
        let back = GbtModel::from_json(&f.model.to_json()).unwrap();
        assert_eq!(back, f.model);
    }

    proptest! {
        #[test]
        fn shift_invariant_softmax(a in -5.0f64..5.0, b in -5.0f64..5.0, c in -5.0f64..5.0, k in -50.0f64..50.0) {
            let p = softmax(&[a, b, c]);
            let q = softmax(&[a + k, b + k, c + k]);
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for i in 0..3 {
                prop_assert!((p[i] - q[i]).abs() < 1e-12);
            }
        }
    }
}
