//! Exhaustive split enumeration and a recursive tree builder on top of it.

use battdiag::gbt::{best_split, build_tree, GbtConfig, Node};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::tolerances::SPLIT_GAIN_REL;
use crate::{Deviation, OracleReport};

/// `(feature, threshold, gain)` of the best admissible split of `rows`.
///
/// Every midpoint between distinct values of every feature is tried, with
/// child sums recomputed from scratch. Earlier candidates win ties, which
/// are gains within a relative `1e-12`.
pub fn exhaustive_split(
    x: &[Vec<f64>],
    g: &[f64],
    h: &[f64],
    rows: &[usize],
    cfg: &GbtConfig,
) -> Option<(usize, f64, f64)> {
    let score = |gs: f64, hs: f64| gs * gs / (hs + cfg.reg_lambda);
    let g_all: f64 = rows.iter().map(|&i| g[i]).sum();
    let h_all: f64 = rows.iter().map(|&i| h[i]).sum();
    let mut best: Option<(usize, f64, f64)> = None;
    for f in 0..x[0].len() {
        let mut values: Vec<f64> = rows.iter().map(|&i| x[i][f]).collect();
        values.sort_by(f64::total_cmp);
        values.dedup();
        for w in values.windows(2) {
            let thr = 0.5 * (w[0] + w[1]);
            let left: Vec<usize> = rows.iter().copied().filter(|&i| x[i][f] < thr).collect();
            let right: Vec<usize> = rows.iter().copied().filter(|&i| x[i][f] >= thr).collect();
            let gl: f64 = left.iter().map(|&i| g[i]).sum();
            let hl: f64 = left.iter().map(|&i| h[i]).sum();
            let gr: f64 = right.iter().map(|&i| g[i]).sum();
            let hr: f64 = right.iter().map(|&i| h[i]).sum();
            if hl < cfg.min_child_weight || hr < cfg.min_child_weight {
                continue;
            }
            let gain = 0.5 * (score(gl, hl) + score(gr, hr) - score(g_all, h_all)) - cfg.reg_gamma;
            if gain > 0.0 && best.is_none_or(|b| gain - b.2 > 1e-12 * b.2.abs()) {
                best = Some((f, thr, gain));
            }
        }
    }
    best
}

/// Reference tree in preorder: `Some((feature, threshold))` for splits,
/// `None` paired with the leaf weight for leaves.
pub fn oracle_tree(x: &[Vec<f64>], g: &[f64], h: &[f64], cfg: &GbtConfig) -> Vec<(Option<(usize, f64)>, f64)> {
    fn grow(
        out: &mut Vec<(Option<(usize, f64)>, f64)>,
        x: &[Vec<f64>],
        g: &[f64],
        h: &[f64],
        rows: Vec<usize>,
        depth: usize,
        cfg: &GbtConfig,
    ) {
        let split = if depth < cfg.max_depth {
            exhaustive_split(x, g, h, &rows, cfg)
        } else {
            None
        };
        match split {
            None => {
                let gs: f64 = rows.iter().map(|&i| g[i]).sum();
                let hs: f64 = rows.iter().map(|&i| h[i]).sum();
                out.push((None, -cfg.learning_rate * gs / (hs + cfg.reg_lambda)));
            }
            Some((f, thr, _)) => {
                out.push((Some((f, thr)), 0.0));
                let left = rows.iter().copied().filter(|&i| x[i][f] < thr).collect();
                let right = rows.iter().copied().filter(|&i| x[i][f] >= thr).collect();
                grow(out, x, g, h, left, depth + 1, cfg);
                grow(out, x, g, h, right, depth + 1, cfg);
            }
        }
    }
    let mut out = Vec::new();
    grow(&mut out, x, g, h, (0..x.len()).collect(), 0, cfg);
    out
}

/// Random instance with values on a coarse lattice so that ties occur.
pub fn random_instance(rng: &mut ChaCha8Rng, n: usize, width: usize) -> (Vec<Vec<f64>>, Vec<f64>, Vec<f64>) {
    let x = (0..n)
        .map(|_| (0..width).map(|_| rng.gen_range(0..8) as f64 * 0.25).collect())
        .collect();
    let g = (0..n).map(|_| StandardNormal.sample(rng)).collect();
    let h = (0..n).map(|_| rng.gen_range(0.05..0.5)).collect();
    (x, g, h)
}

/// Root split choice and whole-tree structure on `n_instances` random
/// instances of `n_samples` rows.
pub fn split_suite(n_instances: usize, n_samples: usize, seed: u64) -> Vec<OracleReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut gains = Deviation::default();
    let mut weights = Deviation::default();
    let (mut split_mismatch, mut tree_mismatch, mut splits_seen) = (0, 0, 0);
    for k in 0..n_instances {
        let (x, g, h) = random_instance(&mut rng, n_samples, 3);
        let cfg = GbtConfig {
            max_depth: 4,
            min_child_weight: [0.0, 0.5, 1.0][k % 3],
            reg_lambda: 1.0,
            reg_gamma: [0.0, 0.05][k % 2],
            learning_rate: 0.3,
            ..GbtConfig::default()
        };
        let rows: Vec<usize> = (0..n_samples).collect();
        let got = best_split(&x, &g, &h, &rows, &cfg);
        let want = exhaustive_split(&x, &g, &h, &rows, &cfg);
        match (got, want) {
            (Some(s), Some((f, thr, gain))) => {
                splits_seen += 1;
                if s.feature != f || s.threshold != thr {
                    split_mismatch += 1;
                }
                gains.record(s.gain, gain);
            }
            (None, None) => {}
            _ => split_mismatch += 1,
        }

        let tree = build_tree(&x, &g, &h, &cfg);
        let reference = oracle_tree(&x, &g, &h, &cfg);
        if tree.nodes.len() != reference.len() {
            tree_mismatch += 1;
            continue;
        }
        for (node, (split, weight)) in tree.nodes.iter().zip(&reference) {
            match (node, split) {
                (Node::Split { feature, threshold, .. }, Some((f, thr))) => {
                    if feature != f || threshold != thr {
                        tree_mismatch += 1;
                    }
                }
                (Node::Leaf { weight: w, .. }, None) => weights.record(*w, *weight),
                _ => tree_mismatch += 1,
            }
        }
    }
    let mut root = gains.report("gbt/root_split", SPLIT_GAIN_REL);
    root.pass &= split_mismatch == 0;
    root.detail = format!("{split_mismatch} mismatched of {n_instances}, {splits_seen} with a split");
    let mut trees = weights.report("gbt/tree", SPLIT_GAIN_REL);
    trees.pass &= tree_mismatch == 0;
    trees.detail = format!("{tree_mismatch} mismatched nodes over {n_instances} trees");
    vec![root, trees]
}
