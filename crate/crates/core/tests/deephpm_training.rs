use battdiag::data::Mode;
use battdiag::deephpm::{fine_tune, train, DeepHpmModel, Frozen, Structure, TrainConfig, TrainingSet};
use battdiag::features::SetKind;
use battdiag::pipeline::{search_structures, Sampler, SearchSpace};
use std::collections::HashMap;

/// `u = exp(-t)·(1 - 0.3x)` on a `t` grid for each `x`; every such curve
/// obeys `u_t = -u`.
fn decay_set(xs: &[f64], n_t: usize) -> TrainingSet {
    let mut inputs = Vec::new();
    let mut targets = Vec::new();
    let mut groups = Vec::new();
    for (g, &x) in xs.iter().enumerate() {
        for k in 0..n_t {
            let t = 2.0 * k as f64 / (n_t - 1) as f64;
            inputs.push(vec![t, x]);
            targets.push((-t).exp() * (1.0 - 0.3 * x));
            groups.push(g);
        }
    }
    TrainingSet::with_groups(inputs, targets, groups)
}

fn rmse(model: &DeepHpmModel, data: &TrainingSet) -> f64 {
    let pred = model.predict_batch(&data.inputs).unwrap();
    let sq: f64 = pred.iter().zip(&data.targets).map(|(p, y)| (p - y).powi(2)).sum();
    (sq / pred.len() as f64).sqrt()
}

#[test]
fn zero_residual_weights_reduce_to_regression() {
    let data = decay_set(&[0.0, 0.5, 1.0], 12);
    let structure = Structure { layers: 2, neurons: 16 };
    let full = TrainConfig {
        epochs: 1500,
        seed: 3,
        ..TrainConfig::default()
    };
    let plain = TrainConfig {
        w_h: 0.0,
        w_ht: 0.0,
        ..full
    };
    let (_, h_full) = train(&data, Mode::Lli, SetKind::V3, structure, &full).unwrap();
    let (_, h_plain) = train(&data, Mode::Lli, SetKind::V3, structure, &plain).unwrap();
    let (l_full, l_plain) = (h_full.last().unwrap().l_u, h_plain.last().unwrap().l_u);
    println!("plain L_u {l_plain:.3e}, full L_u {l_full:.3e}");
    assert!(l_plain <= l_full, "{l_plain} > {l_full}");
}

#[test]
fn fine_tuning_transfers_shared_dynamics() {
    let source = decay_set(&[0.0, 0.1, 0.2, 0.3, 0.4], 12);
    let target = decay_set(&[0.9], 12);
    let held = decay_set(&[0.8, 1.0], 9);
    let structure = Structure { layers: 2, neurons: 16 };
    let cfg = TrainConfig {
        epochs: 3000,
        seed: 5,
        ..TrainConfig::default()
    };
    let (pre, _) = train(&source, Mode::Lli, SetKind::V3, structure, &cfg).unwrap();
    let tune = TrainConfig {
        epochs: 500,
        frozen: Frozen::Dynamics,
        ..cfg
    };
    let (tuned, _) = fine_tune(&pre, &target, &tune).unwrap();
    let (before, after) = (rmse(&pre, &held), rmse(&tuned, &held));
    println!("target RMSE pre-trained {before:.3e}, fine-tuned {after:.3e}");
    assert!(after <= 0.8 * before, "{after} vs {before}");
}

#[test]
fn searched_structure_is_close_to_grid_best() {
    let train_set = decay_set(&[0.0, 0.5, 1.0], 10);
    let valid = decay_set(&[0.25, 0.75], 7);
    let cfg = TrainConfig {
        epochs: 3000,
        seed: 2,
        ..TrainConfig::default()
    };
    let mut cache: HashMap<(usize, usize), f64> = HashMap::new();
    let mut objective = |s: Structure| {
        let v = *cache.entry((s.layers, s.neurons)).or_insert_with(|| {
            let (m, _) = train(&train_set, Mode::Lli, SetKind::V3, s, &cfg).unwrap();
            rmse(&m, &valid)
        });
        Ok(v)
    };
    let space = SearchSpace {
        layers: vec![1, 2, 3],
        neurons: vec![4, 8, 16],
        trials: 20,
        ..SearchSpace::default()
    };
    let picked = search_structures(&space, 9, &mut objective).unwrap();
    let grid = SearchSpace {
        sampler: Sampler::Exhaustive,
        ..space
    };
    let best = search_structures(&grid, 9, &mut objective).unwrap();
    println!(
        "searched {:?} {:.3e}, grid best {:?} {:.3e}",
        picked.best, picked.best_objective, best.best, best.best_objective
    );
    assert!(picked.best_objective <= 1.1 * best.best_objective);
}
