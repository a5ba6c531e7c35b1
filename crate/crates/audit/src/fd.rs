//! Finite-difference checks of network derivatives and DeepHPM loss gradients.

use battdiag::autodiff::Mlp;
use battdiag::data::Mode;
use battdiag::deephpm::{loss_gradients, DeepHpmModel, Frozen, Structure, TrainConfig, TrainingSet};
use battdiag::features::SetKind;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::tolerances::{FIRST_ORDER_REL, FORWARD_ABS, SECOND_ORDER_REL};
use crate::{Deviation, OracleReport};

/// Step of the five-point stencils.
pub const STEP: f64 = 1e-3;

/// Forward pass written out loop by loop from the layer weights.
pub fn plain_forward(net: &Mlp, z: &[f64]) -> f64 {
    let layers = net.layers();
    let mut h = z.to_vec();
    for (k, l) in layers.iter().enumerate() {
        let (rows, cols) = l.weight.dim();
        let mut next = vec![0.0; rows];
        for (o, v) in next.iter_mut().enumerate() {
            let mut s = l.bias[[0, o]];
            for i in 0..cols {
                s += l.weight[[o, i]] * h[i];
            }
            *v = if k + 1 < layers.len() { s.tanh() } else { s };
        }
        h = next;
    }
    h[0]
}

fn shifted(z: &[f64], j: usize, d: f64) -> Vec<f64> {
    let mut v = z.to_vec();
    v[j] += d;
    v
}

/// Five-point first derivative of `f` along coordinate `j`.
pub fn d1(f: &dyn Fn(&[f64]) -> f64, z: &[f64], j: usize) -> f64 {
    let h = STEP;
    let at = |k: f64| f(&shifted(z, j, k * h));
    (-at(2.0) + 8.0 * at(1.0) - 8.0 * at(-1.0) + at(-2.0)) / (12.0 * h)
}

/// Five-point second derivative of `f` along coordinate `j`.
pub fn d2(f: &dyn Fn(&[f64]) -> f64, z: &[f64], j: usize) -> f64 {
    let h = STEP;
    let at = |k: f64| f(&shifted(z, j, k * h));
    (-at(2.0) + 16.0 * at(1.0) - 30.0 * at(0.0) + 16.0 * at(-1.0) - at(-2.0)) / (12.0 * h * h)
}

/// Mixed derivative `∂i∂j`; nested five-point stencils.
pub fn d11(f: &dyn Fn(&[f64]) -> f64, z: &[f64], i: usize, j: usize) -> f64 {
    if i == j {
        return d2(f, z, i);
    }
    let inner = |p: &[f64]| d1(f, p, j);
    d1(&inner, z, i)
}

#[derive(Default)]
struct Tally {
    forward: Deviation,
    grad_input: Deviation,
    d_t: Deviation,
    d_tt: Deviation,
    d_tx: Deviation,
    loss_first: Deviation,
    loss_second: Deviation,
    params: Deviation,
}

fn check_net(net: &Mlp, z: &[f64], t: &mut Tally) {
    let f = |p: &[f64]| plain_forward(net, p);
    t.forward.record(net.forward(z).unwrap(), f(z));
    let g = net.grad_input(z).unwrap();
    for (j, &gj) in g.iter().enumerate() {
        t.grad_input.record(gj, d1(&f, z, j));
    }
    let td = net.second_time_derivatives(z, 0).unwrap();
    t.d_t.record(td.d_t, d1(&f, z, 0));
    t.d_tt.record(td.d_tt, d2(&f, z, 0));
    for (j, &m) in td.d_tx.iter().enumerate() {
        t.d_tx.record(m, d11(&f, z, 0, j));
    }
}

/// `(H, H_t)` at `z` from plain forward passes and stencils only.
fn residual_oracle(model: &DeepHpmModel, z: &[f64]) -> (f64, f64) {
    let h_of = |p: &[f64]| {
        let f = |q: &[f64]| plain_forward(&model.surrogate, q);
        let mut g_in = p.to_vec();
        g_in.push(f(p));
        for (j, &on) in model.active_features.iter().enumerate() {
            g_in.push(if on { d1(&f, p, j + 1) } else { 0.0 });
        }
        d1(&f, p, 0) - plain_forward(&model.dynamics, &g_in)
    };
    (h_of(z), d1(&h_of, z, 0))
}

/// Loss terms recomputed from their definition: squared label error on
/// labelled rows, squared `H` and `H_t` on every row and on midpoints
/// between consecutive rows of one group when collocation is on.
pub fn loss_oracle(model: &DeepHpmModel, data: &TrainingSet, cfg: &TrainConfig) -> [f64; 4] {
    let mut rows: Vec<Vec<f64>> = data.inputs.clone();
    if cfg.midpoint_collocation {
        for i in 1..data.inputs.len() {
            if data.groups[i] == data.groups[i - 1] {
                let mid = data.inputs[i]
                    .iter()
                    .zip(&data.inputs[i - 1])
                    .map(|(a, b)| 0.5 * (a + b))
                    .collect();
                rows.push(mid);
            }
        }
    }
    let l_u: f64 = data
        .inputs
        .iter()
        .zip(&data.targets)
        .map(|(z, u)| (plain_forward(&model.surrogate, z) - u).powi(2))
        .sum();
    let (mut l_h, mut l_ht) = (0.0, 0.0);
    for z in &rows {
        let (h, ht) = residual_oracle(model, z);
        l_h += h * h;
        l_ht += ht * ht;
    }
    [l_u, l_h, l_ht, cfg.w_u * l_u + cfg.w_h * l_h + cfg.w_ht * l_ht]
}

fn randomize_biases(net: &mut Mlp, rng: &mut ChaCha8Rng) {
    let normal = Normal::new(0.0, 0.3).unwrap();
    for l in net.layers_mut() {
        l.bias.iter_mut().for_each(|b| *b = normal.sample(rng));
    }
}

/// One random DeepHPM model with a small training set and loss weights.
pub fn random_instance(seed: u64) -> (DeepHpmModel, TrainingSet, TrainConfig) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = rng.gen_range(1..=4);
    let structure = Structure {
        layers: rng.gen_range(1..=3),
        neurons: rng.gen_range(2..=8),
    };
    let mut model = DeepHpmModel::init(Mode::Lli, SetKind::V3, m, structure, rng.gen());
    randomize_biases(&mut model.surrogate, &mut rng);
    randomize_biases(&mut model.dynamics, &mut rng);
    if rng.gen_bool(0.3) {
        let j = rng.gen_range(0..m);
        model.active_features[j] = false;
    }
    let n = rng.gen_range(4..=7);
    let inputs: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..=m).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    let targets: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
    let cfg = TrainConfig {
        w_u: rng.gen_range(0.5..2.0),
        w_h: rng.gen_range(0.5..2.0),
        w_ht: rng.gen_range(0.5..2.0),
        midpoint_collocation: rng.gen_bool(0.5),
        frozen: Frozen::None,
        ..TrainConfig::default()
    };
    (model, TrainingSet::new(inputs, targets), cfg)
}

/// `model` with one scalar of parameter block `p` shifted by `d`; blocks are
/// weight then bias per layer, surrogate first.
fn perturbed(model: &DeepHpmModel, p: usize, flat: usize, d: f64) -> DeepHpmModel {
    let mut m = model.clone();
    let n_f = 2 * m.surrogate.layers().len();
    let (net, q) = if p < n_f {
        (&mut m.surrogate, p)
    } else {
        (&mut m.dynamics, p - n_f)
    };
    let layer = &mut net.layers_mut()[q / 2];
    let mat = if q % 2 == 0 { &mut layer.weight } else { &mut layer.bias };
    let cols = mat.ncols();
    mat[[flat / cols, flat % cols]] += d;
    m
}

fn check_loss(model: &DeepHpmModel, data: &TrainingSet, cfg: &TrainConfig, t: &mut Tally) {
    let parts = model.loss(data, cfg).unwrap();
    let want = loss_oracle(model, data, cfg);
    t.loss_first.record(parts.l_u, want[0]);
    t.loss_first.record(parts.l_h, want[1]);
    t.loss_second.record(parts.l_ht, want[2]);
    t.loss_second.record(parts.total, want[3]);

    let (_, grads) = loss_gradients(model, data, cfg).unwrap();
    let total = |m: &DeepHpmModel| m.loss(data, cfg).unwrap().total;
    for (p, grad) in grads.iter().enumerate() {
        for (flat, &analytic) in grad.iter().enumerate() {
            let at = |k: f64| total(&perturbed(model, p, flat, k * STEP));
            let fd = (-at(2.0) + 8.0 * at(1.0) - 8.0 * at(-1.0) + at(-2.0)) / (12.0 * STEP);
            t.params.record(analytic, fd);
        }
    }
}

/// Network derivatives, loss terms and loss gradients of `n_nets` random
/// models against finite differences.
pub fn autodiff_suite(n_nets: usize, seed: u64) -> Vec<OracleReport> {
    let mut t = Tally::default();
    for k in 0..n_nets {
        let (model, data, cfg) = random_instance(seed.wrapping_mul(1_000_003).wrapping_add(k as u64));
        let mut rng = ChaCha8Rng::seed_from_u64(k as u64 ^ 0x5eed);
        for net in [&model.surrogate, &model.dynamics] {
            let z: Vec<f64> = (0..net.input_width()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            check_net(net, &z, &mut t);
        }
        check_loss(&model, &data, &cfg, &mut t);
    }
    let with_n = |mut r: OracleReport| {
        r.detail = format!("{n_nets} nets");
        r
    };
    let forward = OracleReport {
        pass: t.forward.max_abs <= FORWARD_ABS,
        tolerance: FORWARD_ABS,
        detail: "tolerance on max_abs".into(),
        ..t.forward.report("autodiff/forward", FORWARD_ABS)
    };
    vec![
        forward,
        with_n(t.grad_input.report("autodiff/grad_input", FIRST_ORDER_REL)),
        with_n(t.d_t.report("autodiff/d_t", FIRST_ORDER_REL)),
        with_n(t.d_tt.report("autodiff/d_tt", SECOND_ORDER_REL)),
        with_n(t.d_tx.report("autodiff/d_tx", SECOND_ORDER_REL)),
        with_n(t.loss_first.report("autodiff/loss_u_h", FIRST_ORDER_REL)),
        with_n(t.loss_second.report("autodiff/loss_ht_total", SECOND_ORDER_REL)),
        with_n(t.params.report("autodiff/param_grads", FIRST_ORDER_REL)),
    ]
}
