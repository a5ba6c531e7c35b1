//! Dense finite-difference curvature of noiseless planted fades.

use battdiag::knee::{identify_knees, Abscissa, CapacityCurve, KneeConfig};
use battdiag::synth::{generate_fleet, ScenarioTemplate, SynthCell, SynthCellSpec};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};

use crate::tolerances::{DETECTED_B2_HITS, DETECTED_B2_SPAN, PLANTED_B2_SPAN};
use crate::{Deviation, OracleReport};

/// Points of the dense grid.
pub const GRID: usize = 4001;

/// Normalized curvature of `spec`'s noiseless capacity on a dense grid of
/// `[lo, hi]`, from central differences with both axes scaled to the unit
/// square. Returns grid hours and curvature; the end points are dropped.
pub fn fd_curvature(spec: &SynthCellSpec, lo: f64, hi: f64) -> (Vec<f64>, Vec<f64>) {
    let ts: Vec<f64> = (0..GRID)
        .map(|k| lo + (hi - lo) * k as f64 / (GRID - 1) as f64)
        .collect();
    let ys: Vec<f64> = ts.iter().map(|&t| spec.capacity(t)).collect();
    let y_min = ys.iter().copied().fold(f64::INFINITY, f64::min);
    let y_max = ys.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let yn: Vec<f64> = ys.iter().map(|y| (y - y_min) / (y_max - y_min)).collect();
    let dq = 1.0 / (GRID - 1) as f64;
    let kappa = (1..GRID - 1)
        .map(|i| {
            let d1 = (yn[i + 1] - yn[i - 1]) / (2.0 * dq);
            let d2 = (yn[i + 1] - 2.0 * yn[i] + yn[i - 1]) / (dq * dq);
            d2 / (1.0 + d1 * d1).powf(1.5)
        })
        .collect();
    (ts[1..GRID - 1].to_vec(), kappa)
}

/// Hour of the most negative curvature.
pub fn fd_knee(spec: &SynthCellSpec, lo: f64, hi: f64) -> f64 {
    let (ts, kappa) = fd_curvature(spec, lo, hi);
    let i = (0..kappa.len()).fold(0, |b, i| if kappa[i] < kappa[b] { i } else { b });
    ts[i]
}

/// `(onset, knee)` hours of a smooth fade: the knee at the most negative
/// curvature, the onset at the steepest curvature descent after the last
/// non-negative curvature before the knee.
pub fn fd_boundaries(spec: &SynthCellSpec, lo: f64, hi: f64) -> (f64, f64) {
    let (ts, kappa) = fd_curvature(spec, lo, hi);
    let b2 = (0..kappa.len()).fold(0, |b, i| if kappa[i] < kappa[b] { i } else { b });
    let start = (0..b2).rev().find(|&i| kappa[i] >= 0.0).unwrap_or(0).max(1);
    let slope = |i: usize| kappa[i + 1] - kappa[i - 1];
    let b1 = (start..b2).fold(start, |b, i| if slope(i) < slope(b) { i } else { b });
    (ts[b1], ts[b2])
}

/// Planted kneed fades: every cell of a fully kneed source-A and target fleet.
pub fn kneed_fades(n: usize, seed: u64) -> Vec<SynthCell> {
    let mut out = Vec::new();
    for (template, count) in [
        (ScenarioTemplate::source_a(), n / 2),
        (ScenarioTemplate::target(), n - n / 2),
    ] {
        let t = ScenarioTemplate {
            sample_period_s: 3600.0,
            ..template
        };
        out.extend(generate_fleet(&t, count, 1.0, seed).expect("valid templates"));
    }
    out
}

fn curve(cell: &SynthCell) -> CapacityCurve {
    let q = cell.rpts.iter().map(|r| r.t).collect();
    let y = cell.rpts.iter().map(|r| r.normalized_capacity).collect();
    CapacityCurve::new(Abscissa::Hours, q, y).expect("valid RPT curve")
}

/// Detector outcome on one kneed fade.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KneeCheck {
    pub oracle_b2: f64,
    pub planted_b2: Option<f64>,
    pub detected_b1: Option<f64>,
    pub detected_b2: Option<f64>,
    pub span: f64,
}

impl KneeCheck {
    pub fn hit(&self) -> bool {
        self.detected_b2
            .is_some_and(|b| (b - self.oracle_b2).abs() <= DETECTED_B2_SPAN * self.span)
    }

    pub fn ordered(&self) -> bool {
        match (self.detected_b1, self.detected_b2) {
            (Some(b1), Some(b2)) => b1 < b2,
            _ => true,
        }
    }
}

pub fn check_fades(cells: &[SynthCell], cfg: &KneeConfig) -> Vec<KneeCheck> {
    cells
        .iter()
        .map(|c| {
            let lo = c.rpts[0].t;
            let hi = c.rpts[c.rpts.len() - 1].t;
            let timeline = identify_knees(&curve(c), cfg).expect("detector runs");
            KneeCheck {
                oracle_b2: fd_knee(&c.spec, lo, hi),
                planted_b2: c.truth.b2,
                detected_b1: timeline.b1,
                detected_b2: timeline.b2,
                span: hi - lo,
            }
        })
        .collect()
}

/// Straight fades with Gaussian capacity noise; slopes spread so the end of
/// life lands between 10% and 40% fade.
pub fn linear_fades(n: usize, n_rpts: usize, noise: f64, seed: u64) -> Vec<CapacityCurve> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fade = Uniform::new(0.1, 0.4);
    let eps = Normal::new(0.0, noise).unwrap();
    (0..n)
        .map(|_| {
            let total = fade.sample(&mut rng);
            let q: Vec<f64> = (1..=n_rpts).map(|k| 600.0 * k as f64 / n_rpts as f64).collect();
            let y = q
                .iter()
                .map(|t| 1.0 - total * t / 600.0 + eps.sample(&mut rng))
                .collect();
            CapacityCurve::new(Abscissa::Hours, q, y).unwrap()
        })
        .collect()
}

/// Planted truth and detector against the dense curvature oracle.
pub fn curvature_suite(n: usize, seed: u64) -> Vec<OracleReport> {
    let cells = kneed_fades(n, seed);
    let checks = check_fades(&cells, &KneeConfig::default());
    let mut planted = Deviation::default();
    let mut missing = 0;
    for c in &checks {
        match c.planted_b2 {
            Some(b) => planted.record(b / c.span, c.oracle_b2 / c.span),
            None => missing += 1,
        }
    }
    let mut p = planted.report("knee/planted_b2", PLANTED_B2_SPAN);
    p.pass = missing == 0 && planted.max_abs <= PLANTED_B2_SPAN;
    p.tolerance = PLANTED_B2_SPAN;
    p.detail = format!("tolerance on max_abs in span units, {missing} without a planted knee");

    let mut detected = Deviation::default();
    for c in &checks {
        if let Some(b) = c.detected_b2 {
            detected.record(b / c.span, c.oracle_b2 / c.span);
        }
    }
    let hits = checks.iter().filter(|c| c.hit()).count();
    let unordered = checks.iter().filter(|c| !c.ordered()).count();
    let mut d = detected.report("knee/detected_b2", DETECTED_B2_SPAN);
    d.pass = hits >= DETECTED_B2_HITS && unordered == 0;
    d.detail = format!(
        "{hits}/{} within {DETECTED_B2_SPAN} span (need {DETECTED_B2_HITS}), {unordered} with b1 >= b2",
        checks.len()
    );
    vec![p, d]
}
