//! Knee and knee-onset detection on capacity fade curves, phase labels,
//! and the linear onset-to-knee predictor.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MIN_CURVE_POINTS: usize = 8;
pub const DEFAULT_GRID: usize = 2001;
pub const DEFAULT_KNEE_THRESHOLD: f64 = 5.0;
pub const DEFAULT_ONSET_THRESHOLD: f64 = 2.0;
/// Degrees-of-freedom inflation for the default knee smoother.
pub const DEFAULT_GCV_PENALTY: f64 = 2.0;

#[derive(Debug, Error, PartialEq)]
pub enum KneeError {
    #[error("need at least {need} points, got {got}")]
    TooFewPoints { got: usize, need: usize },
    #[error("abscissa must be strictly increasing (index {0})")]
    NotIncreasing(usize),
    #[error("non-finite value at index {0}")]
    NonFinite(usize),
    #[error("need at least 2 (b1, b2) pairs, got {0}")]
    TooFewPairs(usize),
    #[error("all knee-onset values are identical")]
    DegeneratePairs,
    #[error("smoothing failed: {0}")]
    Smoothing(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Abscissa {
    Cycles,
    CumulativeChargeAh,
    Hours,
}

/// Capacity against a strictly increasing abscissa.
#[derive(Debug, Clone, PartialEq)]
pub struct CapacityCurve {
    kind: Abscissa,
    q: Vec<f64>,
    y: Vec<f64>,
}

impl CapacityCurve {
    pub fn new(kind: Abscissa, q: Vec<f64>, y: Vec<f64>) -> Result<Self, KneeError> {
        assert_eq!(q.len(), y.len(), "q and y lengths differ");
        if q.len() < MIN_CURVE_POINTS {
            return Err(KneeError::TooFewPoints {
                got: q.len(),
                need: MIN_CURVE_POINTS,
            });
        }
        if let Some(i) = (0..q.len()).find(|&i| !q[i].is_finite() || !y[i].is_finite()) {
            return Err(KneeError::NonFinite(i));
        }
        if let Some(i) = (1..q.len()).find(|&i| q[i] <= q[i - 1]) {
            return Err(KneeError::NotIncreasing(i));
        }
        Ok(Self { kind, q, y })
    }

    pub fn kind(&self) -> Abscissa {
        self.kind
    }

    pub fn q(&self) -> &[f64] {
        &self.q
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Smoothing {
    /// Penalty chosen by generalized cross-validation.
    Gcv,
    /// Generalized cross-validation with the effective degrees of freedom
    /// inflated by the given factor (> 1 smooths more); better suited to
    /// curvature than plain GCV, which targets the fitted values.
    PenalizedGcv(f64),
    /// Fixed penalty in normalized units; 0 interpolates.
    Fixed(f64),
}

/// Cubic smoothing spline fitted in min-max normalized coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct SmoothedCurve {
    knots: Vec<f64>,
    values: Vec<f64>,
    /// Second derivatives at the knots; zero at both ends.
    second: Vec<f64>,
    q_min: f64,
    q_range: f64,
    y_min: f64,
    y_range: f64,
    lambda: f64,
}

/// Value and derivatives of a smoothed curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub value: f64,
    pub d1: f64,
    pub d2: f64,
    pub d3: f64,
}

fn min_max(v: &[f64]) -> (f64, f64) {
    let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (lo, hi - lo)
}

struct SplineSystem {
    n: usize,
    /// `n × (n-2)`
    q: DMatrix<f64>,
    /// `(n-2) × (n-2)`
    r: DMatrix<f64>,
    qtq: DMatrix<f64>,
    qty: DVector<f64>,
}

impl SplineSystem {
    fn new(x: &[f64], y: &[f64]) -> Self {
        let n = x.len();
        let h: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
        let mut q = DMatrix::zeros(n, n - 2);
        let mut r = DMatrix::zeros(n - 2, n - 2);
        for j in 0..n - 2 {
            q[(j, j)] = 1.0 / h[j];
            q[(j + 1, j)] = -1.0 / h[j] - 1.0 / h[j + 1];
            q[(j + 2, j)] = 1.0 / h[j + 1];
            r[(j, j)] = (h[j] + h[j + 1]) / 3.0;
            if j + 1 < n - 2 {
                r[(j, j + 1)] = h[j + 1] / 6.0;
                r[(j + 1, j)] = h[j + 1] / 6.0;
            }
        }
        let qtq = q.transpose() * &q;
        let qty = q.transpose() * DVector::from_column_slice(y);
        Self { n, q, r, qtq, qty }
    }

    /// Interior second derivatives, fitted values and hat-matrix trace.
    fn solve(&self, y: &[f64], lambda: f64) -> Option<(DVector<f64>, DVector<f64>, f64)> {
        let m = &self.r + &self.qtq * lambda;
        let chol = m.cholesky()?;
        let gamma = chol.solve(&self.qty);
        let fitted = DVector::from_column_slice(y) - (&self.q * &gamma) * lambda;
        let minv = chol.inverse();
        let tr = self.n as f64 - lambda * minv.component_mul(&self.qtq).sum();
        Some((gamma, fitted, tr))
    }
}

/// Log-spaced candidate penalties for cross-validation.
fn gcv_grid() -> impl Iterator<Item = f64> {
    (0..=64).map(|k| 10f64.powf(-12.0 + 16.0 * k as f64 / 64.0))
}

/// Fits a cubic smoothing spline; derivatives come from the spline
/// coefficients.
pub fn smooth_curve(curve: &CapacityCurve, smoothing: Smoothing) -> Result<SmoothedCurve, KneeError> {
    let (q_min, q_range) = min_max(&curve.q);
    let (y_min, y_range) = min_max(&curve.y);
    let y_scale = if y_range > 0.0 { y_range } else { 1.0 };
    let x: Vec<f64> = curve.q.iter().map(|v| (v - q_min) / q_range).collect();
    let y: Vec<f64> = curve.y.iter().map(|v| (v - y_min) / y_scale).collect();
    let sys = SplineSystem::new(&x, &y);
    let n = x.len() as f64;

    let lambda = match smoothing {
        Smoothing::Fixed(l) if l >= 0.0 && l.is_finite() => l,
        Smoothing::Fixed(l) => return Err(KneeError::Smoothing(format!("invalid penalty {l}"))),
        Smoothing::PenalizedGcv(g) if !(g >= 1.0 && g.is_finite()) => {
            return Err(KneeError::Smoothing(format!("invalid GCV penalty {g}")))
        }
        Smoothing::Gcv | Smoothing::PenalizedGcv(_) => {
            let gamma = match smoothing {
                Smoothing::PenalizedGcv(g) => g,
                _ => 1.0,
            };
            let mut best: Option<(f64, f64)> = None;
            for l in gcv_grid() {
                let Some((_, fitted, tr)) = sys.solve(&y, l) else {
                    continue;
                };
                let rss: f64 = fitted.iter().zip(&y).map(|(f, v)| (f - v).powi(2)).sum();
                let resid_dof = n - gamma * tr;
                if resid_dof <= 0.0 {
                    continue;
                }
                let denom = resid_dof * resid_dof;
                if !(denom > 1e-12) {
                    continue;
                }
                let score = n * rss / denom;
                if best.is_none_or(|(s, _)| score < s) {
                    best = Some((score, l));
                }
            }
            best.ok_or_else(|| KneeError::Smoothing("no admissible penalty".into()))?
                .1
        }
    };

    let (gamma, fitted, _) = sys
        .solve(&y, lambda)
        .ok_or_else(|| KneeError::Smoothing("system not positive definite".into()))?;
    let mut second = vec![0.0];
    second.extend(gamma.iter());
    second.push(0.0);
    Ok(SmoothedCurve {
        knots: x,
        values: fitted.iter().copied().collect(),
        second,
        q_min,
        q_range,
        y_min,
        y_range: y_scale,
        lambda,
    })
}

impl SmoothedCurve {
    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// Evaluation in normalized coordinates `ξ ∈ [0, 1]`.
    pub fn eval_normalized(&self, xi: f64) -> CurvePoint {
        let k = &self.knots;
        let n = k.len();
        let i = k.partition_point(|&v| v <= xi).clamp(1, n - 1) - 1;
        let h = k[i + 1] - k[i];
        let (f0, f1) = (self.values[i], self.values[i + 1]);
        let (g0, g1) = (self.second[i], self.second[i + 1]);
        let b = (f1 - f0) / h - h * (2.0 * g0 + g1) / 6.0;
        let c = g0 / 2.0;
        let d = (g1 - g0) / (6.0 * h);
        let s = xi - k[i];
        if xi < k[0] || xi > k[n - 1] {
            // natural ends: continue linearly
            let (x0, f, slope) = if xi < k[0] {
                (k[0], self.values[0], b)
            } else {
                let hl = k[n - 1] - k[n - 2];
                let slope = (self.values[n - 1] - self.values[n - 2]) / hl
                    + hl * (2.0 * self.second[n - 1] + self.second[n - 2]) / 6.0;
                (k[n - 1], self.values[n - 1], slope)
            };
            return CurvePoint {
                value: f + slope * (xi - x0),
                d1: slope,
                d2: 0.0,
                d3: 0.0,
            };
        }
        CurvePoint {
            value: f0 + s * (b + s * (c + s * d)),
            d1: b + s * (2.0 * c + 3.0 * s * d),
            d2: 2.0 * c + 6.0 * d * s,
            d3: 6.0 * d,
        }
    }

    /// Evaluation in the curve's original units.
    pub fn eval(&self, q: f64) -> CurvePoint {
        let p = self.eval_normalized((q - self.q_min) / self.q_range);
        let (sy, sq) = (self.y_range, self.q_range);
        CurvePoint {
            value: self.y_min + sy * p.value,
            d1: sy / sq * p.d1,
            d2: sy / (sq * sq) * p.d2,
            d3: sy / (sq * sq * sq) * p.d3,
        }
    }

    pub fn to_original_q(&self, xi: f64) -> f64 {
        self.q_min + self.q_range * xi
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KneeConfig {
    /// Minimum `-κ` (normalized units) for a knee.
    pub knee_threshold: f64,
    /// Minimum `-κ` for reporting an onset on a curve without a knee.
    pub onset_threshold: f64,
    pub grid_points: usize,
    pub smoothing: Smoothing,
}

impl Default for KneeConfig {
    fn default() -> Self {
        Self {
            knee_threshold: DEFAULT_KNEE_THRESHOLD,
            onset_threshold: DEFAULT_ONSET_THRESHOLD,
            grid_points: DEFAULT_GRID,
            smoothing: Smoothing::PenalizedGcv(DEFAULT_GCV_PENALTY),
        }
    }
}

/// Knee-onset `b1`, knee `b2` and the per-point phase labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseTimeline {
    pub b1: Option<f64>,
    pub b2: Option<f64>,
    /// Most negative normalized curvature on the grid.
    pub min_curvature: f64,
    pub labels: Vec<u8>,
}

/// Signed curvature and its derivative on a uniform grid of `[0, 1]`.
///
/// `y` may be any function returning `(y', y'', y''')`.
pub fn curvature_profile(
    grid_points: usize,
    mut y: impl FnMut(f64) -> (f64, f64, f64),
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let last = (grid_points - 1) as f64;
    let mut xs = Vec::with_capacity(grid_points);
    let mut kappa = Vec::with_capacity(grid_points);
    let mut dkappa = Vec::with_capacity(grid_points);
    for k in 0..grid_points {
        let xi = k as f64 / last;
        let (d1, d2, d3) = y(xi);
        let w = 1.0 + d1 * d1;
        xs.push(xi);
        kappa.push(d2 / w.powf(1.5));
        dkappa.push(d3 / w.powf(1.5) - 3.0 * d1 * d2 * d2 / w.powf(2.5));
    }
    (xs, kappa, dkappa)
}

/// Grid indices `(onset, knee)` from a curvature profile; the knee is the
/// minimum of `κ`, the onset the minimum of `dκ/dq` between the last
/// non-negative-curvature point before the knee and the knee.
pub fn locate_boundaries(kappa: &[f64], dkappa: &[f64]) -> (Option<usize>, usize) {
    let mut b2 = 0;
    for i in 1..kappa.len() {
        if kappa[i] < kappa[b2] {
            b2 = i;
        }
    }
    let start = (0..b2).rev().find(|&i| kappa[i] >= 0.0).unwrap_or(0);
    let mut b1: Option<usize> = None;
    for i in start..b2 {
        if b1.is_none_or(|j| dkappa[i] < dkappa[j]) {
            b1 = Some(i);
        }
    }
    (b1, b2)
}

/// Detects knee-onset and knee on a capacity curve.
pub fn identify_knees(curve: &CapacityCurve, cfg: &KneeConfig) -> Result<PhaseTimeline, KneeError> {
    let s = smooth_curve(curve, cfg.smoothing)?;
    let (xs, kappa, dkappa) = curvature_profile(cfg.grid_points.max(3), |xi| {
        let p = s.eval_normalized(xi);
        (p.d1, p.d2, p.d3)
    });
    let (b1i, b2i) = locate_boundaries(&kappa, &dkappa);
    let kmin = kappa[b2i];
    let (b1, b2) = if kmin <= -cfg.knee_threshold {
        (b1i.map(|i| s.to_original_q(xs[i])), Some(s.to_original_q(xs[b2i])))
    } else if kmin <= -cfg.onset_threshold {
        (b1i.map(|i| s.to_original_q(xs[i])), None)
    } else {
        (None, None)
    };
    let labels = label_phases(&curve.q, b1, b2);
    Ok(PhaseTimeline {
        b1,
        b2,
        min_curvature: kmin,
        labels,
    })
}

/// Phase 1 before `b1`, 2 in `[b1, b2)`, 3 from `b2`; a missing boundary
/// extends the preceding phase.
pub fn label_phases(q: &[f64], b1: Option<f64>, b2: Option<f64>) -> Vec<u8> {
    q.iter()
        .map(|&v| {
            if b2.is_some_and(|b| v >= b) {
                3
            } else if b1.is_some_and(|b| v >= b) {
                2
            } else {
                1
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KneeCorrelationModel {
    pub slope: f64,
    pub intercept: f64,
    pub pearson_rho: f64,
    pub n_fit: usize,
    pub b1_min: f64,
    pub b1_max: f64,
    pub abscissa: Abscissa,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KneePrediction {
    pub b2: f64,
    /// The onset lies outside the range seen during fitting.
    pub extrapolated: bool,
}

/// Ordinary least squares `b2 = slope·b1 + intercept`.
pub fn fit_knee_regression(pairs: &[(f64, f64)], abscissa: Abscissa) -> Result<KneeCorrelationModel, KneeError> {
    if pairs.len() < 2 {
        return Err(KneeError::TooFewPairs(pairs.len()));
    }
    let n = pairs.len() as f64;
    let mx = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pairs.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let syy: f64 = pairs.iter().map(|p| (p.1 - my).powi(2)).sum();
    let sxy: f64 = pairs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx == 0.0 {
        return Err(KneeError::DegeneratePairs);
    }
    let slope = sxy / sxx;
    let rho = if syy == 0.0 {
        0.0
    } else {
        (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0)
    };
    Ok(KneeCorrelationModel {
        slope,
        intercept: my - slope * mx,
        pearson_rho: rho,
        n_fit: pairs.len(),
        b1_min: pairs.iter().map(|p| p.0).fold(f64::INFINITY, f64::min),
        b1_max: pairs.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max),
        abscissa,
    })
}

pub fn predict_knee(model: &KneeCorrelationModel, onset: f64) -> KneePrediction {
    KneePrediction {
        b2: model.slope * onset + model.intercept,
        extrapolated: onset < model.b1_min || onset > model.b1_max,
    }
}
