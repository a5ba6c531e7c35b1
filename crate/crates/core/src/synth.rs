//! Synthetic cells with planted degradation-mode trajectories, capacity
//! fade with or without a knee, and equivalent-circuit cycling telemetry.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{
    write_labels, write_telemetry, CellMeta, DataError, DatasetManifest, DegradationState, KneeStatus, ManifestCell,
    RptRecord, Sample, Scenario, TelemetryFormat, TelemetryLog, TempClass, MANIFEST_SCHEMA_VERSION,
};
use crate::seeds::derive_seed;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("sidecar: {0}")]
    Sidecar(String),
}

/// `u(t) = a·√t + b·max(0, exp(c·(t − t0)) − 1)` with `t` in hours.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModeTrajectory {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub t0: f64,
}

impl ModeTrajectory {
    pub fn value(&self, t: f64) -> f64 {
        self.a * t.max(0.0).sqrt() + self.b * ((self.c * (t - self.t0)).exp() - 1.0).max(0.0)
    }

    /// `(u', u'', u''')` for `t > 0`.
    pub fn derivatives(&self, t: f64) -> (f64, f64, f64) {
        let s = t.sqrt();
        let (mut d1, mut d2, mut d3) = (
            self.a / (2.0 * s),
            -self.a / (4.0 * t * s),
            3.0 * self.a / (8.0 * t * t * s),
        );
        if self.b > 0.0 && t > self.t0 {
            let e = self.b * (self.c * (t - self.t0)).exp();
            d1 += self.c * e;
            d2 += self.c * self.c * e;
            d3 += self.c * self.c * self.c * e;
        }
        (d1, d2, d3)
    }

    pub fn has_knee(&self) -> bool {
        self.b > 0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DischargeProfile {
    ConstantCurrent {
        current_a: f64,
    },
    /// Repeating `(current_a, seconds)` steps; positive current is regeneration.
    PulseDynamic {
        steps: Vec<(f64, f64)>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleSpec {
    pub nominal_capacity_ah: f64,
    pub charge_current_a: f64,
    /// CV phase ends below this current.
    pub cv_cutoff_a: f64,
    /// Constant-current charging stops at this state of charge; 1 means CC-CV to `v_max`.
    pub soc_upper: f64,
    pub discharge: DischargeProfile,
    pub v_min: f64,
    pub v_max: f64,
    pub rest_s: f64,
    /// Ohmic resistance at beginning of life.
    pub resistance_ohm: f64,
    /// Relative resistance increase per unit of total active-material loss.
    pub resistance_growth: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthCellSpec {
    pub cell_id: String,
    pub scenario: Scenario,
    pub temp_class: TempClass,
    pub seed: u64,
    /// LLI, LAM_NE, LAM_PE.
    pub modes: [ModeTrajectory; 3],
    pub horizon_h: f64,
    pub n_rpts: usize,
    pub cycle: CycleSpec,
    pub sample_period_s: f64,
    pub capacity_noise: f64,
    pub mode_noise: f64,
    pub voltage_noise: f64,
}

/// Expression that sets the capacity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Branch {
    Lli,
    LamNeLow,
    LamPeLow,
}

fn capacity_branch(m: [f64; 3]) -> Branch {
    let (ne, pe) = (m[1], m[2]);
    if m[0] >= ne.min(pe) + 0.2 * ne.max(pe) {
        Branch::Lli
    } else if ne <= pe {
        Branch::LamNeLow
    } else {
        Branch::LamPeLow
    }
}

/// Noiseless capacity as a fraction of nominal.
pub fn capacity_from_modes(m: [f64; 3]) -> f64 {
    let (ne, pe) = (m[1], m[2]);
    let lam = ne.min(pe) + 0.2 * ne.max(pe);
    (1.0 - m[0].max(lam)).clamp(f64::MIN_POSITIVE, 1.0)
}

impl SynthCellSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        for (k, m) in self.modes.iter().enumerate() {
            if !(m.a > 0.0 && m.c > 0.0 && m.b >= 0.0) {
                return Err(SynthError::InvalidSpec(format!("mode {k}: need a > 0, c > 0, b >= 0")));
            }
            if m.b > 0.0 && !(m.t0 >= 0.0 && m.t0 < self.horizon_h) {
                return Err(SynthError::InvalidSpec(format!("mode {k}: t0 outside horizon")));
            }
        }
        if !(self.horizon_h > 0.0 && self.sample_period_s > 0.0) {
            return Err(SynthError::InvalidSpec("horizon and sample period must be > 0".into()));
        }
        if self.n_rpts < 2 {
            return Err(SynthError::InvalidSpec("need at least 2 RPTs".into()));
        }
        let c = &self.cycle;
        if !(c.v_min < c.v_max && c.nominal_capacity_ah > 0.0 && c.charge_current_a > 0.0 && c.resistance_ohm >= 0.0) {
            return Err(SynthError::InvalidSpec("invalid cycle spec".into()));
        }
        if !(c.soc_upper > 0.0 && c.soc_upper <= 1.0) {
            return Err(SynthError::InvalidSpec("soc_upper must be in (0, 1]".into()));
        }
        if let DischargeProfile::PulseDynamic { steps } = &c.discharge {
            if steps.is_empty() || steps.iter().all(|s| s.0 >= 0.0) || steps.iter().any(|s| s.1 <= 0.0) {
                return Err(SynthError::InvalidSpec("pulse profile needs discharge steps".into()));
            }
        }
        for (name, v) in [
            ("capacity_noise", self.capacity_noise),
            ("mode_noise", self.mode_noise),
            ("voltage_noise", self.voltage_noise),
        ] {
            if !(v >= 0.0) {
                return Err(SynthError::InvalidSpec(format!("{name} must be >= 0")));
            }
        }
        Ok(())
    }

    pub fn mode_values(&self, t: f64) -> [f64; 3] {
        self.modes.map(|m| m.value(t).min(1.0))
    }

    pub fn capacity(&self, t: f64) -> f64 {
        capacity_from_modes(self.mode_values(t))
    }

    /// `(y', y'', y''')` of the noiseless capacity along the active branch.
    pub fn capacity_derivatives(&self, t: f64) -> (f64, f64, f64) {
        self.branch_derivatives(t, capacity_branch(self.mode_values(t)))
    }

    fn branch_derivatives(&self, t: f64, branch: Branch) -> (f64, f64, f64) {
        let d = self.modes.map(|mt| mt.derivatives(t));
        let u = match branch {
            Branch::Lli => d[0],
            Branch::LamNeLow => (d[1].0 + 0.2 * d[2].0, d[1].1 + 0.2 * d[2].1, d[1].2 + 0.2 * d[2].2),
            Branch::LamPeLow => (d[2].0 + 0.2 * d[1].0, d[2].1 + 0.2 * d[1].1, d[2].2 + 0.2 * d[1].2),
        };
        (-u.0, -u.1, -u.2)
    }

    pub fn rpt_times(&self) -> Vec<f64> {
        (1..=self.n_rpts)
            .map(|k| self.horizon_h * k as f64 / self.n_rpts as f64)
            .collect()
    }
}

/// Boundaries of the noiseless capacity function under the dense-curvature
/// definition, on the RPT time range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlantedKnees {
    pub b1: Option<f64>,
    pub b2: Option<f64>,
    pub min_curvature: f64,
}

/// Dense analytic curvature of `spec`'s capacity over `[lo, hi]`.
pub fn planted_knees(
    spec: &SynthCellSpec,
    lo: f64,
    hi: f64,
    knee_threshold: f64,
    onset_threshold: f64,
) -> PlantedKnees {
    const GRID: usize = 2001;
    let span = hi - lo;
    let ts: Vec<f64> = (0..GRID).map(|k| lo + span * k as f64 / (GRID - 1) as f64).collect();
    let ys: Vec<f64> = ts.iter().map(|&t| spec.capacity(t)).collect();
    let y_lo = ys.iter().copied().fold(f64::INFINITY, f64::min);
    let y_hi = ys.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let ry = (y_hi - y_lo).max(f64::MIN_POSITIVE);
    let mut kappa = Vec::with_capacity(GRID);
    let mut slope = Vec::with_capacity(GRID);
    for &t in &ts {
        let (d1, d2, d3) = spec.capacity_derivatives(t);
        let (y1, y2, y3) = (d1 * span / ry, d2 * span * span / ry, d3 * span.powi(3) / ry);
        let w = 1.0 + y1 * y1;
        kappa.push(y2 / w.powf(1.5));
        slope.push(y3 / w.powf(1.5) - 3.0 * y1 * y2 * y2 / w.powf(2.5));
    }
    // a branch switch is a corner: curvature is a signed point mass there
    let branch_at = |t: f64| capacity_branch(spec.mode_values(t));
    for i in 1..GRID {
        let (bl, br) = (branch_at(ts[i - 1]), branch_at(ts[i]));
        if bl == br {
            continue;
        }
        let (mut a, mut b) = (ts[i - 1], ts[i]);
        for _ in 0..60 {
            let m = 0.5 * (a + b);
            if branch_at(m) == bl {
                a = m;
            } else {
                b = m;
            }
        }
        let tc = 0.5 * (a + b);
        let jump = spec.branch_derivatives(tc, br).0 - spec.branch_derivatives(tc, bl).0;
        let k = if (tc - ts[i - 1]) <= (ts[i] - tc) { i - 1 } else { i };
        if jump < 0.0 {
            kappa[k] = f64::NEG_INFINITY;
        } else if jump > 0.0 {
            kappa[k] = f64::INFINITY;
        }
    }
    let (mut kmin, mut i2) = (f64::INFINITY, 0);
    for (i, &k) in kappa.iter().enumerate() {
        if k < kmin {
            kmin = k;
            i2 = i;
        }
    }
    let mut start = 0;
    for i in (0..i2).rev() {
        if kappa[i] >= 0.0 {
            start = i;
            break;
        }
    }
    let i1 = (start..i2)
        .filter(|&i| kappa[i].is_finite())
        .min_by(|&a, &b| slope[a].total_cmp(&slope[b]).then(a.cmp(&b)));
    if kmin <= -knee_threshold {
        PlantedKnees {
            b1: i1.map(|i| ts[i]),
            b2: Some(ts[i2]),
            min_curvature: kmin,
        }
    } else if kmin <= -onset_threshold {
        PlantedKnees {
            b1: i1.map(|i| ts[i]),
            b2: None,
            min_curvature: kmin,
        }
    } else {
        PlantedKnees {
            b1: None,
            b2: None,
            min_curvature: kmin,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedTruth {
    pub cell_id: String,
    pub knee_planted: bool,
    pub b1: Option<f64>,
    pub b2: Option<f64>,
    pub min_curvature: f64,
    pub modes: [ModeTrajectory; 3],
}

#[derive(Debug, Clone)]
pub struct SynthCell {
    pub meta: CellMeta,
    pub spec: SynthCellSpec,
    pub log: TelemetryLog,
    pub rpts: Vec<RptRecord>,
    pub truth: PlantedTruth,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Step {
    ChargeCc,
    ChargeCv,
    RestCharged,
    Discharge,
    RestDischarged,
}

fn ocv(c: &CycleSpec, soc: f64) -> f64 {
    c.v_min + (c.v_max - c.v_min) * soc
}

fn pulse_current(steps: &[(f64, f64)], elapsed_s: f64) -> f64 {
    let period: f64 = steps.iter().map(|s| s.1).sum();
    let mut at = elapsed_s % period;
    for &(i, d) in steps {
        if at < d {
            return i;
        }
        at -= d;
    }
    steps[steps.len() - 1].0
}

/// Cycles the cell from beginning of life to past the horizon.
fn simulate(spec: &SynthCellSpec, rng: &mut ChaCha8Rng) -> Result<(Vec<Sample>, Vec<f64>), SynthError> {
    let c = &spec.cycle;
    let dt = spec.sample_period_s;
    let dt_h = dt / 3600.0;
    let v_noise = Normal::new(0.0, spec.voltage_noise).expect("finite sigma");
    let n_steps = (spec.horizon_h / dt_h).ceil() as usize + 1;
    let mut samples = Vec::with_capacity(n_steps);
    // discharge throughput at each step, for cumulative-charge labels
    let mut throughput = Vec::with_capacity(n_steps);
    let mut soc: f64 = 0.1;
    let mut step = Step::ChargeCc;
    let mut elapsed = 0.0;
    let mut discharged = 0.0;
    let i_dis_max = match &c.discharge {
        DischargeProfile::ConstantCurrent { current_a } => current_a.abs(),
        DischargeProfile::PulseDynamic { steps } => steps.iter().map(|s| -s.0).fold(0.0, f64::max),
    };
    for k in 0..n_steps {
        let t = k as f64 * dt_h;
        let m = spec.mode_values(t);
        let q_ah = c.nominal_capacity_ah * capacity_from_modes(m);
        let r = c.resistance_ohm * (1.0 + c.resistance_growth * (m[1] + m[2]));
        let v_oc = ocv(c, soc);
        let mut current = match step {
            Step::ChargeCc => c.charge_current_a,
            Step::ChargeCv => ((c.v_max - v_oc) / r.max(1e-9)).clamp(0.0, c.charge_current_a),
            Step::RestCharged | Step::RestDischarged => 0.0,
            Step::Discharge => match &c.discharge {
                DischargeProfile::ConstantCurrent { current_a } => -current_a.abs(),
                DischargeProfile::PulseDynamic { steps } => pulse_current(steps, elapsed),
            },
        };
        // transitions evaluated on the present state; the sample records the
        // current held over the next interval
        let next = match step {
            Step::ChargeCc => {
                if soc >= c.soc_upper {
                    Some(Step::RestCharged)
                } else if c.soc_upper >= 1.0 && v_oc + current * r >= c.v_max {
                    Some(Step::ChargeCv)
                } else {
                    None
                }
            }
            Step::ChargeCv => (current < c.cv_cutoff_a || soc >= 1.0).then_some(Step::RestCharged),
            Step::RestCharged => (elapsed >= c.rest_s).then_some(Step::Discharge),
            Step::Discharge => (v_oc - i_dis_max * r <= c.v_min || soc <= 0.0).then_some(Step::RestDischarged),
            Step::RestDischarged => (elapsed >= c.rest_s).then_some(Step::ChargeCc),
        };
        if let Some(n) = next {
            step = n;
            elapsed = 0.0;
            let v_oc = ocv(c, soc);
            current = match step {
                Step::ChargeCc => c.charge_current_a,
                Step::ChargeCv => ((c.v_max - v_oc) / r.max(1e-9)).clamp(0.0, c.charge_current_a),
                Step::RestCharged | Step::RestDischarged => 0.0,
                Step::Discharge => match &c.discharge {
                    DischargeProfile::ConstantCurrent { current_a } => -current_a.abs(),
                    DischargeProfile::PulseDynamic { steps } => pulse_current(steps, 0.0),
                },
            };
        }
        let v = ocv(c, soc)
            + current * r
            + if spec.voltage_noise > 0.0 {
                v_noise.sample(rng)
            } else {
                0.0
            };
        samples.push(Sample { t, voltage: v, current });
        throughput.push(discharged);
        soc = (soc + current * dt_h / q_ah).clamp(0.0, 1.0);
        if current < 0.0 {
            discharged += -current * dt_h;
        }
        elapsed += dt;
    }
    Ok((samples, throughput))
}

pub const DEFAULT_KNEE_THRESHOLD: f64 = 5.0;
pub const DEFAULT_ONSET_THRESHOLD: f64 = 2.0;

/// Telemetry, noisy RPT labels and planted truth for one cell.
pub fn generate_cell(spec: &SynthCellSpec) -> Result<SynthCell, SynthError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let (samples, throughput) = simulate(spec, &mut rng)?;
    let cap_noise = Normal::new(0.0, spec.capacity_noise).expect("finite sigma");
    let mode_noise = Normal::new(0.0, spec.mode_noise).expect("finite sigma");
    let dt_h = spec.sample_period_s / 3600.0;
    let rpts: Vec<RptRecord> = spec
        .rpt_times()
        .into_iter()
        .map(|t| {
            let k = ((t / dt_h).floor() as usize).min(throughput.len() - 1);
            let m = spec.mode_values(t);
            let noisy = m.map(|v| (v + mode_noise.sample(&mut rng)).clamp(0.0, 1.0));
            let cap = (capacity_from_modes(m) + cap_noise.sample(&mut rng)).clamp(1e-6, 1.2);
            RptRecord {
                t,
                cumulative_charge: throughput[k],
                normalized_capacity: cap,
                modes: Some(DegradationState::new(noisy[0], noisy[1], noisy[2]).expect("clamped")),
            }
        })
        .collect();
    let log = TelemetryLog::new(spec.cell_id.clone(), samples)?;
    let times = spec.rpt_times();
    let pk = planted_knees(
        spec,
        times[0],
        times[times.len() - 1],
        DEFAULT_KNEE_THRESHOLD,
        DEFAULT_ONSET_THRESHOLD,
    );
    let knee_planted = spec.modes.iter().any(ModeTrajectory::has_knee);
    Ok(SynthCell {
        meta: CellMeta {
            cell_id: spec.cell_id.clone(),
            scenario: spec.scenario,
            ambient_temp_class: spec.temp_class,
            knee_occurred: if pk.b2.is_some() {
                KneeStatus::Yes
            } else {
                KneeStatus::No
            },
        },
        spec: spec.clone(),
        log,
        rpts,
        truth: PlantedTruth {
            cell_id: spec.cell_id.clone(),
            knee_planted,
            b1: pk.b1,
            b2: pk.b2,
            min_curvature: pk.min_curvature,
            modes: spec.modes,
        },
    })
}

// ---------------------------------------------------------------------------
// Fleets
// ---------------------------------------------------------------------------

/// Per-scenario cycling and sampling settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioTemplate {
    pub scenario: Scenario,
    pub id_prefix: String,
    pub cycle: CycleSpec,
    pub horizon_h: f64,
    /// Relative spread of per-cell horizons.
    pub horizon_jitter: f64,
    pub n_rpts: usize,
    pub sample_period_s: f64,
    pub capacity_noise: f64,
    pub mode_noise: f64,
    pub voltage_noise: f64,
}

fn base_cycle() -> CycleSpec {
    CycleSpec {
        nominal_capacity_ah: 5.0,
        charge_current_a: 1.5,
        cv_cutoff_a: 0.25,
        soc_upper: 1.0,
        discharge: DischargeProfile::ConstantCurrent { current_a: 5.0 },
        v_min: 2.5,
        v_max: 4.2,
        rest_s: 1800.0,
        resistance_ohm: 0.03,
        resistance_growth: 1.5,
    }
}

impl ScenarioTemplate {
    fn with_cycle(scenario: Scenario, prefix: &str, cycle: CycleSpec) -> Self {
        Self {
            scenario,
            id_prefix: prefix.into(),
            cycle,
            horizon_h: 600.0,
            horizon_jitter: 0.15,
            n_rpts: 100,
            sample_period_s: 10.0,
            capacity_noise: 0.002,
            mode_noise: 0.005,
            voltage_noise: 0.001,
        }
    }

    /// 0.3C CC charge / 1C discharge in a 0–30% state-of-charge window.
    pub fn source_a() -> Self {
        Self::with_cycle(
            Scenario::SourceA,
            "A",
            CycleSpec {
                soc_upper: 0.3,
                ..base_cycle()
            },
        )
    }

    /// 0.3C CC-CV charge / 1C discharge over the full window.
    pub fn source_b() -> Self {
        Self::with_cycle(Scenario::SourceB, "B", base_cycle())
    }

    /// 0.3C CC-CV charge / pulsed dynamic discharge.
    pub fn target() -> Self {
        Self::with_cycle(
            Scenario::Target,
            "T",
            CycleSpec {
                discharge: DischargeProfile::PulseDynamic {
                    steps: vec![(-10.0, 30.0), (-5.0, 60.0), (-2.5, 60.0), (2.5, 20.0)],
                },
                ..base_cycle()
            },
        )
    }

    pub fn for_scenario(s: Scenario) -> Self {
        match s {
            Scenario::SourceA => Self::source_a(),
            Scenario::SourceB => Self::source_b(),
            Scenario::Target => Self::target(),
        }
    }
}

fn temp_resistance(t: TempClass) -> f64 {
    match t {
        TempClass::Low => 0.05,
        TempClass::Medium => 0.03,
        TempClass::High => 0.02,
    }
}

/// Square-root amplitude of LLI at the horizon, by temperature.
fn temp_sqrt_fade(t: TempClass) -> f64 {
    match t {
        TempClass::Low => 0.07,
        TempClass::Medium => 0.06,
        TempClass::High => 0.09,
    }
}

/// Mode trajectories for a cell with horizon `h`; shared across scenarios.
///
/// Every mode starts with square-root growth. In kneed cells all modes also
/// grow exponentially from an onset time, and the active-material term
/// overtakes lithium loss mid-life, which puts a corner in the fade.
pub fn sample_modes(rng: &mut impl Rng, temp: TempClass, kneed: bool, h: f64) -> [ModeTrajectory; 3] {
    let a_lli = temp_sqrt_fade(temp) * rng.gen_range(0.9..1.1);
    let ratios = [1.0, rng.gen_range(0.55..0.65), rng.gen_range(0.35..0.45)];
    let sqrt_only: [ModeTrajectory; 3] = std::array::from_fn(|k| ModeTrajectory {
        a: a_lli * ratios[k] / h.sqrt(),
        b: 0.0,
        c: 1.0 / h,
        t0: 0.0,
    });
    if !kneed {
        return sqrt_only;
    }
    loop {
        // normalized time tau = t / h
        let rate = rng.gen_range(0.6..1.0);
        let tau0 = rng.gen_range(0.3..0.45);
        let post_slope = rng.gen_range(0.4..0.5);
        let share_ne = rng.gen_range(1.2..1.6);
        let share_lli = rng.gen_range(0.05..0.15);
        // amplitude of min(NE, PE) + 0.2 max(NE, PE); NE stays the larger mode
        let x = post_slope / rate;
        let drops = [share_lli * x, share_ne * x, (1.0 - 0.2 * share_ne) * x];
        let modes: [ModeTrajectory; 3] = std::array::from_fn(|k| ModeTrajectory {
            b: drops[k],
            c: rate / h,
            t0: tau0 * h,
            ..sqrt_only[k]
        });
        let lam = |t: f64| {
            let (ne, pe) = (modes[1].value(t), modes[2].value(t));
            ne.min(pe) + 0.2 * ne.max(pe) - modes[0].value(t)
        };
        let cross = (1..=1000).map(|k| h * k as f64 / 1000.0).find(|&t| lam(t) > 0.0);
        if let Some(t) = cross {
            if (0.4 * h..=0.75 * h).contains(&t) {
                return modes;
            }
        }
    }
}

/// Mode trajectories whose knee comes from lithium loss alone: LLI
/// accelerates exponentially and stays the dominant mode, so the fade bends
/// smoothly instead of at a mode crossover.
pub fn smooth_knee_modes(rng: &mut impl Rng, temp: TempClass, h: f64) -> [ModeTrajectory; 3] {
    let a_lli = temp_sqrt_fade(temp) * rng.gen_range(0.9..1.1);
    let ratios = [1.0, rng.gen_range(0.55..0.65), rng.gen_range(0.35..0.45)];
    let rate: f64 = rng.gen_range(16.0..18.0);
    let tau0: f64 = rng.gen_range(0.25..0.35);
    let drop: f64 = rng.gen_range(0.28..0.32);
    let b = drop / ((rate * (1.0 - tau0)).exp() - 1.0);
    std::array::from_fn(|k| ModeTrajectory {
        a: a_lli * ratios[k] / h.sqrt(),
        b: if k == 0 { b } else { 0.0 },
        c: rate / h,
        t0: tau0 * h,
    })
}

/// The same cell on a stretched clock: every event happens at `scale`
/// times its original hour, so planted knees scale exactly.
pub fn time_scaled(spec: &SynthCellSpec, scale: f64, cell_id: impl Into<String>, seed: u64) -> SynthCellSpec {
    let modes = spec.modes.map(|m| ModeTrajectory {
        a: m.a / scale.sqrt(),
        b: m.b,
        c: m.c / scale,
        t0: m.t0 * scale,
    });
    SynthCellSpec {
        cell_id: cell_id.into(),
        seed,
        modes,
        horizon_h: spec.horizon_h * scale,
        ..spec.clone()
    }
}

/// Spline penalty for smooth-knee families. Their steep exponential tail
/// pulls plain GCV toward undersmoothing, which reads noise as early knees;
/// corner knees of the standard fleet want the lighter default instead.
pub const KNEE_FAMILY_GCV_PENALTY: f64 = 8.0;

/// Kneed cells sharing one smooth-knee shape at clock scales spread over
/// `[0.6, 1.4]`; planted onsets and knees are proportional across the family.
pub fn knee_regression_family(
    template: &ScenarioTemplate,
    n_cells: usize,
    seed: u64,
) -> Result<Vec<SynthCell>, SynthError> {
    if n_cells < 2 {
        return Err(SynthError::InvalidSpec("family needs at least 2 cells".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "knee_family", 0));
    let temp = TempClass::Medium;
    let h = template.horizon_h;
    let base = SynthCellSpec {
        cell_id: String::new(),
        scenario: template.scenario,
        temp_class: temp,
        seed,
        modes: smooth_knee_modes(&mut rng, temp, h),
        horizon_h: h,
        n_rpts: template.n_rpts,
        cycle: CycleSpec {
            resistance_ohm: temp_resistance(temp),
            ..template.cycle.clone()
        },
        sample_period_s: template.sample_period_s,
        capacity_noise: template.capacity_noise,
        mode_noise: template.mode_noise,
        voltage_noise: template.voltage_noise,
    };
    (0..n_cells)
        .map(|i| {
            let scale = 0.6 + 0.8 * i as f64 / (n_cells - 1) as f64;
            let id = format!("{}K{}", template.id_prefix, i + 1);
            let spec = time_scaled(&base, scale, id, derive_seed(seed, "knee_family", i as u64 + 1));
            generate_cell(&spec)
        })
        .collect()
}

/// Cells of one scenario; temperatures cycle low/medium/high and knees go
/// to the coldest cells first.
pub fn generate_fleet(
    template: &ScenarioTemplate,
    n_cells: usize,
    knee_fraction: f64,
    seed: u64,
) -> Result<Vec<SynthCell>, SynthError> {
    if !(0.0..=1.0).contains(&knee_fraction) {
        return Err(SynthError::InvalidSpec("knee_fraction must be in [0, 1]".into()));
    }
    let n_kneed = (n_cells as f64 * knee_fraction).round() as usize;
    let temps: Vec<TempClass> = (0..n_cells).map(|i| TempClass::ALL[i % 3]).collect();
    let mut order: Vec<usize> = (0..n_cells).collect();
    order.sort_by_key(|&i| (temps[i], i));
    let kneed: Vec<bool> = (0..n_cells).map(|i| order[..n_kneed].contains(&i)).collect();
    let tag = format!("{:?}", template.scenario);
    (0..n_cells)
        .map(|i| {
            let cell_seed = derive_seed(seed, &tag, i as u64);
            let mut rng = ChaCha8Rng::seed_from_u64(cell_seed);
            let h = template.horizon_h * (1.0 + template.horizon_jitter * rng.gen_range(-1.0..1.0));
            let modes = sample_modes(&mut rng, temps[i], kneed[i], h);
            let spec = SynthCellSpec {
                cell_id: format!("{}{}", template.id_prefix, i + 1),
                scenario: template.scenario,
                temp_class: temps[i],
                seed: cell_seed,
                modes,
                horizon_h: h,
                n_rpts: template.n_rpts,
                cycle: CycleSpec {
                    resistance_ohm: temp_resistance(temps[i]),
                    ..template.cycle.clone()
                },
                sample_period_s: template.sample_period_s,
                capacity_noise: template.capacity_noise,
                mode_noise: template.mode_noise,
                voltage_noise: template.voltage_noise,
            };
            generate_cell(&spec)
        })
        .collect()
}

/// Fleet spec for the three scenarios.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FleetConfig {
    pub seed: u64,
    pub cells_per_scenario: usize,
    pub sample_period_s: f64,
    pub n_rpts: usize,
    pub horizon_h: f64,
}

impl Default for FleetConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            cells_per_scenario: 6,
            sample_period_s: 10.0,
            n_rpts: 100,
            horizon_h: 600.0,
        }
    }
}

/// Source A with 4/6 kneed cells, source B with none and the target with 2/6;
/// kneed scenarios of four or more cells keep at least two of each status.
pub fn standard_fleet(cfg: &FleetConfig) -> Result<Vec<SynthCell>, SynthError> {
    let mut out = Vec::new();
    for (s, frac) in [
        (Scenario::SourceA, 4.0 / 6.0),
        (Scenario::SourceB, 0.0),
        (Scenario::Target, 2.0 / 6.0),
    ] {
        let mut t = ScenarioTemplate::for_scenario(s);
        t.sample_period_s = cfg.sample_period_s;
        t.n_rpts = cfg.n_rpts;
        t.horizon_h = cfg.horizon_h;
        let n = cfg.cells_per_scenario;
        let mut k = (n as f64 * frac).round() as usize;
        // both knee strata must survive a train/test split
        if frac > 0.0 && n >= 4 {
            k = k.clamp(2, n - 2);
        }
        out.extend(generate_fleet(&t, n, k as f64 / n.max(1) as f64, cfg.seed)?);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedSidecar {
    pub seed: u64,
    #[serde(rename = "cell")]
    pub cells: Vec<PlantedTruth>,
}

pub const MANIFEST_FILE: &str = "manifest.toml";
pub const LABELS_FILE: &str = "labels.csv";
pub const PLANTED_FILE: &str = "planted.toml";

/// Writes telemetry per cell directory, a shared labels file, the dataset
/// manifest and the planted-truth sidecar. Returns the manifest path.
pub fn write_fleet(cells: &[SynthCell], seed: u64, dir: &Path) -> Result<PathBuf, SynthError> {
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| SynthError::Io { path, source }
    };
    std::fs::create_dir_all(dir).map_err(io(dir))?;
    let mut entries = Vec::new();
    for c in cells {
        let rel = PathBuf::from(&c.meta.cell_id).join("telemetry.csv");
        let cell_dir = dir.join(&c.meta.cell_id);
        std::fs::create_dir_all(&cell_dir).map_err(io(&cell_dir))?;
        write_telemetry(&dir.join(&rel), &c.log)?;
        entries.push(ManifestCell {
            meta: c.meta.clone(),
            telemetry: rel,
            telemetry_format: TelemetryFormat::GenericCsv,
        });
    }
    let labels: Vec<(String, Vec<RptRecord>)> =
        cells.iter().map(|c| (c.meta.cell_id.clone(), c.rpts.clone())).collect();
    write_labels(&dir.join(LABELS_FILE), &labels)?;
    let manifest = DatasetManifest {
        schema_version: MANIFEST_SCHEMA_VERSION,
        labels: PathBuf::from(LABELS_FILE),
        cells: entries,
    };
    let mpath = dir.join(MANIFEST_FILE);
    manifest.write(&mpath)?;
    let sidecar = PlantedSidecar {
        seed,
        cells: cells.iter().map(|c| c.truth.clone()).collect(),
    };
    let text = toml::to_string(&sidecar).map_err(|e| SynthError::Sidecar(e.to_string()))?;
    let ppath = dir.join(PLANTED_FILE);
    std::fs::write(&ppath, text).map_err(io(&ppath))?;
    Ok(mpath)
}

pub fn read_planted(path: &Path) -> Result<PlantedSidecar, SynthError> {
    let text = std::fs::read_to_string(path).map_err(|source| SynthError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    toml::from_str(&text).map_err(|e| SynthError::Sidecar(e.to_string()))
}
