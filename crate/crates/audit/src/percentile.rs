//! Sort-based time-weighted percentiles.

use battdiag::data::{Sample, TelemetryLog};
use battdiag::features::{compute_bounds, Variable};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{Deviation, OracleReport};

/// Smallest value whose cumulative weight (all samples at or below it)
/// reaches `level` of the total, for each level.
pub fn weighted_percentiles(pool: &[(f64, f64)], levels: &[f64]) -> Vec<f64> {
    let total: f64 = pool.iter().map(|p| p.1).sum();
    let mut values: Vec<f64> = pool.iter().map(|p| p.0).collect();
    values.sort_by(f64::total_cmp);
    values.dedup();
    levels
        .iter()
        .map(|&level| {
            *values
                .iter()
                .find(|&&v| pool.iter().filter(|p| p.0 <= v).map(|p| p.1).sum::<f64>() >= level * total)
                .expect("the largest value holds all weight")
        })
        .collect()
}

/// Each sample weighted by the time until the next sample of its log.
pub fn weighted_pool(logs: &[TelemetryLog], variable: Variable) -> Vec<(f64, f64)> {
    let mut pool = Vec::new();
    for log in logs {
        let s = log.samples();
        for i in 0..s.len() {
            let w = if i + 1 < s.len() { s[i + 1].t - s[i].t } else { 0.0 };
            let v = match variable {
                Variable::Voltage => s[i].voltage,
                Variable::Current => s[i].current,
            };
            pool.push((v, w));
        }
    }
    pool
}

/// Random log with whole-second steps, so weight sums are exact, and values
/// on a 0.01 lattice, so ties occur.
pub fn random_log(rng: &mut ChaCha8Rng, id: &str) -> TelemetryLog {
    let n = rng.gen_range(100..250);
    let mut t = rng.gen_range(0..100) as f64;
    let samples = (0..n)
        .map(|_| {
            t += rng.gen_range(1..=20) as f64;
            Sample {
                t,
                voltage: (rng.gen_range(2.5..4.2_f64) * 100.0).round() / 100.0,
                current: (rng.gen_range(-10.0..3.0_f64) * 100.0).round() / 100.0,
            }
        })
        .collect();
    TelemetryLog::new(id, samples).expect("increasing times")
}

pub fn percentile_suite(n_instances: usize, seed: u64) -> OracleReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut dev = Deviation::default();
    let mut mismatches = 0;
    for k in 0..n_instances {
        let logs: Vec<TelemetryLog> = (0..rng.gen_range(1..=3))
            .map(|i| random_log(&mut rng, &format!("L{k}_{i}")))
            .collect();
        let refs: Vec<&TelemetryLog> = logs.iter().collect();
        for variable in [Variable::Voltage, Variable::Current] {
            let b = compute_bounds(&refs, variable).unwrap();
            let want = weighted_percentiles(&weighted_pool(&logs, variable), &[0.01, 0.33, 0.67, 0.99]);
            for (got, w) in [b.p01, b.p33, b.p67, b.p99].into_iter().zip(want) {
                dev.record(got, w);
                if got != w {
                    mismatches += 1;
                }
            }
        }
    }
    let mut r = dev.report("features/percentiles", 0.0);
    r.pass = mismatches == 0;
    r.detail = format!("{mismatches} mismatched of {} percentiles", n_instances * 8);
    r
}
