use battdiag::data::{ingest_telemetry, write_telemetry, TelemetryFormat};
use battdiag::features::{compute_bounds, feature_matrix, SetKind, Variable};
use battdiag::synth::{generate_fleet, standard_fleet, FleetConfig, ScenarioTemplate};
use statrs::distribution::{ContinuousCDF, StudentsT};

#[test]
fn million_row_log_round_trips_bit_identically() {
    let template = ScenarioTemplate {
        sample_period_s: 2.16,
        horizon_jitter: 0.0,
        n_rpts: 10,
        ..ScenarioTemplate::source_b()
    };
    let cell = generate_fleet(&template, 1, 0.0, 4).unwrap().remove(0);
    assert!(cell.log.len() >= 1_000_000, "{} rows", cell.log.len());

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("log.csv");
    write_telemetry(&path, &cell.log).unwrap();
    let back = ingest_telemetry(&path, TelemetryFormat::GenericCsv).unwrap();
    assert_eq!(back.rejected_rows, 0);
    assert_eq!(back.log.len(), cell.log.len());
    let bits = |s: &battdiag::data::Sample| [s.t.to_bits(), s.voltage.to_bits(), s.current.to_bits()];
    let mismatched = cell
        .log
        .samples()
        .iter()
        .zip(back.log.samples())
        .filter(|(a, b)| bits(a) != bits(b))
        .count();
    assert_eq!(mismatched, 0);
}

/// Two-sided p-value of Welch's unequal-variance t-test.
fn welch_p(a: &[f64], b: &[f64]) -> f64 {
    let stats = |v: &[f64]| {
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (n, mean, var)
    };
    let (na, ma, va) = stats(a);
    let (nb, mb, vb) = stats(b);
    let (sa, sb) = (va / na, vb / nb);
    let t = (ma - mb) / (sa + sb).sqrt();
    let df = (sa + sb).powi(2) / (sa * sa / (na - 1.0) + sb * sb / (nb - 1.0));
    2.0 * StudentsT::new(0.0, 1.0, df).unwrap().sf(t.abs())
}

#[test]
fn target_current_histogram_is_shifted_from_source() {
    let cells = standard_fleet(&FleetConfig {
        seed: 8,
        cells_per_scenario: 4,
        sample_period_s: 60.0,
        n_rpts: 20,
        horizon_h: 600.0,
    })
    .unwrap();
    let (source, target): (Vec<_>, Vec<_>) = cells.iter().partition(|c| c.meta.scenario.is_source());
    let logs: Vec<_> = source.iter().map(|c| &c.log).collect();
    let v = compute_bounds(&logs, Variable::Voltage).unwrap();
    let i = compute_bounds(&logs, Variable::Current).unwrap();
    let matrix = |group: &[&battdiag::synth::SynthCell]| {
        let pairs: Vec<_> = group.iter().map(|c| (&c.log, c.rpts.as_slice())).collect();
        feature_matrix(&pairs, SetKind::I5, &v, &i).unwrap()
    };
    let (ms, mt) = (matrix(&source), matrix(&target));
    let p: Vec<f64> = (0..SetKind::I5.histogram_len())
        .map(|j| {
            let col = |m: &battdiag::features::FeatureMatrix| m.rows.iter().map(|r| r[j]).collect::<Vec<_>>();
            welch_p(&col(&ms), &col(&mt))
        })
        .collect();
    println!("Welch p-values per current bin: {p:?}");
    assert!(p.iter().any(|&p| p < 0.01));
}
