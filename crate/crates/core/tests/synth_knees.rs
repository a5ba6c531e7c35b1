use battdiag::knee::{
    fit_knee_regression, identify_knees, smooth_curve, Abscissa, CapacityCurve, KneeConfig, Smoothing,
};
use battdiag::synth::{generate_fleet, ScenarioTemplate, SynthCell};

fn coarse(t: ScenarioTemplate) -> ScenarioTemplate {
    // labels do not depend on the telemetry sample period
    ScenarioTemplate {
        sample_period_s: 3600.0,
        ..t
    }
}

fn capacity_curve(c: &SynthCell) -> CapacityCurve {
    CapacityCurve::new(
        Abscissa::Hours,
        c.rpts.iter().map(|r| r.t).collect(),
        c.rpts.iter().map(|r| r.normalized_capacity).collect(),
    )
    .unwrap()
}

fn span(c: &SynthCell) -> f64 {
    c.rpts.last().unwrap().t - c.rpts[0].t
}

#[test]
fn planted_knees_recovered() {
    let cells = generate_fleet(&coarse(ScenarioTemplate::source_a()), 8, 1.0, 21).unwrap();
    for c in &cells {
        let tl = identify_knees(&capacity_curve(c), &KneeConfig::default()).unwrap();
        let (got, want) = (tl.b2.unwrap(), c.truth.b2.unwrap());
        assert!(
            (got - want).abs() <= 0.05 * span(c),
            "{}: {got} vs {want}",
            c.meta.cell_id
        );
        assert!(tl.b1.unwrap() < got);
    }
}

#[test]
fn unkneed_fades_report_no_knee() {
    let cells = generate_fleet(&coarse(ScenarioTemplate::target()), 8, 0.0, 22).unwrap();
    for c in &cells {
        let tl = identify_knees(&capacity_curve(c), &KneeConfig::default()).unwrap();
        assert_eq!(tl.b2, None, "{}", c.meta.cell_id);
    }
}

#[test]
fn gcv_spline_tracks_noiseless_truth() {
    let cells = generate_fleet(&coarse(ScenarioTemplate::source_b()), 6, 0.5, 23).unwrap();
    for c in &cells {
        let s = smooth_curve(&capacity_curve(c), Smoothing::Gcv).unwrap();
        let mse = c
            .rpts
            .iter()
            .map(|r| (s.eval(r.t).value - c.spec.capacity(r.t)).powi(2))
            .sum::<f64>()
            / c.rpts.len() as f64;
        assert!(mse.sqrt() < c.spec.capacity_noise, "{}: {}", c.meta.cell_id, mse.sqrt());
    }
}

#[test]
fn time_scaled_family_has_proportional_planted_knees() {
    let cells = battdiag::synth::knee_regression_family(&coarse(ScenarioTemplate::target()), 6, 24).unwrap();
    let base = &cells[0];
    let (b1, b2) = (base.truth.b1.unwrap(), base.truth.b2.unwrap());
    assert!(b1 < b2 && base.truth.min_curvature <= -5.0);
    for c in &cells[1..] {
        let s = c.spec.horizon_h / base.spec.horizon_h;
        let (c1, c2) = (c.truth.b1.unwrap(), c.truth.b2.unwrap());
        assert!((c1 / b1 - s).abs() < 1e-9 * s, "{}", c.meta.cell_id);
        assert!((c2 / b2 - s).abs() < 1e-9 * s, "{}", c.meta.cell_id);
    }
}

#[test]
fn smooth_knee_family_regression_recovers_planted_slope() {
    let cells = battdiag::synth::knee_regression_family(&coarse(ScenarioTemplate::target()), 12, 25).unwrap();
    let cfg = KneeConfig {
        smoothing: Smoothing::PenalizedGcv(battdiag::synth::KNEE_FAMILY_GCV_PENALTY),
        ..KneeConfig::default()
    };
    let (mut pairs, mut planted) = (Vec::new(), Vec::new());
    for c in &cells {
        let tl = identify_knees(&capacity_curve(c), &cfg).unwrap();
        let (b1, b2) = (tl.b1.unwrap(), tl.b2.unwrap());
        assert!(b1 < b2, "{}", c.meta.cell_id);
        pairs.push((b1, b2));
        planted.push((c.truth.b1.unwrap(), c.truth.b2.unwrap()));
    }
    let fit = fit_knee_regression(&pairs, Abscissa::Hours).unwrap();
    let want = fit_knee_regression(&planted, Abscissa::Hours).unwrap();
    assert!(want.intercept.abs() < 1e-6 * cells[0].spec.horizon_h);
    assert!(
        (fit.slope / want.slope - 1.0).abs() <= 0.05,
        "{} vs {}",
        fit.slope,
        want.slope
    );
    assert!(fit.pearson_rho >= 0.95);
}
