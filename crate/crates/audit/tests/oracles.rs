use battdiag_audit::{run_oracles, Suite};

fn assert_suite(suite: Suite) {
    let reports = run_oracles(suite);
    assert!(!reports.is_empty());
    for r in &reports {
        println!("{r}");
    }
    let failed: Vec<String> = reports.iter().filter(|r| !r.pass).map(|r| r.to_string()).collect();
    assert!(failed.is_empty(), "{failed:#?}");
}

#[test]
fn autodiff_matches_finite_differences() {
    assert_suite(Suite::Autodiff);
}

#[test]
fn splits_match_exhaustive_scan() {
    assert_suite(Suite::SplitScan);
}

#[test]
fn bounds_match_sorted_percentiles() {
    assert_suite(Suite::Percentile);
}

#[test]
fn knees_match_dense_curvature() {
    assert_suite(Suite::Curvature);
}

#[test]
fn phase_metrics_match_fixtures() {
    assert_suite(Suite::Confusion);
}

/// Plain central differences at fixed steps on random 2×32 networks.
#[test]
fn wide_net_matches_central_differences() {
    use battdiag::autodiff::Mlp;
    use battdiag_audit::fd::plain_forward;
    use battdiag_audit::Deviation;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    let mut rng = ChaCha8Rng::seed_from_u64(32);
    let (mut first, mut second) = (Deviation::default(), Deviation::default());
    for _ in 0..10 {
        let mut net = Mlp::xavier(4, 2, 32, &mut rng);
        for l in net.layers_mut() {
            l.bias.iter_mut().for_each(|b| *b = rng.gen_range(-0.5..0.5));
        }
        let z: Vec<f64> = (0..4).map(|_| rng.gen_range(0.0..1.0)).collect();
        let f = |j: usize, d: f64| {
            let mut p = z.clone();
            p[j] += d;
            plain_forward(&net, &p)
        };
        let g = net.grad_input(&z).unwrap();
        for (j, &gj) in g.iter().enumerate() {
            let h = 1e-5;
            first.record(gj, (f(j, h) - f(j, -h)) / (2.0 * h));
        }
        let h = 1e-4;
        let d_tt = net.second_time_derivatives(&z, 0).unwrap().d_tt;
        second.record(d_tt, (f(0, h) - 2.0 * f(0, 0.0) + f(0, -h)) / (h * h));
    }
    println!("first order {first:?}, second order {second:?}");
    assert!(first.max_rel < 1e-6, "{first:?}");
    assert!(second.max_rel < 1e-4, "{second:?}");
}
