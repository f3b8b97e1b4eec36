use moebxii::estimators::obre::{fit_obre_detailed, fixed_point_residuals, sample_weights, solve_aa};
use moebxii::estimators::*;
use moebxii::numkit::OptimConfig;
use moebxii::sim::inject_outliers;
use moebxii::{Params, Sample};
use proptest::prelude::*;

fn p(a: f64, c: f64, k: f64) -> Params {
    Params::new(a, c, k).unwrap()
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn score_sum(s: &Sample, th: &Params) -> [f64; 3] {
    let mut g = [0.0; 3];
    for &x in s.values() {
        let sc = th.score(x).unwrap().to_array();
        for i in 0..3 {
            g[i] += sc[i];
        }
    }
    g
}

#[test]
fn ml_score_matches_finite_difference_gradient_at_optimum() {
    let truth = p(3.0, 2.0, 2.0);
    for seed in 0..5 {
        let s = truth.sample(200, seed).unwrap();
        let r = fit_ml(&s, &OptimConfig::default()).unwrap();
        assert!(r.converged);
        let n = s.len() as f64;
        let analytic = score_sum(&s, &r.params);
        let th = r.params.to_array();
        for i in 0..3 {
            let h = 1e-6 * th[i];
            let mut up = th;
            let mut dn = th;
            up[i] += h;
            dn[i] -= h;
            let fd = (s.log_likelihood(&Params::from_array(up).unwrap()).unwrap()
                - s.log_likelihood(&Params::from_array(dn).unwrap()).unwrap())
                / (2.0 * h);
            assert!((fd - analytic[i]).abs() < 1e-4 * n, "seed {seed} component {i}: {fd} vs {}", analytic[i]);
            assert!(analytic[i].abs() < 1e-4 * n);
        }
    }
}

#[test]
fn ls_beats_truth_on_its_own_objective() {
    let truth = p(3.0, 1.0, 1.0);
    let s = truth.sample(100, 17).unwrap();
    let ts = TransformedSample::from_sample(&s);
    let r = fit_ls(&s, &OptimConfig::default()).unwrap();
    assert!(r.objective <= ls_objective(&ts, &truth));
    // The normal equations hold at the optimum.
    let n = s.len() as f64;
    for g in ls_gradient(&ts, &r.params) {
        assert!((0.5 * g).abs() < 1e-4 * n, "{g}");
    }
}

#[test]
fn ls_median_within_twenty_percent_at_n1000() {
    let truth = p(5.0, 2.0, 2.0);
    let fits: Vec<Params> = (0..50)
        .map(|seed| fit_ls(&truth.sample(1000, 1000 + seed).unwrap(), &OptimConfig::default()).unwrap().params)
        .collect();
    for (i, t) in truth.to_array().iter().enumerate() {
        let m = median(fits.iter().map(|f| f.to_array()[i]).collect());
        assert!((m - t).abs() < 0.2 * t, "parameter {i}: median {m} vs {t}");
    }
}

#[test]
fn m_tukey_zeroes_a_far_outlier() {
    let truth = p(3.0, 1.0, 1.0);
    let s = inject_outliers(&truth.sample(25, 3).unwrap(), 1).unwrap();
    let ts = TransformedSample::from_sample(&s);
    let r = fit_m_tukey(&s, &MEstConfig::default(), None).unwrap();
    for res in ts.residuals(&r.params) {
        let w = tukey_weight(res, 1.345);
        assert!((0.0..=1.0).contains(&w));
        if res.abs() > 1.345 {
            assert_eq!(w, 0.0);
        }
    }
}

#[test]
fn m_tukey_loss_never_increases() {
    let truth = p(3.0, 2.0, 2.0);
    for seed in 0..4 {
        let s = inject_outliers(&truth.sample(50, 40 + seed).unwrap(), 2).unwrap();
        let ts = TransformedSample::from_sample(&s);
        let init = fit_ls_transformed(&ts, &OptimConfig::default()).unwrap().params;
        let mut prev: f64 = (0..ts.len()).map(|i| tukey_rho(ts.residuals(&init)[i], 1.345)).sum();
        for max_iter in 1..=8 {
            let cfg = MEstConfig {
                max_iter,
                ..Default::default()
            };
            let r = fit_m_tukey_transformed(&ts, &cfg, init).unwrap();
            assert!(r.objective <= prev, "seed {seed}, after {max_iter}: {} > {prev}", r.objective);
            prev = r.objective;
        }
    }
}

#[test]
fn obre_with_huge_bound_matches_ml() {
    let truth = p(3.0, 2.0, 2.0);
    let cfg = ObreConfig {
        c_b: 1e6,
        ..Default::default()
    };
    for seed in 0..3 {
        let s = truth.sample(100, 500 + seed).unwrap();
        let ml = fit_ml(&s, &OptimConfig::default()).unwrap();
        let ob = fit_obre(&s, &cfg, ml.params).unwrap();
        assert!(ob.converged);
        for (a, b) in ob.params.to_array().iter().zip(ml.params.to_array()) {
            assert!((a - b).abs() < 1e-3, "seed {seed}: {:?} vs {:?}", ob.params, ml.params);
        }
    }
}

#[test]
fn obre_converged_state_satisfies_its_equations() {
    let truth = p(3.0, 2.0, 2.0);
    let s = inject_outliers(&truth.sample(60, 8).unwrap(), 2).unwrap();
    let cfg = ObreConfig::default();
    let ml = fit_ml(&s, &OptimConfig::default()).unwrap();
    let fit = fit_obre_detailed(&s, &cfg, ml.params, None).unwrap();
    assert!(fit.result.converged);
    let n = s.len() as f64;
    let mut total = [0.0; 3];
    for &x in s.values() {
        let (w, psi) = obre_weights(&fit.state, x, cfg.c_b).unwrap();
        assert!((0.0..=1.0).contains(&w));
        for i in 0..3 {
            total[i] += psi[i];
        }
    }
    assert!(total.iter().all(|t| t.abs() < 1e-3 * n), "{total:?}");
    for (w, len) in sample_weights(&fit.state, &s, cfg.c_b).unwrap() {
        assert!((0.0..=1.0).contains(&w));
        assert!(len <= cfg.c_b * (1.0 + 1e-12));
    }
    let (eye, cen) = fixed_point_residuals(&fit.state, cfg.c_b, 2 * cfg.quad.nodes).unwrap();
    assert!(eye < 1e-5 && cen < 1e-5, "{eye} {cen}");
}

#[test]
fn warm_start_reaches_the_same_scaling() {
    let th = p(3.0, 1.0, 2.0);
    let cfg = ObreConfig::default();
    let cold = solve_aa(th, 3.0, &cfg, None).unwrap();
    let near = solve_aa(p(3.1, 1.05, 1.9), 3.0, &cfg, None).unwrap();
    let warm = solve_aa(th, 3.0, &cfg, Some(&near.state)).unwrap();
    let g = |st: &ObreState| st.a_mat.transpose() * st.a_mat;
    assert!(g(&cold.state).max_abs_diff(&g(&warm.state)) < 1e-7 * g(&cold.state).max_abs());
    for i in 0..3 {
        assert!((cold.state.a_vec[i] - warm.state.a_vec[i]).abs() < 1e-7);
    }
}

#[test]
fn estimates_ignore_sample_order() {
    let truth = p(3.0, 2.0, 2.0);
    let s = inject_outliers(&truth.sample(40, 21).unwrap(), 1).unwrap();
    let mut rev = s.values().to_vec();
    rev.reverse();
    rev.rotate_left(7);
    let t = Sample::new(rev).unwrap();
    let oc = OptimConfig::default();
    let ml = |x: &Sample| fit_ml(x, &oc).unwrap().params;
    let ls = |x: &Sample| fit_ls(x, &oc).unwrap().params;
    let m = |x: &Sample| fit_m_tukey(x, &MEstConfig::default(), None).unwrap().params;
    let ob = |x: &Sample| fit_obre(x, &ObreConfig::default(), ml(x)).unwrap().params;
    assert_eq!(ml(&s), ml(&t));
    assert_eq!(ls(&s), ls(&t));
    assert_eq!(m(&s), m(&t));
    assert_eq!(ob(&s), ob(&t));
}

#[test]
fn fits_reject_bad_samples() {
    let tiny = Sample::new(vec![1.0, 2.0, 3.0]).unwrap();
    let oc = OptimConfig::default();
    assert!(matches!(fit_ml(&tiny, &oc), Err(moebxii::Error::SampleTooSmall { .. })));
    assert!(matches!(fit_ls(&tiny, &oc), Err(moebxii::Error::SampleTooSmall { .. })));
    let flat = Sample::new(vec![2.0; 6]).unwrap();
    assert_eq!(
        fit_obre(&flat, &ObreConfig::default(), p(1.0, 1.0, 1.0)).unwrap_err(),
        moebxii::Error::DegenerateSample
    );
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    // 48 states × 210 abscissae ≈ 10⁴ (θ, x) pairs.
    #[test]
    fn weights_are_bounded(
        la in -1.5f64..2.5, lc in -1.0f64..1.5, lk in -1.0f64..1.5,
        c_b in 1.8f64..6.0,
        us in proptest::collection::vec(1e-9f64..1.0, 210),
    ) {
        let th = Params::from_log(&[la, lc, lk]).unwrap();
        let st = obre_solve_aa(th, c_b, &ObreConfig::default(), None).unwrap();
        for u in us {
            let x = th.quantile(u).unwrap();
            if !(x > 0.0 && x.is_finite()) {
                continue;
            }
            let (w, psi) = obre_weights(&st, x, c_b).unwrap();
            prop_assert!((0.0..=1.0).contains(&w));
            let len = moebxii::numkit::linalg::norm(&st.a_mat.mul_vec(&psi));
            prop_assert!(len <= c_b * (1.0 + 1e-12), "{len} > {c_b}");
        }
    }

    #[test]
    fn every_estimator_returns_positive_params(seed in 0u64..1000, n in 8usize..40) {
        let s = p(3.0, 2.0, 2.0).sample(n, seed).unwrap();
        let oc = OptimConfig::default();
        let ml = fit_ml(&s, &oc).unwrap();
        let results = [
            ml,
            fit_ls(&s, &oc).unwrap(),
            fit_m_tukey(&s, &MEstConfig::default(), None).unwrap(),
        ];
        for r in results {
            let a = r.params.to_array();
            prop_assert!(a.iter().all(|v| *v > 0.0 && v.is_finite()));
        }
    }
}
