use moebxii::estimators::Method;
use moebxii::sim::*;
use moebxii::Params;
use proptest::prelude::*;

fn csv_bytes(results: &[ScenarioResult]) -> Vec<u8> {
    let mut buf = Vec::new();
    write_csv(results, &mut buf).unwrap();
    buf
}

#[test]
fn repeated_runs_are_byte_identical() {
    let sc = Scenario::new(Params::new(3.0, 1.0, 2.0).unwrap(), 25, 1, 6, 99).unwrap();
    let a = with_jobs(1, || run_scenario(&sc)).unwrap().unwrap();
    let b = with_jobs(3, || run_scenario(&sc)).unwrap().unwrap();
    assert_eq!(csv_bytes(&[a.clone()]), csv_bytes(&[b]));
    let c = run_scenario(&sc).unwrap();
    assert_eq!(csv_bytes(&[a]), csv_bytes(&[c]));
}

#[test]
fn different_seeds_give_different_tables() {
    let t = Params::new(3.0, 1.0, 1.0).unwrap();
    let mut a = Scenario::new(t, 30, 0, 3, 1).unwrap();
    a.estimators = vec![Method::Ml];
    let mut b = a.clone();
    b.seed = 2;
    assert_ne!(run_scenario(&a).unwrap().rows, run_scenario(&b).unwrap().rows);
}

#[test]
fn rows_satisfy_jensen_and_failure_bounds() {
    let sc = Scenario::new(Params::new(5.0, 2.0, 1.0).unwrap(), 50, 2, 8, 5).unwrap();
    let res = run_scenario(&sc).unwrap();
    assert_eq!(res.rows.len(), 4);
    for row in &res.rows {
        assert!(row.failure_count <= sc.replications);
        if row.failure_count < sc.replications {
            for i in 0..3 {
                assert!(row.rmse[i] >= 0.0);
                assert!(row.rmse[i] * row.rmse[i] >= row.bias[i] * row.bias[i] * (1.0 - 1e-12));
            }
        }
    }
}

#[test]
fn clean_large_samples_have_small_bias() {
    let truth = Params::new(3.0, 2.0, 2.0).unwrap();
    let sc = Scenario::new(truth, 400, 0, 50, 77).unwrap();
    let res = run_scenario(&sc).unwrap();
    for row in &res.rows {
        for (i, t) in truth.to_array().iter().enumerate() {
            assert!(
                row.bias[i].abs() < 0.25 * t,
                "{} parameter {i}: bias {} ({} failures)",
                row.estimator,
                row.bias[i],
                row.failure_count
            );
        }
    }
}

#[test]
fn outliers_do_not_help_ml() {
    let truth = Params::new(3.0, 1.0, 1.0).unwrap();
    let mut clean = Scenario::new(truth, 50, 0, 100, 31).unwrap();
    clean.estimators = vec![Method::Ml];
    let mut dirty = clean.clone();
    dirty.n_outliers = 2;
    let c = run_scenario(&clean).unwrap().rows[0];
    let d = run_scenario(&dirty).unwrap().rows[0];
    for i in 0..3 {
        assert!(d.rmse[i] >= c.rmse[i], "parameter {i}: {} < {}", d.rmse[i], c.rmse[i]);
    }
}

proptest! {
    #[test]
    fn rmse_squared_dominates_bias_squared(
        est in proptest::collection::vec((0.01f64..50.0, 0.01f64..50.0, 0.01f64..50.0), 1..40),
        ta in 0.1f64..10.0, tc in 0.1f64..10.0, tk in 0.1f64..10.0,
    ) {
        let truth = Params::new(ta, tc, tk).unwrap();
        let est: Vec<Params> = est.into_iter().map(|(a, c, k)| Params::new(a, c, k).unwrap()).collect();
        let br = bias_rmse(&est, &truth).unwrap();
        for i in 0..3 {
            prop_assert!(br.rmse[i] >= 0.0);
            prop_assert!(br.rmse[i] * br.rmse[i] >= br.bias[i] * br.bias[i] * (1.0 - 1e-12));
        }
    }

    #[test]
    fn outlier_injection_keeps_the_head(v in proptest::collection::vec(0.01f64..100.0, 2..30), frac in 0.0f64..1.0) {
        let s = moebxii::Sample::new(v.clone()).unwrap();
        let m = ((v.len() - 1) as f64 * frac) as usize;
        let out = inject_outliers(&s, m).unwrap();
        let top = 5.0 * s.max();
        prop_assert_eq!(&out.values()[..v.len() - m], &v[..v.len() - m]);
        prop_assert!(out.values()[v.len() - m..].iter().all(|&x| x == top));
    }
}
