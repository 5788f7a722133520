use proptest::prelude::*;
use rfa_core::estimation::{sample_covariance, SampleCovOptions};
use rfa_core::experiment::{run_experiment, ExperimentConfig};
use rfa_core::simulator::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn model_invariants(n in 2usize..30, frac in 0.0f64..1.0, seed in any::<u64>()) {
        let r = 1 + ((n - 2) as f64 * frac) as usize;
        let gt = generate_model(&FactorModelSpec::new(n, r, seed)).unwrap();
        prop_assert_eq!(gt.r_true.numerical_rank(1e-10).unwrap(), r);
        prop_assert!(gt.sigma.cholesky().is_ok());
        let diff = gt.sigma.sub(&gt.r_true);
        prop_assert_eq!(diff.max_abs_off_diag(), 0.0);
        for (a, b) in diff.diag().iter().zip(gt.d_true.diag()) {
            prop_assert!((a - b).abs() <= 4.0 * f64::EPSILON * gt.sigma.max_abs());
        }
        prop_assert!(gt.b.iter().all(|v| (0.1..1.0).contains(v)));
    }
}

#[test]
fn large_sample_law() {
    let gt = generate_model(&FactorModelSpec::new(3, 1, 11)).unwrap();
    let x = sample_data(&gt, 200_000, 5).unwrap();
    for i in 0..3 {
        let mean = x.row(i).iter().sum::<f64>() / x.cols() as f64;
        let sd = gt.sigma.get(i, i).sqrt();
        assert!(mean.abs() <= 5.0 * sd / (x.cols() as f64).sqrt(), "row {i} mean {mean}");
    }
    let est = sample_covariance(&x, SampleCovOptions::default()).unwrap();
    assert!(est.sigma_hat().sub(&gt.sigma).max_abs() <= 0.05 * gt.sigma.max_abs());
}

#[test]
fn model_and_data_streams_are_independent_of_sample_count() {
    let gt = generate_model(&FactorModelSpec::new(4, 2, 3)).unwrap();
    let short = sample_data(&gt, 5, 9).unwrap();
    let long = sample_data(&gt, 50, 9).unwrap();
    for i in 0..4 {
        assert_eq!(short.row(i), &long.row(i)[..5]);
    }
}

#[test]
fn experiment_report_is_reproducible() {
    let mut cfg = ExperimentConfig::new(8, 2, 200, vec![3, 1]);
    cfg.sweep = vec![0.3, 0.7];
    let a = run_experiment(&cfg, 1).unwrap();
    let b = run_experiment(&cfg, 2).unwrap();
    let strip = |r: &rfa_core::experiment::ExperimentReport| {
        let mut v = serde_json::to_value(r).unwrap();
        v.as_object_mut().unwrap().remove("timings");
        serde_json::to_string(&v).unwrap()
    };
    assert_eq!(strip(&a), strip(&b));
    assert_eq!(a.seeds.iter().map(|s| s.seed).collect::<Vec<_>>(), vec![3, 1]);
    let s = &a.seeds[0];
    assert!(s.error.is_none(), "{:?}", s.error);
    let hat = s.mtfa_hat.as_ref().unwrap();
    assert!(hat.singular_values.windows(2).all(|w| w[0] >= w[1]));
    assert_eq!(s.sweep.len(), 2);
}
