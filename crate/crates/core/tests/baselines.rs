use ndarray::Array1;
use proptest::prelude::*;
use ssae::baselines::{fit, SparsifierKind};
use ssae::bench::{run_benchmark, BenchmarkConfig, Method};
use ssae::data::{generate_synthetic, NoiseSpec};

#[test]
fn full_codes_are_lossless() {
    let x = generate_synthetic(10, 300, 3.0, 4.0, NoiseSpec::new(0.2, 5).unwrap()).unwrap();
    let config = BenchmarkConfig {
        etas: vec![1.0],
        methods: SparsifierKind::ALL.map(Method::Baseline).to_vec(),
        ..BenchmarkConfig::default()
    };
    let report = run_benchmark(&x, &config).unwrap();
    for cell in &report.cells {
        let rmse = cell.rmse.clone().unwrap();
        assert!(rmse <= 1e-8, "{}: {rmse}", cell.method);
    }
}

proptest! {
    #[test]
    fn error_shrinks_as_more_coefficients_are_kept(
        values in prop::collection::vec(-10.0f64..10.0, 9),
        kind in prop::sample::select(SparsifierKind::ALL.to_vec()),
    ) {
        let train = generate_synthetic(9, 40, 2.0, 3.0, NoiseSpec::new(0.3, 1).unwrap()).unwrap();
        let sp = fit(kind, &train).unwrap();
        let x = Array1::from(values);
        let coeffs = sp.transform(x.view()).unwrap();
        // orthonormal analysis preserves the centred norm
        let centred = &x - sp.mean();
        prop_assert!((coeffs.dot(&coeffs) - centred.dot(&centred)).abs() <= 1e-9 * (1.0 + centred.dot(&centred)));
        let mut previous = f64::INFINITY;
        for k in 1..=9 {
            let x_hat = sp.decode(&sp.encode(x.view(), k).unwrap()).unwrap();
            let err = (&x_hat - &x).mapv(|v| v * v).sum();
            prop_assert!(err <= previous + 1e-9, "k = {k}");
            previous = err;
        }
        prop_assert!(previous <= 1e-18 * (1.0 + x.dot(&x)) + 1e-18);
    }
}
