use ndarray::{Array1, Array2};
use proptest::prelude::*;
use ssae::cs::{lasso_objective, lasso_recover, LassoSettings, SensingMatrix};

fn settings(lambda: f64) -> LassoSettings {
    LassoSettings {
        lambda: Some(lambda),
        tol: 1e-13,
        max_iter: 100_000,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Optimality: |Φⱼᵀr| ≤ λ everywhere, with equality and matching sign on
    /// the support.
    #[test]
    fn solution_satisfies_kkt(
        seed in 0u64..1000,
        m in 2usize..10,
        l in 2usize..16,
        y in prop::collection::vec(-2.0f64..2.0, 10),
        ratio in 0.01f64..0.9,
    ) {
        prop_assume!(m <= l);
        let phi = SensingMatrix::gaussian(m, l, seed).unwrap();
        let y = Array1::from(y[..m].to_vec());
        let lambda_max = phi.matrix().t().dot(&y).iter().fold(0.0f64, |a, v| a.max(v.abs()));
        prop_assume!(lambda_max > 1e-6);
        let lambda = ratio * lambda_max;
        let sol = lasso_recover(&phi, y.view(), &settings(lambda)).unwrap();
        prop_assert!(sol.converged);
        let corr = phi.matrix().t().dot(&(&y - &phi.matrix().dot(&sol.s)));
        for (j, (&c, &s)) in corr.iter().zip(sol.s.iter()).enumerate() {
            prop_assert!(c.abs() <= lambda * (1.0 + 1e-6) + 1e-9, "coordinate {j}: {c} > {lambda}");
            if s != 0.0 {
                prop_assert!((c - lambda * s.signum()).abs() <= 1e-6 * lambda.max(1.0), "coordinate {j}");
            }
        }
        let zero = Array1::zeros(l);
        prop_assert!(lasso_objective(&phi, y.view(), sol.s.view(), lambda) <= lasso_objective(&phi, y.view(), zero.view(), lambda) + 1e-12);
    }

    #[test]
    fn penalty_at_or_above_the_max_correlation_gives_zero(
        seed in 0u64..1000,
        y in prop::collection::vec(-2.0f64..2.0, 6),
        factor in 1.0f64..5.0,
    ) {
        let phi = SensingMatrix::gaussian(6, 9, seed).unwrap();
        let y = Array1::from(y);
        let lambda_max = phi.matrix().t().dot(&y).iter().fold(0.0f64, |a, v| a.max(v.abs()));
        prop_assume!(lambda_max > 0.0);
        let sol = lasso_recover(&phi, y.view(), &settings(factor * lambda_max)).unwrap();
        prop_assert!(sol.s.iter().all(|&v| v == 0.0));
    }
}

#[test]
fn orthonormal_sensing_matches_soft_thresholding() {
    // rotation in the (0, 1) plane plus identity elsewhere
    let (c, s) = (0.6, 0.8);
    let mut q = Array2::<f64>::eye(4);
    q[[0, 0]] = c;
    q[[0, 1]] = -s;
    q[[1, 0]] = s;
    q[[1, 1]] = c;
    let phi = SensingMatrix::from_matrix(q.clone()).unwrap();
    let y = Array1::from(vec![1.0, -0.3, 0.05, 2.0]);
    let lambda = 0.2;
    let z = q.t().dot(&y);
    let expected = z.mapv(|v: f64| v.signum() * (v.abs() - lambda).max(0.0));
    let sol = lasso_recover(&phi, y.view(), &settings(lambda)).unwrap();
    for (a, b) in sol.s.iter().zip(expected.iter()) {
        assert!((a - b).abs() < 1e-10, "{} vs {}", sol.s, expected);
    }
}
