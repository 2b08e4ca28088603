use ndarray::Array2;
use polymatch::experiments::seeded_rng;
use polymatch::solver::{dual_objective, mm_sinkhorn_observed, primal_from_dual, primal_objective};
use polymatch::{mm_sinkhorn, DenseTensor, SolverConfig, TensorShape};
use proptest::prelude::*;
use rand::Rng;

fn cost(k: usize, n: usize) -> impl Strategy<Value = DenseTensor> {
    let shape = TensorShape::new(k, n).unwrap();
    prop::collection::vec(0.0f64..1.0, shape.len()).prop_map(move |v| DenseTensor::from_vec(shape, v).unwrap())
}

fn any_cost() -> impl Strategy<Value = DenseTensor> {
    (2usize..=4, 2usize..=5)
        .prop_filter("small", |&(k, n)| n.pow(k as u32) <= 625)
        .prop_flat_map(|(k, n)| cost(k, n))
}

/// Two-marginal Sinkhorn with multiplicative scalings `u`, `v` on the
/// Gibbs kernel; safe for costs in [0, 1] at ε = 0.1.
fn scaling_sinkhorn(c: &Array2<f64>, eps: f64) -> Array2<f64> {
    let n = c.nrows();
    let kernel = c.mapv(|x| (-x / eps).exp());
    let w = 1.0 / n as f64;
    let mut u = vec![1.0; n];
    let mut v = vec![1.0; n];
    for _ in 0..200_000 {
        for i in 0..n {
            u[i] = w / (0..n).map(|j| kernel[[i, j]] * v[j]).sum::<f64>();
        }
        for j in 0..n {
            v[j] = w / (0..n).map(|i| kernel[[i, j]] * u[i]).sum::<f64>();
        }
    }
    Array2::from_shape_fn((n, n), |(i, j)| u[i] * kernel[[i, j]] * v[j])
}

#[test]
fn two_view_instances_match_scaling_sinkhorn() {
    let mut rng = seeded_rng(21);
    for n in [3, 8] {
        let shape = TensorShape::new(2, n).unwrap();
        let c = DenseTensor::from_vec(shape, (0..n * n).map(|_| rng.gen::<f64>()).collect()).unwrap();
        let report = mm_sinkhorn(&c, &SolverConfig::new(0.1).with_tolerance(1e-12).with_max_iterations(100_000)).unwrap();
        let oracle = scaling_sinkhorn(&Array2::from_shape_vec((n, n), c.values().to_vec()).unwrap(), 0.1);
        let value: f64 = oracle
            .iter()
            .zip(c.values())
            .map(|(&p, &x)| p * x + 0.1 * p * (p.ln() - 1.0))
            .sum();
        assert!((report.ot_value - value).abs() <= 1e-6);
        for (a, b) in report.coupling.values().iter().zip(&oracle) {
            assert!((a - b).abs() <= 1e-6);
        }
    }
}

#[test]
fn smaller_epsilon_needs_more_sweeps() {
    let mut rng = seeded_rng(22);
    let shape = TensorShape::new(3, 6).unwrap();
    let c = DenseTensor::from_vec(shape, (0..shape.len()).map(|_| rng.gen::<f64>()).collect()).unwrap();
    let iters = |eps| mm_sinkhorn(&c, &SolverConfig::new(eps)).unwrap().iterations;
    assert!(iters(0.05) >= iters(1.0));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn dual_objective_never_decreases(c in cost(3, 4), eps in 0.05f64..1.0) {
        let mut values = Vec::new();
        let cfg = SolverConfig::new(eps).with_tolerance(1e-9).with_max_iterations(300);
        mm_sinkhorn_observed(&c, &cfg, |s| values.push(dual_objective(s.potentials, &c, eps).unwrap())).unwrap();
        for w in values.windows(2) {
            prop_assert!(w[1] >= w[0] - 1e-10, "{} then {}", w[0], w[1]);
        }
    }

    #[test]
    fn converged_marginals_and_certificate(c in any_cost(), eps in prop::sample::select(vec![0.05, 0.2, 1.0])) {
        let alpha = 1e-4;
        let cfg = SolverConfig::new(eps).with_tolerance(alpha).with_max_iterations(200_000);
        let r = mm_sinkhorn(&c, &cfg).unwrap();
        prop_assert!(r.converged);
        let s = c.shape();
        let target = 1.0 / s.n() as f64;
        let p = primal_from_dual(&r.potentials, &c, eps).unwrap();
        for axis in 1..=s.k() {
            let l1: f64 = p.marginal(axis).unwrap().iter().map(|m| (m - target).abs()).sum();
            prop_assert!(l1 <= alpha);
        }
        let scale = c.max_abs() + eps * s.k() as f64 * (s.n() as f64).ln();
        prop_assert!(r.duality_gap(&c).unwrap() <= 10.0 * alpha * scale);
    }

    #[test]
    fn constant_shift_moves_value_only(c in any_cost(), shift in -5.0f64..5.0) {
        let cfg = SolverConfig::new(0.2).with_tolerance(1e-8).with_max_iterations(100_000);
        let a = mm_sinkhorn(&c, &cfg).unwrap();
        let b = mm_sinkhorn(&c.map(|v| v + shift).unwrap(), &cfg).unwrap();
        prop_assert!((b.ot_value - a.ot_value - shift).abs() <= 1e-9);
        for (x, y) in a.coupling.values().iter().zip(b.coupling.values()) {
            prop_assert!((x - y).abs() <= 1e-9);
        }
    }

    #[test]
    fn entropic_primal_of_coupling_matches_value(c in any_cost()) {
        let r = mm_sinkhorn(&c, &SolverConfig::new(0.3).with_tolerance(1e-10).with_max_iterations(100_000)).unwrap();
        let h = primal_objective(&r.coupling, &c, 0.3).unwrap();
        prop_assert!((h - r.ot_value).abs() <= 1e-8);
    }

    #[test]
    fn solves_are_deterministic(c in any_cost()) {
        let cfg = SolverConfig::new(0.1);
        let a = mm_sinkhorn(&c, &cfg).unwrap();
        let b = mm_sinkhorn(&c, &cfg).unwrap();
        prop_assert_eq!(a.ot_value.to_bits(), b.ot_value.to_bits());
        prop_assert_eq!(a.coupling, b.coupling);
    }
}
