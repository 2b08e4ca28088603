use std::f64::consts::PI;

use ndarray::{Array3, Axis};
use polymatch::experiments::seeded_rng;
use polymatch::m3g::{m3g_k2, pairwise_marginal};
use polymatch::{m3g, m3g_gradient, DenseTensor, EmbeddingBatch, MultiwayCost, SolverConfig, TensorShape};
use proptest::prelude::*;
use rand::Rng;

fn batch(k: usize, n: usize, d: usize) -> impl Strategy<Value = EmbeddingBatch> {
    prop::collection::vec(-1.0f64..1.0, k * n * d)
        .prop_filter("rows away from zero", move |v| {
            v.chunks(d).all(|r| r.iter().map(|x| x * x).sum::<f64>() > 1e-2)
        })
        .prop_map(move |v| EmbeddingBatch::normalized(Array3::from_shape_vec((k, n, d), v).unwrap()).unwrap())
}

fn small_batch() -> impl Strategy<Value = EmbeddingBatch> {
    (2usize..=5, 2usize..=3, 2usize..=4).prop_flat_map(|(n, k, d)| batch(k, n, d))
}

fn tight(eps: f64) -> SolverConfig {
    SolverConfig::new(eps).with_tolerance(1e-10).with_max_iterations(1_000_000)
}

/// Four clusters on the circle; every view holds the same centers with a
/// small view-specific jitter.
fn aligned_clusters() -> EmbeddingBatch {
    let mut rng = seeded_rng(31);
    let mut x = Array3::zeros((3, 4, 2));
    for v in 0..3 {
        for i in 0..4 {
            let angle = PI / 4.0 + i as f64 * PI / 2.0 + rng.gen_range(-0.1..0.1);
            x[[v, i, 0]] = angle.cos();
            x[[v, i, 1]] = angle.sin();
        }
    }
    EmbeddingBatch::new(x).unwrap()
}

#[test]
fn aligned_views_score_lower_than_shuffled_views() {
    let aligned = aligned_clusters();
    let mut shuffled = aligned.as_array().clone();
    let view = aligned.view(2).select(Axis(0), &[1, 2, 3, 0]);
    shuffled.index_axis_mut(Axis(0), 2).assign(&view);
    let shuffled = EmbeddingBatch::new(shuffled).unwrap();
    let cfg = SolverConfig::new(0.1);
    let a = m3g(&aligned, &MultiwayCost::cv(), &cfg).unwrap().loss;
    let b = m3g(&shuffled, &MultiwayCost::cv(), &cfg).unwrap().loss;
    assert!(a < b, "aligned {a} vs shuffled {b}");
}

#[test]
fn collapsed_batch_gradient_is_radial() {
    let v = [0.6, 0.0, 0.8];
    let x = Array3::from_shape_fn((3, 4, 3), |(_, _, c)| v[c]);
    let x = EmbeddingBatch::new(x).unwrap();
    for cost in [MultiwayCost::cv(), MultiwayCost::csd()] {
        let g = m3g_gradient(&x, &cost, &SolverConfig::new(0.2)).unwrap();
        assert!(g.gradient.tangent(&x).norm() <= 1e-8);
    }
}

#[test]
fn two_view_specialization_matches_general_path() {
    let mut rng = seeded_rng(32);
    let cfg = tight(0.2);
    for _ in 0..5 {
        let x = EmbeddingBatch::random_sphere(2, 3, 4, &mut rng).unwrap();
        let general = m3g(&x, &MultiwayCost::cv(), &cfg).unwrap().loss;
        let special = m3g_k2(x.view(0), x.view(1), &cfg).unwrap();
        assert!((general - special).abs() <= 1e-9, "{general} vs {special}");
    }
    let x = EmbeddingBatch::random_sphere(1, 5, 3, &mut rng).unwrap();
    let same = m3g_k2(x.view(0), x.view(0), &cfg).unwrap();
    let stacked = EmbeddingBatch::from_views(&[x.view(0).to_owned(), x.view(0).to_owned()]).unwrap();
    let general = m3g(&stacked, &MultiwayCost::cv(), &cfg).unwrap().loss;
    assert!((same - general).abs() <= 1e-9);
}

#[test]
fn pairwise_marginal_rows_sum_to_marginal() {
    let mut rng = seeded_rng(33);
    let shape = TensorShape::new(4, 3).unwrap();
    let t = DenseTensor::from_vec(shape, (0..shape.len()).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
    for (a, b) in [(1, 2), (3, 1), (2, 4)] {
        let pm = pairwise_marginal(&t, a, b).unwrap();
        let rows = pm.sum_axis(Axis(1));
        for (r, m) in rows.iter().zip(t.marginal(a).unwrap()) {
            assert!((r - m).abs() <= 1e-12);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn loss_is_nonnegative(x in small_batch(), eps in prop::sample::select(vec![0.05, 0.2, 1.0]), csd in any::<bool>()) {
        let cost = if csd { MultiwayCost::csd() } else { MultiwayCost::cv() };
        let r = m3g(&x, &cost, &SolverConfig::new(eps).with_tolerance(1e-6).with_max_iterations(1_000_000)).unwrap();
        prop_assert!(r.loss >= -10.0 * 1e-6 * r.scale(), "loss {} scale {}", r.loss, r.scale());
    }

    #[test]
    fn relabeling_points_and_views_keeps_the_loss(
        (x, points, views) in small_batch().prop_flat_map(|x| {
            let (n, k) = (x.n(), x.k());
            (Just(x), Just((0..n).collect::<Vec<_>>()).prop_shuffle(), Just((0..k).collect::<Vec<_>>()).prop_shuffle())
        })
    ) {
        let y = x.permute_points(&points).unwrap().permute_views(&views).unwrap();
        let cfg = SolverConfig::new(1.0).with_tolerance(1e-11).with_max_iterations(200_000);
        for cost in [MultiwayCost::cv(), MultiwayCost::csd()] {
            let a = m3g(&x, &cost, &cfg).unwrap();
            let b = m3g(&y, &cost, &cfg).unwrap();
            prop_assert!(a.diagnostics.converged && b.diagnostics.converged);
            prop_assert!((a.loss - b.loss).abs() <= 1e-9, "{} vs {}", a.loss, b.loss);
        }
    }

    #[test]
    fn gradient_rows_are_bounded(x in small_batch()) {
        let g = m3g_gradient(&x, &MultiwayCost::cv(), &SolverConfig::new(0.2)).unwrap();
        let (k, n) = (x.k(), x.n());
        let t = g.result.coupling.map(|v| -v).unwrap();
        let diag = 1.0 / n as f64;
        let shape = t.shape();
        // ‖T‖₁ with T = 𝒥 − 𝒫̂
        let l1: f64 = t.values().iter().enumerate().map(|(flat, &v)| {
            let on_diag = (0..n).any(|i| shape.diagonal_offset(i) == flat);
            (v + if on_diag { diag } else { 0.0 }).abs()
        }).sum();
        let bound = 2.0 / (k * k) as f64 * l1 * k as f64;
        for view in g.gradient.as_array().outer_iter() {
            let row_sum: f64 = view.outer_iter().map(|r| r.dot(&r).sqrt()).sum();
            prop_assert!(row_sum <= bound + 1e-12, "{row_sum} > {bound}");
        }
    }

    #[test]
    fn small_projected_step_does_not_increase_loss(x in small_batch(), step in 1e-5f64..1e-3) {
        let cfg = tight(0.5);
        let g = m3g_gradient(&x, &MultiwayCost::cv(), &cfg).unwrap();
        let moved = EmbeddingBatch::normalized(x.as_array() - &(g.gradient.as_array() * step)).unwrap();
        let after = m3g(&moved, &MultiwayCost::cv(), &cfg).unwrap().loss;
        prop_assert!(after <= g.result.loss + 1e-9, "{} -> {}", g.result.loss, after);
    }
}
