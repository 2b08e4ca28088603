//! Acceptance suite: runs every criterion in sequence, prints one line per
//! criterion and exits non-zero if any of them fails.

use std::panic::{self, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::Instant;

use ndarray::{Array2, Array3};
use polymatch::experiments::bench::{run_bench, BenchGrid};
use polymatch::experiments::flow::{run_flow, FlowConfig};
use polymatch::experiments::seeded_rng;
use polymatch::experiments::train::{run_train, SyntheticTrainConfig, TrainLoss};
use polymatch::{
    cost_tensor, m3g, m3g_gradient, mm_sinkhorn, DenseTensor, EmbeddingBatch, MultiwayCost, SolverConfig,
    TensorShape,
};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

struct Outcome {
    passed: bool,
    detail: String,
}

fn check(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

type Criterion = (u32, &'static str, fn() -> Outcome);

const CRITERIA: [Criterion; 12] = [
    (1, "closed-form solve", closed_form_solve),
    (2, "two-marginal oracle", two_marginal_oracle),
    (3, "duality-gap certificate", duality_gap_certificate),
    (4, "nonnegativity sweep", nonnegativity_sweep),
    (5, "gradient check", gradient_check),
    (6, "cost identity", cost_identity),
    (7, "analytic loss of a collapsed batch", collapsed_batch_loss),
    (8, "gradient-flow toy", gradient_flow_toy),
    (9, "epsilon-iteration monotonicity", epsilon_monotonicity),
    (10, "invariance suite", invariance_suite),
    (11, "desk-scale training smoke", training_smoke),
    (12, "performance gate", performance_gate),
];

fn main() -> ExitCode {
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failures = 0;
    let mut ran = 0;
    for (id, name, run) in CRITERIA {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str()) || id.to_string() == *f) {
            continue;
        }
        ran += 1;
        let start = Instant::now();
        let outcome = panic::catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            check(false, format!("panicked: {msg}"))
        });
        let status = if outcome.passed { "PASS" } else { "FAIL" };
        failures += usize::from(!outcome.passed);
        println!(
            "{status} [{id:>2}] {name}: {} ({:.2}s)",
            outcome.detail,
            start.elapsed().as_secs_f64()
        );
    }
    println!("acceptance: {} of {ran} criteria passed", ran - failures);
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn random_tensor(rng: &mut ChaCha8Rng, k: usize, n: usize) -> DenseTensor {
    let shape = TensorShape::new(k, n).unwrap();
    DenseTensor::from_vec(shape, (0..shape.len()).map(|_| rng.gen::<f64>()).collect()).unwrap()
}

fn tight(eps: f64, tol: f64) -> SolverConfig {
    SolverConfig::new(eps).with_tolerance(tol).with_max_iterations(1_000_000)
}

fn closed_form_solve() -> Outcome {
    let start = Instant::now();
    let c0 = 0.7;
    let mut worst = 0.0f64;
    let mut all_converged = true;
    for (n, k) in [(3, 2), (4, 3), (3, 4)] {
        for eps in [0.05, 0.2, 1.0] {
            let cost = DenseTensor::filled(TensorShape::new(k, n).unwrap(), c0).unwrap();
            let r = mm_sinkhorn(&cost, &SolverConfig::new(eps)).unwrap();
            all_converged &= r.converged && r.marginal_deviation < 1e-3;
            let expected = c0 - eps * (k as f64 * (n as f64).ln() + 1.0);
            worst = worst.max((r.ot_value - expected).abs());
        }
    }
    let secs = start.elapsed().as_secs_f64();
    check(
        all_converged && worst <= 1e-8 && secs < 1.0,
        format!("max |ot - closed form| = {worst:.2e} (tol 1e-8), all converged = {all_converged}, {secs:.3}s (limit 1s)"),
    )
}

/// Classical two-marginal Sinkhorn in the log domain with uniform weights:
/// `P = diag(a) exp((f ⊕ g − C)/ε) diag(b)`.
fn classical_sinkhorn(cost: &Array2<f64>, eps: f64) -> Array2<f64> {
    let n = cost.nrows();
    let log_w = -(n as f64).ln();
    let lse = |it: &mut dyn Iterator<Item = f64>| {
        let v: Vec<f64> = it.collect();
        let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
    };
    let mut f = vec![0.0; n];
    let mut g = vec![0.0; n];
    for _ in 0..100_000 {
        for i in 0..n {
            f[i] = -eps * lse(&mut (0..n).map(|j| (g[j] - cost[[i, j]]) / eps + log_w));
        }
        for j in 0..n {
            g[j] = -eps * lse(&mut (0..n).map(|i| (f[i] - cost[[i, j]]) / eps + log_w));
        }
        let err: f64 = (0..n)
            .map(|i| {
                let row: f64 = (0..n)
                    .map(|j| (2.0 * log_w + (f[i] + g[j] - cost[[i, j]]) / eps).exp())
                    .sum();
                (row - 1.0 / n as f64).abs()
            })
            .sum();
        if err < 1e-15 {
            break;
        }
    }
    Array2::from_shape_fn((n, n), |(i, j)| (2.0 * log_w + (f[i] + g[j] - cost[[i, j]]) / eps).exp())
}

fn entropic_value(p: &Array2<f64>, cost: &Array2<f64>, eps: f64) -> f64 {
    p.iter()
        .zip(cost)
        .map(|(&p, &c)| p * c + if p > 0.0 { eps * p * (p.ln() - 1.0) } else { 0.0 })
        .sum()
}

fn two_marginal_oracle() -> Outcome {
    let mut rng = seeded_rng(2);
    let eps = 0.1;
    let (mut worst_value, mut worst_entry) = (0.0f64, 0.0f64);
    for _ in 0..50 {
        let n = rng.gen_range(2..=16);
        let cost = random_tensor(&mut rng, 2, n);
        let r = mm_sinkhorn(&cost, &tight(eps, 1e-12)).unwrap();
        let c2 = Array2::from_shape_vec((n, n), cost.values().to_vec()).unwrap();
        let p = classical_sinkhorn(&c2, eps);
        worst_value = worst_value.max((r.ot_value - entropic_value(&p, &c2, eps)).abs());
        let entry = r
            .coupling
            .values()
            .iter()
            .zip(&p)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        worst_entry = worst_entry.max(entry);
    }
    check(
        worst_value <= 1e-6 && worst_entry <= 1e-6,
        format!("max value error {worst_value:.2e}, max coupling entry error {worst_entry:.2e} (tol 1e-6) over 50 instances"),
    )
}

fn duality_gap_certificate() -> Outcome {
    let mut rng = seeded_rng(3);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let cost = random_tensor(&mut rng, 3, 4);
        let r = mm_sinkhorn(&cost, &tight(0.2, 1e-6)).unwrap();
        worst = worst.max(r.duality_gap(&cost).unwrap());
    }
    check(worst <= 1e-4, format!("max duality gap {worst:.2e} (tol 1e-4) over 20 instances"))
}

fn nonnegativity_sweep() -> Outcome {
    let mut rng = seeded_rng(4);
    let costs = [MultiwayCost::cv(), MultiwayCost::csd()];
    let mut worst_ratio = f64::INFINITY;
    let mut violations = 0;
    for trial in 0..1000 {
        let n = rng.gen_range(2..=6);
        let k = rng.gen_range(2..=4);
        let d = rng.gen_range(2..=5);
        let eps = [0.05, 0.2, 1.0][trial % 3];
        let cost = &costs[(trial / 3) % 2];
        let x = EmbeddingBatch::random_sphere(k, n, d, &mut rng).unwrap();
        let r = m3g(&x, cost, &tight(eps, 1e-6)).unwrap();
        let ratio = r.loss / r.scale();
        worst_ratio = worst_ratio.min(ratio);
        violations += usize::from(ratio < -1e-5);
    }
    check(
        violations == 0,
        format!("min loss/scale = {worst_ratio:.2e} (bound -1e-5), {violations} violations in 1000 batches at tolerance 1e-6"),
    )
}

/// Loss after moving coordinate `c` by `h` and projecting back to the sphere.
fn perturbed_loss(x: &EmbeddingBatch, c: usize, h: f64, cfg: &SolverConfig) -> f64 {
    let mut a = x.as_array().clone();
    a.as_slice_mut().unwrap()[c] += h;
    let moved = EmbeddingBatch::normalized(a).unwrap();
    m3g(&moved, &MultiwayCost::cv(), cfg).unwrap().loss
}

fn gradient_check() -> Outcome {
    let start = Instant::now();
    let mut rng = seeded_rng(5);
    let analytic_cfg = tight(0.2, 1e-6);
    let fd_cfg = tight(0.2, 1e-13);
    let h = 1e-5;
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let x = EmbeddingBatch::random_sphere(3, 4, 5, &mut rng).unwrap();
        let g = m3g_gradient(&x, &MultiwayCost::cv(), &analytic_cfg).unwrap();
        let analytic = g.gradient.tangent(&x);
        let an = analytic.as_array().as_slice().unwrap();
        let mut num = 0.0;
        let mut den = 0.0;
        for (c, &a) in an.iter().enumerate() {
            let fd = (perturbed_loss(&x, c, h, &fd_cfg) - perturbed_loss(&x, c, -h, &fd_cfg)) / (2.0 * h);
            num += (fd - a).powi(2);
            den += a * a;
        }
        worst = worst.max((num / den).sqrt());
    }
    let secs = start.elapsed().as_secs_f64();
    check(
        worst <= 1e-4 && secs < 30.0,
        format!("max relative error {worst:.2e} (tol 1e-4) over 20 instances, {secs:.2}s (limit 30s)"),
    )
}

fn brute_force_cost(x: &EmbeddingBatch, csd: bool) -> Vec<f64> {
    let (k, n, d) = (x.k(), x.n(), x.d());
    let shape = TensorShape::new(k, n).unwrap();
    let mut index = vec![0; k];
    (0..shape.len())
        .map(|flat| {
            shape.unravel(flat, &mut index);
            let mean: Vec<f64> = (0..d)
                .map(|c| (0..k).map(|v| x.row(v, index[v])[c]).sum::<f64>() / k as f64)
                .collect();
            let r2: f64 = mean.iter().map(|m| m * m).sum();
            if csd {
                -r2.max(1e-12).ln()
            } else {
                1.0 - r2
            }
        })
        .collect()
}

fn cost_identity() -> Outcome {
    let mut rng = seeded_rng(6);
    let mut worst_identity = 0.0f64;
    for _ in 0..1000 {
        let k = rng.gen_range(2..=6);
        let d = rng.gen_range(2..=6);
        let x = EmbeddingBatch::random_sphere(k, 1, d, &mut rng).unwrap();
        let tuple: Vec<&[f64]> = (0..k).map(|v| x.row_slice(v, 0)).collect();
        let lhs = polymatch::costs::c_cv(&tuple).unwrap();
        let mut pairs = 0.0;
        for a in 0..k {
            for b in a + 1..k {
                pairs += tuple[a].iter().zip(tuple[b]).map(|(p, q)| (p - q).powi(2)).sum::<f64>();
            }
        }
        worst_identity = worst_identity.max((lhs - pairs / (k * k) as f64).abs());
    }
    let mut worst_tensor = 0.0f64;
    let mut cases = 0;
    for k in 2..=6 {
        for n in 1..=16usize {
            if n.pow(k as u32) > 4096 {
                continue;
            }
            cases += 1;
            let x = EmbeddingBatch::random_sphere(k, n, 4, &mut rng).unwrap();
            for (cost, csd) in [(MultiwayCost::cv(), false), (MultiwayCost::csd(), true)] {
                let fast = cost_tensor(&x, &cost).unwrap();
                let brute = brute_force_cost(&x, csd);
                let diff = fast.values().iter().zip(&brute).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                worst_tensor = worst_tensor.max(diff);
            }
        }
    }
    check(
        worst_identity <= 1e-10 && worst_tensor <= 1e-12,
        format!(
            "identity error {worst_identity:.2e} (tol 1e-10) on 1000 tuples; tensor vs brute force {worst_tensor:.2e} (tol 1e-12) on {cases} shapes"
        ),
    )
}

fn collapsed_batch_loss() -> Outcome {
    let eps = 0.2;
    let mut worst = 0.0f64;
    for (n, k) in [(4, 3), (8, 2)] {
        let mut x = Array3::zeros((k, n, 3));
        x.slice_mut(ndarray::s![.., .., 0]).fill(1.0);
        let r = m3g(&EmbeddingBatch::new(x).unwrap(), &MultiwayCost::cv(), &SolverConfig::new(eps)).unwrap();
        let expected = eps * (k as f64 - 1.0) * (n as f64).ln();
        worst = worst.max((r.loss - expected).abs());
    }
    check(worst <= 1e-6, format!("max |loss - eps(k-1)log n| = {worst:.2e} (tol 1e-6)"))
}

fn gradient_flow_toy() -> Outcome {
    let start = Instant::now();
    let cfg = FlowConfig::paper_fig1();
    let fast = run_flow(&cfg).unwrap();
    let ratio = fast.final_loss() / fast.initial_loss();
    let slow_cfg = FlowConfig {
        step_size: 1e-3,
        ..FlowConfig::paper_fig1()
    };
    let slow = run_flow(&slow_cfg).unwrap();
    let max_increase = slow
        .records
        .windows(2)
        .map(|w| w[1].loss - w[0].loss)
        .fold(f64::NEG_INFINITY, f64::max);
    let secs = start.elapsed().as_secs_f64();
    check(
        ratio <= 0.1 && max_increase <= 1e-9 && secs < 60.0,
        format!(
            "final/initial = {ratio:.4} (limit 0.1); largest per-step increase at step 1e-3 = {max_increase:.2e} (slack 1e-9); {secs:.2}s (limit 60s)"
        ),
    )
}

fn epsilon_monotonicity() -> Outcome {
    let grid = BenchGrid {
        ns: vec![8, 16, 32, 64],
        ks: vec![2, 3, 4],
        epsilons: vec![0.05, 0.2, 1.0],
        ..Default::default()
    };
    let summary = run_bench(&grid, |_| Ok(())).unwrap();
    let small_vs_large = summary
        .records
        .chunks(3)
        .all(|cell| cell[0].iterations >= cell[2].iterations);
    let cells = summary.records.len() / 3;
    check(
        summary.skipped.is_empty() && summary.violations.is_empty() && small_vs_large && cells == 12,
        format!(
            "{cells} cells, {} skipped, {} ordering violations",
            summary.skipped.len(),
            summary.violations.len()
        ),
    )
}

fn invariance_suite() -> Outcome {
    let mut rng = seeded_rng(10);
    let cfg = tight(0.2, 1e-12);
    let mut worst_loss = 0.0f64;
    for trial in 0..100 {
        let n = rng.gen_range(2..=5);
        let k = rng.gen_range(2..=4);
        let cost = if trial % 2 == 0 { MultiwayCost::cv() } else { MultiwayCost::csd() };
        let x = EmbeddingBatch::random_sphere(k, n, 3, &mut rng).unwrap();
        let mut points: Vec<usize> = (0..n).collect();
        points.shuffle(&mut rng);
        let mut views: Vec<usize> = (0..k).collect();
        views.shuffle(&mut rng);
        let y = x.permute_points(&points).unwrap().permute_views(&views).unwrap();
        let a = m3g(&x, &cost, &cfg).unwrap().loss;
        let b = m3g(&y, &cost, &cfg).unwrap().loss;
        worst_loss = worst_loss.max((a - b).abs());
    }
    let mut worst_shift = 0.0f64;
    for _ in 0..20 {
        let cost = random_tensor(&mut rng, 3, 4);
        let shifted = cost.map(|c| c + 3.7).unwrap();
        let cfg = SolverConfig::new(0.2);
        let p = mm_sinkhorn(&cost, &cfg).unwrap().coupling;
        let q = mm_sinkhorn(&shifted, &cfg).unwrap().coupling;
        let diff = p.values().iter().zip(q.values()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        worst_shift = worst_shift.max(diff);
    }
    check(
        worst_loss <= 1e-9 && worst_shift <= 1e-9,
        format!("relabeling/permutation loss change {worst_loss:.2e}, shift coupling change {worst_shift:.2e} (tol 1e-9)"),
    )
}

fn training_smoke() -> Outcome {
    let start = Instant::now();
    let cfg = SyntheticTrainConfig {
        loss: TrainLoss::M3g,
        ..Default::default()
    };
    let m = run_train(&cfg).unwrap();
    let secs = start.elapsed().as_secs_f64();
    check(
        m.probe_accuracy >= 0.9 && secs < 300.0,
        format!(
            "probe accuracy {:.4} (limit 0.9, untrained {:.4}) with seed {}; {secs:.1}s (limit 300s)",
            m.probe_accuracy, m.baseline_probe_accuracy, cfg.seed
        ),
    )
}

fn performance_gate() -> Outcome {
    let mut rng = seeded_rng(12);
    let mut times = Vec::new();
    for (n, k, limit) in [(64, 3, 10.0), (16, 5, 30.0)] {
        let x = EmbeddingBatch::random_sphere(k, n, 8, &mut rng).unwrap();
        let start = Instant::now();
        let g = m3g_gradient(&x, &MultiwayCost::cv(), &SolverConfig::new(0.2)).unwrap();
        let secs = start.elapsed().as_secs_f64();
        assert!(g.result.loss.is_finite());
        times.push((n, k, secs, limit));
    }
    let passed = times.iter().all(|&(_, _, s, l)| s < l);
    let detail = times
        .iter()
        .map(|(n, k, s, l)| format!("n={n} k={k}: {s:.2}s (limit {l}s)"))
        .collect::<Vec<_>>()
        .join("; ");
    check(passed, format!("{detail} on {} worker thread(s)", rayon_threads()))
}

fn rayon_threads() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}
