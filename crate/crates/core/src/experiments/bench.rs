//! Timing sweep of cost tensor construction plus solve over `(n, k, ε)`.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::seeded_rng;
use crate::costs::{cost_tensor, MultiwayCost};
use crate::embedding::EmbeddingBatch;
use crate::error::{Error, Result};
use crate::solver::{mm_sinkhorn, SolverConfig};
use crate::tensor::TensorShape;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchGrid {
    pub ns: Vec<usize>,
    pub ks: Vec<usize>,
    pub epsilons: Vec<f64>,
    pub d: usize,
    pub cost: String,
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Cells whose tensor would exceed this many entries are skipped.
    pub max_elements: usize,
    pub seed: u64,
}

impl Default for BenchGrid {
    fn default() -> Self {
        Self {
            ns: vec![8, 16, 32, 64],
            ks: vec![2, 3, 4, 5, 6],
            epsilons: vec![0.05, 0.2, 1.0],
            d: 8,
            cost: "cv".into(),
            tolerance: 1e-3,
            max_iterations: 1000,
            max_elements: 1 << 24,
            seed: 0,
        }
    }
}

impl BenchGrid {
    pub fn validate(&self) -> Result<()> {
        if self.ns.is_empty() || self.ks.is_empty() || self.epsilons.is_empty() {
            return Err(Error::param("grid", "every axis needs at least one value"));
        }
        if self.d == 0 {
            return Err(Error::param("d", "must be positive"));
        }
        MultiwayCost::from_label(&self.cost)?;
        for &eps in &self.epsilons {
            SolverConfig::new(eps)
                .with_tolerance(self.tolerance)
                .with_max_iterations(self.max_iterations)
                .validate()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BenchRecord {
    pub n: usize,
    pub k: usize,
    pub epsilon: f64,
    pub iterations: usize,
    /// Seconds spent on the cost tensor and the solve.
    pub wall_time: f64,
    pub delta: f64,
    pub converged: bool,
}

impl BenchRecord {
    pub const CSV_HEADER: &'static str = "n,k,epsilon,iterations,wall_time,delta,converged";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{:.6},{:e},{}",
            self.n, self.k, self.epsilon, self.iterations, self.wall_time, self.delta, self.converged
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonotonicityViolation {
    pub n: usize,
    pub k: usize,
    pub small_epsilon: f64,
    pub small_iterations: usize,
    pub large_epsilon: f64,
    pub large_iterations: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct BenchSummary {
    pub records: Vec<BenchRecord>,
    /// `(n, k)` cells over the element cap.
    pub skipped: Vec<(usize, usize)>,
    pub violations: Vec<MonotonicityViolation>,
}

/// Runs every cell in order, handing each record to `sink` as soon as it is
/// measured. Within a cell all ε values share one embedding batch.
pub fn run_bench(grid: &BenchGrid, mut sink: impl FnMut(&BenchRecord) -> Result<()>) -> Result<BenchSummary> {
    grid.validate()?;
    let cost = MultiwayCost::from_label(&grid.cost)?;
    let mut summary = BenchSummary::default();
    let mut rng = seeded_rng(grid.seed);
    for &n in &grid.ns {
        for &k in &grid.ks {
            if TensorShape::with_cap(k, n, grid.max_elements).is_err() {
                summary.skipped.push((n, k));
                continue;
            }
            let x = EmbeddingBatch::random_sphere(k, n, grid.d, &mut rng)?;
            let mut cell = Vec::with_capacity(grid.epsilons.len());
            for &eps in &grid.epsilons {
                let cfg = SolverConfig::new(eps)
                    .with_tolerance(grid.tolerance)
                    .with_max_iterations(grid.max_iterations);
                let start = Instant::now();
                let c = cost_tensor(&x, &cost)?;
                let report = mm_sinkhorn(&c, &cfg)?;
                let record = BenchRecord {
                    n,
                    k,
                    epsilon: eps,
                    iterations: report.iterations,
                    wall_time: start.elapsed().as_secs_f64(),
                    delta: report.marginal_deviation,
                    converged: report.converged,
                };
                sink(&record)?;
                cell.push(record);
            }
            summary.violations.extend(check_monotone(&cell));
            summary.records.extend(cell);
        }
    }
    Ok(summary)
}

/// Every pair with a smaller ε must need at least as many iterations.
fn check_monotone(cell: &[BenchRecord]) -> Vec<MonotonicityViolation> {
    let mut out = Vec::new();
    for a in cell {
        for b in cell.iter().filter(|b| b.epsilon > a.epsilon) {
            if a.iterations < b.iterations {
                out.push(MonotonicityViolation {
                    n: a.n,
                    k: a.k,
                    small_epsilon: a.epsilon,
                    small_iterations: a.iterations,
                    large_epsilon: b.epsilon,
                    large_iterations: b.iterations,
                });
            }
        }
    }
    out
}
