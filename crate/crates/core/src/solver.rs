//! Entropic multi-marginal optimal transport with uniform marginals.
//!
//! [`mm_sinkhorn`] runs block-coordinate ascent on the dual: each sweep
//! recomputes every potential column in turn so that the corresponding
//! marginal of `exp((⊕F − C)/ε)` becomes exactly `𝟙/n`. All updates stay in
//! the log domain; the coupling is only materialized to measure the marginal
//! deviation and for the final report.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par;
use crate::sum::{pairwise_sum, PairwiseSum};
use crate::tensor::{
    lse_raw, marginal0, partial_tensor_sum, tensor_sum, DenseTensor, PotentialMatrix,
    TensorShape,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Entropic regularization, an absolute scale on the cost.
    pub epsilon: f64,
    /// Stop once the summed L1 marginal deviation drops below this.
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Sweeps between two marginal-deviation checks.
    pub check_every: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.2,
            tolerance: 1e-3,
            max_iterations: 1000,
            check_every: 1,
        }
    }
}

impl SolverConfig {
    pub fn new(epsilon: f64) -> Self {
        Self {
            epsilon,
            ..Self::default()
        }
    }

    pub fn with_tolerance(mut self, tolerance: f64) -> Self {
        self.tolerance = tolerance;
        self
    }

    pub fn with_max_iterations(mut self, max_iterations: usize) -> Self {
        self.max_iterations = max_iterations;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return Err(Error::param("epsilon", format!("must be > 0, got {}", self.epsilon)));
        }
        if !(self.tolerance.is_finite() && self.tolerance > 0.0) {
            return Err(Error::param(
                "tolerance",
                format!("must be > 0, got {}", self.tolerance),
            ));
        }
        if self.max_iterations == 0 {
            return Err(Error::param("max_iterations", "must be positive"));
        }
        if self.check_every == 0 {
            return Err(Error::param("check_every", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SolveReport {
    pub potentials: PotentialMatrix,
    /// `exp((⊕F − C)/ε)` at the returned potentials.
    pub coupling: DenseTensor,
    /// `(1/n)·𝟙ᵀF𝟙 − ε·Σ coupling`.
    pub ot_value: f64,
    pub iterations: usize,
    pub marginal_deviation: f64,
    pub converged: bool,
    pub epsilon: f64,
}

impl SolveReport {
    /// The coupling rescaled to unit total mass.
    pub fn normalized_coupling(&self) -> DenseTensor {
        let mass = self.coupling.sum();
        self.coupling.scale(1.0 / mass)
    }

    /// Entropic objective of the unit-mass coupling.
    pub fn normalized_primal(&self, cost: &DenseTensor) -> Result<f64> {
        primal_objective(&self.normalized_coupling(), cost, self.epsilon)
    }

    /// `|h(P̂) − dual(F)|`: the duality gap at the returned iterate.
    pub fn duality_gap(&self, cost: &DenseTensor) -> Result<f64> {
        let dual = dual_objective(&self.potentials, cost, self.epsilon)?;
        Ok((self.normalized_primal(cost)? - dual).abs())
    }
}

/// Solves the entropic multi-marginal problem for `cost`.
///
/// Non-convergence is not an error: the iterate with the smallest marginal
/// deviation is returned with `converged == false`.
pub fn mm_sinkhorn(cost: &DenseTensor, cfg: &SolverConfig) -> Result<SolveReport> {
    mm_sinkhorn_observed(cost, cfg, |_| {})
}

/// State handed to the observer after every deviation check.
#[derive(Debug, Clone, Copy)]
pub struct SweepState<'a> {
    pub iteration: usize,
    pub potentials: &'a PotentialMatrix,
    pub delta: f64,
}

/// [`mm_sinkhorn`] with a callback after every deviation check.
pub fn mm_sinkhorn_observed(
    cost: &DenseTensor,
    cfg: &SolverConfig,
    mut observe: impl FnMut(SweepState<'_>),
) -> Result<SolveReport> {
    cfg.validate()?;
    if let Some(index) = cost.values().iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { what: "cost", index });
    }
    let shape = cost.shape();
    let (n, k) = (shape.n(), shape.k());
    let eps = cfg.epsilon;
    let log_n = (n as f64).ln();

    let mut potentials = PotentialMatrix::zeros(n, k);
    let mut scratch = vec![0.0; shape.len()];
    let mut best: Option<(f64, usize, PotentialMatrix)> = None;
    let mut iterations = 0;
    let mut converged = false;

    while iterations < cfg.max_iterations {
        for axis0 in 0..k {
            let update = update_axis(cost, &potentials, axis0, eps, log_n);
            potentials
                .as_array_mut()
                .column_mut(axis0)
                .iter_mut()
                .zip(update)
                .for_each(|(f, u)| *f = u);
        }
        iterations += 1;

        let check = iterations % cfg.check_every == 0 || iterations == cfg.max_iterations;
        if !check {
            continue;
        }
        fill_coupling(cost, &potentials, eps, &mut scratch);
        let delta = deviation_raw(&shape, &scratch);
        if !delta.is_finite() {
            return Err(Error::Numerical(format!(
                "marginal deviation became {delta} after {iterations} sweeps"
            )));
        }
        observe(SweepState {
            iteration: iterations,
            potentials: &potentials,
            delta,
        });
        if best.as_ref().is_none_or(|(d, _, _)| delta < *d) {
            best = Some((delta, iterations, potentials.clone()));
        }
        if delta < cfg.tolerance {
            converged = true;
            break;
        }
    }

    let (delta, best_iter, potentials) = best.expect("at least one deviation check");
    if !converged {
        fill_coupling(cost, &potentials, eps, &mut scratch);
    }
    let coupling = DenseTensor::from_vec_unchecked(shape, scratch);
    let ot_value = potentials.total() / n as f64 - eps * coupling.sum();
    Ok(SolveReport {
        potentials,
        coupling,
        ot_value,
        iterations: if converged { iterations } else { best_iter },
        marginal_deviation: delta,
        converged,
        epsilon: eps,
    })
}

/// Exact maximizer of the dual over column `axis0` with the others fixed:
/// `f[j] = −ε(LSE_{others}((Σ_{m≠ℓ} fᵐ − C)/ε) + log n)`.
fn update_axis(
    cost: &DenseTensor,
    potentials: &PotentialMatrix,
    axis0: usize,
    eps: f64,
    log_n: f64,
) -> Vec<f64> {
    let shape = cost.shape();
    let k = shape.k();
    let stride = shape.stride0(axis0);
    let block = stride * shape.n();
    let outer = partial_tensor_sum(potentials, 0..axis0);
    let inner = partial_tensor_sum(potentials, axis0 + 1..k);
    let c = cost.values();
    let inv_eps = 1.0 / eps;

    par::map_range(shape.n(), shape.len(), |j| {
        // work in cost units: m = max(o + q − C), then Σ exp((· − m)/ε)
        let mut max = f64::NEG_INFINITY;
        for (o, &fo) in outer.iter().enumerate() {
            let row = &c[o * block + j * stride..o * block + j * stride + stride];
            for (&fq, &cv) in inner.iter().zip(row) {
                max = max.max(fo + fq - cv);
            }
        }
        let mut acc = PairwiseSum::new();
        for (o, &fo) in outer.iter().enumerate() {
            let row = &c[o * block + j * stride..o * block + j * stride + stride];
            let shift = fo - max;
            for (&fq, &cv) in inner.iter().zip(row) {
                acc.push(((shift + fq - cv) * inv_eps).exp());
            }
        }
        -(max + eps * acc.total().ln()) - eps * log_n
    })
}

/// Writes `exp((⊕F − C)/ε)` into `out`.
fn fill_coupling(cost: &DenseTensor, potentials: &PotentialMatrix, eps: f64, out: &mut [f64]) {
    let shape = cost.shape();
    let k = shape.k();
    let n = shape.n();
    let prefix = partial_tensor_sum(potentials, 0..k - 1);
    let last = potentials.as_array().column(k - 1).to_vec();
    let c = cost.values();
    let inv_eps = 1.0 / eps;
    // one chunk per prefix entry keeps the work split independent of threads
    let rows_per_chunk = (4096 / n).max(1);
    par::for_each_chunk_mut(out, rows_per_chunk * n, |chunk_idx, chunk| {
        let first_row = chunk_idx * rows_per_chunk;
        for (r, row) in chunk.chunks_mut(n).enumerate() {
            let p = first_row + r;
            let base = p * n;
            for (i, slot) in row.iter_mut().enumerate() {
                *slot = ((prefix[p] + last[i] - c[base + i]) * inv_eps).exp();
            }
        }
    });
}

fn deviation_raw(shape: &TensorShape, values: &[f64]) -> f64 {
    let target = 1.0 / shape.n() as f64;
    let per_axis: Vec<f64> = (0..shape.k())
        .map(|a| {
            let m = marginal0(shape, values, a);
            pairwise_sum(&m.iter().map(|v| (v - target).abs()).collect::<Vec<_>>())
        })
        .collect();
    pairwise_sum(&per_axis)
}

/// `Σ_ℓ ‖m_ℓ(P) − 𝟙/n‖₁`.
pub fn marginal_deviation(coupling: &DenseTensor) -> f64 {
    deviation_raw(&coupling.shape(), coupling.values())
}

fn check_compatible(potentials: &PotentialMatrix, cost: &DenseTensor) -> Result<()> {
    let s = cost.shape();
    if potentials.n() != s.n() || potentials.k() != s.k() {
        return Err(Error::ShapeMismatch(format!(
            "potentials are {}×{}, cost tensor has n={}, k={}",
            potentials.n(),
            potentials.k(),
            s.n(),
            s.k()
        )));
    }
    Ok(())
}

fn check_epsilon(eps: f64) -> Result<()> {
    if eps.is_finite() && eps > 0.0 {
        Ok(())
    } else {
        Err(Error::param("epsilon", format!("must be > 0, got {eps}")))
    }
}

fn log_kernel(potentials: &PotentialMatrix, cost: &DenseTensor, eps: f64) -> Result<Vec<f64>> {
    check_compatible(potentials, cost)?;
    check_epsilon(eps)?;
    let sum = tensor_sum(potentials)?;
    Ok(sum
        .values()
        .iter()
        .zip(cost.values())
        .map(|(s, c)| (s - c) / eps)
        .collect())
}

/// Dual objective `(1/n)·𝟙ᵀF𝟙 − ε·⟨exp((⊕F − C)/ε), 𝟙⟩`, with the
/// exponential mass evaluated as `exp(LSE)`.
pub fn dual_objective(potentials: &PotentialMatrix, cost: &DenseTensor, eps: f64) -> Result<f64> {
    let shape = cost.shape();
    let log_kernel = log_kernel(potentials, cost, eps)?;
    let axes: Vec<usize> = (1..=shape.k()).collect();
    let lse = lse_raw(&shape, &log_kernel, &axes)?[0];
    Ok(potentials.total() / shape.n() as f64 - eps * lse.exp())
}

/// Coupling `exp((⊕F − C)/ε)` recovered from dual potentials.
pub fn primal_from_dual(
    potentials: &PotentialMatrix,
    cost: &DenseTensor,
    eps: f64,
) -> Result<DenseTensor> {
    let values: Vec<f64> = log_kernel(potentials, cost, eps)?
        .into_iter()
        .map(f64::exp)
        .collect();
    DenseTensor::from_vec(cost.shape(), values)
        .map_err(|_| Error::Numerical("coupling overflowed".into()))
}

/// Entropic objective `h(P, C) = ⟨P, C⟩ + ε⟨P, log P − 1⟩` with `0·log 0 = 0`.
pub fn primal_objective(coupling: &DenseTensor, cost: &DenseTensor, eps: f64) -> Result<f64> {
    check_epsilon(eps)?;
    let transport = coupling.inner(cost)?;
    if let Some(index) = coupling.values().iter().position(|&p| p < 0.0) {
        return Err(Error::Numerical(format!(
            "negative coupling entry at flat index {index}"
        )));
    }
    let mut acc = PairwiseSum::new();
    for &p in coupling.values() {
        if p > 0.0 {
            acc.push(p * (p.ln() - 1.0));
        }
    }
    Ok(transport + eps * acc.total())
}
