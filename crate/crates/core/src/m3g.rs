//! The multi-marginal matching gap: how much worse the ground-truth
//! polymatching scores than the entropic optimum, and its gradient.
//!
//! The loss is `h(𝒥, C) − h(𝒫̂, C)` where `h(P, C) = ⟨P, C⟩ + ε⟨P, log P − 1⟩`,
//! `𝒥` is the diagonal matching with weight `1/n`, and `𝒫̂` is the solver's
//! coupling rescaled to unit mass. The gradient never differentiates through
//! solver sweeps: it contracts `𝒥 − 𝒫̂` against the cost's partial
//! derivatives.

use ndarray::{Array2, Array3, ArrayView2, Axis};
use serde::Serialize;

use crate::costs::{cost_tensor_with_diagnostics, MultiwayCost, PairScale};
use crate::embedding::{EmbeddingBatch, GradientBatch, UNIT_NORM_TOLERANCE};
use crate::error::{Error, Result};
use crate::par;
use crate::solver::{mm_sinkhorn, primal_objective, SolveReport, SolverConfig};
use crate::tensor::{DenseTensor, TensorShape};

/// Implicit diagonal tensor with weight `1/n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GroundTruthMatching {
    shape: TensorShape,
}

impl GroundTruthMatching {
    pub fn new(shape: TensorShape) -> Self {
        Self { shape }
    }

    /// `⟨𝒥, C⟩ = (1/n) Σᵢ C[i, …, i]` in O(n).
    pub fn inner(&self, cost: &DenseTensor) -> Result<f64> {
        if cost.shape() != self.shape {
            return Err(Error::ShapeMismatch("cost tensor does not match matching".into()));
        }
        let diag = cost.diagonal();
        Ok(crate::sum::pairwise_sum(&diag) / self.shape.n() as f64)
    }

    /// `h(𝒥, C) = ⟨𝒥, C⟩ − ε(log n + 1)`.
    pub fn objective(&self, cost: &DenseTensor, eps: f64) -> Result<f64> {
        Ok(self.inner(cost)? - eps * ((self.shape.n() as f64).ln() + 1.0))
    }

    pub fn materialize(&self) -> DenseTensor {
        DenseTensor::ground_truth(self.shape)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct M3gDiagnostics {
    pub delta: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Cost tuples hitting the csd clamp.
    pub clamped_entries: usize,
    /// The gap computed with the solver's raw output value instead of the
    /// unit-mass primal.
    pub raw_gap: f64,
}

#[derive(Debug, Clone)]
pub struct M3gResult {
    pub loss: f64,
    /// `h(𝒥, C)`.
    pub ground_truth_cost: f64,
    /// Raw solver output value.
    pub ot_value: f64,
    /// `h(𝒫̂, C)` at the unit-mass coupling.
    pub primal_value: f64,
    /// Unit-mass coupling `𝒫̂`.
    pub coupling: DenseTensor,
    pub cost: DenseTensor,
    pub solver_report: SolveReport,
    pub diagnostics: M3gDiagnostics,
}

impl M3gResult {
    /// `max|C| + ε·k·log n`, the natural scale of loss errors.
    pub fn scale(&self) -> f64 {
        let s = self.cost.shape();
        self.cost.max_abs() + self.solver_report.epsilon * s.k() as f64 * (s.n() as f64).ln()
    }
}

pub fn m3g(x: &EmbeddingBatch, cost: &MultiwayCost, cfg: &SolverConfig) -> Result<M3gResult> {
    cfg.validate()?;
    let (c, cost_diag) = cost_tensor_with_diagnostics(x, cost)?;
    score_cost_tensor(c, cost_diag.clamped_entries, cfg)
}

fn score_cost_tensor(c: DenseTensor, clamped_entries: usize, cfg: &SolverConfig) -> Result<M3gResult> {
    let report = mm_sinkhorn(&c, cfg)?;
    let truth = GroundTruthMatching::new(c.shape());
    let ground_truth_cost = truth.objective(&c, cfg.epsilon)?;
    let coupling = report.normalized_coupling();
    let primal_value = primal_objective(&coupling, &c, cfg.epsilon)?;
    let loss = ground_truth_cost - primal_value;
    if !loss.is_finite() {
        return Err(Error::Numerical(format!("loss evaluated to {loss}")));
    }
    Ok(M3gResult {
        loss,
        ground_truth_cost,
        ot_value: report.ot_value,
        primal_value,
        coupling,
        cost: c,
        diagnostics: M3gDiagnostics {
            delta: report.marginal_deviation,
            iterations: report.iterations,
            converged: report.converged,
            clamped_entries,
            raw_gap: ground_truth_cost - report.ot_value,
        },
        solver_report: report,
    })
}

#[derive(Debug, Clone)]
pub struct M3gGradient {
    pub gradient: GradientBatch,
    pub result: M3gResult,
    /// Set when the solve did not converge.
    pub approximate: bool,
}

/// Sum of `T` over entries with index `i` on `axis_a` and `j` on `axis_b`
/// (1-based, distinct axes).
pub fn pairwise_marginal(t: &DenseTensor, axis_a: usize, axis_b: usize) -> Result<Array2<f64>> {
    t.pair_marginal(axis_a, axis_b)
}

/// Loss and gradient with respect to every embedding row.
pub fn m3g_gradient(x: &EmbeddingBatch, cost: &MultiwayCost, cfg: &SolverConfig) -> Result<M3gGradient> {
    if !cost.has_gradient() {
        return Err(Error::param(
            "cost",
            format!("cost {:?} has no gradient evaluator", cost.label()),
        ));
    }
    let result = m3g(x, cost, cfg)?;
    let t = GroundTruthMatching::new(result.coupling.shape())
        .materialize()
        .sub(&result.coupling)?;
    let grad = match cost {
        MultiwayCost::CircularVariance(scale) => cv_gradient(x, &t, *scale)?,
        _ => generic_gradient(x, &t, cost),
    };
    if let Some(index) = grad.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite { what: "gradient", index });
    }
    Ok(M3gGradient {
        gradient: GradientBatch(grad),
        approximate: !result.diagnostics.converged,
        result,
    })
}

/// `grad[ℓ][j] = −(2c/k²)(m_ℓ(T)[j]·xℓ_j + Σ_{m≠ℓ} (T^{ℓm} X^m)[j])`.
fn cv_gradient(x: &EmbeddingBatch, t: &DenseTensor, scale: PairScale) -> Result<Array3<f64>> {
    let (k, n, d) = (x.k(), x.n(), x.d());
    let coef = -2.0 * scale.multiplier(k) / (k * k) as f64;
    let mut grad = Array3::zeros((k, n, d));
    let mut pairs: Vec<Option<Array2<f64>>> = vec![None; k * k];
    for l in 0..k {
        for m in l + 1..k {
            pairs[l * k + m] = Some(t.pair_marginal(l + 1, m + 1)?);
        }
    }
    for l in 0..k {
        let marg = t.marginal(l + 1)?;
        let mut g = grad.index_axis_mut(Axis(0), l);
        for (j, mut row) in g.outer_iter_mut().enumerate() {
            row.scaled_add(marg[j], &x.row(l, j));
        }
        for m in 0..k {
            if m == l {
                continue;
            }
            let contrib = if l < m {
                pairs[l * k + m].as_ref().unwrap().dot(&x.view(m))
            } else {
                pairs[m * k + l].as_ref().unwrap().t().dot(&x.view(m))
            };
            g += &contrib;
        }
        g.mapv_inplace(|v| v * coef);
    }
    Ok(grad)
}

/// Contracts per-tuple partial derivatives against `T`, O(n^k·k·d).
fn generic_gradient(x: &EmbeddingBatch, t: &DenseTensor, cost: &MultiwayCost) -> Array3<f64> {
    let (k, n, d) = (x.k(), x.n(), x.d());
    let shape = t.shape();
    let block = shape.len() / n;
    // one partial accumulator per leading index keeps the summation order fixed
    let partials = par::map_range(n, shape.len() * k * d, |i0| {
        let mut acc = Array3::<f64>::zeros((k, n, d));
        let mut index = vec![0usize; k];
        let mut buf = vec![0.0; k * d];
        for flat in i0 * block..(i0 + 1) * block {
            let w = t.values()[flat];
            if w == 0.0 {
                continue;
            }
            shape.unravel(flat, &mut index);
            let tuple: Vec<&[f64]> = (0..k).map(|v| x.row_slice(v, index[v])).collect();
            cost.gradient(&tuple, &mut buf);
            for l in 0..k {
                let mut row = acc.slice_mut(ndarray::s![l, index[l], ..]);
                row.iter_mut()
                    .zip(&buf[l * d..(l + 1) * d])
                    .for_each(|(a, g)| *a += w * g);
            }
        }
        acc
    });
    partials
        .into_iter()
        .fold(Array3::zeros((k, n, d)), |acc, p| acc + p)
}

/// Two-view loss from the `n × n` cost matrix `¼‖x¹ᵢ − x²ⱼ‖²` directly.
/// Agrees with [`m3g`] on the stacked batch with the circular variance.
pub fn m3g_k2<'a>(x1: ArrayView2<'a, f64>, x2: ArrayView2<'a, f64>, cfg: &SolverConfig) -> Result<f64> {
    cfg.validate()?;
    if x1.dim() != x2.dim() {
        return Err(Error::ShapeMismatch(format!(
            "views are {:?} and {:?}",
            x1.dim(),
            x2.dim()
        )));
    }
    for (view, xs) in [x1, x2].into_iter().enumerate() {
        for (point, row) in xs.outer_iter().enumerate() {
            let norm = row.dot(&row).sqrt();
            if !norm.is_finite() || (norm - 1.0).abs() > UNIT_NORM_TOLERANCE {
                return Err(Error::NotUnitNorm { view, point, norm });
            }
        }
    }
    let n = x1.nrows();
    let shape = TensorShape::new(2, n)?;
    let gram = x1.dot(&x2.t());
    let values = gram.iter().map(|w| (2.0 - 2.0 * w) * 0.25).collect();
    let c = DenseTensor::from_vec(shape, values)?;
    Ok(score_cost_tensor(c, 0, cfg)?.loss)
}
