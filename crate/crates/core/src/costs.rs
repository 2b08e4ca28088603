//! Multiway costs on k-tuples of unit vectors, and the operator that turns an
//! embedding batch into a cost tensor over all `n^k` tuples.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::embedding::{EmbeddingBatch, UNIT_NORM_TOLERANCE};
use crate::error::{Error, Result};
use crate::par;
use crate::tensor::{DenseTensor, TensorShape};

/// Floor applied to the squared resultant length before taking its log.
pub const CSD_CLAMP: f64 = 1e-12;

/// Constant in front of the pairwise-distance form of the circular variance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairScale {
    /// `1/k²`: the pairwise sum equals `1 − R²` exactly.
    #[default]
    Exact,
    /// `(2/(k−1))²`, a positive multiple of the exact cost for fixed `k`.
    Legacy,
}

impl PairScale {
    /// Factor applied to `Σ_{ℓ<m} ‖zℓ − z_m‖²`.
    pub fn pair_factor(self, k: usize) -> f64 {
        let k = k as f64;
        match self {
            PairScale::Exact => 1.0 / (k * k),
            PairScale::Legacy if k > 1.0 => (2.0 / (k - 1.0)).powi(2),
            PairScale::Legacy => 1.0,
        }
    }

    /// Ratio of this cost to `1 − R²`.
    pub fn multiplier(self, k: usize) -> f64 {
        self.pair_factor(k) * (k * k) as f64
    }
}

type EvalFn = dyn Fn(&[&[f64]]) -> f64 + Send + Sync;
type GradFn = dyn Fn(&[&[f64]], &mut [f64]) + Send + Sync;

/// User-supplied cost, evaluated tuple by tuple.
#[derive(Clone)]
pub struct CustomCost {
    label: String,
    eval: Arc<EvalFn>,
    grad: Option<Arc<GradFn>>,
}

impl CustomCost {
    pub fn new<F>(label: impl Into<String>, eval: F) -> Self
    where
        F: Fn(&[&[f64]]) -> f64 + Send + Sync + 'static,
    {
        Self {
            label: label.into(),
            eval: Arc::new(eval),
            grad: None,
        }
    }

    /// Adds a per-tuple gradient: the closure writes `∂c/∂z_ℓ` for every
    /// `ℓ` into a flat `k·d` buffer.
    pub fn with_gradient<G>(mut self, grad: G) -> Self
    where
        G: Fn(&[&[f64]], &mut [f64]) + Send + Sync + 'static,
    {
        self.grad = Some(Arc::new(grad));
        self
    }
}

#[derive(Clone)]
pub enum MultiwayCost {
    /// `1 − R²`, optionally rescaled (see [`PairScale`]).
    CircularVariance(PairScale),
    /// `−log R²`, with `R²` clamped below at [`CSD_CLAMP`].
    CircularStdDev,
    Custom(CustomCost),
}

impl fmt::Debug for MultiwayCost {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MultiwayCost::CircularVariance(s) => write!(f, "CircularVariance({s:?})"),
            MultiwayCost::CircularStdDev => f.write_str("CircularStdDev"),
            MultiwayCost::Custom(c) => write!(f, "Custom({})", c.label),
        }
    }
}

impl Default for MultiwayCost {
    fn default() -> Self {
        MultiwayCost::CircularVariance(PairScale::Exact)
    }
}

impl MultiwayCost {
    pub fn cv() -> Self {
        Self::default()
    }

    pub fn csd() -> Self {
        MultiwayCost::CircularStdDev
    }

    pub fn label(&self) -> &str {
        match self {
            MultiwayCost::CircularVariance(_) => "cv",
            MultiwayCost::CircularStdDev => "csd",
            MultiwayCost::Custom(c) => &c.label,
        }
    }

    /// Parses `cv` or `csd`.
    pub fn from_label(label: &str) -> Result<Self> {
        match label {
            "cv" => Ok(Self::cv()),
            "csd" => Ok(Self::csd()),
            other => Err(Error::param("cost", format!("expected cv or csd, got {other:?}"))),
        }
    }

    /// Cost of one tuple and whether the csd clamp was hit. Inputs are not
    /// validated here.
    pub fn evaluate(&self, tuple: &[&[f64]]) -> (f64, bool) {
        match self {
            MultiwayCost::CircularVariance(scale) => {
                (scale.multiplier(tuple.len()) * (1.0 - resultant_sq_raw(tuple)), false)
            }
            MultiwayCost::CircularStdDev => csd_raw(tuple),
            MultiwayCost::Custom(c) => ((c.eval)(tuple), false),
        }
    }

    pub fn has_gradient(&self) -> bool {
        match self {
            MultiwayCost::Custom(c) => c.grad.is_some(),
            _ => true,
        }
    }

    /// Writes `∂c/∂z_ℓ` for each `ℓ` into `out` (`k·d` entries). Returns
    /// false when the cost has no gradient evaluator.
    pub fn gradient(&self, tuple: &[&[f64]], out: &mut [f64]) -> bool {
        let k = tuple.len();
        let d = tuple.first().map_or(0, |z| z.len());
        match self {
            MultiwayCost::CircularVariance(scale) => {
                let coef = -2.0 * scale.multiplier(k) / (k * k) as f64;
                let sum = tuple_sum(tuple, d);
                for l in 0..k {
                    for (o, s) in out[l * d..(l + 1) * d].iter_mut().zip(&sum) {
                        *o = coef * s;
                    }
                }
                true
            }
            MultiwayCost::CircularStdDev => {
                let r2 = resultant_sq_raw(tuple);
                if r2 < CSD_CLAMP {
                    out.iter_mut().for_each(|o| *o = 0.0);
                } else {
                    let coef = -2.0 / ((k * k) as f64 * r2);
                    let sum = tuple_sum(tuple, d);
                    for l in 0..k {
                        for (o, s) in out[l * d..(l + 1) * d].iter_mut().zip(&sum) {
                            *o = coef * s;
                        }
                    }
                }
                true
            }
            MultiwayCost::Custom(c) => match &c.grad {
                Some(g) => {
                    g(tuple, out);
                    true
                }
                None => false,
            },
        }
    }
}

fn tuple_sum(tuple: &[&[f64]], d: usize) -> Vec<f64> {
    let mut sum = vec![0.0; d];
    for z in tuple {
        for (s, v) in sum.iter_mut().zip(z.iter()) {
            *s += v;
        }
    }
    sum
}

fn resultant_sq_raw(tuple: &[&[f64]]) -> f64 {
    let k = tuple.len() as f64;
    let d = tuple.first().map_or(0, |z| z.len());
    tuple_sum(tuple, d).iter().map(|s| (s / k).powi(2)).sum()
}

fn csd_raw(tuple: &[&[f64]]) -> (f64, bool) {
    let r2 = resultant_sq_raw(tuple);
    if r2 < CSD_CLAMP {
        (-CSD_CLAMP.ln(), true)
    } else {
        (-r2.ln(), false)
    }
}

fn validate_tuple(tuple: &[&[f64]]) -> Result<()> {
    let d = tuple
        .first()
        .map(|z| z.len())
        .ok_or_else(|| Error::Shape("empty tuple".into()))?;
    for (view, z) in tuple.iter().enumerate() {
        if z.len() != d {
            return Err(Error::ShapeMismatch("tuple vectors differ in dimension".into()));
        }
        let norm = z.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !norm.is_finite() || (norm - 1.0).abs() > UNIT_NORM_TOLERANCE {
            return Err(Error::NotUnitNorm { view, point: 0, norm });
        }
    }
    Ok(())
}

/// Squared resultant length `‖(1/k)Σ z_ℓ‖²` of unit vectors.
pub fn resultant_sq(tuple: &[&[f64]]) -> Result<f64> {
    validate_tuple(tuple)?;
    Ok(resultant_sq_raw(tuple))
}

/// Circular variance `1 − R²`.
pub fn c_cv(tuple: &[&[f64]]) -> Result<f64> {
    Ok(1.0 - resultant_sq(tuple)?)
}

/// Circular standard deviation `−log R²`; `R²` is clamped at [`CSD_CLAMP`].
pub fn c_csd(tuple: &[&[f64]]) -> Result<f64> {
    validate_tuple(tuple)?;
    Ok(csd_raw(tuple).0)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct CostDiagnostics {
    /// Tuples whose `R²` fell under the csd clamp.
    pub clamped_entries: usize,
}

/// `[c(x¹_{i₁}, …, xᵏ_{i_k})]` over all index tuples.
pub fn cost_tensor(x: &EmbeddingBatch, cost: &MultiwayCost) -> Result<DenseTensor> {
    Ok(cost_tensor_with_diagnostics(x, cost)?.0)
}

pub fn cost_tensor_with_diagnostics(
    x: &EmbeddingBatch,
    cost: &MultiwayCost,
) -> Result<(DenseTensor, CostDiagnostics)> {
    match cost {
        MultiwayCost::CircularVariance(scale) => {
            Ok((cv_fast(x, *scale)?, CostDiagnostics::default()))
        }
        _ => cost_tensor_generic(x, cost),
    }
}

/// Per-tuple evaluation, the reference path for every cost.
pub fn cost_tensor_generic(
    x: &EmbeddingBatch,
    cost: &MultiwayCost,
) -> Result<(DenseTensor, CostDiagnostics)> {
    let shape = TensorShape::new(x.k(), x.n())?;
    let (k, n) = (shape.k(), shape.n());
    let rows = par::map_range(shape.len() / n, shape.len() * k, |p| {
        let mut index = vec![0usize; k];
        shape.unravel(p * n, &mut index);
        let mut tuple: Vec<&[f64]> = (0..k).map(|v| x.row_slice(v, index[v])).collect();
        let mut out = Vec::with_capacity(n);
        let mut clamped = 0;
        for i in 0..n {
            tuple[k - 1] = x.row_slice(k - 1, i);
            let (c, hit) = cost.evaluate(&tuple);
            clamped += usize::from(hit);
            out.push(c);
        }
        (out, clamped)
    });
    let clamped_entries = rows.iter().map(|(_, c)| c).sum();
    let values = rows.into_iter().flat_map(|(v, _)| v).collect();
    let tensor = DenseTensor::from_vec(shape, values)
        .map_err(|e| Error::Numerical(format!("cost evaluation produced {e}")))?;
    Ok((tensor, CostDiagnostics { clamped_entries }))
}

/// Pairwise-distance path for the circular variance: precomputes
/// `D^{ℓm}[i, j] = 2 − 2⟨xℓ_i, x^m_j⟩` and accumulates its broadcast sum.
fn cv_fast(x: &EmbeddingBatch, scale: PairScale) -> Result<DenseTensor> {
    let shape = TensorShape::new(x.k(), x.n())?;
    let (k, n) = (shape.k(), shape.n());
    let factor = scale.pair_factor(k);

    let mut dist = vec![Vec::new(); k * k];
    for l in 0..k {
        for m in l + 1..k {
            let gram = x.view(l).dot(&x.view(m).t());
            dist[l * k + m] = gram.iter().map(|w| 2.0 - 2.0 * w).collect::<Vec<f64>>();
        }
    }

    let values = par::map_range(shape.len() / n, shape.len(), |p| {
        let mut index = vec![0usize; k];
        shape.unravel(p * n, &mut index);
        let mut head = 0.0;
        for l in 0..k.saturating_sub(1) {
            for m in l + 1..k - 1 {
                head += dist[l * k + m][index[l] * n + index[m]];
            }
        }
        let mut row = vec![head; n];
        for l in 0..k - 1 {
            let d = &dist[l * k + k - 1][index[l] * n..(index[l] + 1) * n];
            row.iter_mut().zip(d).for_each(|(r, v)| *r += v);
        }
        row.iter_mut().for_each(|r| *r *= factor);
        row
    })
    .into_iter()
    .flatten()
    .collect();
    Ok(DenseTensor::from_vec_unchecked(shape, values))
}
