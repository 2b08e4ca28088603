//! Pairwise contrastive losses (InfoNCE, BYOL), their multiview aggregations,
//! and the teacher EMA update. Each loss also has an analytic gradient so the
//! toy trainer can use any of them.

use ndarray::{Array2, Array3, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PairwiseLossKind {
    /// Anchors are rows of the first matrix; `symmetric` averages both
    /// directions.
    InfoNce { tau: f64, symmetric: bool },
    Byol,
}

impl PairwiseLossKind {
    pub fn infonce(tau: f64) -> Self {
        PairwiseLossKind::InfoNce {
            tau,
            symmetric: false,
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            PairwiseLossKind::InfoNce { tau, .. } if !(tau.is_finite() && tau > 0.0) => {
                Err(Error::param("tau", format!("must be > 0, got {tau}")))
            }
            _ => Ok(()),
        }
    }

    pub fn loss(&self, a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> Result<f64> {
        Ok(self.loss_and_grad(a, b)?.0)
    }

    /// Loss and gradients with respect to both inputs.
    pub fn loss_and_grad(
        &self,
        a: ArrayView2<'_, f64>,
        b: ArrayView2<'_, f64>,
    ) -> Result<(f64, Array2<f64>, Array2<f64>)> {
        self.validate()?;
        check_pair(a, b)?;
        match *self {
            PairwiseLossKind::Byol => Ok(byol_grad(a, b)),
            PairwiseLossKind::InfoNce { tau, symmetric: false } => Ok(infonce_grad(a, b, tau)),
            PairwiseLossKind::InfoNce { tau, symmetric: true } => {
                let (l1, ga1, gb1) = infonce_grad(a, b, tau);
                let (l2, gb2, ga2) = infonce_grad(b, a, tau);
                Ok((0.5 * (l1 + l2), 0.5 * (ga1 + ga2), 0.5 * (gb1 + gb2)))
            }
        }
    }
}

fn check_pair(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> Result<()> {
    if a.dim() != b.dim() || a.nrows() == 0 {
        return Err(Error::ShapeMismatch(format!(
            "pairwise loss inputs are {:?} and {:?}",
            a.dim(),
            b.dim()
        )));
    }
    Ok(())
}

/// `−(1/n) Σᵢ log softmax_j(⟨aᵢ, bⱼ⟩/τ)[i]`.
pub fn infonce(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>, tau: f64) -> Result<f64> {
    PairwiseLossKind::infonce(tau).loss(a, b)
}

/// `2 − (2/n) Σᵢ ⟨aᵢ, bᵢ⟩`.
pub fn byol(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> Result<f64> {
    PairwiseLossKind::Byol.loss(a, b)
}

fn infonce_grad(
    a: ArrayView2<'_, f64>,
    b: ArrayView2<'_, f64>,
    tau: f64,
) -> (f64, Array2<f64>, Array2<f64>) {
    let n = a.nrows();
    let logits = a.dot(&b.t()) / tau;
    let mut probs = Array2::zeros((n, n));
    let mut loss = 0.0;
    for (i, row) in logits.outer_iter().enumerate() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        loss += lse - row[i];
        for (j, v) in row.iter().enumerate() {
            probs[[i, j]] = (v - lse).exp();
        }
    }
    // dL/dlogits = (P − I)/n
    let mut w = probs;
    for i in 0..n {
        w[[i, i]] -= 1.0;
    }
    w /= n as f64 * tau;
    let ga = w.dot(&b);
    let gb = w.t().dot(&a);
    (loss / n as f64, ga, gb)
}

fn byol_grad(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> (f64, Array2<f64>, Array2<f64>) {
    let n = a.nrows() as f64;
    let dots: f64 = a.outer_iter().zip(b.outer_iter()).map(|(x, y)| x.dot(&y)).sum();
    let loss = 2.0 - 2.0 * dots / n;
    (loss, b.mapv(|v| -2.0 * v / n), a.mapv(|v| -2.0 * v / n))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregationKind {
    /// Average over all unordered view pairs.
    Pwe,
    /// Each view against the mean of the others.
    Ave,
}

/// `(2/(k(k−1))) Σ_{ℓ<m} L(Xℓ, X^m)` for a `k × n × d` array.
pub fn aggregate_pwe(x: &Array3<f64>, loss: PairwiseLossKind) -> Result<f64> {
    Ok(aggregate_pwe_grad(x, loss)?.0)
}

/// `(1/k) Σ_ℓ L(Xℓ, X̄^{−ℓ})`; the mean of the other views is used as is
/// unless `renormalize` projects its rows back onto the sphere.
pub fn aggregate_ave(x: &Array3<f64>, loss: PairwiseLossKind, renormalize: bool) -> Result<f64> {
    Ok(aggregate_ave_grad(x, loss, renormalize)?.0)
}

fn check_views(x: &Array3<f64>) -> Result<usize> {
    let k = x.dim().0;
    if k < 2 {
        return Err(Error::Shape(format!("multiview aggregation needs k ≥ 2, got {k}")));
    }
    Ok(k)
}

pub fn aggregate_pwe_grad(x: &Array3<f64>, loss: PairwiseLossKind) -> Result<(f64, Array3<f64>)> {
    let k = check_views(x)?;
    let weight = 2.0 / (k * (k - 1)) as f64;
    let mut grad = Array3::zeros(x.dim());
    let mut total = 0.0;
    for l in 0..k {
        for m in l + 1..k {
            let (v, ga, gb) = loss.loss_and_grad(x.index_axis(Axis(0), l), x.index_axis(Axis(0), m))?;
            total += v;
            grad.index_axis_mut(Axis(0), l).scaled_add(weight, &ga);
            grad.index_axis_mut(Axis(0), m).scaled_add(weight, &gb);
        }
    }
    Ok((weight * total, grad))
}

pub fn aggregate_ave_grad(
    x: &Array3<f64>,
    loss: PairwiseLossKind,
    renormalize: bool,
) -> Result<(f64, Array3<f64>)> {
    let k = check_views(x)?;
    let total_views = x.sum_axis(Axis(0));
    let mut grad = Array3::zeros(x.dim());
    let mut total = 0.0;
    for l in 0..k {
        let xl = x.index_axis(Axis(0), l);
        let raw_mean = (&total_views - &xl) / (k - 1) as f64;
        let (mean, norms) = if renormalize {
            let norms: Vec<f64> = raw_mean.outer_iter().map(|r| r.dot(&r).sqrt()).collect();
            let mut m = raw_mean.clone();
            for (mut row, &nrm) in m.outer_iter_mut().zip(&norms) {
                row /= nrm;
            }
            (m, Some(norms))
        } else {
            (raw_mean, None)
        };
        let (v, ga, mut gm) = loss.loss_and_grad(xl, mean.view())?;
        total += v;
        if let Some(norms) = norms {
            // through u = y/‖y‖: (I − u uᵀ) g / ‖y‖
            for ((mut g, u), nrm) in gm.outer_iter_mut().zip(mean.outer_iter()).zip(norms) {
                let radial = g.dot(&u);
                g.scaled_add(-radial, &u);
                g /= nrm;
            }
        }
        grad.index_axis_mut(Axis(0), l).scaled_add(1.0 / k as f64, &ga);
        let share = 1.0 / (k as f64 * (k - 1) as f64);
        for m in (0..k).filter(|&m| m != l) {
            grad.index_axis_mut(Axis(0), m).scaled_add(share, &gm);
        }
    }
    Ok((total / k as f64, grad))
}

/// Teacher tracking: `θ_t ← ρ·θ_t + (1−ρ)·θ_s`.
pub fn ema_update(teacher: &[f64], student: &[f64], rho: f64) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&rho) {
        return Err(Error::param("rho", format!("must lie in [0, 1], got {rho}")));
    }
    if teacher.len() != student.len() {
        return Err(Error::ShapeMismatch("teacher and student sizes differ".into()));
    }
    Ok(teacher
        .iter()
        .zip(student)
        .map(|(t, s)| rho * t + (1.0 - rho) * s)
        .collect())
}
