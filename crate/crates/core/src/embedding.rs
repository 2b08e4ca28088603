use ndarray::{Array2, Array3, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Allowed deviation of a row norm from 1.
pub const UNIT_NORM_TOLERANCE: f64 = 1e-6;

/// `k` views of `n` points in `d` dimensions, every row on the unit sphere.
///
/// Views and points are indexed from 0 here; the view index `v` corresponds
/// to tensor axis `v + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingBatch(Array3<f64>);

impl EmbeddingBatch {
    /// Validates shape, finiteness and unit norms. Rows are never silently
    /// renormalized; see [`EmbeddingBatch::normalized`] for that.
    pub fn new(values: Array3<f64>) -> Result<Self> {
        let (k, n, d) = values.dim();
        if k == 0 || n == 0 || d == 0 {
            return Err(Error::Shape(format!(
                "embedding batch needs positive k, n, d (got {k}×{n}×{d})"
            )));
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "embeddings",
                index,
            });
        }
        let values = values.as_standard_layout().into_owned();
        for view in 0..k {
            for point in 0..n {
                let norm = row_norm(values.slice(ndarray::s![view, point, ..]));
                if (norm - 1.0).abs() > UNIT_NORM_TOLERANCE {
                    return Err(Error::NotUnitNorm { view, point, norm });
                }
            }
        }
        Ok(Self(values))
    }

    /// Projects every row onto the unit sphere, then validates.
    pub fn normalized(mut values: Array3<f64>) -> Result<Self> {
        let (k, n, _) = values.dim();
        for view in 0..k {
            for point in 0..n {
                let mut row = values.slice_mut(ndarray::s![view, point, ..]);
                let norm = row_norm(row.view());
                if !(norm.is_finite() && norm > 0.0) {
                    return Err(Error::NotUnitNorm { view, point, norm });
                }
                row.mapv_inplace(|v| v / norm);
            }
        }
        Self::new(values)
    }

    pub fn from_views(views: &[Array2<f64>]) -> Result<Self> {
        let first = views
            .first()
            .ok_or_else(|| Error::Shape("no views given".into()))?;
        let (n, d) = first.dim();
        if views.iter().any(|v| v.dim() != (n, d)) {
            return Err(Error::ShapeMismatch("views differ in shape".into()));
        }
        let stacked = ndarray::stack(
            Axis(0),
            &views.iter().map(Array2::view).collect::<Vec<_>>(),
        )
        .map_err(|e| Error::ShapeMismatch(e.to_string()))?;
        Self::new(stacked)
    }

    /// Independent uniform points on the sphere.
    pub fn random_sphere<R: Rng + ?Sized>(k: usize, n: usize, d: usize, rng: &mut R) -> Result<Self> {
        let raw = Array3::from_shape_simple_fn((k, n, d), || rng.sample::<f64, _>(StandardNormal));
        Self::normalized(raw)
    }

    pub fn k(&self) -> usize {
        self.0.dim().0
    }

    pub fn n(&self) -> usize {
        self.0.dim().1
    }

    pub fn d(&self) -> usize {
        self.0.dim().2
    }

    pub fn as_array(&self) -> &Array3<f64> {
        &self.0
    }

    pub fn into_array(self) -> Array3<f64> {
        self.0
    }

    pub fn view(&self, v: usize) -> ArrayView2<'_, f64> {
        self.0.index_axis(Axis(0), v)
    }

    pub fn row(&self, v: usize, i: usize) -> ArrayView1<'_, f64> {
        self.0.slice(ndarray::s![v, i, ..])
    }

    /// Contiguous slice of one row.
    pub fn row_slice(&self, v: usize, i: usize) -> &[f64] {
        let d = self.d();
        let start = (v * self.n() + i) * d;
        &self.0.as_slice().expect("standard layout")[start..start + d]
    }

    /// Reorders views: new view `m` is old view `perm[m]`.
    pub fn permute_views(&self, perm: &[usize]) -> Result<Self> {
        check_perm(perm, self.k())?;
        Ok(Self(self.0.select(Axis(0), perm)))
    }

    /// Applies the same point relabeling to every view: new point `i` is old
    /// point `perm[i]`.
    pub fn permute_points(&self, perm: &[usize]) -> Result<Self> {
        check_perm(perm, self.n())?;
        Ok(Self(self.0.select(Axis(1), perm)))
    }
}

fn check_perm(perm: &[usize], len: usize) -> Result<()> {
    let mut seen = vec![false; len];
    if perm.len() != len || perm.iter().any(|&p| p >= len || std::mem::replace(&mut seen[p], true)) {
        return Err(Error::ShapeMismatch(format!(
            "{perm:?} is not a permutation of 0..{len}"
        )));
    }
    Ok(())
}

pub(crate) fn row_norm(row: ArrayView1<'_, f64>) -> f64 {
    row.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Gradient with respect to an [`EmbeddingBatch`], same `k × n × d` layout.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientBatch(pub Array3<f64>);

impl GradientBatch {
    pub fn as_array(&self) -> &Array3<f64> {
        &self.0
    }

    /// Removes the radial component of every row: `(I − x xᵀ) g`.
    pub fn tangent(&self, at: &EmbeddingBatch) -> Self {
        let mut g = self.0.clone();
        let (k, n, _) = g.dim();
        for v in 0..k {
            for i in 0..n {
                let x = at.row(v, i);
                let mut row = g.slice_mut(ndarray::s![v, i, ..]);
                let radial = row.dot(&x);
                row.scaled_add(-radial, &x);
            }
        }
        Self(g)
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}
