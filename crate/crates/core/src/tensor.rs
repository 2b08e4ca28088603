//! Dense k-way tensors with equal side length `n` on every axis.
//!
//! Storage is one flat row-major buffer: the first axis varies slowest. Axes
//! are numbered from 1 in the public API (axis `1..=k`); point indices along
//! an axis are ordinary 0-based offsets.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::par;
use crate::sum::{pairwise_sum, PairwiseSum};

/// Hard default cap on the number of tensor elements.
pub const DEFAULT_MAX_ELEMENTS: usize = 1 << 28;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TensorShape {
    k: usize,
    n: usize,
    len: usize,
}

impl TensorShape {
    pub fn new(k: usize, n: usize) -> Result<Self> {
        Self::with_cap(k, n, DEFAULT_MAX_ELEMENTS)
    }

    /// Like [`TensorShape::new`] with an explicit element cap.
    pub fn with_cap(k: usize, n: usize, cap: usize) -> Result<Self> {
        if k == 0 || n == 0 {
            return Err(Error::Shape(format!(
                "k and n must be positive (got k={k}, n={n})"
            )));
        }
        let len = u32::try_from(k)
            .ok()
            .and_then(|k| n.checked_pow(k))
            .filter(|&len| len <= cap)
            .ok_or(Error::SizeCap { n, k, cap })?;
        Ok(Self { k, n, len })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Total element count `n^k`.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Stride of a 0-based axis in the flat buffer.
    pub(crate) fn stride0(&self, axis0: usize) -> usize {
        self.n.pow((self.k - 1 - axis0) as u32)
    }

    /// Number of leading blocks before a 0-based axis.
    pub(crate) fn outer0(&self, axis0: usize) -> usize {
        self.n.pow(axis0 as u32)
    }

    /// Converts a 1-based axis into a 0-based one.
    pub fn axis0(&self, axis: usize) -> Result<usize> {
        if axis == 0 || axis > self.k {
            return Err(Error::Axis {
                axis,
                rank: self.k,
            });
        }
        Ok(axis - 1)
    }

    /// Flat offset of a multi-index (0-based point indices).
    pub fn linear_index(&self, index: &[usize]) -> Result<usize> {
        if index.len() != self.k {
            return Err(Error::ShapeMismatch(format!(
                "index of length {} for rank {}",
                index.len(),
                self.k
            )));
        }
        index.iter().try_fold(0usize, |acc, &i| {
            if i >= self.n {
                Err(Error::ShapeMismatch(format!(
                    "index {i} out of range for side length {}",
                    self.n
                )))
            } else {
                Ok(acc * self.n + i)
            }
        })
    }

    /// Inverse of [`TensorShape::linear_index`], written into `out`.
    pub fn unravel(&self, mut flat: usize, out: &mut [usize]) {
        for slot in out.iter_mut().rev() {
            *slot = flat % self.n;
            flat /= self.n;
        }
    }

    /// Flat offset of the diagonal entry `(i, i, ..., i)`.
    pub fn diagonal_offset(&self, i: usize) -> usize {
        // 1 + n + ... + n^(k-1)
        let step = (0..self.k).fold(0usize, |acc, _| acc * self.n + 1);
        i * step
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseTensor {
    shape: TensorShape,
    values: Vec<f64>,
}

impl DenseTensor {
    pub fn from_vec(shape: TensorShape, values: Vec<f64>) -> Result<Self> {
        if values.len() != shape.len() {
            return Err(Error::ShapeMismatch(format!(
                "buffer of length {} for shape n={}, k={} (needs {})",
                values.len(),
                shape.n(),
                shape.k(),
                shape.len()
            )));
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "tensor",
                index,
            });
        }
        Ok(Self { shape, values })
    }

    pub(crate) fn from_vec_unchecked(shape: TensorShape, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), shape.len());
        Self { shape, values }
    }

    pub fn filled(shape: TensorShape, value: f64) -> Result<Self> {
        Self::from_vec(shape, vec![value; shape.len()])
    }

    pub fn zeros(shape: TensorShape) -> Self {
        Self::from_vec_unchecked(shape, vec![0.0; shape.len()])
    }

    /// Builds a tensor by evaluating `f` on every multi-index.
    pub fn from_fn<F>(shape: TensorShape, f: F) -> Result<Self>
    where
        F: Fn(&[usize]) -> f64,
    {
        let mut index = vec![0usize; shape.k()];
        let mut values = Vec::with_capacity(shape.len());
        for flat in 0..shape.len() {
            shape.unravel(flat, &mut index);
            values.push(f(&index));
        }
        Self::from_vec(shape, values)
    }

    /// The ground-truth matching: `1/n` on the diagonal, zero elsewhere.
    pub fn ground_truth(shape: TensorShape) -> Self {
        let mut t = Self::zeros(shape);
        let w = 1.0 / shape.n() as f64;
        for i in 0..shape.n() {
            t.values[shape.diagonal_offset(i)] = w;
        }
        t
    }

    /// Every entry `1/n^k`.
    pub fn uniform(shape: TensorShape) -> Self {
        Self::from_vec_unchecked(shape, vec![1.0 / shape.len() as f64; shape.len()])
    }

    pub fn shape(&self) -> TensorShape {
        self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn get(&self, index: &[usize]) -> Result<f64> {
        Ok(self.values[self.shape.linear_index(index)?])
    }

    /// Entries `T[i, i, ..., i]` for `i in 0..n`.
    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.shape.n())
            .map(|i| self.values[self.shape.diagonal_offset(i)])
            .collect()
    }

    pub fn sum(&self) -> f64 {
        pairwise_sum(&self.values)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn map<F: Fn(f64) -> f64>(&self, f: F) -> Result<Self> {
        Self::from_vec(self.shape, self.values.iter().map(|&v| f(v)).collect())
    }

    /// Elementwise `self - other`.
    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.check_same_shape(other)?;
        let values = self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a - b)
            .collect();
        Ok(Self::from_vec_unchecked(self.shape, values))
    }

    /// Multiplies every entry by `factor`.
    pub fn scale(&self, factor: f64) -> Self {
        Self::from_vec_unchecked(self.shape, self.values.iter().map(|v| v * factor).collect())
    }

    fn check_same_shape(&self, other: &Self) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch(format!(
                "(n={}, k={}) vs (n={}, k={})",
                self.shape.n(),
                self.shape.k(),
                other.shape.n(),
                other.shape.k()
            )));
        }
        Ok(())
    }

    /// Sum over all axes except `axis` (1-based).
    pub fn marginal(&self, axis: usize) -> Result<Vec<f64>> {
        let a = self.shape.axis0(axis)?;
        Ok(marginal0(&self.shape, &self.values, a))
    }

    /// Sum over all axes except `axis_a` and `axis_b` (1-based, distinct).
    /// Entry `[i, j]` collects the entries whose `axis_a` index is `i` and
    /// whose `axis_b` index is `j`.
    pub fn pair_marginal(&self, axis_a: usize, axis_b: usize) -> Result<Array2<f64>> {
        let a = self.shape.axis0(axis_a)?;
        let b = self.shape.axis0(axis_b)?;
        if a == b {
            return Err(Error::ShapeMismatch(format!(
                "pair marginal needs two distinct axes, got {axis_a} twice"
            )));
        }
        let n = self.shape.n();
        let (sa, sb) = (self.shape.stride0(a), self.shape.stride0(b));
        let sums = par::map_range(n * n, self.shape.len(), |slot| {
            let (i, j) = (slot / n, slot % n);
            let base = i * sa + j * sb;
            let mut acc = PairwiseSum::new();
            for_each_offset(&self.shape, &[a, b], base, |off| acc.push(self.values[off]));
            acc.total()
        });
        Ok(Array2::from_shape_vec((n, n), sums).expect("n*n buffer"))
    }

    /// Stabilized log-sum-exp over the given 1-based axes.
    ///
    /// The result is laid out row-major over the remaining axes (in their
    /// original order). Reducing every axis yields a single value. Entries of
    /// `-inf` contribute zero mass; a slice made only of `-inf` reduces to
    /// `-inf`.
    pub fn lse(&self, axes: &[usize]) -> Result<Vec<f64>> {
        lse_raw(&self.shape, &self.values, axes)
    }

    /// Log-sum-exp over every entry.
    pub fn lse_all(&self) -> Result<f64> {
        let axes: Vec<usize> = (1..=self.shape.k()).collect();
        Ok(self.lse(&axes)?[0])
    }

    /// `Σ A·B` over all positions, pairwise summed.
    pub fn inner(&self, other: &Self) -> Result<f64> {
        self.check_same_shape(other)?;
        Ok(inner_raw(&self.values, &other.values))
    }

    /// Reorders axes so that new axis `m` is old axis `perm[m]` (both 1-based).
    pub fn permute_axes(&self, perm: &[usize]) -> Result<Self> {
        let k = self.shape.k();
        let mut seen = vec![false; k];
        if perm.len() != k {
            return Err(Error::ShapeMismatch(format!(
                "permutation of length {} for rank {k}",
                perm.len()
            )));
        }
        for &p in perm {
            let p0 = self.shape.axis0(p)?;
            if std::mem::replace(&mut seen[p0], true) {
                return Err(Error::ShapeMismatch(format!("axis {p} repeated")));
            }
        }
        let mut old = vec![0usize; k];
        let values = (0..self.shape.len())
            .scan(vec![0usize; k], |new_index, flat| {
                self.shape.unravel(flat, new_index);
                for (m, &p) in perm.iter().enumerate() {
                    old[p - 1] = new_index[m];
                }
                let src = old.iter().fold(0usize, |acc, &i| acc * self.shape.n() + i);
                Some(self.values[src])
            })
            .collect();
        Ok(Self::from_vec_unchecked(self.shape, values))
    }
}

/// n × k matrix of dual potentials; column `ℓ` is the potential of axis `ℓ`.
#[derive(Debug, Clone, PartialEq)]
pub struct PotentialMatrix(Array2<f64>);

impl PotentialMatrix {
    pub fn zeros(n: usize, k: usize) -> Self {
        Self(Array2::zeros((n, k)))
    }

    pub fn from_array(values: Array2<f64>) -> Result<Self> {
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "potentials",
                index,
            });
        }
        Ok(Self(values))
    }

    /// Builds from columns `f¹, …, fᵏ`.
    pub fn from_columns(columns: &[Vec<f64>]) -> Result<Self> {
        let k = columns.len();
        let n = columns.first().map_or(0, Vec::len);
        if k == 0 || n == 0 || columns.iter().any(|c| c.len() != n) {
            return Err(Error::ShapeMismatch(
                "potential columns must be non-empty and of equal length".into(),
            ));
        }
        let arr = Array2::from_shape_fn((n, k), |(i, l)| columns[l][i]);
        Self::from_array(arr)
    }

    pub fn n(&self) -> usize {
        self.0.nrows()
    }

    pub fn k(&self) -> usize {
        self.0.ncols()
    }

    pub fn as_array(&self) -> &Array2<f64> {
        &self.0
    }

    pub(crate) fn as_array_mut(&mut self) -> &mut Array2<f64> {
        &mut self.0
    }

    /// Column for a 1-based axis.
    pub fn column(&self, axis: usize) -> Result<Vec<f64>> {
        if axis == 0 || axis > self.k() {
            return Err(Error::Axis {
                axis,
                rank: self.k(),
            });
        }
        Ok(self.0.column(axis - 1).to_vec())
    }

    /// `𝟙ᵀ F 𝟙`.
    pub fn total(&self) -> f64 {
        crate::sum::pairwise_sum_iter(self.0.iter().copied())
    }

    /// Elementwise sum of two potential matrices.
    pub fn add(&self, other: &Self) -> Result<Self> {
        if self.0.dim() != other.0.dim() {
            return Err(Error::ShapeMismatch("potential matrices differ in shape".into()));
        }
        Ok(Self(&self.0 + &other.0))
    }
}

/// `[⊕F]_{i₁…i_k} = f¹[i₁] + … + fᵏ[i_k]`.
pub fn tensor_sum(potentials: &PotentialMatrix) -> Result<DenseTensor> {
    let shape = TensorShape::new(potentials.k(), potentials.n())?;
    let values = partial_tensor_sum(potentials, 0..potentials.k());
    Ok(DenseTensor::from_vec_unchecked(shape, values))
}

/// Row-major tensor sum over the 0-based axis range `axes` only.
pub(crate) fn partial_tensor_sum(
    potentials: &PotentialMatrix,
    axes: std::ops::Range<usize>,
) -> Vec<f64> {
    let f = potentials.as_array();
    let n = f.nrows();
    let mut acc = vec![0.0];
    for m in axes {
        let col = f.column(m);
        let mut next = Vec::with_capacity(acc.len() * n);
        for &prefix in &acc {
            next.extend(col.iter().map(|&v| prefix + v));
        }
        acc = next;
    }
    acc
}

/// Calls `visit` with the flat offset of every entry whose indices along
/// `fixed` axes (0-based) are already encoded in `base`.
pub(crate) fn for_each_offset<F: FnMut(usize)>(
    shape: &TensorShape,
    fixed: &[usize],
    base: usize,
    mut visit: F,
) {
    let free: Vec<usize> = (0..shape.k()).filter(|a| !fixed.contains(a)).collect();
    if free.is_empty() {
        visit(base);
        return;
    }
    let n = shape.n();
    let strides: Vec<usize> = free.iter().map(|&a| shape.stride0(a)).collect();
    let last = free.len() - 1;
    let inner_stride = strides[last];
    let mut counter = vec![0usize; free.len()];
    let mut offset = base;
    loop {
        for i in 0..n {
            visit(offset + i * inner_stride);
        }
        // advance the odometer over the remaining free axes
        let mut pos = last;
        loop {
            if pos == 0 {
                return;
            }
            pos -= 1;
            counter[pos] += 1;
            offset += strides[pos];
            if counter[pos] < n {
                break;
            }
            offset -= strides[pos] * n;
            counter[pos] = 0;
        }
    }
}

pub(crate) fn marginal0(shape: &TensorShape, values: &[f64], axis0: usize) -> Vec<f64> {
    let stride = shape.stride0(axis0);
    let outer = shape.outer0(axis0);
    let block = stride * shape.n();
    par::map_range(shape.n(), values.len(), |j| {
        let mut acc = PairwiseSum::new();
        for o in 0..outer {
            let start = o * block + j * stride;
            values[start..start + stride].iter().for_each(|&v| acc.push(v));
        }
        acc.total()
    })
}

pub(crate) fn inner_raw(a: &[f64], b: &[f64]) -> f64 {
    const CHUNK: usize = 1 << 16;
    let chunks = a.len().div_ceil(CHUNK);
    let partial = par::map_range(chunks, a.len(), |c| {
        let lo = c * CHUNK;
        let hi = (lo + CHUNK).min(a.len());
        let mut acc = PairwiseSum::new();
        a[lo..hi]
            .iter()
            .zip(&b[lo..hi])
            .for_each(|(x, y)| acc.push(x * y));
        acc.total()
    });
    pairwise_sum(&partial)
}

pub(crate) fn lse_raw(shape: &TensorShape, values: &[f64], axes: &[usize]) -> Result<Vec<f64>> {
    if axes.is_empty() {
        return Err(Error::ShapeMismatch("lse needs at least one axis".into()));
    }
    let mut reduced = Vec::with_capacity(axes.len());
    for &axis in axes {
        let a = shape.axis0(axis)?;
        if reduced.contains(&a) {
            return Err(Error::ShapeMismatch(format!("axis {axis} listed twice")));
        }
        reduced.push(a);
    }
    if let Some(index) = values.iter().position(|v| v.is_nan()) {
        return Err(Error::NonFinite {
            what: "lse input (NaN)",
            index,
        });
    }
    let kept: Vec<usize> = (0..shape.k()).filter(|a| !reduced.contains(a)).collect();
    let n = shape.n();
    let out_len = n.pow(kept.len() as u32);
    let kept_strides: Vec<usize> = kept.iter().map(|&a| shape.stride0(a)).collect();
    Ok(par::map_range(out_len, values.len(), |slot| {
        let mut rest = slot;
        let mut base = 0;
        for &s in kept_strides.iter().rev() {
            base += (rest % n) * s;
            rest /= n;
        }
        let mut max = f64::NEG_INFINITY;
        for_each_offset(shape, &kept, base, |off| max = max.max(values[off]));
        if max == f64::NEG_INFINITY {
            return f64::NEG_INFINITY;
        }
        if max == f64::INFINITY {
            return f64::INFINITY;
        }
        let mut acc = PairwiseSum::new();
        for_each_offset(shape, &kept, base, |off| acc.push((values[off] - max).exp()));
        max + acc.total().ln()
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn shape(k: usize, n: usize) -> TensorShape {
        TensorShape::new(k, n).unwrap()
    }

    #[test]
    fn shape_rejects_degenerate_and_oversized() {
        assert!(matches!(TensorShape::new(0, 3), Err(Error::Shape(_))));
        assert!(matches!(TensorShape::new(3, 0), Err(Error::Shape(_))));
        assert!(matches!(
            TensorShape::new(8, 16),
            Err(Error::SizeCap { n: 16, k: 8, .. })
        ));
        assert!(matches!(
            TensorShape::new(200, 1 << 20),
            Err(Error::SizeCap { .. })
        ));
        assert_eq!(TensorShape::new(7, 16).unwrap().len(), 1 << 28);
    }

    #[test]
    fn indexing_law_is_row_major() {
        let s = shape(3, 4);
        assert_eq!(s.linear_index(&[0, 0, 0]).unwrap(), 0);
        assert_eq!(s.linear_index(&[1, 2, 3]).unwrap(), 16 + 2 * 4 + 3);
        let mut idx = [0; 3];
        s.unravel(27, &mut idx);
        assert_eq!(idx, [1, 2, 3]);
        assert_eq!(s.diagonal_offset(2), s.linear_index(&[2, 2, 2]).unwrap());
        assert!(s.linear_index(&[0, 4, 0]).is_err());
    }

    #[test]
    fn non_finite_values_rejected() {
        let err = DenseTensor::from_vec(shape(2, 2), vec![0.0, f64::NAN, 1.0, 2.0]).unwrap_err();
        assert!(matches!(err, Error::NonFinite { index: 1, .. }));
        assert!(DenseTensor::from_vec(shape(2, 2), vec![0.0; 3]).is_err());
    }

    #[test]
    fn marginal_examples() {
        for (k, n) in [(2, 3), (3, 4), (4, 2)] {
            let s = shape(k, n);
            for axis in 1..=k {
                for t in [DenseTensor::uniform(s), DenseTensor::ground_truth(s)] {
                    for v in t.marginal(axis).unwrap() {
                        assert_abs_diff_eq!(v, 1.0 / n as f64, epsilon = 1e-15);
                    }
                }
            }
        }
        let p = DenseTensor::from_vec(shape(2, 2), vec![0.5, 0.0, 0.0, 0.5]).unwrap();
        assert_eq!(p.marginal(1).unwrap(), vec![0.5, 0.5]);
        assert!(matches!(p.marginal(3), Err(Error::Axis { axis: 3, rank: 2 })));
        assert!(matches!(p.marginal(0), Err(Error::Axis { .. })));
    }

    #[test]
    fn marginal_picks_the_right_axis() {
        let m = DenseTensor::from_vec(shape(2, 2), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(m.marginal(1).unwrap(), vec![3.0, 7.0]);
        assert_eq!(m.marginal(2).unwrap(), vec![4.0, 6.0]);
    }

    #[test]
    fn tensor_sum_examples() {
        let z = tensor_sum(&PotentialMatrix::zeros(3, 3)).unwrap();
        assert!(z.values().iter().all(|&v| v == 0.0));

        let f = PotentialMatrix::from_columns(&[vec![1.0, 2.0], vec![10.0, 20.0]]).unwrap();
        let t = tensor_sum(&f).unwrap();
        assert_eq!(t.values(), &[11.0, 21.0, 12.0, 22.0]);

        let f = PotentialMatrix::from_columns(&[vec![0.5], vec![-2.0], vec![4.0]]).unwrap();
        assert_eq!(tensor_sum(&f).unwrap().values(), &[2.5]);
    }

    #[test]
    fn lse_examples() {
        let z = DenseTensor::zeros(shape(2, 2));
        assert_abs_diff_eq!(z.lse(&[1, 2]).unwrap()[0], 4f64.ln(), epsilon = 1e-15);
        let z = DenseTensor::zeros(shape(3, 5));
        for v in z.lse(&[2]).unwrap() {
            assert_abs_diff_eq!(v, 5f64.ln(), epsilon = 1e-15);
        }
        assert_eq!(z.lse(&[2]).unwrap().len(), 25);
        assert!(z.lse(&[]).is_err());
        assert!(z.lse(&[4]).is_err());
        assert!(z.lse(&[1, 1]).is_err());
    }

    #[test]
    fn lse_keeps_remaining_axes_in_order() {
        // A[i, j] = i * 10 + j; reducing axis 1 leaves a vector indexed by j.
        let a = DenseTensor::from_fn(shape(2, 3), |ix| (ix[0] * 10 + ix[1]) as f64).unwrap();
        let by_col = a.lse(&[1]).unwrap();
        for (j, v) in by_col.iter().enumerate() {
            let naive = (0..3).map(|i| ((i * 10 + j) as f64).exp()).sum::<f64>().ln();
            assert_abs_diff_eq!(*v, naive, epsilon = 1e-12);
        }
    }

    #[test]
    fn lse_handles_negative_infinity_and_nan() {
        let s = shape(1, 3);
        let vals = [f64::NEG_INFINITY, 0.0, f64::NEG_INFINITY];
        assert_eq!(lse_raw(&s, &vals, &[1]).unwrap()[0], 0.0);
        let vals = [f64::NEG_INFINITY; 3];
        assert_eq!(lse_raw(&s, &vals, &[1]).unwrap()[0], f64::NEG_INFINITY);
        let vals = [0.0, f64::NAN, 1.0];
        assert!(lse_raw(&s, &vals, &[1]).is_err());
    }

    #[test]
    fn inner_examples() {
        let s = shape(3, 3);
        let c = DenseTensor::from_fn(s, |ix| (ix[0] + 2 * ix[1] + 3 * ix[2]) as f64).unwrap();
        let gt = DenseTensor::ground_truth(s);
        let expected = c.diagonal().iter().sum::<f64>() / 3.0;
        assert_abs_diff_eq!(gt.inner(&c).unwrap(), expected, epsilon = 1e-14);
        assert_eq!(DenseTensor::zeros(s).inner(&c).unwrap(), 0.0);

        let a = DenseTensor::from_vec(shape(2, 2), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = DenseTensor::from_vec(shape(2, 2), vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        assert_eq!(a.inner(&b).unwrap(), 5.0);
        assert!(a.inner(&c).is_err());
    }

    #[test]
    fn pair_marginal_rows_match_marginal() {
        let s = shape(3, 3);
        let t = DenseTensor::from_fn(s, |ix| (1 + ix[0] * 9 + ix[1] * 3 + ix[2]) as f64).unwrap();
        for (a, b) in [(1, 2), (2, 1), (1, 3), (3, 2)] {
            let pm = t.pair_marginal(a, b).unwrap();
            let m = t.marginal(a).unwrap();
            for (row, mi) in pm.outer_iter().zip(&m) {
                assert_abs_diff_eq!(row.sum(), *mi, epsilon = 1e-12);
            }
        }
        assert!(t.pair_marginal(2, 2).is_err());
    }

    #[test]
    fn permute_axes_moves_indices() {
        let s = shape(3, 2);
        let t = DenseTensor::from_fn(s, |ix| (ix[0] * 4 + ix[1] * 2 + ix[2]) as f64).unwrap();
        let p = t.permute_axes(&[3, 1, 2]).unwrap();
        // new[a, b, c] = old[b, c, a]
        assert_eq!(p.get(&[1, 0, 1]).unwrap(), t.get(&[0, 1, 1]).unwrap());
        assert!(t.permute_axes(&[1, 1, 2]).is_err());
    }
}
