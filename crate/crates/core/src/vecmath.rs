//! Dense and sparse vectors, the TopK truncation operator and its contraction
//! constant.
//!
//! All arithmetic is `f64`. Vectors are values: operations return new vectors
//! and never mutate their inputs.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A fixed-length vector of finite `f64` coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DenseVector(Vec<f64>);

impl DenseVector {
    /// Wrap `values`, rejecting NaN and infinite entries.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "non-finite entry {} at index {i}",
                values[i]
            )));
        }
        Ok(DenseVector(values))
    }

    pub fn zeros(n: usize) -> Self {
        DenseVector(vec![0.0; n])
    }

    /// Crate-internal constructor for values produced by arithmetic on finite
    /// inputs. Finiteness of such results is checked where it can fail (the
    /// engine's divergence detection).
    pub(crate) fn from_raw(values: Vec<f64>) -> Self {
        DenseVector(values)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn norm2(&self) -> f64 {
        norm2(&self.0)
    }

    pub fn norm2_sq(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum()
    }

    pub fn norm1(&self) -> f64 {
        self.0.iter().map(|v| v.abs()).sum()
    }

    pub fn norm_inf(&self) -> f64 {
        self.0.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn dot(&self, other: &DenseVector) -> Result<f64> {
        Error::check_dim(self.len(), other.len())?;
        Ok(self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum())
    }

    pub fn add(&self, other: &DenseVector) -> Result<DenseVector> {
        Error::check_dim(self.len(), other.len())?;
        Ok(DenseVector(
            self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect(),
        ))
    }

    pub fn sub(&self, other: &DenseVector) -> Result<DenseVector> {
        Error::check_dim(self.len(), other.len())?;
        Ok(DenseVector(
            self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect(),
        ))
    }

    pub fn scale(&self, s: f64) -> DenseVector {
        DenseVector(self.0.iter().map(|v| v * s).collect())
    }

    /// `self + s * other`
    pub fn axpy(&self, s: f64, other: &DenseVector) -> Result<DenseVector> {
        Error::check_dim(self.len(), other.len())?;
        Ok(DenseVector(
            self.0.iter().zip(&other.0).map(|(a, b)| a + s * b).collect(),
        ))
    }

    /// Drop zeros and keep the rest as a sparse vector.
    pub fn sparsify(&self) -> SparseVector {
        let (indices, values) = self
            .0
            .iter()
            .enumerate()
            .filter(|(_, v)| **v != 0.0)
            .map(|(i, v)| (i, *v))
            .unzip();
        SparseVector {
            dim: self.len(),
            indices,
            values,
        }
    }
}

impl std::ops::Index<usize> for DenseVector {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

pub(crate) fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Sparse vector with strictly increasing indices and no stored zeros.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseVector {
    dim: usize,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl SparseVector {
    pub fn empty(dim: usize) -> Self {
        SparseVector {
            dim,
            indices: Vec::new(),
            values: Vec::new(),
        }
    }

    /// Build from `(index, value)` entries, validating the invariants.
    pub fn new(dim: usize, entries: Vec<(usize, f64)>) -> Result<Self> {
        let mut prev: Option<usize> = None;
        for &(i, v) in &entries {
            if i >= dim {
                return Err(Error::invalid(format!(
                    "index {i} out of range for dimension {dim}"
                )));
            }
            if prev.is_some_and(|p| i <= p) {
                return Err(Error::invalid("indices must be strictly increasing"));
            }
            if v == 0.0 || !v.is_finite() {
                return Err(Error::invalid(format!(
                    "entry at index {i} must be finite and nonzero, got {v}"
                )));
            }
            prev = Some(i);
        }
        let (indices, values) = entries.into_iter().unzip();
        Ok(SparseVector {
            dim,
            indices,
            values,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.indices.iter().copied().zip(self.values.iter().copied())
    }

    pub fn entries(&self) -> Vec<(usize, f64)> {
        self.iter().collect()
    }

    pub fn densify(&self) -> DenseVector {
        let mut out = vec![0.0; self.dim];
        for (i, v) in self.iter() {
            out[i] = v;
        }
        DenseVector(out)
    }
}

/// Contraction factor `sqrt((n - K) / n)` of the TopK residual.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaConstant {
    pub n: usize,
    pub k: usize,
    pub gamma: f64,
}

impl GammaConstant {
    pub fn new(n: usize, k: usize) -> Result<Self> {
        check_k(n, k)?;
        Ok(GammaConstant {
            n,
            k,
            gamma: ((n - k) as f64 / n as f64).sqrt(),
        })
    }
}

/// `sqrt((n - K) / n)`; panics-free shorthand for callers that already
/// validated `K`.
pub fn gamma(n: usize, k: usize) -> Result<f64> {
    GammaConstant::new(n, k).map(|g| g.gamma)
}

fn check_k(n: usize, k: usize) -> Result<()> {
    if k == 0 || k > n {
        return Err(Error::invalid(format!(
            "K must satisfy 1 <= K <= n (K = {k}, n = {n})"
        )));
    }
    Ok(())
}

/// Magnitude order with lower index first on ties. Total because indices are
/// unique, so partial selection and a full stable sort agree exactly.
fn by_magnitude(v: &[f64]) -> impl Fn(&usize, &usize) -> Ordering + '_ {
    move |&a, &b| {
        v[b].abs()
            .total_cmp(&v[a].abs())
            .then_with(|| a.cmp(&b))
    }
}

/// Indices of the `K` largest-magnitude nonzero entries, ascending.
fn top_k_indices(v: &[f64], k: usize) -> Vec<usize> {
    let mut candidates: Vec<usize> = (0..v.len()).filter(|&i| v[i] != 0.0).collect();
    if candidates.len() > k {
        candidates.select_nth_unstable_by(k - 1, by_magnitude(v));
        candidates.truncate(k);
    }
    candidates.sort_unstable();
    candidates
}

/// Keep the `K` entries of largest absolute value. Ties go to the lower
/// index; exact zeros are never emitted.
pub fn top_k(v: &DenseVector, k: usize) -> Result<SparseVector> {
    check_k(v.len(), k)?;
    let indices = top_k_indices(v.as_slice(), k);
    let values = indices.iter().map(|&i| v[i]).collect();
    Ok(SparseVector {
        dim: v.len(),
        indices,
        values,
    })
}

/// `v - densify(top_k(v, K))`
pub fn residual(v: &DenseVector, k: usize) -> Result<DenseVector> {
    split_top_k(v, k).map(|(_, r)| r)
}

/// `top_k` and `residual` in one pass.
pub fn split_top_k(v: &DenseVector, k: usize) -> Result<(SparseVector, DenseVector)> {
    let kept = top_k(v, k)?;
    let mut rest = v.0.clone();
    for &i in kept.indices() {
        rest[i] = 0.0;
    }
    Ok((kept, DenseVector(rest)))
}

/// `(1/P) * sum_p densify(update_p)`, accumulated in ascending node order so
/// the result does not depend on how the updates were produced.
pub fn aggregate_fixed_order(updates: &[SparseVector], p: usize) -> Result<DenseVector> {
    if p == 0 {
        return Err(Error::invalid("P must be at least 1"));
    }
    if updates.len() != p {
        return Err(Error::invalid(format!(
            "expected {p} updates, got {}",
            updates.len()
        )));
    }
    let dim = updates[0].dim();
    let mut sum = vec![0.0; dim];
    for u in updates {
        if u.dim() != dim {
            return Err(Error::invalid(format!(
                "mismatched ambient dimensions {dim} and {}",
                u.dim()
            )));
        }
        for (i, v) in u.iter() {
            sum[i] += v;
        }
    }
    let denom = p as f64;
    for s in &mut sum {
        *s /= denom;
    }
    Ok(DenseVector(sum))
}

/// Dense counterpart of [`aggregate_fixed_order`]: the ordered mean of dense
/// vectors, divided by `P` after summation.
pub fn mean_fixed_order(vectors: &[DenseVector]) -> Result<DenseVector> {
    let Some(first) = vectors.first() else {
        return Err(Error::invalid("cannot average an empty list"));
    };
    let mut sum = vec![0.0; first.len()];
    for v in vectors {
        Error::check_dim(first.len(), v.len())?;
        for (s, x) in sum.iter_mut().zip(v.as_slice()) {
            *s += x;
        }
    }
    let denom = vectors.len() as f64;
    for s in &mut sum {
        *s /= denom;
    }
    Ok(DenseVector(sum))
}
