//! Dense parameter vectors and diagonal matrices.
//!
//! Both are thin newtypes over `Vec<f64>`. Arithmetic is written out
//! elementwise in index order so results are bit-reproducible.

use std::ops::Index;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Model parameters, gradients, and model deltas.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn new(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn filled(dim: usize, value: f64) -> Self {
        Self(vec![value; dim])
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

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn iter(&self) -> std::slice::Iter<'_, f64> {
        self.0.iter()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    /// Errors with `what` if any component is NaN or infinite.
    pub fn ensure_finite(&self, what: &'static str) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite(what))
        }
    }

    pub fn ensure_dim(&self, expected: usize) -> Result<()> {
        if self.len() == expected {
            Ok(())
        } else {
            Err(Error::DimensionMismatch {
                expected,
                got: self.len(),
            })
        }
    }

    pub fn sub(&self, other: &Self) -> Self {
        debug_assert_eq!(self.len(), other.len());
        Self(self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect())
    }

    pub fn add(&self, other: &Self) -> Self {
        debug_assert_eq!(self.len(), other.len());
        Self(self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect())
    }

    pub fn scale(&self, s: f64) -> Self {
        Self(self.0.iter().map(|a| a * s).collect())
    }

    /// `self += s * other`
    pub fn axpy(&mut self, s: f64, other: &Self) {
        debug_assert_eq!(self.len(), other.len());
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a += s * b;
        }
    }

    pub fn dot(&self, other: &Self) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum()
    }

    pub fn norm_sq(&self) -> f64 {
        self.dot(self)
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn dist_sq(&self, other: &Self) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    }

    pub fn dist(&self, other: &Self) -> f64 {
        self.dist_sq(other).sqrt()
    }

    pub fn to_dvector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.0)
    }

    pub fn from_dvector(v: &DVector<f64>) -> Self {
        Self(v.iter().copied().collect())
    }

    /// Mean of equally sized vectors, summed in input order.
    pub fn mean(vectors: &[ParamVector]) -> Result<Self> {
        let first = vectors.first().ok_or(Error::Empty("vector list"))?;
        let mut acc = ParamVector::zeros(first.len());
        for v in vectors {
            v.ensure_dim(first.len())?;
            acc.axpy(1.0, v);
        }
        Ok(acc.scale(1.0 / vectors.len() as f64))
    }
}

impl From<Vec<f64>> for ParamVector {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

impl Index<usize> for ParamVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// Diagonal matrix stored as its diagonal. Used for preconditioners and
/// correction matrices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DiagMatrix(Vec<f64>);

impl DiagMatrix {
    pub fn new(diag: Vec<f64>) -> Self {
        Self(diag)
    }

    pub fn identity(dim: usize) -> Self {
        Self(vec![1.0; dim])
    }

    pub fn constant(dim: usize, value: f64) -> Self {
        Self(vec![value; dim])
    }

    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn diag(&self) -> &[f64] {
        &self.0
    }

    pub fn iter(&self) -> std::slice::Iter<'_, f64> {
        self.0.iter()
    }

    pub fn mul_vec(&self, v: &ParamVector) -> ParamVector {
        debug_assert_eq!(self.len(), v.len());
        ParamVector(self.0.iter().zip(v.iter()).map(|(d, x)| d * x).collect())
    }

    /// `D^{-1} v`, computed as an elementwise division.
    pub fn solve_vec(&self, v: &ParamVector) -> ParamVector {
        debug_assert_eq!(self.len(), v.len());
        ParamVector(self.0.iter().zip(v.iter()).map(|(d, x)| x / d).collect())
    }

    pub fn inverse(&self) -> Self {
        Self(self.0.iter().map(|d| 1.0 / d).collect())
    }

    pub fn scale(&self, s: f64) -> Self {
        Self(self.0.iter().map(|d| d * s).collect())
    }

    pub fn ensure_dim(&self, expected: usize) -> Result<()> {
        if self.len() == expected {
            Ok(())
        } else {
            Err(Error::DimensionMismatch {
                expected,
                got: self.len(),
            })
        }
    }

    pub fn is_positive(&self) -> bool {
        self.0.iter().all(|&d| d > 0.0 && d.is_finite())
    }

    pub fn to_dmatrix(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_column_slice(&self.0))
    }
}

impl From<Vec<f64>> for DiagMatrix {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

impl Index<usize> for DiagMatrix {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

/// Largest singular value of `m` by power iteration on `mᵀm`.
pub fn spectral_norm(m: &DMatrix<f64>, tol: f64, max_iter: usize) -> f64 {
    let n = m.ncols();
    if n == 0 {
        return 0.0;
    }
    let gram = m.transpose() * m;
    // A start vector with no special symmetry; all-ones can be orthogonal to
    // the top eigenvector of structured matrices.
    let mut v = DVector::from_fn(n, |i, _| 1.0 + 0.1 * (i as f64 + 1.0).sqrt());
    v /= v.norm();
    let mut lambda = 0.0;
    for _ in 0..max_iter {
        let w = &gram * &v;
        let norm = w.norm();
        if norm == 0.0 {
            return 0.0;
        }
        let next = v.dot(&w);
        v = w / norm;
        if (next - lambda).abs() <= tol * next.abs().max(1e-300) {
            lambda = next;
            break;
        }
        lambda = next;
    }
    lambda.max(0.0).sqrt()
}
