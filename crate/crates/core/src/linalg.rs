//! Dense vectors and matrices, plus the limited-memory inverse-Jacobian
//! operator shared by the Broyden solver and the GDEQ backward strategy.

use std::collections::VecDeque;
use std::ops::{Index, IndexMut};

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

/// Default number of rank-one pairs kept by [`LimitedMemoryInverse`].
pub const DEFAULT_MEMORY: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Vector(Vec<f64>);

impl Vector {
    pub fn zeros(dim: usize) -> Self {
        Vector(vec![0.0; dim])
    }

    pub fn from_fn(dim: usize, f: impl FnMut(usize) -> f64) -> Self {
        Vector((0..dim).map(f).collect())
    }

    pub fn dim(&self) -> usize {
        self.0.len()
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

    pub fn dot(&self, other: &Vector) -> f64 {
        debug_assert_eq!(self.dim(), other.dim());
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum()
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn scaled(&self, alpha: f64) -> Vector {
        Vector(self.0.iter().map(|v| alpha * v).collect())
    }

    pub fn add(&self, other: &Vector) -> Vector {
        debug_assert_eq!(self.dim(), other.dim());
        Vector(self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect())
    }

    pub fn sub(&self, other: &Vector) -> Vector {
        debug_assert_eq!(self.dim(), other.dim());
        Vector(self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect())
    }

    pub fn hadamard(&self, other: &Vector) -> Vector {
        debug_assert_eq!(self.dim(), other.dim());
        Vector(self.0.iter().zip(&other.0).map(|(a, b)| a * b).collect())
    }

    /// `self += alpha * x`
    pub fn axpy(&mut self, alpha: f64, x: &Vector) {
        debug_assert_eq!(self.dim(), x.dim());
        for (s, v) in self.0.iter_mut().zip(&x.0) {
            *s += alpha * v;
        }
    }

    /// Index of the largest entry; ties resolve to the lowest index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &v) in self.0.iter().enumerate() {
            if v > self.0[best] {
                best = i;
            }
        }
        best
    }
}

impl From<Vec<f64>> for Vector {
    fn from(v: Vec<f64>) -> Self {
        Vector(v)
    }
}

impl Index<usize> for Vector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl IndexMut<usize> for Vector {
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        &mut self.0[i]
    }
}

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMatrix")]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

#[derive(Deserialize)]
struct RawMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl TryFrom<RawMatrix> for Matrix {
    type Error = Error;

    fn try_from(raw: RawMatrix) -> Result<Self> {
        Matrix::from_row_major(raw.rows, raw.cols, raw.data)
    }
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        Matrix::from_fn(n, n, |i, j| if i == j { 1.0 } else { 0.0 })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Matrix { rows, cols, data }
    }

    pub fn from_row_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        check_dim("Matrix::from_row_major", rows * cols, data.len())?;
        Ok(Matrix { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn scale_in_place(&mut self, alpha: f64) {
        self.data.iter_mut().for_each(|v| *v *= alpha);
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    /// `self · x`
    pub fn matvec(&self, x: &Vector) -> Result<Vector> {
        check_dim("Matrix::matvec", self.cols, x.dim())?;
        Ok(Vector::from_fn(self.rows, |i| {
            self.row(i).iter().zip(x.iter()).map(|(a, b)| a * b).sum()
        }))
    }

    /// `selfᵀ · x`
    pub fn matvec_transpose(&self, x: &Vector) -> Result<Vector> {
        check_dim("Matrix::matvec_transpose", self.rows, x.dim())?;
        let mut out = vec![0.0; self.cols];
        for (i, &xi) in x.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            for (o, a) in out.iter_mut().zip(self.row(i)) {
                *o += a * xi;
            }
        }
        Ok(Vector::from(out))
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        check_dim("Matrix::matmul", self.cols, other.rows)?;
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                for j in 0..other.cols {
                    out[(i, j)] += a * other[(k, j)];
                }
            }
        }
        Ok(out)
    }

    /// Outer product `a bᵀ`.
    pub fn outer(a: &Vector, b: &Vector) -> Matrix {
        Matrix::from_fn(a.dim(), b.dim(), |i, j| a[i] * b[j])
    }

    /// `self += alpha * a bᵀ`
    pub fn add_outer(&mut self, alpha: f64, a: &Vector, b: &Vector) {
        debug_assert_eq!(self.rows, a.dim());
        debug_assert_eq!(self.cols, b.dim());
        for i in 0..self.rows {
            let ai = alpha * a[i];
            if ai == 0.0 {
                continue;
            }
            let row = &mut self.data[i * self.cols..(i + 1) * self.cols];
            for (r, bj) in row.iter_mut().zip(b.iter()) {
                *r += ai * bj;
            }
        }
    }

    /// `self += alpha * other`
    pub fn axpy(&mut self, alpha: f64, other: &Matrix) {
        debug_assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        for (s, o) in self.data.iter_mut().zip(&other.data) {
            *s += alpha * o;
        }
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

/// Inverse-Jacobian approximation `B⁻¹ = −I + Σ uᵢ vᵢᵀ` stored as at most
/// `capacity` rank-one pairs. Pushing past capacity evicts the oldest pair.
#[derive(Debug, Clone, PartialEq)]
pub struct LimitedMemoryInverse {
    dim: usize,
    capacity: usize,
    pairs: VecDeque<(Vector, Vector)>,
}

impl LimitedMemoryInverse {
    /// The operator `−I` on `dim`-dimensional vectors. A zero capacity is
    /// bumped to one.
    pub fn new(dim: usize, capacity: usize) -> Self {
        let capacity = capacity.max(1);
        LimitedMemoryInverse {
            dim,
            capacity,
            pairs: VecDeque::with_capacity(capacity),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Stored pairs, oldest first.
    pub fn pairs(&self) -> impl Iterator<Item = (&Vector, &Vector)> {
        self.pairs.iter().map(|(u, v)| (u, v))
    }

    /// `B⁻¹ w = −w + Σ uᵢ (vᵢᵀ w)`
    pub fn apply(&self, w: &Vector) -> Result<Vector> {
        check_dim("LimitedMemoryInverse::apply", self.dim, w.dim())?;
        let mut out = w.scaled(-1.0);
        for (u, v) in &self.pairs {
            out.axpy(v.dot(w), u);
        }
        Ok(out)
    }

    /// `(B⁻¹)ᵀ w = −w + Σ vᵢ (uᵢᵀ w)`
    pub fn apply_transpose(&self, w: &Vector) -> Result<Vector> {
        check_dim("LimitedMemoryInverse::apply_transpose", self.dim, w.dim())?;
        let mut out = w.scaled(-1.0);
        for (u, v) in &self.pairs {
            out.axpy(u.dot(w), v);
        }
        Ok(out)
    }

    /// Appends the rank-one term `u vᵀ`, discarding the oldest pair when full.
    pub fn push(&mut self, u: Vector, v: Vector) -> Result<()> {
        check_dim("LimitedMemoryInverse::push (u)", self.dim, u.dim())?;
        check_dim("LimitedMemoryInverse::push (v)", self.dim, v.dim())?;
        if self.pairs.len() == self.capacity {
            self.pairs.pop_front();
        }
        self.pairs.push_back((u, v));
        Ok(())
    }

    /// Materializes the operator. Only meant for small-dimension diagnostics.
    pub fn to_dense(&self) -> Matrix {
        let mut m = Matrix::identity(self.dim);
        m.scale_in_place(-1.0);
        for (u, v) in &self.pairs {
            m.add_outer(1.0, u, v);
        }
        m
    }
}

/// Relative closeness with an absolute floor: `|a − b| ≤ rel · max(|a|, |b|, floor)`.
pub fn approx_eq(a: f64, b: f64, rel: f64, floor: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs()).max(floor)
}

/// Norm-wise relative error `‖a − b‖ / max(‖b‖, floor)`.
pub fn relative_error(a: &Vector, b: &Vector, floor: f64) -> f64 {
    a.sub(b).norm() / b.norm().max(floor)
}

/// Cosine of the angle between two equal-length slices, `None` when either
/// has zero norm.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Option<f64> {
    debug_assert_eq!(a.len(), b.len());
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na2: f64 = a.iter().map(|x| x * x).sum();
    let nb2: f64 = b.iter().map(|x| x * x).sum();
    if na2 == 0.0 || nb2 == 0.0 {
        None
    } else {
        // sqrt(s²) == s exactly, so identical inputs give exactly 1
        Some((dot / (na2 * nb2).sqrt()).clamp(-1.0, 1.0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn raw_matrix_with_wrong_length_is_rejected() {
        let bad = RawMatrix {
            rows: 2,
            cols: 2,
            data: vec![1.0; 3],
        };
        assert!(Matrix::try_from(bad).is_err());
        let ok = RawMatrix {
            rows: 1,
            cols: 2,
            data: vec![1.0, 2.0],
        };
        assert_eq!(Matrix::try_from(ok).unwrap()[(0, 1)], 2.0);
    }

    fn e(dim: usize, i: usize) -> Vector {
        Vector::from_fn(dim, |j| if i == j { 1.0 } else { 0.0 })
    }

    fn v(xs: &[f64]) -> Vector {
        Vector::from(xs.to_vec())
    }

    #[test]
    fn empty_operator_is_negative_identity() {
        let op = LimitedMemoryInverse::new(2, 4);
        assert_eq!(op.apply(&v(&[3.0, -1.0])).unwrap(), v(&[-3.0, 1.0]));
        assert_eq!(
            op.apply_transpose(&v(&[3.0, -1.0])).unwrap(),
            v(&[-3.0, 1.0])
        );
    }

    #[test]
    fn single_basis_pair() {
        let mut op = LimitedMemoryInverse::new(2, 4);
        op.push(e(2, 0), e(2, 0)).unwrap();
        assert_eq!(op.apply(&v(&[3.0, -1.0])).unwrap(), v(&[0.0, 1.0]));
    }

    #[test]
    fn symmetric_pair_transpose_matches_apply() {
        let mut op = LimitedMemoryInverse::new(3, 4);
        let u = v(&[0.3, -1.2, 2.0]);
        op.push(u.clone(), u).unwrap();
        let w = v(&[1.0, 0.5, -0.25]);
        assert_eq!(op.apply(&w).unwrap(), op.apply_transpose(&w).unwrap());
    }

    #[test]
    fn eviction_keeps_newest_in_order() {
        let mut op = LimitedMemoryInverse::new(1, 2);
        for k in 1..=3 {
            op.push(v(&[k as f64]), v(&[10.0 * k as f64])).unwrap();
        }
        let stored: Vec<(f64, f64)> = op.pairs().map(|(u, w)| (u[0], w[0])).collect();
        assert_eq!(stored, vec![(2.0, 20.0), (3.0, 30.0)]);
    }

    #[test]
    fn below_capacity_retains_everything() {
        let mut op = LimitedMemoryInverse::new(1, 32);
        op.push(v(&[1.0]), v(&[1.0])).unwrap();
        assert_eq!(op.len(), 1);
        for k in 1..10 {
            op.push(v(&[k as f64 + 1.0]), v(&[0.0])).unwrap();
        }
        let us: Vec<f64> = op.pairs().map(|(u, _)| u[0]).collect();
        assert_eq!(us, (1..=10).map(|k| k as f64).collect::<Vec<_>>());
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let mut op = LimitedMemoryInverse::new(3, 2);
        assert!(op.apply(&v(&[1.0])).is_err());
        assert!(op.apply_transpose(&v(&[1.0, 2.0])).is_err());
        assert!(op.push(v(&[1.0, 2.0, 3.0]), v(&[1.0])).is_err());
        assert!(op.is_empty());
    }

    #[test]
    fn matrix_products() {
        let m = Matrix::from_row_major(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_eq!(m.matvec(&v(&[1.0, 0.0, -1.0])).unwrap(), v(&[-2.0, -2.0]));
        assert_eq!(
            m.matvec_transpose(&v(&[1.0, 1.0])).unwrap(),
            v(&[5.0, 7.0, 9.0])
        );
        assert!(m.matvec(&v(&[1.0])).is_err());
        assert_eq!(m.transpose().transpose(), m);
    }

    #[test]
    fn argmax_prefers_lower_index_on_ties() {
        assert_eq!(v(&[1.0, 1.0]).argmax(), 0);
        assert_eq!(v(&[0.0, 2.0, 2.0]).argmax(), 1);
    }

    #[test]
    fn cosine_edge_cases() {
        assert_eq!(cosine_similarity(&[1.0, 2.0], &[1.0, 2.0]), Some(1.0));
        assert_eq!(
            cosine_similarity(&[0.3, -2.7, 1e-3], &[0.3, -2.7, 1e-3]),
            Some(1.0)
        );
        assert_eq!(cosine_similarity(&[1.0, 2.0], &[-1.0, -2.0]), Some(-1.0));
        assert_eq!(cosine_similarity(&[0.0, 0.0], &[1.0, 2.0]), None);
    }

    fn operator_strategy() -> impl Strategy<Value = (LimitedMemoryInverse, Vector, Vector)> {
        (1usize..=8, 0usize..=6, 1usize..=5).prop_flat_map(|(dim, n_pairs, cap)| {
            let vecs = proptest::collection::vec(
                proptest::collection::vec(-3.0f64..3.0, dim),
                2 * n_pairs + 2,
            );
            vecs.prop_map(move |raw| {
                let mut op = LimitedMemoryInverse::new(dim, cap);
                for k in 0..n_pairs {
                    op.push(raw[2 * k].clone().into(), raw[2 * k + 1].clone().into())
                        .unwrap();
                }
                let w1 = Vector::from(raw[2 * n_pairs].clone());
                let w2 = Vector::from(raw[2 * n_pairs + 1].clone());
                (op, w1, w2)
            })
        })
    }

    proptest! {
        #[test]
        fn capacity_is_never_exceeded((op, _, _) in operator_strategy()) {
            prop_assert!(op.len() <= op.capacity());
        }

        #[test]
        fn apply_is_linear((op, w1, w2) in operator_strategy(), a in -2.0f64..2.0, b in -2.0f64..2.0) {
            let mut comb = w1.scaled(a);
            comb.axpy(b, &w2);
            let lhs = op.apply(&comb).unwrap();
            let mut rhs = op.apply(&w1).unwrap().scaled(a);
            rhs.axpy(b, &op.apply(&w2).unwrap());
            let scale = lhs.norm().max(rhs.norm()).max(1e-12);
            prop_assert!(lhs.sub(&rhs).norm() <= 1e-12 * scale);
        }

        #[test]
        fn transpose_is_adjoint((op, w1, w2) in operator_strategy()) {
            let lhs = op.apply_transpose(&w1).unwrap().dot(&w2);
            let rhs = w1.dot(&op.apply(&w2).unwrap());
            let scale = w1.norm() * w2.norm() * (1.0 + op.len() as f64);
            prop_assert!((lhs - rhs).abs() <= 1e-12 * scale.max(1e-12));
        }
    }
}
