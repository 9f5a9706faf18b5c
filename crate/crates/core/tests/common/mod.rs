//! Dense reference implementations shared by the integration tests.
#![allow(dead_code)]

use deq_core::{CellKind, CellParams, Matrix, Vector};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn to_na(m: &Matrix) -> DMatrix<f64> {
    DMatrix::from_row_slice(m.rows(), m.cols(), m.as_slice())
}

pub fn to_na_vec(v: &Vector) -> DVector<f64> {
    DVector::from_column_slice(v.as_slice())
}

pub fn from_na_vec(v: &DVector<f64>) -> Vector {
    Vector::from(v.iter().copied().collect::<Vec<_>>())
}

pub fn random_vector(dim: usize, rng: &mut impl Rng) -> Vector {
    Vector::from_fn(dim, |_| rng.random_range(-1.0..1.0))
}

pub fn random_matrix(rows: usize, cols: usize, rng: &mut impl Rng) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

pub fn sigma_max(m: &Matrix) -> f64 {
    to_na(m).singular_values().max()
}

/// Random cell whose `W` has exact spectral norm `gamma` (rescaled via SVD).
pub fn contractive_cell(
    kind: CellKind,
    d_z: usize,
    d_x: usize,
    gamma: f64,
    rng: &mut impl Rng,
) -> CellParams {
    let mut w = random_matrix(d_z, d_z, rng);
    let s = sigma_max(&w);
    w.scale_in_place(gamma / s);
    let u = random_matrix(d_z, d_x, rng);
    let b = random_vector(d_z, rng).scaled(0.5);
    CellParams::new(kind, w, u, b).unwrap()
}

/// Dense `∂f/∂z` computed from the definition.
pub fn dense_state_jacobian(p: &CellParams, z: &Vector, x: &Vector) -> DMatrix<f64> {
    let w = to_na(&p.w);
    let pre = &w * to_na_vec(z) + to_na(&p.u) * to_na_vec(x) + to_na_vec(&p.b);
    let mut j = w;
    if p.kind == CellKind::Tanh {
        for i in 0..j.nrows() {
            let s = 1.0 - pre[i].tanh().powi(2);
            for c in 0..j.ncols() {
                j[(i, c)] *= s;
            }
        }
    }
    j
}

/// Central differences of `h` around `point`.
pub fn central_diff(h: impl Fn(&[f64]) -> f64, point: &[f64], step: f64) -> Vec<f64> {
    let mut work = point.to_vec();
    (0..point.len())
        .map(|i| {
            work[i] = point[i] + step;
            let up = h(&work);
            work[i] = point[i] - step;
            let down = h(&work);
            work[i] = point[i];
            (up - down) / (2.0 * step)
        })
        .collect()
}

pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt();
    let scale: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    diff / scale.max(1e-12)
}

/// Sherman-Morrison product form: applies each stored rank-one correction
/// to a dense `−I`, oldest first.
pub fn dense_from_pairs<'a>(
    dim: usize,
    pairs: impl Iterator<Item = (&'a Vector, &'a Vector)>,
) -> DMatrix<f64> {
    let mut m = -DMatrix::<f64>::identity(dim, dim);
    for (u, v) in pairs {
        m += to_na_vec(u) * to_na_vec(v).transpose();
    }
    m
}
