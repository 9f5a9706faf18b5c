//! Dense reference implementations for the acceptance suite.
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

pub fn random_vector(dim: usize, rng: &mut impl Rng) -> Vector {
    Vector::from_fn(dim, |_| rng.random_range(-1.0..1.0))
}

pub fn random_matrix(rows: usize, cols: usize, rng: &mut impl Rng) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

/// Random cell whose `W` has spectral norm exactly `gamma`, measured by SVD.
pub fn contractive_cell(
    kind: CellKind,
    d_z: usize,
    d_x: usize,
    gamma: f64,
    rng: &mut impl Rng,
) -> CellParams {
    let mut w = random_matrix(d_z, d_z, rng);
    let s = to_na(&w).singular_values().max();
    w.scale_in_place(gamma / s);
    let u = random_matrix(d_z, d_x, rng);
    let b = random_vector(d_z, rng).scaled(0.5);
    CellParams::new(kind, w, u, b).unwrap()
}

/// `z = (I − W)⁻¹ (U x + b)` by LU.
pub fn linear_fixed_point(p: &CellParams, x: &Vector) -> Vec<f64> {
    let n = p.d_z();
    let a = DMatrix::<f64>::identity(n, n) - to_na(&p.w);
    let rhs = to_na(&p.u) * to_na_vec(x) + to_na_vec(&p.b);
    a.lu().solve(&rhs).unwrap().iter().copied().collect()
}

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
    let diff = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt();
    let scale = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    diff / scale.max(1e-12)
}

/// `λ Σ_{i<k} (λJ + 1 − λ)ⁱ v` for a scalar Jacobian.
pub fn scalar_npg(j: f64, lambda: f64, k: usize, v: f64) -> f64 {
    let m = lambda * j + 1.0 - lambda;
    lambda * (0..k).map(|i| m.powi(i as i32) * v).sum::<f64>()
}

/// Means of consecutive non-overlapping windows of `width`; a trailing
/// partial window is dropped.
pub fn block_means(xs: &[f64], width: usize) -> Vec<f64> {
    xs.chunks_exact(width)
        .map(|c| c.iter().sum::<f64>() / width as f64)
        .collect()
}

/// Drops the `wall_s` column from a curves CSV.
pub fn without_wall_clock(csv: &str) -> String {
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap_or("").split(',').collect();
    let col = header.iter().position(|h| *h == "wall_s");
    let strip = |l: &str| -> String {
        l.split(',')
            .enumerate()
            .filter(|(i, _)| Some(*i) != col)
            .map(|(_, f)| f)
            .collect::<Vec<_>>()
            .join(",")
    };
    std::iter::once(strip(&header.join(",")))
        .chain(lines.map(strip))
        .collect::<Vec<_>>()
        .join("\n")
}
