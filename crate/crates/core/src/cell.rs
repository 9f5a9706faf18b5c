//! The weight-tied layer `f(z, x) = σ(W z + U x + b)` with closed-form
//! Jacobians and vector-Jacobian products.
//!
//! Jacobians use the layout `J[i][j] = ∂fᵢ/∂zⱼ`; every gradient is a column
//! vector, so backward computations apply `Jᵀ`.

use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::linalg::{Matrix, Vector};

static VJP_COUNTER: AtomicU64 = AtomicU64::new(0);

/// Total number of state VJPs evaluated by this process.
pub fn vjp_count() -> u64 {
    VJP_COUNTER.load(Ordering::Relaxed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellKind {
    Tanh,
    Linear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellParams {
    pub kind: CellKind,
    pub w: Matrix,
    pub u: Matrix,
    pub b: Vector,
}

/// Gradients with respect to `(W, U, b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads {
    pub gw: Matrix,
    pub gu: Matrix,
    pub gb: Vector,
}

impl ParamGrads {
    pub fn zeros(d_z: usize, d_x: usize) -> Self {
        ParamGrads {
            gw: Matrix::zeros(d_z, d_z),
            gu: Matrix::zeros(d_z, d_x),
            gb: Vector::zeros(d_z),
        }
    }

    pub fn zeros_like(p: &CellParams) -> Self {
        ParamGrads::zeros(p.d_z(), p.d_x())
    }

    /// `self += alpha * other`
    pub fn axpy(&mut self, alpha: f64, other: &ParamGrads) {
        self.gw.axpy(alpha, &other.gw);
        self.gu.axpy(alpha, &other.gu);
        self.gb.axpy(alpha, &other.gb);
    }

    pub fn scale(&mut self, alpha: f64) {
        self.gw.scale_in_place(alpha);
        self.gu.scale_in_place(alpha);
        self.gb.as_mut_slice().iter_mut().for_each(|v| *v *= alpha);
    }

    /// Flattened as `W` row-major, then `U` row-major, then `b`.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out =
            Vec::with_capacity(self.gw.as_slice().len() + self.gu.as_slice().len() + self.gb.dim());
        out.extend_from_slice(self.gw.as_slice());
        out.extend_from_slice(self.gu.as_slice());
        out.extend_from_slice(self.gb.as_slice());
        out
    }

    pub fn is_finite(&self) -> bool {
        self.gw.is_finite() && self.gu.is_finite() && self.gb.is_finite()
    }
}

impl CellParams {
    pub fn new(kind: CellKind, w: Matrix, u: Matrix, b: Vector) -> Result<Self> {
        let p = CellParams { kind, w, u, b };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let d_z = self.b.dim();
        check_dim("CellParams: W rows", d_z, self.w.rows())?;
        check_dim("CellParams: W cols", d_z, self.w.cols())?;
        check_dim("CellParams: U rows", d_z, self.u.rows())?;
        Ok(())
    }

    /// Gaussian initialization: `W ~ N(0, 1/d_z)` rescaled to spectral norm
    /// at most `gamma`, `U ~ N(0, input_scale²)`, `b ~ N(0, 0.01)`.
    pub fn random<R: Rng + ?Sized>(
        kind: CellKind,
        d_z: usize,
        d_x: usize,
        gamma: f64,
        input_scale: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let w_dist = Normal::new(0.0, 1.0 / (d_z as f64).sqrt()).expect("positive std");
        let u_dist = Normal::new(0.0, input_scale.abs()).expect("finite std");
        let b_dist = Normal::new(0.0, 0.1).expect("positive std");
        let w = Matrix::from_fn(d_z, d_z, |_, _| w_dist.sample(rng));
        let u = Matrix::from_fn(d_z, d_x, |_, _| u_dist.sample(rng));
        let b = Vector::from_fn(d_z, |_| b_dist.sample(rng));
        CellParams { kind, w, u, b }.spectral_rescale(gamma)
    }

    pub fn d_z(&self) -> usize {
        self.b.dim()
    }

    pub fn d_x(&self) -> usize {
        self.u.cols()
    }

    pub fn num_params(&self) -> usize {
        let (d_z, d_x) = (self.d_z(), self.d_x());
        d_z * d_z + d_z * d_x + d_z
    }

    /// Flattened as `W` row-major, then `U` row-major, then `b`.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        out.extend_from_slice(self.w.as_slice());
        out.extend_from_slice(self.u.as_slice());
        out.extend_from_slice(self.b.as_slice());
        out
    }

    /// Inverse of [`CellParams::to_flat`].
    pub fn with_flat(&self, flat: &[f64]) -> Result<Self> {
        check_dim("CellParams::with_flat", self.num_params(), flat.len())?;
        let (d_z, d_x) = (self.d_z(), self.d_x());
        let (w, rest) = flat.split_at(d_z * d_z);
        let (u, b) = rest.split_at(d_z * d_x);
        Ok(CellParams {
            kind: self.kind,
            w: Matrix::from_row_major(d_z, d_z, w.to_vec())?,
            u: Matrix::from_row_major(d_z, d_x, u.to_vec())?,
            b: Vector::from(b.to_vec()),
        })
    }

    /// `self += alpha * grads`
    pub fn apply_update(&mut self, alpha: f64, grads: &ParamGrads) {
        self.w.axpy(alpha, &grads.gw);
        self.u.axpy(alpha, &grads.gu);
        self.b.axpy(alpha, &grads.gb);
    }

    fn check_inputs(&self, z: &Vector, x: &Vector) -> Result<()> {
        check_dim("cell state", self.d_z(), z.dim())?;
        check_dim("cell input", self.d_x(), x.dim())
    }

    /// Input-dependent part `U x + b`, constant across fixed-point iterations.
    pub fn input_injection(&self, x: &Vector) -> Result<Vector> {
        check_dim("cell input", self.d_x(), x.dim())?;
        Ok(self.u.matvec(x)?.add(&self.b))
    }

    /// `f(z, x)` given a precomputed [`CellParams::input_injection`].
    pub fn forward_injected(&self, z: &Vector, injection: &Vector) -> Result<Vector> {
        let mut pre = self.w.matvec(z)?;
        pre.axpy(1.0, injection);
        if self.kind == CellKind::Tanh {
            pre.as_mut_slice().iter_mut().for_each(|v| *v = v.tanh());
        }
        Ok(pre)
    }

    pub fn forward(&self, z: &Vector, x: &Vector) -> Result<Vector> {
        self.check_inputs(z, x)?;
        self.forward_injected(z, &self.input_injection(x)?)
    }

    /// Freezes the local derivative of the activation at `(z, x)`.
    pub fn linearize<'a>(&'a self, z: &'a Vector, x: &'a Vector) -> Result<Linearization<'a>> {
        self.check_inputs(z, x)?;
        let slope = match self.kind {
            CellKind::Linear => Vector::from(vec![1.0; self.d_z()]),
            CellKind::Tanh => {
                let f = self.forward(z, x)?;
                Vector::from_fn(f.dim(), |i| 1.0 - f[i] * f[i])
            }
        };
        Ok(Linearization {
            params: self,
            z,
            x,
            slope,
        })
    }

    /// Dense `∂f/∂z`. Intended for small dimensions.
    pub fn jacobian_state(&self, z: &Vector, x: &Vector) -> Result<Matrix> {
        Ok(self.linearize(z, x)?.dense_jacobian())
    }

    pub fn vjp_state(&self, z: &Vector, x: &Vector, v: &Vector) -> Result<Vector> {
        self.linearize(z, x)?.vjp_state(v)
    }

    pub fn vjp_params(&self, z: &Vector, x: &Vector, u: &Vector) -> Result<ParamGrads> {
        self.linearize(z, x)?.vjp_params(u)
    }

    pub fn vjp_input(&self, z: &Vector, x: &Vector, u: &Vector) -> Result<Vector> {
        self.linearize(z, x)?.vjp_input(u)
    }

    /// Scales `W` by `gamma / σ_max(W)` whenever the power-iteration estimate
    /// of `σ_max(W)` exceeds `gamma`. `U` and `b` are untouched.
    pub fn spectral_rescale(&self, gamma: f64) -> Result<CellParams> {
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "spectral_rescale: gamma must lie in (0, 1), got {gamma}"
            )));
        }
        let mut out = self.clone();
        let mut start = None;
        // Power iteration underestimates σ_max; re-estimate after scaling
        // until the estimate no longer exceeds gamma.
        for _ in 0..8 {
            let (sigma, vec) = power_iteration(&out.w, POWER_STEPS, start.take());
            if sigma == 0.0 || sigma <= gamma {
                break;
            }
            out.w.scale_in_place(gamma / sigma);
            start = Some(vec);
        }
        Ok(out)
    }
}

const POWER_STEPS: usize = 100;

/// Power-iteration estimate of the largest singular value of `w`.
pub fn spectral_norm_estimate(w: &Matrix) -> f64 {
    power_iteration(w, POWER_STEPS, None).0
}

fn power_iteration(w: &Matrix, steps: usize, start: Option<Vector>) -> (f64, Vector) {
    let n = w.cols();
    let mut v = start.unwrap_or_else(|| {
        // deterministic, generic start vector
        Vector::from_fn(n, |i| {
            0.5 + ((i as f64 + 1.0) * 0.618_033_988_749_895).fract()
        })
    });
    let norm = v.norm();
    if norm == 0.0 {
        return (0.0, v);
    }
    v = v.scaled(1.0 / norm);
    let mut sigma = 0.0;
    for _ in 0..steps {
        let wv = w.matvec(&v).expect("square start vector");
        let wtwv = w.matvec_transpose(&wv).expect("matching rows");
        sigma = wv.norm();
        let n2 = wtwv.norm();
        if n2 == 0.0 {
            return (0.0, v);
        }
        v = wtwv.scaled(1.0 / n2);
    }
    let final_sigma = w.matvec(&v).expect("square start vector").norm();
    (final_sigma.max(sigma), v)
}

/// The cell linearized at a fixed `(z, x)`: holds the activation slope
/// `d = σ'(W z + U x + b)` so repeated VJPs cost one matrix-vector product
/// each.
#[derive(Debug, Clone)]
pub struct Linearization<'a> {
    params: &'a CellParams,
    z: &'a Vector,
    x: &'a Vector,
    slope: Vector,
}

impl Linearization<'_> {
    pub fn slope(&self) -> &Vector {
        &self.slope
    }

    pub fn dense_jacobian(&self) -> Matrix {
        let w = &self.params.w;
        Matrix::from_fn(w.rows(), w.cols(), |i, j| self.slope[i] * w[(i, j)])
    }

    /// `Jᵀ v = Wᵀ (d ⊙ v)`. Counts as one VJP.
    pub fn vjp_state(&self, v: &Vector) -> Result<Vector> {
        check_dim("vjp_state", self.params.d_z(), v.dim())?;
        VJP_COUNTER.fetch_add(1, Ordering::Relaxed);
        self.params.w.matvec_transpose(&self.slope.hadamard(v))
    }

    /// `(∂f/∂θ)ᵀ u`: with `w = d ⊙ u`, returns `(w zᵀ, w xᵀ, w)`.
    pub fn vjp_params(&self, u: &Vector) -> Result<ParamGrads> {
        check_dim("vjp_params", self.params.d_z(), u.dim())?;
        let w = self.slope.hadamard(u);
        Ok(ParamGrads {
            gw: Matrix::outer(&w, self.z),
            gu: Matrix::outer(&w, self.x),
            gb: w,
        })
    }

    /// Accumulates `scale · (∂f/∂θ)ᵀ u` into `acc` without allocating.
    pub fn accumulate_vjp_params(
        &self,
        u: &Vector,
        scale: f64,
        acc: &mut ParamGrads,
    ) -> Result<()> {
        check_dim("vjp_params", self.params.d_z(), u.dim())?;
        let w = self.slope.hadamard(u);
        acc.gw.add_outer(scale, &w, self.z);
        acc.gu.add_outer(scale, &w, self.x);
        acc.gb.axpy(scale, &w);
        Ok(())
    }

    /// `(∂f/∂x)ᵀ u = Uᵀ (d ⊙ u)`.
    pub fn vjp_input(&self, u: &Vector) -> Result<Vector> {
        check_dim("vjp_input", self.params.d_z(), u.dim())?;
        self.params.u.matvec_transpose(&self.slope.hadamard(u))
    }
}

/// Central-difference gradient of `h` at `point`.
pub fn numeric_grad_oracle<F>(h: F, point: &Vector, step: f64) -> Result<Vector>
where
    F: Fn(&[f64]) -> f64,
{
    if !(step > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "finite-difference step must be positive, got {step}"
        )));
    }
    let mut probe = point.as_slice().to_vec();
    let mut grad = Vec::with_capacity(point.dim());
    for i in 0..point.dim() {
        let orig = probe[i];
        probe[i] = orig + step;
        let plus = h(&probe);
        probe[i] = orig - step;
        let minus = h(&probe);
        probe[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::OracleFailure { coordinate: i });
        }
        grad.push((plus - minus) / (2.0 * step));
    }
    Ok(Vector::from(grad))
}
