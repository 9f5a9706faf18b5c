//! Forward-pass root finding for `g(z) = f(z, x) − z = 0`.
//!
//! [`broyden_solve`] runs Broyden's "good" method on the inverse Jacobian
//! directly: starting from `B₀⁻¹ = −I`, each step moves to
//! `z_{t+1} = z_t − B_t⁻¹ g_t` and applies the Sherman-Morrison rank-one
//! correction so that `B_{t+1}⁻¹ Δg = Δz`. The correction is stored as a
//! pair `(u, v)` in a [`LimitedMemoryInverse`], which the GDEQ backward
//! strategy later re-uses. [`picard_solve`] is plain fixed-point iteration,
//! kept as a baseline.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cell::CellParams;
use crate::error::{check_dim, Error, Result};
use crate::linalg::{LimitedMemoryInverse, Vector, DEFAULT_MEMORY};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    /// Residual 2-norm threshold.
    pub tol: f64,
    pub max_iter: usize,
    /// Rank-one pairs kept in the inverse-Jacobian approximation.
    pub memory: usize,
    /// Relative threshold below which a Sherman-Morrison denominator is
    /// treated as degenerate and the update is skipped.
    pub eps_den: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            tol: 1e-6,
            max_iter: 18,
            memory: DEFAULT_MEMORY,
            eps_den: 1e-10,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "solver.tol must be positive, got {}",
                self.tol
            )));
        }
        if self.max_iter < 1 {
            return Err(Error::InvalidConfig(
                "solver.max_iter must be at least 1".into(),
            ));
        }
        if self.memory < 1 {
            return Err(Error::InvalidConfig(
                "solver.memory must be at least 1".into(),
            ));
        }
        if !(self.eps_den > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "solver.eps_den must be positive, got {}",
                self.eps_den
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveMethod {
    Broyden,
    Picard,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FixedPointSolution {
    /// Lowest-residual iterate seen.
    pub z_star: Vector,
    pub residual_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Final `B_T⁻¹`; pure `−I` for Picard.
    pub inv_jacobian: LimitedMemoryInverse,
    /// `‖g(z_t)‖` for `t = 0..=iterations`.
    pub residual_trace: Vec<f64>,
    pub skipped_updates: usize,
    pub method: SolveMethod,
}

/// `g(z, x) = f(z, x) − z`
pub fn residual(p: &CellParams, z: &Vector, x: &Vector) -> Result<Vector> {
    Ok(p.forward(z, x)?.sub(z))
}

fn residual_injected(p: &CellParams, z: &Vector, injection: &Vector) -> Result<Vector> {
    Ok(p.forward_injected(z, injection)?.sub(z))
}

/// Result of one Broyden step. `inv` passed to [`broyden_step`] has been
/// updated in place unless `skipped` is set.
#[derive(Debug, Clone, PartialEq)]
pub struct BroydenStep {
    pub z_next: Vector,
    pub g_next: Vector,
    pub skipped: bool,
}

/// One Broyden iteration from `(z_t, g_t)` with `g_t = g(z_t, x)`.
pub fn broyden_step(
    p: &CellParams,
    x: &Vector,
    z_t: &Vector,
    g_t: &Vector,
    inv: &mut LimitedMemoryInverse,
    eps_den: f64,
) -> Result<BroydenStep> {
    check_dim("broyden_step: state", p.d_z(), z_t.dim())?;
    check_dim("broyden_step: residual", p.d_z(), g_t.dim())?;
    let injection = p.input_injection(x)?;
    step_injected(p, &injection, z_t, g_t, inv, eps_den)?.ok_or_else(|| Error::Divergence {
        iteration: 1,
        trace: vec![g_t.norm()],
    })
}

/// `Ok(None)` signals a non-finite iterate.
fn step_injected(
    p: &CellParams,
    injection: &Vector,
    z_t: &Vector,
    g_t: &Vector,
    inv: &mut LimitedMemoryInverse,
    eps_den: f64,
) -> Result<Option<BroydenStep>> {
    let dz = inv.apply(g_t)?.scaled(-1.0);
    let z_next = z_t.add(&dz);
    if !z_next.is_finite() {
        return Ok(None);
    }
    let g_next = residual_injected(p, &z_next, injection)?;
    if !g_next.is_finite() {
        return Ok(None);
    }

    // B⁻¹_{t+1} = B⁻¹_t − (B⁻¹_t g_{t+1})(Δzᵀ B⁻¹_t) / (Δzᵀ(Δz + B⁻¹_t g_{t+1}))
    let hg = inv.apply(&g_next)?;
    let den = dz.dot(&dz.add(&hg));
    let dz_sq = dz.dot(&dz);
    let skipped = den == 0.0 || !den.is_finite() || den.abs() < eps_den * dz_sq;
    if !skipped {
        let u = hg.scaled(-1.0 / den);
        let v = inv.apply_transpose(&dz)?;
        inv.push(u, v)?;
    }
    Ok(Some(BroydenStep {
        z_next,
        g_next,
        skipped,
    }))
}

struct BestIterate {
    z: Vector,
    norm: f64,
}

impl BestIterate {
    fn offer(&mut self, z: &Vector, norm: f64) {
        if norm < self.norm {
            self.z = z.clone();
            self.norm = norm;
        }
    }
}

fn check_solve_inputs(
    p: &CellParams,
    x: &Vector,
    z0: &Vector,
    cfg: &SolverConfig,
) -> Result<Vector> {
    cfg.validate()?;
    check_dim("fixed-point solve: initial state", p.d_z(), z0.dim())?;
    p.input_injection(x)
}

/// Limited-memory Broyden solve starting from `z0` and `B₀⁻¹ = −I`.
/// Deterministic in its inputs.
pub fn broyden_solve(
    p: &CellParams,
    x: &Vector,
    z0: &Vector,
    cfg: &SolverConfig,
) -> Result<FixedPointSolution> {
    let injection = check_solve_inputs(p, x, z0, cfg)?;
    let mut inv = LimitedMemoryInverse::new(p.d_z(), cfg.memory);

    let mut z = z0.clone();
    let mut g = residual_injected(p, &z, &injection)?;
    let mut norm = g.norm();
    let mut trace = vec![norm];
    if !norm.is_finite() {
        return Err(Error::Divergence {
            iteration: 0,
            trace,
        });
    }
    let mut best = BestIterate { z: z.clone(), norm };
    let mut iterations = 0;
    let mut skipped_updates = 0;

    while norm > cfg.tol && iterations < cfg.max_iter {
        let step = match step_injected(p, &injection, &z, &g, &mut inv, cfg.eps_den)? {
            Some(step) => step,
            None => {
                return Err(Error::Divergence {
                    iteration: iterations + 1,
                    trace,
                })
            }
        };
        iterations += 1;
        if step.skipped {
            skipped_updates += 1;
        }
        z = step.z_next;
        g = step.g_next;
        norm = g.norm();
        trace.push(norm);
        best.offer(&z, norm);
    }

    Ok(FixedPointSolution {
        z_star: best.z,
        residual_norm: best.norm,
        iterations,
        converged: best.norm <= cfg.tol,
        inv_jacobian: inv,
        residual_trace: trace,
        skipped_updates,
        method: SolveMethod::Broyden,
    })
}

/// Plain iteration `z_{t+1} = f(z_t, x)`. Only reliable for contractive
/// cells; exhausting `max_iter` yields `converged = false` with the best
/// iterate.
pub fn picard_solve(
    p: &CellParams,
    x: &Vector,
    z0: &Vector,
    cfg: &SolverConfig,
) -> Result<FixedPointSolution> {
    let injection = check_solve_inputs(p, x, z0, cfg)?;
    let mut z = z0.clone();
    let mut g = residual_injected(p, &z, &injection)?;
    let mut norm = g.norm();
    let mut trace = vec![norm];
    if !norm.is_finite() {
        return Err(Error::Divergence {
            iteration: 0,
            trace,
        });
    }
    let mut best = BestIterate { z: z.clone(), norm };
    let mut iterations = 0;

    while norm > cfg.tol && iterations < cfg.max_iter {
        z = z.add(&g);
        g = residual_injected(p, &z, &injection)?;
        norm = g.norm();
        iterations += 1;
        if !norm.is_finite() {
            return Err(Error::Divergence {
                iteration: iterations,
                trace,
            });
        }
        trace.push(norm);
        best.offer(&z, norm);
    }

    Ok(FixedPointSolution {
        z_star: best.z,
        residual_norm: best.norm,
        iterations,
        converged: best.norm <= cfg.tol,
        inv_jacobian: LimitedMemoryInverse::new(p.d_z(), cfg.memory),
        residual_trace: trace,
        skipped_updates: 0,
        method: SolveMethod::Picard,
    })
}

/// Uniform `[-0.5, 0.5)` initial state for experiments that want a random
/// starting point instead of zero.
pub fn seeded_initial_state(dim: usize, seed: u64) -> Vector {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Vector::from_fn(dim, |_| rng.random_range(-0.5..0.5))
}
