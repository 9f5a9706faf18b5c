//! Backward-pass strategies.
//!
//! Every strategy maps the upstream gradient `v = ∂ℓ/∂z*` to an adjoint
//! `u ≈ Aᵀ v` with `A = (I − ∂f/∂z*)⁻¹`; parameter and input gradients then
//! follow from a single VJP each in [`grads_from_adjoint`].
//!
//! | strategy | adjoint                                 | state VJPs |
//! |----------|-----------------------------------------|------------|
//! | Implicit | fixed-point solve of `u = v + Jᵀu`      | ≤ K_b      |
//! | JFB      | `u = v`                                 | 0          |
//! | NPG      | `u = λ Σ_{i<k} (Mᵀ)ⁱ v`, `M = λJ + (1−λ)I` | k − 1   |
//! | GDEQ     | `u = −(B_T⁻¹)ᵀ v` from the forward solve | 0          |

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::cell::{Linearization, ParamGrads};
use crate::error::{check_dim, Error, Result};
use crate::fixed_point::{FixedPointSolution, SolveMethod};
use crate::linalg::{LimitedMemoryInverse, Vector};

pub const DEFAULT_BACKWARD_ITERS: usize = 20;
pub const DEFAULT_BACKWARD_TOL: f64 = 1e-6;
pub const DEFAULT_NPG_K: usize = 5;
pub const DEFAULT_NPG_LAMBDA: f64 = 0.5;

fn default_backward_iters() -> usize {
    DEFAULT_BACKWARD_ITERS
}
fn default_backward_tol() -> f64 {
    DEFAULT_BACKWARD_TOL
}
fn default_npg_k() -> usize {
    DEFAULT_NPG_K
}
fn default_npg_lambda() -> f64 {
    DEFAULT_NPG_LAMBDA
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "lowercase", deny_unknown_fields)]
pub enum StrategyConfig {
    Implicit {
        #[serde(default = "default_backward_iters")]
        max_iter: usize,
        #[serde(default = "default_backward_tol")]
        tol: f64,
    },
    Jfb,
    Npg {
        #[serde(default = "default_npg_k")]
        k: usize,
        #[serde(default = "default_npg_lambda")]
        lambda: f64,
    },
    Gdeq,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Implicit,
    Jfb,
    Npg,
    Gdeq,
}

impl Strategy {
    pub const ALL: [Strategy; 4] = [
        Strategy::Implicit,
        Strategy::Jfb,
        Strategy::Npg,
        Strategy::Gdeq,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Strategy::Implicit => "implicit",
            Strategy::Jfb => "jfb",
            Strategy::Npg => "npg",
            Strategy::Gdeq => "gdeq",
        }
    }

    /// The strategy with its default hyper-parameters.
    pub fn default_config(self) -> StrategyConfig {
        match self {
            Strategy::Implicit => StrategyConfig::implicit_default(),
            Strategy::Jfb => StrategyConfig::Jfb,
            Strategy::Npg => StrategyConfig::npg_default(),
            Strategy::Gdeq => StrategyConfig::Gdeq,
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "implicit" => Ok(Strategy::Implicit),
            "jfb" => Ok(Strategy::Jfb),
            "npg" => Ok(Strategy::Npg),
            "gdeq" => Ok(Strategy::Gdeq),
            _ => Err(Error::InvalidConfig(format!("unknown strategy `{s}`"))),
        }
    }
}

impl StrategyConfig {
    pub fn implicit_default() -> Self {
        StrategyConfig::Implicit {
            max_iter: DEFAULT_BACKWARD_ITERS,
            tol: DEFAULT_BACKWARD_TOL,
        }
    }

    pub fn npg_default() -> Self {
        StrategyConfig::Npg {
            k: DEFAULT_NPG_K,
            lambda: DEFAULT_NPG_LAMBDA,
        }
    }

    pub fn strategy(&self) -> Strategy {
        match self {
            StrategyConfig::Implicit { .. } => Strategy::Implicit,
            StrategyConfig::Jfb => Strategy::Jfb,
            StrategyConfig::Npg { .. } => Strategy::Npg,
            StrategyConfig::Gdeq => Strategy::Gdeq,
        }
    }

    pub fn label(&self) -> &'static str {
        self.strategy().label()
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            StrategyConfig::Implicit { max_iter, tol } => {
                if max_iter < 1 {
                    return Err(Error::InvalidConfig(
                        "strategy.max_iter must be at least 1".into(),
                    ));
                }
                if !(tol > 0.0) {
                    return Err(Error::InvalidConfig(format!(
                        "strategy.tol must be positive, got {tol}"
                    )));
                }
            }
            StrategyConfig::Npg { k, lambda } => {
                if k < 1 {
                    return Err(Error::InvalidConfig("strategy.k must be at least 1".into()));
                }
                if !(0.0..=1.0).contains(&lambda) {
                    return Err(Error::InvalidConfig(format!(
                        "strategy.lambda must lie in [0, 1], got {lambda}"
                    )));
                }
            }
            StrategyConfig::Jfb | StrategyConfig::Gdeq => {}
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdjointVector {
    pub u: Vector,
    /// State VJPs consumed producing `u`.
    pub vjp_count: usize,
    /// Only meaningful for Implicit; always `true` otherwise.
    pub converged: bool,
    pub strategy: Strategy,
}

/// Solves `(I − Jᵀ) u = v` by iterating `u ← v + Jᵀ u` from `u = v`, one VJP
/// per iteration, until the update falls below `tol` or `max_iter`
/// iterations have run.
///
/// Without convergence the newest iterate is returned while the update
/// norms keep shrinking; once they stop shrinking, the iterate with the
/// smallest update norm is returned instead.
pub fn adjoint_implicit(
    lin: &Linearization<'_>,
    v: &Vector,
    max_iter: usize,
    tol: f64,
) -> Result<AdjointVector> {
    let mut u = v.clone();
    let mut best: Option<(Vector, f64)> = None;
    let mut vjp_count = 0;
    let mut converged = false;
    let mut shrinking = true;
    for _ in 0..max_iter {
        let mut next = lin.vjp_state(&u)?;
        next.axpy(1.0, v);
        vjp_count += 1;
        let change = next.sub(&u).norm();
        if !change.is_finite() {
            shrinking = false;
            break;
        }
        match &best {
            Some((_, best_change)) if change >= *best_change => shrinking = false,
            _ => {
                shrinking = true;
                best = Some((u, change));
            }
        }
        u = next;
        if change <= tol {
            converged = true;
            break;
        }
    }
    let u = match best {
        Some((best_u, _)) if !converged && !shrinking => best_u,
        _ => u,
    };
    Ok(AdjointVector {
        u,
        vjp_count,
        converged,
        strategy: Strategy::Implicit,
    })
}

/// `A = I`.
pub fn adjoint_jfb(v: &Vector) -> AdjointVector {
    AdjointVector {
        u: v.clone(),
        vjp_count: 0,
        converged: true,
        strategy: Strategy::Jfb,
    }
}

/// Truncated Neumann series `u = λ Σ_{i=0}^{k−1} (Mᵀ)ⁱ v` with
/// `Mᵀ w = λ Jᵀ w + (1 − λ) w`.
pub fn adjoint_npg(
    lin: &Linearization<'_>,
    v: &Vector,
    k: usize,
    lambda: f64,
) -> Result<AdjointVector> {
    StrategyConfig::Npg { k, lambda }.validate()?;
    let mut sum = v.clone();
    let mut term = v.clone();
    for _ in 1..k {
        let mut next = lin.vjp_state(&term)?.scaled(lambda);
        next.axpy(1.0 - lambda, &term);
        term = next;
        sum.axpy(1.0, &term);
    }
    Ok(AdjointVector {
        u: sum.scaled(lambda),
        vjp_count: k - 1,
        converged: true,
        strategy: Strategy::Npg,
    })
}

/// Re-uses the forward solve's `B_T⁻¹ ≈ −(I − J)⁻¹`: `u = −(B_T⁻¹)ᵀ v`.
pub fn adjoint_gdeq(inv: &LimitedMemoryInverse, v: &Vector) -> Result<AdjointVector> {
    Ok(AdjointVector {
        u: inv.apply_transpose(v)?.scaled(-1.0),
        vjp_count: 0,
        converged: true,
        strategy: Strategy::Gdeq,
    })
}

/// Routes `v` to the strategy selected by `cfg`. `sol` must be the forward
/// solve that produced the linearization point.
pub fn strategy_dispatch(
    cfg: &StrategyConfig,
    lin: &Linearization<'_>,
    sol: &FixedPointSolution,
    v: &Vector,
) -> Result<AdjointVector> {
    check_dim(
        "strategy_dispatch: upstream gradient",
        sol.z_star.dim(),
        v.dim(),
    )?;
    match *cfg {
        StrategyConfig::Implicit { max_iter, tol } => adjoint_implicit(lin, v, max_iter, tol),
        StrategyConfig::Jfb => Ok(adjoint_jfb(v)),
        StrategyConfig::Npg { k, lambda } => adjoint_npg(lin, v, k, lambda),
        StrategyConfig::Gdeq => {
            if sol.method != SolveMethod::Broyden {
                return Err(Error::InvalidConfig(
                    "gdeq requires a Broyden forward solve; the fixed point came from Picard iteration".into(),
                ));
            }
            adjoint_gdeq(&sol.inv_jacobian, v)
        }
    }
}

/// `(∂ℓ/∂θ, ∂ℓ/∂x)` from an adjoint at the linearization point.
pub fn grads_from_adjoint(
    lin: &Linearization<'_>,
    adj: &AdjointVector,
) -> Result<(ParamGrads, Vector)> {
    Ok((lin.vjp_params(&adj.u)?, lin.vjp_input(&adj.u)?))
}
