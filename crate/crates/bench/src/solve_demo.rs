//! `solve-demo`: Broyden and Picard residual traces on one instance.

use std::path::Path;

use deq_core::fixed_point::{broyden_solve, picard_solve, FixedPointSolution};
use deq_core::{CellKind, CellParams, Error, Matrix, SolverConfig, Vector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{DemoCell, DemoConfig, RunConfig};
use crate::error::CliError;
use crate::manifest::{RunManifest, RunStatus};

pub const BROYDEN_TRACE_FILE: &str = "broyden_trace.csv";
pub const PICARD_TRACE_FILE: &str = "picard_trace.csv";
pub const TRACE_HEADER: &str = "iteration,residual_norm";

pub fn demo_instance(demo: &DemoConfig) -> Result<(CellParams, Vector), CliError> {
    let mut rng = ChaCha8Rng::seed_from_u64(demo.seed);
    match demo.cell {
        DemoCell::ScalarLinear => {
            let m = |v: f64| Matrix::from_row_major(1, 1, vec![v]).expect("1x1");
            let p = CellParams::new(CellKind::Linear, m(0.5), m(1.0), Vector::zeros(1))?;
            Ok((p, Vector::from(vec![1.0])))
        }
        DemoCell::Constant => {
            let u = Matrix::from_fn(demo.d_z, demo.d_x, |_, _| {
                rng.random_range(-1.0..1.0) * demo.input_scale
            });
            let b = Vector::from_fn(demo.d_z, |_| rng.random_range(-0.5..0.5));
            let p = CellParams::new(CellKind::Linear, Matrix::zeros(demo.d_z, demo.d_z), u, b)?;
            let x = Vector::from_fn(demo.d_x, |_| rng.random_range(-1.0..1.0));
            Ok((p, x))
        }
        DemoCell::Tanh => {
            let p = CellParams::random(
                CellKind::Tanh,
                demo.d_z,
                demo.d_x,
                demo.gamma,
                demo.input_scale,
                &mut rng,
            )?;
            let x = Vector::from_fn(demo.d_x, |_| rng.random_range(-1.0..1.0));
            Ok((p, x))
        }
    }
}

pub fn trace_csv(trace: &[f64]) -> String {
    let mut out = format!("{TRACE_HEADER}\n");
    for (i, r) in trace.iter().enumerate() {
        out.push_str(&format!("{i},{r:?}\n"));
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct DemoOutcome {
    pub broyden: FixedPointSolution,
    pub picard: FixedPointSolution,
}

/// Runs both solvers from `z = 0`. A diverging solver still gets its trace
/// written, up to the failure, before the error returns.
pub fn run_demo(cfg: &RunConfig, out: &Path) -> Result<DemoOutcome, CliError> {
    cfg.validate()?;
    let (p, x) = demo_instance(&cfg.demo)?;
    let solver = SolverConfig {
        tol: cfg.demo.tol,
        max_iter: cfg.demo.max_iter,
        ..cfg.solver
    };
    let z0 = Vector::zeros(p.d_z());
    let mut manifest = RunManifest::new("solve-demo", cfg);

    let broyden = broyden_solve(&p, &x, &z0, &solver);
    let picard = picard_solve(&p, &x, &z0, &solver);
    let mut failure = None;
    for (key, file, result) in [
        ("broyden_trace", BROYDEN_TRACE_FILE, &broyden),
        ("picard_trace", PICARD_TRACE_FILE, &picard),
    ] {
        let trace = match result {
            Ok(sol) => &sol.residual_trace,
            Err(Error::Divergence { trace, .. }) => {
                failure.get_or_insert_with(|| format!("{key}: {}", result.as_ref().unwrap_err()));
                trace
            }
            Err(e) => return Err(e.clone().into()),
        };
        manifest.emit(out, key, file, &trace_csv(trace))?;
    }
    if let Some(msg) = failure {
        manifest.status = RunStatus::Diverged;
        manifest.write(out)?;
        return Err(CliError::Diverged(msg));
    }
    manifest.write(out)?;
    Ok(DemoOutcome {
        broyden: broyden.expect("checked above"),
        picard: picard.expect("checked above"),
    })
}
