//! `bench-backward`: per-strategy backward-pass timing on a fixed checkpoint.

use std::path::{Path, PathBuf};
use std::time::Instant;

use deq_core::backward::{grads_from_adjoint, strategy_dispatch, Strategy};
use deq_core::fixed_point::FixedPointSolution;
use deq_core::training::{forward_predict, softmax_xent, Model};
use deq_core::{StrategyConfig, Vector};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::CliError;
use crate::manifest::RunManifest;

pub const SPEEDUP_FILE: &str = "speedup.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyTiming {
    pub strategy: Strategy,
    pub config: StrategyConfig,
    /// Median over trials of the mean time per backward pass.
    pub mean_s_per_backward: f64,
    pub vjps_per_backward: f64,
    /// `implicit_mean / strategy_mean`.
    pub speedup_vs_implicit: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeedupReport {
    pub checkpoint: PathBuf,
    pub d_z: usize,
    pub memory: usize,
    pub samples: usize,
    pub trials: usize,
    pub warmup: usize,
    pub strategies: Vec<StrategyTiming>,
}

impl SpeedupReport {
    pub fn get(&self, s: Strategy) -> Option<&StrategyTiming> {
        self.strategies.iter().find(|t| t.strategy == s)
    }
}

pub fn load_checkpoint(path: &Path) -> Result<Model, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read checkpoint {}: {e}", path.display())))?;
    let model: Model = serde_json::from_str(&text).map_err(|e| {
        CliError::Config(format!("checkpoint {} is malformed: {e}", path.display()))
    })?;
    model
        .validate()
        .map_err(|e| CliError::Config(format!("checkpoint {}: {e}", path.display())))?;
    Ok(model)
}

struct Prepared<'a> {
    x: &'a Vector,
    sol: FixedPointSolution,
    upstream: Vector,
}

/// One backward pass per prepared sample; returns elapsed seconds and VJPs.
fn timed_pass(
    model: &Model,
    cfg: &StrategyConfig,
    batch: &[Prepared<'_>],
) -> Result<(f64, usize), CliError> {
    let mut vjps = 0;
    let start = Instant::now();
    for p in batch {
        let lin = model.cell.linearize(&p.sol.z_star, p.x)?;
        let adj = strategy_dispatch(cfg, &lin, &p.sol, &p.upstream)?;
        let grads = grads_from_adjoint(&lin, &adj)?;
        std::hint::black_box(&grads);
        vjps += adj.vjp_count;
    }
    Ok((start.elapsed().as_secs_f64(), vjps))
}

fn median(xs: &mut [f64]) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// Times adjoint plus gradient assembly for every strategy over the same
/// samples; forward solves happen once, up front, and are not timed.
pub fn bench_backward(cfg: &RunConfig, checkpoint: &Path) -> Result<SpeedupReport, CliError> {
    cfg.validate()?;
    let model = load_checkpoint(checkpoint)?;
    let (train_set, _) = cfg.dataset.load()?;
    if train_set.dim() != model.cell.d_x() {
        return Err(CliError::Config(format!(
            "checkpoint expects {} input features but the dataset has {}",
            model.cell.d_x(),
            train_set.dim()
        )));
    }

    let mut batch = Vec::new();
    for i in 0..cfg.bench.batch_size.min(train_set.len()) {
        let (x, label) = train_set.sample(i);
        let (logits, sol) = match forward_predict(&model, x, &cfg.solver) {
            Ok(out) => out,
            Err(deq_core::Error::Divergence { .. }) => continue,
            Err(e) => return Err(e.into()),
        };
        let (_, dlogits) = softmax_xent(&logits, label)?;
        let upstream = model.readout.r.matvec_transpose(&dlogits)?;
        batch.push(Prepared { x, sol, upstream });
    }
    if batch.is_empty() {
        return Err(CliError::Diverged(
            "every forward solve in the benchmark batch diverged".into(),
        ));
    }

    let configs = cfg.train_config().probe_strategies();
    for _ in 0..cfg.bench.warmup {
        for sc in &configs {
            timed_pass(&model, sc, &batch)?;
        }
    }
    // strategies take turns within each trial so machine drift hits all of them alike
    let mut per_pass = vec![Vec::with_capacity(cfg.bench.trials); configs.len()];
    let mut vjps = vec![0usize; configs.len()];
    for _ in 0..cfg.bench.trials {
        for (i, sc) in configs.iter().enumerate() {
            let (secs, v) = timed_pass(&model, sc, &batch)?;
            per_pass[i].push(secs / batch.len() as f64);
            vjps[i] += v;
        }
    }
    let timings: Vec<_> = configs
        .iter()
        .zip(per_pass.iter_mut().zip(&vjps))
        .map(|(sc, (passes, &v))| {
            (
                sc,
                median(passes),
                v as f64 / (cfg.bench.trials * batch.len()) as f64,
            )
        })
        .collect();

    let implicit = timings
        .iter()
        .find(|(sc, ..)| sc.strategy() == Strategy::Implicit)
        .map(|t| t.1)
        .expect("probe strategies include Implicit");
    Ok(SpeedupReport {
        checkpoint: checkpoint.to_path_buf(),
        d_z: model.cell.d_z(),
        memory: cfg.solver.memory,
        samples: batch.len(),
        trials: cfg.bench.trials,
        warmup: cfg.bench.warmup,
        strategies: timings
            .into_iter()
            .map(|(sc, secs, vjps)| StrategyTiming {
                strategy: sc.strategy(),
                config: *sc,
                mean_s_per_backward: secs,
                vjps_per_backward: vjps,
                speedup_vs_implicit: implicit / secs,
            })
            .collect(),
    })
}

pub fn run_bench(
    cfg: &RunConfig,
    checkpoint: &Path,
    out: &Path,
) -> Result<SpeedupReport, CliError> {
    let report = bench_backward(cfg, checkpoint)?;
    let mut manifest = RunManifest::new("bench-backward", cfg);
    let json = serde_json::to_string_pretty(&report)
        .map_err(|e| CliError::io(&out.join(SPEEDUP_FILE), e))?;
    manifest.emit(out, "speedup", SPEEDUP_FILE, &(json + "\n"))?;
    manifest.write(out)?;
    Ok(report)
}
