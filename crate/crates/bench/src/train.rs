//! `train` and `compare-grads`.

use std::path::{Path, PathBuf};

use deq_core::backward::Strategy;
use deq_core::data::Dataset;
use deq_core::training::{EpochRow, Model, RunRecord, RunTotals, Trainer};
use deq_core::{Error, StrategyConfig};

use crate::config::RunConfig;
use crate::error::CliError;
use crate::manifest::{FinalMetrics, ManifestTotals, RunManifest, RunStatus};

pub const CURVES_FILE: &str = "curves.csv";
pub const PROBES_FILE: &str = "probes.csv";
pub const MODEL_FILE: &str = "model.json";

/// Probe interval `compare-grads` uses when the config leaves probing off.
pub const DEFAULT_PROBE_INTERVAL: usize = 50;

#[derive(Debug)]
pub struct TrainOutcome {
    pub record: RunRecord,
    pub totals: RunTotals,
    pub model: Model,
    pub pretrain_losses: Vec<f64>,
    pub manifest_path: PathBuf,
    pub manifest: RunManifest,
}

impl TrainOutcome {
    pub fn last_epoch(&self) -> Option<&EpochRow> {
        self.record.epochs.last()
    }
}

/// Trains per `cfg` and writes curves, probes, checkpoint and manifest into
/// `out`. An epoch in which every batch diverges stops the run; the curves
/// and probes gathered so far are still written before the error returns.
pub fn run_training(cfg: &RunConfig, out: &Path, command: &str) -> Result<TrainOutcome, CliError> {
    let mut run = TrainingRun::start(cfg, out, command)?;
    while run.step() {}
    run.finish()
}

/// Runs several trainings side by side, one epoch of each in turn, so that
/// drift in machine speed lands on all of them alike when their wall clocks
/// are compared. Each run's outputs match what `run_training` would write.
pub fn run_interleaved(
    runs: &[(RunConfig, PathBuf)],
    command: &str,
) -> Result<Vec<Result<TrainOutcome, CliError>>, CliError> {
    let mut active = runs
        .iter()
        .map(|(cfg, out)| TrainingRun::start(cfg, out, command))
        .collect::<Result<Vec<_>, _>>()?;
    loop {
        let mut any = false;
        for run in &mut active {
            any |= run.step();
        }
        if !any {
            break;
        }
    }
    Ok(active.into_iter().map(TrainingRun::finish).collect())
}

/// A training run that advances one epoch per `step`.
pub struct TrainingRun {
    trainer: Trainer,
    manifest: RunManifest,
    out: PathBuf,
    train_set: Dataset,
    test_set: Dataset,
    epochs_left: usize,
    failure: Option<Error>,
}

impl TrainingRun {
    /// Loads data, initialises the model and runs pre-training if enabled.
    pub fn start(cfg: &RunConfig, out: &Path, command: &str) -> Result<Self, CliError> {
        cfg.validate()?;
        let (train_set, test_set) = cfg.dataset.load()?;
        let tc = cfg.train_config();
        let model = Model::init(train_set.dim(), train_set.num_classes, &tc.model, tc.seed)?;
        let mut trainer = Trainer::new(model, tc)?;
        let failure = if tc.pretrain.enabled {
            trainer.pretrain(&train_set).err()
        } else {
            None
        };
        Ok(TrainingRun {
            trainer,
            manifest: RunManifest::new(command, cfg),
            out: out.to_path_buf(),
            train_set,
            test_set,
            epochs_left: tc.epochs,
            failure,
        })
    }

    /// Runs one epoch. Returns false once the run has finished or failed.
    pub fn step(&mut self) -> bool {
        if self.failure.is_some() || self.epochs_left == 0 {
            return false;
        }
        self.epochs_left -= 1;
        match self.trainer.run_epoch(&self.train_set, &self.test_set) {
            Ok(row) => log_epoch(&row, self.trainer.config().epochs),
            Err(e) => self.failure = Some(e),
        }
        true
    }

    /// Writes the outputs. A diverged run writes its partial curves, probes
    /// and manifest, then returns the divergence error.
    pub fn finish(mut self) -> Result<TrainOutcome, CliError> {
        match self.failure.take() {
            None => {}
            Some(e @ Error::EpochDiverged(_)) | Some(e @ Error::Divergence { .. }) => {
                self.manifest.status = RunStatus::Diverged;
                finish(&mut self.manifest, &self.trainer, &self.out, false)?;
                return Err(e.into());
            }
            Some(e) => return Err(e.into()),
        }
        let manifest_path = finish(&mut self.manifest, &self.trainer, &self.out, true)?;
        let trainer = self.trainer;
        Ok(TrainOutcome {
            record: trainer.record().clone(),
            totals: trainer.totals(),
            pretrain_losses: trainer.pretrain_losses().to_vec(),
            model: trainer.into_model(),
            manifest_path,
            manifest: self.manifest,
        })
    }
}

fn finish(
    manifest: &mut RunManifest,
    trainer: &Trainer,
    out: &Path,
    with_model: bool,
) -> Result<PathBuf, CliError> {
    let record = trainer.record();
    manifest.emit(out, "curves", CURVES_FILE, &record.curves_csv())?;
    manifest.emit(out, "probes", PROBES_FILE, &record.probes_csv())?;
    if with_model {
        let json = serde_json::to_string(trainer.model())
            .map_err(|e| CliError::io(&out.join(MODEL_FILE), e))?;
        manifest.emit(out, "model", MODEL_FILE, &json)?;
    }
    let totals = trainer.totals();
    manifest.totals = ManifestTotals {
        wall_s: totals.wall_s,
        wall_s_per_epoch: totals.wall_s / record.epochs.len().max(1) as f64,
        forward_iterations: totals.forward_iterations,
        vjps: totals.vjps,
        steps: totals.steps,
        diverged_samples: totals.diverged_samples,
    };
    manifest.final_metrics = record.epochs.last().map(|r| FinalMetrics {
        epoch: r.epoch,
        train_loss: r.train_loss,
        train_acc: r.train_acc,
        test_acc: r.test_acc,
    });
    manifest.write(out)
}

fn log_epoch(row: &EpochRow, total: usize) {
    println!(
        "epoch {:>4}/{total}  loss {:.4}  train {:.4}  test {:.4}  fwd {:.2}  vjp {:.2}  conv {:.3}  {:.2}s",
        row.epoch, row.train_loss, row.train_acc, row.test_acc, row.fwd_iters_mean, row.bwd_vjps_mean, row.fwd_conv_rate, row.wall_s
    );
}

/// Implicit training with every strategy probed against it.
pub fn compare_grads_config(cfg: &RunConfig) -> RunConfig {
    let mut cfg = cfg.clone();
    if cfg.strategy.strategy() != Strategy::Implicit {
        cfg.strategy = StrategyConfig::implicit_default();
    }
    if cfg.fidelity_every == 0 {
        cfg.fidelity_every = DEFAULT_PROBE_INTERVAL;
    }
    cfg
}

/// Share of probes with a positive dot product against Implicit, per
/// strategy, counting only probes with a defined cosine.
pub fn positive_sign_rates(record: &RunRecord) -> Vec<(Strategy, usize, usize)> {
    Strategy::ALL
        .iter()
        .map(|&s| {
            let rows = record
                .probes
                .iter()
                .filter(|p| p.strategy == s && p.cosine.is_some());
            let (mut pos, mut total) = (0, 0);
            for p in rows {
                total += 1;
                pos += usize::from(p.dot_sign > 0);
            }
            (s, pos, total)
        })
        .collect()
}
