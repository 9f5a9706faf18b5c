use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use deq_bench::backward_bench::run_bench;
use deq_bench::solve_demo::run_demo;
use deq_bench::train::{compare_grads_config, positive_sign_rates, run_training};
use deq_bench::{CliError, RunConfig};

#[derive(Parser)]
#[command(
    name = "deq-bench",
    version,
    about = "Deep equilibrium training experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON run configuration; defaults apply when omitted.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Training seed (overrides `seed`).
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Dotted override such as `strategy.variant=gdeq`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl Common {
    fn load(&self, extra: &[String]) -> Result<RunConfig, CliError> {
        let mut overrides = self.overrides.clone();
        overrides.extend_from_slice(extra);
        if let Some(seed) = self.seed {
            overrides.push(format!("seed={seed}"));
        }
        RunConfig::load(self.config.as_deref(), &overrides)
    }

    fn out_dir(&self, command: &str) -> PathBuf {
        self.out
            .clone()
            .unwrap_or_else(|| PathBuf::from("runs").join(command))
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train a classifier and write curves, probes, checkpoint and manifest.
    Train(Common),
    /// Train with Implicit gradients while probing all strategies against it.
    CompareGrads(Common),
    /// Time each strategy's backward pass on a trained checkpoint.
    BenchBackward {
        #[command(flatten)]
        common: Common,
        /// Timed trials per strategy (at least 10).
        #[arg(long)]
        trials: Option<usize>,
        /// Model checkpoint (overrides `bench.checkpoint`).
        #[arg(long, value_name = "PATH")]
        checkpoint: Option<PathBuf>,
    },
    /// Broyden and Picard residual traces on one cell.
    SolveDemo(Common),
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Train(c) => {
            let cfg = c.load(&[])?;
            let out = c.out_dir("train");
            let outcome = run_training(&cfg, &out, "train")?;
            if let Some(last) = outcome.last_epoch() {
                println!(
                    "done: train_acc {:.4}  test_acc {:.4}  wall {:.2}s",
                    last.train_acc, last.test_acc, outcome.totals.wall_s
                );
            }
            println!("manifest: {}", outcome.manifest_path.display());
        }
        Command::CompareGrads(c) => {
            let cfg = compare_grads_config(&c.load(&[])?);
            let out = c.out_dir("compare-grads");
            let outcome = run_training(&cfg, &out, "compare-grads")?;
            for (s, pos, total) in positive_sign_rates(&outcome.record) {
                println!("{s:>8}: positive dot product in {pos}/{total} probes");
            }
            println!("manifest: {}", outcome.manifest_path.display());
        }
        Command::BenchBackward {
            common,
            trials,
            checkpoint,
        } => {
            let extra: Vec<String> = trials
                .map(|t| format!("bench.trials={t}"))
                .into_iter()
                .collect();
            let cfg = common.load(&extra)?;
            let checkpoint = checkpoint
                .or_else(|| cfg.bench.checkpoint.clone())
                .ok_or_else(|| {
                    CliError::Config(
                        "no checkpoint given (use --checkpoint or bench.checkpoint)".into(),
                    )
                })?;
            let out = common.out_dir("bench-backward");
            let report = run_bench(&cfg, &checkpoint, &out)?;
            for t in &report.strategies {
                println!(
                    "{:>8}: {:.3e} s/backward  {:>5.2} VJPs  speedup {:.2}x",
                    t.strategy.label(),
                    t.mean_s_per_backward,
                    t.vjps_per_backward,
                    t.speedup_vs_implicit
                );
            }
        }
        Command::SolveDemo(c) => {
            let cfg = c.load(&[])?;
            let out = c.out_dir("solve-demo");
            let outcome = run_demo(&cfg, &out)?;
            for (name, sol) in [("broyden", &outcome.broyden), ("picard", &outcome.picard)] {
                println!(
                    "{name:>8}: {} iterations, residual {:.3e}, converged {}",
                    sol.iterations, sol.residual_norm, sol.converged
                );
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
