//! End-to-end classifier training: a DEQ cell followed by a linear readout,
//! softmax cross-entropy, and SGD with momentum.

use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::backward::{grads_from_adjoint, strategy_dispatch, Strategy, StrategyConfig};
use crate::cell::{CellKind, CellParams, ParamGrads};
use crate::data::Dataset;
use crate::error::{check_dim, Error, Result};
use crate::fixed_point::{broyden_solve, FixedPointSolution, SolverConfig};
use crate::linalg::{cosine_similarity, Matrix, Vector};

/// Linear readout `logits = R z + c`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReadoutParams {
    pub r: Matrix,
    pub c: Vector,
}

impl ReadoutParams {
    pub fn logits(&self, z: &Vector) -> Result<Vector> {
        Ok(self.r.matvec(z)?.add(&self.c))
    }

    pub fn num_classes(&self) -> usize {
        self.c.dim()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub cell: CellParams,
    pub readout: ReadoutParams,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub d_z: usize,
    pub kind: CellKind,
    /// Spectral-norm bound applied to `W` at initialization.
    pub gamma: f64,
    /// Standard deviation of the input weights `U`.
    pub input_scale: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_z: 32,
            kind: CellKind::Tanh,
            gamma: 0.6,
            input_scale: 8.0,
        }
    }
}

impl Model {
    /// Shape checks for a model assembled by hand or loaded from disk.
    pub fn validate(&self) -> Result<()> {
        self.cell.validate()?;
        check_dim("readout: R columns", self.cell.d_z(), self.readout.r.cols())?;
        check_dim(
            "readout: R rows",
            self.readout.c.dim(),
            self.readout.r.rows(),
        )?;
        if self.readout.c.dim() == 0 {
            return Err(Error::Validation(
                "readout must have at least one class".into(),
            ));
        }
        Ok(())
    }

    pub fn init(d_x: usize, num_classes: usize, cfg: &ModelConfig, seed: u64) -> Result<Self> {
        if cfg.d_z == 0 || d_x == 0 || num_classes == 0 {
            return Err(Error::InvalidConfig(
                "model dimensions must be positive".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cell =
            CellParams::random(cfg.kind, cfg.d_z, d_x, cfg.gamma, cfg.input_scale, &mut rng)?;
        let r_dist = Normal::new(0.0, 1.0 / (cfg.d_z as f64).sqrt()).expect("positive std");
        let r = Matrix::from_fn(num_classes, cfg.d_z, |_, _| r_dist.sample(&mut rng));
        Ok(Model {
            cell,
            readout: ReadoutParams {
                r,
                c: Vector::zeros(num_classes),
            },
        })
    }
}

/// Gradients (or momentum buffers) for every trainable tensor of a [`Model`].
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGrads {
    pub cell: ParamGrads,
    pub r: Matrix,
    pub c: Vector,
}

impl ModelGrads {
    pub fn zeros_like(model: &Model) -> Self {
        ModelGrads {
            cell: ParamGrads::zeros_like(&model.cell),
            r: Matrix::zeros(model.readout.r.rows(), model.readout.r.cols()),
            c: Vector::zeros(model.readout.c.dim()),
        }
    }

    pub fn axpy(&mut self, alpha: f64, other: &ModelGrads) {
        self.cell.axpy(alpha, &other.cell);
        self.r.axpy(alpha, &other.r);
        self.c.axpy(alpha, &other.c);
    }

    pub fn scale(&mut self, alpha: f64) {
        self.cell.scale(alpha);
        self.r.scale_in_place(alpha);
        self.c.as_mut_slice().iter_mut().for_each(|v| *v *= alpha);
    }

    /// Cell gradients followed by `R` row-major and `c`.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = self.cell.to_flat();
        out.extend_from_slice(self.r.as_slice());
        out.extend_from_slice(self.c.as_slice());
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PretrainConfig {
    pub enabled: bool,
    pub unroll_depth: usize,
    pub epochs: usize,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            enabled: false,
            unroll_depth: 8,
            epochs: 10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub seed: u64,
    pub model: ModelConfig,
    pub strategy: StrategyConfig,
    pub solver: SolverConfig,
    pub pretrain: PretrainConfig,
    /// Steps between gradient-fidelity probes; 0 disables probing.
    pub fidelity_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 200,
            batch_size: 64,
            learning_rate: 0.01,
            momentum: 0.9,
            seed: 0,
            model: ModelConfig::default(),
            strategy: StrategyConfig::Gdeq,
            solver: SolverConfig::default(),
            pretrain: PretrainConfig::default(),
            fidelity_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidConfig(msg));
        if self.epochs < 1 {
            return fail("epochs must be at least 1".into());
        }
        if self.batch_size < 1 {
            return fail("batch_size must be at least 1".into());
        }
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return fail(format!(
                "learning_rate must be non-negative, got {}",
                self.learning_rate
            ));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return fail(format!(
                "momentum must lie in [0, 1), got {}",
                self.momentum
            ));
        }
        if self.model.d_z < 1 {
            return fail("model.d_z must be at least 1".into());
        }
        if self.pretrain.enabled && (self.pretrain.unroll_depth < 1 || self.pretrain.epochs < 1) {
            return fail("pretrain.unroll_depth and pretrain.epochs must be at least 1".into());
        }
        self.strategy.validate()?;
        self.solver.validate()
    }

    /// Strategies compared by fidelity probes: all four, with this run's
    /// hyper-parameters for its own strategy and defaults for the rest.
    pub fn probe_strategies(&self) -> Vec<StrategyConfig> {
        Strategy::ALL
            .iter()
            .map(|&s| {
                if self.strategy.strategy() == s {
                    self.strategy
                } else {
                    s.default_config()
                }
            })
            .collect()
    }
}

/// Solves for `z*` from a zero initial state and applies the readout.
pub fn forward_predict(
    model: &Model,
    x: &Vector,
    solver: &SolverConfig,
) -> Result<(Vector, FixedPointSolution)> {
    let z0 = Vector::zeros(model.cell.d_z());
    let sol = broyden_solve(&model.cell, x, &z0, solver)?;
    let logits = model.readout.logits(&sol.z_star)?;
    Ok((logits, sol))
}

/// `(−log softmax(logits)[label], softmax(logits) − onehot(label))`.
pub fn softmax_xent(logits: &Vector, label: usize) -> Result<(f64, Vector)> {
    if label >= logits.dim() {
        return Err(Error::Validation(format!(
            "label {label} out of range for {} classes",
            logits.dim()
        )));
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    let loss = sum.ln() - (logits[label] - max);
    let mut grad = Vector::from(exps.into_iter().map(|e| e / sum).collect::<Vec<_>>());
    grad[label] -= 1.0;
    Ok((loss, grad))
}

/// Aggregate counters from one optimizer step.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StepMetrics {
    /// Samples that contributed to the update.
    pub samples: usize,
    pub diverged: usize,
    pub loss_sum: f64,
    pub correct: usize,
    pub fwd_iters: usize,
    pub fwd_converged: usize,
    pub vjps: usize,
    pub adjoint_unconverged: usize,
}

impl StepMetrics {
    pub fn mean_loss(&self) -> f64 {
        self.loss_sum / self.samples.max(1) as f64
    }

    fn merge(&mut self, other: &StepMetrics) {
        self.samples += other.samples;
        self.diverged += other.diverged;
        self.loss_sum += other.loss_sum;
        self.correct += other.correct;
        self.fwd_iters += other.fwd_iters;
        self.fwd_converged += other.fwd_converged;
        self.vjps += other.vjps;
        self.adjoint_unconverged += other.adjoint_unconverged;
    }
}

/// Batch-averaged gradients under `strategy`. Samples whose forward solve
/// diverges are dropped from the average and counted.
pub fn batch_gradients(
    model: &Model,
    batch: &[(&Vector, usize)],
    strategy: &StrategyConfig,
    solver: &SolverConfig,
) -> Result<(ModelGrads, StepMetrics)> {
    if batch.is_empty() {
        return Err(Error::Validation("empty batch".into()));
    }
    let mut grads = ModelGrads::zeros_like(model);
    let mut m = StepMetrics::default();
    for &(x, label) in batch {
        let (logits, sol) = match forward_predict(model, x, solver) {
            Ok(out) => out,
            Err(Error::Divergence { .. }) => {
                m.diverged += 1;
                continue;
            }
            Err(e) => return Err(e),
        };
        let (loss, dlogits) = softmax_xent(&logits, label)?;
        if !loss.is_finite() {
            m.diverged += 1;
            continue;
        }
        let upstream = model.readout.r.matvec_transpose(&dlogits)?;
        let lin = model.cell.linearize(&sol.z_star, x)?;
        let adj = strategy_dispatch(strategy, &lin, &sol, &upstream)?;
        let (cell_grads, _) = grads_from_adjoint(&lin, &adj)?;
        if !cell_grads.is_finite() {
            m.diverged += 1;
            continue;
        }

        grads.cell.axpy(1.0, &cell_grads);
        grads.r.add_outer(1.0, &dlogits, &sol.z_star);
        grads.c.axpy(1.0, &dlogits);

        m.samples += 1;
        m.loss_sum += loss;
        m.correct += usize::from(logits.argmax() == label);
        m.fwd_iters += sol.iterations;
        m.fwd_converged += usize::from(sol.converged);
        m.vjps += adj.vjp_count;
        m.adjoint_unconverged += usize::from(!adj.converged);
    }
    if m.samples == 0 {
        return Err(Error::BatchDiverged(m.diverged));
    }
    grads.scale(1.0 / m.samples as f64);
    Ok((grads, m))
}

/// `velocity ← μ·velocity + g`, `θ ← θ − lr·velocity`.
pub fn sgd_momentum_update(
    model: &mut Model,
    velocity: &mut ModelGrads,
    grads: &ModelGrads,
    lr: f64,
    momentum: f64,
) {
    velocity.scale(momentum);
    velocity.axpy(1.0, grads);
    model.cell.apply_update(-lr, &velocity.cell);
    model.readout.r.axpy(-lr, &velocity.r);
    model.readout.c.axpy(-lr, &velocity.c);
}

/// One optimizer step on `batch` using the configured backward strategy.
pub fn train_step(
    model: &mut Model,
    velocity: &mut ModelGrads,
    batch: &[(&Vector, usize)],
    cfg: &TrainConfig,
) -> Result<StepMetrics> {
    let (grads, metrics) = batch_gradients(model, batch, &cfg.strategy, &cfg.solver)?;
    sgd_momentum_update(model, velocity, &grads, cfg.learning_rate, cfg.momentum);
    Ok(metrics)
}

/// States `z_0 = 0, z_1, …, z_depth` of the weight-tied explicit network.
pub fn unrolled_forward(cell: &CellParams, x: &Vector, depth: usize) -> Result<Vec<Vector>> {
    let injection = cell.input_injection(x)?;
    let mut states = Vec::with_capacity(depth + 1);
    states.push(Vector::zeros(cell.d_z()));
    for t in 0..depth {
        let next = cell.forward_injected(&states[t], &injection)?;
        states.push(next);
    }
    Ok(states)
}

/// Loss, logits and exact backpropagated gradients of the depth-`depth`
/// unrolled network for one sample.
pub fn unrolled_loss_and_grads(
    model: &Model,
    x: &Vector,
    label: usize,
    depth: usize,
) -> Result<(f64, Vector, ModelGrads)> {
    let states = unrolled_forward(&model.cell, x, depth)?;
    let top = &states[depth];
    let logits = model.readout.logits(top)?;
    let (loss, dlogits) = softmax_xent(&logits, label)?;

    let mut grads = ModelGrads::zeros_like(model);
    grads.r.add_outer(1.0, &dlogits, top);
    grads.c.axpy(1.0, &dlogits);

    // delta holds ∂ℓ/∂z_{t+1}
    let mut delta = model.readout.r.matvec_transpose(&dlogits)?;
    for t in (0..depth).rev() {
        let lin = model.cell.linearize(&states[t], x)?;
        lin.accumulate_vjp_params(&delta, 1.0, &mut grads.cell)?;
        if t > 0 {
            delta = lin.vjp_state(&delta)?;
        }
    }
    Ok((loss, logits, grads))
}

/// Trains the unrolled weight-tied network for `cfg.pretrain.epochs` epochs
/// with the same loss and optimizer as [`train_step`]. Returns the mean
/// training loss of each epoch.
pub fn pretrain_unrolled(
    model: &mut Model,
    dataset: &Dataset,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<f64>> {
    check_dim("pretrain: input dimension", model.cell.d_x(), dataset.dim())?;
    let depth = cfg.pretrain.unroll_depth;
    let mut velocity = ModelGrads::zeros_like(model);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut losses = Vec::with_capacity(cfg.pretrain.epochs);
    for _ in 0..cfg.pretrain.epochs {
        order.shuffle(rng);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let mut grads = ModelGrads::zeros_like(model);
            for &i in chunk {
                let (x, label) = dataset.sample(i);
                let (loss, _, g) = unrolled_loss_and_grads(model, x, label, depth)?;
                loss_sum += loss;
                grads.axpy(1.0, &g);
            }
            grads.scale(1.0 / chunk.len() as f64);
            sgd_momentum_update(
                model,
                &mut velocity,
                &grads,
                cfg.learning_rate,
                cfg.momentum,
            );
        }
        losses.push(loss_sum / dataset.len().max(1) as f64);
    }
    Ok(losses)
}

/// One strategy's agreement with the Implicit reference gradient.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeResult {
    pub strategy: Strategy,
    /// `None` when either gradient is zero or no forward solve converged.
    pub cosine: Option<f64>,
    /// Sign of `⟨g_strategy, g_implicit⟩`; 0 when undefined.
    pub dot_sign: i8,
}

/// Compares the batch gradient of the cell parameters `(W, U, b)` under each
/// strategy with the Implicit one, using only samples whose forward solve
/// converged. Parameters are not modified.
pub fn gradient_fidelity_probe(
    model: &Model,
    batch: &[(&Vector, usize)],
    strategies: &[StrategyConfig],
    solver: &SolverConfig,
) -> Result<Vec<ProbeResult>> {
    let mut configs: Vec<StrategyConfig> = strategies.to_vec();
    let reference = match configs
        .iter()
        .position(|s| s.strategy() == Strategy::Implicit)
    {
        Some(i) => i,
        None => {
            configs.insert(0, StrategyConfig::implicit_default());
            0
        }
    };

    let mut totals: Vec<ParamGrads> = configs
        .iter()
        .map(|_| ParamGrads::zeros_like(&model.cell))
        .collect();
    let mut used = 0usize;
    for &(x, label) in batch {
        let (logits, sol) = match forward_predict(model, x, solver) {
            Ok(out) => out,
            Err(Error::Divergence { .. }) => continue,
            Err(e) => return Err(e),
        };
        if !sol.converged {
            continue;
        }
        let (_, dlogits) = softmax_xent(&logits, label)?;
        let upstream = model.readout.r.matvec_transpose(&dlogits)?;
        let lin = model.cell.linearize(&sol.z_star, x)?;
        for (cfg, total) in configs.iter().zip(totals.iter_mut()) {
            let adj = strategy_dispatch(cfg, &lin, &sol, &upstream)?;
            lin.accumulate_vjp_params(&adj.u, 1.0, total)?;
        }
        used += 1;
    }

    let flats: Vec<Vec<f64>> = totals.iter().map(ParamGrads::to_flat).collect();
    let reference_flat = &flats[reference];
    Ok(configs
        .iter()
        .zip(&flats)
        .map(|(cfg, flat)| {
            let cosine = if used == 0 {
                None
            } else {
                cosine_similarity(flat, reference_flat)
            };
            let dot_sign = match cosine {
                Some(c) if c > 0.0 => 1,
                Some(c) if c < 0.0 => -1,
                _ => 0,
            };
            ProbeResult {
                strategy: cfg.strategy(),
                cosine,
                dot_sign,
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalResult {
    pub accuracy: f64,
    pub mean_iterations: f64,
    pub converged_rate: f64,
}

/// Argmax accuracy (ties toward the lower class index). Diverged solves
/// count as misclassified.
pub fn evaluate(model: &Model, dataset: &Dataset, solver: &SolverConfig) -> Result<EvalResult> {
    if dataset.is_empty() {
        return Err(Error::Validation(
            "cannot evaluate on an empty dataset".into(),
        ));
    }
    let mut correct = 0usize;
    let mut iterations = 0usize;
    let mut converged = 0usize;
    let mut solved = 0usize;
    for (x, &label) in dataset.features.iter().zip(&dataset.labels) {
        match forward_predict(model, x, solver) {
            Ok((logits, sol)) => {
                solved += 1;
                iterations += sol.iterations;
                converged += usize::from(sol.converged);
                correct += usize::from(logits.argmax() == label);
            }
            Err(Error::Divergence { .. }) => {}
            Err(e) => return Err(e),
        }
    }
    let n = dataset.len() as f64;
    Ok(EvalResult {
        accuracy: correct as f64 / n,
        mean_iterations: iterations as f64 / solved.max(1) as f64,
        converged_rate: converged as f64 / n,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRow {
    pub epoch: usize,
    /// Cumulative training wall time (pre-training and optimizer steps only).
    pub wall_s: f64,
    pub train_loss: f64,
    pub train_acc: f64,
    pub test_acc: f64,
    pub fwd_iters_mean: f64,
    pub bwd_vjps_mean: f64,
    pub fwd_conv_rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeRow {
    pub step: usize,
    pub strategy: Strategy,
    pub cosine: Option<f64>,
    pub dot_sign: i8,
}

pub const CURVES_HEADER: &str =
    "epoch,wall_s,train_loss,train_acc,test_acc,fwd_iters_mean,bwd_vjps_mean,fwd_conv_rate";
pub const PROBES_HEADER: &str = "step,strategy,cosine,dot_sign";

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunRecord {
    pub epochs: Vec<EpochRow>,
    pub probes: Vec<ProbeRow>,
}

impl RunRecord {
    pub fn curves_csv(&self) -> String {
        let mut out = String::from(CURVES_HEADER);
        out.push('\n');
        for r in &self.epochs {
            out.push_str(&format!(
                "{},{:.6},{:?},{:?},{:?},{:?},{:?},{:?}\n",
                r.epoch,
                r.wall_s,
                r.train_loss,
                r.train_acc,
                r.test_acc,
                r.fwd_iters_mean,
                r.bwd_vjps_mean,
                r.fwd_conv_rate
            ));
        }
        out
    }

    pub fn probes_csv(&self) -> String {
        let mut out = String::from(PROBES_HEADER);
        out.push('\n');
        for p in &self.probes {
            let cosine = p
                .cosine
                .map_or_else(|| "NaN".to_string(), |c| format!("{c:?}"));
            out.push_str(&format!(
                "{},{},{},{}\n",
                p.step, p.strategy, cosine, p.dot_sign
            ));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RunTotals {
    pub wall_s: f64,
    pub forward_iterations: u64,
    pub vjps: u64,
    pub steps: u64,
    pub diverged_samples: u64,
}

/// Stateful training driver: owns the model, momentum buffers, shuffling
/// RNG and the accumulated [`RunRecord`].
#[derive(Debug)]
pub struct Trainer {
    model: Model,
    velocity: ModelGrads,
    cfg: TrainConfig,
    rng: ChaCha8Rng,
    epoch: usize,
    steps: usize,
    elapsed: Duration,
    record: RunRecord,
    totals: RunTotals,
    pretrain_losses: Vec<f64>,
}

impl Trainer {
    pub fn new(model: Model, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let velocity = ModelGrads::zeros_like(&model);
        Ok(Trainer {
            model,
            velocity,
            rng: ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x5eed)),
            cfg,
            epoch: 0,
            steps: 0,
            elapsed: Duration::ZERO,
            record: RunRecord::default(),
            totals: RunTotals::default(),
            pretrain_losses: Vec::new(),
        })
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn into_model(self) -> Model {
        self.model
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn record(&self) -> &RunRecord {
        &self.record
    }

    pub fn totals(&self) -> RunTotals {
        RunTotals {
            wall_s: self.elapsed.as_secs_f64(),
            ..self.totals
        }
    }

    pub fn pretrain_losses(&self) -> &[f64] {
        &self.pretrain_losses
    }

    /// Unrolled pre-training; its wall time counts toward the run.
    pub fn pretrain(&mut self, train: &Dataset) -> Result<()> {
        let start = Instant::now();
        let losses = pretrain_unrolled(&mut self.model, train, &self.cfg, &mut self.rng)?;
        self.elapsed += start.elapsed();
        self.pretrain_losses.extend(losses);
        Ok(())
    }

    /// One pass over `train` in shuffled mini-batches, then evaluation on
    /// `test`. Probe and evaluation time are excluded from the wall clock.
    pub fn run_epoch(&mut self, train: &Dataset, test: &Dataset) -> Result<EpochRow> {
        check_dim(
            "training data: input dimension",
            self.model.cell.d_x(),
            train.dim(),
        )?;
        self.epoch += 1;
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut self.rng);
        let probe_strategies = self.cfg.probe_strategies();

        let mut epoch_metrics = StepMetrics::default();
        let mut batches = 0usize;
        let mut diverged_batches = 0usize;
        for chunk in order.chunks(self.cfg.batch_size) {
            let batch: Vec<(&Vector, usize)> = chunk.iter().map(|&i| train.sample(i)).collect();
            if self.cfg.fidelity_every > 0 && self.steps.is_multiple_of(self.cfg.fidelity_every) {
                let results = gradient_fidelity_probe(
                    &self.model,
                    &batch,
                    &probe_strategies,
                    &self.cfg.solver,
                )?;
                self.record
                    .probes
                    .extend(results.into_iter().map(|r| ProbeRow {
                        step: self.steps,
                        strategy: r.strategy,
                        cosine: r.cosine,
                        dot_sign: r.dot_sign,
                    }));
            }

            batches += 1;
            let start = Instant::now();
            let outcome = train_step(&mut self.model, &mut self.velocity, &batch, &self.cfg);
            self.elapsed += start.elapsed();
            self.steps += 1;
            match outcome {
                Ok(m) => epoch_metrics.merge(&m),
                Err(Error::BatchDiverged(n)) => {
                    diverged_batches += 1;
                    epoch_metrics.diverged += n;
                }
                Err(e) => return Err(e),
            }
        }
        self.totals.steps = self.steps as u64;
        self.totals.forward_iterations += epoch_metrics.fwd_iters as u64;
        self.totals.vjps += epoch_metrics.vjps as u64;
        self.totals.diverged_samples += epoch_metrics.diverged as u64;
        if diverged_batches == batches {
            return Err(Error::EpochDiverged(self.epoch));
        }

        let eval = evaluate(&self.model, test, &self.cfg.solver)?;
        let used = epoch_metrics.samples.max(1) as f64;
        let row = EpochRow {
            epoch: self.epoch,
            wall_s: self.elapsed.as_secs_f64(),
            train_loss: epoch_metrics.mean_loss(),
            train_acc: epoch_metrics.correct as f64 / train.len() as f64,
            test_acc: eval.accuracy,
            fwd_iters_mean: epoch_metrics.fwd_iters as f64 / used,
            bwd_vjps_mean: epoch_metrics.vjps as f64 / used,
            fwd_conv_rate: epoch_metrics.fwd_converged as f64 / train.len() as f64,
        };
        self.record.epochs.push(row.clone());
        Ok(row)
    }
}

/// Runs optional pre-training followed by `cfg.epochs` epochs.
pub fn train(
    model: Model,
    train_set: &Dataset,
    test_set: &Dataset,
    cfg: &TrainConfig,
) -> Result<Trainer> {
    let mut trainer = Trainer::new(model, *cfg)?;
    if cfg.pretrain.enabled {
        trainer.pretrain(train_set)?;
    }
    for _ in 0..cfg.epochs {
        trainer.run_epoch(train_set, test_set)?;
    }
    Ok(trainer)
}
