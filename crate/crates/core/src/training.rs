//! Optimization loop, gradient verification, metric logging, and
//! determinism controls.
//!
//! All randomness (shuffling, dropout) derives from the configured seed
//! and the epoch index, so runs are bitwise reproducible on one machine
//! and a checkpoint resume continues the exact same stream. Batch
//! gradients are computed in fixed-size chunks that are reduced in order,
//! which keeps results independent of worker-thread count.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::error::{Error, Result};
use crate::evaluation;
use crate::model::{
    Checkpoint, ForwardPass, ModelConfig, ModelKind, ModelParameters, TrainState,
};
use crate::objectives::{
    combined_loss_node, maneuver_ce_node, mse_loss_node, nll_loss_node, LossConfig,
};
use crate::pipeline::DatasetSplit;
use crate::types::TrajectorySample;

/// Samples per deterministic gradient chunk; reduction happens in chunk
/// order regardless of how many workers ran them.
const GRAD_CHUNK: usize = 8;

/// Optimizer and schedule settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Global gradient-norm clip; 0 disables clipping.
    pub grad_clip: f64,
    pub loss: LossConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            batch_size: 128,
            epochs: 10,
            seed: 0,
            grad_clip: 10.0,
            loss: LossConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be > 0".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("Adam betas must be in [0, 1)".into()));
        }
        if !(self.grad_clip >= 0.0) {
            return Err(Error::Config("grad_clip must be >= 0".into()));
        }
        self.loss.validate()
    }
}

/// Training phase of one epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    Mse,
    Nll,
}

impl std::fmt::Display for Phase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Phase::Mse => write!(f, "mse"),
            Phase::Nll => write!(f, "nll"),
        }
    }
}

/// One row of the metric log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub phase: Phase,
    pub train_loss: f64,
    /// Validation RMSE at the five horizons; NaN with no validation set.
    pub val_rmse: [f64; 5],
    pub man_acc_lat: f64,
    pub man_acc_lon: f64,
}

/// Result of a training run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters after the last completed epoch.
    pub params: ModelParameters,
    /// Best-validation parameters (lowest RMSE@5s); equals `params` when
    /// there is no validation set.
    pub best: ModelParameters,
    pub best_epoch: Option<usize>,
    pub metrics: Vec<EpochMetrics>,
    /// Optimizer state for exact resumption.
    pub train_state: TrainState,
    /// Set when the loss went non-finite; `params` then holds the last
    /// good state.
    pub diverged: Option<String>,
}

pub(crate) fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
    x ^ (x >> 31)
}

fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(splitmix64(seed ^ splitmix64(epoch as u64 + 1)))
}

/// Record one sample's loss graph: trajectory term on the ground-truth
/// mode (teacher-forced) plus the weighted maneuver cross-entropy for the
/// intent-aware model.
fn sample_loss_tape(
    params: &ModelParameters,
    sample: &TrajectorySample,
    phase: Phase,
    lambda: f64,
    dropout_seed: u64,
) -> Result<(Tape, usize)> {
    let mut pass = ForwardPass::new(params);
    pass.enable_dropout(dropout_seed);
    let trunk = pass.build_trunk(sample)?;
    let mode = match params.kind {
        ModelKind::IntentAware => Some(sample.label),
        ModelKind::Vanilla => None,
    };
    let (mu, sigma) = pass.build_mode_decode(&trunk, mode);
    let mut tape = pass.into_tape();
    let truth = tape.constant(sample.future.mapv(|v| v as f64));
    let traj = match phase {
        Phase::Mse => mse_loss_node(&mut tape, mu, truth),
        Phase::Nll => nll_loss_node(&mut tape, mu, sigma, truth),
    };
    let loss = match (params.kind, trunk.p_lat, trunk.p_lon) {
        (ModelKind::IntentAware, Some(p_lat), Some(p_lon)) => {
            let ce = maneuver_ce_node(&mut tape, p_lat, p_lon, sample.label);
            combined_loss_node(&mut tape, traj, ce, lambda)
        }
        _ => traj,
    };
    Ok((tape, loss))
}

/// Mean gradient and mean loss over one batch. Chunked in fixed order so
/// the floating-point reduction is identical for any thread count.
pub fn batch_gradients(
    params: &ModelParameters,
    batch: &[&TrajectorySample],
    phase: Phase,
    lambda: f64,
    dropout_base: u64,
) -> Result<(Vec<Array2<f64>>, f64)> {
    let chunk_results: Vec<Result<(Vec<Array2<f64>>, f64)>> = batch
        .par_chunks(GRAD_CHUNK)
        .enumerate()
        .map(|(ci, chunk)| {
            let mut sink = params.zero_grads();
            let mut loss_sum = 0.0;
            for (i, sample) in chunk.iter().enumerate() {
                let seed = splitmix64(dropout_base ^ (ci * GRAD_CHUNK + i) as u64);
                let (tape, loss) = sample_loss_tape(params, sample, phase, lambda, seed)?;
                let grads = tape.backward(loss);
                tape.accumulate_param_grads(&grads, 1.0, &mut sink);
                loss_sum += tape.scalar(loss);
            }
            Ok((sink, loss_sum))
        })
        .collect();

    let mut grads = params.zero_grads();
    let mut total_loss = 0.0;
    for r in chunk_results {
        let (sink, loss_sum) = r?;
        for (g, s) in grads.iter_mut().zip(sink.iter()) {
            *g += s;
        }
        total_loss += loss_sum;
    }
    let n = batch.len() as f64;
    for g in &mut grads {
        *g /= n;
    }
    Ok((grads, total_loss / n))
}

/// Adam with bias correction and optional global-norm clipping.
#[derive(Debug, Clone)]
pub struct Adam {
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
    step: u64,
}

impl Adam {
    pub fn new(params: &ModelParameters) -> Self {
        Adam {
            m: params.zero_grads(),
            v: params.zero_grads(),
            step: 0,
        }
    }

    pub fn from_state(state: &TrainState) -> Self {
        Adam {
            m: state.adam_m.clone(),
            v: state.adam_v.clone(),
            step: state.step,
        }
    }

    pub fn state(&self, epoch: u64) -> TrainState {
        TrainState {
            epoch,
            step: self.step,
            adam_m: self.m.clone(),
            adam_v: self.v.clone(),
        }
    }

    pub fn step(&mut self, params: &mut ModelParameters, grads: &mut [Array2<f64>], cfg: &TrainConfig) {
        if cfg.grad_clip > 0.0 {
            let norm_sq: f64 = grads.iter().map(|g| g.iter().map(|x| x * x).sum::<f64>()).sum();
            let norm = norm_sq.sqrt();
            if norm > cfg.grad_clip {
                let scale = cfg.grad_clip / norm;
                for g in grads.iter_mut() {
                    *g *= scale;
                }
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        for i in 0..grads.len() {
            let g = &grads[i];
            self.m[i] = &self.m[i] * cfg.beta1 + g * (1.0 - cfg.beta1);
            self.v[i] = &self.v[i] * cfg.beta2 + &(g * g) * (1.0 - cfg.beta2);
            let update = ndarray::Zip::from(&self.m[i])
                .and(&self.v[i])
                .map_collect(|&m, &v| {
                    let mhat = m / bc1;
                    let vhat = v / bc2;
                    cfg.learning_rate * mhat / (vhat.sqrt() + cfg.adam_eps)
                });
            *params.tensor_mut(i) -= &update;
        }
    }
}

/// Train a fresh model of `kind` on the split.
pub fn train(
    split: &DatasetSplit,
    kind: ModelKind,
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    let params = ModelParameters::init(kind, model_cfg.clone(), cfg.seed)?;
    let adam = Adam::new(&params);
    train_loop(split, params, adam, 0, cfg)
}

/// Resume training from a checkpoint that carries optimizer state. With
/// the same seed and data this reproduces the metrics a straight run
/// would have produced from that epoch on.
pub fn resume(split: &DatasetSplit, checkpoint: Checkpoint, cfg: &TrainConfig) -> Result<TrainOutcome> {
    let state = checkpoint
        .train_state
        .ok_or_else(|| Error::Checkpoint("checkpoint has no optimizer state to resume".into()))?;
    let adam = Adam::from_state(&state);
    train_loop(split, checkpoint.params, adam, state.epoch as usize, cfg)
}

fn train_loop(
    split: &DatasetSplit,
    mut params: ModelParameters,
    mut adam: Adam,
    start_epoch: usize,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if split.train.is_empty() {
        return Err(Error::validation("training set is empty"));
    }

    let mut metrics = Vec::new();
    let mut best: Option<(f64, usize, ModelParameters)> = None;
    let mut diverged = None;

    'epochs: for epoch in start_epoch..cfg.epochs {
        let phase = if cfg.loss.in_warmup(epoch) {
            Phase::Mse
        } else {
            Phase::Nll
        };
        let mut order: Vec<usize> = (0..split.train.len()).collect();
        order.shuffle(&mut epoch_rng(cfg.seed, epoch));

        let snapshot = params.clone();
        let snapshot_state = adam.state(epoch as u64);
        let mut loss_sum = 0.0;
        let mut seen = 0usize;
        for (bi, batch_idx) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<&TrajectorySample> =
                batch_idx.iter().map(|&i| &split.train[i]).collect();
            let dropout_base = splitmix64(cfg.seed ^ ((epoch as u64) << 24) ^ (bi as u64 + 1));
            let (mut grads, loss) =
                batch_gradients(&params, &batch, phase, cfg.loss.lambda, dropout_base)?;
            if !loss.is_finite() {
                params = snapshot;
                adam = Adam::from_state(&snapshot_state);
                diverged = Some(format!(
                    "loss became non-finite in epoch {epoch}, batch {bi}; reverted to end of epoch {}",
                    epoch.saturating_sub(1)
                ));
                break 'epochs;
            }
            adam.step(&mut params, &mut grads, cfg);
            if params.has_non_finite() {
                params = snapshot;
                adam = Adam::from_state(&snapshot_state);
                diverged = Some(format!(
                    "parameters became non-finite in epoch {epoch}, batch {bi}"
                ));
                break 'epochs;
            }
            loss_sum += loss * batch.len() as f64;
            seen += batch.len();
        }
        let train_loss = loss_sum / seen as f64;

        let (val_rmse, acc_lat, acc_lon) = if split.validation.is_empty() {
            ([f64::NAN; 5], f64::NAN, f64::NAN)
        } else {
            let report = evaluation::evaluate(&params, &split.validation)?;
            let mut rmse = [f64::NAN; 5];
            rmse.copy_from_slice(&report.rmse);
            (
                rmse,
                report.maneuver_acc_lateral,
                report.maneuver_acc_longitudinal,
            )
        };

        if !split.validation.is_empty() {
            let score = val_rmse[4];
            if best.as_ref().map_or(true, |(b, _, _)| score < *b) {
                best = Some((score, epoch, params.clone()));
            }
        }

        metrics.push(EpochMetrics {
            epoch,
            phase,
            train_loss,
            val_rmse,
            man_acc_lat: acc_lat,
            man_acc_lon: acc_lon,
        });
    }

    let train_state = adam.state(metrics.last().map(|m| m.epoch as u64 + 1).unwrap_or(start_epoch as u64));
    let (best_epoch, best_params) = match best {
        Some((_, e, p)) => (Some(e), p),
        None => (None, params.clone()),
    };
    Ok(TrainOutcome {
        params,
        best: best_params,
        best_epoch,
        metrics,
        train_state,
        diverged,
    })
}

/// Render the metric log as the CSV format written next to checkpoints.
pub fn metrics_to_csv(metrics: &[EpochMetrics]) -> String {
    let mut out = String::from(
        "epoch,phase,train_loss,val_rmse_1s,val_rmse_2s,val_rmse_3s,val_rmse_4s,val_rmse_5s,man_acc_lat,man_acc_lon\n",
    );
    for m in metrics {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            m.epoch,
            m.phase,
            m.train_loss,
            m.val_rmse[0],
            m.val_rmse[1],
            m.val_rmse[2],
            m.val_rmse[3],
            m.val_rmse[4],
            m.man_acc_lat,
            m.man_acc_lon
        ));
    }
    out
}

/// Outcome of one gradient verification run.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// Worst error over all probed entries: relative where the analytic
    /// gradient is above 1e-8 in magnitude, absolute below that.
    pub max_rel_error: f64,
    pub checked: usize,
    /// Worst error per parameter tensor, in construction order.
    pub per_group_worst: Vec<(String, f64)>,
}

/// Compare the analytic gradient of the combined NLL-phase loss against
/// central finite differences (step 1e-4) on >= `min_probes` entries
/// spanning every parameter tensor.
pub fn gradient_check(
    params: &ModelParameters,
    sample: &TrajectorySample,
    loss_cfg: &LossConfig,
) -> Result<GradCheckReport> {
    gradient_check_impl(params, sample, loss_cfg, 200, None)
}

pub(crate) fn gradient_check_impl(
    params: &ModelParameters,
    sample: &TrajectorySample,
    loss_cfg: &LossConfig,
    min_probes: usize,
    corrupt_tensor: Option<usize>,
) -> Result<GradCheckReport> {
    const H: f64 = 1e-4;
    let loss_of = |p: &ModelParameters| -> Result<f64> {
        let (tape, loss) = sample_loss_tape(p, sample, Phase::Nll, loss_cfg.lambda, 0)?;
        Ok(tape.scalar(loss))
    };

    // analytic gradient in one backward pass
    let (tape, loss) = sample_loss_tape(params, sample, Phase::Nll, loss_cfg.lambda, 0)?;
    let node_grads = tape.backward(loss);
    let mut analytic = params.zero_grads();
    tape.accumulate_param_grads(&node_grads, 1.0, &mut analytic);
    if let Some(idx) = corrupt_tensor {
        analytic[idx] += 1.0;
    }

    // probe entries: at least two per tensor, topped up round-robin
    let mut rng = ChaCha8Rng::seed_from_u64(0x6ead_c4ec);
    let n_tensors = params.num_tensors();
    let per_tensor = (min_probes / n_tensors + 1).max(2);
    let mut probe_counts = vec![0usize; n_tensors];
    for (idx, count) in probe_counts.iter_mut().enumerate() {
        let dim = params.tensor(idx).dim();
        *count = per_tensor.min(dim.0 * dim.1);
    }
    assert!(
        probe_counts.iter().all(|&c| c >= 1),
        "every parameter group must be probed"
    );

    // one probe = central differences at steps H and H/2; if the two
    // estimates disagree the loss is not smooth at this point (a LeakyReLU
    // kink inside the step), so the FD oracle is invalid there and the
    // entry is resampled
    let mut work = params.clone();
    let probe = |work: &mut ModelParameters, idx: usize, r: usize, c: usize| -> Result<Option<f64>> {
        let orig = work.tensor(idx)[(r, c)];
        let mut central = |h: f64| -> Result<f64> {
            work.tensor_mut(idx)[(r, c)] = orig + h;
            let up = loss_of(work)?;
            work.tensor_mut(idx)[(r, c)] = orig - h;
            let down = loss_of(work)?;
            work.tensor_mut(idx)[(r, c)] = orig;
            Ok((up - down) / (2.0 * h))
        };
        let fd_full = central(H)?;
        let fd_half = central(H / 2.0)?;
        if (fd_full - fd_half).abs() / fd_full.abs().max(fd_half.abs()).max(1e-8) > 1e-3 {
            return Ok(None); // non-smooth at step scale
        }
        Ok(Some(fd_half))
    };

    let mut max_err = 0.0f64;
    let mut checked = 0usize;
    let mut per_group = vec![0.0f64; n_tensors];
    for idx in 0..n_tensors {
        let dim = params.tensor(idx).dim();
        let mut done = 0;
        let mut attempts = 0;
        while done < probe_counts[idx] && attempts < probe_counts[idx] * 10 {
            use rand::Rng;
            attempts += 1;
            let (r, c) = (rng.random_range(0..dim.0), rng.random_range(0..dim.1));
            let Some(fd) = probe(&mut work, idx, r, c)? else {
                continue;
            };
            let a = analytic[idx][(r, c)];
            let err = if a.abs() < 1e-8 {
                (a - fd).abs()
            } else {
                (a - fd).abs() / a.abs()
            };
            max_err = max_err.max(err);
            per_group[idx] = per_group[idx].max(err);
            done += 1;
            checked += 1;
        }
        assert!(done >= 1, "tensor {} could not be probed", params.name(idx));
    }

    Ok(GradCheckReport {
        max_rel_error: max_err,
        checked,
        per_group_worst: per_group
            .into_iter()
            .enumerate()
            .map(|(i, e)| (params.name(i).to_string(), e))
            .collect(),
    })
}
