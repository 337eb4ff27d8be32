//! Loss terms, the lambda-weighted combination, and the MSE -> NLL
//! schedule.
//!
//! Each loss exists twice: a plain evaluation on arrays (the reference
//! used by evaluation and tests) and a tape-recorded version used for
//! training gradients. A unit test pins the two routes together.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::autodiff::{NodeId, Tape};
use crate::error::{Error, Result};
use crate::types::{GaussianTrajectory, ManeuverDistribution, ManeuverLabel, PredictionOutput};

/// Probability floor applied before logs in the cross-entropy.
pub const PROB_CLAMP: f64 = 1e-12;

const LN_2PI: f64 = 1.8378770664093453; // ln(2*pi)

/// Loss weighting and schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    /// Maneuver-loss weight; 1 is the unscaled baseline.
    pub lambda: f64,
    /// Epochs trained with MSE before switching to NLL.
    pub warmup_epochs: usize,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            lambda: 1.0,
            warmup_epochs: 5,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) {
            return Err(Error::validation("lambda must be >= 0"));
        }
        Ok(())
    }

    /// True while the trajectory term is still MSE.
    pub fn in_warmup(&self, epoch: usize) -> bool {
        epoch < self.warmup_epochs
    }
}

/// Mean over steps of the squared Euclidean position error.
pub fn mse_loss(pred_means: &Array2<f64>, truth: &Array2<f64>) -> Result<f64> {
    if pred_means.dim() != truth.dim() {
        return Err(Error::shape(format!(
            "prediction {:?} vs truth {:?}",
            pred_means.dim(),
            truth.dim()
        )));
    }
    let f = pred_means.nrows() as f64;
    let sum: f64 = (pred_means - truth).iter().map(|d| d * d).sum();
    Ok(sum / f)
}

/// Mean over steps of the diagonal-Gaussian negative log density:
/// ln(2 pi sigma_x sigma_y) + ((dx/sigma_x)^2 + (dy/sigma_y)^2) / 2.
pub fn nll_loss(g: &GaussianTrajectory, truth: &Array2<f64>) -> Result<f64> {
    if g.mu.dim() != truth.dim() {
        return Err(Error::shape("gaussian trajectory length mismatch"));
    }
    if g.sigma.iter().any(|&s| !(s > 0.0)) {
        return Err(Error::validation("nll_loss requires strictly positive sigma"));
    }
    let f = g.mu.nrows() as f64;
    let mut total = 0.0;
    for t in 0..g.mu.nrows() {
        let (sx, sy) = (g.sigma[(t, 0)], g.sigma[(t, 1)]);
        let zx = (truth[(t, 0)] - g.mu[(t, 0)]) / sx;
        let zy = (truth[(t, 1)] - g.mu[(t, 1)]) / sy;
        total += LN_2PI + sx.ln() + sy.ln() + 0.5 * (zx * zx + zy * zy);
    }
    Ok(total / f)
}

/// Cross-entropy over both maneuver axes, probabilities clamped at
/// [`PROB_CLAMP`] before the log.
pub fn maneuver_ce(dist: &ManeuverDistribution, label: ManeuverLabel) -> f64 {
    let pl = dist.p_lateral[label.lateral.index()].max(PROB_CLAMP);
    let po = dist.p_longitudinal[label.longitudinal.index()].max(PROB_CLAMP);
    -pl.ln() - po.ln()
}

/// L = L_traj + lambda * L_maneuver.
pub fn combined_loss(l_traj: f64, l_man: f64, cfg: &LossConfig) -> f64 {
    l_traj + cfg.lambda * l_man
}

/// Trajectory term for the training schedule: MSE on the ground-truth
/// mode during warm-up, NLL on the same mode afterwards.
pub fn trajectory_loss_for_epoch(
    epoch: usize,
    cfg: &LossConfig,
    output: &PredictionOutput,
    truth: &Array2<f64>,
    label: ManeuverLabel,
) -> Result<f64> {
    let mode = output.mode(label);
    if cfg.in_warmup(epoch) {
        mse_loss(&mode.mu, truth)
    } else {
        nll_loss(mode, truth)
    }
}

// --- tape-recorded versions -------------------------------------------

/// MSE between a mu node (F x 2) and a truth constant, as a 1x1 node.
pub fn mse_loss_node(tape: &mut Tape, mu: NodeId, truth: NodeId) -> NodeId {
    let f = tape.value(mu).nrows() as f64;
    let d = tape.sub(mu, truth);
    let dd = tape.mul(d, d);
    let s = tape.sum_all(dd);
    tape.scale(s, 1.0 / f)
}

/// Diagonal-Gaussian NLL of truth under (mu, sigma) nodes, as a 1x1 node.
pub fn nll_loss_node(tape: &mut Tape, mu: NodeId, sigma: NodeId, truth: NodeId) -> NodeId {
    let f = tape.value(mu).nrows() as f64;
    let d = tape.sub(mu, truth);
    let z = tape.div(d, sigma);
    let zz = tape.mul(z, z);
    let quad = tape.sum_all(zz);
    let quad = tape.scale(quad, 0.5 / f);
    let ls = tape.ln(sigma);
    let ls = tape.sum_all(ls);
    let ls = tape.scale(ls, 1.0 / f);
    let sum = tape.add(quad, ls);
    tape.add_const(sum, LN_2PI)
}

/// Cross-entropy of the true label under (p_lat, p_lon) nodes (1x3 each).
pub fn maneuver_ce_node(
    tape: &mut Tape,
    p_lat: NodeId,
    p_lon: NodeId,
    label: ManeuverLabel,
) -> NodeId {
    let pick = |tape: &mut Tape, p: NodeId, idx: usize| {
        let clamped = tape.clamp_min(p, PROB_CLAMP);
        let sel = tape.slice_cols(clamped, idx, 1);
        let ln = tape.ln(sel);
        tape.scale(ln, -1.0)
    };
    let a = pick(tape, p_lat, label.lateral.index());
    let b = pick(tape, p_lon, label.longitudinal.index());
    tape.add(a, b)
}

/// traj + lambda * maneuver as a 1x1 node.
pub fn combined_loss_node(tape: &mut Tape, l_traj: NodeId, l_man: NodeId, lambda: f64) -> NodeId {
    let scaled = tape.scale(l_man, lambda);
    tape.add(l_traj, scaled)
}
