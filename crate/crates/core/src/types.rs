//! Domain types shared by the pipeline, model, and evaluation: coordinate
//! conventions, the maneuver taxonomy, the social grid, and sample layout.
//!
//! Conventions fixed here:
//! - positions are meters; NGSIM feet are converted once at ingestion
//! - `local_x` is lateral (lane 1 is leftmost), `local_y` is longitudinal
//! - sample features are ego-relative: offsets from the ego position at the
//!   anchor frame, so the ego history ends at (0, 0)

use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Feet-to-meters conversion applied at ingestion.
pub const FT_TO_M: f64 = 0.3048;

/// Raw NGSIM frame period in seconds (10 Hz).
pub const RAW_DT: f64 = 0.1;

/// One raw per-frame observation of one vehicle, already metric.
#[derive(Debug, Clone, PartialEq)]
pub struct VehicleRecord {
    pub vehicle_id: u64,
    /// Integer tick at the raw 10 Hz rate (0.1 s per tick).
    pub frame_id: u64,
    /// Lateral position in meters.
    pub local_x: f64,
    /// Longitudinal position in meters.
    pub local_y: f64,
    /// Lane id in [1, 6] after normalization; lane 1 is leftmost.
    pub lane_id: u32,
    /// Speed in m/s, non-negative.
    pub velocity: f64,
    /// Acceleration in m/s².
    pub acceleration: f64,
}

/// Lateral maneuver class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Lateral {
    /// Lane keeping.
    Lk,
    /// Change to the left lane (lane id decreases).
    Cll,
    /// Change to the right lane (lane id increases).
    Clr,
}

/// Longitudinal maneuver class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Longitudinal {
    Acc,
    Dec,
    Con,
}

impl Lateral {
    pub const ALL: [Lateral; 3] = [Lateral::Lk, Lateral::Cll, Lateral::Clr];

    pub fn index(self) -> usize {
        match self {
            Lateral::Lk => 0,
            Lateral::Cll => 1,
            Lateral::Clr => 2,
        }
    }

    pub fn from_index(i: usize) -> Option<Lateral> {
        Lateral::ALL.get(i).copied()
    }
}

impl Longitudinal {
    pub const ALL: [Longitudinal; 3] = [Longitudinal::Acc, Longitudinal::Dec, Longitudinal::Con];

    pub fn index(self) -> usize {
        match self {
            Longitudinal::Acc => 0,
            Longitudinal::Dec => 1,
            Longitudinal::Con => 2,
        }
    }

    pub fn from_index(i: usize) -> Option<Longitudinal> {
        Longitudinal::ALL.get(i).copied()
    }
}

/// Discrete lateral x longitudinal intention.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ManeuverLabel {
    pub lateral: Lateral,
    pub longitudinal: Longitudinal,
}

impl ManeuverLabel {
    pub fn new(lateral: Lateral, longitudinal: Longitudinal) -> Self {
        ManeuverLabel {
            lateral,
            longitudinal,
        }
    }

    /// All 9 maneuver pairs in mode-index order.
    pub fn all() -> impl Iterator<Item = ManeuverLabel> {
        (0..NUM_MODES).map(|i| mode_from_index(i).unwrap())
    }
}

impl std::fmt::Display for ManeuverLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let la = match self.lateral {
            Lateral::Lk => "LK",
            Lateral::Cll => "CLL",
            Lateral::Clr => "CLR",
        };
        let lo = match self.longitudinal {
            Longitudinal::Acc => "ACC",
            Longitudinal::Dec => "DEC",
            Longitudinal::Con => "CON",
        };
        write!(f, "{la}/{lo}")
    }
}

/// Number of (lateral, longitudinal) mode combinations.
pub const NUM_MODES: usize = 9;

/// Fixed lateral-major mode ordering: index = 3 * lateral + longitudinal.
pub fn mode_index(lateral: Lateral, longitudinal: Longitudinal) -> usize {
    3 * lateral.index() + longitudinal.index()
}

/// Inverse of [`mode_index`]; `None` outside [0, 8].
pub fn mode_from_index(index: usize) -> Option<ManeuverLabel> {
    if index >= NUM_MODES {
        return None;
    }
    Some(ManeuverLabel {
        lateral: Lateral::from_index(index / 3).unwrap(),
        longitudinal: Longitudinal::from_index(index % 3).unwrap(),
    })
}

/// The 3 x 13 social grid around the ego: 3 lane columns (left/same/right)
/// by 13 longitudinal rows, ego at the center row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    /// Lane columns; must be odd so the ego lane is centered.
    pub lanes: usize,
    /// Longitudinal rows; must be odd so the ego row is centered.
    pub cells: usize,
    /// Longitudinal extent of one row in meters (15 ft by default).
    pub cell_length: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            lanes: 3,
            cells: 13,
            cell_length: 4.572,
        }
    }
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        if self.lanes % 2 == 0 || self.lanes == 0 {
            return Err(Error::validation("grid lanes must be odd and positive"));
        }
        if self.cells % 2 == 0 || self.cells == 0 {
            return Err(Error::validation("grid cells must be odd and positive"));
        }
        if !(self.cell_length > 0.0) {
            return Err(Error::validation("grid cell_length must be positive"));
        }
        Ok(())
    }

    /// Total number of cells (39 for the default grid).
    pub fn num_cells(&self) -> usize {
        self.lanes * self.cells
    }

    /// Center row index occupied by the ego (6 for the default grid).
    pub fn ego_row(&self) -> usize {
        self.cells / 2
    }

    /// Center column index for the ego lane (1 for the default grid).
    pub fn ego_col(&self) -> usize {
        self.lanes / 2
    }

    /// Longitudinal coverage around the ego in meters (one-sided).
    pub fn coverage(&self) -> f64 {
        (self.cells as f64 / 2.0) * self.cell_length
    }
}

/// One training or evaluation example.
///
/// Feature arrays are f32 so that dataset files round-trip bit-exactly;
/// the model promotes to f64 internally.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectorySample {
    /// T x D_in ego history, ego-anchor-relative.
    pub ego_history: Array2<f32>,
    /// num_cells x T x D_in neighbor histories, ego-anchor-relative.
    pub neighbor_histories: Array3<f32>,
    /// num_cells x T occupancy; `false` cells carry all-zero features.
    pub neighbor_mask: Array2<bool>,
    /// F x 2 future (x, y), ego-anchor-relative.
    pub future: Array2<f32>,
    pub label: ManeuverLabel,
    pub ego_id: u64,
    pub anchor_frame: u64,
}

impl TrajectorySample {
    pub fn history_len(&self) -> usize {
        self.ego_history.nrows()
    }

    pub fn future_len(&self) -> usize {
        self.future.nrows()
    }

    pub fn feature_dim(&self) -> usize {
        self.ego_history.ncols()
    }

    pub fn num_cells(&self) -> usize {
        self.neighbor_histories.shape()[0]
    }

    /// Check every field invariant: shapes consistent, finite values,
    /// masked-out cells all-zero, future two-dimensional.
    pub fn validate(&self, history_len: usize, future_len: usize) -> Result<()> {
        let t = self.history_len();
        let d = self.feature_dim();
        let cells = self.num_cells();
        if t != history_len {
            return Err(Error::shape(format!(
                "ego history has {t} steps, expected {history_len}"
            )));
        }
        if self.future_len() != future_len {
            return Err(Error::shape(format!(
                "future has {} steps, expected {future_len}",
                self.future_len()
            )));
        }
        if self.future.ncols() != 2 {
            return Err(Error::shape("future must have 2 coordinate columns"));
        }
        if self.neighbor_histories.shape() != [cells, t, d] {
            return Err(Error::shape("neighbor history shape mismatch"));
        }
        if self.neighbor_mask.dim() != (cells, t) {
            return Err(Error::shape("neighbor mask shape mismatch"));
        }
        if self.ego_history.iter().any(|v| !v.is_finite())
            || self.neighbor_histories.iter().any(|v| !v.is_finite())
            || self.future.iter().any(|v| !v.is_finite())
        {
            return Err(Error::validation("non-finite feature value in sample"));
        }
        for c in 0..cells {
            for step in 0..t {
                if !self.neighbor_mask[(c, step)] {
                    for k in 0..d {
                        if self.neighbor_histories[(c, step, k)] != 0.0 {
                            return Err(Error::validation(format!(
                                "masked-out cell {c} step {step} has nonzero features"
                            )));
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

/// Predicted softmax distributions over the two maneuver axes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManeuverDistribution {
    pub p_lateral: [f64; 3],
    pub p_longitudinal: [f64; 3],
}

impl ManeuverDistribution {
    pub fn uniform() -> Self {
        ManeuverDistribution {
            p_lateral: [1.0 / 3.0; 3],
            p_longitudinal: [1.0 / 3.0; 3],
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, p) in [("lateral", &self.p_lateral), ("longitudinal", &self.p_longitudinal)] {
            if p.iter().any(|&x| !(0.0..=1.0).contains(&x)) {
                return Err(Error::validation(format!(
                    "{name} probabilities outside [0, 1]"
                )));
            }
            let sum: f64 = p.iter().sum();
            if (sum - 1.0).abs() > 1e-6 {
                return Err(Error::validation(format!(
                    "{name} probabilities sum to {sum}, expected 1"
                )));
            }
        }
        Ok(())
    }

    pub fn argmax_lateral(&self) -> Lateral {
        Lateral::from_index(argmax3(&self.p_lateral)).unwrap()
    }

    pub fn argmax_longitudinal(&self) -> Longitudinal {
        Longitudinal::from_index(argmax3(&self.p_longitudinal)).unwrap()
    }

    /// Joint probability of one (lateral, longitudinal) pair.
    pub fn joint(&self, label: ManeuverLabel) -> f64 {
        self.p_lateral[label.lateral.index()] * self.p_longitudinal[label.longitudinal.index()]
    }
}

fn argmax3(p: &[f64; 3]) -> usize {
    let mut best = 0;
    for i in 1..3 {
        if p[i] > p[best] {
            best = i;
        }
    }
    best
}

/// Per-step bivariate Gaussian parameters (diagonal covariance) for one mode.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianTrajectory {
    /// F x 2 means (x, y) in meters.
    pub mu: Array2<f64>,
    /// F x 2 standard deviations in meters, strictly positive.
    pub sigma: Array2<f64>,
}

impl GaussianTrajectory {
    pub fn len(&self) -> usize {
        self.mu.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.mu.nrows() == 0
    }

    pub fn validate(&self) -> Result<()> {
        if self.mu.dim() != self.sigma.dim() || self.mu.ncols() != 2 {
            return Err(Error::shape("gaussian trajectory must be F x 2"));
        }
        if self.sigma.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::validation("sigma must be strictly positive"));
        }
        Ok(())
    }
}

/// Full model output for one sample: 9 mode trajectories (lateral-major
/// order) plus the maneuver distributions.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionOutput {
    pub modes: Vec<GaussianTrajectory>,
    pub maneuvers: ManeuverDistribution,
}

impl PredictionOutput {
    pub fn validate(&self) -> Result<()> {
        if self.modes.len() != NUM_MODES {
            return Err(Error::shape(format!(
                "expected {NUM_MODES} modes, got {}",
                self.modes.len()
            )));
        }
        for m in &self.modes {
            m.validate()?;
        }
        self.maneuvers.validate()
    }

    /// The trajectory for one (lateral, longitudinal) pair.
    pub fn mode(&self, label: ManeuverLabel) -> &GaussianTrajectory {
        &self.modes[mode_index(label.lateral, label.longitudinal)]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    #[test]
    fn mode_index_fixed_ordering() {
        assert_eq!(mode_index(Lateral::Lk, Longitudinal::Acc), 0);
        assert_eq!(mode_index(Lateral::Cll, Longitudinal::Dec), 4);
        assert_eq!(mode_index(Lateral::Clr, Longitudinal::Con), 8);
    }

    #[test]
    fn mode_index_bijection() {
        let mut seen = [false; NUM_MODES];
        for la in Lateral::ALL {
            for lo in Longitudinal::ALL {
                let idx = mode_index(la, lo);
                assert!(!seen[idx], "duplicate index {idx}");
                seen[idx] = true;
                let back = mode_from_index(idx).unwrap();
                assert_eq!(back.lateral, la);
                assert_eq!(back.longitudinal, lo);
            }
        }
        assert!(seen.iter().all(|&s| s));
        assert!(mode_from_index(NUM_MODES).is_none());
    }

    #[test]
    fn grid_defaults() {
        let g = GridSpec::default();
        g.validate().unwrap();
        assert_eq!(g.num_cells(), 39);
        assert_eq!(g.ego_row(), 6);
        assert_eq!(g.ego_col(), 1);
        assert!((g.coverage() - 6.5 * 4.572).abs() < 1e-12);
    }

    #[test]
    fn grid_rejects_even_dims() {
        let g = GridSpec {
            lanes: 2,
            ..GridSpec::default()
        };
        assert!(g.validate().is_err());
    }

    #[test]
    fn distribution_validation() {
        let d = ManeuverDistribution::uniform();
        d.validate().unwrap();
        let bad = ManeuverDistribution {
            p_lateral: [0.5, 0.5, 0.5],
            p_longitudinal: [1.0, 0.0, 0.0],
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn sample_validation_rejects_nonzero_masked_cell() {
        let t = 4;
        let d = 2;
        let cells = 39;
        let mut sample = TrajectorySample {
            ego_history: Array2::zeros((t, d)),
            neighbor_histories: ndarray::Array3::zeros((cells, t, d)),
            neighbor_mask: Array2::from_elem((cells, t), false),
            future: Array2::zeros((5, 2)),
            label: ManeuverLabel::new(Lateral::Lk, Longitudinal::Con),
            ego_id: 1,
            anchor_frame: 10,
        };
        sample.validate(t, 5).unwrap();
        sample.neighbor_histories[(3, 2, 0)] = 1.0;
        assert!(sample.validate(t, 5).is_err());
        sample.neighbor_mask[(3, 2)] = true;
        sample.validate(t, 5).unwrap();
    }

    #[test]
    fn gaussian_requires_positive_sigma() {
        let g = GaussianTrajectory {
            mu: Array2::zeros((3, 2)),
            sigma: Array2::from_elem((3, 2), 0.5),
        };
        g.validate().unwrap();
        let bad = GaussianTrajectory {
            sigma: Array2::zeros((3, 2)),
            ..g
        };
        assert!(bad.validate().is_err());
    }
}
