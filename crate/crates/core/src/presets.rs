//! Bundled designs, prior recipes and simulation settings.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::model::{simulate_dataset, simulate_with_labels, ClusterDesign, GroupedDataset, Hyperparameters, TrueParameters};

/// Cell-cycle period (minutes) of the periodic time-course design.
pub const CELL_CYCLE_PERIOD: f64 = 53.0;
/// Sampling interval (minutes) of the time-course design.
pub const SAMPLING_INTERVAL: f64 = 7.0;
pub const TIME_POINTS: usize = 18;

/// Cluster sizes of the 12-group time-course simulation (499 clusters).
pub const SIMULATION_CLUSTER_SIZES: [usize; 12] = [43, 48, 85, 49, 65, 77, 8, 21, 18, 15, 34, 36];

/// Prior settings used for the bundled analyses. All use `delta ~ N(0, 1000 I)`
/// and `IG(0.01, 0.01)` for every variance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorRecipe {
    /// Periodic time-course clustering; `beta ~ N(0, 1000 I)`.
    TimeCourse,
    /// Replicated experiments with missing data; `beta ~ N(0, 1000 I)`.
    Replicated,
    /// Depth profiles; `beta ~ N(0, 10000 I)`.
    DepthProfile,
}

impl PriorRecipe {
    pub fn hyperparameters(self, p: usize) -> Hyperparameters {
        let beta_var = match self {
            PriorRecipe::TimeCourse | PriorRecipe::Replicated => 1000.0,
            PriorRecipe::DepthProfile => 10000.0,
        };
        Hyperparameters::isotropic(p, beta_var, 1000.0, 0.01, 0.01)
    }
}

/// `X` has rows `(cos(2 pi 7l / 53), sin(2 pi 7l / 53))`, `W = 1`, `V = I`,
/// a constant gating covariate and a single error block.
pub fn time_course_design() -> ClusterDesign {
    let x = DMatrix::from_fn(TIME_POINTS, 2, |l, c| {
        let angle = 2.0 * PI * SAMPLING_INTERVAL * l as f64 / CELL_CYCLE_PERIOD;
        if c == 0 {
            angle.cos()
        } else {
            angle.sin()
        }
    });
    ClusterDesign {
        x,
        w: DMatrix::from_element(TIME_POINTS, 1, 1.0),
        v: DMatrix::identity(TIME_POINTS, TIME_POINTS),
        u: DVector::from_element(1, 1.0),
        kappa: vec![TIME_POINTS],
    }
}

/// Block-contiguous true labels for the time-course simulation.
pub fn simulation_labels() -> Vec<usize> {
    SIMULATION_CLUSTER_SIZES
        .iter()
        .enumerate()
        .flat_map(|(j, &m)| std::iter::repeat_n(j, m))
        .collect()
}

/// Synthetic truth for the 12-group simulation: phases spaced 30 degrees
/// apart with amplitudes alternating 1.0 and 1.6, cluster-effect variance
/// 0.04, component-effect variance 0.01 and error variance 0.09.
pub fn simulation_truth() -> TrueParameters {
    let k = SIMULATION_CLUSTER_SIZES.len();
    let beta = (0..k)
        .map(|j| {
            let phase = (30.0 * j as f64).to_radians();
            let amp = if j % 2 == 0 { 1.0 } else { 1.6 };
            DVector::from_vec(vec![amp * phase.cos(), amp * phase.sin()])
        })
        .collect();
    TrueParameters {
        beta,
        sigma_a2: vec![0.04; k],
        sigma_b2: vec![0.01; k],
        sigma_e2: vec![vec![0.09]; k],
        delta: DMatrix::zeros(k - 1, 1),
    }
}

/// One replicate of the 12-group time-course simulation.
pub fn simulation_dataset(seed: u64) -> Result<(GroupedDataset, Vec<usize>)> {
    let labels = simulation_labels();
    let designs = vec![time_course_design(); labels.len()];
    let data = simulate_with_labels(&simulation_truth(), &designs, &labels, seed)?;
    Ok((data, labels))
}

/// Single-component truth on the time-course design with small variances.
pub fn single_component_truth() -> TrueParameters {
    TrueParameters {
        beta: vec![DVector::from_vec(vec![1.0, -0.5])],
        sigma_a2: vec![0.04],
        sigma_b2: vec![0.01],
        sigma_e2: vec![vec![0.09]],
        delta: DMatrix::zeros(0, 1),
    }
}

/// `n` clusters from [`single_component_truth`].
pub fn single_component_dataset(n: usize, seed: u64) -> Result<(GroupedDataset, Vec<usize>)> {
    simulate_dataset(&single_component_truth(), &vec![time_course_design(); n], seed)
}

/// Every variance zero, so `y_i = X_i beta` exactly.
pub fn zero_variance_truth() -> TrueParameters {
    TrueParameters {
        sigma_a2: vec![0.0],
        sigma_b2: vec![0.0],
        sigma_e2: vec![vec![0.0]],
        ..single_component_truth()
    }
}
