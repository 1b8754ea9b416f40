//! Data model for mixtures of linear mixed models.
//!
//! Conditional on membership `z_i = j`, cluster `i` follows
//!
//! ```text
//! y_i = X_i beta_j + W_i a_i + V_i b_j + eps_i
//! a_i ~ N(0, sigma2_a[j] I),  b_j ~ N(0, sigma2_b[j] I)
//! eps_i ~ N(0, blockdiag(sigma2_e[j][l] I_{kappa_il}))
//! ```
//!
//! with membership probabilities given by a multinomial-logit gating function
//! of the cluster covariates `u_i` (see [`crate::gating`]).

mod io;
mod simulate;

use std::fmt;
use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};

pub use io::{load_dataset, load_dataset_with_ids, read_labels, write_dataset, write_labels, DesignSource, IngestSchema, NaPolicy};
pub use simulate::{simulate_dataset, simulate_with_labels, ClusterDesign, TrueParameters};

/// Observations and designs for one cluster (one gene, one day, ...).
///
/// Observations must be ordered block-contiguously: the first `kappa[0]` rows
/// belong to error block 0, the next `kappa[1]` to block 1, and so on.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterData {
    pub y: DVector<f64>,
    /// Fixed-effect design, `n_i x p`.
    pub x: DMatrix<f64>,
    /// Cluster random-effect design, `n_i x s1`.
    pub w: DMatrix<f64>,
    /// Component random-effect design, `n_i x s2`.
    pub v: DMatrix<f64>,
    /// Gating covariates, length `d`.
    pub u: DVector<f64>,
    /// Error-block sizes, length `g`, summing to `n_i`.
    pub kappa: Vec<usize>,
}

impl ClusterData {
    pub fn n_obs(&self) -> usize {
        self.y.len()
    }

    /// Row ranges of the error blocks, in order.
    pub fn block_ranges(&self) -> Vec<Range<usize>> {
        let mut start = 0;
        self.kappa
            .iter()
            .map(|&len| {
                let r = start..start + len;
                start += len;
                r
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Dims {
    /// Number of clusters.
    pub n: usize,
    /// Total number of observations.
    pub total_obs: usize,
    pub p: usize,
    pub s1: usize,
    pub s2: usize,
    pub d: usize,
    pub g: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupedDataset {
    clusters: Vec<ClusterData>,
    dims: Dims,
}

impl GroupedDataset {
    /// Builds a dataset and rejects it if [`validate_dataset`] reports anything.
    pub fn new(clusters: Vec<ClusterData>) -> Result<Self> {
        let data = Self::from_clusters_unchecked(clusters);
        let report = validate_dataset(&data);
        if report.is_empty() {
            Ok(data)
        } else {
            let msgs: Vec<String> = report.iter().map(|v| v.to_string()).collect();
            Err(Error::InvalidDataset(msgs.join("; ")))
        }
    }

    /// Builds a dataset without checking invariants. Reference dimensions are
    /// taken from the first cluster.
    pub fn from_clusters_unchecked(clusters: Vec<ClusterData>) -> Self {
        let dims = match clusters.first() {
            Some(c) => Dims {
                n: clusters.len(),
                total_obs: clusters.iter().map(|c| c.n_obs()).sum(),
                p: c.x.ncols(),
                s1: c.w.ncols(),
                s2: c.v.ncols(),
                d: c.u.len(),
                g: c.kappa.len(),
            },
            None => Dims {
                n: 0,
                total_obs: 0,
                p: 0,
                s1: 0,
                s2: 0,
                d: 0,
                g: 0,
            },
        };
        Self { clusters, dims }
    }

    pub fn clusters(&self) -> &[ClusterData] {
        &self.clusters
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn n(&self) -> usize {
        self.dims.n
    }

    /// Gating covariates stacked as an `n x d` matrix.
    pub fn gating_covariates(&self) -> DMatrix<f64> {
        let Dims { n, d, .. } = self.dims;
        DMatrix::from_fn(n, d, |i, m| self.clusters[i].u[m])
    }

    /// True when every cluster has `X_i == W_i`.
    pub fn x_equals_w(&self) -> bool {
        self.clusters.iter().all(|c| c.x == c.w)
    }

    /// True when every cluster has `X_i == W_i == V_i`.
    pub fn x_equals_w_equals_v(&self) -> bool {
        self.clusters.iter().all(|c| c.x == c.w && c.x == c.v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViolationKind {
    NoClusters,
    EmptyCluster,
    KappaSum,
    RowCount,
    ColumnCount,
    BlockCount,
    CovariateLength,
    NonFinite,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub cluster: Option<usize>,
    pub kind: ViolationKind,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.cluster {
            Some(i) => write!(f, "cluster {i}: {}", self.message),
            None => write!(f, "{}", self.message),
        }
    }
}

/// Checks every cluster invariant and global dimensional consistency.
/// Violations are collected, never thrown.
pub fn validate_dataset(data: &GroupedDataset) -> Vec<Violation> {
    let mut out = Vec::new();
    let dims = data.dims();
    if data.clusters.is_empty() {
        out.push(Violation {
            cluster: None,
            kind: ViolationKind::NoClusters,
            message: "dataset has no clusters".into(),
        });
        return out;
    }
    let mut push = |i: usize, kind: ViolationKind, message: String| {
        out.push(Violation {
            cluster: Some(i),
            kind,
            message,
        })
    };
    for (i, c) in data.clusters.iter().enumerate() {
        let ni = c.n_obs();
        if ni == 0 {
            push(i, ViolationKind::EmptyCluster, "cluster has no observations".into());
        }
        let ksum: usize = c.kappa.iter().sum();
        if ksum != ni {
            push(
                i,
                ViolationKind::KappaSum,
                format!("kappa sums to {ksum} but the cluster has {ni} observations"),
            );
        }
        for (name, m) in [("X", &c.x), ("W", &c.w), ("V", &c.v)] {
            if m.nrows() != ni {
                push(
                    i,
                    ViolationKind::RowCount,
                    format!("{name} has {} rows, expected {ni}", m.nrows()),
                );
            }
        }
        for (name, m, want) in [
            ("X", &c.x, dims.p),
            ("W", &c.w, dims.s1),
            ("V", &c.v, dims.s2),
        ] {
            if m.ncols() != want {
                push(
                    i,
                    ViolationKind::ColumnCount,
                    format!("{name} has {} columns, expected {want}", m.ncols()),
                );
            }
        }
        if c.kappa.len() != dims.g {
            push(
                i,
                ViolationKind::BlockCount,
                format!("{} error blocks, expected {}", c.kappa.len(), dims.g),
            );
        }
        if c.u.len() != dims.d {
            push(
                i,
                ViolationKind::CovariateLength,
                format!("{} gating covariates, expected {}", c.u.len(), dims.d),
            );
        }
        let finite = c.y.iter().chain(c.x.iter()).chain(c.w.iter()).chain(c.v.iter()).chain(c.u.iter()).all(|v| v.is_finite());
        if !finite {
            push(i, ViolationKind::NonFinite, "non-finite value in data or design".into());
        }
    }
    out
}

/// Prior constants, shared across components and error blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct Hyperparameters {
    /// Prior covariance of each `beta_j`.
    pub sigma_beta: DMatrix<f64>,
    /// Prior covariance of the stacked gating coefficients is `sigma_delta_scale * I`.
    pub sigma_delta_scale: f64,
    pub alpha_a: f64,
    pub lambda_a: f64,
    pub alpha_b: f64,
    pub lambda_b: f64,
    pub alpha_e: f64,
    pub lambda_e: f64,
}

impl Hyperparameters {
    /// `beta_j ~ N(0, beta_var I)`, `delta ~ N(0, delta_var I)` and every
    /// variance component `IG(ig_shape, ig_scale)`.
    pub fn isotropic(p: usize, beta_var: f64, delta_var: f64, ig_shape: f64, ig_scale: f64) -> Self {
        Self {
            sigma_beta: DMatrix::identity(p, p) * beta_var,
            sigma_delta_scale: delta_var,
            alpha_a: ig_shape,
            lambda_a: ig_scale,
            alpha_b: ig_shape,
            lambda_b: ig_scale,
            alpha_e: ig_shape,
            lambda_e: ig_scale,
        }
    }

    pub fn validate(&self, p: usize) -> Result<()> {
        if self.sigma_beta.nrows() != p || self.sigma_beta.ncols() != p {
            return Err(Error::Dimension(format!(
                "sigma_beta is {}x{}, expected {p}x{p}",
                self.sigma_beta.nrows(),
                self.sigma_beta.ncols()
            )));
        }
        let scalars = [
            ("sigma_delta_scale", self.sigma_delta_scale),
            ("alpha_a", self.alpha_a),
            ("lambda_a", self.lambda_a),
            ("alpha_b", self.alpha_b),
            ("lambda_b", self.lambda_b),
            ("alpha_e", self.alpha_e),
            ("lambda_e", self.lambda_e),
        ];
        for (name, v) in scalars {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidInput(format!("{name} must be positive, got {v}")));
            }
        }
        crate::linalg::cholesky(&self.sigma_beta, "prior covariance sigma_beta")?;
        Ok(())
    }
}
