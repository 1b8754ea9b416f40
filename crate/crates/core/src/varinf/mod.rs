//! Mean-field variational inference for the mixture of linear mixed models.
//!
//! Three coordinate systems are supported: the original (uncentered) one,
//! partial centering `eta_i = beta_j + a_i` when `X_i = W_i`, and full
//! centering `rho_i = nu_j + a_i`, `nu_j = beta_j + b_j` when
//! `X_i = W_i = V_i`.

mod engine;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gating::GatingPosterior;
use crate::model::{Dims, GroupedDataset, Hyperparameters};

pub(crate) use engine::Engine;

/// Components whose total responsibility falls below this are treated as
/// empty: their Gaussian blocks are no longer updated.
pub const EMPTY_THRESHOLD: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Parametrization {
    Uncentered,
    /// Requires `X_i = W_i` for every cluster.
    PartialCentered,
    /// Requires `X_i = W_i = V_i` for every cluster.
    FullCentered,
}

impl Parametrization {
    pub fn check(self, data: &GroupedDataset) -> Result<()> {
        match self {
            Parametrization::Uncentered => Ok(()),
            Parametrization::PartialCentered if data.x_equals_w() => Ok(()),
            Parametrization::FullCentered if data.x_equals_w_equals_v() => Ok(()),
            Parametrization::PartialCentered => Err(Error::InvalidInput(
                "partial centering requires X_i = W_i for every cluster".into(),
            )),
            Parametrization::FullCentered => Err(Error::InvalidInput(
                "full centering requires X_i = W_i = V_i for every cluster".into(),
            )),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Parametrization::Uncentered => "uncentered",
            Parametrization::PartialCentered => "partial_centered",
            Parametrization::FullCentered => "full_centered",
        }
    }
}

/// Variational parameters owned by one mixture component.
#[derive(Debug, Clone, PartialEq)]
pub struct ComponentState {
    pub mu_beta: DVector<f64>,
    pub sigma_beta: DMatrix<f64>,
    /// `b_j`; under full centering this slot holds `nu_j`.
    pub mu_b: DVector<f64>,
    pub sigma_b: DMatrix<f64>,
    pub alpha_a: f64,
    pub lambda_a: f64,
    pub alpha_b: f64,
    pub lambda_b: f64,
    /// Per error block.
    pub alpha_e: Vec<f64>,
    pub lambda_e: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VariationalState {
    pub components: Vec<ComponentState>,
    /// Cluster effect means: `a_i`, or `eta_i` / `rho_i` under centering.
    pub mu_a: Vec<DVector<f64>>,
    pub sigma_a: Vec<DMatrix<f64>>,
    /// `n x k` responsibilities.
    pub q: DMatrix<f64>,
    /// `(k-1) x d` gating mode.
    pub mu_delta: DMatrix<f64>,
}

impl VariationalState {
    pub fn k(&self) -> usize {
        self.components.len()
    }

    pub fn n(&self) -> usize {
        self.q.nrows()
    }

    /// Total responsibility `sum_i q_ij`.
    pub fn mass(&self, j: usize) -> f64 {
        self.q.column(j).sum()
    }

    /// Checks shapes against the dataset and positivity of all scale parameters.
    pub fn check(&self, dims: Dims) -> Result<()> {
        let k = self.k();
        let Dims { n, p, s1, s2, d, g, .. } = dims;
        let dim_err = |what: String| Err(Error::Dimension(what));
        if k == 0 {
            return dim_err("state has no components".into());
        }
        if self.q.shape() != (n, k) {
            return dim_err(format!("responsibilities are {:?}, expected ({n}, {k})", self.q.shape()));
        }
        if self.mu_delta.shape() != (k - 1, d) {
            return dim_err(format!(
                "gating mode is {:?}, expected ({}, {d})",
                self.mu_delta.shape(),
                k - 1
            ));
        }
        if self.mu_a.len() != n || self.sigma_a.len() != n {
            return dim_err("cluster effects do not match the number of clusters".into());
        }
        if self.mu_a.iter().any(|m| m.len() != s1) || self.sigma_a.iter().any(|s| s.shape() != (s1, s1)) {
            return dim_err(format!("cluster effects must have dimension {s1}"));
        }
        for (j, c) in self.components.iter().enumerate() {
            if c.mu_beta.len() != p || c.sigma_beta.shape() != (p, p) {
                return dim_err(format!("component {j}: fixed effects must have dimension {p}"));
            }
            if c.mu_b.len() != s2 || c.sigma_b.shape() != (s2, s2) {
                return dim_err(format!("component {j}: component effects must have dimension {s2}"));
            }
            if c.alpha_e.len() != g || c.lambda_e.len() != g {
                return dim_err(format!("component {j}: expected {g} error blocks"));
            }
            let scales = [c.alpha_a, c.lambda_a, c.alpha_b, c.lambda_b]
                .into_iter()
                .chain(c.alpha_e.iter().copied())
                .chain(c.lambda_e.iter().copied());
            for v in scales {
                if !(v > 0.0 && v.is_finite()) {
                    return Err(Error::InvalidInput(format!(
                        "component {j}: scale parameter {v} is not positive"
                    )));
                }
            }
        }
        for (i, row) in self.q.row_iter().enumerate() {
            if row.iter().any(|v| !(0.0..=1.0).contains(v)) || (row.sum() - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidInput(format!("responsibility row {i} is not a probability vector")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    /// Convergence when `|L_t - L_{t-1}| / |L_{t-1}| < tol_rel`.
    pub tol_rel: f64,
    pub max_sweeps: usize,
    /// Components held fixed (parameters and responsibility columns).
    pub frozen: Vec<usize>,
    /// Stop as soon as a sweep improves the bound by less than
    /// `short_run_increment` instead of using `tol_rel`.
    pub short_run: bool,
    pub short_run_increment: f64,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            tol_rel: 1e-5,
            max_sweeps: 10_000,
            frozen: Vec::new(),
            short_run: false,
            short_run_increment: 1.0,
            seed: 0,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol_rel > 0.0) || self.max_sweeps == 0 || !(self.short_run_increment > 0.0) {
            return Err(Error::InvalidInput(
                "fit config needs tol_rel > 0, max_sweeps >= 1 and short_run_increment > 0".into(),
            ));
        }
        Ok(())
    }

    pub fn is_frozen(&self, j: usize) -> bool {
        self.frozen.contains(&j)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub state: VariationalState,
    pub par: Parametrization,
    /// Lower bound after each sweep.
    pub lb_trace: Vec<f64>,
    pub converged: bool,
    pub sweeps: usize,
    /// Point-mass lower bound at the final state (gating mode refreshed).
    pub lower_bound: f64,
    pub gating: GatingPosterior,
    /// Lower bound with the Gaussian relaxation of `q(delta)`.
    pub log_marginal_estimate: f64,
}

impl FitResult {
    pub fn k(&self) -> usize {
        self.state.k()
    }
}

/// Closed-form evidence lower bound with `q(delta)` a point mass at the
/// state's gating mode.
pub fn lower_bound(
    state: &VariationalState,
    data: &GroupedDataset,
    hyper: &Hyperparameters,
    par: Parametrization,
) -> Result<f64> {
    let eng = Engine::new(data, hyper, par)?;
    state.check(data.dims())?;
    eng.lower_bound(state)
}

/// One full cycle of coordinate updates. Returns the lower bound after the sweep.
pub fn sweep(
    state: &mut VariationalState,
    data: &GroupedDataset,
    hyper: &Hyperparameters,
    par: Parametrization,
    cfg: &FitConfig,
) -> Result<f64> {
    let eng = Engine::new(data, hyper, par)?;
    state.check(data.dims())?;
    eng.sweep(state, cfg)
}

/// Repeats sweeps until convergence, then relaxes `q(delta)`.
pub fn fit(
    state0: VariationalState,
    data: &GroupedDataset,
    hyper: &Hyperparameters,
    par: Parametrization,
    cfg: &FitConfig,
) -> Result<FitResult> {
    let eng = Engine::new(data, hyper, par)?;
    state0.check(data.dims())?;
    eng.fit(state0, cfg)
}

/// One-component starting state. Precision ratios `alpha/lambda` are
/// 1 for every variance component (uncentered); 0.1 for the cluster effect
/// under partial centering; and 0.01 / 0.1 / 10 for component effect /
/// cluster effect / error under full centering. Means start at zero and
/// every cluster is assigned to the single component.
///
/// Larger models are only ever built by splitting, so `k > 1` is rejected.
pub fn default_init(
    data: &GroupedDataset,
    hyper: &Hyperparameters,
    k: usize,
    par: Parametrization,
) -> Result<VariationalState> {
    if k != 1 {
        return Err(Error::InvalidInput(format!(
            "cold starts are only defined for k = 1 (requested k = {k}); larger models come from splits"
        )));
    }
    par.check(data)?;
    let Dims { n, p, s1, s2, d, g, .. } = data.dims();
    let (ratio_a, ratio_b, ratio_e) = match par {
        Parametrization::Uncentered => (1.0, 1.0, 1.0),
        Parametrization::PartialCentered => (0.1, 1.0, 1.0),
        Parametrization::FullCentered => (0.1, 0.01, 10.0),
    };
    let alpha_a = hyper.alpha_a + 0.5 * s1 as f64 * n as f64;
    let alpha_b = hyper.alpha_b + 0.5 * s2 as f64;
    let alpha_e: Vec<f64> = (0..g)
        .map(|l| hyper.alpha_e + 0.5 * data.clusters().iter().map(|c| c.kappa[l]).sum::<usize>() as f64)
        .collect();
    let lambda_e = alpha_e.iter().map(|a| a / ratio_e).collect();
    let comp = ComponentState {
        mu_beta: DVector::zeros(p),
        sigma_beta: hyper.sigma_beta.clone(),
        mu_b: DVector::zeros(s2),
        sigma_b: DMatrix::identity(s2, s2),
        alpha_a,
        lambda_a: alpha_a / ratio_a,
        alpha_b,
        lambda_b: alpha_b / ratio_b,
        alpha_e,
        lambda_e,
    };
    Ok(VariationalState {
        components: vec![comp],
        mu_a: vec![DVector::zeros(s1); n],
        sigma_a: vec![DMatrix::identity(s1, s1); n],
        q: DMatrix::from_element(n, 1, 1.0),
        mu_delta: DMatrix::zeros(0, d),
    })
}

/// Refreshes the gating mode for the current responsibilities, recomputes
/// the point-mass bound and replaces `q(delta)` by its Gaussian
/// approximation.
pub fn relax(result: &mut FitResult, data: &GroupedDataset, hyper: &Hyperparameters) -> Result<()> {
    let eng = Engine::new(data, hyper, result.par)?;
    eng.relax(result)
}

/// Per-row argmax of the responsibilities; ties go to the smaller index.
pub fn hard_assignments(q: &DMatrix<f64>) -> Vec<usize> {
    q.row_iter()
        .map(|row| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}
