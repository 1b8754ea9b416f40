//! Multinomial-logit gating: mixing probabilities, the penalized multinomial
//! log posterior for the gating coefficients, its Newton maximization and the
//! Gaussian relaxation of `q(delta)` at convergence.
//!
//! Coefficients are stored as a `(k-1) x d` matrix whose row `c` belongs to
//! component `c + 1`; component 0 is the reference with `delta_0 = 0`. When
//! flattened (gradient, Hessian, posterior covariance) the layout is
//! component-major: index `c * d + m`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{log_sum_exp, spd_inverse, spd_logdet};

/// Log mixing probabilities `log p_j(u)`, computed with log-sum-exp.
pub fn log_mixing_probs(delta: &DMatrix<f64>, u: &DVector<f64>) -> DVector<f64> {
    let k = delta.nrows() + 1;
    let mut eta = vec![0.0; k];
    for c in 0..delta.nrows() {
        eta[c + 1] = delta.row(c).iter().zip(u.iter()).map(|(a, b)| a * b).sum();
    }
    let lse = log_sum_exp(&eta);
    DVector::from_iterator(k, eta.into_iter().map(|e| e - lse))
}

pub fn mixing_probs(delta: &DMatrix<f64>, u: &DVector<f64>) -> DVector<f64> {
    let mut p = log_mixing_probs(delta, u).map(f64::exp);
    let s = p.sum();
    p /= s;
    p
}

/// Inputs of the gating subproblem: covariates `u` (`n x d`), responsibilities
/// `q` (`n x k`) and the prior `delta ~ N(0, prior_variance * I)`.
#[derive(Debug, Clone)]
pub struct GatingProblem<'a> {
    pub u: &'a DMatrix<f64>,
    pub q: &'a DMatrix<f64>,
    pub prior_variance: f64,
}

impl GatingProblem<'_> {
    pub fn k(&self) -> usize {
        self.q.ncols()
    }

    pub fn d(&self) -> usize {
        self.u.ncols()
    }

    pub fn dim(&self) -> usize {
        (self.k() - 1) * self.d()
    }

    fn u_row(&self, i: usize) -> DVector<f64> {
        self.u.row(i).transpose()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GatingPosterior {
    pub mu_delta: DMatrix<f64>,
    /// Covariance in the flattened component-major layout.
    pub sigma_delta_q: DMatrix<f64>,
    pub converged: bool,
}

pub fn flatten(delta: &DMatrix<f64>) -> DVector<f64> {
    let (r, d) = delta.shape();
    DVector::from_fn(r * d, |idx, _| delta[(idx / d, idx % d)])
}

pub fn unflatten(v: &DVector<f64>, d: usize) -> DMatrix<f64> {
    let r = v.len().checked_div(d).unwrap_or(0);
    DMatrix::from_fn(r, d, |c, m| v[c * d + m])
}

/// `sum_i sum_j q_ij log p_ij - delta' delta / (2 prior_variance)`.
pub fn gating_objective(delta: &DMatrix<f64>, problem: &GatingProblem) -> f64 {
    let mut f = -0.5 * delta.iter().map(|v| v * v).sum::<f64>() / problem.prior_variance;
    for i in 0..problem.q.nrows() {
        let lp = log_mixing_probs(delta, &problem.u_row(i));
        for j in 0..problem.k() {
            let q = problem.q[(i, j)];
            if q != 0.0 {
                f += q * lp[j];
            }
        }
    }
    f
}

pub fn gating_gradient(delta: &DMatrix<f64>, problem: &GatingProblem) -> DVector<f64> {
    let d = problem.d();
    let mut g = -flatten(delta) / problem.prior_variance;
    for i in 0..problem.q.nrows() {
        let u = problem.u_row(i);
        let p = mixing_probs(delta, &u);
        for c in 0..problem.k() - 1 {
            let r = problem.q[(i, c + 1)] - p[c + 1];
            for m in 0..d {
                g[c * d + m] += r * u[m];
            }
        }
    }
    g
}

pub fn gating_hessian(delta: &DMatrix<f64>, problem: &GatingProblem) -> DMatrix<f64> {
    let d = problem.d();
    let km1 = problem.k() - 1;
    let dim = km1 * d;
    let mut h = DMatrix::from_diagonal_element(dim, dim, -1.0 / problem.prior_variance);
    for i in 0..problem.q.nrows() {
        let u = problem.u_row(i);
        let p = mixing_probs(delta, &u);
        let uu = &u * u.transpose();
        for c in 0..km1 {
            for c2 in 0..km1 {
                let ind = if c == c2 { 1.0 } else { 0.0 };
                let w = p[c + 1] * (ind - p[c2 + 1]);
                for m in 0..d {
                    for m2 in 0..d {
                        h[(c * d + m, c2 * d + m2)] -= w * uu[(m, m2)];
                    }
                }
            }
        }
    }
    h
}

pub const MAX_NEWTON_ITERATIONS: usize = 100;

/// Damped Newton ascent with step halving. Returns the maximizer and the
/// number of Newton iterations used.
pub fn fit_gating(problem: &GatingProblem, delta0: &DMatrix<f64>) -> Result<(DMatrix<f64>, usize)> {
    let d = problem.d();
    let km1 = problem.k() - 1;
    if km1 == 0 {
        return Ok((DMatrix::zeros(0, d), 0));
    }
    if delta0.shape() != (km1, d) {
        return Err(Error::Dimension(format!(
            "initial gating coefficients are {:?}, expected ({km1}, {d})",
            delta0.shape()
        )));
    }
    let mut delta = delta0.clone();
    let mut f = gating_objective(&delta, problem);
    for iter in 0..MAX_NEWTON_ITERATIONS {
        let g = gating_gradient(&delta, problem);
        if g.norm() < 1e-8 * (1.0 + f.abs()) {
            return Ok((delta, iter));
        }
        let neg_h = -gating_hessian(&delta, problem);
        let chol = crate::linalg::cholesky(&neg_h, "gating Hessian")?;
        let step = chol.solve(&g);
        let mut t = 1.0;
        let mut accepted = None;
        while t > 1e-12 {
            let cand = &delta + unflatten(&(&step * t), d);
            let fc = gating_objective(&cand, problem);
            if fc >= f {
                accepted = Some((cand, fc));
                break;
            }
            t *= 0.5;
        }
        match accepted {
            Some((cand, fc)) => {
                let improved = fc > f;
                delta = cand;
                f = fc;
                if !improved {
                    // Objective is flat to machine precision along the Newton direction.
                    return Ok((delta, iter + 1));
                }
            }
            None => return Ok((delta, iter + 1)),
        }
    }
    let g = gating_gradient(&delta, problem);
    if g.norm() < 1e-8 * (1.0 + f.abs()) {
        return Ok((delta, MAX_NEWTON_ITERATIONS));
    }
    Err(Error::NoConvergence {
        what: "gating Newton iteration",
        iterations: MAX_NEWTON_ITERATIONS,
    })
}

/// Gaussian approximation at the mode: covariance `(-H)^{-1}`.
pub fn relax_gating(problem: &GatingProblem, delta_star: &DMatrix<f64>) -> Result<GatingPosterior> {
    let dim = problem.dim();
    if dim == 0 {
        return Ok(GatingPosterior {
            mu_delta: delta_star.clone(),
            sigma_delta_q: DMatrix::zeros(0, 0),
            converged: true,
        });
    }
    let neg_h = -gating_hessian(delta_star, problem);
    let (cov, _) = spd_inverse(&neg_h, "negative gating Hessian")?;
    let g = gating_gradient(delta_star, problem);
    let f = gating_objective(delta_star, problem);
    Ok(GatingPosterior {
        mu_delta: delta_star.clone(),
        sigma_delta_q: cov,
        converged: g.norm() < 1e-6 * (1.0 + f.abs()),
    })
}

/// `log N(delta; 0, prior_variance * I)`.
pub fn log_prior_delta(delta: &DMatrix<f64>, prior_variance: f64) -> f64 {
    let dim = delta.len() as f64;
    let ss: f64 = delta.iter().map(|v| v * v).sum();
    -0.5 * dim * (2.0 * std::f64::consts::PI * prior_variance).ln() - 0.5 * ss / prior_variance
}

/// Log-marginal estimate after relaxing `q(delta)` to a Gaussian: the point
/// mass log prior is removed and the Gaussian KL terms are added, with the
/// expected log softmax replaced by its value at the mean. With no gating
/// parameters (`k = 1`) the input is returned unchanged.
pub fn adjusted_lower_bound(lb_pointmass: f64, posterior: &GatingPosterior, prior_variance: f64) -> Result<f64> {
    let mu = &posterior.mu_delta;
    let dim = mu.len();
    if dim == 0 {
        return Ok(lb_pointmass);
    }
    let s = &posterior.sigma_delta_q;
    let logdet_q = spd_logdet(s, "relaxed gating covariance")?;
    let logdet_ratio = logdet_q - dim as f64 * prior_variance.ln();
    let quad: f64 = mu.iter().map(|v| v * v).sum::<f64>() / prior_variance;
    let trace = s.trace() / prior_variance;
    Ok(lb_pointmass - log_prior_delta(mu, prior_variance) + 0.5 * logdet_ratio - 0.5 * quad - 0.5 * trace
        + 0.5 * dim as f64)
}
