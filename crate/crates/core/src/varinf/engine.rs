
use nalgebra::{DMatrix, DVector};
use statrs::function::gamma::{digamma, ln_gamma};

use super::{FitConfig, FitResult, Parametrization, VariationalState, EMPTY_THRESHOLD};
use crate::error::{Error, Result};
use crate::gating::{adjusted_lower_bound, fit_gating, log_mixing_probs, log_prior_delta, relax_gating, GatingProblem};
use crate::linalg::{frob, quad_form, spd_inverse};
use crate::model::{GroupedDataset, Hyperparameters};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Sufficient statistics of one error block of one cluster.
struct BlockGram {
    len: usize,
    yty: f64,
    dx: DVector<f64>,
    dw: DVector<f64>,
    dv: DVector<f64>,
    xx: DMatrix<f64>,
    xw: DMatrix<f64>,
    xv: DMatrix<f64>,
    ww: DMatrix<f64>,
    wv: DMatrix<f64>,
    vv: DMatrix<f64>,
}

/// Expected squared residuals and expected effect deviations for the
/// current Gaussian factors.
struct Expectations {
    k: usize,
    g: usize,
    /// `E||y_il - fitted||^2` per (cluster, component, block).
    e: Vec<f64>,
    /// Expected squared deviation of the cluster effect from its mean, per (cluster, component).
    a: Vec<f64>,
    /// Same for the component effect, per component.
    b: Vec<f64>,
}

impl Expectations {
    fn e(&self, i: usize, j: usize, l: usize) -> f64 {
        self.e[(i * self.k + j) * self.g + l]
    }

    fn a(&self, i: usize, j: usize) -> f64 {
        self.a[i * self.k + j]
    }
}

fn elog(alpha: f64, lambda: f64) -> f64 {
    digamma(alpha) - lambda.ln()
}

/// `E log IG(sigma2; a0, l0)` under `q = IG(alpha, lambda)`.
fn ig_expected_log_prior(a0: f64, l0: f64, alpha: f64, lambda: f64) -> f64 {
    a0 * l0.ln() - ln_gamma(a0) + (a0 + 1.0) * elog(alpha, lambda) - l0 * alpha / lambda
}

fn ig_entropy(alpha: f64, lambda: f64) -> f64 {
    alpha + lambda.ln() + ln_gamma(alpha) - (1.0 + alpha) * digamma(alpha)
}

fn gaussian_entropy(cov: &DMatrix<f64>, ctx: &str) -> Result<f64> {
    let dim = cov.nrows() as f64;
    Ok(0.5 * crate::linalg::spd_logdet(cov, ctx)? + 0.5 * dim * (1.0 + LN_2PI))
}

fn add_scaled(dst: &mut DMatrix<f64>, src: &DMatrix<f64>, w: f64) {
    for (a, b) in dst.iter_mut().zip(src.iter()) {
        *a += w * b;
    }
}

fn add_scaled_vec(dst: &mut DVector<f64>, src: &DVector<f64>, w: f64) {
    for (a, b) in dst.iter_mut().zip(src.iter()) {
        *a += w * b;
    }
}

/// Shared, immutable context for the updates of one fit.
pub(crate) struct Engine<'a> {
    pub(crate) hyper: &'a Hyperparameters,
    pub(crate) par: Parametrization,
    grams: Vec<Vec<BlockGram>>,
    u: DMatrix<f64>,
    sb_inv: DMatrix<f64>,
    sb_logdet: f64,
    p: usize,
    s1: usize,
    s2: usize,
    g: usize,
}

impl<'a> Engine<'a> {
    pub(crate) fn new(data: &'a GroupedDataset, hyper: &'a Hyperparameters, par: Parametrization) -> Result<Self> {
        let report = crate::model::validate_dataset(data);
        if let Some(v) = report.first() {
            return Err(Error::InvalidDataset(v.to_string()));
        }
        let dims = data.dims();
        hyper.validate(dims.p)?;
        par.check(data)?;
        let (sb_inv, sb_logdet) = spd_inverse(&hyper.sigma_beta, "prior covariance sigma_beta")?;
        let grams = data
            .clusters()
            .iter()
            .map(|c| {
                c.block_ranges()
                    .into_iter()
                    .map(|r| {
                        let len = r.len();
                        let y = c.y.rows(r.start, len);
                        let x = c.x.rows(r.start, len);
                        let w = c.w.rows(r.start, len);
                        let v = c.v.rows(r.start, len);
                        BlockGram {
                            len,
                            yty: y.dot(&y),
                            dx: x.tr_mul(&y),
                            dw: w.tr_mul(&y),
                            dv: v.tr_mul(&y),
                            xx: x.tr_mul(&x),
                            xw: x.tr_mul(&w),
                            xv: x.tr_mul(&v),
                            ww: w.tr_mul(&w),
                            wv: w.tr_mul(&v),
                            vv: v.tr_mul(&v),
                        }
                    })
                    .collect()
            })
            .collect();
        Ok(Self {
            hyper,
            par,
            grams,
            u: data.gating_covariates(),
            sb_inv,
            sb_logdet,
            p: dims.p,
            s1: dims.s1,
            s2: dims.s2,
            g: dims.g,
        })
    }

    fn n(&self) -> usize {
        self.grams.len()
    }

    fn expectations(&self, st: &VariationalState) -> Expectations {
        let (n, k, g) = (self.n(), st.k(), self.g);
        let mut e = vec![0.0; n * k * g];
        let mut a = vec![0.0; n * k];
        let mut b = vec![0.0; k];
        for (j, c) in st.components.iter().enumerate() {
            b[j] = match self.par {
                Parametrization::FullCentered => {
                    (&c.mu_b - &c.mu_beta).norm_squared() + c.sigma_b.trace() + c.sigma_beta.trace()
                }
                _ => c.mu_b.norm_squared() + c.sigma_b.trace(),
            };
        }
        for i in 0..n {
            let ma = &st.mu_a[i];
            let sa = &st.sigma_a[i];
            for (j, c) in st.components.iter().enumerate() {
                a[i * k + j] = match self.par {
                    Parametrization::Uncentered => ma.norm_squared() + sa.trace(),
                    Parametrization::PartialCentered => {
                        (ma - &c.mu_beta).norm_squared() + sa.trace() + c.sigma_beta.trace()
                    }
                    Parametrization::FullCentered => (ma - &c.mu_b).norm_squared() + sa.trace() + c.sigma_b.trace(),
                };
                for (l, bg) in self.grams[i].iter().enumerate() {
                    if bg.len == 0 {
                        continue;
                    }
                    e[(i * k + j) * g + l] = self.block_expectation(bg, st, i, j);
                }
            }
        }
        Expectations { k, g, e, a, b }
    }

    fn block_expectation(&self, bg: &BlockGram, st: &VariationalState, i: usize, j: usize) -> f64 {
        let c = &st.components[j];
        let ma = &st.mu_a[i];
        let sa = &st.sigma_a[i];
        match self.par {
            Parametrization::Uncentered => {
                let (mb, mw, mv) = (&c.mu_beta, ma, &c.mu_b);
                let lin = mb.dot(&bg.dx) + mw.dot(&bg.dw) + mv.dot(&bg.dv);
                let quad = quad_form(&bg.xx, mb)
                    + quad_form(&bg.ww, mw)
                    + quad_form(&bg.vv, mv)
                    + 2.0 * mb.dot(&(&bg.xw * mw))
                    + 2.0 * mb.dot(&(&bg.xv * mv))
                    + 2.0 * mw.dot(&(&bg.wv * mv));
                let tr = frob(&bg.xx, &c.sigma_beta) + frob(&bg.ww, sa) + frob(&bg.vv, &c.sigma_b);
                bg.yty - 2.0 * lin + quad + tr
            }
            Parametrization::PartialCentered => {
                let mv = &c.mu_b;
                let lin = ma.dot(&bg.dx) + mv.dot(&bg.dv);
                let quad = quad_form(&bg.xx, ma) + quad_form(&bg.vv, mv) + 2.0 * ma.dot(&(&bg.xv * mv));
                let tr = frob(&bg.xx, sa) + frob(&bg.vv, &c.sigma_b);
                bg.yty - 2.0 * lin + quad + tr
            }
            Parametrization::FullCentered => {
                bg.yty - 2.0 * ma.dot(&bg.dx) + quad_form(&bg.xx, ma) + frob(&bg.xx, sa)
            }
        }
    }

    /// Responsibility logits without the gating term, constants dropped.
    fn c_ij(&self, st: &VariationalState, ex: &Expectations, i: usize, j: usize) -> f64 {
        let c = &st.components[j];
        let mut v = 0.5 * self.s1 as f64 * elog(c.alpha_a, c.lambda_a) - 0.5 * c.alpha_a / c.lambda_a * ex.a(i, j);
        for (l, bg) in self.grams[i].iter().enumerate() {
            if bg.len == 0 {
                continue;
            }
            v += 0.5 * bg.len as f64 * elog(c.alpha_e[l], c.lambda_e[l])
                - 0.5 * c.alpha_e[l] / c.lambda_e[l] * ex.e(i, j, l);
        }
        v
    }

    pub(crate) fn lower_bound(&self, st: &VariationalState) -> Result<f64> {
        let ex = self.expectations(st);
        self.bound_from(st, &ex)
    }

    fn bound_from(&self, st: &VariationalState, ex: &Expectations) -> Result<f64> {
        let h = self.hyper;
        let (n, k) = (self.n(), st.k());
        let (p, s1, s2) = (self.p as f64, self.s1 as f64, self.s2 as f64);
        let mut lb = 0.0;
        for i in 0..n {
            let n_i: usize = self.grams[i].iter().map(|b| b.len).sum();
            let lp = log_mixing_probs(&st.mu_delta, &self.u.row(i).transpose());
            for j in 0..k {
                let q = st.q[(i, j)];
                if q == 0.0 {
                    continue;
                }
                let cij = self.c_ij(st, ex, i, j);
                lb += q * (-0.5 * (n_i as f64 + s1) * LN_2PI + cij + lp[j] - q.ln());
            }
            lb += gaussian_entropy(&st.sigma_a[i], "cluster effect covariance")?;
        }
        for (j, c) in st.components.iter().enumerate() {
            lb += -0.5 * s2 * LN_2PI + 0.5 * s2 * elog(c.alpha_b, c.lambda_b) - 0.5 * c.alpha_b / c.lambda_b * ex.b[j];
            lb += -0.5 * p * LN_2PI
                - 0.5 * self.sb_logdet
                - 0.5 * (quad_form(&self.sb_inv, &c.mu_beta) + frob(&self.sb_inv, &c.sigma_beta));
            lb += ig_expected_log_prior(h.alpha_a, h.lambda_a, c.alpha_a, c.lambda_a) + ig_entropy(c.alpha_a, c.lambda_a);
            lb += ig_expected_log_prior(h.alpha_b, h.lambda_b, c.alpha_b, c.lambda_b) + ig_entropy(c.alpha_b, c.lambda_b);
            for l in 0..self.g {
                lb += ig_expected_log_prior(h.alpha_e, h.lambda_e, c.alpha_e[l], c.lambda_e[l])
                    + ig_entropy(c.alpha_e[l], c.lambda_e[l]);
            }
            lb += gaussian_entropy(&c.sigma_beta, "fixed effect covariance")?;
            lb += gaussian_entropy(&c.sigma_b, "component effect covariance")?;
        }
        lb += log_prior_delta(&st.mu_delta, h.sigma_delta_scale);
        if !lb.is_finite() {
            return Err(Error::not_pd("lower bound evaluation (non-finite value)"));
        }
        Ok(lb)
    }

    fn solve(&self, prec: DMatrix<f64>, rhs: DVector<f64>, ctx: impl FnOnce() -> String) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let (cov, _) = spd_inverse(&prec, &ctx())?;
        let mu = &cov * rhs;
        Ok((mu, cov))
    }

    fn prec_e(st: &VariationalState, j: usize, l: usize) -> f64 {
        let c = &st.components[j];
        c.alpha_e[l] / c.lambda_e[l]
    }

    // Uncentered steps.

    fn update_beta_uncentered(&self, st: &mut VariationalState, j: usize) -> Result<()> {
        let c = &st.components[j];
        let mut prec = self.sb_inv.clone();
        let mut rhs = DVector::zeros(self.p);
        for i in 0..self.n() {
            let q = st.q[(i, j)];
            if q == 0.0 {
                continue;
            }
            for (l, bg) in self.grams[i].iter().enumerate() {
                if bg.len == 0 {
                    continue;
                }
                let w = q * Self::prec_e(st, j, l);
                add_scaled(&mut prec, &bg.xx, w);
                let r = &bg.dx - &bg.xw * &st.mu_a[i] - &bg.xv * &c.mu_b;
                add_scaled_vec(&mut rhs, &r, w);
            }
        }
        let (mu, cov) = self.solve(prec, rhs, || format!("fixed effect update, component {j}"))?;
        let c = &mut st.components[j];
        c.mu_beta = mu;
        c.sigma_beta = cov;
        Ok(())
    }

    fn update_a_uncentered(&self, st: &mut VariationalState, i: usize) -> Result<()> {
        let mut prec = DMatrix::zeros(self.s1, self.s1);
        let mut rhs = DVector::zeros(self.s1);
        for (j, c) in st.components.iter().enumerate() {
            let q = st.q[(i, j)];
            if q == 0.0 {
                continue;
            }
            for d in 0..self.s1 {
                prec[(d, d)] += q * c.alpha_a / c.lambda_a;
            }
            for (l, bg) in self.grams[i].iter().enumerate() {
                if bg.len == 0 {
                    continue;
                }
                let w = q * Self::prec_e(st, j, l);
                add_scaled(&mut prec, &bg.ww, w);
                let r = &bg.dw - bg.xw.tr_mul(&c.mu_beta) - &bg.wv * &c.mu_b;
                add_scaled_vec(&mut rhs, &r, w);
            }
        }
        let (mu, cov) = self.solve(prec, rhs, || format!("cluster effect update, cluster {i}"))?;
        st.mu_a[i] = mu;
        st.sigma_a[i] = cov;
        Ok(())
    }

    fn update_b_uncentered(&self, st: &mut VariationalState, j: usize) -> Result<()> {
        let c = &st.components[j];
        let mut prec = DMatrix::from_diagonal_element(self.s2, self.s2, c.alpha_b / c.lambda_b);
        let mut rhs = DVector::zeros(self.s2);
        for i in 0..self.n() {
            let q = st.q[(i, j)];
            if q == 0.0 {
                continue;
            }
            for (l, bg) in self.grams[i].iter().enumerate() {
                if bg.len == 0 {
                    continue;
                }
                let w = q * Self::prec_e(st, j, l);
                add_scaled(&mut prec, &bg.vv, w);
                let r = match self.par {
                    Parametrization::Uncentered => &bg.dv - bg.xv.tr_mul(&c.mu_beta) - bg.wv.tr_mul(&st.mu_a[i]),
                    _ => &bg.dv - bg.xv.tr_mul(&st.mu_a[i]),
                };
                add_scaled_vec(&mut rhs, &r, w);
            }
        }
        let (mu, cov) = self.solve(prec, rhs, || format!("component effect update, component {j}"))?;
        let c = &mut st.components[j];
        c.mu_b = mu;
        c.sigma_b = cov;
        Ok(())
    }

    // Centered steps.

    /// `eta_i` (partial) or `rho_i` (full) update.
    fn update_centered_cluster(&self, st: &mut VariationalState, i: usize) -> Result<()> {
        let p = self.p;
        let mut prec = DMatrix::zeros(p, p);
        let mut rhs = DVector::zeros(p);
        for (j, c) in st.components.iter().enumerate() {
            let q = st.q[(i, j)];
            if q == 0.0 {
                continue;
            }
            let ra = c.alpha_a / c.lambda_a;
            for d in 0..p {
                prec[(d, d)] += q * ra;
            }
            let center = match self.par {
                Parametrization::PartialCentered => &c.mu_beta,
                _ => &c.mu_b,
            };
            add_scaled_vec(&mut rhs, center, q * ra);
            for (l, bg) in self.grams[i].iter().enumerate() {
                if bg.len == 0 {
                    continue;
                }
                let w = q * Self::prec_e(st, j, l);
                add_scaled(&mut prec, &bg.xx, w);
                match self.par {
                    Parametrization::PartialCentered => {
                        let r = &bg.dx - &bg.xv * &c.mu_b;
                        add_scaled_vec(&mut rhs, &r, w);
                    }
                    _ => add_scaled_vec(&mut rhs, &bg.dx, w),
                }
            }
        }
        let (mu, cov) = self.solve(prec, rhs, || format!("centered cluster effect update, cluster {i}"))?;
        st.mu_a[i] = mu;
        st.sigma_a[i] = cov;
        Ok(())
    }

    fn weighted_cluster_sum(&self, st: &VariationalState, j: usize) -> DVector<f64> {
        let mut s = DVector::zeros(self.p);
        for i in 0..self.n() {
            let q = st.q[(i, j)];
            if q != 0.0 {
                add_scaled_vec(&mut s, &st.mu_a[i], q);
            }
        }
        s
    }

    fn update_beta_partial(&self, st: &mut VariationalState, j: usize) -> Result<()> {
        let mass = st.mass(j);
        let c = &st.components[j];
        let ra = c.alpha_a / c.lambda_a;
        let mut prec = self.sb_inv.clone();
        for d in 0..self.p {
            prec[(d, d)] += ra * mass;
        }
        let rhs = self.weighted_cluster_sum(st, j) * ra;
        let (mu, cov) = self.solve(prec, rhs, || format!("fixed effect update, component {j}"))?;
        let c = &mut st.components[j];
        c.mu_beta = mu;
        c.sigma_beta = cov;
        Ok(())
    }

    fn update_nu(&self, st: &mut VariationalState, j: usize) -> Result<()> {
        let mass = st.mass(j);
        let c = &st.components[j];
        let (ra, rb) = (c.alpha_a / c.lambda_a, c.alpha_b / c.lambda_b);
        let var = 1.0 / (rb + ra * mass);
        if !(var > 0.0 && var.is_finite()) {
            return Err(Error::not_pd(format!("centered component effect update, component {j}")));
        }
        let mu = (&c.mu_beta * rb + self.weighted_cluster_sum(st, j) * ra) * var;
        let c = &mut st.components[j];
        c.mu_b = mu;
        c.sigma_b = DMatrix::from_diagonal_element(self.p, self.p, var);
        Ok(())
    }

    fn update_beta_full(&self, st: &mut VariationalState, j: usize) -> Result<()> {
        let c = &st.components[j];
        let rb = c.alpha_b / c.lambda_b;
        let mut prec = self.sb_inv.clone();
        for d in 0..self.p {
            prec[(d, d)] += rb;
        }
        let rhs = &c.mu_b * rb;
        let (mu, cov) = self.solve(prec, rhs, || format!("fixed effect update, component {j}"))?;
        let c = &mut st.components[j];
        c.mu_beta = mu;
        c.sigma_beta = cov;
        Ok(())
    }

    /// One sweep; returns the lower bound at the end of it.
    pub(crate) fn sweep(&self, st: &mut VariationalState, cfg: &FitConfig) -> Result<f64> {
        let k = st.k();
        let gaussian_active: Vec<usize> = (0..k)
            .filter(|&j| !cfg.is_frozen(j) && st.mass(j) >= EMPTY_THRESHOLD)
            .collect();
        match self.par {
            Parametrization::Uncentered => {
                for &j in &gaussian_active {
                    self.update_beta_uncentered(st, j)?;
                }
                for i in 0..self.n() {
                    self.update_a_uncentered(st, i)?;
                }
                for &j in &gaussian_active {
                    self.update_b_uncentered(st, j)?;
                }
            }
            Parametrization::PartialCentered => {
                for i in 0..self.n() {
                    self.update_centered_cluster(st, i)?;
                }
                for &j in &gaussian_active {
                    self.update_beta_partial(st, j)?;
                }
                for &j in &gaussian_active {
                    self.update_b_uncentered(st, j)?;
                }
            }
            Parametrization::FullCentered => {
                for i in 0..self.n() {
                    self.update_centered_cluster(st, i)?;
                }
                for &j in &gaussian_active {
                    self.update_nu(st, j)?;
                }
                for &j in &gaussian_active {
                    self.update_beta_full(st, j)?;
                }
            }
        }
        let ex = self.expectations(st);
        self.update_scales(st, &ex, cfg);
        self.update_gating(st)?;
        self.update_responsibilities(st, &ex, cfg);
        self.bound_from(st, &ex)
    }

    /// Conjugate inverse-gamma updates for every unfrozen component.
    fn update_scales(&self, st: &mut VariationalState, ex: &Expectations, cfg: &FitConfig) {
        let h = self.hyper;
        let n = self.n();
        for j in 0..st.k() {
            if cfg.is_frozen(j) {
                continue;
            }
            let mass = st.mass(j);
            let mut sum_a = 0.0;
            let mut sum_e = vec![0.0; self.g];
            let mut count_e = vec![0.0; self.g];
            for i in 0..n {
                let q = st.q[(i, j)];
                if q == 0.0 {
                    continue;
                }
                sum_a += q * ex.a(i, j);
                for (l, bg) in self.grams[i].iter().enumerate() {
                    if bg.len == 0 {
                        continue;
                    }
                    sum_e[l] += q * ex.e(i, j, l);
                    count_e[l] += q * bg.len as f64;
                }
            }
            let c = &mut st.components[j];
            c.alpha_a = h.alpha_a + 0.5 * self.s1 as f64 * mass;
            c.lambda_a = h.lambda_a + 0.5 * sum_a;
            c.alpha_b = h.alpha_b + 0.5 * self.s2 as f64;
            c.lambda_b = h.lambda_b + 0.5 * ex.b[j];
            for l in 0..self.g {
                c.alpha_e[l] = h.alpha_e + 0.5 * count_e[l];
                c.lambda_e[l] = h.lambda_e + 0.5 * sum_e[l];
            }
        }
    }

    fn update_gating(&self, st: &mut VariationalState) -> Result<()> {
        if st.k() == 1 {
            return Ok(());
        }
        let problem = GatingProblem {
            u: &self.u,
            q: &st.q,
            prior_variance: self.hyper.sigma_delta_scale,
        };
        let (delta, _) = fit_gating(&problem, &st.mu_delta)?;
        st.mu_delta = delta;
        Ok(())
    }

    /// `q_ij ∝ p_ij exp(c_ij)` over unfrozen components, scaled to the mass
    /// left by frozen ones.
    fn update_responsibilities(&self, st: &mut VariationalState, ex: &Expectations, cfg: &FitConfig) {
        let k = st.k();
        if k == 1 {
            st.q.fill(1.0);
            return;
        }
        let free: Vec<usize> = (0..k).filter(|&j| !cfg.is_frozen(j)).collect();
        if free.is_empty() {
            return;
        }
        let mut logits = vec![0.0; free.len()];
        for i in 0..self.n() {
            let frozen_mass: f64 = (0..k).filter(|&j| cfg.is_frozen(j)).map(|j| st.q[(i, j)]).sum();
            let remaining = (1.0 - frozen_mass).max(0.0);
            let lp = log_mixing_probs(&st.mu_delta, &self.u.row(i).transpose());
            for (slot, &j) in free.iter().enumerate() {
                logits[slot] = lp[j] + self.c_ij(st, ex, i, j);
            }
            let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let total: f64 = logits.iter().map(|v| (v - max).exp()).sum();
            for (slot, &j) in free.iter().enumerate() {
                st.q[(i, j)] = remaining * (logits[slot] - max).exp() / total;
            }
        }
    }

    pub(crate) fn fit(&self, state0: VariationalState, cfg: &FitConfig) -> Result<FitResult> {
        cfg.validate()?;
        let mut st = state0;
        let mut trace: Vec<f64> = Vec::new();
        let mut converged = false;
        for _ in 0..cfg.max_sweeps {
            let lb = self.sweep(&mut st, cfg)?;
            if let Some(&prev) = trace.last() {
                trace.push(lb);
                let done = if cfg.short_run {
                    lb - prev < cfg.short_run_increment
                } else {
                    ((lb - prev) / prev.abs()).abs() < cfg.tol_rel
                };
                if done {
                    converged = true;
                    break;
                }
            } else {
                trace.push(lb);
            }
        }
        let sweeps = trace.len();
        let lower_bound = *trace.last().expect("at least one sweep");
        let mut res = FitResult {
            state: st,
            par: self.par,
            lb_trace: trace,
            converged,
            sweeps,
            lower_bound,
            gating: crate::gating::GatingPosterior {
                mu_delta: DMatrix::zeros(0, 0),
                sigma_delta_q: DMatrix::zeros(0, 0),
                converged: false,
            },
            log_marginal_estimate: lower_bound,
        };
        self.relax(&mut res)?;
        Ok(res)
    }

    pub(crate) fn relax(&self, res: &mut FitResult) -> Result<()> {
        let st = &mut res.state;
        self.update_gating(st)?;
        let problem = GatingProblem {
            u: &self.u,
            q: &st.q,
            prior_variance: self.hyper.sigma_delta_scale,
        };
        let post = relax_gating(&problem, &st.mu_delta)?;
        let lb = self.lower_bound(st)?;
        res.lower_bound = lb;
        res.log_marginal_estimate = adjusted_lower_bound(lb, &post, self.hyper.sigma_delta_scale)?;
        res.gating = post;
        Ok(())
    }
}
