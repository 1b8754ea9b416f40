//! Shared generators and oracles for the integration tests.
#![allow(dead_code)]

use mlmm::model::{ClusterData, GroupedDataset, Hyperparameters};
use mlmm::varinf::{ComponentState, Parametrization, VariationalState};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use statrs::distribution::{Continuous, InverseGamma};

pub const PARS: [Parametrization; 3] = [
    Parametrization::Uncentered,
    Parametrization::PartialCentered,
    Parametrization::FullCentered,
];

pub fn rng(seed: u64) -> ChaCha8Rng {
    rand::SeedableRng::seed_from_u64(seed)
}

pub fn normal_matrix<R: Rng>(rng: &mut R, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.sample::<f64, _>(StandardNormal))
}

pub fn normal_vector<R: Rng>(rng: &mut R, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal))
}

pub fn random_spd<R: Rng>(rng: &mut R, n: usize, scale: f64) -> DMatrix<f64> {
    let a = normal_matrix(rng, n, n);
    (&a * a.transpose() * 0.3 + DMatrix::identity(n, n) * 0.5) * scale
}

pub struct Shape {
    pub n: usize,
    pub max_ni: usize,
    pub k: usize,
}

/// Random dataset compatible with `par`: design dimensions 1..=2, one or
/// two error blocks, gating covariates with an intercept.
pub fn random_dataset<R: Rng>(rng: &mut R, par: Parametrization, shape: &Shape) -> GroupedDataset {
    let p = rng.random_range(1..=2);
    let (s1, s2) = match par {
        Parametrization::Uncentered => (rng.random_range(1..=2), rng.random_range(1..=2)),
        Parametrization::PartialCentered => (p, rng.random_range(1..=2)),
        Parametrization::FullCentered => (p, p),
    };
    let g = if shape.max_ni >= 2 { rng.random_range(1..=2) } else { 1 };
    let d = rng.random_range(1..=2);
    let shift = normal_vector(rng, p) * 2.0;
    let clusters = (0..shape.n)
        .map(|i| {
            let ni = rng.random_range(g.max(1)..=shape.max_ni.max(g));
            let kappa = if g == 1 {
                vec![ni]
            } else {
                let first = rng.random_range(1..ni);
                vec![first, ni - first]
            };
            let x = normal_matrix(rng, ni, p);
            let w = match par {
                Parametrization::Uncentered => normal_matrix(rng, ni, s1),
                _ => x.clone(),
            };
            let v = match par {
                Parametrization::FullCentered => x.clone(),
                _ => normal_matrix(rng, ni, s2),
            };
            let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
            let y = &x * &shift * sign + normal_vector(rng, ni) * 0.5;
            let mut u = normal_vector(rng, d);
            u[0] = 1.0;
            ClusterData { y, x, w, v, u, kappa }
        })
        .collect();
    GroupedDataset::new(clusters).expect("generated dataset is valid")
}

pub fn random_hyper<R: Rng>(rng: &mut R, p: usize) -> Hyperparameters {
    let scale = rng.random_range(1.0..10.0);
    Hyperparameters {
        sigma_beta: random_spd(rng, p, scale),
        sigma_delta_scale: rng.random_range(1.0..100.0),
        alpha_a: rng.random_range(0.5..3.0),
        lambda_a: rng.random_range(0.5..3.0),
        alpha_b: rng.random_range(0.5..3.0),
        lambda_b: rng.random_range(0.5..3.0),
        alpha_e: rng.random_range(0.5..3.0),
        lambda_e: rng.random_range(0.5..3.0),
    }
}

/// Arbitrary valid variational state (not an optimum of anything).
pub fn random_state<R: Rng>(rng: &mut R, data: &GroupedDataset, k: usize, zero_prob: f64) -> VariationalState {
    let dims = data.dims();
    let components = (0..k)
        .map(|_| ComponentState {
            mu_beta: normal_vector(rng, dims.p),
            sigma_beta: random_spd(rng, dims.p, 0.3),
            mu_b: normal_vector(rng, dims.s2),
            sigma_b: random_spd(rng, dims.s2, 0.3),
            alpha_a: rng.random_range(2.0..6.0),
            lambda_a: rng.random_range(1.0..4.0),
            alpha_b: rng.random_range(2.0..6.0),
            lambda_b: rng.random_range(1.0..4.0),
            alpha_e: (0..dims.g).map(|_| rng.random_range(2.0..6.0)).collect(),
            lambda_e: (0..dims.g).map(|_| rng.random_range(1.0..4.0)).collect(),
        })
        .collect();
    let mut q = DMatrix::zeros(dims.n, k);
    for i in 0..dims.n {
        let mut row: Vec<f64> = (0..k).map(|_| rng.random_range(0.05..1.0)).collect();
        if k > 1 && rng.random_bool(zero_prob) {
            let z = rng.random_range(0..k);
            row[z] = 0.0;
        }
        let s: f64 = row.iter().sum();
        for j in 0..k {
            q[(i, j)] = row[j] / s;
        }
    }
    VariationalState {
        components,
        mu_a: (0..dims.n).map(|_| normal_vector(rng, dims.s1)).collect(),
        sigma_a: (0..dims.n).map(|_| random_spd(rng, dims.s1, 0.3)).collect(),
        q,
        mu_delta: normal_matrix(rng, k - 1, dims.d) * 0.5,
    }
}

/// `log N(x; m, S)` through its own Cholesky factorization.
pub fn log_normal_pdf(x: &DVector<f64>, m: &DVector<f64>, s: &DMatrix<f64>) -> f64 {
    let l = s.clone().cholesky().expect("covariance is SPD");
    let z = l.l().solve_lower_triangular(&(x - m)).unwrap();
    let logdet: f64 = 2.0 * l.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    -0.5 * (x.len() as f64 * (2.0 * std::f64::consts::PI).ln() + logdet + z.norm_squared())
}

pub fn log_iso_normal_pdf(x: &DVector<f64>, m: &DVector<f64>, var: f64) -> f64 {
    let n = x.len() as f64;
    -0.5 * n * (2.0 * std::f64::consts::PI * var).ln() - 0.5 * (x - m).norm_squared() / var
}

fn draw_gaussian<R: Rng>(rng: &mut R, m: &DVector<f64>, s: &DMatrix<f64>) -> DVector<f64> {
    let l = s.clone().cholesky().expect("covariance is SPD").l();
    m + l * normal_vector(rng, m.len())
}

struct IgDraw {
    value: f64,
    log_q: f64,
}

fn draw_ig<R: Rng>(rng: &mut R, alpha: f64, lambda: f64) -> IgDraw {
    let precision = Gamma::new(alpha, 1.0 / lambda).unwrap().sample(rng);
    let value = 1.0 / precision;
    let log_q = InverseGamma::new(alpha, lambda).unwrap().ln_pdf(value);
    IgDraw { value, log_q }
}

fn log_ig_prior(x: f64, a0: f64, l0: f64) -> f64 {
    InverseGamma::new(a0, l0).unwrap().ln_pdf(x)
}

fn log_softmax(delta: &DMatrix<f64>, u: &DVector<f64>) -> Vec<f64> {
    let k = delta.nrows() + 1;
    let eta: Vec<f64> = (0..k)
        .map(|j| if j == 0 { 0.0 } else { (delta.row(j - 1) * u)[0] })
        .collect();
    let m = eta.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + eta.iter().map(|e| (e - m).exp()).sum::<f64>().ln();
    eta.iter().map(|e| e - lse).collect()
}

/// Monte Carlo estimate of `E_q[log p(y, theta, z | delta = mu_delta) - log q] + log p(mu_delta)`
/// from the generative model written out directly. The cluster labels are
/// summed exactly; every continuous factor is sampled. Returns (mean, standard error).
pub fn mc_lower_bound<R: Rng>(
    rng: &mut R,
    state: &VariationalState,
    data: &GroupedDataset,
    hyper: &Hyperparameters,
    par: Parametrization,
    draws: usize,
) -> (f64, f64) {
    let k = state.k();
    let n = data.n();
    let dims = data.dims();
    let log_p_delta = {
        let flat = DVector::from_iterator(state.mu_delta.len(), state.mu_delta.iter().copied());
        log_iso_normal_pdf(&flat, &DVector::zeros(flat.len()), hyper.sigma_delta_scale)
    };
    let zero_beta = DVector::zeros(dims.p);
    let log_pz: Vec<Vec<f64>> = data
        .clusters()
        .iter()
        .map(|c| log_softmax(&state.mu_delta, &c.u))
        .collect();

    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for _ in 0..draws {
        let mut total = log_p_delta;
        let mut beta = Vec::with_capacity(k);
        let mut bvec = Vec::with_capacity(k);
        let mut sa = Vec::with_capacity(k);
        let mut sb = Vec::with_capacity(k);
        let mut se = Vec::with_capacity(k);
        for c in &state.components {
            let bj = draw_gaussian(rng, &c.mu_beta, &c.sigma_beta);
            total += log_normal_pdf(&bj, &zero_beta, &hyper.sigma_beta) - log_normal_pdf(&bj, &c.mu_beta, &c.sigma_beta);
            let b = draw_gaussian(rng, &c.mu_b, &c.sigma_b);
            total -= log_normal_pdf(&b, &c.mu_b, &c.sigma_b);
            let a_var = draw_ig(rng, c.alpha_a, c.lambda_a);
            let b_var = draw_ig(rng, c.alpha_b, c.lambda_b);
            total += log_ig_prior(a_var.value, hyper.alpha_a, hyper.lambda_a) - a_var.log_q;
            total += log_ig_prior(b_var.value, hyper.alpha_b, hyper.lambda_b) - b_var.log_q;
            // Component-effect prior: b ~ N(0, s_b I), or nu ~ N(beta, s_b I) under full centering.
            total += match par {
                Parametrization::FullCentered => log_iso_normal_pdf(&b, &bj, b_var.value),
                _ => log_iso_normal_pdf(&b, &DVector::zeros(b.len()), b_var.value),
            };
            let mut errs = Vec::with_capacity(dims.g);
            for l in 0..dims.g {
                let e = draw_ig(rng, c.alpha_e[l], c.lambda_e[l]);
                total += log_ig_prior(e.value, hyper.alpha_e, hyper.lambda_e) - e.log_q;
                errs.push(e.value);
            }
            beta.push(bj);
            bvec.push(b);
            sa.push(a_var.value);
            sb.push(b_var.value);
            se.push(errs);
        }
        for i in 0..n {
            let cl = &data.clusters()[i];
            let a = draw_gaussian(rng, &state.mu_a[i], &state.sigma_a[i]);
            total -= log_normal_pdf(&a, &state.mu_a[i], &state.sigma_a[i]);
            for j in 0..k {
                let q = state.q[(i, j)];
                if q == 0.0 {
                    continue;
                }
                let (mean, a_center) = match par {
                    Parametrization::Uncentered => (
                        &cl.x * &beta[j] + &cl.w * &a + &cl.v * &bvec[j],
                        DVector::zeros(a.len()),
                    ),
                    Parametrization::PartialCentered => (&cl.x * &a + &cl.v * &bvec[j], beta[j].clone()),
                    Parametrization::FullCentered => (&cl.x * &a, bvec[j].clone()),
                };
                let mut ll = log_iso_normal_pdf(&a, &a_center, sa[j]);
                let mut start = 0;
                for (l, &len) in cl.kappa.iter().enumerate() {
                    if len == 0 {
                        continue;
                    }
                    ll += log_iso_normal_pdf(&cl.y.rows(start, len).into_owned(), &mean.rows(start, len).into_owned(), se[j][l]);
                    start += len;
                }
                total += q * (ll + log_pz[i][j] - q.ln());
            }
        }
        sum += total;
        sum_sq += total * total;
    }
    let m = sum / draws as f64;
    let var = (sum_sq / draws as f64 - m * m).max(0.0) * draws as f64 / (draws as f64 - 1.0);
    (m, (var / draws as f64).sqrt())
}

/// Whole-dataset fingerprint of a component's parameters, for bit-identity checks.
pub fn component_bits(c: &ComponentState) -> Vec<u64> {
    c.mu_beta
        .iter()
        .chain(c.sigma_beta.iter())
        .chain(c.mu_b.iter())
        .chain(c.sigma_b.iter())
        .chain([c.alpha_a, c.lambda_a, c.alpha_b, c.lambda_b].iter())
        .chain(c.alpha_e.iter())
        .chain(c.lambda_e.iter())
        .map(|v| v.to_bits())
        .collect()
}
