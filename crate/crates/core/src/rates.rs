//! Convergence rate of the variational mean updates for a joint Gaussian
//! target `p(theta, Y) = N((mu1, mu2), H^{-1})`.
//!
//! With `theta` split into blocks and the updates cycling through `Y` and
//! then each `theta` block, the error `lambda_t = mu_theta^(t) - mu1` obeys
//! `lambda_{t+1} = [B_aug + (I - B_aug) B_EM] lambda_t`, where
//! `B_EM = H11^{-1} H12 H22^{-1} H21`, `L` is the block lower triangle of
//! `H11` (diagonal blocks included), `U = L - H11` and `B_aug = L^{-1} U`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::cholesky;

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianTarget {
    pub mu1: DVector<f64>,
    pub mu2: DVector<f64>,
    /// Joint precision, `(p+r) x (p+r)`.
    pub h: DMatrix<f64>,
    /// Sizes of the `theta` blocks, summing to `p`.
    pub partition: Vec<usize>,
}

impl GaussianTarget {
    pub fn new(mu1: DVector<f64>, mu2: DVector<f64>, h: DMatrix<f64>, partition: Vec<usize>) -> Result<Self> {
        let (p, r) = (mu1.len(), mu2.len());
        if h.shape() != (p + r, p + r) {
            return Err(Error::Dimension(format!(
                "precision is {:?}, expected ({1}, {1})",
                h.shape(),
                p + r
            )));
        }
        if partition.iter().sum::<usize>() != p || partition.contains(&0) {
            return Err(Error::Dimension(format!("partition {partition:?} does not split {p} coordinates")));
        }
        if (&h - h.transpose()).amax() > 1e-12 * h.amax().max(1.0) {
            return Err(Error::InvalidInput("precision is not symmetric".into()));
        }
        cholesky(&h, "target precision")?;
        Ok(Self { mu1, mu2, h, partition })
    }

    pub fn p(&self) -> usize {
        self.mu1.len()
    }

    pub fn r(&self) -> usize {
        self.mu2.len()
    }

    pub fn h11(&self) -> DMatrix<f64> {
        self.h.view((0, 0), (self.p(), self.p())).into_owned()
    }

    pub fn h12(&self) -> DMatrix<f64> {
        self.h.view((0, self.p()), (self.p(), self.r())).into_owned()
    }

    pub fn h21(&self) -> DMatrix<f64> {
        self.h.view((self.p(), 0), (self.r(), self.p())).into_owned()
    }

    pub fn h22(&self) -> DMatrix<f64> {
        self.h.view((self.p(), self.p()), (self.r(), self.r())).into_owned()
    }

    fn block_starts(&self) -> Vec<usize> {
        let mut starts = Vec::with_capacity(self.partition.len());
        let mut s = 0;
        for &len in &self.partition {
            starts.push(s);
            s += len;
        }
        starts
    }
}

/// `B_EM = H11^{-1} H12 H22^{-1} H21`.
pub fn em_rate_matrix(t: &GaussianTarget) -> Result<DMatrix<f64>> {
    let h11 = cholesky(&t.h11(), "H11")?;
    let h22 = cholesky(&t.h22(), "H22")?;
    Ok(h11.solve(&(t.h12() * h22.solve(&t.h21()))))
}

/// `B_aug + (I - B_aug) B_EM`.
pub fn blocked_rate_matrix(t: &GaussianTarget) -> Result<DMatrix<f64>> {
    let p = t.p();
    let h11 = t.h11();
    let mut lower = h11.clone();
    let starts = t.block_starts();
    for (bi, (&si, &li)) in starts.iter().zip(&t.partition).enumerate() {
        for (&sj, &lj) in starts.iter().zip(&t.partition).skip(bi + 1) {
            lower.view_mut((si, sj), (li, lj)).fill(0.0);
        }
    }
    let upper = &lower - &h11;
    let b_aug = lower
        .lu()
        .solve(&upper)
        .ok_or_else(|| Error::not_pd("block lower triangle of H11 (singular diagonal block)"))?;
    let b_em = em_rate_matrix(t)?;
    Ok(&b_aug + (DMatrix::identity(p, p) - &b_aug) * b_em)
}

pub fn blocked_rate(t: &GaussianTarget) -> Result<f64> {
    Ok(spectral_radius(&blocked_rate_matrix(t)?))
}

/// Largest eigenvalue modulus.
pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq)]
pub struct VbTrace {
    /// `mu_theta` after each full cycle; entry 0 is the initial value.
    pub theta: Vec<DVector<f64>>,
    /// `mu_Y` computed in each cycle.
    pub y: Vec<DVector<f64>>,
}

/// Runs `iterations` cycles of the exact mean updates: first
/// `mu_Y <- mu2 - H22^{-1} H21 (mu_theta - mu1)`, then each `theta` block
/// in order from its conditional given current values.
pub fn simulate_vb(t: &GaussianTarget, init: &DVector<f64>, iterations: usize) -> Result<VbTrace> {
    if init.len() != t.p() {
        return Err(Error::Dimension(format!("initial value has length {}, expected {}", init.len(), t.p())));
    }
    let h12 = t.h12();
    let h21 = t.h21();
    let h22 = cholesky(&t.h22(), "H22")?;
    let h11 = t.h11();
    let starts = t.block_starts();
    let diag: Vec<_> = starts
        .iter()
        .zip(&t.partition)
        .enumerate()
        .map(|(b, (&s, &len))| {
            cholesky(&h11.view((s, s), (len, len)).into_owned(), &format!("diagonal block {b} of H11"))
        })
        .collect::<Result<_>>()?;

    let mut theta = init.clone();
    let mut trace = VbTrace {
        theta: vec![theta.clone()],
        y: Vec::with_capacity(iterations),
    };
    for _ in 0..iterations {
        let y = &t.mu2 - h22.solve(&(&h21 * (&theta - &t.mu1)));
        let dy = &y - &t.mu2;
        for (b, (&s, &len)) in starts.iter().zip(&t.partition).enumerate() {
            let dev = &theta - &t.mu1;
            let mut rhs = h12.rows(s, len) * &dy;
            for (&s2, &len2) in starts.iter().zip(&t.partition) {
                if s2 != s {
                    rhs += h11.view((s, s2), (len, len2)) * dev.rows(s2, len2);
                }
            }
            let new_block = t.mu1.rows(s, len) - diag[b].solve(&rhs);
            theta.rows_mut(s, len).copy_from(&new_block);
        }
        trace.theta.push(theta.clone());
        trace.y.push(y);
    }
    Ok(trace)
}

/// Estimates `lim ||theta_{t+1} - theta*|| / ||theta_t - theta*||` from an
/// iterate sequence with known limit.
///
/// Error vectors of a linear iteration satisfy a linear recurrence whose
/// characteristic roots are eigenvalues of the iteration matrix. The
/// lowest-order recurrence that reproduces the tail (last third of the
/// iterates above the rounding floor, and at least `2p + 1` of them when
/// available) is fitted by row-normalised least squares, and the largest
/// root modulus is returned. Iterates within `max(1e-13 ||e_0||,
/// 1e-8 (1 + ||theta*||))` of the limit are excluded. A sequence that
/// starts at the limit has rate 0.
pub fn empirical_rate(trace: &[DVector<f64>], limit: &DVector<f64>) -> f64 {
    if trace.is_empty() {
        return 0.0;
    }
    let errs: Vec<DVector<f64>> = trace.iter().map(|x| x - limit).collect();
    let norms: Vec<f64> = errs.iter().map(|e| e.norm()).collect();
    if norms[0] == 0.0 {
        return 0.0;
    }
    let floor = (1e-13 * norms[0]).max(1e-8 * (1.0 + limit.norm()));
    let mut last = 0;
    while last + 1 < norms.len() && norms[last + 1] >= floor {
        last += 1;
    }
    if last == 0 {
        return 0.0;
    }
    let p = limit.len();
    let start = (last - last / 3).min(last.saturating_sub(2 * p));
    let tail = &errs[start..=last];

    for s in 1..=p {
        if tail.len() < 2 * s + 1 {
            break;
        }
        let eqs = tail.len() - s;
        let mut a = DMatrix::zeros(eqs * p, s);
        let mut b = DVector::zeros(eqs * p);
        for t0 in 0..eqs {
            let scale = 1.0 / tail[t0 + s].norm();
            for m in 0..s {
                a.view_mut((t0 * p, m), (p, 1)).copy_from(&(&tail[t0 + m] * scale));
            }
            b.rows_mut(t0 * p, p).copy_from(&(&tail[t0 + s] * scale));
        }
        let qr = a.clone().qr();
        let Some(c) = qr.r().solve_upper_triangular(&(qr.q().transpose() * &b)) else {
            continue;
        };
        let res = (&a * &c - &b).norm() / b.norm();
        if res < 1e-10 || s == p {
            // Characteristic polynomial x^s = c_{s-1} x^{s-1} + ... + c_0.
            let mut comp = DMatrix::zeros(s, s);
            for m in 0..s {
                comp[(0, m)] = c[s - 1 - m];
            }
            for m in 1..s {
                comp[(m, m - 1)] = 1.0;
            }
            return spectral_radius(&comp);
        }
    }
    // Too few iterates for a recurrence fit: fall back to the last norm ratio.
    norms[last] / norms[last - 1]
}

/// Runs the mean updates from `mu1 + 1e100 * direction / ||direction||` and
/// estimates the rate from the resulting trace.
pub fn measured_rate(t: &GaussianTarget, direction: &DVector<f64>, iterations: usize) -> Result<f64> {
    let nrm = direction.norm();
    if !(nrm > 0.0) {
        return Err(Error::InvalidInput("direction must be non-zero".into()));
    }
    let init = &t.mu1 + direction * (1e100 / nrm);
    let trace = simulate_vb(t, &init, iterations)?;
    Ok(empirical_rate(&trace.theta, &t.mu1))
}

/// Random target with `H = A'A + 0.1 I`, `A` standard normal, means standard
/// normal and a uniformly random composition of `p` into `m` blocks.
pub fn random_target<R: Rng>(rng: &mut R, p: usize, r: usize, m: usize) -> Result<GaussianTarget> {
    if m == 0 || m > p {
        return Err(Error::InvalidInput(format!("cannot split {p} coordinates into {m} blocks")));
    }
    let dim = p + r;
    let a = DMatrix::from_fn(dim, dim, |_, _| rng.sample::<f64, _>(StandardNormal));
    let mut h = a.tr_mul(&a) + DMatrix::identity(dim, dim) * 0.1;
    crate::linalg::symmetrize(&mut h);
    // Choose m-1 distinct cut points among 1..p.
    let mut cuts: Vec<usize> = (1..p).collect();
    for idx in 0..(m - 1) {
        let pick = rng.random_range(idx..cuts.len());
        cuts.swap(idx, pick);
    }
    let mut chosen: Vec<usize> = cuts[..m - 1].to_vec();
    chosen.sort_unstable();
    let mut partition = Vec::with_capacity(m);
    let mut prev = 0;
    for c in chosen.into_iter().chain(std::iter::once(p)) {
        partition.push(c - prev);
        prev = c;
    }
    let mu1 = DVector::from_fn(p, |_, _| rng.sample::<f64, _>(StandardNormal));
    let mu2 = DVector::from_fn(r, |_, _| rng.sample::<f64, _>(StandardNormal));
    GaussianTarget::new(mu1, mu2, h, partition)
}

/// A one-component linear mixed model with known variances and
/// `X_i = W_i = V_i`, for comparing coordinate systems.
#[derive(Debug, Clone, PartialEq)]
pub struct CenteringSpec {
    pub designs: Vec<DMatrix<f64>>,
    pub sigma_a2: f64,
    pub sigma_b2: f64,
    pub sigma_e2: f64,
    pub sigma_beta: DMatrix<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CenteringReport {
    pub uncentered: f64,
    pub partial: f64,
    pub centered: f64,
}

impl CenteringReport {
    pub fn centered_is_faster(&self) -> bool {
        self.centered < self.uncentered
    }
}

/// Joint posterior precision of the effects in one coordinate system, as a
/// target whose `Y` block holds the cluster effects and whose `theta`
/// blocks are the component-level effects in update order.
pub fn lmm_target(spec: &CenteringSpec, coords: crate::varinf::Parametrization) -> Result<GaussianTarget> {
    use crate::varinf::Parametrization as P;
    let n = spec.designs.len();
    let p = spec
        .designs
        .first()
        .ok_or_else(|| Error::InvalidInput("no designs".into()))?
        .ncols();
    if spec.designs.iter().any(|x| x.ncols() != p) {
        return Err(Error::Dimension("designs differ in column count".into()));
    }
    let vars = [spec.sigma_a2, spec.sigma_b2, spec.sigma_e2];
    if vars.iter().any(|v| !(*v > 0.0)) {
        return Err(Error::InvalidInput("variances must be positive".into()));
    }
    let (sb_inv, _) = crate::linalg::spd_inverse(&spec.sigma_beta, "sigma_beta")?;
    let eye = DMatrix::<f64>::identity(p, p);
    let (ia, ib, ie) = (1.0 / spec.sigma_a2, 1.0 / spec.sigma_b2, 1.0 / spec.sigma_e2);
    let grams: Vec<DMatrix<f64>> = spec.designs.iter().map(|x| x.tr_mul(x) * ie).collect();
    let gram_sum = grams.iter().fold(DMatrix::zeros(p, p), |acc, g| acc + g);

    // Layout: theta block 0 (offset 0), theta block 1 (offset p), then n cluster blocks.
    let dim = (n + 2) * p;
    let mut h = DMatrix::zeros(dim, dim);
    let set = |h: &mut DMatrix<f64>, r: usize, c: usize, m: &DMatrix<f64>| {
        h.view_mut((r * p, c * p), (p, p)).copy_from(m);
        if r != c {
            h.view_mut((c * p, r * p), (p, p)).copy_from(&m.transpose());
        }
    };
    match coords {
        P::Uncentered => {
            // theta = (b, beta), Y = a
            set(&mut h, 0, 0, &(&gram_sum + &eye * ib));
            set(&mut h, 1, 1, &(&gram_sum + &sb_inv));
            set(&mut h, 0, 1, &gram_sum);
            for (i, g) in grams.iter().enumerate() {
                set(&mut h, 2 + i, 2 + i, &(g + &eye * ia));
                set(&mut h, 2 + i, 0, g);
                set(&mut h, 2 + i, 1, g);
            }
        }
        P::PartialCentered => {
            // theta = (beta, b), Y = eta
            set(&mut h, 0, 0, &(&eye * (n as f64 * ia) + &sb_inv));
            set(&mut h, 1, 1, &(&gram_sum + &eye * ib));
            for (i, g) in grams.iter().enumerate() {
                set(&mut h, 2 + i, 2 + i, &(g + &eye * ia));
                set(&mut h, 2 + i, 0, &(&eye * -ia));
                set(&mut h, 2 + i, 1, g);
            }
        }
        P::FullCentered => {
            // theta = (nu, beta), Y = rho
            set(&mut h, 0, 0, &(&eye * (n as f64 * ia + ib)));
            set(&mut h, 1, 1, &(&eye * ib + &sb_inv));
            set(&mut h, 0, 1, &(&eye * -ib));
            for (i, g) in grams.iter().enumerate() {
                set(&mut h, 2 + i, 2 + i, &(g + &eye * ia));
                set(&mut h, 2 + i, 0, &(&eye * -ia));
            }
        }
    }
    // Means do not affect rates; the target is centered at zero.
    GaussianTarget::new(DVector::zeros(2 * p), DVector::zeros(n * p), h, vec![p, p])
}

pub fn centering_rate_comparison(spec: &CenteringSpec) -> Result<CenteringReport> {
    use crate::varinf::Parametrization as P;
    Ok(CenteringReport {
        uncentered: blocked_rate(&lmm_target(spec, P::Uncentered)?)?,
        partial: blocked_rate(&lmm_target(spec, P::PartialCentered)?)?,
        centered: blocked_rate(&lmm_target(spec, P::FullCentered)?)?,
    })
}
