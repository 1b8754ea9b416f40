//! Forward simulation from the mixture model.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{ClusterData, GroupedDataset};
use crate::error::{Error, Result};
use crate::gating::mixing_probs;

/// Generating parameters. Variances may be zero (degenerate noise).
#[derive(Debug, Clone, PartialEq)]
pub struct TrueParameters {
    pub beta: Vec<DVector<f64>>,
    pub sigma_a2: Vec<f64>,
    pub sigma_b2: Vec<f64>,
    /// `k x g` error variances.
    pub sigma_e2: Vec<Vec<f64>>,
    /// `(k-1) x d` gating coefficients; component 0 is the reference.
    pub delta: DMatrix<f64>,
}

impl TrueParameters {
    pub fn k(&self) -> usize {
        self.beta.len()
    }

    fn check(&self, design: &ClusterDesign) -> Result<()> {
        let k = self.k();
        if k == 0 {
            return Err(Error::Dimension("truth has no components".into()));
        }
        let p = design.x.ncols();
        let g = design.kappa.len();
        let bad = self.beta.iter().any(|b| b.len() != p)
            || self.sigma_a2.len() != k
            || self.sigma_b2.len() != k
            || self.sigma_e2.len() != k
            || self.sigma_e2.iter().any(|row| row.len() != g)
            || self.delta.nrows() != k - 1
            || (k > 1 && self.delta.ncols() != design.u.len());
        if bad {
            return Err(Error::Dimension(format!(
                "truth parameters inconsistent with k = {k}, p = {p}, g = {g}, d = {}",
                design.u.len()
            )));
        }
        let vars = self
            .sigma_a2
            .iter()
            .chain(&self.sigma_b2)
            .chain(self.sigma_e2.iter().flatten());
        for &v in vars {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidInput(format!("variance {v} is not a finite non-negative value")));
            }
        }
        Ok(())
    }
}

/// Designs for one simulated cluster.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterDesign {
    pub x: DMatrix<f64>,
    pub w: DMatrix<f64>,
    pub v: DMatrix<f64>,
    pub u: DVector<f64>,
    pub kappa: Vec<usize>,
}

const LABEL_STREAM: u64 = 0;
const EFFECT_STREAM: u64 = 1;

/// Draws memberships from the gating probabilities, then responses given
/// those memberships. Returns the dataset and the 0-based true labels.
pub fn simulate_dataset(
    truth: &TrueParameters,
    designs: &[ClusterDesign],
    seed: u64,
) -> Result<(GroupedDataset, Vec<usize>)> {
    let first = designs
        .first()
        .ok_or_else(|| Error::Dimension("no cluster designs".into()))?;
    truth.check(first)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(LABEL_STREAM);
    let labels: Vec<usize> = designs
        .iter()
        .map(|des| {
            let probs = mixing_probs(&truth.delta, &des.u);
            let u: f64 = rng.random();
            let mut acc = 0.0;
            for (j, p) in probs.iter().enumerate() {
                acc += p;
                if u < acc {
                    return j;
                }
            }
            probs.len() - 1
        })
        .collect();
    let data = simulate_with_labels(truth, designs, &labels, seed)?;
    Ok((data, labels))
}

/// Simulates responses for fixed memberships. `b_j` is drawn once per
/// component and shared by every cluster assigned to it.
pub fn simulate_with_labels(
    truth: &TrueParameters,
    designs: &[ClusterDesign],
    labels: &[usize],
    seed: u64,
) -> Result<GroupedDataset> {
    let first = designs
        .first()
        .ok_or_else(|| Error::Dimension("no cluster designs".into()))?;
    truth.check(first)?;
    if labels.len() != designs.len() {
        return Err(Error::Dimension(format!(
            "{} labels for {} clusters",
            labels.len(),
            designs.len()
        )));
    }
    let k = truth.k();
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::Dimension(format!("label {bad} outside 0..{k}")));
    }
    let s2 = first.v.ncols();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(EFFECT_STREAM);
    let mut normals = |len: usize, sd: f64| -> DVector<f64> {
        DVector::from_fn(len, |_, _| sd * rng.sample::<f64, _>(StandardNormal))
    };
    let b: Vec<DVector<f64>> = (0..k).map(|j| normals(s2, truth.sigma_b2[j].sqrt())).collect();

    let mut clusters = Vec::with_capacity(designs.len());
    for (des, &j) in designs.iter().zip(labels) {
        if des.x.ncols() != truth.beta[j].len() || des.v.ncols() != s2 {
            return Err(Error::Dimension("design columns differ between clusters".into()));
        }
        let a = normals(des.w.ncols(), truth.sigma_a2[j].sqrt());
        let n_i = des.x.nrows();
        let mut eps = DVector::zeros(n_i);
        let mut start = 0;
        for (l, &len) in des.kappa.iter().enumerate() {
            let sd = truth.sigma_e2[j].get(l).copied().unwrap_or(0.0).sqrt();
            let draw = normals(len, sd);
            if start + len > n_i {
                return Err(Error::Dimension("kappa exceeds the number of design rows".into()));
            }
            eps.rows_mut(start, len).copy_from(&draw);
            start += len;
        }
        let y = &des.x * &truth.beta[j] + &des.w * &a + &des.v * &b[j] + eps;
        clusters.push(ClusterData {
            y,
            x: des.x.clone(),
            w: des.w.clone(),
            v: des.v.clone(),
            u: des.u.clone(),
            kappa: des.kappa.clone(),
        });
    }
    GroupedDataset::new(clusters)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn designs(n: usize, n_i: usize) -> Vec<ClusterDesign> {
        (0..n)
            .map(|_| ClusterDesign {
                x: DMatrix::from_fn(n_i, 2, |r, c| if c == 0 { 1.0 } else { r as f64 }),
                w: DMatrix::from_element(n_i, 1, 1.0),
                v: DMatrix::identity(n_i, n_i),
                u: DVector::from_element(1, 1.0),
                kappa: vec![n_i],
            })
            .collect()
    }

    fn truth(var: f64) -> TrueParameters {
        TrueParameters {
            beta: vec![DVector::from_vec(vec![1.0, -0.5])],
            sigma_a2: vec![var],
            sigma_b2: vec![var],
            sigma_e2: vec![vec![var]],
            delta: DMatrix::zeros(0, 1),
        }
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let des = designs(5, 4);
        let a = simulate_dataset(&truth(0.3), &des, 11).unwrap();
        let b = simulate_dataset(&truth(0.3), &des, 11).unwrap();
        assert_eq!(a, b);
        let c = simulate_dataset(&truth(0.3), &des, 12).unwrap();
        assert_ne!(a.0, c.0);
    }

    #[test]
    fn zero_variance_gives_exact_fixed_effects() {
        let des = designs(3, 4);
        let t = truth(0.0);
        let (data, labels) = simulate_dataset(&t, &des, 1).unwrap();
        assert!(labels.iter().all(|&l| l == 0));
        for (c, d) in data.clusters().iter().zip(&des) {
            assert_eq!(c.y, &d.x * &t.beta[0]);
        }
    }

    #[test]
    fn mismatched_truth_is_rejected() {
        let des = designs(2, 3);
        let mut t = truth(0.1);
        t.beta[0] = DVector::zeros(3);
        assert!(matches!(simulate_dataset(&t, &des, 0), Err(Error::Dimension(_))));
    }
}
