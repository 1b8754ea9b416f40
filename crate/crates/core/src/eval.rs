//! Clustering evaluation and fit summaries.

use std::collections::HashMap;

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::gating::mixing_probs;
use crate::model::GroupedDataset;
use crate::varinf::{hard_assignments, FitResult};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    labels: Vec<usize>,
    k_effective: usize,
}

impl Partition {
    pub fn new(labels: Vec<usize>) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::InvalidInput("partition has no labels".into()));
        }
        let mut seen: Vec<usize> = labels.clone();
        seen.sort_unstable();
        seen.dedup();
        Ok(Self {
            k_effective: seen.len(),
            labels,
        })
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn k_effective(&self) -> usize {
        self.k_effective
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

fn choose2(m: u64) -> u128 {
    let m = m as u128;
    m * m.saturating_sub(1) / 2
}

/// Hubert–Arabie adjusted Rand index. Pair counts are accumulated as exact
/// integers. When both partitions put everything in one cluster the index is
/// 0/0; it is defined as 1 there since the partitions are identical.
pub fn adjusted_rand_index(a: &Partition, b: &Partition) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Dimension(format!(
            "partitions have {} and {} labels",
            a.len(),
            b.len()
        )));
    }
    let mut table: HashMap<(usize, usize), u64> = HashMap::new();
    let mut rows: HashMap<usize, u64> = HashMap::new();
    let mut cols: HashMap<usize, u64> = HashMap::new();
    for (&x, &y) in a.labels.iter().zip(&b.labels) {
        *table.entry((x, y)).or_default() += 1;
        *rows.entry(x).or_default() += 1;
        *cols.entry(y).or_default() += 1;
    }
    let index: u128 = table.values().map(|&c| choose2(c)).sum();
    let sum_a: u128 = rows.values().map(|&c| choose2(c)).sum();
    let sum_b: u128 = cols.values().map(|&c| choose2(c)).sum();
    let total = choose2(a.len() as u64);
    if total == 0 {
        return Ok(1.0);
    }
    // ARI = (index - sa*sb/T) / ((sa+sb)/2 - sa*sb/T); scale by 2T to stay integral.
    let num = 2 * (index as i128 * total as i128 - (sum_a * sum_b) as i128);
    let den = (sum_a + sum_b) as i128 * total as i128 - 2 * (sum_a * sum_b) as i128;
    if den == 0 {
        return Ok(1.0);
    }
    Ok(num as f64 / den as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitSummary {
    /// `curves[j][i] = X_i mu_beta_j`.
    pub curves: Vec<Vec<DVector<f64>>>,
    /// Number of clusters hard-assigned to each component.
    pub sizes: Vec<usize>,
    /// Per-cluster entropy of the responsibilities.
    pub entropy: Vec<f64>,
    /// Per-cluster gating probabilities at the gating mode.
    pub gating_probs: Vec<DVector<f64>>,
    pub labels: Vec<usize>,
}

pub fn summarize_fit(result: &FitResult, data: &GroupedDataset) -> FitSummary {
    let st = &result.state;
    let labels = hard_assignments(&st.q);
    let mut sizes = vec![0; st.k()];
    for &l in &labels {
        sizes[l] += 1;
    }
    let curves = st
        .components
        .iter()
        .map(|c| data.clusters().iter().map(|cl| &cl.x * &c.mu_beta).collect())
        .collect();
    let entropy = st
        .q
        .row_iter()
        .map(|row| row.iter().filter(|&&v| v > 0.0 && v < 1.0).map(|&v| -v * v.ln()).sum())
        .collect();
    let gating_probs = data
        .clusters()
        .iter()
        .map(|cl| mixing_probs(&st.mu_delta, &cl.u))
        .collect();
    FitSummary {
        curves,
        sizes,
        entropy,
        gating_probs,
        labels,
    }
}
