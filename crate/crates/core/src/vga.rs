//! Variational greedy algorithm: grows the mixture one round at a time by
//! searching for the best random split of every component with short
//! partial fits, applying splits in order of attained bound while the
//! estimated log marginal likelihood improves, then refitting everything.

use std::collections::BTreeSet;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{GroupedDataset, Hyperparameters};
use crate::varinf::{self, default_init, FitConfig, FitResult, Parametrization, VariationalState, EMPTY_THRESHOLD};

pub use crate::varinf::hard_assignments;

#[derive(Debug, Clone, PartialEq)]
pub struct VgaConfig {
    /// Random split attempts per component.
    pub attempts: usize,
    pub short_run_increment: f64,
    pub tol_rel: f64,
    pub max_sweeps: usize,
    /// Minimum size of each side of a random bipartition.
    pub min_subset: usize,
    pub seed: u64,
    pub enable_merge_suggestions: bool,
    /// Stop testing components whose best split attempt collapsed.
    pub unsplittable_memory: bool,
    /// Safety cap on the number of split rounds.
    pub max_rounds: usize,
}

impl Default for VgaConfig {
    fn default() -> Self {
        Self {
            attempts: 5,
            short_run_increment: 1.0,
            tol_rel: 1e-5,
            max_sweeps: 10_000,
            min_subset: 1,
            seed: 0,
            enable_merge_suggestions: false,
            unsplittable_memory: true,
            max_rounds: 100,
        }
    }
}

impl VgaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.attempts == 0 || self.min_subset == 0 || self.max_rounds == 0 {
            return Err(Error::InvalidInput("attempts, min_subset and max_rounds must be at least 1".into()));
        }
        self.full_fit().validate()?;
        self.short_fit(Vec::new()).validate()
    }

    fn full_fit(&self) -> FitConfig {
        FitConfig {
            tol_rel: self.tol_rel,
            max_sweeps: self.max_sweeps,
            frozen: Vec::new(),
            short_run: false,
            short_run_increment: self.short_run_increment,
            seed: self.seed,
        }
    }

    fn partial_fit(&self, frozen: Vec<usize>) -> FitConfig {
        FitConfig {
            frozen,
            ..self.full_fit()
        }
    }

    fn short_fit(&self, frozen: Vec<usize>) -> FitConfig {
        FitConfig {
            short_run: true,
            ..self.partial_fit(frozen)
        }
    }
}

/// Best split found for one component. The snapshot has `k + 1`
/// components: the first half stays at index `component`, the second half
/// is appended at index `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitCandidate {
    pub component: usize,
    pub partition: (Vec<usize>, Vec<usize>),
    pub attained_bound: f64,
    pub snapshot: FitResult,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SplitOutcome {
    Candidate(SplitCandidate),
    /// The best attempt left one half with no responsibility.
    Collapsed { component: usize, attained_bound: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CandidateRecord {
    pub component: usize,
    pub attained_bound: f64,
    pub collapsed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoundRecord {
    pub round: usize,
    pub k_before: usize,
    pub candidates: Vec<CandidateRecord>,
    /// Parent components whose split was accepted, in application order.
    pub accepted_splits: Vec<usize>,
    /// Log marginal estimate after each accepted split.
    pub split_log_marginals: Vec<f64>,
    pub k_after: usize,
    pub pruned: usize,
    pub log_marginal: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VgaResult {
    pub final_model: FitResult,
    pub k_selected: usize,
    pub history: Vec<RoundRecord>,
    /// Entry 0 is the one-component model; one entry per accepted round after that.
    pub log_marginal_per_round: Vec<f64>,
}

/// Clusters hard-assigned to component `j`.
pub fn assigned_set(q: &DMatrix<f64>, j: usize) -> Vec<usize> {
    hard_assignments(q)
        .into_iter()
        .enumerate()
        .filter(|&(_, l)| l == j)
        .map(|(i, _)| i)
        .collect()
}

fn attempt_rng(seed: u64, round: usize, component: usize, attempt: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((round as u64) << 40) ^ ((component as u64) << 20) ^ attempt as u64);
    rng
}

fn random_bipartition<R: Rng>(rng: &mut R, members: &[usize], min_subset: usize) -> (Vec<usize>, Vec<usize>) {
    loop {
        let (mut a, mut b) = (Vec::new(), Vec::new());
        for &i in members {
            if rng.random_bool(0.5) {
                a.push(i);
            } else {
                b.push(i);
            }
        }
        if a.len() >= min_subset && b.len() >= min_subset {
            return (a, b);
        }
    }
}

/// Full `k x d` gating matrix with the zero reference row restored.
fn full_delta(mu_delta: &DMatrix<f64>) -> DMatrix<f64> {
    mu_delta.clone().insert_row(0, 0.0)
}

/// Drops the reference row after re-referencing to row 0.
fn reduced_delta(full: &DMatrix<f64>) -> DMatrix<f64> {
    let mut shifted = full.clone();
    let base = full.row(0).into_owned();
    for mut r in shifted.row_iter_mut() {
        r -= &base;
    }
    shifted.remove_row(0)
}

/// Appends a copy of component `j` (parameters and gating row) with an empty
/// responsibility column.
fn append_copy(state: &VariationalState, j: usize) -> VariationalState {
    let mut st = state.clone();
    st.components.push(state.components[j].clone());
    let k = state.k();
    st.q = st.q.insert_column(k, 0.0);
    let full = full_delta(&state.mu_delta);
    let row = full.row(j).into_owned();
    let mut grown = full.insert_row(k, 0.0);
    grown.row_mut(k).copy_from(&row);
    st.mu_delta = reduced_delta(&grown);
    st
}

/// Removes component `j`, giving its responsibility to nobody: rows are
/// renormalised over the remaining components.
fn remove_component(state: &VariationalState, j: usize) -> VariationalState {
    let mut st = state.clone();
    st.components.remove(j);
    st.q = st.q.remove_column(j);
    for mut row in st.q.row_iter_mut() {
        let s = row.sum();
        if s > 0.0 {
            row /= s;
        } else {
            row.fill(1.0 / row.len() as f64);
        }
    }
    st.mu_delta = reduced_delta(&full_delta(&state.mu_delta).remove_row(j));
    st
}

/// Searches for the best split of component `j` among `cfg.attempts`
/// random bipartitions of its hard-assigned clusters. `round` only enters
/// the seeding.
#[allow(clippy::too_many_arguments)]
pub fn propose_split(
    model: &FitResult,
    data: &GroupedDataset,
    hyper: &Hyperparameters,
    par: Parametrization,
    j: usize,
    cfg: &VgaConfig,
    round: usize,
) -> Result<SplitOutcome> {
    cfg.validate()?;
    let k = model.k();
    if j >= k {
        return Err(Error::InvalidInput(format!("component {j} does not exist (k = {k})")));
    }
    let members = assigned_set(&model.state.q, j);
    if members.len() < 2 * cfg.min_subset {
        return Err(Error::Unsplittable {
            component: j,
            reason: format!("{} assigned clusters, need at least {}", members.len(), 2 * cfg.min_subset),
        });
    }
    let frozen: Vec<usize> = (0..k).filter(|&c| c != j).collect();
    let fit_cfg = cfg.short_fit(frozen);

    let attempts: Vec<Result<(FitResult, (Vec<usize>, Vec<usize>))>> = (0..cfg.attempts)
        .into_par_iter()
        .map(|m| {
            let mut rng = attempt_rng(cfg.seed, round, j, m);
            let (a1, a2) = random_bipartition(&mut rng, &members, cfg.min_subset);
            let mut st = append_copy(&model.state, j);
            let parent = model.state.q.column(j).into_owned();
            st.q.column_mut(j).fill(0.0);
            for &i in &a1 {
                st.q[(i, j)] = parent[i];
            }
            for &i in &a2 {
                st.q[(i, k)] = parent[i];
            }
            // Clusters outside the assigned set keep their (minority) parent
            // mass, shared equally so that rows stay normalised.
            let mut inside = vec![false; st.n()];
            for &i in &members {
                inside[i] = true;
            }
            for (i, _) in inside.iter().enumerate().filter(|(_, &b)| !b) {
                st.q[(i, j)] = 0.5 * parent[i];
                st.q[(i, k)] = 0.5 * parent[i];
            }
            let res = varinf::fit(st, data, hyper, par, &fit_cfg)?;
            Ok((res, (a1, a2)))
        })
        .collect();

    let mut best: Option<(FitResult, (Vec<usize>, Vec<usize>))> = None;
    for a in attempts {
        let a = a?;
        if best.as_ref().is_none_or(|b| a.0.lower_bound > b.0.lower_bound) {
            best = Some(a);
        }
    }
    let (snapshot, partition) = best.expect("at least one attempt");
    let attained_bound = snapshot.lower_bound;
    if snapshot.state.mass(j) < EMPTY_THRESHOLD || snapshot.state.mass(k) < EMPTY_THRESHOLD {
        return Ok(SplitOutcome::Collapsed {
            component: j,
            attained_bound,
        });
    }
    Ok(SplitOutcome::Candidate(SplitCandidate {
        component: j,
        partition,
        attained_bound,
        snapshot,
    }))
}

/// Applies candidates in the given order (callers sort by descending bound)
/// while each split raises the log marginal estimate. Returns the model
/// after the accepted splits, and the log marginal after each of them.
/// Accepted splits append their second half, so the `l`-th accepted split
/// adds component `k + l`.
pub fn apply_splits(
    model_k: &FitResult,
    candidates: &[SplitCandidate],
    data: &GroupedDataset,
    hyper: &Hyperparameters,
    par: Parametrization,
    cfg: &VgaConfig,
) -> Result<(FitResult, Vec<f64>)> {
    cfg.validate()?;
    let k = model_k.k();
    let mut temp = model_k.clone();
    let mut marginals = Vec::new();
    for (pos, cand) in candidates.iter().enumerate() {
        let l = marginals.len();
        let j = cand.component;
        let snap = &cand.snapshot.state;
        let init = if l == 0 {
            snap.clone()
        } else {
            let cur = &temp.state;
            let new_idx = cur.k();
            let mut st = append_copy(cur, j);
            st.components[j] = snap.components[j].clone();
            st.components[new_idx] = snap.components[k].clone();
            // Share the current mass of the parent in the snapshot's proportions.
            for i in 0..st.n() {
                let avail = cur.q[(i, j)];
                let (s1, s2) = (snap.q[(i, j)], snap.q[(i, k)]);
                let frac = if s1 + s2 > 0.0 { s1 / (s1 + s2) } else { 0.5 };
                st.q[(i, j)] = avail * frac;
                st.q[(i, new_idx)] = avail * (1.0 - frac);
            }
            st
        };
        let awaiting: BTreeSet<usize> = candidates[pos + 1..].iter().map(|c| c.component).collect();
        let res = varinf::fit(init, data, hyper, par, &cfg.partial_fit(awaiting.into_iter().collect()))?;
        if res.log_marginal_estimate > temp.log_marginal_estimate {
            marginals.push(res.log_marginal_estimate);
            temp = res;
        } else {
            break;
        }
    }
    Ok((temp, marginals))
}

/// Removes every component with total responsibility below the empty
/// threshold and refreshes the gating posterior. Returns the removed
/// original indices.
fn prune_empty(
    model: &mut FitResult,
    data: &GroupedDataset,
    hyper: &Hyperparameters,
) -> Result<Vec<usize>> {
    let empty: Vec<usize> = (0..model.k())
        .filter(|&j| model.state.mass(j) < EMPTY_THRESHOLD)
        .collect();
    if empty.is_empty() || empty.len() == model.k() {
        return Ok(Vec::new());
    }
    for &j in empty.iter().rev() {
        model.state = remove_component(&model.state, j);
    }
    varinf::relax(model, data, hyper)?;
    Ok(empty)
}

pub fn run_vga(data: &GroupedDataset, hyper: &Hyperparameters, par: Parametrization, cfg: &VgaConfig) -> Result<VgaResult> {
    cfg.validate()?;
    let init = default_init(data, hyper, 1, par)?;
    let mut model = varinf::fit(init, data, hyper, par, &cfg.full_fit())?;
    let mut history = Vec::new();
    let mut per_round = vec![model.log_marginal_estimate];
    let mut unsplittable: BTreeSet<usize> = BTreeSet::new();

    for round in 0..cfg.max_rounds {
        let k = model.k();
        let testable: Vec<usize> = (0..k)
            .filter(|j| !unsplittable.contains(j))
            .filter(|&j| assigned_set(&model.state.q, j).len() >= 2 * cfg.min_subset)
            .collect();
        let outcomes: Vec<SplitOutcome> = testable
            .par_iter()
            .map(|&j| propose_split(&model, data, hyper, par, j, cfg, round))
            .collect::<Result<_>>()?;

        let mut records = Vec::new();
        let mut candidates = Vec::new();
        for o in outcomes {
            match o {
                SplitOutcome::Candidate(c) => {
                    records.push(CandidateRecord {
                        component: c.component,
                        attained_bound: c.attained_bound,
                        collapsed: false,
                    });
                    candidates.push(c);
                }
                SplitOutcome::Collapsed { component, attained_bound } => {
                    records.push(CandidateRecord {
                        component,
                        attained_bound,
                        collapsed: true,
                    });
                    if cfg.unsplittable_memory {
                        unsplittable.insert(component);
                    }
                }
            }
        }
        candidates.sort_by(|a, b| {
            b.attained_bound
                .total_cmp(&a.attained_bound)
                .then(a.component.cmp(&b.component))
        });

        let (temp, split_marginals) = apply_splits(&model, &candidates, data, hyper, par, cfg)?;
        let s = split_marginals.len();
        let accepted: Vec<usize> = candidates[..s].iter().map(|c| c.component).collect();
        if s == 0 {
            history.push(RoundRecord {
                round,
                k_before: k,
                candidates: records,
                accepted_splits: accepted,
                split_log_marginals: split_marginals,
                k_after: k,
                pruned: 0,
                log_marginal: model.log_marginal_estimate,
            });
            break;
        }

        let temp_score = temp.log_marginal_estimate;
        let mut refit = varinf::fit(temp.state.clone(), data, hyper, par, &cfg.full_fit())?;
        let removed = prune_empty(&mut refit, data, hyper)?;
        // Keep whichever of the refit and the split-stage model scores higher.
        let mut next = if refit.log_marginal_estimate >= temp_score { refit } else { temp };
        let removed = if next.k() == k + s { Vec::new() } else { removed };
        if !removed.is_empty() {
            unsplittable = unsplittable
                .into_iter()
                .filter(|j| !removed.contains(j))
                .map(|j| j - removed.iter().filter(|&&r| r < j).count())
                .collect();
        }
        next.sweeps = next.lb_trace.len();
        history.push(RoundRecord {
            round,
            k_before: k,
            candidates: records,
            accepted_splits: accepted,
            split_log_marginals: split_marginals,
            k_after: next.k(),
            pruned: removed.len(),
            log_marginal: next.log_marginal_estimate,
        });
        per_round.push(next.log_marginal_estimate);
        model = next;
    }

    Ok(VgaResult {
        k_selected: model.k(),
        final_model: model,
        history,
        log_marginal_per_round: per_round,
    })
}

/// Merges components `i` and `j` into the one with larger total
/// responsibility, refits the merged component with all others frozen and
/// keeps the merge if the log marginal estimate increases.
pub fn try_merge(
    model: &FitResult,
    i: usize,
    j: usize,
    data: &GroupedDataset,
    hyper: &Hyperparameters,
    par: Parametrization,
    cfg: &VgaConfig,
) -> Result<(FitResult, bool)> {
    cfg.validate()?;
    let k = model.k();
    if i == j || i >= k || j >= k {
        return Err(Error::InvalidInput(format!("cannot merge components {i} and {j} of {k}")));
    }
    let st = &model.state;
    let (keep, drop) = if st.mass(i) >= st.mass(j) { (i, j) } else { (j, i) };
    let mut merged = st.clone();
    let summed = st.q.column(keep) + st.q.column(drop);
    merged.q.set_column(keep, &summed);
    merged.q.column_mut(drop).fill(0.0);
    let merged = remove_component(&merged, drop);
    let target = if keep > drop { keep - 1 } else { keep };
    let frozen: Vec<usize> = (0..k - 1).filter(|&c| c != target).collect();
    let res = varinf::fit(merged, data, hyper, par, &cfg.partial_fit(frozen))?;
    if res.log_marginal_estimate > model.log_marginal_estimate {
        Ok((res, true))
    } else {
        Ok((model.clone(), false))
    }
}

/// Component pairs ranked by the cosine similarity of their
/// responsibility columns, most similar first.
pub fn merge_suggestions(q: &DMatrix<f64>) -> Vec<(usize, usize, f64)> {
    let k = q.ncols();
    let norms: Vec<f64> = (0..k).map(|j| q.column(j).norm()).collect();
    let mut out = Vec::new();
    for a in 0..k {
        for b in a + 1..k {
            let denom = norms[a] * norms[b];
            let score = if denom > 0.0 { q.column(a).dot(&q.column(b)) / denom } else { 0.0 };
            out.push((a, b, score));
        }
    }
    out.sort_by(|x, y| y.2.total_cmp(&x.2).then((x.0, x.1).cmp(&(y.0, y.1))));
    out
}
