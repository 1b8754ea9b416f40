use mlmm::model::{load_dataset_with_ids, read_labels, simulate_dataset, GroupedDataset, Hyperparameters, TrueParameters};
use mlmm::presets::{self, time_course_design};

use crate::config::{DataPreset, RunConfig};
use crate::error::{CliError, CliResult};

/// Default cluster count for the single-component presets.
pub const DEFAULT_PRESET_CLUSTERS: usize = 60;

pub struct Loaded {
    pub data: GroupedDataset,
    pub ids: Vec<String>,
    /// Reference labels aligned with `ids`, when known.
    pub truth: Option<Vec<usize>>,
    /// Generating parameters for simulated data.
    pub truth_params: Option<TrueParameters>,
}

pub fn simulate_preset(preset: DataPreset, n: Option<usize>, seed: u64) -> CliResult<Loaded> {
    let n = n.unwrap_or(DEFAULT_PRESET_CLUSTERS);
    let (data, labels, truth) = match preset {
        DataPreset::TimeCourseSimulation => {
            let (d, l) = presets::simulation_dataset(seed).map_err(CliError::Ingest)?;
            (d, l, presets::simulation_truth())
        }
        DataPreset::SingleComponent => {
            let (d, l) = presets::single_component_dataset(n, seed).map_err(CliError::Ingest)?;
            (d, l, presets::single_component_truth())
        }
        DataPreset::ZeroVariance => {
            let truth = presets::zero_variance_truth();
            let (d, l) = simulate_dataset(&truth, &vec![time_course_design(); n], seed).map_err(CliError::Ingest)?;
            (d, l, truth)
        }
    };
    Ok(Loaded {
        ids: (1..=data.n()).map(|i| i.to_string()).collect(),
        data,
        truth: Some(labels),
        truth_params: Some(truth),
    })
}

/// Loads the dataset named by the config: a preset, or a file with a schema.
pub fn load(cfg: &RunConfig) -> CliResult<Loaded> {
    let d = &cfg.data;
    let mut loaded = match (d.preset, &d.path) {
        (Some(_), Some(_)) => return Err(CliError::Config("give either data.preset or data.path, not both".into())),
        (None, None) => return Err(CliError::Config("no input: set data.preset or data.path".into())),
        (Some(p), None) => simulate_preset(p, d.n_clusters, cfg.seed)?,
        (None, Some(path)) => {
            let schema = d
                .schema
                .as_ref()
                .ok_or_else(|| CliError::Config("data.path needs a [data.schema] table".into()))?;
            let (data, ids) =
                load_dataset_with_ids(path, d.covariates.as_deref(), schema).map_err(CliError::Ingest)?;
            Loaded {
                data,
                ids,
                truth: None,
                truth_params: None,
            }
        }
    };
    if let Some(path) = &d.labels {
        let (ids, labels) = read_labels(path).map_err(CliError::Ingest)?;
        loaded.truth = Some(align_labels(&loaded.ids, &ids, &labels)?);
    }
    Ok(loaded)
}

/// Reorders `labels` (listed for `ids`) to follow `order`.
pub fn align_labels(order: &[String], ids: &[String], labels: &[usize]) -> CliResult<Vec<usize>> {
    let lookup: std::collections::HashMap<&str, usize> =
        ids.iter().map(String::as_str).zip(labels.iter().copied()).collect();
    if lookup.len() != ids.len() {
        return Err(CliError::Ingest(mlmm::Error::InvalidDataset("duplicate cluster_id in label file".into())));
    }
    if ids.len() != order.len() {
        return Err(CliError::Ingest(mlmm::Error::InvalidDataset(format!(
            "label file has {} clusters, expected {}",
            ids.len(),
            order.len()
        ))));
    }
    order
        .iter()
        .map(|id| {
            lookup.get(id.as_str()).copied().ok_or_else(|| {
                CliError::Ingest(mlmm::Error::InvalidDataset(format!("cluster '{id}' has no label")))
            })
        })
        .collect()
}

pub fn hyperparameters(cfg: &RunConfig, p: usize) -> Hyperparameters {
    let pr = &cfg.prior;
    let mut h = pr.recipe.hyperparameters(p);
    if let Some(v) = pr.beta_var {
        h.sigma_beta = nalgebra::DMatrix::identity(p, p) * v;
    }
    if let Some(v) = pr.delta_var {
        h.sigma_delta_scale = v;
    }
    if let Some(v) = pr.ig_shape {
        (h.alpha_a, h.alpha_b, h.alpha_e) = (v, v, v);
    }
    if let Some(v) = pr.ig_scale {
        (h.lambda_a, h.lambda_b, h.lambda_e) = (v, v, v);
    }
    h
}
