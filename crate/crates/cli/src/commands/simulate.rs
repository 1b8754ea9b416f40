use mlmm::model::{write_dataset, DesignSource, IngestSchema, NaPolicy};
use serde::Serialize;

use crate::config::{DataPreset, RunConfig};
use crate::data::simulate_preset;
use crate::error::{CliError, CliResult};
use crate::output::{write_labels, OutDir, SCHEMA_VERSION};

#[derive(Serialize)]
struct TruthDoc {
    schema_version: u32,
    preset: DataPreset,
    seed: u64,
    n_clusters: usize,
    /// Schema of `data.csv` / `clusters.csv`.
    schema: IngestSchema,
    beta: Vec<Vec<f64>>,
    sigma_a2: Vec<f64>,
    sigma_b2: Vec<f64>,
    sigma_e2: Vec<Vec<f64>>,
    delta: Vec<Vec<f64>>,
}

pub fn run(cfg: &RunConfig) -> CliResult<()> {
    if cfg.data.path.is_some() {
        return Err(CliError::Config("simulate takes data.preset, not data.path".into()));
    }
    let preset = cfg.data.preset.unwrap_or(DataPreset::TimeCourseSimulation);
    let loaded = simulate_preset(preset, cfg.data.n_clusters, cfg.seed)?;
    let truth = loaded.truth_params.expect("presets carry their truth");
    let labels = loaded.truth.expect("presets carry their labels");
    let dims = loaded.data.dims();

    let mut out = OutDir::create(&cfg.out)?;
    let (data_path, clusters_path) = (out.path("data.csv"), out.path("clusters.csv"));
    write_dataset(&loaded.data, &data_path, &clusters_path).map_err(|e| CliError::io(&data_path, e))?;
    write_labels(&mut out, "labels.csv", &loaded.ids, &labels)?;
    out.json(
        "truth.json",
        &TruthDoc {
            schema_version: SCHEMA_VERSION,
            preset,
            seed: cfg.seed,
            n_clusters: dims.n,
            schema: IngestSchema {
                p: dims.p,
                s1: dims.s1,
                s2: dims.s2,
                d: dims.d,
                g: dims.g,
                na_policy: NaPolicy::Drop,
                x: DesignSource::Columns,
                w: DesignSource::Columns,
                v: DesignSource::Columns,
            },
            beta: truth.beta.iter().map(|b| b.iter().copied().collect()).collect(),
            sigma_a2: truth.sigma_a2.clone(),
            sigma_b2: truth.sigma_b2.clone(),
            sigma_e2: truth.sigma_e2.clone(),
            delta: truth.delta.row_iter().map(|r| r.iter().copied().collect()).collect(),
        },
    )?;
    out.finish("simulate", cfg.seed)?;
    println!("clusters={} observations_per_cluster={}", dims.n, loaded.data.clusters()[0].n_obs());
    Ok(())
}
