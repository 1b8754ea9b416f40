use std::path::Path;

use mlmm::model::read_labels;

use super::ari;
use crate::config::RunConfig;
use crate::data::align_labels;
use crate::error::{CliError, CliResult};

/// Prints the adjusted Rand index of two `cluster_id,label` files, matching
/// rows by cluster id.
pub fn run(cfg: &RunConfig) -> CliResult<()> {
    let (a, b) = match (&cfg.ari.a, &cfg.ari.b) {
        (Some(a), Some(b)) => (a, b),
        _ => return Err(CliError::Config("ari needs two label files".into())),
    };
    let value = ari_of_files(a, b)?;
    println!("{value}");
    Ok(())
}

pub fn ari_of_files(a: &Path, b: &Path) -> CliResult<f64> {
    let (ids_a, la) = read_labels(a).map_err(CliError::Ingest)?;
    let (ids_b, lb) = read_labels(b).map_err(CliError::Ingest)?;
    let lb = align_labels(&ids_a, &ids_b, &lb)?;
    ari(&la, &lb)
}
