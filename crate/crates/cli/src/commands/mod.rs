pub mod ari;
pub mod fit;
pub mod rates;
pub mod simulate;
pub mod vga;

use mlmm::eval::{adjusted_rand_index, Partition};

use crate::error::{CliError, CliResult};

pub fn ari(a: &[usize], b: &[usize]) -> CliResult<f64> {
    let part = |l: &[usize]| Partition::new(l.to_vec()).map_err(CliError::Ingest);
    adjusted_rand_index(&part(a)?, &part(b)?).map_err(CliError::Ingest)
}
