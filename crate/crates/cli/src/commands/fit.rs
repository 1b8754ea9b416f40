use mlmm::eval::summarize_fit;
use mlmm::varinf::{default_init, fit, FitConfig};

use crate::config::RunConfig;
use crate::data;
use crate::error::{CliError, CliResult};
use crate::output::{read_result, write_fit_tables, OutDir, ResultDoc};

pub fn run(cfg: &RunConfig) -> CliResult<()> {
    let loaded = data::load(cfg)?;
    let dims = loaded.data.dims();
    let hyper = data::hyperparameters(cfg, dims.p);
    hyper.validate(dims.p).map_err(|e| CliError::Config(e.to_string()))?;
    let par = cfg.fit.parametrization;
    let state = match &cfg.fit.warm_start {
        Some(path) => {
            let doc = read_result(path)?;
            if doc.parametrization != par {
                return Err(CliError::Config(format!(
                    "warm start was fitted with {}, config asks for {}",
                    doc.parametrization.name(),
                    par.name()
                )));
            }
            let st = doc.to_state(dims.d)?;
            st.check(dims)
                .map_err(|e| CliError::Config(format!("warm start does not match the data: {e}")))?;
            st
        }
        None => default_init(&loaded.data, &hyper, 1, par).map_err(CliError::Fit)?,
    };
    let fc = FitConfig {
        tol_rel: cfg.fit.tol_rel,
        max_sweeps: cfg.fit.max_sweeps,
        seed: cfg.seed,
        ..FitConfig::default()
    };
    let res = fit(state, &loaded.data, &hyper, par, &fc).map_err(CliError::Fit)?;
    let summary = summarize_fit(&res, &loaded.data);

    let mut out = OutDir::create(&cfg.out)?;
    out.json("result.json", &ResultDoc::new("fit", &res, &loaded.ids))?;
    write_fit_tables(&mut out, &res, &summary, &loaded.ids)?;
    out.finish("fit", cfg.seed)?;
    println!(
        "k={} converged={} sweeps={} lower_bound={} log_marginal={}",
        res.k(),
        res.converged,
        res.sweeps,
        res.lower_bound,
        res.log_marginal_estimate
    );
    Ok(())
}
