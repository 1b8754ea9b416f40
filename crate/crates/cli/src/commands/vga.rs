use mlmm::eval::summarize_fit;
use mlmm::vga::{merge_suggestions, run_vga, RoundRecord};
use serde::Serialize;

use super::ari;
use crate::config::RunConfig;
use crate::data;
use crate::error::{CliError, CliResult};
use crate::output::{num, write_fit_tables, write_labels, OutDir, ResultDoc, SCHEMA_VERSION};

/// `history.json`.
#[derive(Serialize)]
struct HistoryDoc<'a> {
    schema_version: u32,
    seed: u64,
    k_selected: usize,
    /// Log marginal estimate of the starting model and after each round with an accepted split.
    log_marginal_per_round: &'a [f64],
    /// Adjusted Rand index against the reference labels, when available.
    reference_ari: Option<f64>,
    rounds: &'a [RoundRecord],
}

pub fn run(cfg: &RunConfig) -> CliResult<()> {
    let loaded = data::load(cfg)?;
    let p = loaded.data.dims().p;
    let hyper = data::hyperparameters(cfg, p);
    hyper.validate(p).map_err(|e| CliError::Config(e.to_string()))?;
    if cfg.fit.warm_start.is_some() {
        return Err(CliError::Config("vga always starts from one component; fit.warm_start is for fit".into()));
    }
    let vcfg = cfg.vga_config();
    let res = run_vga(&loaded.data, &hyper, cfg.fit.parametrization, &vcfg).map_err(CliError::Fit)?;
    let model = &res.final_model;
    let summary = summarize_fit(model, &loaded.data);
    let reference_ari = loaded.truth.as_ref().map(|t| ari(&summary.labels, t)).transpose()?;

    let mut out = OutDir::create(&cfg.out)?;
    out.json("result.json", &ResultDoc::new("vga", model, &loaded.ids))?;
    out.json(
        "history.json",
        &HistoryDoc {
            schema_version: SCHEMA_VERSION,
            seed: cfg.seed,
            k_selected: res.k_selected,
            log_marginal_per_round: &res.log_marginal_per_round,
            reference_ari,
            rounds: &res.history,
        },
    )?;
    write_fit_tables(&mut out, model, &summary, &loaded.ids)?;
    if let Some(t) = &loaded.truth {
        write_labels(&mut out, "reference_labels.csv", &loaded.ids, t)?;
    }
    if vcfg.enable_merge_suggestions {
        out.csv(
            "merge_suggestions.csv",
            &["rank", "component_a", "component_b", "similarity"],
            merge_suggestions(&model.state.q)
                .into_iter()
                .enumerate()
                .map(|(r, (a, b, s))| vec![(r + 1).to_string(), a.to_string(), b.to_string(), num(s)]),
        )?;
    }
    out.finish("vga", cfg.seed)?;
    let ari_text = reference_ari.map_or(String::new(), |a| format!(" ari={a}"));
    println!(
        "k_selected={} rounds={} log_marginal={}{ari_text}",
        res.k_selected,
        res.history.len(),
        model.log_marginal_estimate
    );
    Ok(())
}
