mod commands;
mod config;
mod data;
mod error;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use mlmm::varinf::Parametrization;

use config::{DataPreset, RatesPreset, RunConfig};
use error::{CliError, CliResult};

#[derive(Parser)]
#[command(name = "mlmm", version, about = "Variational mixtures of linear mixed models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (0: one per core).
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ParArg {
    Uncentered,
    PartialCentered,
    FullCentered,
}

impl From<ParArg> for Parametrization {
    fn from(p: ParArg) -> Self {
        match p {
            ParArg::Uncentered => Parametrization::Uncentered,
            ParArg::PartialCentered => Parametrization::PartialCentered,
            ParArg::FullCentered => Parametrization::FullCentered,
        }
    }
}

#[derive(Args)]
struct Input {
    /// Simulate the input from a bundled preset.
    #[arg(long, conflicts_with = "data")]
    preset: Option<DataPreset>,
    /// Long-format data file; the schema comes from the config.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Cluster covariate file.
    #[arg(long)]
    covariates: Option<PathBuf>,
    /// Reference labels to score the clustering against.
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long)]
    parametrization: Option<ParArg>,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a model from one component or a warm start.
    Fit {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        input: Input,
        /// `result.json` of an earlier fit to start from.
        #[arg(long)]
        warm_start: Option<PathBuf>,
    },
    /// Select the number of components by greedy splitting.
    Vga {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        input: Input,
        /// Write ranked merge suggestions.
        #[arg(long)]
        merge_suggestions: bool,
    },
    /// Write a simulated dataset with its true labels.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        preset: Option<DataPreset>,
        #[arg(long)]
        n_clusters: Option<usize>,
    },
    /// Compare predicted and measured convergence rates.
    Rates {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        preset: Option<RatesPreset>,
        #[arg(long)]
        targets: Option<usize>,
    },
    /// Adjusted Rand index of two `cluster_id,label` files.
    Ari {
        #[command(flatten)]
        common: Common,
        a: Option<PathBuf>,
        b: Option<PathBuf>,
    },
}

fn base_config(common: &Common) -> CliResult<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(o) = &common.out {
        cfg.out = o.clone();
    }
    if let Some(t) = common.threads {
        cfg.threads = t;
    }
    Ok(cfg)
}

fn apply_input(cfg: &mut RunConfig, input: Input) {
    if let Some(p) = input.preset {
        cfg.data.preset = Some(p);
        cfg.data.path = None;
    }
    if let Some(d) = input.data {
        cfg.data.path = Some(d);
        cfg.data.preset = None;
    }
    if input.covariates.is_some() {
        cfg.data.covariates = input.covariates;
    }
    if input.labels.is_some() {
        cfg.data.labels = input.labels;
    }
    if let Some(p) = input.parametrization {
        cfg.fit.parametrization = p.into();
    }
}

fn run(cli: Cli) -> CliResult<()> {
    let (cfg, runner): (RunConfig, fn(&RunConfig) -> CliResult<()>) = match cli.command {
        Command::Fit { common, input, warm_start } => {
            let mut cfg = base_config(&common)?;
            apply_input(&mut cfg, input);
            if warm_start.is_some() {
                cfg.fit.warm_start = warm_start;
            }
            (cfg, commands::fit::run)
        }
        Command::Vga { common, input, merge_suggestions } => {
            let mut cfg = base_config(&common)?;
            apply_input(&mut cfg, input);
            cfg.vga.enable_merge_suggestions |= merge_suggestions;
            (cfg, commands::vga::run)
        }
        Command::Simulate { common, preset, n_clusters } => {
            let mut cfg = base_config(&common)?;
            if preset.is_some() {
                cfg.data.preset = preset;
            }
            if n_clusters.is_some() {
                cfg.data.n_clusters = n_clusters;
            }
            (cfg, commands::simulate::run)
        }
        Command::Rates { common, preset, targets } => {
            let mut cfg = base_config(&common)?;
            if let Some(p) = preset {
                cfg.rates.preset = p;
            }
            if let Some(t) = targets {
                cfg.rates.targets = t;
            }
            (cfg, commands::rates::run)
        }
        Command::Ari { common, a, b } => {
            let mut cfg = base_config(&common)?;
            if a.is_some() {
                cfg.ari.a = a;
            }
            if b.is_some() {
                cfg.ari.b = b;
            }
            (cfg, commands::ari::run)
        }
    };
    cfg.validate()?;
    if cfg.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.threads)
            .build_global()
            .map_err(|e| CliError::Config(format!("cannot start {} threads: {e}", cfg.threads)))?;
    }
    runner(&cfg)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
