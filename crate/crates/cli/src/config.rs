//! TOML run configuration. Every field has a default, so an empty file is
//! valid; command-line flags override file values. Relative paths in a
//! config file are resolved against the file's directory.

use std::path::{Path, PathBuf};

use mlmm::model::IngestSchema;
use mlmm::presets::PriorRecipe;
use mlmm::varinf::Parametrization;
use mlmm::vga::VgaConfig;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub out: PathBuf,
    /// Worker threads; 0 uses one per core.
    pub threads: usize,
    pub data: DataConfig,
    pub prior: PriorConfig,
    pub fit: FitSection,
    pub vga: VgaSection,
    pub rates: RatesSection,
    pub ari: AriSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out: PathBuf::from("out"),
            threads: 0,
            data: DataConfig::default(),
            prior: PriorConfig::default(),
            fit: FitSection::default(),
            vga: VgaSection::default(),
            rates: RatesSection::default(),
            ari: AriSection::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum DataPreset {
    /// 499 clusters from 12 periodic components.
    TimeCourseSimulation,
    /// Clusters from one component on the time-course design.
    SingleComponent,
    /// As `single-component` with every variance zero.
    ZeroVariance,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub preset: Option<DataPreset>,
    pub path: Option<PathBuf>,
    pub covariates: Option<PathBuf>,
    /// Reference labels (`cluster_id,label`) to score the clustering against.
    pub labels: Option<PathBuf>,
    pub schema: Option<IngestSchema>,
    /// Cluster count for the single-component presets.
    pub n_clusters: Option<usize>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PriorConfig {
    pub recipe: PriorRecipe,
    pub beta_var: Option<f64>,
    pub delta_var: Option<f64>,
    pub ig_shape: Option<f64>,
    pub ig_scale: Option<f64>,
}

impl Default for PriorConfig {
    fn default() -> Self {
        Self {
            recipe: PriorRecipe::TimeCourse,
            beta_var: None,
            delta_var: None,
            ig_shape: None,
            ig_scale: None,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitSection {
    pub parametrization: Parametrization,
    pub tol_rel: f64,
    pub max_sweeps: usize,
    /// A `result.json` from an earlier run to start from.
    pub warm_start: Option<PathBuf>,
}

impl Default for FitSection {
    fn default() -> Self {
        Self {
            parametrization: Parametrization::Uncentered,
            tol_rel: 1e-5,
            max_sweeps: 10_000,
            warm_start: None,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VgaSection {
    pub attempts: usize,
    pub min_subset: usize,
    pub max_rounds: usize,
    pub short_run_increment: f64,
    pub enable_merge_suggestions: bool,
    pub unsplittable_memory: bool,
}

impl Default for VgaSection {
    fn default() -> Self {
        let d = VgaConfig::default();
        Self {
            attempts: d.attempts,
            min_subset: d.min_subset,
            max_rounds: d.max_rounds,
            short_run_increment: d.short_run_increment,
            enable_merge_suggestions: d.enable_merge_suggestions,
            unsplittable_memory: d.unsplittable_memory,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum RatesPreset {
    /// Random Gaussian targets, theory against iteration.
    Suite,
    /// One scalar block pair with correlation `rho`.
    Bivariate,
    /// Random targets with a single parameter block.
    SingleBlock,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RatesSection {
    pub preset: RatesPreset,
    pub targets: usize,
    pub max_p: usize,
    pub max_r: usize,
    pub max_m: usize,
    pub iterations: usize,
    pub tolerance: f64,
    pub rho: f64,
    /// Random-effect to error variance ratios of the centering grid.
    pub ratios: Vec<f64>,
    pub grid_clusters: usize,
    pub grid_dimension: usize,
}

impl Default for RatesSection {
    fn default() -> Self {
        Self {
            preset: RatesPreset::Suite,
            targets: 200,
            max_p: 5,
            max_r: 5,
            max_m: 3,
            iterations: 5000,
            tolerance: 1e-6,
            rho: 0.6,
            ratios: vec![0.01, 0.1, 1.0, 10.0, 100.0],
            grid_clusters: 20,
            grid_dimension: 3,
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AriSection {
    pub a: Option<PathBuf>,
    pub b: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io {
            context: format!("cannot read {}", path.display()),
            message: e.to_string(),
        })?;
        let mut cfg: RunConfig = toml::from_str(&text).map_err(|e| CliError::ConfigParse {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.resolve(base);
        Ok(cfg)
    }

    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.out);
        for p in [
            &mut self.data.path,
            &mut self.data.covariates,
            &mut self.data.labels,
            &mut self.fit.warm_start,
            &mut self.ari.a,
            &mut self.ari.b,
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
    }

    pub fn validate(&self) -> CliResult<()> {
        let bad = |m: &str| Err(CliError::Config(m.into()));
        if self.out.as_os_str().is_empty() {
            return bad("out must not be empty");
        }
        if !(self.fit.tol_rel > 0.0) || self.fit.max_sweeps == 0 {
            return bad("fit.tol_rel must be positive and fit.max_sweeps at least 1");
        }
        if !(self.vga.short_run_increment > 0.0) {
            return bad("vga.short_run_increment must be positive");
        }
        if self.vga.attempts == 0 || self.vga.min_subset == 0 || self.vga.max_rounds == 0 {
            return bad("vga.attempts, vga.min_subset and vga.max_rounds must be at least 1");
        }
        let r = &self.rates;
        if !(r.tolerance > 0.0) || r.iterations < 10 || r.targets == 0 {
            return bad("rates.tolerance must be positive, rates.iterations at least 10 and rates.targets at least 1");
        }
        if r.max_p == 0 || r.max_r == 0 || r.max_m == 0 || r.grid_clusters == 0 || r.grid_dimension == 0 {
            return bad("rates dimensions must be at least 1");
        }
        if !(r.rho.abs() < 1.0) {
            return bad("rates.rho must lie in (-1, 1)");
        }
        if r.ratios.iter().any(|&x| !(x > 0.0 && x.is_finite())) {
            return bad("rates.ratios must be positive");
        }
        let p = &self.prior;
        for (name, v) in [
            ("beta_var", p.beta_var),
            ("delta_var", p.delta_var),
            ("ig_shape", p.ig_shape),
            ("ig_scale", p.ig_scale),
        ] {
            if let Some(v) = v {
                if !(v > 0.0 && v.is_finite()) {
                    return Err(CliError::Config(format!("prior.{name} must be positive")));
                }
            }
        }
        let d = &self.data;
        if d.path.as_ref().is_some_and(|p| p.as_os_str().is_empty()) {
            return bad("data.path must not be empty");
        }
        if d.n_clusters == Some(0) {
            return bad("data.n_clusters must be at least 1");
        }
        Ok(())
    }

    pub fn vga_config(&self) -> VgaConfig {
        VgaConfig {
            attempts: self.vga.attempts,
            short_run_increment: self.vga.short_run_increment,
            tol_rel: self.fit.tol_rel,
            max_sweeps: self.fit.max_sweeps,
            min_subset: self.vga.min_subset,
            seed: self.seed,
            enable_merge_suggestions: self.vga.enable_merge_suggestions,
            unsplittable_memory: self.vga.unsplittable_memory,
            max_rounds: self.vga.max_rounds,
        }
    }
}
