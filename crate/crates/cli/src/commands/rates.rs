use mlmm::rates::{
    blocked_rate, centering_rate_comparison, em_rate_matrix, measured_rate, random_target, spectral_radius,
    CenteringSpec, GaussianTarget,
};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{RatesPreset, RatesSection, RunConfig};
use crate::error::{CliError, CliResult};
use crate::output::{num, OutDir, SCHEMA_VERSION};

/// Agreement required between the blocked rate and its closed-form reference.
const REFERENCE_TOL: f64 = 1e-10;

struct Check {
    p: usize,
    r: usize,
    m: usize,
    theory: f64,
    empirical: f64,
    /// `rho(B_EM)` for single blocks, `rho^2` for the bivariate case.
    reference: Option<f64>,
}

impl Check {
    fn error(&self) -> f64 {
        (self.empirical - self.theory).abs()
    }

    fn passes(&self, tol: f64) -> bool {
        self.error() < tol && self.reference.is_none_or(|r| (r - self.theory).abs() < REFERENCE_TOL)
    }
}

#[derive(Serialize)]
struct GridRow {
    variance_ratio: f64,
    uncentered: f64,
    partial_centered: f64,
    full_centered: f64,
}

#[derive(Serialize)]
struct ReportDoc {
    schema_version: u32,
    preset: RatesPreset,
    seed: u64,
    targets: usize,
    passed: usize,
    max_abs_error: f64,
    tolerance: f64,
    all_passed: bool,
    centering_grid: Vec<GridRow>,
}

fn random_check(seed: u64, t: usize, rc: &RatesSection, single_block: bool) -> CliResult<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(t as u64);
    let p = rng.random_range(1..=rc.max_p);
    let r = rng.random_range(1..=rc.max_r);
    let m = if single_block { 1 } else { rng.random_range(1..=p.min(rc.max_m)) };
    let target = random_target(&mut rng, p, r, m).map_err(CliError::Fit)?;
    let dir = DVector::from_fn(p, |_, _| rng.random_range(-1.0..1.0));
    let reference = if single_block {
        Some(spectral_radius(&em_rate_matrix(&target).map_err(CliError::Fit)?))
    } else {
        None
    };
    measure(&target, &dir, rc.iterations, reference, m)
}

fn measure(target: &GaussianTarget, dir: &DVector<f64>, iterations: usize, reference: Option<f64>, m: usize) -> CliResult<Check> {
    Ok(Check {
        p: target.p(),
        r: target.r(),
        m,
        theory: blocked_rate(target).map_err(CliError::Fit)?,
        empirical: measured_rate(target, dir, iterations).map_err(CliError::Fit)?,
        reference,
    })
}

fn bivariate(rho: f64, iterations: usize) -> CliResult<Check> {
    let h = DMatrix::from_row_slice(2, 2, &[1.0, -rho, -rho, 1.0]);
    let target = GaussianTarget::new(DVector::zeros(1), DVector::zeros(1), h, vec![1]).map_err(CliError::Fit)?;
    measure(&target, &DVector::from_element(1, 1.0), iterations, Some(rho * rho), 1)
}

fn centering_grid(rc: &RatesSection) -> CliResult<Vec<GridRow>> {
    let q = rc.grid_dimension;
    rc.ratios
        .iter()
        .map(|&ratio| {
            let spec = CenteringSpec {
                designs: vec![DMatrix::identity(q, q); rc.grid_clusters],
                sigma_a2: ratio,
                sigma_b2: ratio,
                sigma_e2: 1.0,
                sigma_beta: DMatrix::identity(q, q) * 1000.0,
            };
            let rep = centering_rate_comparison(&spec).map_err(CliError::Fit)?;
            Ok(GridRow {
                variance_ratio: ratio,
                uncentered: rep.uncentered,
                partial_centered: rep.partial,
                full_centered: rep.centered,
            })
        })
        .collect()
}

pub fn run(cfg: &RunConfig) -> CliResult<()> {
    let rc = &cfg.rates;
    let checks: Vec<Check> = match rc.preset {
        RatesPreset::Bivariate => vec![bivariate(rc.rho, rc.iterations)?],
        RatesPreset::Suite | RatesPreset::SingleBlock => {
            let single = rc.preset == RatesPreset::SingleBlock;
            (0..rc.targets)
                .into_par_iter()
                .map(|t| random_check(cfg.seed, t, rc, single))
                .collect::<CliResult<_>>()?
        }
    };
    let grid = centering_grid(rc)?;
    let passed = checks.iter().filter(|c| c.passes(rc.tolerance)).count();
    let max_abs_error = checks.iter().map(Check::error).fold(0.0, f64::max);

    let mut out = OutDir::create(&cfg.out)?;
    out.csv(
        "rates.csv",
        &["variance_ratio", "parametrization", "rate"],
        grid.iter().flat_map(|g| {
            [
                ("uncentered", g.uncentered),
                ("partial_centered", g.partial_centered),
                ("full_centered", g.full_centered),
            ]
            .map(|(name, rate)| vec![num(g.variance_ratio), name.to_string(), num(rate)])
        }),
    )?;
    out.csv(
        "check.csv",
        &["target", "p", "r", "m", "theory", "empirical", "reference", "abs_error", "pass"],
        checks.iter().enumerate().map(|(t, c)| {
            vec![
                t.to_string(),
                c.p.to_string(),
                c.r.to_string(),
                c.m.to_string(),
                num(c.theory),
                num(c.empirical),
                c.reference.map_or(String::new(), num),
                num(c.error()),
                c.passes(rc.tolerance).to_string(),
            ]
        }),
    )?;
    let all_passed = passed == checks.len();
    out.json(
        "report.json",
        &ReportDoc {
            schema_version: SCHEMA_VERSION,
            preset: rc.preset,
            seed: cfg.seed,
            targets: checks.len(),
            passed,
            max_abs_error,
            tolerance: rc.tolerance,
            all_passed,
            centering_grid: grid,
        },
    )?;
    out.finish("rates", cfg.seed)?;
    let rate_text = match checks.as_slice() {
        [c] => format!(" rate={}", c.theory),
        _ => String::new(),
    };
    println!("targets={} passed={passed} max_abs_error={max_abs_error:e}{rate_text}", checks.len());
    if !all_passed {
        return Err(CliError::Check(format!(
            "{} of {} targets differ from the predicted rate by more than {}",
            checks.len() - passed,
            checks.len(),
            rc.tolerance
        )));
    }
    Ok(())
}
