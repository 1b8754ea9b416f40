//! Result documents and tidy CSV tables. Every JSON document and every CSV
//! table written here carries a `schema_version`.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use mlmm::eval::FitSummary;
use mlmm::gating::GatingPosterior;
use mlmm::varinf::{hard_assignments, ComponentState, FitResult, Parametrization, VariationalState};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

pub const SCHEMA_VERSION: u32 = 1;

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn from_rows(r: &[Vec<f64>], ncols: usize, what: &str) -> CliResult<DMatrix<f64>> {
    if r.iter().any(|row| row.len() != ncols) {
        return Err(CliError::Config(format!("warm start: ragged matrix in {what}")));
    }
    Ok(DMatrix::from_fn(r.len(), ncols, |i, j| r[i][j]))
}

fn square(r: &[Vec<f64>], what: &str) -> CliResult<DMatrix<f64>> {
    from_rows(r, r.len(), what)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentDoc {
    pub mu_beta: Vec<f64>,
    pub sigma_beta: Vec<Vec<f64>>,
    /// Component effect `b_j`, or `nu_j` under full centering.
    pub mu_b: Vec<f64>,
    pub sigma_b: Vec<Vec<f64>>,
    pub alpha_a: f64,
    pub lambda_a: f64,
    pub alpha_b: f64,
    pub lambda_b: f64,
    pub alpha_e: Vec<f64>,
    pub lambda_e: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterEffectDoc {
    pub id: String,
    pub mu: Vec<f64>,
    pub sigma: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GatingDoc {
    /// `(k-1) x d`; component 0 is the reference.
    pub mu_delta: Vec<Vec<f64>>,
    pub sigma_delta: Vec<Vec<f64>>,
    pub converged: bool,
}

/// `result.json`: a fitted model with every variational parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultDoc {
    pub schema_version: u32,
    pub command: String,
    pub parametrization: Parametrization,
    pub k: usize,
    pub converged: bool,
    pub sweeps: usize,
    pub lower_bound: f64,
    pub log_marginal_estimate: f64,
    pub lb_trace: Vec<f64>,
    pub components: Vec<ComponentDoc>,
    pub cluster_effects: Vec<ClusterEffectDoc>,
    /// `n x k` responsibilities.
    pub responsibilities: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub gating: GatingDoc,
}

impl ResultDoc {
    pub fn new(command: &str, res: &FitResult, ids: &[String]) -> Self {
        let st = &res.state;
        let components = st
            .components
            .iter()
            .map(|c| ComponentDoc {
                mu_beta: c.mu_beta.iter().copied().collect(),
                sigma_beta: rows(&c.sigma_beta),
                mu_b: c.mu_b.iter().copied().collect(),
                sigma_b: rows(&c.sigma_b),
                alpha_a: c.alpha_a,
                lambda_a: c.lambda_a,
                alpha_b: c.alpha_b,
                lambda_b: c.lambda_b,
                alpha_e: c.alpha_e.clone(),
                lambda_e: c.lambda_e.clone(),
            })
            .collect();
        let cluster_effects = ids
            .iter()
            .zip(st.mu_a.iter().zip(&st.sigma_a))
            .map(|(id, (m, s))| ClusterEffectDoc {
                id: id.clone(),
                mu: m.iter().copied().collect(),
                sigma: rows(s),
            })
            .collect();
        Self {
            schema_version: SCHEMA_VERSION,
            command: command.to_string(),
            parametrization: res.par,
            k: res.k(),
            converged: res.converged,
            sweeps: res.sweeps,
            lower_bound: res.lower_bound,
            log_marginal_estimate: res.log_marginal_estimate,
            lb_trace: res.lb_trace.clone(),
            components,
            cluster_effects,
            responsibilities: rows(&st.q),
            labels: hard_assignments(&st.q),
            gating: gating_doc(&res.gating),
        }
    }

    /// Rebuilds the variational state for a warm start on data with `d`
    /// gating covariates.
    pub fn to_state(&self, d: usize) -> CliResult<VariationalState> {
        let k = self.components.len();
        if k == 0 {
            return Err(CliError::Config("warm start has no components".into()));
        }
        let components = self
            .components
            .iter()
            .map(|c| {
                Ok(ComponentState {
                    mu_beta: DVector::from_vec(c.mu_beta.clone()),
                    sigma_beta: square(&c.sigma_beta, "sigma_beta")?,
                    mu_b: DVector::from_vec(c.mu_b.clone()),
                    sigma_b: square(&c.sigma_b, "sigma_b")?,
                    alpha_a: c.alpha_a,
                    lambda_a: c.lambda_a,
                    alpha_b: c.alpha_b,
                    lambda_b: c.lambda_b,
                    alpha_e: c.alpha_e.clone(),
                    lambda_e: c.lambda_e.clone(),
                })
            })
            .collect::<CliResult<Vec<_>>>()?;
        let mu_delta = from_rows(&self.gating.mu_delta, d, "mu_delta")?;
        Ok(VariationalState {
            components,
            mu_a: self.cluster_effects.iter().map(|e| DVector::from_vec(e.mu.clone())).collect(),
            sigma_a: self
                .cluster_effects
                .iter()
                .map(|e| square(&e.sigma, "cluster effect"))
                .collect::<CliResult<_>>()?,
            q: from_rows(&self.responsibilities, k, "responsibilities")?,
            mu_delta,
        })
    }
}

fn gating_doc(g: &GatingPosterior) -> GatingDoc {
    GatingDoc {
        mu_delta: rows(&g.mu_delta),
        sigma_delta: rows(&g.sigma_delta_q),
        converged: g.converged,
    }
}

/// Collects the files a command writes so a manifest can list them.
pub struct OutDir {
    dir: PathBuf,
    written: Vec<String>,
}

impl OutDir {
    pub fn create(dir: &Path) -> CliResult<Self> {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            written: Vec::new(),
        })
    }

    pub fn path(&mut self, name: &str) -> PathBuf {
        self.written.push(name.to_string());
        self.dir.join(name)
    }

    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> CliResult<()> {
        let path = self.path(name);
        let f = File::create(&path).map_err(|e| CliError::io(&path, e))?;
        serde_json::to_writer_pretty(BufWriter::new(f), value).map_err(|e| CliError::io(&path, e))
    }

    /// Writes a CSV table; `schema_version` is prepended to the header and
    /// to every record.
    pub fn csv(&mut self, name: &str, header: &[&str], records: impl IntoIterator<Item = Vec<String>>) -> CliResult<()> {
        let path = self.path(name);
        let err = |e: csv::Error| CliError::io(&path, e);
        let mut w = csv::Writer::from_path(&path).map_err(err)?;
        let mut h = vec!["schema_version"];
        h.extend_from_slice(header);
        w.write_record(&h).map_err(err)?;
        let v = SCHEMA_VERSION.to_string();
        for rec in records {
            w.write_record(std::iter::once(v.clone()).chain(rec)).map_err(err)?;
        }
        w.flush().map_err(|e| CliError::io(&path, e))
    }

    /// `manifest.json`, listing every file written by the command. Dataset
    /// files follow the fixed ingest header and are versioned only here.
    pub fn finish(mut self, command: &str, seed: u64) -> CliResult<()> {
        #[derive(Serialize)]
        struct Manifest<'a> {
            schema_version: u32,
            command: &'a str,
            seed: u64,
            files: &'a [String],
        }
        let files = std::mem::take(&mut self.written);
        let m = Manifest {
            schema_version: SCHEMA_VERSION,
            command,
            seed,
            files: &files,
        };
        self.json("manifest.json", &m)
    }
}

/// Shortest representation that parses back to the same value.
pub fn num(v: f64) -> String {
    format!("{v:?}")
}

/// `summary.csv`, `curves.csv`, `labels.csv` and `lb_trace.csv` for one fit.
pub fn write_fit_tables(out: &mut OutDir, res: &FitResult, summary: &FitSummary, ids: &[String]) -> CliResult<()> {
    let k = res.k();
    let q = &res.state.q;
    out.csv(
        "summary.csv",
        &["cluster_id", "component", "responsibility", "gating_prob", "assigned", "entropy"],
        ids.iter().enumerate().flat_map(|(i, id)| {
            (0..k).map(move |j| {
                vec![
                    id.clone(),
                    j.to_string(),
                    num(q[(i, j)]),
                    num(summary.gating_probs[i][j]),
                    u8::from(summary.labels[i] == j).to_string(),
                    num(summary.entropy[i]),
                ]
            })
        }),
    )?;
    // Each component's mean curve is drawn on the design of its first member.
    out.csv(
        "curves.csv",
        &["component", "size", "cluster_id", "row", "fitted"],
        (0..k).flat_map(|j| {
            let rep = summary.labels.iter().position(|&l| l == j).unwrap_or(0);
            let curve = &summary.curves[j][rep];
            let (size, id) = (summary.sizes[j], ids[rep].clone());
            curve
                .iter()
                .enumerate()
                .map(move |(r, v)| vec![j.to_string(), size.to_string(), id.clone(), (r + 1).to_string(), num(*v)])
                .collect::<Vec<_>>()
        }),
    )?;
    write_labels(out, "labels.csv", ids, &summary.labels)?;
    out.csv(
        "lb_trace.csv",
        &["sweep", "lower_bound"],
        res.lb_trace.iter().enumerate().map(|(s, v)| vec![(s + 1).to_string(), num(*v)]),
    )
}

/// `cluster_id,label` in the format read back by `ari` and `data.labels`;
/// versioned through the manifest.
pub fn write_labels(out: &mut OutDir, name: &str, ids: &[String], labels: &[usize]) -> CliResult<()> {
    let path = out.path(name);
    let err = |e: csv::Error| CliError::io(&path, e);
    let mut w = csv::Writer::from_path(&path).map_err(err)?;
    w.write_record(["cluster_id", "label"]).map_err(err)?;
    for (id, l) in ids.iter().zip(labels) {
        w.write_record([id.as_str(), &l.to_string()]).map_err(err)?;
    }
    w.flush().map_err(|e| CliError::io(&path, e))
}

pub fn read_result(path: &Path) -> CliResult<ResultDoc> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Io {
        context: format!("cannot read {}", path.display()),
        message: e.to_string(),
    })?;
    let doc: ResultDoc = serde_json::from_str(&text).map_err(|e| CliError::ConfigParse {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    if doc.schema_version != SCHEMA_VERSION {
        return Err(CliError::Config(format!(
            "{} has schema version {}, expected {SCHEMA_VERSION}",
            path.display(),
            doc.schema_version
        )));
    }
    Ok(doc)
}
