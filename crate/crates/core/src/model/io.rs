//! CSV ingestion and export of grouped datasets.
//!
//! Long format, one row per observation:
//! `cluster_id,row_index,block_id,y,x_1..x_p,w_1..w_s1,v_1..v_s2`.
//! Design columns are only present for designs read from the file; designs
//! generated from a shortcut (`Ones`, `Identity`) have no columns.
//! Gating covariates live in a companion file `cluster_id,u_1..u_d`.

use std::collections::HashMap;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{ClusterData, GroupedDataset};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NaPolicy {
    /// Remove the observation together with its design rows.
    #[default]
    Drop,
    Error,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DesignSource {
    /// Read from `x_*` / `w_*` / `v_*` columns.
    #[default]
    Columns,
    /// A single column of ones (dimension must be 1).
    Ones,
    /// Row `r` (1-based `row_index`) of an identity matrix.
    Identity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestSchema {
    pub p: usize,
    pub s1: usize,
    pub s2: usize,
    pub d: usize,
    pub g: usize,
    #[serde(default)]
    pub na_policy: NaPolicy,
    #[serde(default)]
    pub x: DesignSource,
    #[serde(default)]
    pub w: DesignSource,
    #[serde(default)]
    pub v: DesignSource,
}

impl IngestSchema {
    fn header(&self) -> Vec<String> {
        let mut h: Vec<String> = ["cluster_id", "row_index", "block_id", "y"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        for (src, prefix, dim) in [(self.x, "x", self.p), (self.w, "w", self.s1), (self.v, "v", self.s2)] {
            if src == DesignSource::Columns {
                h.extend((1..=dim).map(|m| format!("{prefix}_{m}")));
            }
        }
        h
    }

    fn check(&self) -> Result<()> {
        if self.g == 0 || self.d == 0 {
            return Err(Error::InvalidInput("schema needs g >= 1 and d >= 1".into()));
        }
        for (src, name, dim) in [(self.x, "x", self.p), (self.w, "w", self.s1), (self.v, "v", self.s2)] {
            if dim == 0 {
                return Err(Error::InvalidInput(format!("schema dimension for {name} is 0")));
            }
            if src == DesignSource::Ones && dim != 1 {
                return Err(Error::InvalidInput(format!(
                    "design {name} uses a column of ones but has dimension {dim}"
                )));
            }
        }
        Ok(())
    }
}

struct Row {
    row_index: usize,
    block: usize,
    y: f64,
    x: Vec<f64>,
    w: Vec<f64>,
    v: Vec<f64>,
}

fn parse_f64(field: &str, loc: &str, what: &str) -> Result<f64> {
    field
        .trim()
        .parse::<f64>()
        .map_err(|_| Error::parse(loc, format!("{what}: cannot parse '{field}' as a number")))
}

fn parse_usize(field: &str, loc: &str, what: &str) -> Result<usize> {
    field
        .trim()
        .parse::<usize>()
        .map_err(|_| Error::parse(loc, format!("{what}: cannot parse '{field}' as an integer")))
}

fn is_missing(field: &str) -> bool {
    let t = field.trim();
    t.is_empty() || t == "NA"
}

fn design_row(src: DesignSource, dim: usize, cols: &[f64], row_index: usize, loc: &str, name: &str) -> Result<Vec<f64>> {
    match src {
        DesignSource::Columns => Ok(cols.to_vec()),
        DesignSource::Ones => Ok(vec![1.0]),
        DesignSource::Identity => {
            if row_index == 0 || row_index > dim {
                return Err(Error::parse(
                    loc,
                    format!("row_index {row_index} outside identity design {name} of size {dim}"),
                ));
            }
            let mut r = vec![0.0; dim];
            r[row_index - 1] = 1.0;
            Ok(r)
        }
    }
}

/// Loads a dataset from the long-format data file and, when given, the
/// companion covariate file. Without a covariate file the schema must have
/// `d = 1` and every cluster gets `u_i = 1`.
///
/// Clusters appear in order of first occurrence; within a cluster rows are
/// ordered by `(block_id, row_index)`. Rows with a missing response are
/// dropped (or rejected, per the NA policy).
pub fn load_dataset(data_path: &Path, clusters_path: Option<&Path>, schema: &IngestSchema) -> Result<GroupedDataset> {
    load_dataset_with_ids(data_path, clusters_path, schema).map(|(d, _)| d)
}

/// As [`load_dataset`], also returning the cluster ids in dataset order.
pub fn load_dataset_with_ids(
    data_path: &Path,
    clusters_path: Option<&Path>,
    schema: &IngestSchema,
) -> Result<(GroupedDataset, Vec<String>)> {
    schema.check()?;
    let fname = data_path.display().to_string();
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_path(data_path)?;
    let header: Vec<String> = rdr.headers()?.iter().map(|s| s.trim().to_string()).collect();
    let expected = schema.header();
    if header != expected {
        return Err(Error::parse(
            format!("{fname}:1"),
            format!("header {:?} does not match expected {:?}", header, expected),
        ));
    }

    let mut order: Vec<String> = Vec::new();
    let mut rows: HashMap<String, Vec<Row>> = HashMap::new();
    for (idx, rec) in rdr.records().enumerate() {
        let line = idx + 2;
        let loc = format!("{fname}:{line}");
        let rec = rec.map_err(|e| Error::parse(&loc, e.to_string()))?;
        if rec.len() != expected.len() {
            return Err(Error::parse(
                &loc,
                format!("expected {} fields, found {}", expected.len(), rec.len()),
            ));
        }
        let id = rec[0].trim().to_string();
        if id.is_empty() {
            return Err(Error::parse(&loc, "empty cluster_id"));
        }
        let row_index = parse_usize(&rec[1], &loc, "row_index")?;
        let block = parse_usize(&rec[2], &loc, "block_id")?;
        if block == 0 || block > schema.g {
            return Err(Error::parse(&loc, format!("block_id {block} outside 1..={}", schema.g)));
        }
        if !rows.contains_key(&id) {
            order.push(id.clone());
        }
        let entry = rows.entry(id).or_default();
        if is_missing(&rec[3]) {
            if schema.na_policy == NaPolicy::Error {
                return Err(Error::parse(&loc, "missing response with na_policy = error"));
            }
            continue;
        }
        let y = parse_f64(&rec[3], &loc, "y")?;
        let mut col = 4;
        let mut read_cols = |src: DesignSource, dim: usize, name: &str| -> Result<Vec<f64>> {
            let vals = if src == DesignSource::Columns {
                let v: Result<Vec<f64>> = (0..dim)
                    .map(|m| parse_f64(&rec[col + m], &loc, &format!("{name}_{}", m + 1)))
                    .collect();
                col += dim;
                v?
            } else {
                Vec::new()
            };
            design_row(src, dim, &vals, row_index, &loc, name)
        };
        let x = read_cols(schema.x, schema.p, "x")?;
        let w = read_cols(schema.w, schema.s1, "w")?;
        let v = read_cols(schema.v, schema.s2, "v")?;
        entry.push(Row {
            row_index,
            block,
            y,
            x,
            w,
            v,
        });
    }
    if order.is_empty() {
        return Err(Error::parse(&fname, "no data rows"));
    }

    let covariates = match clusters_path {
        Some(path) => Some(load_covariates(path, schema.d)?),
        None => {
            if schema.d != 1 {
                return Err(Error::InvalidInput(format!(
                    "schema has d = {} but no cluster covariate file was given",
                    schema.d
                )));
            }
            None
        }
    };
    if let Some(cov) = &covariates {
        for id in cov.keys() {
            if !rows.contains_key(id) {
                return Err(Error::InvalidDataset(format!(
                    "covariate file references unknown cluster '{id}'"
                )));
            }
        }
    }

    let mut clusters = Vec::with_capacity(order.len());
    for id in &order {
        let mut rs = rows.remove(id).unwrap_or_default();
        if rs.is_empty() {
            return Err(Error::InvalidDataset(format!(
                "cluster '{id}' has no observed responses"
            )));
        }
        rs.sort_by_key(|r| (r.block, r.row_index));
        let n_i = rs.len();
        let mut kappa = vec![0usize; schema.g];
        for r in &rs {
            kappa[r.block - 1] += 1;
        }
        let u = match &covariates {
            Some(cov) => cov
                .get(id)
                .cloned()
                .ok_or_else(|| Error::InvalidDataset(format!("cluster '{id}' missing from covariate file")))?,
            None => DVector::from_element(1, 1.0),
        };
        clusters.push(ClusterData {
            y: DVector::from_iterator(n_i, rs.iter().map(|r| r.y)),
            x: DMatrix::from_fn(n_i, schema.p, |r, c| rs[r].x[c]),
            w: DMatrix::from_fn(n_i, schema.s1, |r, c| rs[r].w[c]),
            v: DMatrix::from_fn(n_i, schema.s2, |r, c| rs[r].v[c]),
            u,
            kappa,
        });
    }
    Ok((GroupedDataset::new(clusters)?, order))
}

fn load_covariates(path: &Path, d: usize) -> Result<HashMap<String, DVector<f64>>> {
    let fname = path.display().to_string();
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let header: Vec<String> = rdr.headers()?.iter().map(|s| s.trim().to_string()).collect();
    let mut expected = vec!["cluster_id".to_string()];
    expected.extend((1..=d).map(|m| format!("u_{m}")));
    if header != expected {
        return Err(Error::parse(
            format!("{fname}:1"),
            format!("header {:?} does not match expected {:?}", header, expected),
        ));
    }
    let mut out = HashMap::new();
    for (idx, rec) in rdr.records().enumerate() {
        let loc = format!("{fname}:{}", idx + 2);
        let rec = rec.map_err(|e| Error::parse(&loc, e.to_string()))?;
        if rec.len() != d + 1 {
            return Err(Error::parse(&loc, format!("expected {} fields, found {}", d + 1, rec.len())));
        }
        let vals: Result<Vec<f64>> = (0..d)
            .map(|m| parse_f64(&rec[m + 1], &loc, &format!("u_{}", m + 1)))
            .collect();
        let id = rec[0].trim().to_string();
        if out.insert(id.clone(), DVector::from_vec(vals?)).is_some() {
            return Err(Error::parse(&loc, format!("duplicate cluster_id '{id}'")));
        }
    }
    Ok(out)
}

/// Writes a dataset with explicit design columns. Cluster ids are `1..=n`
/// and `row_index` counts observations within a cluster from 1.
pub fn write_dataset(data: &GroupedDataset, data_path: &Path, clusters_path: &Path) -> Result<()> {
    let dims = data.dims();
    let schema = IngestSchema {
        p: dims.p,
        s1: dims.s1,
        s2: dims.s2,
        d: dims.d,
        g: dims.g,
        na_policy: NaPolicy::Drop,
        x: DesignSource::Columns,
        w: DesignSource::Columns,
        v: DesignSource::Columns,
    };
    let mut wtr = csv::Writer::from_path(data_path)?;
    wtr.write_record(schema.header())?;
    for (i, c) in data.clusters().iter().enumerate() {
        let mut r = 0;
        for (l, &len) in c.kappa.iter().enumerate() {
            for _ in 0..len {
                let mut rec = vec![
                    (i + 1).to_string(),
                    (r + 1).to_string(),
                    (l + 1).to_string(),
                    fmt_f64(c.y[r]),
                ];
                for m in [&c.x, &c.w, &c.v] {
                    rec.extend(m.row(r).iter().map(|v| fmt_f64(*v)));
                }
                wtr.write_record(&rec)?;
                r += 1;
            }
        }
    }
    wtr.flush()?;

    let mut wtr = csv::Writer::from_path(clusters_path)?;
    let mut header = vec!["cluster_id".to_string()];
    header.extend((1..=dims.d).map(|m| format!("u_{m}")));
    wtr.write_record(&header)?;
    for (i, c) in data.clusters().iter().enumerate() {
        let mut rec = vec![(i + 1).to_string()];
        rec.extend(c.u.iter().map(|v| fmt_f64(*v)));
        wtr.write_record(&rec)?;
    }
    wtr.flush()?;
    Ok(())
}

/// Writes `cluster_id,label` with ids `1..=n`.
pub fn write_labels(labels: &[usize], path: &Path) -> Result<()> {
    let mut wtr = csv::Writer::from_path(path)?;
    wtr.write_record(["cluster_id", "label"])?;
    for (i, l) in labels.iter().enumerate() {
        wtr.write_record([(i + 1).to_string(), l.to_string()])?;
    }
    wtr.flush()?;
    Ok(())
}

/// Reads a `cluster_id,label` file. Labels may be arbitrary strings; they
/// are numbered by first occurrence. Returns ids and label numbers in file order.
pub fn read_labels(path: &Path) -> Result<(Vec<String>, Vec<usize>)> {
    let mut rdr = csv::Reader::from_path(path)?;
    let header = rdr.headers()?.clone();
    if header.len() != 2 || &header[0] != "cluster_id" || &header[1] != "label" {
        return Err(Error::parse(
            format!("{}:1", path.display()),
            "expected header 'cluster_id,label'",
        ));
    }
    let mut names: HashMap<String, usize> = HashMap::new();
    let (mut ids, mut labels) = (Vec::new(), Vec::new());
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let loc = format!("{}:{}", path.display(), line + 2);
        if rec.len() != 2 {
            return Err(Error::parse(loc, format!("expected 2 fields, found {}", rec.len())));
        }
        let next = names.len();
        labels.push(*names.entry(rec[1].trim().to_string()).or_insert(next));
        ids.push(rec[0].trim().to_string());
    }
    if ids.is_empty() {
        return Err(Error::parse(format!("{}", path.display()), "no labels"));
    }
    Ok((ids, labels))
}

// Shortest representation that parses back to the same f64.
fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}
