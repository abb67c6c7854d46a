//! CSV and JSON readers and writers for observations, counts and fitted
//! quantities.
//!
//! Tables indexed by grid cell start with a comment line holding the grid as
//! JSON, e.g. `# {"lower":0.0,"upper":1.0,"n_cells":200}`. Numbers are written
//! in Rust's shortest round-trip form, so output is reproducible bit for bit.

use std::collections::HashMap;
use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::compositional::CountData;
use crate::error::{Error, Result};
use crate::function_space::{BasisKind, Grid};
use crate::mcem::{FitResult, McemTrace};
use crate::model::{LatentDensityModel, PcaRepresentation};
use crate::simulation::StudyRow;

/// Observations grouped by label, in order of first appearance.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupedObservations {
    pub ids: Vec<String>,
    pub values: Vec<Vec<f64>>,
}

impl GroupedObservations {
    /// Smallest and largest observation.
    pub fn range(&self) -> Option<(f64, f64)> {
        let mut it = self.values.iter().flatten().copied();
        let first = it.next()?;
        Some(it.fold((first, first), |(lo, hi), v| (lo.min(v), hi.max(v))))
    }
}

fn reader<R: Read>(input: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(input)
}

fn column(headers: &csv::StringRecord, name: &str) -> Result<usize> {
    headers
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| Error::Input(format!("missing column '{name}' in header")))
}

fn line_of(record: &csv::StringRecord) -> u64 {
    record.position().map_or(0, |p| p.line())
}

fn check_header(rdr: &mut csv::Reader<impl Read>) -> Result<csv::StringRecord> {
    let headers = rdr.headers()?.clone();
    if headers.is_empty() || headers.iter().all(str::is_empty) {
        return Err(Error::Input("input is empty".into()));
    }
    Ok(headers)
}

/// Reads a CSV with columns `group_id,value`.
pub fn read_observations<R: Read>(input: R) -> Result<GroupedObservations> {
    let mut rdr = reader(input);
    let headers = check_header(&mut rdr)?;
    let (gi, vi) = (column(&headers, "group_id")?, column(&headers, "value")?);
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut out = GroupedObservations {
        ids: Vec::new(),
        values: Vec::new(),
    };
    for record in rdr.records() {
        let record = record?;
        let line = line_of(&record);
        let id = record.get(gi).unwrap_or("");
        if id.is_empty() {
            return Err(Error::Input(format!("line {line}: empty group_id")));
        }
        let raw = record.get(vi).unwrap_or("");
        let value: f64 = raw
            .parse()
            .ok()
            .filter(|v: &f64| v.is_finite())
            .ok_or_else(|| Error::Input(format!("line {line}: cannot parse value '{raw}'")))?;
        let slot = *index.entry(id.to_string()).or_insert_with(|| {
            out.ids.push(id.to_string());
            out.values.push(Vec::new());
            out.ids.len() - 1
        });
        out.values[slot].push(value);
    }
    if out.ids.is_empty() {
        return Err(Error::Input("no observations".into()));
    }
    Ok(out)
}

/// Count compositions with group and category labels in order of first
/// appearance.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupedCounts {
    pub ids: Vec<String>,
    pub categories: Vec<String>,
    pub data: CountData,
}

/// Reads a CSV with columns `group_id,category,count`. Repeated
/// `(group, category)` pairs are added up; missing pairs count as zero.
pub fn read_counts<R: Read>(input: R) -> Result<GroupedCounts> {
    let mut rdr = reader(input);
    let headers = check_header(&mut rdr)?;
    let gi = column(&headers, "group_id")?;
    let ci = column(&headers, "category")?;
    let ni = column(&headers, "count")?;
    let mut groups: HashMap<String, usize> = HashMap::new();
    let mut cats: HashMap<String, usize> = HashMap::new();
    let mut ids = Vec::new();
    let mut categories = Vec::new();
    let mut entries = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let line = line_of(&record);
        let id = record.get(gi).unwrap_or("");
        if id.is_empty() {
            return Err(Error::Input(format!("line {line}: empty group_id")));
        }
        let cat = record.get(ci).unwrap_or("");
        if cat.is_empty() || cat.chars().any(char::is_control) {
            return Err(Error::Input(format!("line {line}: invalid category label '{cat}'")));
        }
        let raw = record.get(ni).unwrap_or("");
        let count: u64 = raw
            .parse()
            .map_err(|_| Error::Input(format!("line {line}: count must be a nonnegative integer, got '{raw}'")))?;
        let g = *groups.entry(id.to_string()).or_insert_with(|| {
            ids.push(id.to_string());
            ids.len() - 1
        });
        let c = *cats.entry(cat.to_string()).or_insert_with(|| {
            categories.push(cat.to_string());
            categories.len() - 1
        });
        entries.push((g, c, count));
    }
    if ids.is_empty() {
        return Err(Error::Input("no counts".into()));
    }
    let mut counts = vec![vec![0u64; categories.len()]; ids.len()];
    for (g, c, n) in entries {
        counts[g][c] += n;
    }
    let data = CountData::new(categories.len(), counts).map_err(|e| match e {
        Error::EmptyGroup(i) => Error::Input(format!("group '{}' has no observations", ids[i])),
        other => other,
    })?;
    Ok(GroupedCounts { ids, categories, data })
}

fn grid_comment<W: Write>(w: &mut W, grid: &Grid) -> Result<()> {
    writeln!(w, "# {}", serde_json::to_string(grid)?)?;
    Ok(())
}

/// Columns of cell values, one row per cell: `x,<names...>`.
pub fn write_cell_table<W: Write>(mut w: W, grid: &Grid, names: &[String], columns: &[&DVector<f64>]) -> Result<()> {
    grid_comment(&mut w, grid)?;
    write!(w, "x")?;
    for n in names {
        write!(w, ",{n}")?;
    }
    writeln!(w)?;
    for k in 0..grid.n_cells() {
        write!(w, "{}", grid.midpoint(k))?;
        for c in columns {
            write!(w, ",{}", c[k])?;
        }
        writeln!(w)?;
    }
    Ok(())
}

/// Eigenvalues with the cumulative fraction of variance they explain.
pub fn write_eigenvalues<W: Write>(mut w: W, pca: &PcaRepresentation) -> Result<()> {
    writeln!(w, "component,eigenvalue,variance_explained")?;
    for (k, (v, ve)) in pca.eigenvalues().iter().zip(pca.variance_explained()).enumerate() {
        writeln!(w, "{},{v},{ve}", k + 1)?;
    }
    Ok(())
}

/// One row per group: `group_id,z_1,...,z_K`.
pub fn write_scores<W: Write>(mut w: W, ids: &[String], scores: &DMatrix<f64>) -> Result<()> {
    write!(w, "group_id")?;
    for k in 0..scores.ncols() {
        write!(w, ",z_{}", k + 1)?;
    }
    writeln!(w)?;
    for (i, id) in ids.iter().enumerate() {
        write!(w, "{id}")?;
        for k in 0..scores.ncols() {
            write!(w, ",{}", scores[(i, k)])?;
        }
        writeln!(w)?;
    }
    Ok(())
}

pub fn write_trace<W: Write>(mut w: W, trace: &McemTrace) -> Result<()> {
    writeln!(
        w,
        "h,nu_change,sigma_change_frobenius,n_prime,draws,mean_ess,mode_warnings"
    )?;
    for r in &trace.records {
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            r.h, r.nu_change, r.sigma_change_frobenius, r.n_prime, r.draws, r.mean_ess, r.mode_warnings
        )?;
    }
    Ok(())
}

pub fn write_study<W: Write>(mut w: W, rows: &[StudyRow]) -> Result<()> {
    writeln!(w, "replicate,m_per_group,method,mean_distance,cov_distance,status")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            r.replicate,
            r.m_per_group,
            r.method,
            r.mean_distance,
            r.cov_distance,
            r.status.replace([',', '\n'], ";")
        )?;
    }
    Ok(())
}

/// Serialized fitted model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub grid: Grid,
    pub basis_kind: BasisKind,
    /// Cell values of each basis function, present for explicit bases.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub basis_functions: Option<Vec<Vec<f64>>>,
    pub nu: Vec<f64>,
    /// Row-major.
    pub sigma: Vec<Vec<f64>>,
    pub converged: bool,
    pub iterations: usize,
    pub final_nu_change: Option<f64>,
    pub final_sigma_change: Option<f64>,
}

impl ModelFile {
    pub fn new(model: &LatentDensityModel, fit: Option<&FitResult>) -> Self {
        let basis = model.basis();
        let basis_functions = match basis.kind() {
            BasisKind::NormalizedIndicator => None,
            BasisKind::Explicit => Some(
                basis
                    .values()
                    .column_iter()
                    .map(|c| c.iter().copied().collect())
                    .collect(),
            ),
        };
        let last = fit.and_then(|f| f.trace.records.last());
        Self {
            grid: *model.grid(),
            basis_kind: basis.kind(),
            basis_functions,
            nu: model.nu().iter().copied().collect(),
            sigma: model.sigma().row_iter().map(|r| r.iter().copied().collect()).collect(),
            converged: fit.is_some_and(|f| f.converged),
            iterations: fit.map_or(0, |f| f.iterations),
            final_nu_change: last.map(|r| r.nu_change),
            final_sigma_change: last.map(|r| r.sigma_change_frobenius),
        }
    }

    pub fn write<W: Write>(&self, w: W) -> Result<()> {
        serde_json::to_writer_pretty(w, self)?;
        Ok(())
    }
}
