//! Panel ingestion from a headed CSV.
//!
//! Row `i` holds the state `X_i`. Growth, SDF and return columns on row
//! `t + 1` belong to the transition `X_t -> X_{t+1}`, so their first row may
//! be blank.

use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use nalgebra::DMatrix;

use sdfspectral::sievemat::StatePanel;

use crate::config::RunConfig;

#[derive(Clone, Debug)]
pub struct Dataset {
    pub states: DMatrix<f64>,
    pub panel: StatePanel,
    /// Date of the period each transition ends in, if a date column was named.
    pub dates: Option<Vec<String>>,
}

fn column(headers: &csv::StringRecord, name: &str) -> Result<usize> {
    headers.iter().position(|h| h == name).ok_or_else(|| {
        anyhow!(
            "column {name:?} not found; available: {}",
            headers.iter().collect::<Vec<_>>().join(", ")
        )
    })
}

fn number(field: &str, line: usize, name: &str) -> Result<f64> {
    let v: f64 = field
        .trim()
        .parse()
        .map_err(|_| anyhow!("line {line}, column {name:?}: {field:?} is not a number"))?;
    if !v.is_finite() {
        bail!("line {line}, column {name:?}: value is not finite");
    }
    Ok(v)
}

/// Reads the columns named in `cfg` and assembles the panel.
pub fn load(path: &Path, cfg: &RunConfig) -> Result<Dataset> {
    let file = std::fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut rdr = csv::Reader::from_reader(file);
    let headers = rdr.headers().with_context(|| format!("reading header of {}", path.display()))?.clone();

    let state_names = cfg.state_cols.clone().unwrap_or_default();
    let state_idx = state_names.iter().map(|c| column(&headers, c)).collect::<Result<Vec<_>>>()?;
    let growth_idx = cfg.growth_col.as_deref().map(|c| column(&headers, c)).transpose()?;
    let sdf_idx = cfg.sdf_col.as_deref().map(|c| column(&headers, c)).transpose()?;
    let return_names = cfg.return_cols.clone().unwrap_or_default();
    let return_idx = return_names.iter().map(|c| column(&headers, c)).collect::<Result<Vec<_>>>()?;
    let date_idx = cfg.date_col.as_deref().map(|c| column(&headers, c)).transpose()?;

    let mut states = Vec::new();
    let mut growth = Vec::new();
    let mut sdf = Vec::new();
    let mut returns = Vec::new();
    let mut dates = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.with_context(|| format!("line {line}"))?;
        for (&j, name) in state_idx.iter().zip(&state_names) {
            states.push(number(&rec[j], line, name)?);
        }
        if i == 0 {
            continue;
        }
        if let (Some(j), Some(name)) = (growth_idx, cfg.growth_col.as_deref()) {
            let g = number(&rec[j], line, name)?;
            if g <= 0.0 {
                bail!("line {line}, column {name:?}: gross growth must be positive, got {g}");
            }
            growth.push(g);
        }
        if let (Some(j), Some(name)) = (sdf_idx, cfg.sdf_col.as_deref()) {
            let m = number(&rec[j], line, name)?;
            if m <= 0.0 {
                bail!("line {line}, column {name:?}: SDF increment must be positive, got {m}");
            }
            sdf.push(m);
        }
        for (&j, name) in return_idx.iter().zip(&return_names) {
            returns.push(number(&rec[j], line, name)?);
        }
        if let Some(j) = date_idx {
            dates.push(rec[j].to_string());
        }
    }
    let d = state_idx.len();
    let rows = states.len() / d.max(1);
    if rows < 2 {
        bail!("{} has {rows} data rows; need at least two", path.display());
    }
    let states = DMatrix::from_row_slice(rows, d, &states);
    let mut panel = StatePanel::from_series(&states)?;
    if growth_idx.is_some() {
        panel = panel.with_growth(growth)?;
    }
    if sdf_idx.is_some() {
        panel = panel.with_sdf(sdf)?;
    }
    if !return_idx.is_empty() {
        panel = panel.with_returns(DMatrix::from_row_slice(rows - 1, return_idx.len(), &returns))?;
    }
    Ok(Dataset {
        states,
        panel,
        dates: date_idx.map(|_| dates),
    })
}
