//! CSV and JSON writers for decompositions, Monte Carlo tables and
//! bootstrap intervals, plus the readers used to re-ingest them.
//!
//! Floats in CSV are written as `{:.16e}` (17 significant digits) so every
//! value round-trips exactly.

use std::collections::HashSet;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::decomp::{Association, DecompSeries, EigenGrid};
use crate::error::{Error, Result};
use crate::inference::BootstrapResult;
use crate::oracle::SdfSpec;
use crate::simkit::{McDesign, McTable};

pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_default()
}

fn csv_err(e: csv::Error) -> Error {
    let row = e.position().map(|p| p.line() as usize).unwrap_or(0);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Schema {
            row,
            message: format!("{other:?}"),
        },
    }
}

fn parse_f64(field: &str, row: usize, column: &str) -> Result<f64> {
    field.trim().parse::<f64>().map_err(|_| Error::Schema {
        row,
        message: format!("column {column}: cannot parse {field:?} as a number"),
    })
}

pub fn write_json<W: Write, T: Serialize + ?Sized>(w: W, value: &T) -> Result<()> {
    serde_json::to_writer_pretty(w, value).map_err(|e| Error::Io(e.into()))
}

/// Scalars emitted by `decompose`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecompScalars {
    pub n: usize,
    pub rho: f64,
    pub yield_y: f64,
    pub entropy_l: f64,
    pub sdf_entropy: f64,
    pub horizon_dependence: f64,
    pub association: Association,
    pub se_rho: Option<f64>,
    pub se_y: Option<f64>,
    pub se_l: Option<f64>,
    pub is_fallback: bool,
}

impl DecompScalars {
    pub fn from_series(series: &DecompSeries, association: Association, is_fallback: bool) -> Self {
        Self {
            n: series.m.len(),
            rho: series.rho,
            yield_y: series.yield_y,
            entropy_l: series.entropy_l,
            sdf_entropy: series.sdf_entropy,
            horizon_dependence: series.horizon_dependence,
            association,
            se_rho: None,
            se_y: None,
            se_l: None,
            is_fallback,
        }
    }
}

const SERIES_COLUMNS: [&str; 4] = ["t", "m", "m_perm", "m_trans"];

/// `t[,date],m,m_perm,m_trans`, one row per transition.
pub fn write_series_csv<W: Write>(w: W, series: &DecompSeries, dates: Option<&[String]>) -> Result<()> {
    let n = series.m.len();
    if let Some(d) = dates {
        if d.len() != n {
            return Err(Error::LengthMismatch { left: n, right: d.len() });
        }
    }
    let mut out = csv::Writer::from_writer(w);
    let mut header: Vec<&str> = vec!["t"];
    if dates.is_some() {
        header.push("date");
    }
    header.extend(&SERIES_COLUMNS[1..]);
    out.write_record(&header).map_err(csv_err)?;
    for t in 0..n {
        let mut rec = vec![t.to_string()];
        if let Some(d) = dates {
            rec.push(d[t].clone());
        }
        rec.push(fmt_f64(series.m[t]));
        rec.push(fmt_f64(series.m_perm[t]));
        rec.push(fmt_f64(series.m_trans[t]));
        out.write_record(&rec).map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

/// Series re-read from [`write_series_csv`] output.
#[derive(Clone, Debug, PartialEq)]
pub struct SeriesTable {
    pub dates: Option<Vec<String>>,
    pub m: Vec<f64>,
    pub m_perm: Vec<f64>,
    pub m_trans: Vec<f64>,
}

pub fn read_series_csv<R: Read>(r: R) -> Result<SeriesTable> {
    let mut rdr = csv::Reader::from_reader(r);
    let header: Vec<String> = rdr.headers().map_err(csv_err)?.iter().map(str::to_string).collect();
    let with_dates = header.get(1).map(|h| h == "date").unwrap_or(false);
    let mut expected: Vec<&str> = vec!["t"];
    if with_dates {
        expected.push("date");
    }
    expected.extend(&SERIES_COLUMNS[1..]);
    if header != expected {
        return Err(Error::Schema {
            row: 1,
            message: format!("expected header {expected:?}, found {header:?}"),
        });
    }
    let offset = usize::from(with_dates);
    let mut table = SeriesTable {
        dates: with_dates.then(Vec::new),
        m: Vec::new(),
        m_perm: Vec::new(),
        m_trans: Vec::new(),
    };
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let row = i + 2;
        if let Some(d) = table.dates.as_mut() {
            d.push(rec[1].to_string());
        }
        table.m.push(parse_f64(&rec[1 + offset], row, "m")?);
        table.m_perm.push(parse_f64(&rec[2 + offset], row, "m_perm")?);
        table.m_trans.push(parse_f64(&rec[3 + offset], row, "m_trans")?);
    }
    Ok(table)
}

/// `x0..x{d-1},phi,phi_star,density`.
pub fn write_grid_csv<W: Write>(w: W, grid: &EigenGrid) -> Result<()> {
    let d = grid.points.first().map(Vec::len).unwrap_or(0);
    let mut out = csv::Writer::from_writer(w);
    let mut header: Vec<String> = (0..d).map(|j| format!("x{j}")).collect();
    header.extend(["phi", "phi_star", "density"].map(String::from));
    out.write_record(&header).map_err(csv_err)?;
    for (i, p) in grid.points.iter().enumerate() {
        let mut rec: Vec<String> = p.iter().map(|v| fmt_f64(*v)).collect();
        rec.push(fmt_f64(grid.phi[i]));
        rec.push(fmt_f64(grid.phi_star[i]));
        rec.push(fmt_f64(grid.density[i]));
        out.write_record(&rec).map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

const MC_COLUMNS: [&str; 15] = [
    "preferences",
    "basis",
    "n",
    "statistic",
    "truth",
    "bias",
    "rmse",
    "mc_sd",
    "rmse_se",
    "median_se",
    "used",
    "fallback",
    "not_converged",
    "failed",
    "flagged",
];

fn basis_label(design: &McDesign) -> String {
    match design.basis {
        crate::basis::BasisSpec::Hermite { degree } => format!("hermite_k{}", degree + 1),
        crate::basis::BasisSpec::BSpline { k } => format!("bspline_k{k}"),
        crate::basis::BasisSpec::Sparse { degree, cap } => format!("sparse_d{degree}_c{cap}"),
    }
}

/// One row per (sample size, statistic), sample sizes in design order.
pub fn write_mc_csv<W: Write>(w: W, table: &McTable) -> Result<()> {
    let prefs = match table.design.preferences {
        SdfSpec::Power { .. } => "power",
        SdfSpec::Recursive { .. } => "recursive",
    };
    let basis = basis_label(&table.design);
    let mut out = csv::Writer::from_writer(w);
    out.write_record(MC_COLUMNS).map_err(csv_err)?;
    for r in &table.rows {
        out.write_record([
            prefs.to_string(),
            basis.clone(),
            r.sample_size.to_string(),
            r.statistic.clone(),
            fmt_opt(r.truth),
            fmt_f64(r.bias),
            fmt_f64(r.rmse),
            fmt_f64(r.mc_sd),
            fmt_f64(r.rmse_se),
            fmt_opt(r.median_se),
            r.used.to_string(),
            r.fallback.to_string(),
            r.not_converged.to_string(),
            r.failed.to_string(),
            r.flagged.to_string(),
        ])
        .map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct McMetadata {
    pub design: McDesign,
    pub seed: u64,
    pub replications: usize,
    pub wall_seconds: f64,
    pub version: String,
}

impl McMetadata {
    pub fn from_table(table: &McTable) -> Self {
        Self {
            design: table.design.clone(),
            seed: table.design.seed,
            replications: table.design.replications,
            wall_seconds: table.wall_seconds,
            version: env!("CARGO_PKG_VERSION").to_string(),
        }
    }
}

pub const BOOTSTRAP_COLUMNS: [&str; 8] = [
    "statistic",
    "estimate",
    "ci_lo",
    "ci_hi",
    "level",
    "replications",
    "discarded",
    "expected_block",
];

/// Point estimates with percentile intervals, one row per named statistic.
pub fn write_bootstrap_csv<W: Write>(w: W, names: &[&str], result: &BootstrapResult) -> Result<()> {
    if names.len() != result.point.len() {
        return Err(Error::LengthMismatch {
            left: result.point.len(),
            right: names.len(),
        });
    }
    let mut out = csv::Writer::from_writer(w);
    out.write_record(BOOTSTRAP_COLUMNS).map_err(csv_err)?;
    for (j, name) in names.iter().enumerate() {
        out.write_record([
            name.to_string(),
            fmt_f64(result.point[j]),
            fmt_f64(result.ci_lo[j]),
            fmt_f64(result.ci_hi[j]),
            fmt_f64(result.level),
            result.requested.to_string(),
            result.discarded.to_string(),
            fmt_f64(result.expected_block),
        ])
        .map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct BootstrapRow {
    pub statistic: String,
    pub estimate: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub level: f64,
    pub replications: usize,
    pub discarded: usize,
    pub expected_block: f64,
}

/// Parses a bootstrap table and checks its schema: exact header, unique
/// non-empty names, finite numbers, `ci_lo <= ci_hi`, `level` in (0, 1),
/// `discarded < replications` and a block length of at least one.
pub fn validate_bootstrap_csv<R: Read>(r: R) -> Result<Vec<BootstrapRow>> {
    let mut rdr = csv::Reader::from_reader(r);
    let header: Vec<String> = rdr.headers().map_err(csv_err)?.iter().map(str::to_string).collect();
    if header != BOOTSTRAP_COLUMNS {
        return Err(Error::Schema {
            row: 1,
            message: format!("expected header {BOOTSTRAP_COLUMNS:?}, found {header:?}"),
        });
    }
    let mut seen = HashSet::new();
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let row = i + 2;
        let bad = |message: String| Error::Schema { row, message };
        let statistic = rec[0].trim().to_string();
        if statistic.is_empty() {
            return Err(bad("empty statistic name".into()));
        }
        if !seen.insert(statistic.clone()) {
            return Err(bad(format!("duplicate statistic {statistic}")));
        }
        let mut nums = [0.0; 4];
        for (slot, (idx, col)) in nums.iter_mut().zip([(1, "estimate"), (2, "ci_lo"), (3, "ci_hi"), (4, "level")]) {
            *slot = parse_f64(&rec[idx], row, col)?;
            if !slot.is_finite() {
                return Err(bad(format!("{col} is not finite")));
            }
        }
        let [estimate, ci_lo, ci_hi, level] = nums;
        if ci_lo > ci_hi {
            return Err(bad(format!("ci_lo {ci_lo} exceeds ci_hi {ci_hi}")));
        }
        if !(level > 0.0 && level < 1.0) {
            return Err(bad(format!("level {level} outside (0, 1)")));
        }
        let count = |idx: usize, col: &str| {
            rec[idx].trim().parse::<usize>().map_err(|_| Error::Schema {
                row,
                message: format!("column {col}: {:?} is not a count", &rec[idx]),
            })
        };
        let replications = count(5, "replications")?;
        let discarded = count(6, "discarded")?;
        if replications == 0 || discarded >= replications {
            return Err(bad(format!("{discarded} discarded of {replications} replications")));
        }
        let expected_block = parse_f64(&rec[7], row, "expected_block")?;
        if !(expected_block >= 1.0) {
            return Err(bad(format!("expected block {expected_block} below one")));
        }
        rows.push(BootstrapRow {
            statistic,
            estimate,
            ci_lo,
            ci_hi,
            level,
            replications,
            discarded,
            expected_block,
        });
    }
    if rows.is_empty() {
        return Err(Error::Schema {
            row: 2,
            message: "no statistics".into(),
        });
    }
    Ok(rows)
}
