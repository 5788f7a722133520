//! File formats: matrices as headerless CSV, results as JSON written
//! atomically (temp file in the target directory, then rename).

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::dual::DualOptions;
use crate::error::{Error, Result};
use crate::linalg::{Mat, SymMat};
use crate::mtfa::MtfaOptions;
use crate::recovery::RecoveryOptions;

/// Relative asymmetry (against `max(1, max |M|)`) that is silently averaged
/// away when reading a symmetric matrix.
pub const SYMMETRY_TOL: f64 = 1e-9;

/// Reads a dense matrix; every row must have the same number of finite
/// cells. Locations in errors are 1-based.
pub fn read_matrix_csv(path: &Path) -> Result<Mat> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    parse_matrix_csv(&text)
}

pub fn parse_matrix_csv(text: &str) -> Result<Mat> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .flexible(true)
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::Parse {
            row: r + 1,
            col: 0,
            message: e.to_string(),
        })?;
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        let row = record
            .iter()
            .enumerate()
            .map(|(c, cell)| parse_cell(cell, rows.len() + 1, c + 1))
            .collect::<Result<Vec<_>>>()?;
        if let Some(first) = rows.first() {
            if row.len() != first.len() {
                return Err(Error::Parse {
                    row: rows.len() + 1,
                    col: row.len(),
                    message: format!("expected {} columns, found {}", first.len(), row.len()),
                });
            }
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Parse {
            row: 0,
            col: 0,
            message: "no data rows".into(),
        });
    }
    Ok(Mat::from_rows(&rows))
}

fn parse_cell(cell: &str, row: usize, col: usize) -> Result<f64> {
    let v: f64 = cell.parse().map_err(|_| Error::Parse {
        row,
        col,
        message: format!("cannot parse {cell:?} as a number"),
    })?;
    if !v.is_finite() {
        return Err(Error::Parse {
            row,
            col,
            message: format!("non-finite value {cell:?}"),
        });
    }
    Ok(v)
}

/// Reads a square matrix and symmetrizes it, rejecting asymmetry above
/// [`SYMMETRY_TOL`].
pub fn read_symmetric_csv(path: &Path) -> Result<SymMat> {
    SymMat::from_dense_checked(&read_matrix_csv(path)?, SYMMETRY_TOL)
}

/// Reads observations (rows) by variables (columns) and returns the
/// `n x N` layout used by the estimators.
pub fn read_data_csv(path: &Path) -> Result<Mat> {
    Ok(read_matrix_csv(path)?.transpose())
}

/// Shortest representation that parses back to the same `f64`.
pub fn format_f64(v: f64) -> String {
    let a = v.abs();
    if a != 0.0 && !(1e-5..1e15).contains(&a) {
        format!("{v:e}")
    } else {
        format!("{v}")
    }
}

pub fn format_matrix_csv(m: &Mat) -> String {
    let mut out = String::new();
    for i in 0..m.rows() {
        let line: Vec<String> = m.row(i).iter().map(|v| format_f64(*v)).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out
}

pub fn write_matrix_csv(path: &Path, m: &Mat) -> Result<()> {
    write_atomic(path, format_matrix_csv(m).as_bytes())
}

pub fn write_symmetric_csv(path: &Path, m: &SymMat) -> Result<()> {
    write_matrix_csv(path, &m.to_dense())
}

/// Writes `bytes` to a temporary file next to `path` and renames it into
/// place, so readers never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)
        .map_err(|e| Error::Io(format!("{}: {e}", dir.display())))?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path)
        .map_err(|e| Error::Io(format!("{}: {}", path.display(), e.error)))?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Io(format!("serializing {}: {e}", path.display())))?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DefaultEntry {
    pub name: &'static str,
    pub value: String,
    pub meaning: &'static str,
}

/// Every tunable default in one place (`--print-defaults`).
pub fn defaults_table() -> Vec<DefaultEntry> {
    let d = DualOptions::default();
    let m = MtfaOptions::default();
    let r = RecoveryOptions::default();
    let e = |name, value: f64, meaning| DefaultEntry {
        name,
        value: format_f64(value),
        meaning,
    };
    vec![
        e("dual.tol", d.tol, "projected-gradient residual, relative to 1 + |F|"),
        e("dual.max_iter", d.max_iter as f64, "dual iteration cap"),
        e("dual.armijo_c", d.armijo_c, "sufficient-decrease constant"),
        e("dual.backtrack", d.backtrack, "line-search contraction"),
        e("dual.lambda_floor", d.lambda_floor, "lower bound kept on lambda"),
        e("dual.lambda_cap", d.lambda_cap, "abort if lambda exceeds this"),
        e("dual.x_norm_cap", d.x_norm_cap, "abort if max |X| exceeds this"),
        DefaultEntry {
            name: "dual.step_rule",
            value: format!("{:?}", d.step_rule).to_lowercase(),
            meaning: "spectral step shared (joint) or per block (blockwise)",
        },
        e("mtfa.tol", m.tol, "primal/dual residual, relative to ||Sigma||_F"),
        e("mtfa.max_iter", m.max_iter as f64, "splitting iteration cap"),
        e("mtfa.rho_scaled", m.rho_scaled, "initial penalty times ||Sigma||_F"),
        e("mtfa.balance_ratio", m.balance_ratio, "residual ratio triggering a penalty update"),
        e("mtfa.balance_factor", m.balance_factor, "penalty update factor"),
        e("mtfa.cert_tol", m.cert_tol, "optimality certificate tolerance"),
        e("recovery.kernel_rel_tol", r.kernel_rel_tol, "kernel cut relative to ||Lambda||_2"),
        e("recovery.active_tol", r.active_tol, "diagonal multiplier activity threshold"),
        e("recovery.active_weight", r.active_weight, "least-squares weight of the D_ii = 0 equations"),
        e("recovery.lstsq_rel_cut", r.lstsq_rel_cut, "rank-deficiency cut of the Q system"),
        e("recovery.consistency_tol", r.consistency_tol, "Q system residual limit, relative to max |Sigma*|"),
        e("recovery.proj_tol", r.proj_tol, "tolerated negative eigenvalue of Q, relative"),
        e("recovery.rank_rel_tol", r.rank_rel_tol, "numerical rank cut for R"),
        e("recovery.cert_tol", r.cert_tol, "certification threshold"),
        e("io.symmetry_tol", SYMMETRY_TOL, "asymmetry averaged away on input"),
        e("simulate.delta_fraction", 0.5, "delta as a fraction of delta_max"),
        e("simulate.report_k", 20.0, "singular values reported per estimate"),
    ]
}
