//! Plain-text panel, mask, truth and report files.
//!
//! A panel file starts with `T p1 p2` and holds `T` blocks of `p1` lines of
//! `p2` whitespace-separated values; missing cells are written as `NA`.
//! Sidecar files are `key = value` lines followed by `[NAME]` sections of
//! comma-separated rows.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use dmfm_core::MatrixSeries;
use nalgebra::DMatrix;

use crate::error::{CliError, CliResult};

/// Shortest text that parses back to the same value.
pub fn fmt_num(v: f64) -> String {
    let a = v.abs();
    if v == 0.0 || (1e-4..1e15).contains(&a) {
        format!("{v}")
    } else {
        format!("{v:e}")
    }
}

/// Six decimals, for human-facing tables.
pub fn fmt_fixed(v: f64) -> String {
    format!("{v:.6}")
}

pub fn write_file(path: &Path, contents: &str) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    std::fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

pub fn read_file(path: &Path) -> CliResult<String> {
    std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

/// Panel text for a series of equally shaped matrices; cells flagged by
/// `missing` are written as `NA`.
pub fn render_panel(data: &[DMatrix<f64>], missing: impl Fn(usize, usize, usize) -> bool) -> String {
    let (p1, p2) = data.first().map_or((0, 0), |m| m.shape());
    let mut out = format!("{} {p1} {p2}\n", data.len());
    for (t, m) in data.iter().enumerate() {
        for i in 0..p1 {
            let row: Vec<String> =
                (0..p2).map(|j| if missing(t, i, j) { "NA".into() } else { fmt_num(m[(i, j)]) }).collect();
            out.push_str(&row.join(" "));
            out.push('\n');
        }
    }
    out
}

pub fn render_series(y: &MatrixSeries) -> String {
    render_panel(y.data(), |t, i, j| !y.is_observed(t, i, j))
}

/// Mask as a panel of `1` (observed) and `0` (missing).
pub fn render_mask(y: &MatrixSeries) -> String {
    let (t, p1, p2) = (y.len(), y.p1(), y.p2());
    let mut out = format!("{t} {p1} {p2}\n");
    for s in 0..t {
        for i in 0..p1 {
            let row: Vec<&str> = (0..p2).map(|j| if y.is_observed(s, i, j) { "1" } else { "0" }).collect();
            out.push_str(&row.join(" "));
            out.push('\n');
        }
    }
    out
}

/// Reads a panel; `NA` cells become missing entries of the series.
pub fn parse_panel(text: &str) -> CliResult<MatrixSeries> {
    let bad = |m: String| CliError::Format(format!("panel: {m}"));
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines.next().ok_or_else(|| bad("empty file".into()))?;
    let dims: Vec<usize> = header
        .split_whitespace()
        .map(|x| x.parse().map_err(|_| bad(format!("bad header '{header}'"))))
        .collect::<CliResult<_>>()?;
    let &[t, p1, p2] = dims.as_slice() else {
        return Err(bad(format!("header '{header}' is not 'T p1 p2'")));
    };
    let mut data = Vec::with_capacity(t);
    let mut mask = Vec::with_capacity(t);
    let mut any_missing = false;
    for s in 0..t {
        let mut m = DMatrix::zeros(p1, p2);
        let mut w = DMatrix::from_element(p1, p2, 1.0);
        for i in 0..p1 {
            let line = lines.next().ok_or_else(|| bad(format!("block {} ends early", s + 1)))?;
            let cells: Vec<&str> = line.split_whitespace().collect();
            if cells.len() != p2 {
                return Err(bad(format!("block {} row {} has {} values, expected {p2}", s + 1, i + 1, cells.len())));
            }
            for (j, c) in cells.iter().enumerate() {
                if *c == "NA" {
                    m[(i, j)] = f64::NAN;
                    w[(i, j)] = 0.0;
                    any_missing = true;
                } else {
                    let v: f64 = c.parse().map_err(|_| bad(format!("'{c}' is not a number")))?;
                    if !v.is_finite() {
                        return Err(bad(format!("non-finite value '{c}'")));
                    }
                    m[(i, j)] = v;
                }
            }
        }
        data.push(m);
        mask.push(w);
    }
    if lines.next().is_some() {
        return Err(bad("trailing rows after the last block".into()));
    }
    let series = if any_missing { MatrixSeries::with_mask(data, mask) } else { MatrixSeries::new(data) };
    Ok(series?)
}

/// Builder for `key = value` headers followed by CSV sections.
#[derive(Default)]
pub struct Sidecar {
    text: String,
}

impl Sidecar {
    pub fn kv(&mut self, key: &str, value: impl std::fmt::Display) -> &mut Self {
        writeln!(self.text, "{key} = {value}").unwrap();
        self
    }

    pub fn matrix(&mut self, name: &str, m: &DMatrix<f64>) -> &mut Self {
        writeln!(self.text, "[{name}]").unwrap();
        for row in m.row_iter() {
            let cells: Vec<String> = row.iter().map(|&v| fmt_num(v)).collect();
            writeln!(self.text, "{}", cells.join(",")).unwrap();
        }
        self
    }

    /// Stacks the matrices of a series, first period on top.
    pub fn series(&mut self, name: &str, ms: &[DMatrix<f64>]) -> &mut Self {
        writeln!(self.text, "[{name}]").unwrap();
        for m in ms {
            for row in m.row_iter() {
                let cells: Vec<String> = row.iter().map(|&v| fmt_num(v)).collect();
                writeln!(self.text, "{}", cells.join(",")).unwrap();
            }
        }
        self
    }

    pub fn finish(&self) -> String {
        self.text.clone()
    }
}

/// Parsed sidecar: header values and the raw rows of each section.
#[derive(Debug, Default)]
pub struct SidecarDoc {
    pub values: BTreeMap<String, String>,
    pub sections: BTreeMap<String, Vec<Vec<f64>>>,
}

pub fn parse_sidecar(text: &str) -> CliResult<SidecarDoc> {
    let mut doc = SidecarDoc::default();
    let mut current: Option<String> = None;
    for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            doc.sections.insert(name.to_string(), Vec::new());
            current = Some(name.to_string());
        } else if let Some(name) = &current {
            let row = line
                .split(',')
                .map(|c| c.trim().parse::<f64>().map_err(|_| CliError::Format(format!("section {name}: '{c}' is not a number"))))
                .collect::<CliResult<Vec<_>>>()?;
            doc.sections.get_mut(name).unwrap().push(row);
        } else {
            let (k, v) = line.split_once('=').ok_or_else(|| CliError::Format(format!("expected key = value, got '{line}'")))?;
            doc.values.insert(k.trim().to_string(), v.trim().to_string());
        }
    }
    Ok(doc)
}

impl SidecarDoc {
    pub fn value(&self, key: &str) -> CliResult<&str> {
        self.values.get(key).map(String::as_str).ok_or_else(|| CliError::Format(format!("missing key '{key}'")))
    }

    pub fn matrix(&self, name: &str) -> CliResult<DMatrix<f64>> {
        let rows = self.sections.get(name).ok_or_else(|| CliError::Format(format!("missing section [{name}]")))?;
        let ncols = rows.first().map_or(0, Vec::len);
        if rows.is_empty() || rows.iter().any(|r| r.len() != ncols) {
            return Err(CliError::Format(format!("section [{name}] is empty or ragged")));
        }
        Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
    }

    /// Splits a stacked section back into `t` matrices.
    pub fn series(&self, name: &str, t: usize) -> CliResult<Vec<DMatrix<f64>>> {
        let m = self.matrix(name)?;
        if t == 0 || m.nrows() % t != 0 {
            return Err(CliError::Format(format!("section [{name}] does not split into {t} periods")));
        }
        let p = m.nrows() / t;
        Ok((0..t).map(|s| m.rows(s * p, p).into_owned()).collect())
    }
}
