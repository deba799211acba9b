//! CSV exchange format for kernel tables.
//!
//! One file per kernel, header `kernel,t,s,r,value`, `s`/`r` left empty for
//! arguments the kernel does not take, numbers in C `%.16e` notation
//! (17 significant digits), rows in lexicographic `(t, s, r)` order. Rows
//! of unsolved regions are omitted.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{KernelGrid, KernelId, NodePoint};
use crate::error::{Error, Result};

pub const HEADER: &str = "kernel,t,s,r,value";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub t: f64,
    pub s: Option<f64>,
    pub r: Option<f64>,
    pub value: f64,
}

impl TableRow {
    fn point(&self) -> NodePoint {
        NodePoint {
            t: self.t,
            s: self.s,
            r: self.r,
        }
    }

    /// Coordinates quantized to 1e-9 so tables written by different tools
    /// for the same nodes match up.
    fn key(&self) -> (i64, i64, i64) {
        let q = |v: f64| (v * 1e9).round() as i64;
        (q(self.t), self.s.map_or(i64::MIN, q), self.r.map_or(i64::MIN, q))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelTable {
    pub kernel: KernelId,
    pub rows: Vec<TableRow>,
}

/// `%.16e` with a C-style exponent (`1.5000000000000000e+00`).
pub fn format_number(x: f64) -> String {
    let raw = format!("{x:.16e}");
    match raw.split_once('e') {
        Some((mantissa, exp)) => {
            let exp: i32 = exp.parse().expect("exponent from float formatting");
            let sign = if exp < 0 { '-' } else { '+' };
            format!("{mantissa}e{sign}{:02}", exp.abs())
        }
        None => raw,
    }
}

impl KernelTable {
    pub fn to_csv_string(&self) -> String {
        let mut out = String::with_capacity(64 * (self.rows.len() + 1));
        out.push_str(HEADER);
        out.push('\n');
        let label = self.kernel.label();
        for row in &self.rows {
            let opt = |v: Option<f64>| v.map(format_number).unwrap_or_default();
            let _ = writeln!(
                out,
                "{label},{},{},{},{}",
                format_number(row.t),
                opt(row.s),
                opt(row.r),
                format_number(row.value)
            );
        }
        out
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let err = |line: usize, message: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            message,
        };
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h.trim_end() == HEADER => {}
            Some((_, h)) => return Err(err(1, format!("expected header '{HEADER}', got '{h}'"))),
            None => return Err(err(1, "empty file".into())),
        }

        let mut kernel: Option<KernelId> = None;
        let mut rows = Vec::new();
        for (n, line) in lines {
            let lineno = n + 1;
            let line = line.trim_end();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 5 {
                return Err(err(lineno, format!("expected 5 fields, got {}", fields.len())));
            }
            let id: KernelId = fields[0]
                .parse()
                .map_err(|e: Error| err(lineno, e.to_string()))?;
            match kernel {
                None => kernel = Some(id),
                Some(k) if k != id => {
                    return Err(err(lineno, format!("kernel '{id}' in a {k} file")));
                }
                _ => {}
            }
            let num = |field: &str, name: &str| -> Result<f64> {
                let v: f64 = field
                    .trim()
                    .parse()
                    .map_err(|_| err(lineno, format!("bad {name} '{field}'")))?;
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(err(lineno, format!("non-finite {name}")))
                }
            };
            let opt = |field: &str, name: &str, wanted: bool| -> Result<Option<f64>> {
                match (field.trim().is_empty(), wanted) {
                    (true, false) => Ok(None),
                    (false, true) => num(field, name).map(Some),
                    (true, true) => Err(err(lineno, format!("missing {name} for {id}"))),
                    (false, false) => Err(err(lineno, format!("unexpected {name} for {id}"))),
                }
            };
            rows.push(TableRow {
                t: num(fields[1], "t")?,
                s: opt(fields[2], "s", id.arity() >= 1)?,
                r: opt(fields[3], "r", id.arity() >= 2)?,
                value: num(fields[4], "value")?,
            });
        }
        let kernel = kernel.or_else(|| kernel_from_file_name(path)).ok_or_else(|| {
            err(1, "no data rows and file name does not name a kernel".into())
        })?;
        Ok(KernelTable { kernel, rows })
    }
}

fn kernel_from_file_name(path: &Path) -> Option<KernelId> {
    path.file_stem()?.to_str()?.parse().ok()
}

pub fn export_csv(grid: &KernelGrid, which: KernelId, path: &Path) -> Result<()> {
    let text = grid.to_table(which).to_csv_string();
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn import_csv(path: &Path) -> Result<KernelTable> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    KernelTable::parse(&text, path)
}

/// Maximum absolute difference over rows present in both tables, matched by
/// node coordinates.
pub fn table_max_abs_diff(a: &KernelTable, b: &KernelTable) -> Result<Option<(f64, NodePoint)>> {
    if a.kernel != b.kernel {
        return Err(Error::Parameter(format!(
            "cannot compare {} with {}",
            a.kernel, b.kernel
        )));
    }
    let index: HashMap<_, f64> = b.rows.iter().map(|r| (r.key(), r.value)).collect();
    let mut best: Option<(f64, NodePoint)> = None;
    for row in &a.rows {
        if let Some(&other) = index.get(&row.key()) {
            let diff = (row.value - other).abs();
            if best.is_none_or(|(m, _)| diff > m) {
                best = Some((diff, row.point()));
            }
        }
    }
    Ok(best)
}
