//! Per-time diagnostics rows and their CSV form.
//!
//! Columns: `t, sigma_tilde_1..r, relative_error, orth_U, orth_Y,
//! opt_residual, sigma_condition`. Numbers use 17 significant digits;
//! `relative_error` is left empty when no full-order reference exists.

use std::io::{BufRead, Write};

use crate::error::{DboError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct DiagnosticsRow {
    pub t: f64,
    /// Canonical singular values, nonincreasing.
    pub sigma_tilde: Vec<f64>,
    pub relative_error: Option<f64>,
    pub orth_u: f64,
    pub orth_y: f64,
    pub opt_residual: f64,
    pub sigma_condition: f64,
}

pub fn header(r: usize) -> String {
    let mut cols = vec!["t".to_string()];
    cols.extend((1..=r).map(|i| format!("sigma_tilde_{i}")));
    cols.extend(["relative_error", "orth_U", "orth_Y", "opt_residual", "sigma_condition"].map(String::from));
    cols.join(",")
}

/// 17 significant digits, enough to round-trip any `f64`.
pub fn format_number(v: f64) -> String {
    format!("{v:.16e}")
}

/// CSV sink for one rank. The header is written on creation.
pub struct DiagnosticsWriter<W: Write> {
    out: W,
    rank: usize,
}

impl<W: Write> DiagnosticsWriter<W> {
    pub fn new(mut out: W, rank: usize) -> Result<Self> {
        writeln!(out, "{}", header(rank))?;
        Ok(Self { out, rank })
    }

    pub fn write_row(&mut self, row: &DiagnosticsRow) -> Result<()> {
        if row.sigma_tilde.len() != self.rank {
            return Err(DboError::Dimension(format!(
                "row has {} singular values, writer expects {}",
                row.sigma_tilde.len(),
                self.rank
            )));
        }
        let mut fields = Vec::with_capacity(self.rank + 6);
        fields.push(format_number(row.t));
        fields.extend(row.sigma_tilde.iter().map(|&s| format_number(s)));
        fields.push(row.relative_error.map(format_number).unwrap_or_default());
        for v in [row.orth_u, row.orth_y, row.opt_residual, row.sigma_condition] {
            fields.push(format_number(v));
        }
        writeln!(self.out, "{}", fields.join(","))?;
        Ok(())
    }

    pub fn flush(&mut self) -> Result<()> {
        self.out.flush()?;
        Ok(())
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

/// Parse a diagnostics CSV back into rows.
pub fn read_diagnostics<R: BufRead>(input: R) -> Result<Vec<DiagnosticsRow>> {
    let mut lines = input.lines();
    let head = match lines.next() {
        Some(h) => h?,
        None => return Ok(Vec::new()),
    };
    let ncol = head.split(',').count();
    if ncol < 6 {
        return Err(DboError::Format(format!("diagnostics header has {ncol} columns")));
    }
    let r = ncol - 6;
    if head != header(r) {
        return Err(DboError::Format(format!("unexpected diagnostics header '{head}'")));
    }
    let mut rows = Vec::new();
    for (k, line) in lines.enumerate() {
        let line = line?;
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != ncol {
            return Err(DboError::Format(format!("diagnostics row {} has {} fields", k + 1, cells.len())));
        }
        let num = |s: &str| -> Result<f64> {
            s.parse().map_err(|_| DboError::Format(format!("diagnostics row {}: bad number '{s}'", k + 1)))
        };
        let rel = cells[r + 1];
        rows.push(DiagnosticsRow {
            t: num(cells[0])?,
            sigma_tilde: cells[1..=r].iter().map(|c| num(c)).collect::<Result<_>>()?,
            relative_error: if rel.is_empty() { None } else { Some(num(rel)?) },
            orth_u: num(cells[r + 2])?,
            orth_y: num(cells[r + 3])?,
            opt_residual: num(cells[r + 4])?,
            sigma_condition: num(cells[r + 5])?,
        });
    }
    Ok(rows)
}
