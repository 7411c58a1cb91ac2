//! Tabular reports rendered as CSV or as aligned text.

use crate::error::{CliError, Result};
use gmcp_core::IndexSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, clap::ValueEnum)]
pub enum Format {
    /// Full-precision CSV.
    Csv,
    /// Aligned columns, six significant digits.
    #[default]
    Table,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Text(String),
    Num(f64),
    Empty,
}

impl From<&str> for Cell {
    fn from(s: &str) -> Self {
        Cell::Text(s.into())
    }
}

impl From<String> for Cell {
    fn from(s: String) -> Self {
        Cell::Text(s)
    }
}

impl From<f64> for Cell {
    fn from(x: f64) -> Self {
        Cell::Num(x)
    }
}

impl From<Option<f64>> for Cell {
    fn from(x: Option<f64>) -> Self {
        x.map_or(Cell::Empty, Cell::Num)
    }
}

impl From<IndexSet> for Cell {
    fn from(s: IndexSet) -> Self {
        Cell::Text(s.to_string())
    }
}

impl From<bool> for Cell {
    fn from(b: bool) -> Self {
        Cell::Text(if b { "yes" } else { "no" }.into())
    }
}

fn significant(x: f64, digits: i32) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let decimals = (digits - 1 - x.abs().log10().floor() as i32).clamp(0, 15) as usize;
    format!("{x:.decimals$}")
}

impl Cell {
    fn render(&self, format: Format) -> String {
        match (self, format) {
            (Cell::Text(s), _) => s.clone(),
            (Cell::Num(x), Format::Csv) => format!("{x}"),
            (Cell::Num(x), Format::Table) => significant(*x, 6),
            (Cell::Empty, Format::Csv) => String::new(),
            (Cell::Empty, Format::Table) => "-".into(),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Report {
    pub title: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Report {
    pub fn new(title: impl Into<String>, header: &[&str]) -> Self {
        Report {
            title: title.into(),
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn render(&self, format: Format) -> Result<String> {
        let cells: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|r| r.iter().map(|c| c.render(format)).collect())
            .collect();
        match format {
            Format::Csv => {
                let mut w = csv::Writer::from_writer(Vec::new());
                let fail = |e: csv::Error| CliError::Invalid(format!("csv output: {e}"));
                w.write_record(&self.header).map_err(fail)?;
                for r in &cells {
                    w.write_record(r).map_err(fail)?;
                }
                let bytes = w.into_inner().map_err(|e| CliError::Invalid(format!("csv output: {e}")))?;
                Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
            }
            Format::Table => Ok(align(&self.title, &self.header, &cells)),
        }
    }
}

fn align(title: &str, header: &[String], rows: &[Vec<String>]) -> String {
    let mut width: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
    for r in rows {
        for (w, c) in width.iter_mut().zip(r) {
            *w = (*w).max(c.chars().count());
        }
    }
    let line = |cells: &[String]| {
        let parts: Vec<String> = cells.iter().zip(&width).map(|(c, &w)| format!("{c:>w$}")).collect();
        parts.join("  ").trim_end().to_string() + "\n"
    };
    let mut out = String::new();
    if !title.is_empty() {
        out.push_str(title);
        out.push('\n');
    }
    out.push_str(&line(header));
    for r in rows {
        out.push_str(&line(r));
    }
    out
}

/// Sets in the customary closure order: larger sets first, then by
/// descending label list.
pub fn closure_order(k: usize) -> Vec<IndexSet> {
    let mut sets: Vec<IndexSet> = IndexSet::full(k).subsets().collect();
    sets.sort_by(|a, b| {
        b.len().cmp(&a.len()).then_with(|| {
            let (x, y): (Vec<usize>, Vec<usize>) = (a.iter().collect(), b.iter().collect());
            y.cmp(&x)
        })
    });
    sets
}
