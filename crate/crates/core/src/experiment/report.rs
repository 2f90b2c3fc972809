use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Placeholder for a cell that could not be computed.
pub const MISSING: &str = "—";

/// One number in a report, with the coordinates that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub value: Option<f64>,
    pub bits: Option<u8>,
    pub n_speakers: Option<usize>,
    pub k_samples: Option<usize>,
    pub seed: u64,
}

impl Cell {
    pub fn missing(bits: Option<u8>, n_speakers: Option<usize>, k_samples: Option<usize>, seed: u64) -> Self {
        Cell {
            value: None,
            bits,
            n_speakers,
            k_samples,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub label: String,
    pub cells: Vec<Cell>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportTable {
    pub name: String,
    pub caption: String,
    pub units: String,
    pub row_header: String,
    pub columns: Vec<String>,
    pub rows: Vec<Row>,
}

impl ReportTable {
    pub fn new(name: &str, caption: &str, units: &str, row_header: &str, columns: Vec<String>) -> Self {
        ReportTable {
            name: name.into(),
            caption: caption.into(),
            units: units.into(),
            row_header: row_header.into(),
            columns,
            rows: Vec::new(),
        }
    }

    pub fn push_row(&mut self, label: impl Into<String>, cells: Vec<Cell>) -> Result<()> {
        if cells.len() != self.columns.len() {
            return Err(Error::dim(self.columns.len(), cells.len()));
        }
        self.rows.push(Row {
            label: label.into(),
            cells,
        });
        Ok(())
    }

    /// Looks up a value by row label and column header.
    pub fn value(&self, row: &str, column: &str) -> Option<f64> {
        let j = self.columns.iter().position(|c| c == column)?;
        self.rows.iter().find(|r| r.label == row)?.cells[j].value
    }

    pub fn validate(&self) -> Result<()> {
        for row in &self.rows {
            if row.cells.len() != self.columns.len() {
                return Err(Error::Validation(format!(
                    "table {}: row {:?} has {} cells for {} columns",
                    self.name,
                    row.label,
                    row.cells.len(),
                    self.columns.len()
                )));
            }
            if row.cells.iter().any(|c| c.value.is_some_and(|v| !v.is_finite())) {
                return Err(Error::Validation(format!("table {}: non-finite value in row {:?}", self.name, row.label)));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RenderFormat {
    Csv,
    Markdown,
    Json,
}

impl RenderFormat {
    pub fn extension(self) -> &'static str {
        match self {
            RenderFormat::Csv => "csv",
            RenderFormat::Markdown => "md",
            RenderFormat::Json => "json",
        }
    }
}

impl FromStr for RenderFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(RenderFormat::Csv),
            "markdown" | "md" => Ok(RenderFormat::Markdown),
            "json" => Ok(RenderFormat::Json),
            other => Err(Error::Config(format!("unknown render format {other:?}"))),
        }
    }
}

impl fmt::Display for RenderFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RenderFormat::Csv => "csv",
            RenderFormat::Markdown => "markdown",
            RenderFormat::Json => "json",
        })
    }
}

fn fixed(value: Option<f64>) -> String {
    match value {
        Some(v) => format!("{v:.2}"),
        None => MISSING.to_string(),
    }
}

fn md_escape(s: &str) -> String {
    s.replace('|', "\\|")
}

/// Text form of a table. CSV and Markdown carry two decimals and `—` for
/// missing cells; JSON is the full table at full precision.
pub fn render(table: &ReportTable, format: RenderFormat) -> String {
    match format {
        RenderFormat::Markdown => {
            let mut out = String::new();
            let header: Vec<String> = std::iter::once(&table.row_header)
                .chain(&table.columns)
                .map(|h| md_escape(h))
                .collect();
            out.push_str(&format!("| {} |\n", header.join(" | ")));
            out.push_str(&format!("|{}\n", "---|".repeat(header.len())));
            for row in &table.rows {
                let cells: Vec<String> = std::iter::once(md_escape(&row.label))
                    .chain(row.cells.iter().map(|c| fixed(c.value)))
                    .collect();
                out.push_str(&format!("| {} |\n", cells.join(" | ")));
            }
            out
        }
        RenderFormat::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            let header = std::iter::once(table.row_header.as_str()).chain(table.columns.iter().map(String::as_str));
            w.write_record(header).expect("in-memory write");
            for row in &table.rows {
                let cells = std::iter::once(row.label.clone()).chain(row.cells.iter().map(|c| fixed(c.value)));
                w.write_record(cells).expect("in-memory write");
            }
            String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 input")
        }
        RenderFormat::Json => {
            let mut s = serde_json::to_string_pretty(table).expect("tables serialize");
            s.push('\n');
            s
        }
    }
}

pub fn parse_json(text: &str) -> Result<ReportTable> {
    let table: ReportTable = serde_json::from_str(text)?;
    table.validate()?;
    Ok(table)
}
