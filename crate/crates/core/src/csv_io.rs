//! Small CSV helpers shared by every emitted table.
//!
//! Tables may start with `#`-prefixed comment lines (run metadata such as the
//! master seed). Floats are written with 17 significant digits so values
//! survive a write/read cycle exactly.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub fn format_float(x: f64) -> String {
    format!("{x:.16e}")
}

/// A numeric table: header plus rows of fields already rendered as text.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Table {
    pub comments: Vec<String>,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new<S: Into<String>>(header: impl IntoIterator<Item = S>) -> Self {
        Table {
            comments: Vec::new(),
            header: header.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn comment(mut self, line: impl Into<String>) -> Self {
        self.comments.push(line.into());
        self
    }

    pub fn push_floats(&mut self, row: &[f64]) {
        self.rows.push(row.iter().map(|&x| format_float(x)).collect());
    }

    pub fn push(&mut self, row: Vec<String>) {
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    /// Parse every field of column `name` as f64.
    pub fn floats(&self, name: &str) -> Option<Vec<f64>> {
        let idx = self.column(name)?;
        self.rows.iter().map(|r| r.get(idx)?.parse().ok()).collect()
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        for c in &self.comments {
            writeln!(out, "# {c}").map_err(|e| Error::io(path, e))?;
        }
        {
            let mut w = csv::Writer::from_writer(&mut out);
            let map = |e: csv::Error| Error::Format {
                path: path.to_path_buf(),
                message: e.to_string(),
            };
            w.write_record(&self.header).map_err(map)?;
            for r in &self.rows {
                w.write_record(r).map_err(map)?;
            }
            w.flush().map_err(|e| Error::io(path, e))?;
        }
        out.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Table> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let comments = text
            .lines()
            .take_while(|l| l.starts_with('#'))
            .map(|l| l.trim_start_matches('#').trim().to_string())
            .collect();
        let mut reader = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .from_reader(text.as_bytes());
        let fmt = |e: csv::Error| Error::Format {
            path: path.to_path_buf(),
            message: e.to_string(),
        };
        let header = reader
            .headers()
            .map_err(fmt)?
            .iter()
            .map(str::to_string)
            .collect();
        let mut rows = Vec::new();
        for rec in reader.records() {
            rows.push(rec.map_err(fmt)?.iter().map(str::to_string).collect());
        }
        Ok(Table {
            comments,
            header,
            rows,
        })
    }
}
