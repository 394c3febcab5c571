use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DataError, FeatureSchema};

/// One raw table cell. Missing values are always explicit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Cell {
    Missing,
    Text(String),
    Number(f64),
}

impl Cell {
    pub fn is_missing(&self) -> bool {
        matches!(self, Cell::Missing)
    }

    pub fn as_number(&self) -> Option<f64> {
        match self {
            Cell::Number(v) => Some(*v),
            _ => None,
        }
    }

    pub fn as_text(&self) -> Option<&str> {
        match self {
            Cell::Text(s) => Some(s),
            _ => None,
        }
    }

    fn render(&self) -> String {
        match self {
            Cell::Missing => String::new(),
            Cell::Text(s) => s.clone(),
            Cell::Number(v) => v.to_string(),
        }
    }
}

/// Raw cohort rows, one per patient visit, in schema column order
/// (plus the label column last, when present).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RawTable {
    pub header: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl RawTable {
    pub fn new(header: Vec<String>) -> Self {
        Self {
            header,
            rows: Vec::new(),
        }
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    pub fn push_row(&mut self, row: Vec<Cell>) -> Result<(), DataError> {
        if row.len() != self.header.len() {
            return Err(DataError::MalformedRow {
                row: self.rows.len(),
                expected: self.header.len(),
                found: row.len(),
            });
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), DataError> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(&self.header)?;
        for row in &self.rows {
            w.write_record(row.iter().map(Cell::render))?;
        }
        w.flush().map_err(|e| DataError::Csv(e.into()))?;
        Ok(())
    }
}

pub fn load_csv(path: &Path, schema: &FeatureSchema) -> Result<RawTable, DataError> {
    let file = std::fs::File::open(path).map_err(|e| DataError::io(path, e))?;
    read_csv(file, schema)
}

/// Reads a comma-separated, double-quoted UTF-8 table with a header row.
///
/// Columns are matched to the schema by name in any order and returned in schema
/// order. The label column is optional; if present it is placed last and must hold
/// `0` or `1` (or be empty). Unparseable numeric cells become [`Cell::Missing`].
pub fn read_csv<R: Read>(reader: R, schema: &FeatureSchema) -> Result<RawTable, DataError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let file_header: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let positions: HashMap<&str, usize> = file_header
        .iter()
        .enumerate()
        .map(|(i, h)| (h.as_str(), i))
        .collect();

    let missing: Vec<String> = schema
        .columns
        .iter()
        .filter(|c| !positions.contains_key(c.name.as_str()))
        .map(|c| c.name.clone())
        .collect();
    let extra: Vec<String> = file_header
        .iter()
        .filter(|h| **h != schema.label && schema.column(h).is_none())
        .cloned()
        .collect();
    if !missing.is_empty() || !extra.is_empty() {
        return Err(DataError::HeaderMismatch { missing, extra });
    }

    let mut header: Vec<String> = schema.columns.iter().map(|c| c.name.clone()).collect();
    let mut sources: Vec<usize> = schema
        .columns
        .iter()
        .map(|c| positions[c.name.as_str()])
        .collect();
    let label_pos = positions.get(schema.label.as_str()).copied();
    if let Some(pos) = label_pos {
        header.push(schema.label.clone());
        sources.push(pos);
    }

    let mut table = RawTable::new(header);
    for (row_idx, record) in rdr.records().enumerate() {
        let record = record?;
        if record.len() != file_header.len() {
            return Err(DataError::MalformedRow {
                row: row_idx,
                expected: file_header.len(),
                found: record.len(),
            });
        }
        let mut row = Vec::with_capacity(sources.len());
        for (col_idx, &src) in sources.iter().enumerate() {
            let raw = record[src].trim();
            let cell = if raw.is_empty() {
                Cell::Missing
            } else if col_idx == schema.columns.len() {
                match raw {
                    "0" => Cell::Number(0.0),
                    "1" => Cell::Number(1.0),
                    other => {
                        return Err(DataError::InvalidLabel {
                            row: row_idx,
                            value: other.to_string(),
                        })
                    }
                }
            } else if schema.columns[col_idx].is_numeric() {
                match raw.parse::<f64>() {
                    Ok(v) if v.is_finite() => Cell::Number(v),
                    _ => Cell::Missing,
                }
            } else {
                Cell::Text(raw.to_string())
            };
            row.push(cell);
        }
        table.rows.push(row);
    }
    Ok(table)
}

/// Keeps only rows without any missing cell, preserving order.
pub fn filter_complete(table: &RawTable) -> RawTable {
    RawTable {
        header: table.header.clone(),
        rows: table
            .rows
            .iter()
            .filter(|row| !row.iter().any(Cell::is_missing))
            .cloned()
            .collect(),
    }
}
