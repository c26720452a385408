//! Schema-driven CSV ingestion.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnType {
    Int,
    Float,
    Text,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub name: String,
    pub ty: ColumnType,
    /// Rows whose required fields are empty or unparseable are dropped.
    pub required: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CsvSchema {
    pub columns: Vec<ColumnSpec>,
}

impl CsvSchema {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn required(mut self, name: &str, ty: ColumnType) -> Self {
        self.columns.push(ColumnSpec {
            name: name.to_string(),
            ty,
            required: true,
        });
        self
    }

    pub fn optional(mut self, name: &str, ty: ColumnType) -> Self {
        self.columns.push(ColumnSpec {
            name: name.to_string(),
            ty,
            required: false,
        });
        self
    }
}

/// One typed column; `None` marks a missing value.
#[derive(Debug, Clone, PartialEq)]
pub enum Column {
    Int(Vec<Option<i64>>),
    Float(Vec<Option<f64>>),
    Text(Vec<Option<String>>),
}

impl Column {
    fn empty(ty: ColumnType) -> Self {
        match ty {
            ColumnType::Int => Column::Int(Vec::new()),
            ColumnType::Float => Column::Float(Vec::new()),
            ColumnType::Text => Column::Text(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Column::Int(v) => v.len(),
            Column::Float(v) => v.len(),
            Column::Text(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawTable {
    names: Vec<String>,
    columns: Vec<Column>,
    index: HashMap<String, usize>,
    /// Rows dropped because a required field was empty or unparseable.
    pub dropped_count: usize,
}

enum Parsed {
    Int(Option<i64>),
    Float(Option<f64>),
    Text(Option<String>),
}

fn parse_field(raw: Option<&str>, ty: ColumnType) -> std::result::Result<Parsed, ()> {
    let raw = raw.map(str::trim).filter(|s| !s.is_empty());
    Ok(match (ty, raw) {
        (ColumnType::Int, None) => Parsed::Int(None),
        (ColumnType::Float, None) => Parsed::Float(None),
        (ColumnType::Text, None) => Parsed::Text(None),
        (ColumnType::Int, Some(s)) => Parsed::Int(Some(s.parse().map_err(|_| ())?)),
        (ColumnType::Float, Some(s)) => {
            let v: f64 = s.parse().map_err(|_| ())?;
            if !v.is_finite() {
                return Err(());
            }
            Parsed::Float(Some(v))
        }
        (ColumnType::Text, Some(s)) => Parsed::Text(Some(s.to_string())),
    })
}

fn is_missing(p: &Parsed) -> bool {
    matches!(p, Parsed::Int(None) | Parsed::Float(None) | Parsed::Text(None))
}

impl RawTable {
    pub fn n_rows(&self) -> usize {
        self.columns.first().map_or(0, Column::len)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn column(&self, name: &str) -> Result<&Column> {
        self.index
            .get(name)
            .map(|&i| &self.columns[i])
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    }

    pub fn int(&self, name: &str) -> Result<&[Option<i64>]> {
        match self.column(name)? {
            Column::Int(v) => Ok(v),
            _ => Err(Error::invalid(format!("column `{name}` is not an integer column"))),
        }
    }

    pub fn float(&self, name: &str) -> Result<&[Option<f64>]> {
        match self.column(name)? {
            Column::Float(v) => Ok(v),
            _ => Err(Error::invalid(format!("column `{name}` is not a float column"))),
        }
    }

    pub fn text(&self, name: &str) -> Result<&[Option<String>]> {
        match self.column(name)? {
            Column::Text(v) => Ok(v),
            _ => Err(Error::invalid(format!("column `{name}` is not a text column"))),
        }
    }

    /// Parses CSV text already in memory. `source` names it in errors.
    pub fn from_reader<R: std::io::Read>(reader: R, schema: &CsvSchema, source: &Path) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
        let headers = rdr.headers()?.clone();
        if headers.is_empty() || (headers.len() == 1 && headers[0].trim().is_empty()) {
            return Err(Error::NoHeader {
                path: source.to_path_buf(),
            });
        }
        // Duplicate header names resolve to their first occurrence.
        let mut header_pos: HashMap<&str, usize> = HashMap::new();
        for (i, h) in headers.iter().enumerate() {
            header_pos.entry(h.trim()).or_insert(i);
        }
        let mut positions = Vec::with_capacity(schema.columns.len());
        for spec in &schema.columns {
            match header_pos.get(spec.name.as_str()) {
                Some(&p) => positions.push(Some(p)),
                None if spec.required => return Err(Error::MissingColumn(spec.name.clone())),
                None => positions.push(None),
            }
        }
        let mut columns: Vec<Column> = schema.columns.iter().map(|c| Column::empty(c.ty)).collect();
        let mut dropped = 0;
        let mut row = Vec::with_capacity(schema.columns.len());
        for record in rdr.records() {
            let record = match record {
                Ok(r) => r,
                Err(_) => {
                    dropped += 1;
                    continue;
                }
            };
            row.clear();
            let mut ok = true;
            for (spec, pos) in schema.columns.iter().zip(&positions) {
                let raw = pos.and_then(|p| record.get(p));
                match parse_field(raw, spec.ty) {
                    Ok(p) if spec.required && is_missing(&p) => {
                        ok = false;
                        break;
                    }
                    Ok(p) => row.push(p),
                    Err(()) if spec.required => {
                        ok = false;
                        break;
                    }
                    Err(()) => row.push(match spec.ty {
                        ColumnType::Int => Parsed::Int(None),
                        ColumnType::Float => Parsed::Float(None),
                        ColumnType::Text => Parsed::Text(None),
                    }),
                }
            }
            if !ok {
                dropped += 1;
                continue;
            }
            for (col, value) in columns.iter_mut().zip(row.drain(..)) {
                match (col, value) {
                    (Column::Int(v), Parsed::Int(x)) => v.push(x),
                    (Column::Float(v), Parsed::Float(x)) => v.push(x),
                    (Column::Text(v), Parsed::Text(x)) => v.push(x),
                    _ => unreachable!("parsed value matches its column type"),
                }
            }
        }
        let names: Vec<String> = schema.columns.iter().map(|c| c.name.clone()).collect();
        let index = names.iter().enumerate().map(|(i, n)| (n.clone(), i)).collect();
        if dropped > 0 {
            log::warn!("{}: dropped {dropped} malformed rows", source.display());
        }
        Ok(RawTable {
            names,
            columns,
            index,
            dropped_count: dropped,
        })
    }

    /// Keeps the rows at `idx`, in that order.
    pub fn select_rows(&self, idx: &[usize]) -> RawTable {
        let columns = self
            .columns
            .iter()
            .map(|c| match c {
                Column::Int(v) => Column::Int(idx.iter().map(|&i| v[i]).collect()),
                Column::Float(v) => Column::Float(idx.iter().map(|&i| v[i]).collect()),
                Column::Text(v) => Column::Text(idx.iter().map(|&i| v[i].clone()).collect()),
            })
            .collect();
        RawTable {
            names: self.names.clone(),
            columns,
            index: self.index.clone(),
            dropped_count: self.dropped_count,
        }
    }
}

/// Reads a CSV file, typing the columns named in `schema`; other columns are ignored.
pub fn load_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<RawTable> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    RawTable::from_reader(file, schema, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schema() -> CsvSchema {
        CsvSchema::new()
            .required("id", ColumnType::Int)
            .required("score", ColumnType::Float)
            .optional("note", ColumnType::Text)
    }

    fn read(text: &str) -> Result<RawTable> {
        RawTable::from_reader(text.as_bytes(), &schema(), Path::new("inline.csv"))
    }

    #[test]
    fn empty_input_has_no_header() {
        assert!(matches!(read(""), Err(Error::NoHeader { .. })));
    }

    #[test]
    fn malformed_rows_are_counted() {
        let t = read("id,score,note\n1,0.5,a\n2,x,b\n3,1.5,\n4,2.5,d\n").unwrap();
        assert_eq!(t.n_rows(), 3);
        assert_eq!(t.dropped_count, 1);
        assert_eq!(t.int("id").unwrap(), &[Some(1), Some(3), Some(4)]);
        assert_eq!(t.text("note").unwrap()[1], None);
    }

    #[test]
    fn missing_required_column_errors() {
        assert!(matches!(read("id,note\n1,a\n"), Err(Error::MissingColumn(c)) if c == "score"));
    }

    #[test]
    fn missing_optional_column_reads_as_missing() {
        let t = read("score,id\n0.5,7\n").unwrap();
        assert_eq!(t.text("note").unwrap(), &[None]);
        assert_eq!(t.float("score").unwrap(), &[Some(0.5)]);
    }

    #[test]
    fn missing_file_errors() {
        assert!(matches!(
            load_csv("/nonexistent/file.csv", &schema()),
            Err(Error::Io { .. })
        ));
    }
}
