//! Rectangular, fully-defined feature columns over a shared time index.

use std::fs::File;
use std::io::{Read, Write};
use std::ops::Range;
use std::path::Path;

use chrono::NaiveDateTime;
use thiserror::Error;

use crate::market_data::{parse_timestamp, TIMESTAMP_FORMAT};

#[derive(Debug, Error)]
pub enum FrameError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("column `{name}` has {got} rows, index has {expected}")]
    LengthMismatch { name: String, expected: usize, got: usize },
    #[error("duplicate column `{0}`")]
    DuplicateColumn(String),
    #[error("unknown column `{0}`")]
    MissingColumn(String),
    #[error("column `{name}` row {row}: value is not finite")]
    NonFinite { name: String, row: usize },
    #[error("line {line}: cannot parse `{value}`")]
    Unparseable { line: u64, value: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureFrame {
    index: Vec<NaiveDateTime>,
    names: Vec<String>,
    columns: Vec<Vec<f64>>,
}

impl FeatureFrame {
    pub fn new(index: Vec<NaiveDateTime>, columns: Vec<(String, Vec<f64>)>) -> Result<Self, FrameError> {
        let mut names: Vec<String> = Vec::with_capacity(columns.len());
        let mut data = Vec::with_capacity(columns.len());
        for (name, values) in columns {
            if names.contains(&name) {
                return Err(FrameError::DuplicateColumn(name));
            }
            if values.len() != index.len() {
                return Err(FrameError::LengthMismatch { name, expected: index.len(), got: values.len() });
            }
            if let Some(row) = values.iter().position(|v| !v.is_finite()) {
                return Err(FrameError::NonFinite { name, row });
            }
            names.push(name);
            data.push(values);
        }
        Ok(Self { index, names, columns: data })
    }

    pub fn index(&self) -> &[NaiveDateTime] {
        &self.index
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn rows(&self) -> usize {
        self.index.len()
    }

    pub fn width(&self) -> usize {
        self.names.len()
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.position(name).map(|i| self.columns[i].as_slice())
    }

    pub fn column_at(&self, i: usize) -> &[f64] {
        &self.columns[i]
    }

    pub fn columns(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.names.iter().map(String::as_str).zip(self.columns.iter().map(Vec::as_slice))
    }

    /// Projects onto `names`, in that order.
    pub fn select(&self, names: &[impl AsRef<str>]) -> Result<Self, FrameError> {
        let columns = names
            .iter()
            .map(|n| {
                let n = n.as_ref();
                self.column(n)
                    .map(|c| (n.to_string(), c.to_vec()))
                    .ok_or_else(|| FrameError::MissingColumn(n.to_string()))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(self.index.clone(), columns)
    }

    pub fn slice_rows(&self, rows: Range<usize>) -> Self {
        Self {
            index: self.index[rows.clone()].to_vec(),
            names: self.names.clone(),
            columns: self.columns.iter().map(|c| c[rows.clone()].to_vec()).collect(),
        }
    }

    /// Row-major copy: `rows × width`.
    pub fn to_row_major(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.rows() * self.width());
        for r in 0..self.rows() {
            out.extend(self.columns.iter().map(|c| c[r]));
        }
        out
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), FrameError> {
        let mut wtr = csv::Writer::from_writer(writer);
        let mut header = vec!["timestamp".to_string()];
        header.extend(self.names.iter().cloned());
        wtr.write_record(&header)?;
        for r in 0..self.rows() {
            let mut rec = vec![self.index[r].format(TIMESTAMP_FORMAT).to_string()];
            rec.extend(self.columns.iter().map(|c| c[r].to_string()));
            wtr.write_record(&rec)?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self, FrameError> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers()?.clone();
        let names: Vec<String> = headers.iter().skip(1).map(str::to_string).collect();
        let mut index = Vec::new();
        let mut columns = vec![Vec::new(); names.len()];
        for (row, rec) in rdr.records().enumerate() {
            let line = row as u64 + 2;
            let rec = rec?;
            let raw_ts = rec.get(0).unwrap_or("");
            index.push(parse_timestamp(raw_ts).ok_or_else(|| FrameError::Unparseable { line, value: raw_ts.into() })?);
            for (c, col) in columns.iter_mut().enumerate() {
                let raw = rec.get(c + 1).unwrap_or("");
                col.push(raw.parse::<f64>().map_err(|_| FrameError::Unparseable { line, value: raw.into() })?);
            }
        }
        Self::new(index, names.into_iter().zip(columns).collect())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), FrameError> {
        self.write_csv(File::create(path)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, FrameError> {
        Self::read_csv(File::open(path)?)
    }
}
