//! Min-max scaling, sliding-window pairs and chronological splits.
//!
//! A window pair `n` uses frame rows `n .. n + W` as input and row `n + W`
//! as its target, so a frame of `T` rows yields `T - W` pairs. Splits are
//! contiguous ranges of pair indices; nothing is ever shuffled.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::ops::Range;
use std::path::Path;

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::frame::{FeatureFrame, FrameError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("column `{0}` is constant over the fit range")]
    ConstantColumn(String),
    #[error("fit range {0:?} is empty or out of bounds")]
    BadFitRange(Range<usize>),
    #[error("frame columns do not match the scaler: {0}")]
    ColumnMismatch(String),
    #[error("series too short: need at least {needed} rows, got {got}")]
    SeriesTooShort { needed: usize, got: usize },
    #[error("split fractions {0:?} must be non-negative and sum to 1")]
    InvalidFractions([f64; 3]),
    #[error("split would leave the {0} segment empty")]
    EmptySplit(&'static str),
    #[error("dataset file: {0}")]
    Format(String),
    #[error(transparent)]
    Frame(#[from] FrameError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnRange {
    pub name: String,
    pub min: f64,
    pub max: f64,
}

/// Per-column min/max recorded over a fit range.
#[derive(Debug, Clone, PartialEq)]
pub struct Scaler {
    pub columns: Vec<ColumnRange>,
    pub fit_rows: Range<usize>,
}

pub fn fit_scaler(frame: &FeatureFrame, fit_range: Range<usize>) -> Result<Scaler, PipelineError> {
    if fit_range.is_empty() || fit_range.end > frame.rows() {
        return Err(PipelineError::BadFitRange(fit_range));
    }
    let columns = frame
        .columns()
        .map(|(name, values)| {
            let slice = &values[fit_range.clone()];
            let min = slice.iter().copied().fold(f64::INFINITY, f64::min);
            let max = slice.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if max <= min {
                return Err(PipelineError::ConstantColumn(name.to_string()));
            }
            Ok(ColumnRange { name: name.to_string(), min, max })
        })
        .collect::<Result<_, _>>()?;
    Ok(Scaler { columns, fit_rows: fit_range })
}

impl Scaler {
    pub fn range(&self, column: &str) -> Result<&ColumnRange, PipelineError> {
        self.columns
            .iter()
            .find(|c| c.name == column)
            .ok_or_else(|| PipelineError::ColumnMismatch(format!("no scaler entry for `{column}`")))
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), PipelineError> {
        let mut w = BufWriter::new(writer);
        writeln!(w, "column,min,max,fit_start,fit_end")?;
        for c in &self.columns {
            writeln!(w, "{},{},{},{},{}", c.name, c.min, c.max, self.fit_rows.start, self.fit_rows.end)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self, PipelineError> {
        let mut text = String::new();
        BufReader::new(reader).read_to_string(&mut text)?;
        let mut columns = Vec::new();
        let mut fit_rows = 0..0;
        for (i, line) in text.lines().enumerate().skip(1) {
            let parts: Vec<&str> = line.split(',').collect();
            let bad = || PipelineError::Format(format!("scaler line {}: `{line}`", i + 1));
            if parts.len() != 5 {
                return Err(bad());
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| bad());
            let idx = |s: &str| s.parse::<usize>().map_err(|_| bad());
            columns.push(ColumnRange { name: parts[0].to_string(), min: num(parts[1])?, max: num(parts[2])? });
            fit_rows = idx(parts[3])?..idx(parts[4])?;
        }
        Ok(Self { columns, fit_rows })
    }
}

/// `x' = (x - min) / (max - min)`; out-of-range values are not clipped.
pub fn transform(frame: &FeatureFrame, scaler: &Scaler) -> Result<FeatureFrame, PipelineError> {
    map_columns(frame, scaler, |x, r| (x - r.min) / (r.max - r.min))
}

pub fn inverse_transform(frame: &FeatureFrame, scaler: &Scaler) -> Result<FeatureFrame, PipelineError> {
    map_columns(frame, scaler, |x, r| x * (r.max - r.min) + r.min)
}

/// Inverse-scales raw values belonging to one named column.
pub fn inverse_transform_values(values: &[f64], scaler: &Scaler, column: &str) -> Result<Vec<f64>, PipelineError> {
    let r = scaler.range(column)?;
    Ok(values.iter().map(|x| x * (r.max - r.min) + r.min).collect())
}

fn map_columns(frame: &FeatureFrame, scaler: &Scaler, f: impl Fn(f64, &ColumnRange) -> f64) -> Result<FeatureFrame, PipelineError> {
    let names: Vec<&str> = scaler.columns.iter().map(|c| c.name.as_str()).collect();
    if frame.names().iter().map(String::as_str).ne(names.iter().copied()) {
        return Err(PipelineError::ColumnMismatch(format!("frame has {:?}, scaler has {:?}", frame.names(), names)));
    }
    let columns = frame
        .columns()
        .zip(&scaler.columns)
        .map(|((name, values), r)| (name.to_string(), values.iter().map(|&x| f(x, r)).collect()))
        .collect();
    Ok(FeatureFrame::new(frame.index().to_vec(), columns)?)
}

/// Pair-index ranges of the three segments.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitBounds {
    pub train: Range<usize>,
    pub val: Range<usize>,
    pub test: Range<usize>,
}

/// Chronological order of the two held-out segments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SplitOrder {
    #[default]
    TrainValTest,
    TrainTestVal,
}

/// Segment sizes for `n` pairs under `(train, val, test)` fractions.
///
/// Largest-remainder apportionment: each segment gets `floor(f * n)`, then
/// the leftover pairs go one each to the segments with the largest
/// fractional parts, ties resolved toward the later segment.
pub fn split_counts(n: usize, fractions: [f64; 3]) -> Result<[usize; 3], PipelineError> {
    let sum: f64 = fractions.iter().sum();
    if fractions.iter().any(|f| !f.is_finite() || *f < 0.0) || (sum - 1.0).abs() > 1e-9 {
        return Err(PipelineError::InvalidFractions(fractions));
    }
    let exact = fractions.map(|f| f * n as f64);
    let mut counts = exact.map(|e| e.floor() as usize);
    let leftover = n - counts.iter().sum::<usize>().min(n);
    let mut order = [0usize, 1, 2];
    // remainders quantized so 0.15 * 10 and 0.15 * 10 tie exactly
    order.sort_by_key(|&seg| std::cmp::Reverse((((exact[seg] - exact[seg].floor()) * 1e9).round() as i64, seg)));
    for &seg in order.iter().take(leftover) {
        counts[seg] += 1;
    }
    for (count, name) in counts.iter().zip(["train", "validation", "test"]) {
        if *count == 0 {
            return Err(PipelineError::EmptySplit(name));
        }
    }
    Ok(counts)
}

pub fn split_bounds(n: usize, fractions: [f64; 3], order: SplitOrder) -> Result<SplitBounds, PipelineError> {
    let [train, val, test] = split_counts(n, fractions)?;
    let train_r = 0..train;
    Ok(match order {
        SplitOrder::TrainValTest => SplitBounds { train: train_r, val: train..train + val, test: train + val..n },
        SplitOrder::TrainTestVal => SplitBounds { train: train_r, test: train..train + test, val: train + test..n },
    })
}

/// Sliding-window input/target pairs over a (normalized) frame.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowedDataset {
    names: Vec<String>,
    index: Vec<NaiveDateTime>,
    /// Row-major `T × F`.
    data: Vec<f64>,
    window: usize,
    target_column: usize,
    splits: Option<SplitBounds>,
}

pub fn make_windows(frame: &FeatureFrame, window: usize, target_column: &str) -> Result<WindowedDataset, PipelineError> {
    let target = frame
        .position(target_column)
        .ok_or_else(|| PipelineError::ColumnMismatch(format!("no target column `{target_column}`")))?;
    if window == 0 || frame.rows() < window + 1 {
        return Err(PipelineError::SeriesTooShort { needed: window.max(1) + 1, got: frame.rows() });
    }
    Ok(WindowedDataset {
        names: frame.names().to_vec(),
        index: frame.index().to_vec(),
        data: frame.to_row_major(),
        window,
        target_column: target,
        splits: None,
    })
}

/// Attaches chronological split bounds.
pub fn split(dataset: WindowedDataset, fractions: [f64; 3], order: SplitOrder) -> Result<WindowedDataset, PipelineError> {
    let bounds = split_bounds(dataset.len(), fractions, order)?;
    Ok(WindowedDataset { splits: Some(bounds), ..dataset })
}

impl WindowedDataset {
    /// Number of pairs, `T - W`.
    pub fn len(&self) -> usize {
        self.index.len() - self.window
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn window_size(&self) -> usize {
        self.window
    }

    pub fn features(&self) -> usize {
        self.names.len()
    }

    pub fn rows(&self) -> usize {
        self.index.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn target_name(&self) -> &str {
        &self.names[self.target_column]
    }

    pub fn splits(&self) -> Option<&SplitBounds> {
        self.splits.as_ref()
    }

    /// Row-major `W × F` input for pair `n`.
    pub fn input(&self, n: usize) -> &[f64] {
        let f = self.features();
        &self.data[n * f..(n + self.window) * f]
    }

    pub fn target(&self, n: usize) -> f64 {
        self.data[(n + self.window) * self.features() + self.target_column]
    }

    pub fn targets(&self, pairs: Range<usize>) -> Vec<f64> {
        pairs.map(|n| self.target(n)).collect()
    }

    pub fn input_rows(&self, n: usize) -> Range<usize> {
        n..n + self.window
    }

    pub fn target_row(&self, n: usize) -> usize {
        n + self.window
    }

    pub fn target_timestamp(&self, n: usize) -> NaiveDateTime {
        self.index[self.target_row(n)]
    }

    const MAGIC: &'static [u8; 8] = b"FCWINDS1";

    /// Binary layout, little-endian: magic, then `u64` W, F, T, target
    /// column, split flag and six split bounds, then column names as
    /// (`u32` length, UTF-8 bytes), then T row timestamps as `i64` unix
    /// seconds, then the `T × F` row-major `f64` data.
    pub fn write_to<W: Write>(&self, writer: W) -> Result<(), PipelineError> {
        let mut w = BufWriter::new(writer);
        w.write_all(Self::MAGIC)?;
        let s = self.splits.clone().unwrap_or(SplitBounds { train: 0..0, val: 0..0, test: 0..0 });
        let header = [
            self.window,
            self.features(),
            self.rows(),
            self.target_column,
            self.splits.is_some() as usize,
            s.train.start,
            s.train.end,
            s.val.start,
            s.val.end,
            s.test.start,
            s.test.end,
        ];
        for v in header {
            w.write_all(&(v as u64).to_le_bytes())?;
        }
        for name in &self.names {
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
        }
        for ts in &self.index {
            w.write_all(&ts.and_utc().timestamp().to_le_bytes())?;
        }
        for v in &self.data {
            w.write_all(&v.to_le_bytes())?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(reader: R) -> Result<Self, PipelineError> {
        let mut r = BufReader::new(reader);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != Self::MAGIC {
            return Err(PipelineError::Format("bad magic".into()));
        }
        let mut header = [0usize; 11];
        for h in header.iter_mut() {
            *h = read_u64(&mut r)? as usize;
        }
        let [window, features, rows, target_column, has_split, a, b, c, d, e, f] = header;
        let mut names = Vec::with_capacity(features);
        for _ in 0..features {
            let mut len = [0u8; 4];
            r.read_exact(&mut len)?;
            let mut buf = vec![0u8; u32::from_le_bytes(len) as usize];
            r.read_exact(&mut buf)?;
            names.push(String::from_utf8(buf).map_err(|_| PipelineError::Format("column name not UTF-8".into()))?);
        }
        let mut index = Vec::with_capacity(rows);
        for _ in 0..rows {
            let secs = read_u64(&mut r)? as i64;
            let ts = chrono::DateTime::from_timestamp(secs, 0).ok_or_else(|| PipelineError::Format("timestamp out of range".into()))?;
            index.push(ts.naive_utc());
        }
        let mut data = Vec::with_capacity(rows * features);
        for _ in 0..rows * features {
            data.push(f64::from_bits(read_u64(&mut r)?));
        }
        if target_column >= features || rows <= window {
            return Err(PipelineError::Format("inconsistent header".into()));
        }
        let splits = (has_split == 1).then_some(SplitBounds { train: a..b, val: c..d, test: e..f });
        Ok(Self { names, index, data, window, target_column, splits })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), PipelineError> {
        self.write_to(File::create(path)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, PipelineError> {
        Self::read_from(File::open(path)?)
    }
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64, PipelineError> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

/// Which rows the scaler is fitted on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScalerFit {
    /// Rows touched by training pairs (inputs and targets).
    #[default]
    Train,
    /// Every row; leaks held-out extrema into the scaling.
    Full,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetConfig {
    pub window: usize,
    pub fractions: [f64; 3],
    pub split_order: SplitOrder,
    pub scaler_fit: ScalerFit,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self { window: 24, fractions: [0.70, 0.15, 0.15], split_order: SplitOrder::TrainValTest, scaler_fit: ScalerFit::Train }
    }
}

/// Splits, fits the scaler on the chosen rows, normalizes and windows.
pub fn prepare(frame: &FeatureFrame, target: &str, config: &DatasetConfig) -> Result<(WindowedDataset, Scaler), PipelineError> {
    let w = config.window;
    if w == 0 || frame.rows() < w + 1 {
        return Err(PipelineError::SeriesTooShort { needed: w.max(1) + 1, got: frame.rows() });
    }
    let bounds = split_bounds(frame.rows() - w, config.fractions, config.split_order)?;
    let fit_rows = match config.scaler_fit {
        // last training pair's target row is train.end - 1 + w
        ScalerFit::Train => 0..bounds.train.end + w,
        ScalerFit::Full => 0..frame.rows(),
    };
    let scaler = fit_scaler(frame, fit_rows)?;
    let normalized = transform(frame, &scaler)?;
    let dataset = make_windows(&normalized, w, target)?;
    Ok((WindowedDataset { splits: Some(bounds), ..dataset }, scaler))
}
