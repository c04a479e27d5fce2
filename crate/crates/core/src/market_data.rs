//! OHLCV bar ingestion, validation, export and resampling.
//!
//! Bars are validated on construction so every [`OhlcvSeries`] handed to the
//! rest of the pipeline already satisfies the price/volume invariants.
//! Timestamps are exchange-local wall-clock times with minute precision.

use std::collections::HashMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use chrono::{NaiveDateTime, TimeDelta, Timelike};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Format used when exporting timestamps.
pub const TIMESTAMP_FORMAT: &str = "%Y-%m-%dT%H:%M";

const ACCEPTED_FORMATS: &[&str] = &[
    "%Y-%m-%dT%H:%M",
    "%Y-%m-%dT%H:%M:%S",
    "%Y-%m-%d %H:%M",
    "%Y-%m-%d %H:%M:%S",
];

#[derive(Debug, Error)]
pub enum MarketDataError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("line {line}: cannot parse {field}: `{value}`")]
    UnparseableRow {
        line: u64,
        field: &'static str,
        value: String,
    },
    #[error("line {line}: invariant violated: {rule}")]
    InvariantViolation { line: u64, rule: &'static str },
    #[error("target interval {target} min is not a positive multiple of source interval {source_interval} min")]
    IncompatibleInterval { source_interval: i64, target: i64 },
    #[error("series is empty")]
    EmptySeries,
}

/// One OHLCV record.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bar {
    pub timestamp: NaiveDateTime,
    pub open: f64,
    pub high: f64,
    pub low: f64,
    pub close: f64,
    pub volume: u64,
}

impl Bar {
    /// Returns the first violated rule, if any.
    pub fn violation(&self) -> Option<&'static str> {
        let prices = [self.open, self.high, self.low, self.close];
        if prices.iter().any(|p| !p.is_finite()) {
            return Some("prices must be finite");
        }
        if self.low > self.high {
            return Some("low <= high");
        }
        if self.open < self.low || self.open > self.high {
            return Some("low <= open <= high");
        }
        if self.close < self.low || self.close > self.high {
            return Some("low <= close <= high");
        }
        None
    }
}

/// Ordered bars at a fixed nominal interval.
#[derive(Debug, Clone, PartialEq)]
pub struct OhlcvSeries {
    bars: Vec<Bar>,
    interval: TimeDelta,
}

impl OhlcvSeries {
    /// Builds a series, checking bar invariants and strict timestamp ordering.
    /// Errors carry the 1-based position of the first offending bar.
    pub fn new(bars: Vec<Bar>, interval: TimeDelta) -> Result<Self, MarketDataError> {
        for (i, bar) in bars.iter().enumerate() {
            let line = i as u64 + 1;
            if let Some(rule) = bar.violation() {
                return Err(MarketDataError::InvariantViolation { line, rule });
            }
            if i > 0 && bars[i - 1].timestamp >= bar.timestamp {
                return Err(MarketDataError::InvariantViolation {
                    line,
                    rule: "timestamps strictly increasing",
                });
            }
        }
        Ok(Self { bars, interval })
    }

    pub fn bars(&self) -> &[Bar] {
        &self.bars
    }

    pub fn interval(&self) -> TimeDelta {
        self.interval
    }

    pub fn len(&self) -> usize {
        self.bars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bars.is_empty()
    }

    pub fn closes(&self) -> Vec<f64> {
        self.bars.iter().map(|b| b.close).collect()
    }

    pub fn total_volume(&self) -> u64 {
        self.bars.iter().map(|b| b.volume).sum()
    }
}

/// Maps the logical OHLCV fields onto vendor-specific CSV header names.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct CsvSchema {
    pub timestamp: String,
    pub open: String,
    pub high: String,
    pub low: String,
    pub close: String,
    pub volume: String,
    /// Source bar interval in minutes. Inferred from the smallest timestamp
    /// gap when absent; series with fewer than two bars then default to one
    /// minute.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub interval_minutes: Option<i64>,
}

impl Default for CsvSchema {
    fn default() -> Self {
        Self {
            timestamp: "timestamp".into(),
            open: "open".into(),
            high: "high".into(),
            low: "low".into(),
            close: "close".into(),
            volume: "volume".into(),
            interval_minutes: None,
        }
    }
}

pub fn parse_timestamp(raw: &str) -> Option<NaiveDateTime> {
    let raw = raw.trim();
    ACCEPTED_FORMATS
        .iter()
        .find_map(|fmt| NaiveDateTime::parse_from_str(raw, fmt).ok())
        .map(|ts| ts.with_second(0).unwrap_or(ts))
}

fn parse_volume(raw: &str) -> Option<u64> {
    let raw = raw.trim();
    if let Ok(v) = raw.parse::<u64>() {
        return Some(v);
    }
    // some exports write volume as "2000.0"
    let v = raw.parse::<f64>().ok()?;
    (v >= 0.0 && v.fract() == 0.0 && v <= u64::MAX as f64).then_some(v as u64)
}

/// Reads an OHLCV CSV file.
pub fn parse_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<OhlcvSeries, MarketDataError> {
    parse_csv_reader(File::open(path)?, schema)
}

/// Reads OHLCV rows from any reader. Line numbers in errors count the header
/// as line 1.
pub fn parse_csv_reader<R: Read>(reader: R, schema: &CsvSchema) -> Result<OhlcvSeries, MarketDataError> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .has_headers(true)
        .from_reader(reader);

    let headers = rdr.headers()?.clone();
    // a zero-byte file has no header at all
    if headers.is_empty() {
        return Ok(OhlcvSeries {
            bars: Vec::new(),
            interval: default_interval(schema),
        });
    }
    let lookup: HashMap<&str, usize> = headers.iter().enumerate().map(|(i, h)| (h, i)).collect();
    let col = |name: &str| {
        lookup
            .get(name)
            .copied()
            .ok_or_else(|| MarketDataError::MissingColumn(name.to_string()))
    };
    let idx = [
        col(&schema.timestamp)?,
        col(&schema.open)?,
        col(&schema.high)?,
        col(&schema.low)?,
        col(&schema.close)?,
        col(&schema.volume)?,
    ];

    let mut bars: Vec<Bar> = Vec::new();
    for (row, record) in rdr.records().enumerate() {
        let line = row as u64 + 2;
        let record = record?;
        let field = |i: usize| record.get(idx[i]).unwrap_or("");
        let price = |i: usize, name: &'static str| {
            field(i)
                .parse::<f64>()
                .map_err(|_| MarketDataError::UnparseableRow {
                    line,
                    field: name,
                    value: field(i).to_string(),
                })
        };
        let timestamp = parse_timestamp(field(0)).ok_or_else(|| MarketDataError::UnparseableRow {
            line,
            field: "timestamp",
            value: field(0).to_string(),
        })?;
        let bar = Bar {
            timestamp,
            open: price(1, "open")?,
            high: price(2, "high")?,
            low: price(3, "low")?,
            close: price(4, "close")?,
            volume: parse_volume(field(5)).ok_or_else(|| MarketDataError::UnparseableRow {
                line,
                field: "volume",
                value: field(5).to_string(),
            })?,
        };
        if let Some(rule) = bar.violation() {
            return Err(MarketDataError::InvariantViolation { line, rule });
        }
        if let Some(prev) = bars.last() {
            if prev.timestamp >= bar.timestamp {
                return Err(MarketDataError::InvariantViolation {
                    line,
                    rule: "timestamps strictly increasing",
                });
            }
        }
        bars.push(bar);
    }

    let interval = match schema.interval_minutes {
        Some(m) => TimeDelta::minutes(m),
        None => bars
            .windows(2)
            .map(|w| w[1].timestamp - w[0].timestamp)
            .min()
            .unwrap_or_else(|| default_interval(schema)),
    };
    Ok(OhlcvSeries { bars, interval })
}

fn default_interval(schema: &CsvSchema) -> TimeDelta {
    TimeDelta::minutes(schema.interval_minutes.unwrap_or(1))
}

/// Writes the series in the canonical CSV dialect (default schema names).
pub fn write_csv<W: Write>(series: &OhlcvSeries, writer: W) -> Result<(), MarketDataError> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(["timestamp", "open", "high", "low", "close", "volume"])?;
    for bar in series.bars() {
        wtr.write_record([
            bar.timestamp.format(TIMESTAMP_FORMAT).to_string(),
            bar.open.to_string(),
            bar.high.to_string(),
            bar.low.to_string(),
            bar.close.to_string(),
            bar.volume.to_string(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn export_csv(series: &OhlcvSeries, path: impl AsRef<Path>) -> Result<(), MarketDataError> {
    write_csv(series, File::create(path)?)
}

/// Aggregates bars into `target`-sized buckets aligned to wall-clock
/// boundaries (minute 00 for hourly buckets). Empty buckets are omitted and
/// partial buckets keep whatever bars they contain.
///
/// Resampling to the series' own interval returns the series unchanged.
pub fn resample(series: &OhlcvSeries, target: TimeDelta) -> Result<OhlcvSeries, MarketDataError> {
    let source = series.interval().num_minutes();
    let target_min = target.num_minutes();
    if source <= 0 || target_min <= 0 || target_min % source != 0 {
        return Err(MarketDataError::IncompatibleInterval {
            source_interval: source,
            target: target_min,
        });
    }
    if series.is_empty() {
        return Err(MarketDataError::EmptySeries);
    }
    if target_min == source {
        return Ok(series.clone());
    }

    let bucket_of = |ts: NaiveDateTime| {
        let minutes = ts.and_utc().timestamp().div_euclid(60);
        minutes - minutes.rem_euclid(target_min)
    };

    let mut out: Vec<Bar> = Vec::with_capacity(series.len() / (target_min / source) as usize + 1);
    let mut current: Option<(i64, Bar)> = None;
    for bar in series.bars() {
        let bucket = bucket_of(bar.timestamp);
        match current.as_mut() {
            Some((b, agg)) if *b == bucket => {
                agg.high = agg.high.max(bar.high);
                agg.low = agg.low.min(bar.low);
                agg.close = bar.close;
                agg.volume += bar.volume;
            }
            _ => {
                if let Some((_, agg)) = current.take() {
                    out.push(agg);
                }
                let start = chrono::DateTime::from_timestamp(bucket * 60, 0)
                    .expect("bucket start within chrono range")
                    .naive_utc();
                current = Some((bucket, Bar { timestamp: start, ..*bar }));
            }
        }
    }
    if let Some((_, agg)) = current {
        out.push(agg);
    }
    OhlcvSeries::new(out, target)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ts(s: &str) -> NaiveDateTime {
        parse_timestamp(s).unwrap()
    }

    fn bar(t: &str, o: f64, h: f64, l: f64, c: f64, v: u64) -> Bar {
        Bar { timestamp: ts(t), open: o, high: h, low: l, close: c, volume: v }
    }

    #[test]
    fn parses_single_row() {
        let csv = "timestamp,open,high,low,close,volume\n2015-01-01T09:15, 100, 101, 99, 100.5, 2000\n";
        let s = parse_csv_reader(csv.as_bytes(), &CsvSchema::default()).unwrap();
        assert_eq!(s.bars(), &[bar("2015-01-01T09:15", 100.0, 101.0, 99.0, 100.5, 2000)]);
    }

    #[test]
    fn rejects_inverted_high_low() {
        let csv = "timestamp,open,high,low,close,volume\n2015-01-01T09:15,100,99,101,100,1\n";
        match parse_csv_reader(csv.as_bytes(), &CsvSchema::default()) {
            Err(MarketDataError::InvariantViolation { line: 2, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn empty_file_gives_empty_series() {
        let s = parse_csv_reader("".as_bytes(), &CsvSchema::default()).unwrap();
        assert!(s.is_empty());
        let s = parse_csv_reader("timestamp,open,high,low,close,volume\n".as_bytes(), &CsvSchema::default()).unwrap();
        assert!(s.is_empty());
    }

    #[test]
    fn missing_and_unparseable() {
        let csv = "timestamp,open,high,low,close\n";
        assert!(matches!(
            parse_csv_reader(csv.as_bytes(), &CsvSchema::default()),
            Err(MarketDataError::MissingColumn(c)) if c == "volume"
        ));
        let csv = "timestamp,open,high,low,close,volume\n2015-01-01T09:15,1,1,1,1,1\n2015-01-01T09:20,abc,1,1,1,1\n";
        assert!(matches!(
            parse_csv_reader(csv.as_bytes(), &CsvSchema::default()),
            Err(MarketDataError::UnparseableRow { line: 3, field: "open", .. })
        ));
    }

    #[test]
    fn custom_schema_and_interval_inference() {
        let csv = "Date,Open,High,Low,Close,Adj Close,Volume\n\
                   2015-01-01 09:15:00,1,2,0.5,1.5,1.5,10\n\
                   2015-01-01 09:20:00,1.5,2,1,1,1,20.0\n";
        let schema = CsvSchema {
            timestamp: "Date".into(),
            open: "Open".into(),
            high: "High".into(),
            low: "Low".into(),
            close: "Close".into(),
            volume: "Volume".into(),
            interval_minutes: None,
        };
        let s = parse_csv_reader(csv.as_bytes(), &schema).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s.interval(), TimeDelta::minutes(5));
        assert_eq!(s.bars()[1].volume, 20);
    }

    #[test]
    fn non_increasing_timestamps_rejected() {
        let csv = "timestamp,open,high,low,close,volume\n2015-01-01T09:15,1,1,1,1,1\n2015-01-01T09:15,1,1,1,1,1\n";
        assert!(matches!(
            parse_csv_reader(csv.as_bytes(), &CsvSchema::default()),
            Err(MarketDataError::InvariantViolation { line: 3, .. })
        ));
    }

    #[test]
    fn export_then_parse_round_trips() {
        let s = OhlcvSeries::new(
            vec![bar("2015-01-01T09:15", 10.0, 12.0, 9.0, 11.0, 5), bar("2015-01-01T09:20", 11.0, 13.0, 10.0, 12.25, 7)],
            TimeDelta::minutes(5),
        )
        .unwrap();
        let mut buf = Vec::new();
        write_csv(&s, &mut buf).unwrap();
        let back = parse_csv_reader(buf.as_slice(), &CsvSchema::default()).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn resample_aggregates_one_hour() {
        let s = OhlcvSeries::new(
            vec![bar("2015-01-01T09:15", 10.0, 12.0, 9.0, 11.0, 5), bar("2015-01-01T09:20", 11.0, 13.0, 10.0, 12.0, 7)],
            TimeDelta::minutes(5),
        )
        .unwrap();
        let h = resample(&s, TimeDelta::hours(1)).unwrap();
        assert_eq!(h.bars(), &[bar("2015-01-01T09:00", 10.0, 13.0, 9.0, 12.0, 12)]);
        assert_eq!(h.interval(), TimeDelta::hours(1));
    }

    #[test]
    fn single_bar_bucket_is_identity_at_bucket_start() {
        let s = OhlcvSeries::new(vec![bar("2015-01-01T10:00", 1.0, 2.0, 0.5, 1.5, 3)], TimeDelta::minutes(5)).unwrap();
        let h = resample(&s, TimeDelta::hours(1)).unwrap();
        assert_eq!(h.bars(), s.bars());
    }

    #[test]
    fn twelve_five_minute_bars_make_one_hour() {
        let start = ts("2015-01-01T10:00");
        let bars = (0..12)
            .map(|i| Bar { timestamp: start + TimeDelta::minutes(5 * i), open: 1.0, high: 2.0, low: 0.5, close: 1.0, volume: 1 })
            .collect();
        let s = OhlcvSeries::new(bars, TimeDelta::minutes(5)).unwrap();
        let h = resample(&s, TimeDelta::hours(1)).unwrap();
        assert_eq!(h.len(), 1);
        assert_eq!(h.bars()[0].volume, 12);
    }

    #[test]
    fn resample_errors() {
        let s = OhlcvSeries::new(vec![bar("2015-01-01T10:00", 1.0, 2.0, 0.5, 1.5, 3)], TimeDelta::minutes(5)).unwrap();
        assert!(matches!(resample(&s, TimeDelta::minutes(7)), Err(MarketDataError::IncompatibleInterval { .. })));
        let empty = OhlcvSeries::new(vec![], TimeDelta::minutes(5)).unwrap();
        assert!(matches!(resample(&empty, TimeDelta::hours(1)), Err(MarketDataError::EmptySeries)));
    }

    #[test]
    fn gaps_drop_buckets() {
        let s = OhlcvSeries::new(
            vec![bar("2015-01-01T10:00", 1.0, 2.0, 0.5, 1.5, 3), bar("2015-01-01T13:05", 1.0, 2.0, 0.5, 1.5, 4)],
            TimeDelta::minutes(5),
        )
        .unwrap();
        let h = resample(&s, TimeDelta::hours(1)).unwrap();
        assert_eq!(h.len(), 2);
        assert_eq!(h.bars()[1].timestamp, ts("2015-01-01T13:00"));
    }

    fn arb_series() -> impl Strategy<Value = OhlcvSeries> {
        let bar = (1.0f64..100.0, 0.0f64..1.0, 0.0f64..1.0, 0.0f64..5.0, 0.0f64..5.0, 0u64..10_000, 1i64..3);
        (0i64..12, prop::collection::vec(bar, 1..200)).prop_map(|(offset, raw)| {
            let mut t = ts("2015-01-01T09:00") + TimeDelta::minutes(5 * offset);
            let bars = raw
                .into_iter()
                .map(|(base, a, b, up, down, volume, step)| {
                    let (open, close) = (base + a, base + b);
                    let bar = Bar {
                        timestamp: t,
                        open,
                        close,
                        high: open.max(close) + up,
                        low: open.min(close) - down,
                        volume,
                    };
                    t += TimeDelta::minutes(5 * step);
                    bar
                })
                .collect();
            OhlcvSeries::new(bars, TimeDelta::minutes(5)).unwrap()
        })
    }

    proptest! {
        #[test]
        fn resample_preserves_invariants_and_volume(s in arb_series()) {
            let h = resample(&s, TimeDelta::hours(1)).unwrap();
            prop_assert!(h.bars().iter().all(|b| b.violation().is_none()));
            prop_assert_eq!(h.total_volume(), s.total_volume());
            prop_assert_eq!(resample(&s, s.interval()).unwrap(), s);
        }

        #[test]
        fn contiguous_aligned_input_bounds_bucket_count(n in 1usize..300) {
            let start = ts("2015-01-01T09:00");
            let bars = (0..n)
                .map(|i| Bar { timestamp: start + TimeDelta::minutes(5 * i as i64), open: 1.0, high: 1.0, low: 1.0, close: 1.0, volume: 1 })
                .collect();
            let s = OhlcvSeries::new(bars, TimeDelta::minutes(5)).unwrap();
            let h = resample(&s, TimeDelta::hours(1)).unwrap();
            prop_assert!(h.len() <= n.div_ceil(12));
        }
    }
}
