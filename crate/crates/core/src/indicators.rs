//! Moving-average and band indicators over a close series, plus
//! correlation-based feature selection.
//!
//! Every indicator returns an [`IndicatorSeries`] aligned to its input:
//! indices inside the warm-up prefix are `None`, everything after is
//! defined. [`candidate_frame`] computes the full indicator set and trims
//! the warm-up rows frame-wide so the result is rectangular.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::frame::{FeatureFrame, FrameError};
use crate::market_data::OhlcvSeries;

/// Raw market columns, in canonical order.
pub const OHLCV_COLUMNS: [&str; 5] = ["open", "high", "low", "close", "volume"];

#[derive(Debug, Error)]
pub enum IndicatorError {
    #[error("period must be at least 1")]
    InvalidPeriod,
    #[error("series too short: need {needed} values, got {got}")]
    SeriesTooShort { needed: usize, got: usize },
    #[error("series lengths differ ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("correlation undefined: a series is constant")]
    DegenerateVariance,
    #[error("threshold {0} outside (0, 1]")]
    InvalidThreshold(f64),
    #[error("no candidate frames supplied")]
    NoFrames,
    #[error(transparent)]
    Frame(#[from] FrameError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct IndicatorSeries {
    pub name: String,
    pub values: Vec<Option<f64>>,
}

impl IndicatorSeries {
    fn with_warmup(name: impl Into<String>, len: usize, warmup: usize, defined: impl IntoIterator<Item = f64>) -> Self {
        let mut values = vec![None; warmup];
        values.extend(defined.into_iter().map(Some));
        debug_assert_eq!(values.len(), len);
        Self { name: name.into(), values }
    }

    /// Index of the first defined value.
    pub fn warmup(&self) -> usize {
        self.values.iter().position(Option::is_some).unwrap_or(self.values.len())
    }

    pub fn defined(&self) -> Vec<f64> {
        self.values.iter().flatten().copied().collect()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

fn require(period: usize, needed: usize, got: usize) -> Result<(), IndicatorError> {
    if period == 0 {
        return Err(IndicatorError::InvalidPeriod);
    }
    if got < needed {
        return Err(IndicatorError::SeriesTooShort { needed, got });
    }
    Ok(())
}

fn rolling_mean(values: &[f64], period: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(values.len() + 1 - period);
    let mut sum: f64 = values[..period].iter().sum();
    out.push(sum / period as f64);
    for i in period..values.len() {
        sum += values[i] - values[i - period];
        out.push(sum / period as f64);
    }
    out
}

/// Simple moving average.
pub fn sma(close: &[f64], period: usize) -> Result<IndicatorSeries, IndicatorError> {
    require(period, period, close.len())?;
    Ok(IndicatorSeries::with_warmup(format!("SMA{period}"), close.len(), period - 1, rolling_mean(close, period)))
}

/// Exponential moving average with smoothing `k / (period + 1)`, seeded with
/// the simple mean of the first `period` values.
pub fn ema(close: &[f64], period: usize, k: f64) -> Result<IndicatorSeries, IndicatorError> {
    require(period, period, close.len())?;
    let alpha = k / (period as f64 + 1.0);
    let mut prev = close[..period].iter().sum::<f64>() / period as f64;
    let mut out = Vec::with_capacity(close.len() + 1 - period);
    out.push(prev);
    for &c in &close[period..] {
        prev = c * alpha + prev * (1.0 - alpha);
        out.push(prev);
    }
    Ok(IndicatorSeries::with_warmup(format!("EMA{period}"), close.len(), period - 1, out))
}

/// Triangular moving average as two stacked SMA passes of the same period.
pub fn trima(close: &[f64], period: usize) -> Result<IndicatorSeries, IndicatorError> {
    double_smooth(close, period, period, format!("TRIMA{period}"))
}

/// Library-style triangular average: two SMA passes of roughly half the
/// period (`(n+1)/2` twice for odd `n`; `n/2` then `n/2 + 1` for even `n`).
pub fn trima_half_window(close: &[f64], period: usize) -> Result<IndicatorSeries, IndicatorError> {
    if period == 0 {
        return Err(IndicatorError::InvalidPeriod);
    }
    let (first, second) = if period % 2 == 1 {
        (period.div_ceil(2), period.div_ceil(2))
    } else {
        (period / 2, period / 2 + 1)
    };
    double_smooth(close, first, second, format!("TRIMA{period}"))
}

fn double_smooth(close: &[f64], first: usize, second: usize, name: String) -> Result<IndicatorSeries, IndicatorError> {
    if first == 0 || second == 0 {
        return Err(IndicatorError::InvalidPeriod);
    }
    require(first, first + second - 1, close.len())?;
    let once = rolling_mean(close, first);
    let twice = rolling_mean(&once, second);
    Ok(IndicatorSeries::with_warmup(name, close.len(), first + second - 2, twice))
}

/// Kaufman adaptive moving average.
///
/// The efficiency ratio over `period` steps interpolates the smoothing
/// constant between the `slow` and `fast` EMA rates (squared). Seeded with
/// the close at index `period`.
pub fn kama(close: &[f64], period: usize, fast: usize, slow: usize) -> Result<IndicatorSeries, IndicatorError> {
    if fast == 0 || slow == 0 {
        return Err(IndicatorError::InvalidPeriod);
    }
    require(period, period + 1, close.len())?;
    let fast_sc = 2.0 / (fast as f64 + 1.0);
    let slow_sc = 2.0 / (slow as f64 + 1.0);

    let mut prev = close[period];
    let mut out = Vec::with_capacity(close.len() - period);
    out.push(prev);
    for t in period + 1..close.len() {
        let change = (close[t] - close[t - period]).abs();
        let volatility: f64 = (t - period + 1..=t).map(|j| (close[j] - close[j - 1]).abs()).sum();
        let er = if volatility == 0.0 { 0.0 } else { change / volatility };
        let sc = (er * (fast_sc - slow_sc) + slow_sc).powi(2);
        prev += sc * (close[t] - prev);
        out.push(prev);
    }
    Ok(IndicatorSeries::with_warmup(format!("KAMA{period}"), close.len(), period, out))
}

/// Bollinger bands around an SMA middle band, using the population
/// standard deviation of the same window.
#[derive(Debug, Clone, PartialEq)]
pub struct BollingerBands {
    pub lower: IndicatorSeries,
    pub middle: IndicatorSeries,
    pub upper: IndicatorSeries,
}

pub fn bollinger(close: &[f64], period: usize, dev: f64) -> Result<BollingerBands, IndicatorError> {
    require(period, period, close.len())?;
    let middle = rolling_mean(close, period);
    let sigma: Vec<f64> = close
        .windows(period)
        .zip(&middle)
        .map(|(w, m)| (w.iter().map(|x| (x - m).powi(2)).sum::<f64>() / period as f64).sqrt())
        .collect();
    let n = close.len();
    let warm = period - 1;
    Ok(BollingerBands {
        lower: IndicatorSeries::with_warmup("lowerband", n, warm, middle.iter().zip(&sigma).map(|(m, s)| m - dev * s)),
        upper: IndicatorSeries::with_warmup("upperband", n, warm, middle.iter().zip(&sigma).map(|(m, s)| m + dev * s)),
        middle: IndicatorSeries::with_warmup("middleband", n, warm, middle),
    })
}

/// Pearson correlation coefficient.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64, IndicatorError> {
    if x.len() != y.len() {
        return Err(IndicatorError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(IndicatorError::SeriesTooShort { needed: 2, got: x.len() });
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(IndicatorError::DegenerateVariance);
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrimaVariant {
    /// SMA(SMA(close, n), n).
    Literal,
    /// Half-length windows, as most TA libraries do it.
    HalfWindow,
}

/// Indicator periods and constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IndicatorParams {
    pub sma_period: usize,
    pub ema_period: usize,
    pub ema_k: f64,
    pub trima_period: usize,
    pub trima_variant: TrimaVariant,
    pub kama_period: usize,
    pub kama_fast: usize,
    pub kama_slow: usize,
    pub bollinger_period: usize,
    pub bollinger_dev: f64,
}

impl Default for IndicatorParams {
    fn default() -> Self {
        Self {
            sma_period: 5,
            ema_period: 5,
            ema_k: 2.0,
            trima_period: 5,
            trima_variant: TrimaVariant::Literal,
            kama_period: 10,
            kama_fast: 2,
            kama_slow: 30,
            bollinger_period: 20,
            bollinger_dev: 2.0,
        }
    }
}

impl IndicatorParams {
    /// Indicator column names in canonical order.
    pub fn indicator_names(&self) -> Vec<String> {
        vec![
            format!("SMA{}", self.sma_period),
            format!("EMA{}", self.ema_period),
            format!("TRIMA{}", self.trima_period),
            format!("KAMA{}", self.kama_period),
            "lowerband".into(),
            "middleband".into(),
            "upperband".into(),
        ]
    }

    pub fn compute(&self, close: &[f64]) -> Result<Vec<IndicatorSeries>, IndicatorError> {
        let trima = match self.trima_variant {
            TrimaVariant::Literal => trima(close, self.trima_period)?,
            TrimaVariant::HalfWindow => trima_half_window(close, self.trima_period)?,
        };
        let bands = bollinger(close, self.bollinger_period, self.bollinger_dev)?;
        Ok(vec![
            sma(close, self.sma_period)?,
            ema(close, self.ema_period, self.ema_k)?,
            trima,
            kama(close, self.kama_period, self.kama_fast, self.kama_slow)?,
            bands.lower,
            bands.middle,
            bands.upper,
        ])
    }
}

/// OHLCV plus every indicator, with warm-up rows trimmed frame-wide.
pub fn candidate_frame(series: &OhlcvSeries, params: &IndicatorParams) -> Result<FeatureFrame, IndicatorError> {
    let bars = series.bars();
    let close = series.closes();
    let indicators = params.compute(&close)?;
    let trim = indicators.iter().map(IndicatorSeries::warmup).max().unwrap_or(0);

    let mut columns: Vec<(String, Vec<f64>)> = vec![
        ("open".into(), bars[trim..].iter().map(|b| b.open).collect()),
        ("high".into(), bars[trim..].iter().map(|b| b.high).collect()),
        ("low".into(), bars[trim..].iter().map(|b| b.low).collect()),
        ("close".into(), close[trim..].to_vec()),
        ("volume".into(), bars[trim..].iter().map(|b| b.volume as f64).collect()),
    ];
    for ind in indicators {
        let values = ind.values[trim..].iter().map(|v| v.expect("defined after trim")).collect();
        columns.push((ind.name, values));
    }
    let index = bars[trim..].iter().map(|b| b.timestamp).collect();
    Ok(FeatureFrame::new(index, columns)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionEntry {
    pub name: String,
    /// Unweighted mean of per-frame correlations; `None` when any frame had a
    /// constant column.
    pub mean_r: Option<f64>,
    pub kept: bool,
    pub forced: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionReport {
    pub threshold: f64,
    pub target: String,
    /// Every candidate, in frame column order.
    pub entries: Vec<SelectionEntry>,
}

impl SelectionReport {
    /// Kept columns ordered by descending |mean r|; ties keep frame order.
    pub fn selected(&self) -> Vec<String> {
        let mut kept: Vec<&SelectionEntry> = self.entries.iter().filter(|e| e.kept).collect();
        kept.sort_by(|a, b| {
            let ra = a.mean_r.map_or(f64::NEG_INFINITY, f64::abs);
            let rb = b.mean_r.map_or(f64::NEG_INFINITY, f64::abs);
            rb.total_cmp(&ra)
        });
        kept.into_iter().map(|e| e.name.clone()).collect()
    }

    pub fn is_kept(&self, name: &str) -> bool {
        self.entries.iter().any(|e| e.name == name && e.kept)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "feature selection against `{}` (|mean r| > {})", self.target, self.threshold);
        let _ = writeln!(s, "{:<14} {:>12}  status", "column", "mean r");
        for e in &self.entries {
            let r = e.mean_r.map_or_else(|| "undefined".to_string(), |r| format!("{r:.6}"));
            let status = match (e.kept, e.forced) {
                (true, true) => "keep (always)",
                (true, false) => "keep",
                (false, _) => "drop",
            };
            let _ = writeln!(s, "{:<14} {:>12}  {}", e.name, r, status);
        }
        s
    }
}

/// Correlation-based column selection.
///
/// For each candidate column the Pearson r with `target` is computed in
/// every frame and averaged. Columns with |mean r| above `threshold` are
/// kept; columns named in `always_keep` and the target itself are kept
/// regardless. A constant column in any frame is dropped rather than
/// failing the whole selection.
pub fn select_features(
    frames: &[FeatureFrame],
    target: &str,
    threshold: f64,
    always_keep: &[&str],
) -> Result<SelectionReport, IndicatorError> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(IndicatorError::InvalidThreshold(threshold));
    }
    let first = frames.first().ok_or(IndicatorError::NoFrames)?;
    let mut entries = Vec::with_capacity(first.width());
    for name in first.names() {
        let mut sum = 0.0;
        let mut degenerate = false;
        for frame in frames {
            let y = frame.column(target).ok_or_else(|| FrameError::MissingColumn(target.into()))?;
            let x = frame.column(name).ok_or_else(|| FrameError::MissingColumn(name.clone()))?;
            match pearson(x, y) {
                Ok(r) => sum += r,
                Err(IndicatorError::DegenerateVariance) => degenerate = true,
                Err(e) => return Err(e),
            }
        }
        let mean_r = (!degenerate).then(|| sum / frames.len() as f64);
        let forced = name == target || always_keep.contains(&name.as_str());
        let passes = mean_r.is_some_and(|r| r.abs() > threshold);
        entries.push(SelectionEntry { name: name.clone(), mean_r, kept: forced || passes, forced });
    }
    Ok(SelectionReport { threshold, target: target.into(), entries })
}
