use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::RunnerError;
use crate::indicators::IndicatorParams;
use crate::market_data::CsvSchema;
use crate::neural::Direction;
use crate::pipeline::DatasetConfig;
use crate::training::TrainConfig;

/// Which columns feed the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Approach {
    /// Close only.
    Univariate,
    /// Open, high, low, close, volume.
    Ohlcv,
    /// OHLCV plus the selected indicators.
    Indicators,
}

impl Approach {
    pub const ALL: [Approach; 3] = [Approach::Univariate, Approach::Ohlcv, Approach::Indicators];

    pub fn name(self) -> &'static str {
        match self {
            Approach::Univariate => "univariate",
            Approach::Ohlcv => "ohlcv",
            Approach::Indicators => "indicators",
        }
    }

    pub fn feature_count(self) -> usize {
        match self {
            Approach::Univariate => 1,
            Approach::Ohlcv => 5,
            Approach::Indicators => 12,
        }
    }
}

/// Approach × direction, written `<approach>x<direction>` (e.g. `indicatorsxbi`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Variant {
    pub approach: Approach,
    pub direction: Direction,
}

impl Variant {
    pub fn all() -> Vec<Variant> {
        Approach::ALL
            .iter()
            .flat_map(|&approach| [Direction::Unidirectional, Direction::Bidirectional].map(|direction| Variant { approach, direction }))
            .collect()
    }

    /// Row label used in results tables.
    pub fn label(&self) -> &'static str {
        match (self.approach, self.direction) {
            (Approach::Univariate, Direction::Unidirectional) => "Univariate LSTM",
            (Approach::Univariate, Direction::Bidirectional) => "Univariate bi-LSTM",
            (Approach::Ohlcv, Direction::Unidirectional) => "Multivariate OHLCV LSTM",
            (Approach::Ohlcv, Direction::Bidirectional) => "Multivariate OHLCV bi-LSTM",
            (Approach::Indicators, Direction::Unidirectional) => "Multivariate LSTM",
            (Approach::Indicators, Direction::Bidirectional) => "Multivariate bi-LSTM",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.approach.name(), self.direction.short_name())
    }
}

impl FromStr for Variant {
    type Err = RunnerError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || RunnerError::Config(format!("variant `{s}` is not <univariate|ohlcv|indicators>x<uni|bi>"));
        let (a, d) = s.rsplit_once('x').ok_or_else(bad)?;
        let approach = Approach::ALL.into_iter().find(|x| x.name() == a).ok_or_else(bad)?;
        let direction = match d {
            "uni" => Direction::Unidirectional,
            "bi" => Direction::Bidirectional,
            _ => return Err(bad()),
        };
        Ok(Variant { approach, direction })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub approach: Approach,
    pub direction: Direction,
    pub hidden: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { approach: Approach::Indicators, direction: Direction::Bidirectional, hidden: 64 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureConfig {
    /// Indicators need |mean r| above this to be kept; OHLCV is always kept.
    pub threshold: f64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self { threshold: 0.99 }
    }
}

/// One experiment. Everything except `input` has a default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub input: PathBuf,
    pub output_dir: PathBuf,
    /// Bars are resampled to this many minutes before feature generation.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub resample_minutes: Option<i64>,
    /// Render `trace.png` alongside the trace CSV.
    pub plot: bool,
    pub schema: CsvSchema,
    pub model: ModelConfig,
    pub features: FeatureConfig,
    pub indicators: IndicatorParams,
    pub dataset: DatasetConfig,
    pub train: TrainConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            input: PathBuf::new(),
            output_dir: PathBuf::from("out"),
            resample_minutes: None,
            plot: true,
            schema: CsvSchema::default(),
            model: ModelConfig::default(),
            features: FeatureConfig::default(),
            indicators: IndicatorParams::default(),
            dataset: DatasetConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, RunnerError> {
        toml::from_str(text).map_err(|e| RunnerError::Config(e.to_string()))
    }

    /// Relative `input` / `output_dir` paths resolve against the file's
    /// directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, RunnerError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| RunnerError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text)?;
        if let Some(base) = path.parent() {
            if cfg.input.is_relative() && !cfg.input.as_os_str().is_empty() {
                cfg.input = base.join(&cfg.input);
            }
            if cfg.output_dir.is_relative() {
                cfg.output_dir = base.join(&cfg.output_dir);
            }
        }
        Ok(cfg)
    }

    /// Canonical TOML form.
    pub fn to_toml(&self) -> Result<String, RunnerError> {
        toml::to_string(self).map_err(|e| RunnerError::Config(e.to_string()))
    }

    pub fn variant(&self) -> Variant {
        Variant { approach: self.model.approach, direction: self.model.direction }
    }

    pub fn with_variant(mut self, v: Variant) -> Self {
        self.model.approach = v.approach;
        self.model.direction = v.direction;
        self
    }

    pub fn validate(&self) -> Result<(), RunnerError> {
        if self.input.as_os_str().is_empty() {
            return Err(RunnerError::Config("`input` is required".into()));
        }
        if self.model.hidden == 0 {
            return Err(RunnerError::Config("model.hidden must be >= 1".into()));
        }
        if !(self.features.threshold > 0.0 && self.features.threshold <= 1.0) {
            return Err(RunnerError::Config("features.threshold must lie in (0, 1]".into()));
        }
        if self.dataset.window == 0 {
            return Err(RunnerError::Config("dataset.window must be >= 1".into()));
        }
        if self.resample_minutes.is_some_and(|m| m <= 0) {
            return Err(RunnerError::Config("resample_minutes must be positive".into()));
        }
        self.train.validate().map_err(|e| RunnerError::Config(e.to_string()))?;
        // fractions are checked here rather than after the data is loaded
        crate::pipeline::split_counts(1000, self.dataset.fractions).map_err(|e| RunnerError::Config(e.to_string()))?;
        Ok(())
    }

    /// True when both configs describe the same data, features and split.
    pub fn same_dataset(&self, other: &Self) -> bool {
        self.input == other.input
            && self.schema == other.schema
            && self.resample_minutes == other.resample_minutes
            && self.features == other.features
            && self.indicators == other.indicators
            && self.dataset == other.dataset
    }
}
