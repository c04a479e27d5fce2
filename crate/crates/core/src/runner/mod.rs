//! End-to-end experiment wiring.
//!
//! Each stage reads its inputs either from the previous stage in memory or
//! from the files an earlier stage left in the output directory, so stages
//! can be re-run one at a time. File names inside the output directory are
//! fixed (see [`ArtifactPaths`]).

mod config;
mod plot;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use chrono::{NaiveDateTime, TimeDelta};
use thiserror::Error;

pub use config::{Approach, ExperimentConfig, FeatureConfig, ModelConfig, Variant};

use crate::evaluation::{self, BacktestReport, EvalError, MetricsReport};
use crate::frame::{FeatureFrame, FrameError};
use crate::indicators::{self, IndicatorError, SelectionReport, OHLCV_COLUMNS};
use crate::market_data::{self, MarketDataError, OhlcvSeries, TIMESTAMP_FORMAT};
use crate::neural::{ModelParams, ModelSpec, NeuralError};
use crate::pipeline::{self, PipelineError, Scaler, WindowedDataset};
use crate::training::{self, TrainError, TrainHistory, TrainOutcome};

#[derive(Debug, Error)]
pub enum RunnerError {
    #[error("config: {0}")]
    Config(String),
    #[error("market_data: {0}")]
    MarketData(#[from] MarketDataError),
    #[error("indicators: {0}")]
    Indicators(#[from] IndicatorError),
    #[error("features: {0}")]
    Frame(#[from] FrameError),
    #[error("pipeline: {0}")]
    Pipeline(#[from] PipelineError),
    #[error("neural_core: {0}")]
    Neural(#[from] NeuralError),
    #[error("training: {0}")]
    Training(#[from] TrainError),
    #[error("evaluation: {0}")]
    Evaluation(#[from] EvalError),
    #[error("runner: {approach} approach needs {expected} features, selection produced {got} ({names:?}); lower features.threshold or change approach")]
    FeatureCount { approach: &'static str, expected: usize, got: usize, names: Vec<String> },
    #[error("runner: configs do not share one dataset: {0}")]
    InconsistentDataset(String),
    #[error("runner: {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl RunnerError {
    /// 1 config error, 2 data error, 3 training divergence.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunnerError::Config(_) | RunnerError::InconsistentDataset(_) => 1,
            RunnerError::Training(TrainError::DivergenceDetected { .. }) => 3,
            RunnerError::Training(TrainError::InvalidConfig(_)) => 1,
            _ => 2,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> RunnerError + '_ {
    move |source| RunnerError::Io { path: path.to_path_buf(), source }
}

fn create(path: &Path) -> Result<BufWriter<File>, RunnerError> {
    File::create(path).map(BufWriter::new).map_err(io_err(path))
}

/// Fixed artifact locations under one output directory.
#[derive(Debug, Clone, PartialEq)]
pub struct ArtifactPaths {
    pub dir: PathBuf,
}

impl ArtifactPaths {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }
    pub fn bars(&self) -> PathBuf {
        self.dir.join("bars.csv")
    }
    pub fn candidates(&self) -> PathBuf {
        self.dir.join("features.csv")
    }
    pub fn selection(&self) -> PathBuf {
        self.dir.join("selection.txt")
    }
    pub fn scaler(&self) -> PathBuf {
        self.dir.join("scaler.csv")
    }
    pub fn windows(&self) -> PathBuf {
        self.dir.join("windows.bin")
    }
    pub fn checkpoint(&self) -> PathBuf {
        self.dir.join("model.ckpt")
    }
    pub fn optimizer(&self) -> PathBuf {
        self.dir.join("optimizer.bin")
    }
    pub fn history(&self) -> PathBuf {
        self.dir.join("history.csv")
    }
    pub fn metrics(&self) -> PathBuf {
        self.dir.join("metrics.csv")
    }
    pub fn trace(&self) -> PathBuf {
        self.dir.join("trace.csv")
    }
    pub fn chart(&self) -> PathBuf {
        self.dir.join("trace.png")
    }
    pub fn backtest(&self) -> PathBuf {
        self.dir.join("backtest.csv")
    }
}

/// Parses the input CSV and resamples it when configured.
pub fn ingest(config: &ExperimentConfig) -> Result<OhlcvSeries, RunnerError> {
    let series = market_data::parse_csv(&config.input, &config.schema)?;
    match config.resample_minutes {
        Some(m) => Ok(market_data::resample(&series, TimeDelta::minutes(m))?),
        None => Ok(series),
    }
}

/// All candidate columns (warm-up trimmed) and the correlation report.
pub fn build_candidates(bars: &OhlcvSeries, config: &ExperimentConfig) -> Result<(FeatureFrame, SelectionReport), RunnerError> {
    let candidates = indicators::candidate_frame(bars, &config.indicators)?;
    let report = select(&candidates, config)?;
    Ok((candidates, report))
}

fn select(candidates: &FeatureFrame, config: &ExperimentConfig) -> Result<SelectionReport, RunnerError> {
    Ok(indicators::select_features(std::slice::from_ref(candidates), "close", config.features.threshold, &OHLCV_COLUMNS)?)
}

/// Model input columns for the configured approach, with the feature-count
/// check applied.
pub fn model_features(candidates: &FeatureFrame, report: &SelectionReport, config: &ExperimentConfig) -> Result<FeatureFrame, RunnerError> {
    let approach = config.model.approach;
    let names: Vec<String> = match approach {
        Approach::Univariate => vec!["close".into()],
        Approach::Ohlcv => OHLCV_COLUMNS.iter().map(|s| s.to_string()).collect(),
        Approach::Indicators => OHLCV_COLUMNS
            .iter()
            .map(|s| s.to_string())
            .chain(config.indicators.indicator_names().into_iter().filter(|n| report.is_kept(n)))
            .collect(),
    };
    if names.len() != approach.feature_count() {
        return Err(RunnerError::FeatureCount { approach: approach.name(), expected: approach.feature_count(), got: names.len(), names });
    }
    Ok(candidates.select(&names)?)
}

/// Actual and predicted closes for the test segment.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionTrace {
    pub timestamps: Vec<NaiveDateTime>,
    pub actual: Vec<f64>,
    pub predicted: Vec<f64>,
    pub actual_price: Vec<f64>,
    pub predicted_price: Vec<f64>,
}

impl PredictionTrace {
    pub fn write_csv<W: Write>(&self, w: W) -> std::io::Result<()> {
        let mut w = BufWriter::new(w);
        writeln!(w, "timestamp,actual,predicted")?;
        for i in 0..self.timestamps.len() {
            writeln!(w, "{},{},{}", self.timestamps[i].format(TIMESTAMP_FORMAT), self.actual_price[i], self.predicted_price[i])?;
        }
        w.flush()
    }

    /// Reads back price columns written by [`PredictionTrace::write_csv`].
    pub fn read_prices(path: &Path) -> Result<(Vec<f64>, Vec<f64>), RunnerError> {
        let frame = FeatureFrame::load(path)?;
        let col = |n: &str| frame.column(n).map(<[f64]>::to_vec).ok_or_else(|| FrameError::MissingColumn(n.into()));
        Ok((col("actual")?, col("predicted")?))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub metrics: MetricsReport,
    pub backtest: BacktestReport,
    pub trace: PredictionTrace,
}

/// Test-segment metrics (normalized and price units), trace and backtest.
pub fn evaluate(params: &ModelParams, dataset: &WindowedDataset, scaler: &Scaler) -> Result<Evaluation, RunnerError> {
    let test = dataset
        .splits()
        .ok_or_else(|| PipelineError::Format("dataset has no split".into()))?
        .test
        .clone();
    let target = dataset.target_name().to_string();
    let actual = dataset.targets(test.clone());
    let predicted = training::predict_range(params, dataset, test.clone())?;
    let actual_price = pipeline::inverse_transform_values(&actual, scaler, &target)?;
    let predicted_price = pipeline::inverse_transform_values(&predicted, scaler, &target)?;
    let metrics = MetricsReport::compute(&actual, &predicted)?.with_prices(&actual_price, &predicted_price)?;
    let backtest = evaluation::backtest(&actual_price, &predicted_price)?;
    let timestamps = test.map(|n| dataset.target_timestamp(n)).collect();
    Ok(Evaluation { metrics, backtest, trace: PredictionTrace { timestamps, actual, predicted, actual_price, predicted_price } })
}

/// Writes the trace CSV and, when asked, a PNG chart. Chart failures are
/// logged and otherwise ignored.
pub fn emit_plot_trace(trace: &PredictionTrace, paths: &ArtifactPaths, chart: bool) -> Result<(PathBuf, Option<PathBuf>), RunnerError> {
    let csv = paths.trace();
    trace.write_csv(create(&csv)?).map_err(io_err(&csv))?;
    let png = chart.then(|| paths.chart()).and_then(|png| match plot::render(&trace.actual_price, &trace.predicted_price, &png) {
        Ok(()) => Some(png),
        Err(e) => {
            log::warn!("chart not written: {e}");
            None
        }
    });
    Ok((csv, png))
}

/// Everything one experiment leaves behind.
#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub paths: ArtifactPaths,
    pub chart: Option<PathBuf>,
    pub variant: Variant,
    pub history: TrainHistory,
    pub evaluation: Evaluation,
}

fn write_text(path: &Path, text: &str) -> Result<(), RunnerError> {
    std::fs::write(path, text).map_err(io_err(path))
}

fn prepare_output(config: &ExperimentConfig) -> Result<ArtifactPaths, RunnerError> {
    std::fs::create_dir_all(&config.output_dir).map_err(io_err(&config.output_dir))?;
    Ok(ArtifactPaths::new(&config.output_dir))
}

/// `ingest` stage: parse (and resample) the input, write `bars.csv`.
pub fn stage_ingest(config: &ExperimentConfig) -> Result<OhlcvSeries, RunnerError> {
    config.validate()?;
    let paths = prepare_output(config)?;
    let bars = ingest(config)?;
    market_data::export_csv(&bars, paths.bars())?;
    log::info!("ingested {} bars", bars.len());
    Ok(bars)
}

/// `features` stage: candidate frame and selection report.
pub fn stage_features(config: &ExperimentConfig, bars: &OhlcvSeries) -> Result<(FeatureFrame, SelectionReport), RunnerError> {
    let paths = prepare_output(config)?;
    let (candidates, report) = build_candidates(bars, config)?;
    candidates.save(paths.candidates())?;
    write_text(&paths.selection(), &report.to_text())?;
    Ok((candidates, report))
}

/// `train` stage: scale, window, split and fit; writes scaler, windows,
/// checkpoint, optimizer state and history.
pub fn stage_train(config: &ExperimentConfig, candidates: &FeatureFrame) -> Result<(WindowedDataset, Scaler, TrainOutcome), RunnerError> {
    config.validate()?;
    let paths = prepare_output(config)?;
    let report = select(candidates, config)?;
    let features = model_features(candidates, &report, config)?;
    let (dataset, scaler) = pipeline::prepare(&features, "close", &config.dataset)?;
    scaler.write_csv(create(&paths.scaler())?)?;
    dataset.save(paths.windows())?;

    let spec = ModelSpec { direction: config.model.direction, hidden: config.model.hidden, features: dataset.features() };
    log::info!("training {} on {} windows ({} features)", config.variant(), dataset.len(), dataset.features());
    let outcome = match training::train(spec, &dataset, &config.train) {
        Err(TrainError::DivergenceDetected { epoch, last_finite }) => {
            last_finite.save(paths.checkpoint())?;
            return Err(TrainError::DivergenceDetected { epoch, last_finite }.into());
        }
        other => other?,
    };
    outcome.params.save(paths.checkpoint())?;
    outcome.optimizer.save(paths.optimizer())?;
    outcome.history.write_csv(create(&paths.history())?).map_err(io_err(&paths.history()))?;
    Ok((dataset, scaler, outcome))
}

/// `evaluate` stage: metrics CSV, trace CSV, optional chart.
pub fn stage_evaluate(
    config: &ExperimentConfig,
    params: &ModelParams,
    dataset: &WindowedDataset,
    scaler: &Scaler,
) -> Result<(Evaluation, Option<PathBuf>), RunnerError> {
    let paths = prepare_output(config)?;
    let eval = evaluate(params, dataset, scaler)?;
    let mut w = create(&paths.metrics())?;
    writeln!(w, "{}", MetricsReport::CSV_HEADER).map_err(io_err(&paths.metrics()))?;
    writeln!(w, "{}", eval.metrics.csv_row(&config.variant().to_string())).map_err(io_err(&paths.metrics()))?;
    w.flush().map_err(io_err(&paths.metrics()))?;
    let (_, chart) = emit_plot_trace(&eval.trace, &paths, config.plot)?;
    Ok((eval, chart))
}

/// `backtest` stage over price columns.
pub fn stage_backtest(config: &ExperimentConfig, actual: &[f64], predicted: &[f64]) -> Result<BacktestReport, RunnerError> {
    let paths = prepare_output(config)?;
    let report = evaluation::backtest(actual, predicted)?;
    write_text(
        &paths.backtest(),
        &format!("{}\n{}\n", BacktestReport::CSV_HEADER, report.csv_row(&config.variant().to_string())),
    )?;
    Ok(report)
}

/// Runs every stage in order, deterministically under `config.train.seed`.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunArtifacts, RunnerError> {
    let bars = stage_ingest(config)?;
    let (candidates, _) = stage_features(config, &bars)?;
    let (dataset, scaler, outcome) = stage_train(config, &candidates)?;
    let (evaluation, chart) = stage_evaluate(config, &outcome.params, &dataset, &scaler)?;
    stage_backtest(config, &evaluation.trace.actual_price, &evaluation.trace.predicted_price)?;
    Ok(RunArtifacts {
        paths: ArtifactPaths::new(&config.output_dir),
        chart,
        variant: config.variant(),
        history: outcome.history,
        evaluation,
    })
}

#[derive(Debug, Clone)]
pub struct MatrixResult {
    pub runs: Vec<RunArtifacts>,
    pub table: String,
}

impl MatrixResult {
    pub fn rows(&self) -> Vec<(String, MetricsReport)> {
        self.runs.iter().map(|r| (r.variant.label().to_string(), r.evaluation.metrics.clone())).collect()
    }

    pub fn csv(&self) -> String {
        let mut s = format!("{}\n", MetricsReport::CSV_HEADER);
        for r in &self.runs {
            s.push_str(&r.evaluation.metrics.csv_row(&r.variant.to_string()));
            s.push('\n');
        }
        s
    }
}

/// Runs several variants over one dataset and tabulates them by R².
pub fn run_matrix(configs: &[ExperimentConfig], title: &str) -> Result<MatrixResult, RunnerError> {
    let first = configs.first().ok_or_else(|| RunnerError::Config("matrix needs at least one config".into()))?;
    if let Some(bad) = configs.iter().find(|c| !c.same_dataset(first)) {
        return Err(RunnerError::InconsistentDataset(format!("{} differs from {}", bad.variant(), first.variant())));
    }
    let runs = configs.iter().map(run_experiment).collect::<Result<Vec<_>, _>>()?;
    let rows: Vec<(String, MetricsReport)> = runs.iter().map(|r| (r.variant.label().to_string(), r.evaluation.metrics.clone())).collect();
    let table = evaluation::format_table(title, &rows);
    Ok(MatrixResult { runs, table })
}
