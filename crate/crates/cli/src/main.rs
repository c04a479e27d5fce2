use std::fs::File;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use forecast_core::frame::FeatureFrame;
use forecast_core::market_data::{self, CsvSchema};
use forecast_core::pipeline::{PipelineError, Scaler};
use forecast_core::runner::{self, ArtifactPaths, ExperimentConfig, PredictionTrace, RunnerError, Variant};
use forecast_core::synthetic::MultiSine;
use forecast_core::{ModelParams, WindowedDataset};

/// LSTM / bi-LSTM close-price forecasting over OHLCV bars.
#[derive(Parser)]
#[command(name = "forecast", version)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Experiment TOML.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides `train.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides `output_dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// `<univariate|ohlcv|indicators>x<uni|bi>`.
    #[arg(long, global = true)]
    variant: Option<Variant>,
}

#[derive(Subcommand)]
enum Command {
    /// Write a seeded noisy multi-sine series as CSV into the output directory.
    Synth {
        #[arg(long, default_value_t = 4000)]
        points: usize,
    },
    /// Parse (and resample) the input CSV into `bars.csv`.
    Ingest,
    /// Compute indicators and the selection report from `bars.csv`.
    Features,
    /// Fit the model on `features.csv`.
    Train,
    /// Score the checkpoint on the test segment.
    Evaluate,
    /// Long/flat backtest over `trace.csv`.
    Backtest,
    /// All stages in one go.
    Run,
    /// Every approach × direction on one dataset, ranked by R².
    Matrix,
}

fn load_config(g: &Global) -> Result<ExperimentConfig, RunnerError> {
    let mut cfg = match &g.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => return Err(RunnerError::Config("--config is required".into())),
    };
    if let Some(seed) = g.seed {
        cfg.train.seed = seed;
    }
    if let Some(out) = &g.out {
        cfg.output_dir = out.clone();
    }
    if let Some(v) = g.variant {
        cfg = cfg.with_variant(v);
    }
    cfg.validate()?;
    Ok(cfg)
}

fn synth(g: &Global, points: usize) -> Result<(), RunnerError> {
    let dir = g.out.clone().unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&dir).map_err(|source| RunnerError::Io { path: dir.clone(), source })?;
    let mut gen = MultiSine { points, ..Default::default() };
    if let Some(seed) = g.seed {
        gen.seed = seed;
    }
    let path = dir.join("synthetic.csv");
    market_data::export_csv(&gen.generate(), &path)?;
    println!("{}", path.display());
    Ok(())
}

fn load_trained(paths: &ArtifactPaths) -> Result<(ModelParams, WindowedDataset, Scaler), RunnerError> {
    let params = ModelParams::load(paths.checkpoint())?;
    let dataset = WindowedDataset::load(paths.windows())?;
    let scaler_path = paths.scaler();
    let file = File::open(&scaler_path).map_err(PipelineError::from)?;
    Ok((params, dataset, Scaler::read_csv(file)?))
}

fn dispatch(cli: &Cli) -> Result<(), RunnerError> {
    if let Command::Synth { points } = cli.command {
        return synth(&cli.global, points);
    }
    let cfg = load_config(&cli.global)?;
    let paths = ArtifactPaths::new(&cfg.output_dir);
    match cli.command {
        Command::Synth { .. } => unreachable!(),
        Command::Ingest => {
            let bars = runner::stage_ingest(&cfg)?;
            println!("{} bars -> {}", bars.len(), paths.bars().display());
        }
        Command::Features => {
            let bars = market_data::parse_csv(paths.bars(), &CsvSchema::default())?;
            let (_, report) = runner::stage_features(&cfg, &bars)?;
            print!("{}", report.to_text());
        }
        Command::Train => {
            let candidates = FeatureFrame::load(paths.candidates())?;
            let (_, _, outcome) = runner::stage_train(&cfg, &candidates)?;
            let h = &outcome.history;
            println!("epochs {} best {} val_loss {}", h.epochs_run(), h.best_epoch + 1, h.best_val_loss());
        }
        Command::Evaluate => {
            let (params, dataset, scaler) = load_trained(&paths)?;
            let (eval, _) = runner::stage_evaluate(&cfg, &params, &dataset, &scaler)?;
            println!("{}\n{}", forecast_core::evaluation::MetricsReport::CSV_HEADER, eval.metrics.csv_row(&cfg.variant().to_string()));
        }
        Command::Backtest => {
            let (actual, predicted) = PredictionTrace::read_prices(&paths.trace())?;
            let report = runner::stage_backtest(&cfg, &actual, &predicted)?;
            println!("{}\n{}", forecast_core::evaluation::BacktestReport::CSV_HEADER, report.csv_row(&cfg.variant().to_string()));
        }
        Command::Run => {
            let run = runner::run_experiment(&cfg)?;
            println!("{}\n{}", forecast_core::evaluation::MetricsReport::CSV_HEADER, run.evaluation.metrics.csv_row(&run.variant.to_string()));
        }
        Command::Matrix => {
            let configs: Vec<ExperimentConfig> = Variant::all()
                .into_iter()
                .map(|v| {
                    let mut c = cfg.clone().with_variant(v);
                    c.output_dir = cfg.output_dir.join(v.to_string());
                    c
                })
                .collect();
            let result = runner::run_matrix(&configs, "Test-set metrics")?;
            for (name, text) in [("matrix.txt", result.table.clone()), ("matrix.csv", result.csv())] {
                let path = cfg.output_dir.join(name);
                std::fs::write(&path, text).map_err(|source| RunnerError::Io { path, source })?;
            }
            print!("{}", result.table);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            // usage errors are config errors; clap's own code 2 means data error here
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
