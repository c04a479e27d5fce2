//! Short-horizon equity price forecasting with from-scratch LSTMs.
//!
//! The pipeline runs bar ingestion ([`market_data`]) → technical indicators
//! and correlation-based selection ([`indicators`]) → scaling, sliding
//! windows and chronological splits ([`pipeline`]) → unidirectional or
//! bidirectional LSTM regression ([`neural`], [`training`]) → metrics and a
//! long/flat backtest ([`evaluation`]). [`runner`] wires the stages together
//! from a TOML experiment file.

pub mod evaluation;
pub mod frame;
pub mod indicators;
pub mod market_data;
pub mod neural;
pub mod pipeline;
pub mod runner;
pub mod synthetic;
pub mod training;

pub use frame::FeatureFrame;
pub use market_data::{Bar, OhlcvSeries};
pub use neural::{Direction, ModelParams, ModelSpec};
pub use pipeline::WindowedDataset;
