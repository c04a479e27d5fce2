//! Mini-batch Adam training with MSE loss and early stopping.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::ops::Range;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::neural::{self, Gradients, ModelParams, ModelSpec, NeuralError};
use crate::pipeline::WindowedDataset;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("empty input")]
    EmptyInput,
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("dataset: {0}")]
    Dataset(String),
    #[error("training diverged in epoch {epoch}")]
    DivergenceDetected {
        epoch: usize,
        /// Last parameters known to be finite.
        last_finite: Box<ModelParams>,
    },
    #[error(transparent)]
    Neural(#[from] NeuralError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub patience: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Global-norm gradient clipping threshold; `None` disables clipping.
    pub clip_norm: Option<f64>,
    /// Seeded reshuffle of training windows every epoch. Only the order in
    /// which training windows are visited changes; splits stay chronological.
    pub shuffle: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            learning_rate: 0.001,
            patience: 5,
            batch_size: 32,
            seed: 42,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            clip_norm: None,
            shuffle: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::InvalidConfig(m.into()));
        if self.epochs == 0 {
            return bad("epochs must be >= 1");
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad("learning_rate must be > 0");
        }
        if self.patience == 0 {
            return bad("patience must be >= 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return bad("adam constants out of range");
        }
        if self.clip_norm.is_some_and(|c| !(c.is_finite() && c > 0.0)) {
            return bad("clip_norm must be > 0");
        }
        Ok(())
    }
}

/// Mean squared error.
pub fn mse(preds: &[f64], targets: &[f64]) -> Result<f64, TrainError> {
    if preds.len() != targets.len() {
        return Err(TrainError::LengthMismatch(preds.len(), targets.len()));
    }
    if preds.is_empty() {
        return Err(TrainError::EmptyInput);
    }
    Ok(preds.iter().zip(targets).map(|(p, t)| (p - t).powi(2)).sum::<f64>() / preds.len() as f64)
}

/// First and second moment estimates, one buffer per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub t: u64,
}

impl AdamState {
    pub fn new(params: &ModelParams) -> Self {
        Self::for_shapes(params.tensors().iter().map(|(_, t)| t.len()))
    }

    pub fn for_shapes(lens: impl IntoIterator<Item = usize>) -> Self {
        let m: Vec<Vec<f64>> = lens.into_iter().map(|n| vec![0.0; n]).collect();
        Self { v: m.clone(), m, t: 0 }
    }

    /// One bias-corrected Adam update over matching tensor lists.
    pub fn update(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]], config: &TrainConfig) -> Result<(), TrainError> {
        let shapes_ok = params.len() == self.m.len()
            && grads.len() == self.m.len()
            && params.iter().zip(grads).zip(&self.m).all(|((p, g), m)| p.len() == m.len() && g.len() == m.len());
        if !shapes_ok {
            return Err(NeuralError::ShapeMismatch("adam state, parameters and gradients differ in shape".into()).into());
        }
        self.t += 1;
        let (b1, b2) = (config.beta1, config.beta2);
        let c1 = 1.0 - b1.powi(self.t as i32);
        let c2 = 1.0 - b2.powi(self.t as i32);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for k in 0..p.len() {
                m[k] = b1 * m[k] + (1.0 - b1) * g[k];
                v[k] = b2 * v[k] + (1.0 - b2) * g[k] * g[k];
                let m_hat = m[k] / c1;
                let v_hat = v[k] / c2;
                p[k] -= config.learning_rate * m_hat / (v_hat.sqrt() + config.epsilon);
            }
        }
        Ok(())
    }

    const MAGIC: &'static [u8; 8] = b"FCADAM01";

    /// Magic `FCADAM01`, `u64` step count, `u64` tensor count, then every
    /// first-moment tensor followed by every second-moment tensor in the
    /// model checkpoint's tensor order.
    pub fn write_to<W: Write>(&self, writer: W) -> Result<(), NeuralError> {
        let mut w = BufWriter::new(writer);
        w.write_all(Self::MAGIC)?;
        w.write_all(&self.t.to_le_bytes())?;
        w.write_all(&(self.m.len() as u64).to_le_bytes())?;
        neural::write_tensors(&mut w, self.m.iter().chain(&self.v).map(Vec::as_slice))?;
        w.flush()?;
        Ok(())
    }

    /// Reads state shaped like `params`.
    pub fn read_from<R: Read>(reader: R, params: &ModelParams) -> Result<Self, NeuralError> {
        let mut r = BufReader::new(reader);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != Self::MAGIC {
            return Err(NeuralError::Format("bad optimizer magic".into()));
        }
        let mut state = Self::new(params);
        state.t = neural::read_u64(&mut r)?;
        if neural::read_u64(&mut r)? as usize != state.m.len() {
            return Err(NeuralError::Format("optimizer tensor count differs from model".into()));
        }
        let mut slots: Vec<&mut [f64]> = state.m.iter_mut().chain(state.v.iter_mut()).map(Vec::as_mut_slice).collect();
        neural::read_tensors(&mut r, &mut slots)?;
        Ok(state)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), NeuralError> {
        self.write_to(File::create(path)?)
    }

    pub fn load(path: impl AsRef<Path>, params: &ModelParams) -> Result<Self, NeuralError> {
        Self::read_from(File::open(path)?, params)
    }
}

pub fn adam_step(params: &mut ModelParams, grads: &Gradients, state: &mut AdamState, config: &TrainConfig) -> Result<(), TrainError> {
    if params.spec != grads.spec {
        return Err(NeuralError::ShapeMismatch("gradient spec differs from parameters".into()).into());
    }
    let grad_tensors: Vec<&[f64]> = grads.tensors().into_iter().map(|(_, t)| t).collect();
    state.update(&mut params.tensors_mut(), &grad_tensors, config)
}

/// Rescales `grads` so their global L2 norm is at most `max_norm`; returns
/// the norm before clipping.
pub fn clip_global_norm(grads: &mut Gradients, max_norm: f64) -> f64 {
    let norm = grads.tensors().iter().flat_map(|(_, t)| t.iter()).map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        for t in grads.tensors_mut() {
            t.iter_mut().for_each(|g| *g *= s);
        }
    }
    norm
}

/// Patience-based stopping on a strictly decreasing validation loss.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    best_epoch: Option<usize>,
    since_best: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self { patience, best: f64::INFINITY, best_epoch: None, since_best: 0 }
    }

    /// Records an epoch's validation loss. Returns `(improved, stop)`.
    pub fn observe(&mut self, epoch: usize, val_loss: f64) -> (bool, bool) {
        if val_loss < self.best {
            self.best = val_loss;
            self.best_epoch = Some(epoch);
            self.since_best = 0;
            (true, false)
        } else {
            self.since_best += 1;
            (false, self.since_best >= self.patience)
        }
    }

    pub fn best_epoch(&self) -> Option<usize> {
        self.best_epoch
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainHistory {
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    /// Zero-based.
    pub best_epoch: usize,
    pub stopped_early: bool,
}

impl TrainHistory {
    pub fn epochs_run(&self) -> usize {
        self.train_loss.len()
    }

    pub fn best_val_loss(&self) -> f64 {
        self.val_loss[self.best_epoch]
    }

    /// `epoch,train_loss,val_loss` with 1-based epochs.
    pub fn write_csv<W: Write>(&self, writer: W) -> std::io::Result<()> {
        let mut w = BufWriter::new(writer);
        writeln!(w, "epoch,train_loss,val_loss")?;
        for (e, (t, v)) in self.train_loss.iter().zip(&self.val_loss).enumerate() {
            writeln!(w, "{},{},{}", e + 1, t, v)?;
        }
        w.flush()
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the best validation epoch.
    pub params: ModelParams,
    pub history: TrainHistory,
    pub optimizer: AdamState,
}

/// Predictions for a contiguous range of window pairs.
pub fn predict_range(params: &ModelParams, dataset: &WindowedDataset, pairs: Range<usize>) -> Result<Vec<f64>, NeuralError> {
    pairs.map(|n| neural::predict(dataset.input(n), params)).collect()
}

fn diverged(epoch: usize, params: &ModelParams) -> TrainError {
    TrainError::DivergenceDetected { epoch, last_finite: Box::new(params.clone()) }
}

/// Trains from a seeded initialization, keeping the best-validation weights.
pub fn train(spec: ModelSpec, dataset: &WindowedDataset, config: &TrainConfig) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    if spec.features != dataset.features() {
        return Err(TrainError::Dataset(format!("model expects {} features, dataset has {}", spec.features, dataset.features())));
    }
    let splits = dataset.splits().ok_or_else(|| TrainError::Dataset("dataset has no split".into()))?.clone();
    if splits.train.is_empty() || splits.val.is_empty() {
        return Err(TrainError::Dataset("train and validation segments must be nonempty".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params = ModelParams::init(spec, &mut rng);
    let mut adam = AdamState::new(&params);
    let mut stopper = EarlyStopping::new(config.patience);
    let mut best = (params.clone(), adam.clone());
    let mut history = TrainHistory { train_loss: Vec::new(), val_loss: Vec::new(), best_epoch: 0, stopped_early: false };
    let mut order: Vec<usize> = splits.train.clone().collect();
    let val_targets = dataset.targets(splits.val.clone());

    for epoch in 0..config.epochs {
        if config.shuffle {
            order.shuffle(&mut rng);
        }
        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            let mut grads = params.zeros_like();
            let scale = 1.0 / batch.len() as f64;
            for &n in batch {
                let window = dataset.input(n);
                let cache = match neural::sequence_forward(window, &params) {
                    Err(NeuralError::NonFiniteActivation { .. }) => return Err(diverged(epoch, &params)),
                    other => other?,
                };
                epoch_loss += neural::accumulate_gradients(window, dataset.target(n), &params, &cache, &mut grads, scale)?;
            }
            if !grads.is_finite() {
                return Err(diverged(epoch, &params));
            }
            if let Some(max_norm) = config.clip_norm {
                clip_global_norm(&mut grads, max_norm);
            }
            adam_step(&mut params, &grads, &mut adam, config)?;
        }
        let train_loss = epoch_loss / order.len() as f64;
        if !train_loss.is_finite() || !params.is_finite() {
            return Err(diverged(epoch, &best.0));
        }
        let val_preds = match predict_range(&params, dataset, splits.val.clone()) {
            Err(NeuralError::NonFiniteActivation { .. }) => return Err(diverged(epoch, &best.0)),
            other => other?,
        };
        let val_loss = mse(&val_preds, &val_targets)?;
        if !val_loss.is_finite() {
            return Err(diverged(epoch, &best.0));
        }
        history.train_loss.push(train_loss);
        history.val_loss.push(val_loss);
        log::info!("epoch {:>3}/{}: train_loss={train_loss:.6e} val_loss={val_loss:.6e}", epoch + 1, config.epochs);

        let (improved, stop) = stopper.observe(epoch, val_loss);
        if improved {
            best = (params.clone(), adam.clone());
        }
        if stop {
            history.stopped_early = epoch + 1 < config.epochs;
            break;
        }
    }
    history.best_epoch = stopper.best_epoch().expect("at least one finite epoch");
    let (params, optimizer) = best;
    Ok(TrainOutcome { params, history, optimizer })
}
