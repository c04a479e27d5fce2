//! LSTM and bidirectional LSTM regressors with hand-written BPTT.
//!
//! Gate pre-activations are stacked in one `4H`-row block per tensor, in the
//! order input, forget, output, candidate:
//!
//! ```text
//! i = σ(W_i x + U_i h + b_i)     f = σ(W_f x + U_f h + b_f)
//! o = σ(W_o x + U_o h + b_o)     g = tanh(W_g x + U_g h + b_g)
//! c' = f ⊙ c + i ⊙ g             h' = o ⊙ tanh(c')
//! ```
//!
//! A window is a row-major `W × F` slice. The unidirectional model pools the
//! final hidden state; the bidirectional model concatenates the final
//! forward state with the final state of a second LSTM run over the reversed
//! window. A linear head maps the pooled vector to one scalar.
//!
//! # Checkpoint layout
//!
//! Little-endian throughout: the 8-byte magic `FCMODEL1`, `u32` format
//! version (1), `u32` direction (0 = unidirectional, 1 = bidirectional),
//! `u64` hidden size, `u64` input features, `u64` output dim (always 1),
//! `u64` tensor count, then each tensor as a `u64` length followed by its
//! `f64` values. Tensor order is [`ModelParams::TENSOR_NAMES`] order with the
//! `backward.*` entries present only for bidirectional models.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const GATES: usize = 4;
const INPUT: usize = 0;
const FORGET: usize = 1;
const OUTPUT: usize = 2;
const CANDIDATE: usize = 3;

#[derive(Debug, Error)]
pub enum NeuralError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite activation at step {step}")]
    NonFiniteActivation { step: usize },
    #[error("forward cache does not belong to these parameters or this window")]
    StaleCache,
    #[error("checkpoint: {0}")]
    Format(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Direction {
    #[serde(rename = "uni", alias = "unidirectional")]
    Unidirectional,
    #[serde(rename = "bi", alias = "bidirectional")]
    Bidirectional,
}

impl Direction {
    pub fn short_name(self) -> &'static str {
        match self {
            Direction::Unidirectional => "uni",
            Direction::Bidirectional => "bi",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelSpec {
    pub direction: Direction,
    pub hidden: usize,
    pub features: usize,
}

impl ModelSpec {
    pub fn pooled_dim(&self) -> usize {
        match self.direction {
            Direction::Unidirectional => self.hidden,
            Direction::Bidirectional => 2 * self.hidden,
        }
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let (ac, bc) = (a.chunks_exact(4), b.chunks_exact(4));
    let (ar, br) = (ac.remainder(), bc.remainder());
    for (x, y) in ac.zip(bc) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut tail = 0.0;
    for (x, y) in ar.iter().zip(br) {
        tail += x * y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Parameters of one LSTM layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams {
    pub hidden: usize,
    pub features: usize,
    /// `4H × F`, row-major.
    pub w_input: Vec<f64>,
    /// `4H × H`, row-major.
    pub w_recurrent: Vec<f64>,
    /// `4H`.
    pub bias: Vec<f64>,
}

impl LstmParams {
    pub fn zeros(hidden: usize, features: usize) -> Self {
        Self {
            hidden,
            features,
            w_input: vec![0.0; GATES * hidden * features],
            w_recurrent: vec![0.0; GATES * hidden * hidden],
            bias: vec![0.0; GATES * hidden],
        }
    }

    /// Weights uniform in `±1/√H`; biases zero except the forget gate at 1.
    pub fn init<R: Rng + ?Sized>(hidden: usize, features: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (hidden as f64).sqrt();
        let mut p = Self::zeros(hidden, features);
        for w in p.w_input.iter_mut().chain(p.w_recurrent.iter_mut()) {
            *w = rng.random_range(-bound..bound);
        }
        p.bias[FORGET * hidden..(FORGET + 1) * hidden].fill(1.0);
        p
    }

    fn check(&self) -> Result<(), NeuralError> {
        let (h, f) = (self.hidden, self.features);
        if self.w_input.len() != GATES * h * f || self.w_recurrent.len() != GATES * h * h || self.bias.len() != GATES * h {
            return Err(NeuralError::ShapeMismatch(format!("LSTM tensors inconsistent with H={h}, F={f}")));
        }
        Ok(())
    }

    /// Writes activated gates `[i, f, o, g]` into `gates` and the new state
    /// into `c`, `tanh_c`, `h`.
    #[allow(clippy::too_many_arguments, clippy::needless_range_loop)]
    fn step(&self, x: &[f64], h_prev: &[f64], c_prev: &[f64], gates: &mut [f64], c: &mut [f64], tanh_c: &mut [f64], h: &mut [f64]) {
        let (hd, f) = (self.hidden, self.features);
        for r in 0..GATES * hd {
            let pre = self.bias[r] + dot(&self.w_input[r * f..(r + 1) * f], x) + dot(&self.w_recurrent[r * hd..(r + 1) * hd], h_prev);
            gates[r] = if r >= CANDIDATE * hd { pre.tanh() } else { sigmoid(pre) };
        }
        for j in 0..hd {
            let (i, fg, o, g) = (gates[j], gates[FORGET * hd + j], gates[OUTPUT * hd + j], gates[CANDIDATE * hd + j]);
            c[j] = fg * c_prev[j] + i * g;
            tanh_c[j] = c[j].tanh();
            h[j] = o * tanh_c[j];
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

impl LstmState {
    pub fn zeros(hidden: usize) -> Self {
        Self { h: vec![0.0; hidden], c: vec![0.0; hidden] }
    }
}

/// Activations of a single cell step.
#[derive(Debug, Clone, PartialEq)]
pub struct CellCache {
    /// Activated gates, `[i, f, o, g]` blocks of `H`.
    pub gates: Vec<f64>,
    pub tanh_c: Vec<f64>,
}

/// One LSTM cell step.
pub fn cell_forward(x: &[f64], prev: &LstmState, params: &LstmParams) -> Result<(LstmState, CellCache), NeuralError> {
    params.check()?;
    let hd = params.hidden;
    if x.len() != params.features || prev.h.len() != hd || prev.c.len() != hd {
        return Err(NeuralError::ShapeMismatch(format!(
            "x has {} entries (want {}), state has {}/{} (want {hd})",
            x.len(),
            params.features,
            prev.h.len(),
            prev.c.len()
        )));
    }
    let mut next = LstmState::zeros(hd);
    let mut cache = CellCache { gates: vec![0.0; GATES * hd], tanh_c: vec![0.0; hd] };
    params.step(x, &prev.h, &prev.c, &mut cache.gates, &mut next.c, &mut cache.tanh_c, &mut next.h);
    if next.c.iter().chain(&next.h).any(|v| !v.is_finite()) {
        return Err(NeuralError::NonFiniteActivation { step: 0 });
    }
    Ok((next, cache))
}

/// Full learnable parameter set: one or two LSTM layers plus a linear head.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub spec: ModelSpec,
    pub forward: LstmParams,
    pub backward: Option<LstmParams>,
    /// `1 × pooled_dim`.
    pub head_weight: Vec<f64>,
    /// Length 1.
    pub head_bias: Vec<f64>,
}

/// Gradients share the parameter layout.
pub type Gradients = ModelParams;

impl ModelParams {
    pub const TENSOR_NAMES: [&'static str; 8] = [
        "forward.w_input",
        "forward.w_recurrent",
        "forward.bias",
        "backward.w_input",
        "backward.w_recurrent",
        "backward.bias",
        "head.weight",
        "head.bias",
    ];

    pub fn zeros(spec: ModelSpec) -> Self {
        Self {
            spec,
            forward: LstmParams::zeros(spec.hidden, spec.features),
            backward: (spec.direction == Direction::Bidirectional).then(|| LstmParams::zeros(spec.hidden, spec.features)),
            head_weight: vec![0.0; spec.pooled_dim()],
            head_bias: vec![0.0],
        }
    }

    /// Draws forward layer, backward layer, then head weights from `rng`.
    pub fn init<R: Rng + ?Sized>(spec: ModelSpec, rng: &mut R) -> Self {
        let forward = LstmParams::init(spec.hidden, spec.features, rng);
        let backward = (spec.direction == Direction::Bidirectional).then(|| LstmParams::init(spec.hidden, spec.features, rng));
        let bound = 1.0 / (spec.hidden as f64).sqrt();
        let head_weight = (0..spec.pooled_dim()).map(|_| rng.random_range(-bound..bound)).collect();
        Self { spec, forward, backward, head_weight, head_bias: vec![0.0] }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.spec)
    }

    /// Named tensors in checkpoint order.
    pub fn tensors(&self) -> Vec<(&'static str, &[f64])> {
        let mut out: Vec<(&'static str, &[f64])> = vec![
            (Self::TENSOR_NAMES[0], &self.forward.w_input),
            (Self::TENSOR_NAMES[1], &self.forward.w_recurrent),
            (Self::TENSOR_NAMES[2], &self.forward.bias),
        ];
        if let Some(b) = &self.backward {
            out.push((Self::TENSOR_NAMES[3], &b.w_input));
            out.push((Self::TENSOR_NAMES[4], &b.w_recurrent));
            out.push((Self::TENSOR_NAMES[5], &b.bias));
        }
        out.push((Self::TENSOR_NAMES[6], &self.head_weight));
        out.push((Self::TENSOR_NAMES[7], &self.head_bias));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let Self { forward, backward, head_weight, head_bias, .. } = self;
        let mut out: Vec<&mut [f64]> = vec![&mut forward.w_input, &mut forward.w_recurrent, &mut forward.bias];
        if let Some(b) = backward {
            out.push(&mut b.w_input);
            out.push(&mut b.w_recurrent);
            out.push(&mut b.bias);
        }
        out.push(head_weight);
        out.push(head_bias);
        out
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.iter().all(|v| v.is_finite()))
    }

    /// Cheap content hash used to tie forward caches to parameters.
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for (_, t) in self.tensors() {
            for v in t {
                h = (h.rotate_left(5) ^ v.to_bits()).wrapping_mul(0x100_0000_01b3);
            }
        }
        h
    }

    fn check(&self) -> Result<(), NeuralError> {
        let s = self.spec;
        self.forward.check()?;
        let layers_ok = self.forward.hidden == s.hidden
            && self.forward.features == s.features
            && match (&self.backward, s.direction) {
                (None, Direction::Unidirectional) => true,
                (Some(b), Direction::Bidirectional) => {
                    b.check()?;
                    b.hidden == s.hidden && b.features == s.features
                }
                _ => false,
            };
        if !layers_ok || self.head_weight.len() != s.pooled_dim() || self.head_bias.len() != 1 {
            return Err(NeuralError::ShapeMismatch(format!("parameters inconsistent with {s:?}")));
        }
        Ok(())
    }

    const MAGIC: &'static [u8; 8] = b"FCMODEL1";

    pub fn write_to<W: Write>(&self, writer: W) -> Result<(), NeuralError> {
        let mut w = BufWriter::new(writer);
        w.write_all(Self::MAGIC)?;
        w.write_all(&1u32.to_le_bytes())?;
        let dir: u32 = match self.spec.direction {
            Direction::Unidirectional => 0,
            Direction::Bidirectional => 1,
        };
        w.write_all(&dir.to_le_bytes())?;
        let tensors = self.tensors();
        for v in [self.spec.hidden, self.spec.features, 1, tensors.len()] {
            w.write_all(&(v as u64).to_le_bytes())?;
        }
        write_tensors(&mut w, tensors.iter().map(|(_, t)| *t))?;
        w.flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(reader: R) -> Result<Self, NeuralError> {
        let mut r = BufReader::new(reader);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != Self::MAGIC {
            return Err(NeuralError::Format("bad magic".into()));
        }
        let version = read_u32(&mut r)?;
        if version != 1 {
            return Err(NeuralError::Format(format!("unsupported version {version}")));
        }
        let direction = match read_u32(&mut r)? {
            0 => Direction::Unidirectional,
            1 => Direction::Bidirectional,
            d => return Err(NeuralError::Format(format!("unknown direction {d}"))),
        };
        let hidden = read_u64(&mut r)? as usize;
        let features = read_u64(&mut r)? as usize;
        if read_u64(&mut r)? != 1 {
            return Err(NeuralError::Format("only scalar output heads are supported".into()));
        }
        let mut params = Self::zeros(ModelSpec { direction, hidden, features });
        let count = read_u64(&mut r)? as usize;
        let mut slots = params.tensors_mut();
        if count != slots.len() {
            return Err(NeuralError::Format(format!("expected {} tensors, found {count}", slots.len())));
        }
        read_tensors(&mut r, &mut slots)?;
        Ok(params)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), NeuralError> {
        self.write_to(File::create(path)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, NeuralError> {
        Self::read_from(File::open(path)?)
    }
}

/// Each tensor as a `u64` length and little-endian `f64` values.
pub fn write_tensors<'a, W: Write>(w: &mut W, tensors: impl IntoIterator<Item = &'a [f64]>) -> Result<(), NeuralError> {
    for t in tensors {
        w.write_all(&(t.len() as u64).to_le_bytes())?;
        for v in t {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

/// Reads tensors written by [`write_tensors`] into pre-shaped slots.
pub fn read_tensors<R: Read>(r: &mut R, slots: &mut [&mut [f64]]) -> Result<(), NeuralError> {
    for slot in slots.iter_mut() {
        let len = read_u64(r)? as usize;
        if len != slot.len() {
            return Err(NeuralError::Format(format!("tensor length {len}, expected {}", slot.len())));
        }
        for v in slot.iter_mut() {
            *v = f64::from_bits(read_u64(r)?);
        }
    }
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32, NeuralError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub(crate) fn read_u64<R: Read>(r: &mut R) -> Result<u64, NeuralError> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

/// Per-step activations of one direction, each `steps × (4H | H)` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectionCache {
    pub gates: Vec<f64>,
    pub c: Vec<f64>,
    pub tanh_c: Vec<f64>,
    pub h: Vec<f64>,
    pub reversed: bool,
}

impl DirectionCache {
    fn final_hidden(&self, hidden: usize) -> &[f64] {
        &self.h[self.h.len() - hidden..]
    }
}

/// Everything the backward pass needs from a forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardCache {
    fingerprint: u64,
    steps: usize,
    pub forward: DirectionCache,
    pub backward: Option<DirectionCache>,
    pub pooled: Vec<f64>,
    pub prediction: f64,
}

fn run_direction(p: &LstmParams, window: &[f64], steps: usize, reversed: bool) -> Result<DirectionCache, NeuralError> {
    let (hd, f) = (p.hidden, p.features);
    let mut cache = DirectionCache {
        gates: vec![0.0; steps * GATES * hd],
        c: vec![0.0; steps * hd],
        tanh_c: vec![0.0; steps * hd],
        h: vec![0.0; steps * hd],
        reversed,
    };
    let zeros = vec![0.0; hd];
    for s in 0..steps {
        let row = if reversed { steps - 1 - s } else { s };
        let x = &window[row * f..(row + 1) * f];
        let (h_done, h_rest) = cache.h.split_at_mut(s * hd);
        let (c_done, c_rest) = cache.c.split_at_mut(s * hd);
        let (h_prev, c_prev) = if s == 0 { (&zeros[..], &zeros[..]) } else { (&h_done[(s - 1) * hd..], &c_done[(s - 1) * hd..]) };
        let c = &mut c_rest[..hd];
        let h = &mut h_rest[..hd];
        p.step(
            x,
            h_prev,
            c_prev,
            &mut cache.gates[s * GATES * hd..(s + 1) * GATES * hd],
            c,
            &mut cache.tanh_c[s * hd..(s + 1) * hd],
            h,
        );
        if c.iter().chain(h.iter()).any(|v| !v.is_finite()) {
            return Err(NeuralError::NonFiniteActivation { step: s });
        }
    }
    Ok(cache)
}

fn window_steps(window: &[f64], spec: &ModelSpec) -> Result<usize, NeuralError> {
    let f = spec.features;
    if f == 0 || window.is_empty() || !window.len().is_multiple_of(f) {
        return Err(NeuralError::ShapeMismatch(format!("window of {} values is not a whole number of {f}-feature rows", window.len())));
    }
    Ok(window.len() / f)
}

/// Runs the recurrent layer(s) over a row-major `W × F` window from a zero
/// state and applies the head.
pub fn sequence_forward(window: &[f64], params: &ModelParams) -> Result<ForwardCache, NeuralError> {
    params.check()?;
    let steps = window_steps(window, &params.spec)?;
    let hd = params.spec.hidden;
    let forward = run_direction(&params.forward, window, steps, false)?;
    let backward = params.backward.as_ref().map(|b| run_direction(b, window, steps, true)).transpose()?;
    let mut pooled = forward.final_hidden(hd).to_vec();
    if let Some(b) = &backward {
        pooled.extend_from_slice(b.final_hidden(hd));
    }
    let prediction = params.head_bias[0] + dot(&params.head_weight, &pooled);
    Ok(ForwardCache { fingerprint: params.fingerprint(), steps, forward, backward, pooled, prediction })
}

/// Scalar next-step prediction (linear output).
pub fn predict(window: &[f64], params: &ModelParams) -> Result<f64, NeuralError> {
    Ok(sequence_forward(window, params)?.prediction)
}

/// Gradient of `(prediction - target)²` with respect to every parameter.
pub fn backward(window: &[f64], target: f64, params: &ModelParams, cache: &ForwardCache) -> Result<(Gradients, f64), NeuralError> {
    let mut grads = params.zeros_like();
    let loss = accumulate_gradients(window, target, params, cache, &mut grads, 1.0)?;
    Ok((grads, loss))
}

/// Adds `scale · ∂L/∂θ` into `grads` and returns the unscaled loss
/// `L = (prediction - target)²`.
pub fn accumulate_gradients(
    window: &[f64],
    target: f64,
    params: &ModelParams,
    cache: &ForwardCache,
    grads: &mut Gradients,
    scale: f64,
) -> Result<f64, NeuralError> {
    let steps = window_steps(window, &params.spec)?;
    if steps != cache.steps || cache.backward.is_some() != params.backward.is_some() || cache.fingerprint != params.fingerprint() {
        return Err(NeuralError::StaleCache);
    }
    if grads.spec != params.spec {
        return Err(NeuralError::ShapeMismatch("gradient buffer spec differs from parameters".into()));
    }
    let err = cache.prediction - target;
    let d_pred = scale * 2.0 * err;
    let hd = params.spec.hidden;

    axpy(d_pred, &cache.pooled, &mut grads.head_weight);
    grads.head_bias[0] += d_pred;
    let d_pooled: Vec<f64> = params.head_weight.iter().map(|w| d_pred * w).collect();

    backprop_direction(&params.forward, &mut grads.forward, window, &cache.forward, &d_pooled[..hd]);
    if let (Some(p), Some(g), Some(c)) = (&params.backward, grads.backward.as_mut(), &cache.backward) {
        backprop_direction(p, g, window, c, &d_pooled[hd..]);
    }
    Ok(err * err)
}

fn backprop_direction(p: &LstmParams, g: &mut LstmParams, window: &[f64], cache: &DirectionCache, d_h_final: &[f64]) {
    let (hd, f) = (p.hidden, p.features);
    let steps = cache.h.len() / hd;
    let mut dh_next = vec![0.0; hd];
    let mut dc_next = vec![0.0; hd];
    let mut da = vec![0.0; GATES * hd];

    for s in (0..steps).rev() {
        let row = if cache.reversed { steps - 1 - s } else { s };
        let x = &window[row * f..(row + 1) * f];
        let gates = &cache.gates[s * GATES * hd..(s + 1) * GATES * hd];
        let tanh_c = &cache.tanh_c[s * hd..(s + 1) * hd];
        for j in 0..hd {
            let dh = dh_next[j] + if s == steps - 1 { d_h_final[j] } else { 0.0 };
            let (i, fg, o, gc) = (gates[j], gates[FORGET * hd + j], gates[OUTPUT * hd + j], gates[CANDIDATE * hd + j]);
            let tc = tanh_c[j];
            let c_prev = if s > 0 { cache.c[(s - 1) * hd + j] } else { 0.0 };
            let dc = dc_next[j] + dh * o * (1.0 - tc * tc);
            da[INPUT * hd + j] = dc * gc * i * (1.0 - i);
            da[FORGET * hd + j] = dc * c_prev * fg * (1.0 - fg);
            da[OUTPUT * hd + j] = dh * tc * o * (1.0 - o);
            da[CANDIDATE * hd + j] = dc * i * (1.0 - gc * gc);
            dc_next[j] = dc * fg;
        }
        dh_next.fill(0.0);
        let h_prev = (s > 0).then(|| &cache.h[(s - 1) * hd..s * hd]);
        for (r, &d) in da.iter().enumerate() {
            g.bias[r] += d;
            axpy(d, x, &mut g.w_input[r * f..(r + 1) * f]);
            if let Some(h_prev) = h_prev {
                axpy(d, h_prev, &mut g.w_recurrent[r * hd..(r + 1) * hd]);
            }
            axpy(d, &p.w_recurrent[r * hd..(r + 1) * hd], &mut dh_next);
        }
    }
}
