//! Independent reference implementations used as test oracles.
//!
//! Each oracle is written from the defining formula, not from the library's
//! code path: indicators use explicit windows or closed-form weights, the
//! gradient check uses central differences, Adam is a per-scalar loop.

#![allow(dead_code)]

use forecast_core::neural::{self, ModelParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Positive random walk starting at 100 with uniform(-1, 1) steps.
pub fn random_walk(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = 100.0;
    (0..n)
        .map(|_| {
            x += rng.random_range(-1.0..1.0);
            x
        })
        .collect()
}

pub fn sma(c: &[f64], p: usize) -> Vec<Option<f64>> {
    (0..c.len()).map(|t| (t + 1 >= p).then(|| c[t + 1 - p..=t].iter().sum::<f64>() / p as f64)).collect()
}

/// EMA as an explicit weighted sum: every close after the seed contributes
/// `α(1-α)^age`, the SMA seed contributes `(1-α)^(t-p+1)`.
pub fn ema(c: &[f64], p: usize, k: f64) -> Vec<Option<f64>> {
    let a = k / (p as f64 + 1.0);
    let seed = c[..p].iter().sum::<f64>() / p as f64;
    (0..c.len())
        .map(|t| {
            (t + 1 >= p).then(|| {
                let steps = t + 1 - p;
                let recent: f64 = (0..steps).map(|age| a * (1.0 - a).powi(age as i32) * c[t - age]).sum();
                recent + (1.0 - a).powi(steps as i32) * seed
            })
        })
        .collect()
}

/// SMA of SMA written as one triangular-weighted sum: weight of lag `j`
/// is the number of (i, l) pairs with i + l = j, i, l < p, over p².
pub fn trima_literal(c: &[f64], p: usize) -> Vec<Option<f64>> {
    let weights: Vec<f64> = (0..2 * p - 1).map(|j| (p - (j as isize - (p as isize - 1)).unsigned_abs()) as f64).collect();
    let total = (p * p) as f64;
    (0..c.len())
        .map(|t| (t + 2 >= 2 * p).then(|| weights.iter().enumerate().map(|(j, w)| w * c[t - j]).sum::<f64>() / total))
        .collect()
}

pub fn kama(c: &[f64], p: usize, fast: usize, slow: usize) -> Vec<Option<f64>> {
    let fsc = 2.0 / (fast as f64 + 1.0);
    let ssc = 2.0 / (slow as f64 + 1.0);
    let mut out = vec![None; c.len()];
    let mut prev = c[p];
    out[p] = Some(prev);
    for t in p + 1..c.len() {
        let window = &c[t - p..=t];
        let direction = (window[p] - window[0]).abs();
        let mut volatility = 0.0;
        for pair in window.windows(2) {
            volatility += (pair[1] - pair[0]).abs();
        }
        let er = if volatility > 0.0 { direction / volatility } else { 0.0 };
        let sc = (er * (fsc - ssc) + ssc) * (er * (fsc - ssc) + ssc);
        prev = prev + sc * (c[t] - prev);
        out[t] = Some(prev);
    }
    out
}

/// (lower, middle, upper) with the population deviation of each window.
pub fn bollinger(c: &[f64], p: usize, dev: f64) -> [Vec<Option<f64>>; 3] {
    let stats: Vec<Option<(f64, f64)>> = (0..c.len())
        .map(|t| {
            (t + 1 >= p).then(|| {
                let w = &c[t + 1 - p..=t];
                let mean = w.iter().sum::<f64>() / p as f64;
                let var = w.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / p as f64;
                (mean, var.sqrt())
            })
        })
        .collect();
    [
        stats.iter().map(|s| s.map(|(m, sd)| m - dev * sd)).collect(),
        stats.iter().map(|s| s.map(|(m, _)| m)).collect(),
        stats.iter().map(|s| s.map(|(m, sd)| m + dev * sd)).collect(),
    ]
}

/// Largest absolute difference; `None` when definedness differs anywhere.
pub fn max_abs_diff(got: &[Option<f64>], want: &[Option<f64>]) -> Option<f64> {
    if got.len() != want.len() {
        return None;
    }
    got.iter().zip(want).try_fold(0.0f64, |acc, pair| match pair {
        (Some(a), Some(b)) => Some(acc.max((a - b).abs())),
        (None, None) => Some(acc),
        _ => None,
    })
}

/// Squared-error loss of one window.
pub fn loss(window: &[f64], target: f64, params: &ModelParams) -> f64 {
    let p = neural::predict(window, params).unwrap();
    (p - target) * (p - target)
}

/// Worst relative error `|a - n| / max(|a|, |n|, 1e-6)` between analytic
/// BPTT gradients and central differences, per tensor name.
pub fn gradient_check(window: &[f64], target: f64, params: &ModelParams, eps: f64) -> Vec<(&'static str, f64)> {
    let cache = neural::sequence_forward(window, params).unwrap();
    let (grads, _) = neural::backward(window, target, params, &cache).unwrap();
    let names: Vec<&'static str> = params.tensors().iter().map(|(n, _)| *n).collect();
    let analytic: Vec<Vec<f64>> = grads.tensors().iter().map(|(_, t)| t.to_vec()).collect();

    let mut probe = params.clone();
    let mut worst = Vec::new();
    for (ti, name) in names.iter().enumerate() {
        let mut w = 0.0f64;
        for (k, &a) in analytic[ti].iter().enumerate() {
            let orig = probe.tensors_mut()[ti][k];
            probe.tensors_mut()[ti][k] = orig + eps;
            let up = loss(window, target, &probe);
            probe.tensors_mut()[ti][k] = orig - eps;
            let down = loss(window, target, &probe);
            probe.tensors_mut()[ti][k] = orig;
            let numeric = (up - down) / (2.0 * eps);
            w = w.max((a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6));
        }
        worst.push((*name, w));
    }
    worst
}

/// Scalar Adam with bias correction, one parameter at a time.
#[derive(Debug, Clone, Default)]
pub struct ScalarAdam {
    pub m: f64,
    pub v: f64,
    pub t: i32,
}

impl ScalarAdam {
    pub fn step(&mut self, theta: f64, g: f64, lr: f64, b1: f64, b2: f64, eps: f64) -> f64 {
        self.t += 1;
        self.m = b1 * self.m + (1.0 - b1) * g;
        self.v = b2 * self.v + (1.0 - b2) * g * g;
        let m_hat = self.m / (1.0 - b1.powi(self.t));
        let v_hat = self.v / (1.0 - b2.powi(self.t));
        theta - lr * m_hat / (v_hat.sqrt() + eps)
    }
}

/// Median of three or more values.
pub fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        (xs[n / 2 - 1] + xs[n / 2]) / 2.0
    }
}
