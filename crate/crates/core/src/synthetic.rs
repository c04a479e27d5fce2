//! Seeded synthetic OHLCV series for demos and tests.

use chrono::{NaiveDate, TimeDelta};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::market_data::{Bar, OhlcvSeries};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SineComponent {
    pub amplitude: f64,
    /// In bars.
    pub period: f64,
    pub phase: f64,
}

/// Close = `level + Σ aₖ sin(2πt/Pₖ + φₖ) + ε`, with ε Gaussian at
/// `noise_fraction × Σ aₖ` standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiSine {
    pub points: usize,
    pub level: f64,
    pub components: Vec<SineComponent>,
    pub noise_fraction: f64,
    pub seed: u64,
}

impl Default for MultiSine {
    fn default() -> Self {
        Self {
            points: 4000,
            level: 100.0,
            components: vec![
                SineComponent { amplitude: 10.0, period: 700.0, phase: 0.0 },
                SineComponent { amplitude: 4.0, period: 350.0, phase: 1.0 },
            ],
            noise_fraction: 0.02,
            seed: 7,
        }
    }
}

impl MultiSine {
    pub fn amplitude(&self) -> f64 {
        self.components.iter().map(|c| c.amplitude).sum()
    }

    pub fn noise_sigma(&self) -> f64 {
        self.noise_fraction * self.amplitude()
    }

    /// Noise-free close at bar `t`.
    pub fn signal(&self, t: usize) -> f64 {
        self.level
            + self
                .components
                .iter()
                .map(|c| c.amplitude * (std::f64::consts::TAU * t as f64 / c.period + c.phase).sin())
                .sum::<f64>()
    }

    /// Hourly bars starting 2015-01-01 00:00, with open at the previous
    /// close and high/low widened by half-normal wicks.
    pub fn generate(&self) -> OhlcvSeries {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let sigma = self.noise_sigma();
        let noise = Normal::new(0.0, sigma.max(f64::MIN_POSITIVE)).expect("finite sigma");
        let wick = Normal::new(0.0, (sigma / 2.0).max(f64::MIN_POSITIVE)).expect("finite sigma");
        let start = NaiveDate::from_ymd_opt(2015, 1, 1).and_then(|d| d.and_hms_opt(0, 0, 0)).expect("valid date");

        let mut prev_close = None;
        let bars = (0..self.points)
            .map(|t| {
                let close = self.signal(t) + if sigma > 0.0 { noise.sample(&mut rng) } else { 0.0 };
                let open = prev_close.unwrap_or(close);
                prev_close = Some(close);
                let up: f64 = wick.sample(&mut rng);
                let down: f64 = wick.sample(&mut rng);
                Bar {
                    timestamp: start + TimeDelta::hours(t as i64),
                    open,
                    close,
                    high: open.max(close) + up.abs(),
                    low: open.min(close) - down.abs(),
                    volume: rng.random_range(1_000..100_000),
                }
            })
            .collect();
        OhlcvSeries::new(bars, TimeDelta::hours(1)).expect("generated bars satisfy invariants")
    }
}
