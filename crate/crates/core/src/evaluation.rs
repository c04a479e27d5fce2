//! Regression metrics and a long/flat backtest.

use std::fmt::Write as _;

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("empty input")]
    EmptyInput,
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("need at least {0} samples")]
    TooFewSamples(usize),
    #[error("actual values are constant; R² undefined")]
    DegenerateVariance,
    #[error("actual value at index {0} is zero; MAPE undefined")]
    ZeroActual(usize),
}

fn check(actual: &[f64], predicted: &[f64], min: usize) -> Result<(), EvalError> {
    if actual.len() != predicted.len() {
        return Err(EvalError::LengthMismatch(actual.len(), predicted.len()));
    }
    if actual.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    if actual.len() < min {
        return Err(EvalError::TooFewSamples(min));
    }
    Ok(())
}

/// Coefficient of determination, `1 - SS_res / SS_tot`.
pub fn r2_score(actual: &[f64], predicted: &[f64]) -> Result<f64, EvalError> {
    check(actual, predicted, 2)?;
    let mean = actual.iter().sum::<f64>() / actual.len() as f64;
    let ss_tot: f64 = actual.iter().map(|y| (y - mean).powi(2)).sum();
    if ss_tot == 0.0 {
        return Err(EvalError::DegenerateVariance);
    }
    let ss_res: f64 = actual.iter().zip(predicted).map(|(y, p)| (y - p).powi(2)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

pub fn mae(actual: &[f64], predicted: &[f64]) -> Result<f64, EvalError> {
    check(actual, predicted, 1)?;
    Ok(actual.iter().zip(predicted).map(|(y, p)| (y - p).abs()).sum::<f64>() / actual.len() as f64)
}

/// Mean absolute percentage error, in percent.
pub fn mape(actual: &[f64], predicted: &[f64]) -> Result<f64, EvalError> {
    check(actual, predicted, 1)?;
    if let Some(i) = actual.iter().position(|&y| y == 0.0) {
        return Err(EvalError::ZeroActual(i));
    }
    Ok(actual.iter().zip(predicted).map(|(y, p)| ((y - p) / y).abs()).sum::<f64>() / actual.len() as f64 * 100.0)
}

pub fn rmse(actual: &[f64], predicted: &[f64]) -> Result<f64, EvalError> {
    check(actual, predicted, 1)?;
    Ok((actual.iter().zip(predicted).map(|(y, p)| (y - p).powi(2)).sum::<f64>() / actual.len() as f64).sqrt())
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub r2: f64,
    pub mae: f64,
    pub rmse: f64,
    /// Percent.
    pub mape: f64,
    pub n: usize,
    /// MAE in price units, when an inverse scaling was available.
    pub mae_price: Option<f64>,
    pub rmse_price: Option<f64>,
}

impl MetricsReport {
    /// Metrics on normalized values.
    pub fn compute(actual: &[f64], predicted: &[f64]) -> Result<Self, EvalError> {
        Ok(Self {
            r2: r2_score(actual, predicted)?,
            mae: mae(actual, predicted)?,
            rmse: rmse(actual, predicted)?,
            mape: mape(actual, predicted)?,
            n: actual.len(),
            mae_price: None,
            rmse_price: None,
        })
    }

    /// Adds price-unit MAE/RMSE.
    pub fn with_prices(mut self, actual_price: &[f64], predicted_price: &[f64]) -> Result<Self, EvalError> {
        self.mae_price = Some(mae(actual_price, predicted_price)?);
        self.rmse_price = Some(rmse(actual_price, predicted_price)?);
        Ok(self)
    }

    pub const CSV_HEADER: &'static str = "model,n,r2,mae,rmse,mape,mae_price,rmse_price";

    pub fn csv_row(&self, model: &str) -> String {
        let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
        format!("{model},{},{},{},{},{},{},{}", self.n, self.r2, self.mae, self.rmse, self.mape, opt(self.mae_price), opt(self.rmse_price))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BacktestReport {
    pub directional_accuracy: f64,
    pub cumulative_return: f64,
    /// Number of flat → long entries.
    pub trade_count: usize,
    pub steps: usize,
}

impl BacktestReport {
    pub const CSV_HEADER: &'static str = "model,steps,directional_accuracy,cumulative_return,trade_count";

    pub fn csv_row(&self, model: &str) -> String {
        format!("{model},{},{},{},{}", self.steps, self.directional_accuracy, self.cumulative_return, self.trade_count)
    }
}

/// Long/flat simulation in price units, with no costs or slippage.
///
/// `predicted[t]` is the forecast for `actual[t]`. Over each step
/// `(t, t+1]` the strategy is long iff `predicted[t+1] > actual[t]`, and
/// earns `actual[t+1] / actual[t] - 1` while long. A step counts as a
/// correct direction call when the predicted and realized moves have the
/// same sign, where zero only matches zero.
pub fn backtest(actual: &[f64], predicted: &[f64]) -> Result<BacktestReport, EvalError> {
    check(actual, predicted, 2)?;
    let steps = actual.len() - 1;
    let mut wealth = 1.0;
    let mut correct = 0usize;
    let mut trades = 0usize;
    let mut long = false;
    let sign = |x: f64| if x > 0.0 { 1 } else if x < 0.0 { -1 } else { 0 };
    for t in 0..steps {
        let predicted_move = predicted[t + 1] - actual[t];
        let realized = actual[t + 1] - actual[t];
        if sign(predicted_move) == sign(realized) {
            correct += 1;
        }
        let go_long = predicted_move > 0.0;
        if go_long {
            if !long {
                trades += 1;
            }
            wealth *= actual[t + 1] / actual[t];
        }
        long = go_long;
    }
    Ok(BacktestReport {
        directional_accuracy: correct as f64 / steps as f64,
        cumulative_return: wealth - 1.0,
        trade_count: trades,
        steps,
    })
}

/// Results table laid out as model rows × (R², MAE, RMSE, MAPE), ranked by
/// R² and with the best value in each column marked `*`.
pub fn format_table(title: &str, rows: &[(String, MetricsReport)]) -> String {
    let mut ranked: Vec<&(String, MetricsReport)> = rows.iter().collect();
    ranked.sort_by(|a, b| b.1.r2.total_cmp(&a.1.r2));
    let best_of = |f: fn(&MetricsReport) -> f64, higher: bool| {
        rows.iter().map(|(_, m)| f(m)).fold(if higher { f64::NEG_INFINITY } else { f64::INFINITY }, |acc, v| if higher { acc.max(v) } else { acc.min(v) })
    };
    let best = [best_of(|m| m.r2, true), best_of(|m| m.mae, false), best_of(|m| m.rmse, false), best_of(|m| m.mape, false)];
    let width = rows.iter().map(|(n, _)| n.len()).max().unwrap_or(5).max(5);

    let mut s = String::new();
    let _ = writeln!(s, "{title}");
    let _ = writeln!(s, "{:<width$}  {:>11}  {:>11}  {:>11}  {:>11}", "Model", "R2", "MAE", "RMSE", "MAPE");
    for (name, m) in ranked {
        let cells: Vec<String> = [(m.r2, 4), (m.mae, 6), (m.rmse, 6), (m.mape, 4)]
            .iter()
            .zip(best)
            .map(|(&(v, prec), b)| format!("{v:.prec$}{}", if v == b { "*" } else { " " }))
            .collect();
        let _ = writeln!(s, "{name:<width$}  {:>11}  {:>11}  {:>11}  {:>11}", cells[0], cells[1], cells[2], cells[3]);
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn metric_examples() {
        let y = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(r2_score(&y, &y).unwrap(), 1.0);
        assert_eq!(r2_score(&y, &[2.5; 4]).unwrap(), 0.0);
        assert_eq!(r2_score(&[1.0, 1.0], &[1.0, 2.0]), Err(EvalError::DegenerateVariance));
        assert_eq!(r2_score(&[1.0], &[1.0]), Err(EvalError::TooFewSamples(2)));

        assert_eq!(mae(&y, &y).unwrap(), 0.0);
        assert_eq!(mae(&[1.0, 2.0], &[2.0, 4.0]).unwrap(), 1.5);
        assert_eq!(mae(&[], &[]), Err(EvalError::EmptyInput));

        assert_eq!(mape(&y, &y).unwrap(), 0.0);
        assert!((mape(&[100.0], &[101.0]).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(mape(&[1.0, 0.0], &[1.0, 1.0]), Err(EvalError::ZeroActual(1)));

        assert_eq!(rmse(&y, &y).unwrap(), 0.0);
        assert!((rmse(&[0.0, 0.0], &[3.0, 4.0]).unwrap() - 12.5f64.sqrt()).abs() < 1e-12);
        assert!((rmse(&[0.0, 0.0], &[3.0, 4.0]).unwrap() - 3.5355).abs() < 1e-4);
        assert_eq!(rmse(&[1.0], &[1.0, 2.0]), Err(EvalError::LengthMismatch(1, 2)));
    }

    #[test]
    fn backtest_examples() {
        let actual = [10.0, 11.0, 10.5, 12.0, 12.0, 11.0];
        let perfect = backtest(&actual, &actual).unwrap();
        assert_eq!(perfect.directional_accuracy, 1.0);
        // long on the two up-moves only
        assert!((perfect.cumulative_return - (1.1 * 12.0 / 10.5 - 1.0)).abs() < 1e-12);
        assert_eq!(perfect.trade_count, 2);

        let flat = backtest(&[5.0; 10], &[5.0; 10]).unwrap();
        assert_eq!(flat.cumulative_return, 0.0);
        assert_eq!(flat.trade_count, 0);
        assert_eq!(flat.directional_accuracy, 1.0);

        // predicted flat against a moving market is always wrong
        let wrong = backtest(&[1.0, 2.0, 3.0], &[1.0, 1.0, 2.0]).unwrap();
        assert_eq!(wrong.directional_accuracy, 0.0);

        assert_eq!(backtest(&[1.0], &[1.0]), Err(EvalError::TooFewSamples(2)));
        assert_eq!(backtest(&[1.0, 2.0], &[1.0]), Err(EvalError::LengthMismatch(2, 1)));
    }

    #[test]
    fn table_marks_best_values() {
        let a = MetricsReport { r2: 0.99, mae: 0.01, rmse: 0.02, mape: 1.0, n: 10, mae_price: None, rmse_price: None };
        let b = MetricsReport { r2: 0.95, mae: 0.005, rmse: 0.03, mape: 2.0, ..a.clone() };
        let t = format_table("demo", &[("weak".into(), b), ("strong".into(), a)]);
        let lines: Vec<&str> = t.lines().collect();
        assert_eq!(lines.len(), 4);
        assert!(lines[2].starts_with("strong") && lines[2].contains("0.9900*"));
        assert!(lines[3].contains("0.005000*"));
    }

    #[test]
    fn csv_rows() {
        let m = MetricsReport { r2: 0.5, mae: 0.25, rmse: 0.5, mape: 10.0, n: 4, mae_price: Some(2.0), rmse_price: None };
        assert_eq!(m.csv_row("x"), "x,4,0.5,0.25,0.5,10,2,");
    }

    proptest! {
        #[test]
        fn metric_invariants(seed in any::<u64>(), n in 2usize..60, a in 0.1f64..10.0, b in -5.0f64..5.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let y: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..2.0)).collect();
            let p: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..2.0)).collect();
            prop_assert!(rmse(&y, &p).unwrap() >= mae(&y, &p).unwrap());
            let r2 = r2_score(&y, &p).unwrap();
            prop_assert!(r2 <= 1.0);

            let ya: Vec<f64> = y.iter().map(|v| a * v + b).collect();
            let pa: Vec<f64> = p.iter().map(|v| a * v + b).collect();
            prop_assert!((r2_score(&ya, &pa).unwrap() - r2).abs() < 1e-9);

            let yt: Vec<f64> = y.iter().map(|v| v + b).collect();
            let pt: Vec<f64> = p.iter().map(|v| v + b).collect();
            prop_assert!((mae(&yt, &pt).unwrap() - mae(&y, &p).unwrap()).abs() < 1e-9);
            prop_assert!((rmse(&yt, &pt).unwrap() - rmse(&y, &p).unwrap()).abs() < 1e-9);

            let ys: Vec<f64> = y.iter().map(|v| -a * v).collect();
            let ps: Vec<f64> = p.iter().map(|v| -a * v).collect();
            prop_assert!((mae(&ys, &ps).unwrap() - a * mae(&y, &p).unwrap()).abs() < 1e-9);
            prop_assert!((rmse(&ys, &ps).unwrap() - a * rmse(&y, &p).unwrap()).abs() < 1e-9);
        }
    }
}
