//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
//! fails. Runs under `cargo test` (harness = false).

mod common;

use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use chrono::{NaiveDate, TimeDelta};
use forecast_core::evaluation::{mae, mape, r2_score, rmse};
use forecast_core::frame::FeatureFrame;
use forecast_core::indicators::{self, IndicatorParams};
use forecast_core::market_data;
use forecast_core::neural::{Direction, ModelParams, ModelSpec};
use forecast_core::pipeline::{self, DatasetConfig};
use forecast_core::runner::{self, ExperimentConfig, RunArtifacts, Variant};
use forecast_core::synthetic::MultiSine;
use forecast_core::training::{adam_step, AdamState, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict { pass, detail: detail.into() }
}

fn hourly_frame(cols: Vec<(&str, Vec<f64>)>) -> FeatureFrame {
    let t0 = NaiveDate::from_ymd_opt(2015, 1, 1).unwrap().and_hms_opt(0, 0, 0).unwrap();
    let idx = (0..cols[0].1.len()).map(|i| t0 + TimeDelta::hours(i as i64)).collect();
    FeatureFrame::new(idx, cols.into_iter().map(|(n, v)| (n.to_string(), v)).collect()).unwrap()
}

fn window_counts() -> Verdict {
    let f = hourly_frame(vec![("close", common::random_walk(10862, 1))]);
    let (ds, _) = pipeline::prepare(&f, "close", &DatasetConfig::default()).unwrap();
    let s = ds.splits().unwrap();
    let got = (ds.len(), s.train.len(), s.val.len(), s.test.len());
    verdict(got == (10838, 7586, 1626, 1626), format!("T=10862 W=24 -> windows {} split {}/{}/{}", got.0, got.1, got.2, got.3))
}

fn indicator_oracles() -> Verdict {
    let mut worst = 0.0f64;
    let mut aligned = true;
    for seed in 0..20 {
        let c = common::random_walk(1000, seed);
        let bb = indicators::bollinger(&c, 20, 2.0).unwrap();
        let [lo, mid, up] = common::bollinger(&c, 20, 2.0);
        let pairs = [
            (indicators::sma(&c, 5).unwrap().values, common::sma(&c, 5)),
            (indicators::ema(&c, 5, 2.0).unwrap().values, common::ema(&c, 5, 2.0)),
            (indicators::trima(&c, 5).unwrap().values, common::trima_literal(&c, 5)),
            (indicators::kama(&c, 10, 2, 30).unwrap().values, common::kama(&c, 10, 2, 30)),
            (bb.lower.values, lo),
            (bb.middle.values, mid),
            (bb.upper.values, up),
        ];
        for (got, want) in &pairs {
            match common::max_abs_diff(got, want) {
                Some(d) => worst = worst.max(d),
                None => aligned = false,
            }
        }
    }
    verdict(aligned && worst <= 1e-9, format!("7 indicators x 20 walks, max |diff| {worst:.2e} (tol 1e-9), warm-ups aligned: {aligned}"))
}

fn gradient_check() -> Verdict {
    let mut worst = (0.0f64, String::new());
    for direction in [Direction::Unidirectional, Direction::Bidirectional] {
        for seed in 0..20 {
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
            let params = ModelParams::init(ModelSpec { direction, hidden: 4, features: 3 }, &mut rng);
            let window: Vec<f64> = (0..6 * 3).map(|_| rng.random_range(0.0..1.0)).collect();
            let target = rng.random_range(0.0..1.0);
            for (name, err) in common::gradient_check(&window, target, &params, 1e-5) {
                if err > worst.0 {
                    worst = (err, format!("{} {name} seed {seed}", direction.short_name()));
                }
            }
        }
    }
    verdict(worst.0 <= 1e-4, format!("H=4 F=3 W=6, 20 seeds x uni/bi, all tensors: max rel err {:.2e} at {} (tol 1e-4)", worst.0, worst.1))
}

fn adam_reference() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut params = ModelParams::init(ModelSpec { direction: Direction::Bidirectional, hidden: 4, features: 3 }, &mut rng);
    let config = TrainConfig::default();
    let mut state = AdamState::new(&params);
    let mut reference: Vec<f64> = params.tensors().iter().flat_map(|(_, t)| t.to_vec()).collect();
    let mut scalar = vec![common::ScalarAdam::default(); reference.len()];
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let mut grads = params.zeros_like();
        for t in grads.tensors_mut() {
            t.iter_mut().for_each(|g| *g = rng.random_range(-1.0..1.0));
        }
        let flat: Vec<f64> = grads.tensors().iter().flat_map(|(_, t)| t.to_vec()).collect();
        adam_step(&mut params, &grads, &mut state, &config).unwrap();
        for ((theta, s), g) in reference.iter_mut().zip(&mut scalar).zip(&flat) {
            *theta = s.step(*theta, *g, config.learning_rate, config.beta1, config.beta2, config.epsilon);
        }
        let got = params.tensors().iter().flat_map(|(_, t)| t.to_vec()).collect::<Vec<_>>();
        worst = got.iter().zip(&reference).map(|(a, b)| (a - b).abs()).fold(worst, f64::max);
    }
    verdict(worst <= 1e-12, format!("100 steps over {} parameters: max |diff| {worst:.2e} (tol 1e-12)", reference.len()))
}

fn metric_fixtures() -> Verdict {
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-12;
    let (y, p) = ([1.0, 2.0, 3.0, 4.0], [1.5, 2.0, 2.5, 5.0]);
    let mut ok = close(r2_score(&y, &p).unwrap(), 0.7)
        && close(mae(&y, &p).unwrap(), 0.5)
        && close(rmse(&y, &p).unwrap(), 0.375f64.sqrt())
        && close(mape(&y, &p).unwrap(), 275.0 / 12.0);
    let (y, p) = ([2.0, 4.0, 6.0], [3.0, 3.0, 7.0]);
    ok &= close(r2_score(&y, &p).unwrap(), 0.625)
        && close(mae(&y, &p).unwrap(), 1.0)
        && close(rmse(&y, &p).unwrap(), 1.0)
        && close(mape(&y, &p).unwrap(), 275.0 / 9.0);

    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut violations = 0;
    for _ in 0..1000 {
        let n = rng.random_range(1..50);
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(-10.0..10.0)).collect();
        let p: Vec<f64> = (0..n).map(|_| rng.random_range(-10.0..10.0)).collect();
        if rmse(&y, &p).unwrap() < mae(&y, &p).unwrap() {
            violations += 1;
        }
    }
    verdict(ok && violations == 0, format!("fixtures within 1e-12: {ok}; RMSE < MAE in {violations} of 1000 random pairs"))
}

/// Shared synthetic runs for criteria 6–8.
struct Runs {
    first: RunArtifacts,
    first_secs: f64,
    repeat: RunArtifacts,
    bi_mae: Vec<f64>,
    uni_mae: Vec<f64>,
}

fn config(input: &Path, out: &Path, variant: Variant, seed: u64) -> ExperimentConfig {
    let mut cfg = ExperimentConfig { input: input.to_path_buf(), output_dir: out.to_path_buf(), ..Default::default() }.with_variant(variant);
    cfg.train.seed = seed;
    cfg
}

fn synthetic_runs(dir: &Path) -> Runs {
    let input = dir.join("multisine.csv");
    market_data::export_csv(&MultiSine::default().generate(), &input).unwrap();
    let bi: Variant = "indicatorsxbi".parse().unwrap();
    let uni: Variant = "univariatexuni".parse().unwrap();
    let seeds = [42, 1, 2];

    let started = Instant::now();
    let first = runner::run_experiment(&config(&input, &dir.join("bi-42"), bi, seeds[0])).unwrap();
    let first_secs = started.elapsed().as_secs_f64();
    let repeat = runner::run_experiment(&config(&input, &dir.join("bi-42-again"), bi, seeds[0])).unwrap();

    let mut bi_mae = vec![first.evaluation.metrics.mae];
    for &s in &seeds[1..] {
        bi_mae.push(runner::run_experiment(&config(&input, &dir.join(format!("bi-{s}")), bi, s)).unwrap().evaluation.metrics.mae);
    }
    let uni_mae = seeds
        .iter()
        .map(|&s| runner::run_experiment(&config(&input, &dir.join(format!("uni-{s}")), uni, s)).unwrap().evaluation.metrics.mae)
        .collect();
    Runs { first, first_secs, repeat, bi_mae, uni_mae }
}

fn forecasting_capability(runs: &Runs) -> Verdict {
    let r2 = runs.first.evaluation.metrics.r2;
    verdict(r2 >= 0.95 && runs.first_secs < 300.0, format!("indicators+bi defaults: test R2 {r2:.4} (>= 0.95) in {:.1}s (< 300s)", runs.first_secs))
}

fn variant_ordering(runs: &Runs) -> Verdict {
    let (bi, uni) = (common::median(runs.bi_mae.clone()), common::median(runs.uni_mae.clone()));
    verdict(bi <= uni, format!("median test MAE over seeds 42/1/2: indicators+bi {bi:.5} <= univariate uni {uni:.5}"))
}

fn reproducibility(runs: &Runs) -> Verdict {
    let a = std::fs::read(runs.first.paths.metrics()).unwrap();
    let b = std::fs::read(runs.repeat.paths.metrics()).unwrap();
    verdict(!a.is_empty() && a == b, format!("metrics.csv byte-identical across two seed-42 runs: {} ({} bytes)", a == b, a.len()))
}

fn leakage_guard() -> Verdict {
    let bars = MultiSine::default().generate();
    let candidates = indicators::candidate_frame(&bars, &IndicatorParams::default()).unwrap();
    let config = DatasetConfig::default();
    let (ds, scaler) = pipeline::prepare(&candidates, "close", &config).unwrap();
    let s = ds.splits().unwrap().clone();

    let first_test_target = s.test.clone().map(|n| ds.target_row(n)).min().unwrap();
    let last_train_row = s.train.clone().map(|n| ds.input_rows(n).end.max(ds.target_row(n) + 1)).max().unwrap() - 1;
    let no_window_leak = last_train_row < first_test_target;

    let held_out_target = s.val.clone().chain(s.test.clone()).map(|n| ds.target_row(n)).min().unwrap();
    let train_rows = 0..s.train.end + config.window;
    let fit_in_train = scaler.fit_rows == train_rows && scaler.fit_rows.end <= held_out_target;

    // statistics equal a direct min/max over training rows, and spiking every
    // held-out row leaves them unchanged
    let direct = candidates.columns().all(|(name, col)| {
        let slice = &col[train_rows.clone()];
        let r = scaler.range(name).unwrap();
        r.min == slice.iter().copied().fold(f64::INFINITY, f64::min) && r.max == slice.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    });
    let spiked: Vec<(String, Vec<f64>)> = candidates
        .columns()
        .map(|(n, c)| (n.to_string(), c.iter().enumerate().map(|(i, v)| if i >= train_rows.end { v * 1e3 + 1e6 } else { *v }).collect()))
        .collect();
    let spiked = FeatureFrame::new(candidates.index().to_vec(), spiked).unwrap();
    let (_, spiked_scaler) = pipeline::prepare(&spiked, "close", &config).unwrap();
    let insensitive = spiked_scaler == scaler;

    verdict(
        no_window_leak && fit_in_train && direct && insensitive,
        format!(
            "last train row {last_train_row} < first test target {first_test_target}; scaler rows {:?} end <= {held_out_target}; direct stats {direct}; held-out spike invariant {insensitive}",
            scaler.fit_rows
        ),
    )
}

fn main() -> ExitCode {
    let timed = |f: &dyn Fn() -> Verdict| {
        let t = Instant::now();
        let v = f();
        (v, t.elapsed().as_secs_f64())
    };
    let dir = tempfile::tempdir().unwrap();
    let mut results: Vec<(u8, &str, Verdict, f64)> = Vec::new();
    for (id, name, f) in [
        (1u8, "window and split counts", &window_counts as &dyn Fn() -> Verdict),
        (2, "indicator oracles", &indicator_oracles),
        (3, "BPTT gradient check", &gradient_check),
        (4, "Adam scalar reference", &adam_reference),
        (5, "metric fixtures", &metric_fixtures),
    ] {
        let (v, secs) = timed(f);
        results.push((id, name, v, secs));
    }
    let (v, secs) = timed(&leakage_guard);
    let leakage = (9, "leakage guard", v, secs);

    let runs = synthetic_runs(dir.path());
    results.push((6, "synthetic forecasting", forecasting_capability(&runs), runs.first_secs));
    results.push((7, "indicators+bi vs univariate", variant_ordering(&runs), 0.0));
    results.push((8, "reproducibility", reproducibility(&runs), 0.0));
    results.push(leakage);

    let mut failed = 0;
    for (id, name, v, secs) in &results {
        println!("{} [{id}] {name}: {} ({secs:.2}s)", if v.pass { "PASS" } else { "FAIL" }, v.detail);
        failed += usize::from(!v.pass);
    }
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
