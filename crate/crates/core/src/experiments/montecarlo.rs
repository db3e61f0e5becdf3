//! Repeated identification runs on a benchmark.

use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::benchmark::Benchmark;
use super::metrics::fit_metrics;
use crate::error::{Error, Result};
use crate::estimator::{identify, EstimationOptions};

/// Outcome of one seeded run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run: usize,
    pub seed: u64,
    pub converged: bool,
    pub iterations: usize,
    pub param_error: f64,
    pub worst_frf_error: f64,
    pub max_db_error: f64,
    pub initial_correlation_norm: f64,
    pub correlation_norm: f64,
    /// Per-channel relative FRF error, row-major over (output, input).
    pub frf_error: Vec<f64>,
    pub error: Option<String>,
    /// Wall-clock seconds; kept out of report files so that they stay reproducible.
    #[serde(skip)]
    pub wall_time_s: f64,
}

impl RunRecord {
    fn failed(run: usize, seed: u64, err: &Error, channels: usize, wall: f64) -> Self {
        Self {
            run,
            seed,
            converged: false,
            iterations: 0,
            param_error: f64::NAN,
            worst_frf_error: f64::NAN,
            max_db_error: f64::NAN,
            initial_correlation_norm: f64::NAN,
            correlation_norm: f64::NAN,
            frf_error: vec![f64::NAN; channels],
            error: Some(err.to_string()),
            wall_time_s: wall,
        }
    }
}

/// Simulate, initialize and identify once.
pub fn run_once(bench: &Benchmark, run: usize, seed: u64, opts: &EstimationOptions) -> Result<RunRecord> {
    let start = Instant::now();
    let truth = bench.truth()?;
    let controller = bench.controller()?;
    let raw = bench.simulate(seed)?;
    let init = bench.initial_model(&raw, seed)?;
    let ds = bench.prepare(&raw)?;
    let est = identify(&ds, &init, opts, controller.as_ref())?;
    let m = fit_metrics(&est.model, &truth, &bench.frf_grid.grid())?;
    Ok(RunRecord {
        run,
        seed,
        converged: est.converged,
        iterations: est.iterations,
        param_error: m.param_error,
        worst_frf_error: m.worst_frf_error,
        max_db_error: m.max_db_error,
        initial_correlation_norm: est.initial_correlation_norm,
        correlation_norm: est.correlation_norm,
        frf_error: m.frf_error.into_iter().flatten().collect(),
        error: None,
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct MonteCarloReport {
    pub benchmark: String,
    pub n_y: usize,
    pub n_u: usize,
    pub runs: Vec<RunRecord>,
}

/// Run `seeds.len()` realizations in order; failures are recorded, not fatal.
pub fn monte_carlo(bench: &Benchmark, seeds: &[u64], opts: &EstimationOptions) -> Result<MonteCarloReport> {
    if seeds.is_empty() {
        return Err(Error::InvalidConfig("at least one run is required".into()));
    }
    let truth = bench.truth()?;
    let channels = truth.n_y * truth.n_u;
    let runs = seeds
        .iter()
        .enumerate()
        .map(|(run, &seed)| {
            let start = Instant::now();
            run_once(bench, run, seed, opts)
                .unwrap_or_else(|e| RunRecord::failed(run, seed, &e, channels, start.elapsed().as_secs_f64()))
        })
        .collect();
    Ok(MonteCarloReport {
        benchmark: bench.id.clone(),
        n_y: truth.n_y,
        n_u: truth.n_u,
        runs,
    })
}

/// Seeds `base, base + 1, ...`.
pub fn seed_list(base: u64, runs: usize) -> Vec<u64> {
    (0..runs as u64).map(|i| base.wrapping_add(i)).collect()
}

/// Linear interpolation between order statistics (`q` in `[0, 1]`), ignoring NaN.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| !x.is_nan()).collect();
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Quantiles {
    pub min: f64,
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
    pub max: f64,
}

impl Quantiles {
    pub fn of(values: &[f64]) -> Self {
        Self {
            min: quantile(values, 0.0),
            q25: quantile(values, 0.25),
            median: quantile(values, 0.5),
            q75: quantile(values, 0.75),
            max: quantile(values, 1.0),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub benchmark: String,
    pub runs: usize,
    pub converged: usize,
    pub failed: usize,
    pub param_error: Quantiles,
    pub worst_frf_error: Quantiles,
    pub max_db_error: Quantiles,
    /// Median relative FRF error per channel, row-major over (output, input).
    pub median_frf_error: Vec<f64>,
    pub iterations: Quantiles,
}

impl MonteCarloReport {
    pub fn all_converged(&self) -> bool {
        self.runs.iter().all(|r| r.converged)
    }

    pub fn column(&self, f: impl Fn(&RunRecord) -> f64) -> Vec<f64> {
        self.runs.iter().map(f).collect()
    }

    pub fn summary(&self) -> Summary {
        let channels = self.n_y * self.n_u;
        Summary {
            benchmark: self.benchmark.clone(),
            runs: self.runs.len(),
            converged: self.runs.iter().filter(|r| r.converged).count(),
            failed: self.runs.iter().filter(|r| r.error.is_some()).count(),
            param_error: Quantiles::of(&self.column(|r| r.param_error)),
            worst_frf_error: Quantiles::of(&self.column(|r| r.worst_frf_error)),
            max_db_error: Quantiles::of(&self.column(|r| r.max_db_error)),
            median_frf_error: (0..channels)
                .map(|c| quantile(&self.column(|r| r.frf_error[c]), 0.5))
                .collect(),
            iterations: Quantiles::of(&self.column(|r| r.iterations as f64)),
        }
    }

    pub fn csv_header(&self) -> Vec<String> {
        let mut h: Vec<String> = [
            "run",
            "seed",
            "converged",
            "iterations",
            "param_error",
            "worst_frf_error",
            "max_db_error",
            "initial_correlation_norm",
            "correlation_norm",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        for i in 1..=self.n_y {
            for j in 1..=self.n_u {
                h.push(format!("frf_error_y{i}_u{j}"));
            }
        }
        h.push("error".into());
        h
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(self.csv_header())?;
        for r in &self.runs {
            let mut row = vec![
                r.run.to_string(),
                r.seed.to_string(),
                r.converged.to_string(),
                r.iterations.to_string(),
                format!("{:?}", r.param_error),
                format!("{:?}", r.worst_frf_error),
                format!("{:?}", r.max_db_error),
                format!("{:?}", r.initial_correlation_norm),
                format!("{:?}", r.correlation_norm),
            ];
            row.extend(r.frf_error.iter().map(|v| format!("{v:?}")));
            row.push(r.error.clone().unwrap_or_default());
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_summary(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(&self.summary())?)?;
        Ok(())
    }
}
