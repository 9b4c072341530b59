use serde::Serialize;
use thiserror::Error;

use super::scenarios::{Scenario, ScenarioRunner};
use crate::policy::Mode;

pub const MIN_BENCH_RUNS: usize = 100;
pub const WARMUP_RUNS: usize = 10;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum BenchError {
    #[error("at least {MIN_BENCH_RUNS} runs are required, got {0}")]
    TooFewRuns(usize),
}

/// Per-run pipeline latency in microseconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LatencyStats {
    pub runs: usize,
    pub median: f64,
    pub p95: f64,
    pub max: f64,
}

impl LatencyStats {
    pub fn from_samples(mut samples: Vec<f64>) -> Self {
        assert!(!samples.is_empty(), "no samples");
        samples.sort_by(f64::total_cmp);
        let n = samples.len();
        let median = if n % 2 == 1 {
            samples[n / 2]
        } else {
            (samples[n / 2 - 1] + samples[n / 2]) / 2.0
        };
        // nearest-rank percentile
        let p95 = samples[(n * 95).div_ceil(100).max(1) - 1];
        LatencyStats {
            runs: n,
            median,
            p95,
            max: samples[n - 1],
        }
    }
}

/// Time the graph-mode pipeline over `runs` fresh runs of `scenario`, after
/// a short warm-up. Each sample is the summed pipeline time of one run.
pub fn bench(runner: &ScenarioRunner, scenario: &Scenario, runs: usize) -> Result<LatencyStats, BenchError> {
    if runs < MIN_BENCH_RUNS {
        return Err(BenchError::TooFewRuns(runs));
    }
    for _ in 0..WARMUP_RUNS {
        runner.run(scenario, Mode::Graph);
    }
    let samples = (0..runs)
        .map(|_| runner.run(scenario, Mode::Graph).pipeline_micros)
        .collect();
    Ok(LatencyStats::from_samples(samples))
}
