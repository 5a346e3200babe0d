//! Wall-time measurement of repeated forward passes.

use std::fmt::Write as _;
use std::time::Instant;

use crate::blocks::Structure;
use crate::error::{Error, Result};
use crate::tensor::Dims;

/// Leading runs excluded from the statistics.
pub const WARMUP: usize = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub variant: String,
    pub structure: Structure,
    pub input: Dims,
    pub threads: usize,
    /// Timed runs in seconds, warmup excluded, in execution order.
    pub times: Vec<f64>,
    pub median: f64,
    pub p10: f64,
    pub p90: f64,
    /// Inputs per second at the median.
    pub throughput: f64,
}

/// Linear-interpolated percentile of sorted data, `q` in `[0, 1]`.
fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub const ROW_HEADER: &str = "variant,structure,n,c,h,w,threads,runs,median_s,p10_s,p90_s,throughput";

impl BenchReport {
    pub fn new(variant: &str, structure: Structure, input: Dims, threads: usize, times: Vec<f64>) -> Result<Self> {
        if times.is_empty() || times.iter().any(|&t| !(t > 0.0)) {
            return Err(Error::Contract("benchmark needs at least one positive timing".into()));
        }
        let mut sorted = times.clone();
        sorted.sort_by(f64::total_cmp);
        let median = percentile(&sorted, 0.5);
        Ok(BenchReport {
            variant: variant.into(),
            structure,
            input,
            threads,
            median,
            p10: percentile(&sorted, 0.1),
            p90: percentile(&sorted, 0.9),
            throughput: input.n as f64 / median,
            times,
        })
    }

    pub fn to_row(&self) -> String {
        let d = self.input;
        format!(
            "{},{},{},{},{},{},{},{},{:.6},{:.6},{:.6},{:.3}",
            self.variant,
            self.structure,
            d.n,
            d.c,
            d.h,
            d.w,
            self.threads,
            self.times.len(),
            self.median,
            self.p10,
            self.p90,
            self.throughput
        )
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{} [{}] input {} threads {}", self.variant, self.structure, self.input, self.threads);
        let _ = writeln!(
            s,
            "  runs {}  median {:.2} ms  p10 {:.2} ms  p90 {:.2} ms  {:.2} inputs/s",
            self.times.len(),
            self.median * 1e3,
            self.p10 * 1e3,
            self.p90 * 1e3,
            self.throughput
        );
        s
    }
}

/// Runs `f` `runs` times and returns the durations of all but the first
/// [`WARMUP`] runs.
pub fn time_runs(runs: usize, mut f: impl FnMut() -> Result<()>) -> Result<Vec<f64>> {
    if runs <= WARMUP {
        return Err(Error::Contract(format!("need more than {WARMUP} runs, got {runs}")));
    }
    let mut times = Vec::with_capacity(runs - WARMUP);
    for i in 0..runs {
        let start = Instant::now();
        f()?;
        let t = start.elapsed().as_secs_f64();
        if i >= WARMUP {
            times.push(t.max(f64::MIN_POSITIVE));
        }
    }
    Ok(times)
}

/// Runs `f` inside a dedicated pool of `threads` workers.
pub fn with_threads<R: Send>(threads: usize, f: impl FnOnce() -> R + Send) -> Result<R> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| Error::Contract(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}
