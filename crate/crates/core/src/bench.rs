//! Wall-time measurement of refiner inference across output resolutions.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::quantile;
use crate::refiner::{init_params, refine, synthetic_dataset, RefinerConfig, RefinerParams};
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    F64,
}

impl Precision {
    pub fn name(self) -> &'static str {
        match self {
            Precision::F32 => "f32",
            Precision::F64 => "f64",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    /// Output side length in pixels.
    pub resolution: usize,
    pub precision: Precision,
    pub runs: usize,
    pub mean_ms: f64,
    pub std_ms: f64,
    pub median_ms: f64,
    pub q1_ms: f64,
    pub q3_ms: f64,
}

pub const BENCH_CSV_HEADER: [&str; 8] = ["resolution", "precision", "runs", "mean_ms", "std_ms", "median_ms", "q1_ms", "q3_ms"];

fn summarize(resolution: usize, precision: Precision, mut times: Vec<f64>) -> BenchRow {
    let n = times.len() as f64;
    let mean = times.iter().sum::<f64>() / n;
    let var = if times.len() > 1 { times.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    times.sort_by(f64::total_cmp);
    BenchRow {
        resolution,
        precision,
        runs: times.len(),
        mean_ms: mean,
        std_ms: var.sqrt(),
        median_ms: quantile(&times, 0.5),
        q1_ms: quantile(&times, 0.25),
        q3_ms: quantile(&times, 0.75),
    }
}

fn time_runs<T: Scalar>(inputs: &[Tensor<T>], params: &RefinerParams<T>, runs: usize) -> Result<Vec<f64>> {
    refine(inputs, params)?;
    let mut times = Vec::with_capacity(runs);
    for _ in 0..runs {
        let start = Instant::now();
        let out = refine(inputs, params)?;
        times.push(start.elapsed().as_secs_f64() * 1e3);
        std::hint::black_box(out);
    }
    Ok(times)
}

/// Times `runs` forward passes per resolution after one warm-up pass. Each
/// resolution gets its own synthetic scene and freshly initialised weights.
pub fn bench_refiner(base: &RefinerConfig, resolutions: &[usize], runs: usize, precision: Precision, seed: u64) -> Result<Vec<BenchRow>> {
    if runs == 0 {
        return Err(Error::invalid("runs must be at least 1"));
    }
    if resolutions.is_empty() {
        return Err(Error::invalid("no resolutions given"));
    }
    let mut rows = Vec::with_capacity(resolutions.len());
    for &r in resolutions {
        if r % 2 != 0 {
            return Err(Error::invalid(format!("resolution {r} is odd; outputs are twice the latent size")));
        }
        let config = RefinerConfig { latent_height: r / 2, latent_width: r / 2, ..base.clone() };
        let sample = synthetic_dataset(&config, 1, seed)?.remove(0);
        let params = init_params(&config, seed)?;
        let times = match precision {
            Precision::F64 => time_runs(&sample.inputs, &params, runs)?,
            Precision::F32 => {
                let inputs = sample.inputs.iter().map(|t| t.cast::<f32>()).collect::<Result<Vec<_>>>()?;
                time_runs(&inputs, &params.cast::<f32>()?, runs)?
            }
        };
        rows.push(summarize(r, precision, times));
    }
    Ok(rows)
}

pub fn bench_csv(rows: &[BenchRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(BENCH_CSV_HEADER)?;
    for r in rows {
        w.write_record([
            r.resolution.to_string(),
            r.precision.name().to_string(),
            r.runs.to_string(),
            format!("{:.4}", r.mean_ms),
            format!("{:.4}", r.std_ms),
            format!("{:.4}", r.median_ms),
            format!("{:.4}", r.q1_ms),
            format!("{:.4}", r.q3_ms),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::io("flushing CSV", e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("CSV of UTF-8 fields"))
}
