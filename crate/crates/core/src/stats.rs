//! Runtime statistics for benchmark reports.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BenchMode {
    /// Tools baked into the image.
    Prebuilt,
    /// Tools installed at the start of every run.
    RuntimeInstall,
}

impl BenchMode {
    pub fn as_str(self) -> &'static str {
        match self {
            BenchMode::Prebuilt => "prebuilt",
            BenchMode::RuntimeInstall => "runtime-install",
        }
    }
}

impl fmt::Display for BenchMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

pub fn mean(samples: &[f64]) -> Option<f64> {
    if samples.is_empty() {
        return None;
    }
    Some(samples.iter().sum::<f64>() / samples.len() as f64)
}

/// Population standard deviation (divides by n).
pub fn population_stddev(samples: &[f64]) -> Option<f64> {
    let m = mean(samples)?;
    let var = samples.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / samples.len() as f64;
    Some(libm::sqrt(var))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub mode: BenchMode,
    pub iterations: usize,
    pub samples_ms: Vec<f64>,
    pub mean_ms: f64,
    pub stddev_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum StatsError {
    #[error("no samples")]
    NoSamples,
    #[error("baseline mean is zero; a reduction is undefined")]
    ZeroBaseline,
}

impl BenchReport {
    pub fn from_samples(mode: BenchMode, samples_ms: Vec<f64>) -> Result<Self, StatsError> {
        let mean_ms = mean(&samples_ms).ok_or(StatsError::NoSamples)?;
        let stddev_ms = population_stddev(&samples_ms).ok_or(StatsError::NoSamples)?;
        Ok(Self {
            mode,
            iterations: samples_ms.len(),
            samples_ms,
            mean_ms,
            stddev_ms,
        })
    }

    /// One row of the fixed-format table: mode, n, mean s, stddev s.
    pub fn table_row(&self) -> String {
        format!(
            "{:<16} {:>4} {:>12.3} {:>12.3}",
            self.mode.as_str(),
            self.iterations,
            self.mean_ms / 1000.0,
            self.stddev_ms / 1000.0
        )
    }

    pub fn table_header() -> &'static str {
        "mode                n       mean s     stddev s"
    }
}

/// Relative runtime change from a baseline to a candidate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Reduction {
    pub baseline_mean_s: f64,
    pub candidate_mean_s: f64,
    /// Positive when the candidate is faster.
    pub reduction_pct: f64,
}

impl Reduction {
    /// `reduction_pct` rounded to one decimal, as printed.
    pub fn rounded_pct(&self) -> f64 {
        libm::round(self.reduction_pct * 10.0) / 10.0
    }
}

impl fmt::Display for Reduction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:.1}% reduction ({:.1} s \u{2192} {:.1} s)",
            self.reduction_pct, self.baseline_mean_s, self.candidate_mean_s
        )
    }
}

/// Compares two mean runtimes given in seconds.
pub fn compare_means(baseline_s: f64, candidate_s: f64) -> Result<Reduction, StatsError> {
    if baseline_s == 0.0 {
        return Err(StatsError::ZeroBaseline);
    }
    Ok(Reduction {
        baseline_mean_s: baseline_s,
        candidate_mean_s: candidate_s,
        reduction_pct: (baseline_s - candidate_s) / baseline_s * 100.0,
    })
}

pub fn compare(baseline: &BenchReport, candidate: &BenchReport) -> Result<Reduction, StatsError> {
    if baseline.samples_ms.is_empty() || candidate.samples_ms.is_empty() {
        return Err(StatsError::NoSamples);
    }
    compare_means(baseline.mean_ms / 1000.0, candidate.mean_ms / 1000.0)
}
