//! Repeated pipeline runs with and without a simulated tool install phase.
//!
//! In `runtime-install` mode every iteration first sleeps once per listed
//! dependency, standing in for downloading and installing the toolchain
//! on each run. `prebuilt` mode skips that phase, as an image with the
//! tools baked in would.

use std::path::PathBuf;
use std::thread;
use std::time::{Duration, Instant};

use cblpipe_core::stats::{compare, BenchMode, BenchReport, Reduction, StatsError};
use serde::Serialize;

use crate::config::PipelineConfig;
use crate::engine::{Engine, EngineError};
use crate::platform::{BackendKind, EnvMap, Reporter};
use crate::shell::shared_secrets;

#[derive(Debug, Clone)]
pub struct SimulatedInstall {
    pub name: String,
    pub delay: Duration,
}

impl SimulatedInstall {
    pub fn new(name: impl Into<String>, delay_ms: u64) -> Self {
        Self {
            name: name.into(),
            delay: Duration::from_millis(delay_ms),
        }
    }

    /// Parses `NAME=MS`.
    pub fn parse(spec: &str) -> Result<Self, String> {
        let (name, ms) = spec
            .split_once('=')
            .ok_or_else(|| format!("expected NAME=MS, got {spec:?}"))?;
        let name = name.trim();
        if name.is_empty() {
            return Err(format!("missing dependency name in {spec:?}"));
        }
        let ms: u64 = ms
            .trim()
            .parse()
            .map_err(|_| format!("delay in {spec:?} is not a whole number of milliseconds"))?;
        Ok(Self::new(name, ms))
    }
}

#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub mode: BenchMode,
    pub iterations: usize,
    pub simulated_install: Vec<SimulatedInstall>,
    pub pipeline: PipelineConfig,
    pub backend: BackendKind,
    pub env: EnvMap,
    pub scratch: Option<PathBuf>,
}

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("iterations must be at least 1")]
    NoIterations,
    #[error("iteration {iteration}: pipeline failed")]
    PipelineFailed { iteration: usize },
    #[error("iteration {iteration}: {source}")]
    Engine {
        iteration: usize,
        #[source]
        source: EngineError,
    },
    #[error(transparent)]
    Stats(#[from] StatsError),
}

impl BenchError {
    pub fn exit_code(&self) -> i32 {
        match self {
            BenchError::NoIterations => crate::exit::CONFIG_ERROR,
            BenchError::PipelineFailed { .. } => crate::exit::PIPELINE_FAILURE,
            BenchError::Engine { source, .. } => source.exit_code(),
            BenchError::Stats(_) => crate::exit::INTERNAL_ERROR,
        }
    }
}

fn one_iteration(cfg: &BenchConfig, iteration: usize) -> Result<f64, BenchError> {
    let reporter = Reporter::sink(shared_secrets());
    let mut engine = Engine::new(cfg.pipeline.clone(), cfg.backend, cfg.env.clone(), reporter);
    if let Some(scratch) = &cfg.scratch {
        engine = engine.with_scratch(scratch);
    }
    let started = Instant::now();
    if cfg.mode == BenchMode::RuntimeInstall {
        for install in &cfg.simulated_install {
            thread::sleep(install.delay);
        }
    }
    let report = engine
        .run_pipeline()
        .map_err(|source| BenchError::Engine { iteration, source })?;
    let elapsed = started.elapsed();
    if !report.passed() {
        return Err(BenchError::PipelineFailed { iteration });
    }
    Ok(elapsed.as_secs_f64() * 1000.0)
}

/// Runs the pipeline `iterations` times in sequence and summarizes the
/// wall-clock samples.
pub fn run_bench(cfg: &BenchConfig) -> Result<BenchReport, BenchError> {
    run_bench_with(cfg, |_, _| {})
}

/// Like [`run_bench`], calling `progress(iteration, ms)` after each run.
pub fn run_bench_with(
    cfg: &BenchConfig,
    mut progress: impl FnMut(usize, f64),
) -> Result<BenchReport, BenchError> {
    if cfg.iterations == 0 {
        return Err(BenchError::NoIterations);
    }
    let mut samples = Vec::with_capacity(cfg.iterations);
    for i in 1..=cfg.iterations {
        let ms = one_iteration(cfg, i)?;
        progress(i, ms);
        samples.push(ms);
    }
    Ok(BenchReport::from_samples(cfg.mode, samples)?)
}

/// Reports from one bench invocation plus the comparison when both modes
/// ran.
#[derive(Debug, Clone, Serialize)]
pub struct BenchSummary {
    pub reports: Vec<BenchReport>,
    pub comparison: Option<Reduction>,
}

impl BenchSummary {
    /// Compares runtime-install (baseline) against prebuilt (candidate)
    /// when both are present.
    pub fn new(reports: Vec<BenchReport>) -> Result<Self, StatsError> {
        let find = |m| reports.iter().find(|r: &&BenchReport| r.mode == m);
        let comparison = match (find(BenchMode::RuntimeInstall), find(BenchMode::Prebuilt)) {
            (Some(base), Some(cand)) => Some(compare(base, cand)?),
            _ => None,
        };
        Ok(Self {
            reports,
            comparison,
        })
    }

    pub fn render_table(&self) -> String {
        let mut s = format!("{}\n", BenchReport::table_header());
        for r in &self.reports {
            s.push_str(&r.table_row());
            s.push('\n');
        }
        if let Some(c) = &self.comparison {
            s.push_str(&format!("{c}\n"));
        }
        s
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("summary serializes")
    }
}
