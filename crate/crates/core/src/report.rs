//! Stage and pipeline results.

use alloc::string::String;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::platform::BuildMetadata;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StageStatus {
    Passed,
    Failed,
    Unstable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Overall {
    Passed,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageResult {
    pub stage_name: String,
    pub status: StageStatus,
    /// Offsets on the run's monotonic clock, in milliseconds.
    pub started_ms: u64,
    pub finished_ms: u64,
    pub duration_ms: u64,
    /// Everything the stage printed, already redacted.
    pub transcript: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub stages: Vec<StageResult>,
    pub overall: Overall,
    pub metadata: Option<BuildMetadata>,
    pub total_duration_ms: u64,
}

impl PipelineReport {
    /// Builds a report whose overall status is derived from the stages:
    /// failed iff any stage failed. Unstable stages count as passed.
    pub fn new(
        stages: Vec<StageResult>,
        metadata: Option<BuildMetadata>,
        total_duration_ms: u64,
    ) -> Self {
        let overall = if stages.iter().any(|s| s.status == StageStatus::Failed) {
            Overall::Failed
        } else {
            Overall::Passed
        };
        Self {
            stages,
            overall,
            metadata,
            total_duration_ms,
        }
    }

    pub fn passed(&self) -> bool {
        self.overall == Overall::Passed
    }

    pub fn is_unstable(&self) -> bool {
        self.stages
            .iter()
            .any(|s| s.status == StageStatus::Unstable)
    }
}
