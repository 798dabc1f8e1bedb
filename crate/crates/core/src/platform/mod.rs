//! The boundary between pipeline logic and the CI platform it runs on.
//!
//! Every platform-specific environment key and every emitted platform
//! file lives under this module. Pipeline code asks for a
//! [`BackendKind`] and [`BuildMetadata`] and never reads platform
//! variables itself.

mod workflow;

pub use workflow::{
    emit_workflow, SecretBinding, WorkflowError, WorkflowSpec, DEFAULT_CHECKOUT_REF,
};

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use serde::{Deserialize, Serialize};

pub const GITHUB_ACTIONS: &str = "GITHUB_ACTIONS";
pub const GITHUB_SHA: &str = "GITHUB_SHA";
pub const GITHUB_REPOSITORY: &str = "GITHUB_REPOSITORY";
pub const GITHUB_REF_NAME: &str = "GITHUB_REF_NAME";

/// Path of a `KEY=VALUE` file that supplies the environment for the
/// env-file backend.
pub const CBL_ENV_FILE: &str = "CBL_ENV_FILE";
pub const CBL_COMMIT_SHA: &str = "CBL_COMMIT_SHA";
pub const CBL_REPOSITORY: &str = "CBL_REPOSITORY";
pub const CBL_BRANCH: &str = "CBL_BRANCH";

pub type EnvMap = BTreeMap<String, String>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackendKind {
    Local,
    GithubActions,
    EnvFile,
}

impl BackendKind {
    pub fn as_str(self) -> &'static str {
        match self {
            BackendKind::Local => "local",
            BackendKind::GithubActions => "github-actions",
            BackendKind::EnvFile => "env-file",
        }
    }
}

impl core::fmt::Display for BackendKind {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Picks the backend for an environment snapshot.
///
/// GitHub Actions wins over an env file, which wins over local.
pub fn detect_backend(env: &EnvMap) -> BackendKind {
    if env.get(GITHUB_ACTIONS).map(String::as_str) == Some("true") {
        BackendKind::GithubActions
    } else if env.contains_key(CBL_ENV_FILE) {
        BackendKind::EnvFile
    } else {
        BackendKind::Local
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MetadataSource {
    Environment,
    VersionControlQuery,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BuildMetadata {
    pub commit_ref: String,
    pub repository_id: String,
    pub branch: String,
    pub source: MetadataSource,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MetadataError {
    #[error("build metadata has an empty commit reference")]
    EmptyCommit,
    #[error("repository identifier {0:?} is not of the form owner/name")]
    BadRepositoryId(String),
    #[error("no build metadata: {0}")]
    Unavailable(String),
}

impl BuildMetadata {
    pub fn new(
        commit_ref: impl Into<String>,
        repository_id: impl Into<String>,
        branch: impl Into<String>,
        source: MetadataSource,
    ) -> Result<Self, MetadataError> {
        let meta = Self {
            commit_ref: commit_ref.into().trim().to_string(),
            repository_id: repository_id.into().trim().to_string(),
            branch: branch.into().trim().to_string(),
            source,
        };
        if meta.commit_ref.is_empty() {
            return Err(MetadataError::EmptyCommit);
        }
        if source == MetadataSource::Environment && meta.repository_id.matches('/').count() != 1 {
            return Err(MetadataError::BadRepositoryId(meta.repository_id));
        }
        Ok(meta)
    }
}

/// Reads build metadata straight from the environment keys of `backend`.
///
/// Returns `Ok(None)` when the backend has no environment source (local)
/// or when any of its keys is missing, so the caller can fall back to
/// querying version control.
pub fn metadata_from_environment(
    backend: BackendKind,
    env: &EnvMap,
) -> Result<Option<BuildMetadata>, MetadataError> {
    let keys = match backend {
        BackendKind::Local => return Ok(None),
        BackendKind::GithubActions => [GITHUB_SHA, GITHUB_REPOSITORY, GITHUB_REF_NAME],
        BackendKind::EnvFile => [CBL_COMMIT_SHA, CBL_REPOSITORY, CBL_BRANCH],
    };
    let [sha, repo, branch] = keys.map(|k| env.get(k));
    match (sha, repo, branch) {
        (Some(sha), Some(repo), Some(branch)) => BuildMetadata::new(
            sha.as_str(),
            repo.as_str(),
            branch.as_str(),
            MetadataSource::Environment,
        )
        .map(Some),
        _ => Ok(None),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("env file line {line}: {message}")]
pub struct EnvFileError {
    pub line: usize,
    pub message: String,
}

/// Parses an env file: one `KEY=VALUE` per line, `#` starts a comment line,
/// blank lines are ignored. Values are taken verbatim after the first `=`;
/// a single pair of surrounding double quotes is stripped.
pub fn parse_env_file(text: &str) -> Result<EnvMap, EnvFileError> {
    let mut env = EnvMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(EnvFileError {
                line: idx + 1,
                message: "expected KEY=VALUE".to_string(),
            });
        };
        let key = key.trim();
        if key.is_empty() || !key.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
            return Err(EnvFileError {
                line: idx + 1,
                message: alloc::format!("invalid key {key:?}"),
            });
        }
        let value = value.trim();
        let value = value
            .strip_prefix('"')
            .and_then(|v| v.strip_suffix('"'))
            .unwrap_or(value);
        env.insert(key.to_string(), value.to_string());
    }
    Ok(env)
}
