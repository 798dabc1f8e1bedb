//! Simulated mainframe client.
//!
//! Datasets are directories and members are plain files under a store
//! root: `<root>/<DATASET>/<MEMBER>`. Sessions authenticate with a password
//! read from the environment; the value is registered as a secret on
//! connect and never kept in the configuration.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::platform::EnvMap;
use crate::shell::SharedSecrets;

pub const MAX_MEMBER_LEN: usize = 8;
pub const FAIL_SENTINEL: &str = "//*FAIL";
pub const FAILED_JOB_RC: u16 = 8;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MainframeConfig {
    pub store_root: PathBuf,
    pub user: String,
    /// Name of the environment variable holding the password.
    pub password_env: String,
    #[serde(default)]
    pub latency_ms: u64,
}

#[derive(Debug, thiserror::Error)]
pub enum MainframeError {
    #[error("authentication failed: environment variable {0} is not set")]
    AuthFailure(String),
    #[error("mainframe store {0} does not exist")]
    StoreMissing(PathBuf),
    #[error("session is closed")]
    SessionClosed,
    #[error("member {dataset}({member}) not found")]
    NotFound { dataset: String, member: String },
    #[error("invalid dataset name {0:?}")]
    InvalidDataset(String),
    #[error("invalid member name {0:?}")]
    InvalidMember(String),
    #[error("empty JCL")]
    EmptyJcl,
    #[error("i/o failure: {0}")]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SessionState {
    Open,
    Closed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct JobResult {
    pub job_id: String,
    pub return_code: u16,
    pub spool: String,
}

/// Counts of session lifecycle transitions, shared by every session opened
/// through one [`Mainframe`].
#[derive(Debug, Default)]
pub struct SessionTelemetry {
    opened: AtomicUsize,
    closed: AtomicUsize,
}

impl SessionTelemetry {
    pub fn new() -> Arc<Self> {
        Arc::new(Self::default())
    }

    pub fn opened(&self) -> usize {
        self.opened.load(Ordering::SeqCst)
    }

    pub fn closed(&self) -> usize {
        self.closed.load(Ordering::SeqCst)
    }
}

static NEXT_SESSION: AtomicU64 = AtomicU64::new(1);

/// A configured client that opens sessions.
#[derive(Debug, Clone)]
pub struct Mainframe {
    config: MainframeConfig,
    telemetry: Arc<SessionTelemetry>,
}

impl Mainframe {
    pub fn new(config: MainframeConfig) -> Self {
        Self {
            config,
            telemetry: SessionTelemetry::new(),
        }
    }

    pub fn with_telemetry(mut self, telemetry: Arc<SessionTelemetry>) -> Self {
        self.telemetry = telemetry;
        self
    }

    pub fn telemetry(&self) -> &Arc<SessionTelemetry> {
        &self.telemetry
    }

    pub fn connect(
        &self,
        env: &EnvMap,
        secrets: &SharedSecrets,
    ) -> Result<Session, MainframeError> {
        let cfg = &self.config;
        if !cfg.store_root.is_dir() {
            return Err(MainframeError::StoreMissing(cfg.store_root.clone()));
        }
        let password = env
            .get(&cfg.password_env)
            .filter(|v| !v.is_empty())
            .ok_or_else(|| MainframeError::AuthFailure(cfg.password_env.clone()))?;
        // Too-short passwords stay unregistered; the store rejects them.
        let _ = secrets
            .write()
            .unwrap_or_else(|p| p.into_inner())
            .register(password);
        self.telemetry.opened.fetch_add(1, Ordering::SeqCst);
        let n = NEXT_SESSION.fetch_add(1, Ordering::SeqCst);
        Ok(Session {
            id: format!("S{}-{n:06}", std::process::id()),
            user: cfg.user.clone(),
            store_root: cfg.store_root.clone(),
            latency: Duration::from_millis(cfg.latency_ms),
            state: SessionState::Open,
            calls_made: 0,
            jobs_submitted: 0,
            telemetry: Arc::clone(&self.telemetry),
        })
    }
}

fn valid_dataset(name: &str) -> bool {
    !name.is_empty()
        && name.split('.').all(|q| {
            !q.is_empty()
                && q.chars()
                    .all(|c| c.is_ascii_uppercase() || c.is_ascii_digit() || "#@$-".contains(c))
        })
}

fn valid_member(name: &str) -> bool {
    !name.is_empty()
        && name.len() <= MAX_MEMBER_LEN
        && name
            .chars()
            .all(|c| c.is_ascii_uppercase() || c.is_ascii_digit() || "#@$".contains(c))
}

/// Turns a file stem into a member name: uppercased, invalid characters
/// dropped, truncated to eight characters.
pub fn member_name(stem: &str) -> String {
    let cleaned: String = stem
        .to_ascii_uppercase()
        .chars()
        .filter(|c| c.is_ascii_uppercase() || c.is_ascii_digit() || "#@$".contains(*c))
        .take(MAX_MEMBER_LEN)
        .collect();
    if cleaned.is_empty() {
        "MEMBER".into()
    } else {
        cleaned
    }
}

#[derive(Debug)]
pub struct Session {
    id: String,
    user: String,
    store_root: PathBuf,
    latency: Duration,
    state: SessionState,
    calls_made: u64,
    jobs_submitted: u32,
    telemetry: Arc<SessionTelemetry>,
}

impl Session {
    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn user(&self) -> &str {
        &self.user
    }

    pub fn state(&self) -> SessionState {
        self.state
    }

    pub fn calls_made(&self) -> u64 {
        self.calls_made
    }

    fn begin_call(&mut self) -> Result<(), MainframeError> {
        if self.state == SessionState::Closed {
            return Err(MainframeError::SessionClosed);
        }
        self.calls_made += 1;
        if !self.latency.is_zero() {
            thread::sleep(self.latency);
        }
        Ok(())
    }

    fn member_path(&self, dataset: &str, member: &str) -> Result<PathBuf, MainframeError> {
        if !valid_dataset(dataset) {
            return Err(MainframeError::InvalidDataset(dataset.into()));
        }
        if !valid_member(member) {
            return Err(MainframeError::InvalidMember(member.into()));
        }
        Ok(self.store_root.join(dataset).join(member))
    }

    pub fn get_member(&mut self, dataset: &str, member: &str) -> Result<String, MainframeError> {
        self.begin_call()?;
        let path = self.member_path(dataset, member)?;
        match fs::read_to_string(&path) {
            Ok(text) => Ok(text),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Err(MainframeError::NotFound {
                dataset: dataset.into(),
                member: member.into(),
            }),
            Err(e) => Err(e.into()),
        }
    }

    pub fn put_member(
        &mut self,
        dataset: &str,
        member: &str,
        content: &str,
    ) -> Result<(), MainframeError> {
        self.begin_call()?;
        let path = self.member_path(dataset, member)?;
        let dir = path.parent().expect("member has a dataset directory");
        fs::create_dir_all(dir)?;
        write_atomically(dir, &path, content.as_bytes())
    }

    pub fn submit_job(&mut self, jcl: &str) -> Result<JobResult, MainframeError> {
        self.begin_call()?;
        if jcl.trim().is_empty() {
            return Err(MainframeError::EmptyJcl);
        }
        self.jobs_submitted += 1;
        let job_id = format!("JOB{:05}", self.jobs_submitted);
        let failed = jcl.lines().any(|l| l.trim_end() == FAIL_SENTINEL);
        let return_code = if failed { FAILED_JOB_RC } else { 0 };
        let steps = jcl.lines().filter(|l| l.contains(" EXEC ")).count();
        let spool = format!(
            "{job_id} SUBMITTED BY {}\n{steps} STEP(S) EXECUTED\nMAXCC={return_code:04}\n",
            self.user
        );
        Ok(JobResult {
            job_id,
            return_code,
            spool,
        })
    }

    /// Closes the session. Closing a closed session does nothing.
    pub fn close(&mut self) {
        if self.state == SessionState::Open {
            self.state = SessionState::Closed;
            self.telemetry.closed.fetch_add(1, Ordering::SeqCst);
        }
    }
}

impl Drop for Session {
    fn drop(&mut self) {
        self.close();
    }
}

static NEXT_TEMP: AtomicU64 = AtomicU64::new(0);

fn write_atomically(dir: &Path, target: &Path, bytes: &[u8]) -> Result<(), MainframeError> {
    let n = NEXT_TEMP.fetch_add(1, Ordering::SeqCst);
    let tmp = dir.join(format!(".tmp-{}-{n}", std::process::id()));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, target)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    Ok(result?)
}
