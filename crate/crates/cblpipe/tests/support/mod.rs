//! Helpers shared by the integration test targets.
#![allow(dead_code)]

pub mod oracle;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use cblpipe::config::{load_config, PipelineConfig};
use cblpipe::engine::{Engine, EngineError, Stage};
use cblpipe::mainframe::SessionTelemetry;
use cblpipe::platform::{BackendKind, EnvMap, MemorySink, Reporter};
use cblpipe::shell::shared_secrets;
use cblpipe_core::report::PipelineReport;

pub const API_TOKEN: &str = "tok-5f3a9c1e-77b2-secret";
pub const MF_PASSWORD: &str = "mf-Pa55w0rd!";

pub fn fixture_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/pipeline")
}

pub fn mock_compiler() -> &'static str {
    env!("CARGO_BIN_EXE_cblpipe-mockcc")
}

pub fn cblpipe_bin() -> &'static str {
    env!("CARGO_BIN_EXE_cblpipe")
}

fn copy_tree(from: &Path, to: &Path) {
    fs::create_dir_all(to).unwrap();
    for entry in fs::read_dir(from).unwrap() {
        let entry = entry.unwrap();
        let target = to.join(entry.file_name());
        if entry.file_type().unwrap().is_dir() {
            copy_tree(&entry.path(), &target);
        } else {
            fs::copy(entry.path(), &target).unwrap();
        }
    }
}

pub fn git(dir: &Path, args: &[&str]) -> String {
    let out = Command::new("git")
        .args([
            "-c",
            "user.name=cblpipe-test",
            "-c",
            "user.email=test@example.com",
        ])
        .args([
            "-c",
            "init.defaultBranch=main",
            "-c",
            "commit.gpgsign=false",
        ])
        .args(args)
        .current_dir(dir)
        .output()
        .expect("git runs");
    assert!(
        out.status.success(),
        "git {args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap().trim().to_string()
}

/// A private copy of the fixture workspace, committed to a fresh git
/// repository, with the compiler command pointing at the built mock.
pub struct Workspace {
    pub dir: tempfile::TempDir,
}

impl Workspace {
    pub fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        copy_tree(&fixture_root(), dir.path());
        let ws = Self { dir };
        ws.edit_config(|text| text.replace("cblpipe-mockcc", mock_compiler()));
        git(ws.path(), &["init", "-q"]);
        git(ws.path(), &["add", "-A"]);
        git(ws.path(), &["commit", "-q", "-m", "fixture"]);
        ws
    }

    pub fn path(&self) -> &Path {
        self.dir.path()
    }

    pub fn config_path(&self) -> PathBuf {
        self.path().join("pipeline.yaml")
    }

    pub fn config(&self) -> PipelineConfig {
        load_config(&self.config_path()).unwrap()
    }

    pub fn edit_config(&self, f: impl FnOnce(String) -> String) {
        let p = self.config_path();
        let text = fs::read_to_string(&p).unwrap();
        fs::write(&p, f(text)).unwrap();
    }

    pub fn write(&self, rel: &str, text: &str) {
        let p = self.path().join(rel);
        fs::create_dir_all(p.parent().unwrap()).unwrap();
        fs::write(p, text).unwrap();
    }

    pub fn head(&self) -> String {
        git(self.path(), &["rev-parse", "HEAD"])
    }

    pub fn branch(&self) -> String {
        git(self.path(), &["rev-parse", "--abbrev-ref", "HEAD"])
    }

    pub fn dir_name(&self) -> String {
        self.path()
            .file_name()
            .unwrap()
            .to_string_lossy()
            .into_owned()
    }
}

/// Environment with the fixture credentials.
pub fn secret_env() -> EnvMap {
    EnvMap::from([
        ("CBL_API_TOKEN".to_string(), API_TOKEN.to_string()),
        ("MF_PASSWORD".to_string(), MF_PASSWORD.to_string()),
    ])
}

/// `secret_env` plus GitHub Actions variables describing `ws`.
pub fn github_env(ws: &Workspace) -> EnvMap {
    let mut env = secret_env();
    env.insert("GITHUB_ACTIONS".into(), "true".into());
    env.insert("GITHUB_SHA".into(), ws.head());
    env.insert(
        "GITHUB_REPOSITORY".into(),
        format!("local/{}", ws.dir_name()),
    );
    env.insert("GITHUB_REF_NAME".into(), ws.branch());
    env
}

pub struct RunOutcome {
    pub result: Result<PipelineReport, EngineError>,
    pub stdout: String,
    pub stderr: String,
    pub cleanup_runs: usize,
    pub sessions_opened: usize,
    pub sessions_closed: usize,
}

impl RunOutcome {
    pub fn report(&self) -> &PipelineReport {
        self.result.as_ref().expect("pipeline produced a report")
    }

    /// stdout, stderr and the serialized report.
    pub fn full_transcript(&self) -> String {
        let report = match &self.result {
            Ok(r) => serde_json::to_string_pretty(r).unwrap(),
            Err(e) => e.to_string(),
        };
        format!("{}\n{}\n{}", self.stdout, self.stderr, report)
    }
}

pub fn run_pipeline(
    cfg: PipelineConfig,
    backend: BackendKind,
    env: EnvMap,
    fault: Option<Stage>,
) -> RunOutcome {
    let out = MemorySink::new();
    let err = MemorySink::new();
    let telemetry = SessionTelemetry::new();
    let reporter = Reporter::new(out.clone(), err.clone(), shared_secrets());
    let mut engine = Engine::new(cfg, backend, env, reporter).with_telemetry(telemetry.clone());
    if let Some(stage) = fault {
        engine = engine.with_fault(stage);
    }
    let result = engine.run_pipeline();
    let cleanup_runs = engine.cleanup_runs();
    drop(engine);
    RunOutcome {
        result,
        stdout: out.contents(),
        stderr: err.contents(),
        cleanup_runs,
        sessions_opened: telemetry.opened(),
        sessions_closed: telemetry.closed(),
    }
}
