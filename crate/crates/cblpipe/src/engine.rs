//! The pipeline controller.
//!
//! Four stages run strictly in order: checkout, expand, unit-test, report.
//! A failed stage stops the run. Cleanup runs exactly once at the end of
//! every run, whatever the outcome, and closes the mainframe session.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use cblpipe_core::credentials::{resolve_credentials, substitute_with};
use cblpipe_core::expander::{expand, FixedFormatSource, DEFAULT_MAX_DEPTH};
use cblpipe_core::report::{PipelineReport, StageResult, StageStatus};
use cblpipe_core::BuildMetadata;

use crate::config::PipelineConfig;
use crate::copybooks::DirectoryStore;
use crate::mainframe::{member_name, Mainframe, Session, SessionTelemetry};
use crate::platform::{self, BackendKind, EnvMap, Flow, Reporter};
use crate::shell::{resolve_program, CommandSpec, Executor, ShellError};

pub const SCRATCH_DIR_NAME: &str = ".cblpipe";
const SCRATCH_MARKER: &str = ".cblpipe-scratch";

pub const SOURCE_EXTENSIONS: [&str; 2] = ["cbl", "cob"];
pub const TEST_EXTENSION: &str = "cut";

/// Compiler exit code that marks a run as passed with warnings.
pub const UNSTABLE_EXIT_CODE: i32 = 4;

pub const DEFAULT_COMPILE_TIMEOUT: Duration = Duration::from_secs(300);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stage {
    Checkout,
    Expand,
    UnitTest,
    Report,
}

pub const STAGES: [Stage; 4] = [
    Stage::Checkout,
    Stage::Expand,
    Stage::UnitTest,
    Stage::Report,
];

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Checkout => "checkout",
            Stage::Expand => "expand",
            Stage::UnitTest => "unit-test",
            Stage::Report => "report",
        }
    }

    /// 1-based position in the run.
    pub fn number(self) -> usize {
        STAGES.iter().position(|s| *s == self).unwrap() + 1
    }

    pub fn from_number(n: usize) -> Option<Stage> {
        n.checked_sub(1).and_then(|i| STAGES.get(i).copied())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum EngineError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("internal error in stage {stage}: {message}")]
    Internal {
        stage: &'static str,
        message: String,
    },
    #[error("stage {stage} cannot run: {reason}")]
    StageOrder { stage: &'static str, reason: String },
}

impl EngineError {
    pub fn exit_code(&self) -> i32 {
        match self {
            EngineError::Config(_) => crate::exit::CONFIG_ERROR,
            EngineError::Internal { .. } | EngineError::StageOrder { .. } => {
                crate::exit::INTERNAL_ERROR
            }
        }
    }
}

/// A fault the stage cannot turn into a result: the run is aborted.
struct Fault(String);

impl<E: std::fmt::Display> From<E> for Fault {
    fn from(e: E) -> Self {
        Fault(e.to_string())
    }
}

#[derive(Debug, Clone)]
struct Unit {
    name: String,
    stem: String,
    expanded: PathBuf,
    test: Option<PathBuf>,
}

#[derive(Debug, Default)]
struct RunState {
    sources: Vec<PathBuf>,
    metadata: Option<BuildMetadata>,
    session: Option<Session>,
    units: Vec<Unit>,
    results: Vec<StageResult>,
    cleaned: bool,
}

pub struct Engine {
    cfg: PipelineConfig,
    backend: BackendKind,
    env: EnvMap,
    workspace: PathBuf,
    scratch: PathBuf,
    reporter: Reporter,
    executor: Executor,
    telemetry: Arc<SessionTelemetry>,
    fault: Option<Stage>,
    compile_timeout: Duration,
    state: RunState,
    cleanup_runs: usize,
}

/// COBOL sources directly inside `dir`, sorted by file name.
pub fn discover_sources(dir: &Path) -> std::io::Result<Vec<PathBuf>> {
    let mut found: Vec<PathBuf> = fs::read_dir(dir)?
        .flatten()
        .map(|e| e.path())
        .filter(|p| p.is_file())
        .filter(|p| {
            p.extension().is_some_and(|e| {
                SOURCE_EXTENSIONS
                    .iter()
                    .any(|x| e.to_string_lossy().eq_ignore_ascii_case(x))
            })
        })
        .collect();
    found.sort();
    Ok(found)
}

/// `<test_dir>/<stem>.cut`, matched case-insensitively.
pub fn find_test(test_dir: &Path, stem: &str) -> Option<PathBuf> {
    let mut hits: Vec<PathBuf> = fs::read_dir(test_dir)
        .ok()?
        .flatten()
        .map(|e| e.path())
        .filter(|p| p.is_file())
        .filter(|p| {
            p.file_stem()
                .is_some_and(|s| s.to_string_lossy().eq_ignore_ascii_case(stem))
                && p.extension()
                    .is_some_and(|e| e.to_string_lossy().eq_ignore_ascii_case(TEST_EXTENSION))
        })
        .collect();
    hits.sort();
    hits.into_iter().next()
}

fn file_stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

fn file_name(path: &Path) -> String {
    path.file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

impl Engine {
    pub fn new(cfg: PipelineConfig, backend: BackendKind, env: EnvMap, reporter: Reporter) -> Self {
        let workspace = cfg.base_dir.clone();
        let scratch = workspace.join(SCRATCH_DIR_NAME);
        Self {
            cfg,
            backend,
            env,
            workspace,
            scratch,
            reporter,
            executor: Executor::new(),
            telemetry: SessionTelemetry::new(),
            fault: None,
            compile_timeout: DEFAULT_COMPILE_TIMEOUT,
            state: RunState::default(),
            cleanup_runs: 0,
        }
    }

    pub fn with_workspace(mut self, workspace: impl Into<PathBuf>) -> Self {
        let old_default = self.workspace.join(SCRATCH_DIR_NAME);
        self.workspace = workspace.into();
        if self.scratch == old_default {
            self.scratch = self.workspace.join(SCRATCH_DIR_NAME);
        }
        self
    }

    pub fn with_scratch(mut self, scratch: impl Into<PathBuf>) -> Self {
        self.scratch = scratch.into();
        self
    }

    pub fn with_telemetry(mut self, telemetry: Arc<SessionTelemetry>) -> Self {
        self.telemetry = telemetry;
        self
    }

    /// Makes `stage` abort with an internal fault. Test hook.
    pub fn with_fault(mut self, stage: Stage) -> Self {
        self.fault = Some(stage);
        self
    }

    pub fn with_compile_timeout(mut self, timeout: Duration) -> Self {
        self.compile_timeout = timeout;
        self
    }

    pub fn telemetry(&self) -> &Arc<SessionTelemetry> {
        &self.telemetry
    }

    pub fn cleanup_runs(&self) -> usize {
        self.cleanup_runs
    }

    pub fn scratch_dir(&self) -> &Path {
        &self.scratch
    }

    pub fn results(&self) -> &[StageResult] {
        &self.state.results
    }

    pub fn reporter(&mut self) -> &mut Reporter {
        &mut self.reporter
    }

    fn display_path(&self, path: &Path) -> String {
        path.strip_prefix(&self.workspace)
            .unwrap_or(path)
            .to_string_lossy()
            .into_owned()
    }

    /// Checks the configuration and collects the sources for a run.
    fn prepare(&mut self) -> Result<(), EngineError> {
        let errors = self.cfg.validate();
        if !errors.is_empty() {
            let list: Vec<String> = errors.iter().map(ToString::to_string).collect();
            return Err(EngineError::Config(list.join("; ")));
        }
        let sources = discover_sources(&self.cfg.source_dir)
            .map_err(|e| EngineError::Config(format!("{}: {e}", self.cfg.source_dir.display())))?;
        if sources.is_empty() {
            return Err(EngineError::Config(format!(
                "no COBOL sources (*.cbl, *.cob) in {}",
                self.cfg.source_dir.display()
            )));
        }
        self.state = RunState {
            sources,
            ..RunState::default()
        };
        self.register_known_secrets();
        Ok(())
    }

    /// Masks every configured credential from the first line of output,
    /// not only from the moment it is substituted.
    fn register_known_secrets(&mut self) {
        let vars = self
            .cfg
            .secrets
            .iter()
            .map(|b| b.env.as_str())
            .chain(self.cfg.mainframe.iter().map(|m| m.password_env.as_str()));
        let values: Vec<String> = vars.filter_map(|v| self.env.get(v).cloned()).collect();
        let mut store = self
            .reporter
            .secrets()
            .write()
            .unwrap_or_else(|p| p.into_inner());
        for value in values {
            let _ = store.register(&value);
        }
    }

    /// Runs all stages and always cleans up.
    pub fn run_pipeline(&mut self) -> Result<PipelineReport, EngineError> {
        self.prepare()?;
        let started = self.reporter.elapsed_ms();
        for stage in STAGES {
            match self.run_stage(stage) {
                Ok(result) if result.status == StageStatus::Failed => break,
                Ok(_) => {}
                Err(e) => {
                    self.reporter.error(e.to_string());
                    self.cleanup();
                    return Err(e);
                }
            }
        }
        self.cleanup();
        let report = PipelineReport::new(
            self.state.results.clone(),
            self.state.metadata.clone(),
            self.reporter.elapsed_ms() - started,
        );
        let verdict = match (report.passed(), report.is_unstable()) {
            (false, _) => "failed",
            (true, true) => "passed (unstable)",
            (true, false) => "passed",
        };
        self.reporter.info(format!("==> pipeline {verdict}"));
        Ok(report)
    }

    /// Runs one stage. Stages must run in order, each after a stage that
    /// did not fail.
    pub fn run_stage(&mut self, stage: Stage) -> Result<StageResult, EngineError> {
        let expected = self.state.results.len() + 1;
        if stage.number() != expected {
            return Err(EngineError::StageOrder {
                stage: stage.name(),
                reason: format!("stage {expected} is next"),
            });
        }
        if let Some(prev) = self.state.results.last() {
            if prev.status == StageStatus::Failed {
                return Err(EngineError::StageOrder {
                    stage: stage.name(),
                    reason: format!("stage {} failed", prev.stage_name),
                });
            }
        }
        if self.state.sources.is_empty() {
            self.prepare()?;
        }

        self.reporter.info(format!(
            "==> [stage {}/{}] {}",
            stage.number(),
            STAGES.len(),
            stage.name()
        ));
        self.reporter.begin_capture();
        let started_ms = self.reporter.elapsed_ms();
        let outcome = if self.fault == Some(stage) {
            Err(Fault("injected fault".into()))
        } else {
            match stage {
                Stage::Checkout => self.checkout(),
                Stage::Expand => self.expand_sources(),
                Stage::UnitTest => self.unit_test(),
                Stage::Report => self.report(),
            }
        };
        let transcript = self.reporter.end_capture();
        let finished_ms = self.reporter.elapsed_ms();
        match outcome {
            Ok(status) => {
                let result = StageResult {
                    stage_name: stage.name().into(),
                    status,
                    started_ms,
                    finished_ms,
                    duration_ms: finished_ms - started_ms,
                    transcript,
                };
                self.state.results.push(result.clone());
                Ok(result)
            }
            Err(Fault(message)) => Err(EngineError::Internal {
                stage: stage.name(),
                message,
            }),
        }
    }

    /// Emits a terminating error and marks the stage failed.
    fn fail(&mut self, message: impl Into<String>) -> Result<StageStatus, Fault> {
        let flow = self.reporter.error(message);
        debug_assert_eq!(flow, Flow::Terminate);
        Ok(StageStatus::Failed)
    }

    fn checkout(&mut self) -> Result<StageStatus, Fault> {
        let meta = match platform::get_build_metadata(self.backend, &self.workspace, &self.env) {
            Ok(m) => m,
            Err(e) => return self.fail(format!("cannot determine build metadata: {e}")),
        };
        self.reporter.info(format!("commit {}", meta.commit_ref));
        self.reporter
            .info(format!("repository {}", meta.repository_id));
        self.reporter.info(format!("branch {}", meta.branch));
        self.state.metadata = Some(meta);

        self.prepare_scratch()?;
        self.reporter
            .info(format!("scratch {}", self.display_path(&self.scratch)));

        if let Some(mf_cfg) = self.cfg.mainframe.clone() {
            let mf = Mainframe::new(mf_cfg).with_telemetry(Arc::clone(&self.telemetry));
            match mf.connect(&self.env, self.reporter.secrets()) {
                Ok(session) => {
                    self.reporter
                        .info(format!("mainframe session opened for {}", session.user()));
                    self.state.session = Some(session);
                }
                Err(e) => return self.fail(format!("mainframe connection failed: {e}")),
            }
        }
        self.reporter
            .info(format!("{} source file(s)", self.state.sources.len()));
        Ok(StageStatus::Passed)
    }

    /// Creates the scratch directory. An existing one is reused only if it
    /// is empty or was created by a previous run.
    fn prepare_scratch(&mut self) -> Result<(), Fault> {
        let scratch = self.scratch.clone();
        if scratch.exists() {
            let ours = scratch.join(SCRATCH_MARKER).is_file();
            let empty = scratch.is_dir() && fs::read_dir(&scratch)?.next().is_none();
            if ours {
                fs::remove_dir_all(&scratch)?;
            } else if !empty {
                return Err(Fault(format!(
                    "refusing to use {} as scratch: it exists and was not created by cblpipe",
                    scratch.display()
                )));
            }
        }
        fs::create_dir_all(&scratch)?;
        fs::write(scratch.join(SCRATCH_MARKER), "")?;
        Ok(())
    }

    fn expand_sources(&mut self) -> Result<StageStatus, Fault> {
        let store = match DirectoryStore::new(&self.cfg.copybook_store) {
            Ok(s) => s,
            Err(e) => return self.fail(e.to_string()),
        };
        let mut failures = 0;
        let mut units = Vec::new();
        for source in self.state.sources.clone() {
            let name = file_name(&source);
            let stem = file_stem(&source);
            let text = match fs::read_to_string(&source) {
                Ok(t) => t,
                Err(e) => {
                    self.reporter.info(format!("FAIL {name}: {e}"));
                    failures += 1;
                    continue;
                }
            };
            let expanded = FixedFormatSource::parse(name.clone(), &text)
                .and_then(|src| expand(&src, &store, DEFAULT_MAX_DEPTH));
            let expanded = match expanded {
                Ok(x) => x,
                Err(e) => {
                    self.reporter.info(format!("FAIL {name}: {e}"));
                    failures += 1;
                    continue;
                }
            };
            let out = self.scratch.join(format!("{stem}.expanded.cbl"));
            fs::write(&out, expanded.to_text())?;
            let books = if expanded.copybooks_used.is_empty() {
                "none".to_string()
            } else {
                expanded
                    .copybooks_used
                    .iter()
                    .cloned()
                    .collect::<Vec<_>>()
                    .join(", ")
            };
            self.reporter.info(format!(
                "expanded {name} -> {} ({} lines; copybooks: {books})",
                self.display_path(&out),
                expanded.lines.len()
            ));
            units.push(Unit {
                test: find_test(&self.cfg.test_dir, &stem),
                name,
                stem,
                expanded: out,
            });
        }
        self.state.units = units;
        if failures > 0 {
            let total = self.state.sources.len();
            return self.fail(format!(
                "expansion failed for {failures} of {total} file(s)"
            ));
        }
        Ok(StageStatus::Passed)
    }

    /// argv for one unit; `Err` carries a message for a failed stage.
    fn compiler_argv(&mut self, unit: &Unit) -> Result<Vec<String>, String> {
        let tokens = shlex::split(&self.cfg.compiler_cmd)
            .ok_or_else(|| "compiler_cmd has unbalanced quotes".to_string())?;
        let file = self.display_path(&unit.expanded);
        let test = unit.test.as_ref().map(|t| self.display_path(t));
        let bindings = self.cfg.bindings();
        let mut argv = Vec::with_capacity(tokens.len());
        for token in tokens {
            if token == "${TEST}" && test.is_none() {
                continue;
            }
            let token = substitute_with(&token, |name| match name {
                "FILE" => Some(file.clone()),
                "TEST" => test.clone(),
                _ => None,
            });
            let resolution = {
                let mut store = self
                    .reporter
                    .secrets()
                    .write()
                    .unwrap_or_else(|p| p.into_inner());
                resolve_credentials(&token, &bindings, &self.env, &mut store)
            };
            let resolution = resolution.map_err(|e| format!("compiler_cmd: {e}"))?;
            for (placeholder, err) in resolution.warnings {
                self.reporter.unstable(format!(
                    "value of ${{{placeholder}}} cannot be masked in logs: {err}"
                ));
            }
            argv.push(resolution.text);
        }
        if argv.is_empty() {
            return Err("compiler_cmd is empty".into());
        }
        Ok(argv)
    }

    fn unit_test(&mut self) -> Result<StageStatus, Fault> {
        let units = self.state.units.clone();
        let mut failed = Vec::new();
        let mut unstable = false;
        for unit in &units {
            if unit.test.is_none() {
                self.reporter
                    .unstable(format!("no unit tests for {}", unit.name));
                unstable = true;
            }
            let argv = match self.compiler_argv(unit) {
                Ok(a) => a,
                Err(message) => return self.fail(message),
            };
            let cmd = CommandSpec::new(resolve_program(&argv[0], &self.workspace))
                .args(argv[1..].iter().cloned())
                .workdir(&self.workspace)
                .timeout(self.compile_timeout);
            let result = match self.executor.run(&cmd) {
                Ok(r) => r,
                Err(e @ (ShellError::Spawn { .. } | ShellError::Timeout { .. })) => {
                    self.reporter.info(format!("FAIL {}: {e}", unit.name));
                    failed.push(unit.name.clone());
                    continue;
                }
                Err(e) => return Err(e.into()),
            };
            self.reporter.print(&result.stdout);
            self.reporter.eprint(&result.stderr);
            match result.exit_code {
                0 => self.reporter.info(format!("PASS {}", unit.name)),
                UNSTABLE_EXIT_CODE => {
                    self.reporter
                        .unstable(format!("{} passed with warnings", unit.name));
                    unstable = true;
                }
                code => {
                    self.reporter
                        .info(format!("FAIL {} (exit {code})", unit.name));
                    failed.push(unit.name.clone());
                }
            }
        }
        if !failed.is_empty() {
            return self.fail(format!(
                "unit tests failed for {} of {} file(s): {}",
                failed.len(),
                units.len(),
                failed.join(", ")
            ));
        }
        Ok(if unstable {
            StageStatus::Unstable
        } else {
            StageStatus::Passed
        })
    }

    fn report(&mut self) -> Result<StageStatus, Fault> {
        for r in self.state.results.clone() {
            let status = match r.status {
                StageStatus::Passed => "passed",
                StageStatus::Failed => "failed",
                StageStatus::Unstable => "unstable",
            };
            self.reporter.info(format!("{}: {status}", r.stage_name));
        }
        let Some(mut session) = self.state.session.take() else {
            return Ok(StageStatus::Passed);
        };
        let outcome = self.publish(&mut session);
        self.state.session = Some(session);
        outcome
    }

    /// Uploads expanded sources and submits the build job.
    fn publish(&mut self, session: &mut Session) -> Result<StageStatus, Fault> {
        let dataset = format!("{}.CBLPIPE.EXPANDED", session.user().to_ascii_uppercase());
        let mut members = BTreeSet::new();
        for unit in self.state.units.clone() {
            let member = member_name(&unit.stem);
            let text = fs::read_to_string(&unit.expanded)?;
            if let Err(e) = session.put_member(&dataset, &member, &text) {
                return self.fail(format!("upload of {} failed: {e}", unit.name));
            }
            self.reporter
                .info(format!("uploaded {} to {dataset}({member})", unit.name));
            members.insert(member);
        }
        let commit = self
            .state
            .metadata
            .as_ref()
            .map(|m| m.commit_ref.clone())
            .unwrap_or_default();
        let mut jcl = format!("//CBLPIPE  JOB (ACCT),'CBLPIPE',CLASS=A\n//* COMMIT {commit}\n");
        for (i, m) in members.iter().enumerate() {
            jcl.push_str(&format!("//STEP{:<4} EXEC PGM=IEFBR14,PARM='{m}'\n", i + 1));
        }
        match session.submit_job(&jcl) {
            Ok(job) if job.return_code <= 4 => {
                self.reporter.info(format!(
                    "job {} ended with RC {:04}",
                    job.job_id, job.return_code
                ));
                Ok(StageStatus::Passed)
            }
            Ok(job) => self.fail(format!(
                "job {} ended with RC {:04}",
                job.job_id, job.return_code
            )),
            Err(e) => self.fail(format!("job submission failed: {e}")),
        }
    }

    /// Removes the scratch directory and closes the mainframe session.
    /// Runs once per run; later calls do nothing.
    pub fn cleanup(&mut self) {
        if self.state.cleaned {
            return;
        }
        self.state.cleaned = true;
        self.cleanup_runs += 1;
        if let Some(mut session) = self.state.session.take() {
            session.close();
            self.reporter.info("mainframe session closed");
        }
        let scratch = self.scratch.clone();
        if scratch.join(SCRATCH_MARKER).is_file() {
            if let Err(e) = fs::remove_dir_all(&scratch) {
                self.reporter.unstable(format!(
                    "cleanup could not remove {}: {e}",
                    scratch.display()
                ));
            }
        }
        self.reporter.info("cleanup complete");
    }
}

impl Drop for Engine {
    fn drop(&mut self) {
        if !self.state.cleaned && (self.state.session.is_some() || !self.state.results.is_empty()) {
            self.cleanup();
        }
    }
}
