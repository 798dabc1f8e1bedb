//! Process-facing half of the platform layer: environment snapshots,
//! env files, build metadata from git, and the status reporter.
//!
//! This module and `cblpipe_core::platform` are the only places that know
//! about CI-platform environment keys.

use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::Instant;

pub use cblpipe_core::platform::*;
use cblpipe_core::status::Channel;
use cblpipe_core::{Level, StatusEvent};

use crate::shell::{self, CommandSpec, Executor, SharedSecrets};

#[derive(Debug, thiserror::Error)]
pub enum PlatformError {
    #[error("cannot read env file {path}: {source}")]
    EnvFileRead {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}: {source}")]
    EnvFileSyntax {
        path: PathBuf,
        #[source]
        source: EnvFileError,
    },
    #[error(transparent)]
    Metadata(#[from] MetadataError),
}

pub fn env_snapshot() -> EnvMap {
    std::env::vars().collect()
}

/// The environment the pipeline sees under `backend`.
///
/// For the env-file backend the file named by `CBL_ENV_FILE` is read and
/// its entries override the process environment.
pub fn effective_environment(backend: BackendKind, env: &EnvMap) -> Result<EnvMap, PlatformError> {
    let mut merged = env.clone();
    if backend != BackendKind::EnvFile {
        return Ok(merged);
    }
    let Some(path) = env.get(CBL_ENV_FILE) else {
        return Ok(merged);
    };
    let path = PathBuf::from(path);
    let text = std::fs::read_to_string(&path).map_err(|source| PlatformError::EnvFileRead {
        path: path.clone(),
        source,
    })?;
    let file =
        parse_env_file(&text).map_err(|source| PlatformError::EnvFileSyntax { path, source })?;
    merged.extend(file);
    Ok(merged)
}

fn git(workspace: &Path, args: &[&str]) -> Option<String> {
    let cmd = CommandSpec::new("git")
        .args(args.iter().copied())
        .workdir(workspace);
    let out = Executor::new().run(&cmd).ok()?;
    let text = out.stdout.trim();
    (out.success() && !text.is_empty()).then(|| text.to_string())
}

/// `owner/name` from a remote URL such as `git@host:owner/name.git`.
fn repository_from_url(url: &str) -> Option<String> {
    let trimmed = url.trim().trim_end_matches('/');
    let trimmed = trimmed.strip_suffix(".git").unwrap_or(trimmed);
    let mut parts = trimmed.rsplit(['/', ':']);
    let name = parts.next().filter(|s| !s.is_empty())?;
    let owner = parts.next().filter(|s| !s.is_empty() && !s.contains('@'))?;
    Some(format!("{owner}/{name}"))
}

/// Asks git for commit, branch and repository of `workspace`.
pub fn metadata_from_git(workspace: &Path) -> Result<BuildMetadata, MetadataError> {
    let unavailable = || {
        MetadataError::Unavailable(format!(
            "{} is not a git repository with a commit",
            workspace.display()
        ))
    };
    if !workspace.is_dir() {
        return Err(unavailable());
    }
    let commit = git(workspace, &["rev-parse", "HEAD"]).ok_or_else(unavailable)?;
    let branch =
        git(workspace, &["rev-parse", "--abbrev-ref", "HEAD"]).unwrap_or_else(|| "HEAD".into());
    let repository = git(workspace, &["config", "--get", "remote.origin.url"])
        .and_then(|url| repository_from_url(&url))
        .or_else(|| {
            let top = git(workspace, &["rev-parse", "--show-toplevel"])?;
            let name = Path::new(&top).file_name()?.to_string_lossy().into_owned();
            Some(format!("local/{name}"))
        })
        .unwrap_or_else(|| "local/unknown".into());
    BuildMetadata::new(
        commit,
        repository,
        branch,
        MetadataSource::VersionControlQuery,
    )
}

/// Build metadata for `backend`: environment keys when the backend has
/// them, otherwise a version-control query in `workspace`.
pub fn get_build_metadata(
    backend: BackendKind,
    workspace: &Path,
    env: &EnvMap,
) -> Result<BuildMetadata, MetadataError> {
    if let Some(meta) = metadata_from_environment(backend, env)? {
        return Ok(meta);
    }
    metadata_from_git(workspace)
}

/// Whether an event lets the run carry on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Flow {
    Continue,
    Terminate,
}

/// An in-memory sink usable as reporter output in tests and benchmarks.
#[derive(Debug, Clone, Default)]
pub struct MemorySink(Arc<Mutex<Vec<u8>>>);

impl MemorySink {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn contents(&self) -> String {
        let bytes = self.0.lock().unwrap_or_else(|p| p.into_inner());
        String::from_utf8_lossy(&bytes).into_owned()
    }
}

impl Write for MemorySink {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        self.0
            .lock()
            .unwrap_or_else(|p| p.into_inner())
            .extend_from_slice(buf);
        Ok(buf.len())
    }

    fn flush(&mut self) -> io::Result<()> {
        Ok(())
    }
}

/// Writes status lines to stdout/stderr. Every line is redacted against
/// the shared secret store first, and while a capture is open it is also
/// appended to the capture buffer.
pub struct Reporter {
    stdout: Box<dyn Write + Send>,
    stderr: Box<dyn Write + Send>,
    secrets: SharedSecrets,
    epoch: Instant,
    capture: Option<String>,
}

impl Reporter {
    pub fn new(
        stdout: impl Write + Send + 'static,
        stderr: impl Write + Send + 'static,
        secrets: SharedSecrets,
    ) -> Self {
        Self {
            stdout: Box::new(stdout),
            stderr: Box::new(stderr),
            secrets,
            epoch: Instant::now(),
            capture: None,
        }
    }

    pub fn stdio(secrets: SharedSecrets) -> Self {
        Self::new(io::stdout(), io::stderr(), secrets)
    }

    /// Discards everything.
    pub fn sink(secrets: SharedSecrets) -> Self {
        Self::new(io::sink(), io::sink(), secrets)
    }

    pub fn secrets(&self) -> &SharedSecrets {
        &self.secrets
    }

    pub fn elapsed_ms(&self) -> u64 {
        self.epoch.elapsed().as_millis() as u64
    }

    pub fn event(&self, level: Level, message: impl Into<String>) -> StatusEvent {
        StatusEvent::new(level, message, self.elapsed_ms())
    }

    fn write_line(&mut self, channel: Channel, text: &str) {
        let clean = shell::redact(&self.secrets, text);
        let sink = match channel {
            Channel::Stdout => &mut self.stdout,
            Channel::Stderr => &mut self.stderr,
        };
        let _ = writeln!(sink, "{clean}");
        let _ = sink.flush();
        if let Some(buf) = &mut self.capture {
            buf.push_str(&clean);
            buf.push('\n');
        }
    }

    /// Emits one event and says whether the run may continue.
    pub fn emit(&mut self, event: &StatusEvent) -> Flow {
        let (channel, line) = event.render();
        for l in line.lines() {
            self.write_line(channel, l);
        }
        if line.is_empty() {
            self.write_line(channel, "");
        }
        if event.terminates() {
            Flow::Terminate
        } else {
            Flow::Continue
        }
    }

    pub fn report(&mut self, level: Level, message: impl Into<String>) -> Flow {
        let event = self.event(level, message);
        self.emit(&event)
    }

    pub fn info(&mut self, message: impl Into<String>) {
        self.report(Level::Info, message);
    }

    pub fn unstable(&mut self, message: impl Into<String>) {
        self.report(Level::Unstable, message);
    }

    pub fn error(&mut self, message: impl Into<String>) -> Flow {
        self.report(Level::Error, message)
    }

    /// Multi-line output text (results, tables, documents) on stdout.
    pub fn print(&mut self, text: &str) {
        for l in text.lines() {
            self.write_line(Channel::Stdout, l);
        }
    }

    /// Diagnostic text on stderr.
    pub fn eprint(&mut self, text: &str) {
        for l in text.lines() {
            self.write_line(Channel::Stderr, l);
        }
    }

    pub fn begin_capture(&mut self) {
        self.capture = Some(String::new());
    }

    /// Ends the open capture and returns it, redacted against the current
    /// store.
    pub fn end_capture(&mut self) -> String {
        let text = self.capture.take().unwrap_or_default();
        shell::redact(&self.secrets, &text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shell::shared_secrets;

    fn env(pairs: &[(&str, &str)]) -> EnvMap {
        pairs
            .iter()
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect()
    }

    fn reporter() -> (Reporter, MemorySink, MemorySink, SharedSecrets) {
        let out = MemorySink::new();
        let err = MemorySink::new();
        let secrets = shared_secrets();
        (
            Reporter::new(out.clone(), err.clone(), secrets.clone()),
            out,
            err,
            secrets,
        )
    }

    #[test]
    fn status_levels_route_to_channels() {
        let (mut r, out, err, _) = reporter();
        assert_eq!(r.report(Level::Info, "checkout done"), Flow::Continue);
        assert_eq!(r.report(Level::Unstable, "flaky test"), Flow::Continue);
        assert_eq!(r.report(Level::Error, "compile failed"), Flow::Terminate);
        assert_eq!(out.contents(), "checkout done\n[UNSTABLE] flaky test\n");
        assert_eq!(err.contents(), "compile failed\n");
    }

    #[test]
    fn reporter_redacts_and_captures() {
        let (mut r, out, _, secrets) = reporter();
        secrets.write().unwrap().register("s3cret-pw").unwrap();
        r.begin_capture();
        r.info("login --pw s3cret-pw");
        r.error("failed with s3cret-pw");
        let captured = r.end_capture();
        assert_eq!(out.contents(), "login --pw ***\n");
        assert_eq!(captured, "login --pw ***\nfailed with ***\n");
        r.info("after");
        assert_eq!(r.end_capture(), "");
    }

    #[test]
    fn event_timestamps_are_monotonic() {
        let (r, ..) = reporter();
        let a = r.event(Level::Info, "a");
        let b = r.event(Level::Info, "b");
        assert!(b.timestamp_ms >= a.timestamp_ms);
    }

    #[test]
    fn github_metadata_passes_through() {
        let e = env(&[
            ("GITHUB_ACTIONS", "true"),
            ("GITHUB_SHA", "a1b2c3d4e5f6a7b8c9d0a1b2c3d4e5f6a7b8c9d0"),
            ("GITHUB_REPOSITORY", "org/repo"),
            ("GITHUB_REF_NAME", "main"),
        ]);
        let dir = tempfile::tempdir().unwrap();
        let m = get_build_metadata(detect_backend(&e), dir.path(), &e).unwrap();
        assert_eq!(
            m,
            BuildMetadata {
                commit_ref: "a1b2c3d4e5f6a7b8c9d0a1b2c3d4e5f6a7b8c9d0".into(),
                repository_id: "org/repo".into(),
                branch: "main".into(),
                source: MetadataSource::Environment,
            }
        );
    }

    #[test]
    fn non_git_directory_has_no_metadata() {
        let dir = tempfile::tempdir().unwrap();
        let err = get_build_metadata(BackendKind::Local, dir.path(), &EnvMap::new()).unwrap_err();
        assert!(matches!(err, MetadataError::Unavailable(_)));
    }

    #[test]
    fn env_file_overrides_process_environment() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("ci.env");
        std::fs::write(&file, "# ci\nCBL_BRANCH=release\nTOKEN=\"abc def\"\n").unwrap();
        let e = env(&[
            ("CBL_ENV_FILE", file.to_str().unwrap()),
            ("CBL_BRANCH", "dev"),
        ]);
        let merged = effective_environment(BackendKind::EnvFile, &e).unwrap();
        assert_eq!(merged["CBL_BRANCH"], "release");
        assert_eq!(merged["TOKEN"], "abc def");
        assert_eq!(
            effective_environment(BackendKind::Local, &e).unwrap()["CBL_BRANCH"],
            "dev"
        );
    }

    #[test]
    fn bad_env_file_reports_the_line() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("ci.env");
        std::fs::write(&file, "A=1\nnot a pair\n").unwrap();
        let e = env(&[("CBL_ENV_FILE", file.to_str().unwrap())]);
        let err = effective_environment(BackendKind::EnvFile, &e).unwrap_err();
        assert!(matches!(err, PlatformError::EnvFileSyntax { ref source, .. } if source.line == 2));
    }

    #[test]
    fn remote_urls() {
        assert_eq!(
            repository_from_url("git@github.com:org/repo.git").as_deref(),
            Some("org/repo")
        );
        assert_eq!(
            repository_from_url("https://example.com/a/b/").as_deref(),
            Some("a/b")
        );
        assert_eq!(repository_from_url("repo"), None);
    }
}
