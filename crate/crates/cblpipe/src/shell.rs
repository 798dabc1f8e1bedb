//! Child-process execution.
//!
//! Commands are argv vectors handed straight to the OS; no shell is
//! involved unless [`CommandSpec::raw_shell`] is set. Both output streams
//! are drained on their own threads while the child runs, so a child that
//! fills one pipe while the other sits idle cannot stall.

use std::collections::BTreeMap;
use std::io::{self, Read};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, ExitStatus, Stdio};
use std::sync::{Arc, RwLock};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use cblpipe_core::SecretStore;
use wait_timeout::ChildExt;

/// Secret store shared between the reporter and everything that resolves
/// credentials. Many readers, one writer.
pub type SharedSecrets = Arc<RwLock<SecretStore>>;

pub fn shared_secrets() -> SharedSecrets {
    Arc::new(RwLock::new(SecretStore::new()))
}

/// Redacts `text` with whatever is registered in `secrets` right now.
pub fn redact(secrets: &SharedSecrets, text: &str) -> String {
    match secrets.read() {
        Ok(store) => store.redact(text),
        Err(poisoned) => poisoned.into_inner().redact(text),
    }
}

/// Per-stream capture limit.
pub const DEFAULT_CAPTURE_CAP: usize = 16 * 1024 * 1024;

pub const TRUNCATION_MARKER: &str = "\n[cblpipe: output truncated]\n";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommandSpec {
    pub program: String,
    pub args: Vec<String>,
    pub env_overrides: BTreeMap<String, String>,
    pub workdir: PathBuf,
    pub timeout: Option<Duration>,
    /// Run `program` as a script through `/bin/sh -c`.
    pub raw_shell: bool,
}

impl CommandSpec {
    pub fn new(program: impl Into<String>) -> Self {
        Self {
            program: program.into(),
            args: Vec::new(),
            env_overrides: BTreeMap::new(),
            workdir: PathBuf::from("."),
            timeout: None,
            raw_shell: false,
        }
    }

    /// A script for `/bin/sh -c`. Use only when argv cannot express it.
    pub fn shell_script(script: impl Into<String>) -> Self {
        Self {
            raw_shell: true,
            ..Self::new(script)
        }
    }

    pub fn arg(mut self, arg: impl Into<String>) -> Self {
        self.args.push(arg.into());
        self
    }

    pub fn args<I, S>(mut self, args: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.args.extend(args.into_iter().map(Into::into));
        self
    }

    pub fn env(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.env_overrides.insert(key.into(), value.into());
        self
    }

    pub fn workdir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.workdir = dir.into();
        self
    }

    pub fn timeout(mut self, timeout: Duration) -> Self {
        self.timeout = Some(timeout);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExecResult {
    pub exit_code: i32,
    pub stdout: String,
    pub stderr: String,
    pub duration_ms: u64,
    pub stdout_truncated: bool,
    pub stderr_truncated: bool,
}

impl ExecResult {
    pub fn success(&self) -> bool {
        self.exit_code == 0
    }

    /// stdout followed by stderr.
    pub fn combined_output(&self) -> String {
        let mut s = self.stdout.clone();
        s.push_str(&self.stderr);
        s
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ShellError {
    #[error("empty program")]
    EmptyProgram,
    #[error("working directory {0} does not exist")]
    MissingWorkdir(PathBuf),
    #[error("failed to start {program}: {source}")]
    Spawn {
        program: String,
        #[source]
        source: io::Error,
    },
    #[error("{program} timed out after {after_ms} ms and was killed")]
    Timeout { program: String, after_ms: u64 },
    #[error("i/o error while running {program}: {source}")]
    Io {
        program: String,
        #[source]
        source: io::Error,
    },
}

#[derive(Debug, Clone)]
pub struct Executor {
    capture_cap: usize,
}

impl Default for Executor {
    fn default() -> Self {
        Self::new()
    }
}

struct Captured {
    bytes: Vec<u8>,
    truncated: bool,
}

fn drain<R: Read + Send + 'static>(mut stream: R, cap: usize) -> JoinHandle<io::Result<Captured>> {
    thread::spawn(move || {
        let mut bytes = Vec::new();
        let mut truncated = false;
        let mut buf = [0u8; 64 * 1024];
        loop {
            let n = match stream.read(&mut buf) {
                Ok(0) => break,
                Ok(n) => n,
                Err(e) if e.kind() == io::ErrorKind::Interrupted => continue,
                Err(e) => return Err(e),
            };
            let room = cap.saturating_sub(bytes.len());
            if n > room {
                truncated = true;
            }
            bytes.extend_from_slice(&buf[..n.min(room)]);
        }
        Ok(Captured { bytes, truncated })
    })
}

fn exit_code(status: ExitStatus) -> i32 {
    if let Some(code) = status.code() {
        return code;
    }
    #[cfg(unix)]
    {
        use std::os::unix::process::ExitStatusExt;
        if let Some(sig) = status.signal() {
            return 128 + sig;
        }
    }
    -1
}

fn into_text(c: Captured) -> String {
    let mut s = String::from_utf8_lossy(&c.bytes).into_owned();
    if c.truncated {
        s.push_str(TRUNCATION_MARKER);
    }
    s
}

impl Executor {
    pub fn new() -> Self {
        Self {
            capture_cap: DEFAULT_CAPTURE_CAP,
        }
    }

    pub fn with_capture_cap(cap: usize) -> Self {
        Self { capture_cap: cap }
    }

    fn command(cmd: &CommandSpec) -> Command {
        let mut c = if cmd.raw_shell {
            let mut c = Command::new("/bin/sh");
            c.arg("-c").arg(&cmd.program).arg("sh").args(&cmd.args);
            c
        } else {
            let mut c = Command::new(&cmd.program);
            c.args(&cmd.args);
            c
        };
        c.current_dir(&cmd.workdir)
            .envs(&cmd.env_overrides)
            .stdin(Stdio::null())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped());
        c
    }

    pub fn run(&self, cmd: &CommandSpec) -> Result<ExecResult, ShellError> {
        if cmd.program.trim().is_empty() {
            return Err(ShellError::EmptyProgram);
        }
        if !cmd.workdir.is_dir() {
            return Err(ShellError::MissingWorkdir(cmd.workdir.clone()));
        }
        let started = Instant::now();
        let mut child = Self::command(cmd)
            .spawn()
            .map_err(|source| ShellError::Spawn {
                program: cmd.program.clone(),
                source,
            })?;
        let out = drain(child.stdout.take().expect("piped stdout"), self.capture_cap);
        let err = drain(child.stderr.take().expect("piped stderr"), self.capture_cap);

        let status = self.wait(&mut child, cmd);
        let (status, out, err) = match status {
            Ok(status) => (status, out.join(), err.join()),
            Err(e) => {
                let _ = out.join();
                let _ = err.join();
                return Err(e);
            }
        };
        let io_err = |source| ShellError::Io {
            program: cmd.program.clone(),
            source,
        };
        let stdout = out.expect("stdout reader panicked").map_err(io_err)?;
        let stderr = err.expect("stderr reader panicked").map_err(io_err)?;
        Ok(ExecResult {
            exit_code: exit_code(status),
            stdout_truncated: stdout.truncated,
            stderr_truncated: stderr.truncated,
            stdout: into_text(stdout),
            stderr: into_text(stderr),
            duration_ms: started.elapsed().as_millis() as u64,
        })
    }

    fn wait(&self, child: &mut Child, cmd: &CommandSpec) -> Result<ExitStatus, ShellError> {
        let io_err = |source| ShellError::Io {
            program: cmd.program.clone(),
            source,
        };
        let Some(limit) = cmd.timeout else {
            return child.wait().map_err(io_err);
        };
        match child.wait_timeout(limit).map_err(io_err)? {
            Some(status) => Ok(status),
            None => {
                let _ = child.kill();
                let _ = child.wait();
                Err(ShellError::Timeout {
                    program: cmd.program.clone(),
                    after_ms: limit.as_millis() as u64,
                })
            }
        }
    }
}

/// Runs `cmd` with a default executor.
pub fn run(cmd: &CommandSpec) -> Result<ExecResult, ShellError> {
    Executor::new().run(cmd)
}

/// Looks for `name` beside the running executable.
pub fn sibling_executable(name: &str) -> Option<PathBuf> {
    let exe = std::env::current_exe().ok()?;
    let candidate = exe.parent()?.join(name);
    candidate.is_file().then_some(candidate)
}

/// Resolves a bare program name: a path stays as is (relative paths are
/// taken from `base`), a name shipped beside this executable wins over the
/// search path, anything else is left for the OS to find.
pub fn resolve_program(program: &str, base: &Path) -> String {
    if program.contains(std::path::MAIN_SEPARATOR) || program.contains('/') {
        let p = Path::new(program);
        if p.is_relative() {
            return base.join(p).to_string_lossy().into_owned();
        }
        return program.to_string();
    }
    sibling_executable(program)
        .map(|p| p.to_string_lossy().into_owned())
        .unwrap_or_else(|| program.to_string())
}
