//! Toolchain verification and dependency-list files.
//!
//! Each dependency carries the argv that prints its version and a
//! substring that output must contain. Verification runs every command
//! through the shell executor; one failure fails the whole image.

use std::path::Path;

use cblpipe_core::recipe::DependencySpec;
use serde::Serialize;

use crate::shell::{CommandSpec, Executor};

pub const EXCERPT_LIMIT: usize = 200;

#[derive(Debug, thiserror::Error)]
pub enum DepsError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
}

/// Reads a YAML list of dependency specs.
pub fn load_deps(path: &Path) -> Result<Vec<DependencySpec>, DepsError> {
    let shown = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|source| DepsError::Read {
        path: shown.clone(),
        source,
    })?;
    parse_deps(&shown, &text)
}

pub fn parse_deps(origin: &str, text: &str) -> Result<Vec<DependencySpec>, DepsError> {
    if text.trim().is_empty() {
        return Ok(Vec::new());
    }
    serde_yaml::from_str(text).map_err(|e| DepsError::Parse {
        path: origin.into(),
        message: e.to_string(),
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ToolCheck {
    pub name: String,
    pub version: String,
    pub passed: bool,
    pub exit_code: Option<i32>,
    /// Start of the observed output, or the reason the command did not run.
    pub excerpt: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct VerificationReport {
    pub checks: Vec<ToolCheck>,
    pub warnings: Vec<String>,
    pub passed: bool,
}

fn excerpt(text: &str) -> String {
    let first: String = text.trim().chars().take(EXCERPT_LIMIT).collect();
    first.replace('\n', " | ")
}

fn check(dep: &DependencySpec, executor: &Executor, workdir: &Path) -> ToolCheck {
    let mut result = ToolCheck {
        name: dep.name.clone(),
        version: dep.version.clone(),
        passed: false,
        exit_code: None,
        excerpt: String::new(),
    };
    let Some((program, args)) = dep.version_cmd.split_first() else {
        result.excerpt = "no version command".into();
        return result;
    };
    let cmd = CommandSpec::new(program.clone())
        .args(args.iter().cloned())
        .workdir(workdir);
    match executor.run(&cmd) {
        Ok(out) => {
            let combined = out.combined_output();
            result.exit_code = Some(out.exit_code);
            result.passed = out.success() && combined.contains(&dep.expected_pattern);
            result.excerpt = excerpt(&combined);
        }
        Err(e) => result.excerpt = e.to_string(),
    }
    result
}

/// Runs each dependency's version command, one after another.
pub fn verify_tools(
    deps: &[DependencySpec],
    executor: &Executor,
    workdir: &Path,
) -> VerificationReport {
    let checks: Vec<ToolCheck> = deps.iter().map(|d| check(d, executor, workdir)).collect();
    let mut warnings = Vec::new();
    if deps.is_empty() {
        warnings.push("no dependencies listed; nothing was verified".to_string());
    }
    VerificationReport {
        passed: checks.iter().all(|c| c.passed),
        checks,
        warnings,
    }
}

impl VerificationReport {
    pub fn render_text(&self) -> String {
        let mut s = String::new();
        for w in &self.warnings {
            s.push_str(&format!("warning: {w}\n"));
        }
        for c in &self.checks {
            let verdict = if c.passed { "PASS" } else { "FAIL" };
            let code = c.exit_code.map_or("-".to_string(), |c| c.to_string());
            s.push_str(&format!(
                "{verdict} {} {} (exit {code}): {}\n",
                c.name, c.version, c.excerpt
            ));
        }
        let failed = self.checks.iter().filter(|c| !c.passed).count();
        s.push_str(&format!(
            "verification {}: {} of {} tool(s) passed\n",
            if self.passed { "passed" } else { "failed" },
            self.checks.len() - failed,
            self.checks.len()
        ));
        s
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}
