//! GitHub Actions workflow emission.
//!
//! The job has two halves. The job header sets up the environment: the
//! container image, registry credentials and secrets pulled from the
//! repository secret store. The steps then check out the repository with
//! a pinned action, mark the workspace as a safe directory, run the
//! controller and clean up when something failed.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Write;

use crate::pin::is_pinned_action_ref;

/// `actions/checkout` v4.2.2.
pub const DEFAULT_CHECKOUT_REF: &str = "11bd71901bbe5b1630ceea73d27597364c9af683";

const REGISTRY_USERNAME_SECRET: &str = "REGISTRY_USERNAME";
const REGISTRY_PASSWORD_SECRET: &str = "REGISTRY_PASSWORD";
const RUNNER: &str = "ubuntu-24.04";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SecretBinding {
    pub placeholder: String,
    /// Environment variable the controller reads; also the secret's name
    /// in the platform store.
    pub env: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WorkflowSpec {
    pub name: String,
    pub container_image: Option<String>,
    pub secrets: Vec<SecretBinding>,
    pub checkout_ref: String,
    /// Pipeline configuration path, relative to the repository root.
    pub config_path: String,
    pub scratch_dir: String,
}

impl WorkflowSpec {
    pub fn new(container_image: Option<String>, config_path: impl Into<String>) -> Self {
        Self {
            name: "cobol-pipeline".into(),
            container_image,
            secrets: Vec::new(),
            checkout_ref: DEFAULT_CHECKOUT_REF.into(),
            config_path: config_path.into(),
            scratch_dir: ".cblpipe".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum WorkflowError {
    #[error("no container image configured")]
    MissingImage,
    #[error("checkout action reference {0:?} is not pinned to a commit SHA or full release")]
    UnpinnedAction(String),
    #[error("secret environment variable {0:?} is bound more than once")]
    DuplicateSecret(String),
    #[error("secret environment variable name {0:?} is not a valid identifier")]
    BadSecretName(String),
}

/// Renders the workflow as YAML (UTF-8, LF line endings).
pub fn emit_workflow(spec: &WorkflowSpec) -> Result<String, WorkflowError> {
    let image = spec
        .container_image
        .as_deref()
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .ok_or(WorkflowError::MissingImage)?;
    if !is_pinned_action_ref(&spec.checkout_ref) {
        return Err(WorkflowError::UnpinnedAction(spec.checkout_ref.clone()));
    }
    let mut seen = BTreeSet::new();
    for binding in &spec.secrets {
        let valid = binding
            .env
            .chars()
            .next()
            .is_some_and(|c| c.is_ascii_alphabetic() || c == '_')
            && binding
                .env
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || c == '_');
        if !valid {
            return Err(WorkflowError::BadSecretName(binding.env.clone()));
        }
        if !seen.insert(binding.env.as_str()) {
            return Err(WorkflowError::DuplicateSecret(binding.env.clone()));
        }
    }

    let mut y = String::new();
    // Writing into a String cannot fail.
    let _ = write_document(&mut y, spec, image);
    Ok(y)
}

fn write_document(y: &mut String, spec: &WorkflowSpec, image: &str) -> core::fmt::Result {
    writeln!(
        y,
        "# Generated by cblpipe gen-workflow. Edit the pipeline config, not this file."
    )?;
    writeln!(y, "name: {}", quote(&spec.name))?;
    writeln!(y, "on:")?;
    writeln!(y, "  push:")?;
    writeln!(y, "  pull_request:")?;
    writeln!(y, "  workflow_dispatch:")?;
    writeln!(y, "permissions:")?;
    writeln!(y, "  contents: read")?;
    writeln!(y, "jobs:")?;
    writeln!(y, "  pipeline:")?;
    writeln!(y, "    runs-on: {RUNNER}")?;

    // Part 1: execution environment.
    writeln!(y, "    container:")?;
    writeln!(y, "      image: {}", quote(image))?;
    writeln!(y, "      credentials:")?;
    writeln!(
        y,
        "        username: {}",
        quote(&secret_ref(REGISTRY_USERNAME_SECRET))
    )?;
    writeln!(
        y,
        "        password: {}",
        quote(&secret_ref(REGISTRY_PASSWORD_SECRET))
    )?;
    if !spec.secrets.is_empty() {
        writeln!(y, "    env:")?;
        for binding in &spec.secrets {
            writeln!(
                y,
                "      {}: {}",
                binding.env,
                quote(&secret_ref(&binding.env))
            )?;
        }
    }

    // Part 2: pipeline steps.
    writeln!(y, "    steps:")?;
    writeln!(y, "      - name: Check out repository")?;
    writeln!(y, "        uses: actions/checkout@{}", spec.checkout_ref)?;
    writeln!(y, "      - name: Mark workspace as a safe directory")?;
    writeln!(
        y,
        "        run: {}",
        quote("git config --global --add safe.directory \"$GITHUB_WORKSPACE\"")
    )?;
    writeln!(y, "      - name: Run pipeline controller")?;
    writeln!(
        y,
        "        run: {}",
        quote(&format!(
            "cblpipe run --config {} --backend github",
            shell_word(&spec.config_path)
        ))
    )?;
    writeln!(y, "      - name: Clean up after failure")?;
    writeln!(y, "        if: {}", quote("${{ failure() }}"))?;
    writeln!(
        y,
        "        run: {}",
        quote(&format!("rm -rf -- {}", shell_word(&spec.scratch_dir)))
    )?;
    Ok(())
}

fn secret_ref(name: &str) -> String {
    format!("${{{{ secrets.{name} }}}}")
}

/// YAML single-quoted scalar.
fn quote(s: &str) -> String {
    format!("'{}'", s.replace('\'', "''"))
}

fn shell_word(s: &str) -> String {
    if !s.is_empty()
        && s.chars()
            .all(|c| c.is_ascii_alphanumeric() || "-_./".contains(c))
    {
        String::from(s)
    } else {
        format!("'{}'", s.replace('\'', "'\\''"))
    }
}
