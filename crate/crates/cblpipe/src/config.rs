//! Pipeline configuration file.
//!
//! ```yaml
//! source_dir: src
//! test_dir: tests
//! copybook_store: copybooks
//! container_image: registry.example.com/cbl:1.0.0
//! compiler_cmd: cblpipe-mockcc ${FILE} ${TEST}
//! tool_versions:
//!   gnucobol: "3.2"
//! secrets:
//!   - placeholder: API_TOKEN
//!     env: CBL_API_TOKEN
//! mainframe:
//!   store_root: mainframe
//!   user: IBMUSER
//!   password_env: MF_PASSWORD
//!   latency_ms: 0
//! ```
//!
//! Relative paths are resolved against the directory holding the file.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};

use cblpipe_core::pin;
use cblpipe_core::platform::{SecretBinding, DEFAULT_CHECKOUT_REF};
use serde::Deserialize;

use crate::mainframe::MainframeConfig;

pub const DEFAULT_COMPILER_CMD: &str = "cblpipe-mockcc ${FILE} ${TEST}";

/// `tool_versions` key that pins the checkout action in emitted workflows.
pub const CHECKOUT_ACTION_KEY: &str = "actions/checkout";

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    source_dir: PathBuf,
    test_dir: PathBuf,
    copybook_store: PathBuf,
    #[serde(default)]
    container_image: Option<String>,
    #[serde(default)]
    compiler_cmd: Option<String>,
    #[serde(default)]
    tool_versions: BTreeMap<String, serde_yaml::Value>,
    #[serde(default)]
    secrets: Vec<RawSecret>,
    #[serde(default)]
    mainframe: Option<MainframeConfig>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSecret {
    placeholder: String,
    env: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PipelineConfig {
    /// Directory holding the configuration file.
    pub base_dir: PathBuf,
    pub source_dir: PathBuf,
    pub test_dir: PathBuf,
    pub copybook_store: PathBuf,
    pub container_image: Option<String>,
    pub compiler_cmd: String,
    pub tool_versions: BTreeMap<String, String>,
    pub secrets: Vec<SecretBinding>,
    pub mainframe: Option<MainframeConfig>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FieldError {
    pub field: String,
    pub message: String,
}

impl fmt::Display for FieldError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

fn list(errors: &[FieldError]) -> String {
    errors.iter().map(|e| format!("\n  - {e}")).collect()
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{path}: invalid configuration:{}", list(.errors))]
    Validation {
        path: PathBuf,
        errors: Vec<FieldError>,
    },
}

impl PipelineConfig {
    /// The shape tests and tools need when no file is involved.
    pub fn new(base_dir: impl Into<PathBuf>) -> Self {
        let base_dir = base_dir.into();
        Self {
            source_dir: base_dir.join("src"),
            test_dir: base_dir.join("tests"),
            copybook_store: base_dir.join("copybooks"),
            base_dir,
            container_image: None,
            compiler_cmd: DEFAULT_COMPILER_CMD.into(),
            tool_versions: BTreeMap::new(),
            secrets: Vec::new(),
            mainframe: None,
        }
    }

    pub fn checkout_ref(&self) -> &str {
        self.tool_versions
            .get(CHECKOUT_ACTION_KEY)
            .map(String::as_str)
            .unwrap_or(DEFAULT_CHECKOUT_REF)
    }

    /// Placeholder → environment variable map for credential resolution.
    pub fn bindings(&self) -> BTreeMap<String, String> {
        self.secrets
            .iter()
            .map(|b| (b.placeholder.clone(), b.env.clone()))
            .collect()
    }

    /// Every field violation, in field order.
    pub fn validate(&self) -> Vec<FieldError> {
        let mut errors = Vec::new();
        let mut err = |field: &str, message: String| {
            errors.push(FieldError {
                field: field.into(),
                message,
            })
        };
        for (field, dir) in [
            ("source_dir", &self.source_dir),
            ("test_dir", &self.test_dir),
            ("copybook_store", &self.copybook_store),
        ] {
            if !dir.is_dir() {
                err(field, format!("directory {} does not exist", dir.display()));
            }
        }
        if let Some(image) = &self.container_image {
            if image.trim().is_empty() {
                err("container_image", "must not be empty".into());
            }
        }
        match shlex::split(&self.compiler_cmd) {
            None => err("compiler_cmd", "unbalanced quotes".into()),
            Some(argv) if argv.is_empty() => err("compiler_cmd", "must name a program".into()),
            Some(_) => {}
        }
        for (tool, version) in &self.tool_versions {
            let field = format!("tool_versions.{tool}");
            if tool == CHECKOUT_ACTION_KEY {
                if !pin::is_pinned_action_ref(version) {
                    err(
                        &field,
                        format!("{version:?} is not a commit SHA or exact vX.Y.Z tag"),
                    );
                }
            } else if !pin::is_exact(version) {
                err(&field, format!("{version:?} is not an exact version"));
            }
        }
        let mut placeholders = BTreeSet::new();
        let mut vars = BTreeSet::new();
        for (i, b) in self.secrets.iter().enumerate() {
            let field = format!("secrets[{i}]");
            if !is_identifier(&b.placeholder) {
                err(
                    &field,
                    format!("placeholder {:?} is not a valid name", b.placeholder),
                );
            } else if !placeholders.insert(&b.placeholder) {
                err(
                    &field,
                    format!("placeholder {:?} is bound twice", b.placeholder),
                );
            }
            if !is_identifier(&b.env) {
                err(
                    &field,
                    format!("env {:?} is not a valid variable name", b.env),
                );
            } else if !vars.insert(&b.env) {
                err(&field, format!("env {:?} is bound twice", b.env));
            }
        }
        if let Some(mf) = &self.mainframe {
            if mf.user.trim().is_empty() {
                err("mainframe.user", "must not be empty".into());
            }
            if !is_identifier(&mf.password_env) {
                err(
                    "mainframe.password_env",
                    format!("{:?} is not a valid variable name", mf.password_env),
                );
            }
        }
        errors
    }
}

fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

fn resolve(base: &Path, p: PathBuf) -> PathBuf {
    if p.is_absolute() {
        p
    } else {
        base.join(p)
    }
}

/// Parses configuration text; `path` names the file in error messages and
/// its directory anchors relative paths.
pub fn parse_config(path: &Path, text: &str) -> Result<PipelineConfig, ConfigError> {
    let parse_err = |line: usize, message: String| ConfigError::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    if text.trim().is_empty() {
        return Err(parse_err(1, "empty configuration".into()));
    }
    let raw: RawConfig = serde_yaml::from_str(text).map_err(|e| {
        let line = e.location().map_or(1, |l| l.line());
        parse_err(line, e.to_string())
    })?;

    let mut type_errors = Vec::new();
    let mut tool_versions = BTreeMap::new();
    for (tool, value) in raw.tool_versions {
        match value {
            serde_yaml::Value::String(s) => {
                tool_versions.insert(tool, s);
            }
            other => type_errors.push(FieldError {
                field: format!("tool_versions.{tool}"),
                message: format!(
                    "version must be a quoted string, got {}",
                    serde_yaml::to_string(&other).unwrap_or_default().trim()
                ),
            }),
        }
    }

    let base_dir = path
        .parent()
        .map(Path::to_path_buf)
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or_else(|| PathBuf::from("."));
    let cfg = PipelineConfig {
        source_dir: resolve(&base_dir, raw.source_dir),
        test_dir: resolve(&base_dir, raw.test_dir),
        copybook_store: resolve(&base_dir, raw.copybook_store),
        container_image: raw.container_image,
        compiler_cmd: raw
            .compiler_cmd
            .unwrap_or_else(|| DEFAULT_COMPILER_CMD.into()),
        tool_versions,
        secrets: raw
            .secrets
            .into_iter()
            .map(|s| SecretBinding {
                placeholder: s.placeholder,
                env: s.env,
            })
            .collect(),
        mainframe: raw.mainframe.map(|mut mf| {
            mf.store_root = resolve(&base_dir, mf.store_root);
            mf
        }),
        base_dir,
    };
    let mut errors = cfg.validate();
    errors.extend(type_errors);
    if errors.is_empty() {
        Ok(cfg)
    } else {
        Err(ConfigError::Validation {
            path: path.to_path_buf(),
            errors,
        })
    }
}

pub fn load_config(path: &Path) -> Result<PipelineConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
        path: path.to_path_buf(),
        source,
    })?;
    parse_config(path, &text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    fn workspace() -> tempfile::TempDir {
        let d = tempfile::tempdir().unwrap();
        for sub in ["src", "tests", "copybooks", "mf"] {
            fs::create_dir(d.path().join(sub)).unwrap();
        }
        d
    }

    const VALID: &str = "\
source_dir: src
test_dir: tests
copybook_store: copybooks
container_image: registry.example.com/cbl:1.0.0
tool_versions:
  gnucobol: \"3.2\"
  node: \"20.11.1\"
secrets:
  - placeholder: API_TOKEN
    env: CBL_API_TOKEN
mainframe:
  store_root: mf
  user: IBMUSER
  password_env: MF_PASSWORD
";

    fn parse(dir: &Path, text: &str) -> Result<PipelineConfig, ConfigError> {
        let path = dir.join("pipeline.yaml");
        fs::write(&path, text).unwrap();
        load_config(&path)
    }

    #[test]
    fn valid_config_resolves_paths() {
        let d = workspace();
        let cfg = parse(d.path(), VALID).unwrap();
        assert_eq!(cfg.source_dir, d.path().join("src"));
        assert_eq!(
            cfg.mainframe.as_ref().unwrap().store_root,
            d.path().join("mf")
        );
        assert_eq!(cfg.mainframe.as_ref().unwrap().latency_ms, 0);
        assert_eq!(cfg.compiler_cmd, DEFAULT_COMPILER_CMD);
        assert_eq!(cfg.tool_versions["gnucobol"], "3.2");
        assert_eq!(cfg.checkout_ref(), DEFAULT_CHECKOUT_REF);
        assert_eq!(cfg.bindings()["API_TOKEN"], "CBL_API_TOKEN");
    }

    #[test]
    fn latest_is_rejected() {
        let d = workspace();
        let text = VALID.replace("\"20.11.1\"", "latest");
        let err = parse(d.path(), &text).unwrap_err();
        let ConfigError::Validation { errors, .. } = err else {
            panic!("{err}")
        };
        assert_eq!(errors.len(), 1);
        assert_eq!(errors[0].field, "tool_versions.node");
    }

    #[test]
    fn every_violation_is_listed() {
        let d = workspace();
        let text = VALID
            .replace("source_dir: src", "source_dir: missing")
            .replace("\"3.2\"", "^3.2")
            .replace("\"20.11.1\"", "20.11")
            .replace("password_env: MF_PASSWORD", "password_env: 9BAD");
        let ConfigError::Validation { errors, .. } = parse(d.path(), &text).unwrap_err() else {
            panic!()
        };
        let fields: Vec<_> = errors.iter().map(|e| e.field.as_str()).collect();
        assert_eq!(
            fields,
            [
                "source_dir",
                "tool_versions.gnucobol",
                "mainframe.password_env",
                "tool_versions.node"
            ]
        );
    }

    #[test]
    fn empty_file_is_a_parse_error() {
        let d = workspace();
        assert!(matches!(
            parse(d.path(), ""),
            Err(ConfigError::Parse { line: 1, .. })
        ));
        assert!(matches!(
            parse(d.path(), "  \n\n"),
            Err(ConfigError::Parse { .. })
        ));
    }

    #[test]
    fn parse_errors_carry_a_line() {
        let d = workspace();
        let text = VALID.replace("mainframe:", "mainframe: [\n");
        let err = parse(d.path(), &text).unwrap_err();
        assert!(matches!(err, ConfigError::Parse { line: 11, .. }), "{err}");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let d = workspace();
        let err = parse(d.path(), &format!("{VALID}stages: 4\n")).unwrap_err();
        assert!(
            matches!(err, ConfigError::Parse { ref message, .. } if message.contains("stages")),
            "{err}"
        );
    }

    #[test]
    fn duplicate_secret_bindings() {
        let d = workspace();
        let text = VALID.replace(
            "    env: CBL_API_TOKEN\n",
            "    env: CBL_API_TOKEN\n  - placeholder: API_TOKEN\n    env: CBL_API_TOKEN\n",
        );
        let ConfigError::Validation { errors, .. } = parse(d.path(), &text).unwrap_err() else {
            panic!()
        };
        assert_eq!(errors.len(), 2);
        assert!(errors.iter().all(|e| e.field == "secrets[1]"));
    }

    #[test]
    fn checkout_pin_comes_from_tool_versions() {
        let d = workspace();
        let text = VALID.replace(
            "tool_versions:\n",
            "tool_versions:\n  actions/checkout: \"v4.2.2\"\n",
        );
        assert_eq!(parse(d.path(), &text).unwrap().checkout_ref(), "v4.2.2");
        let text = VALID.replace(
            "tool_versions:\n",
            "tool_versions:\n  actions/checkout: \"v4\"\n",
        );
        assert!(parse(d.path(), &text).is_err());
    }

    #[test]
    fn numeric_versions_must_be_quoted() {
        let d = workspace();
        let text = VALID.replace("\"3.2\"", "3.2");
        let ConfigError::Validation { errors, .. } = parse(d.path(), &text).unwrap_err() else {
            panic!()
        };
        assert_eq!(errors[0].field, "tool_versions.gnucobol");
    }

    #[test]
    fn unbalanced_compiler_command() {
        let d = workspace();
        let text = format!("{VALID}compiler_cmd: \"cc '${{FILE}}\"\n");
        let ConfigError::Validation { errors, .. } = parse(d.path(), &text).unwrap_err() else {
            panic!()
        };
        assert_eq!(errors[0].field, "compiler_cmd");
    }
}
