//! `${NAME}` placeholder substitution for command templates.
//!
//! Credential values are pulled from an environment snapshot and every
//! value that gets substituted is registered with the [`SecretStore`] so
//! that later log output masks it.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::redact::{SecretError, SecretStore};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CredentialError {
    #[error("placeholder ${{{0}}} has no binding")]
    UnboundPlaceholder(String),
    #[error(
        "placeholder ${{{placeholder}}} is bound to environment variable {var}, which is not set"
    )]
    MissingEnvVar { placeholder: String, var: String },
}

/// A resolved template plus any secrets that were substituted but could
/// not be registered for masking.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Resolution {
    pub text: String,
    pub warnings: Vec<(String, SecretError)>,
}

/// Names of all `${NAME}` placeholders in `template`, in order of appearance.
pub fn placeholders(template: &str) -> Vec<&str> {
    let mut names = Vec::new();
    scan(template, |segment| {
        if let Segment::Placeholder(name) = segment {
            names.push(name);
        }
    });
    names
}

/// Replaces each placeholder for which `lookup` returns a value and leaves
/// the rest of the template untouched.
pub fn substitute_with<F>(template: &str, mut lookup: F) -> String
where
    F: FnMut(&str) -> Option<String>,
{
    let mut out = String::with_capacity(template.len());
    scan(template, |segment| match segment {
        Segment::Text(text) => out.push_str(text),
        Segment::Placeholder(name) => match lookup(name) {
            Some(value) => out.push_str(&value),
            None => {
                out.push_str("${");
                out.push_str(name);
                out.push('}');
            }
        },
    });
    out
}

/// Resolves every placeholder in `template` through `bindings`
/// (placeholder → environment variable name) and `env`.
///
/// All placeholders are checked before anything is substituted, so an
/// error never leaves a half-resolved credential behind.
pub fn resolve_credentials(
    template: &str,
    bindings: &BTreeMap<String, String>,
    env: &BTreeMap<String, String>,
    store: &mut SecretStore,
) -> Result<Resolution, CredentialError> {
    let mut values: BTreeMap<&str, &str> = BTreeMap::new();
    for name in placeholders(template) {
        let var = bindings
            .get(name)
            .ok_or_else(|| CredentialError::UnboundPlaceholder(name.to_string()))?;
        let value = env.get(var).ok_or_else(|| CredentialError::MissingEnvVar {
            placeholder: name.to_string(),
            var: var.clone(),
        })?;
        values.insert(name, value.as_str());
    }

    let mut warnings = Vec::new();
    for (name, value) in &values {
        if let Err(err) = store.register(value) {
            warnings.push((name.to_string(), err));
        }
    }
    let text = substitute_with(template, |name| values.get(name).map(|v| v.to_string()));
    Ok(Resolution { text, warnings })
}

enum Segment<'a> {
    Text(&'a str),
    Placeholder(&'a str),
}

fn is_name(name: &str) -> bool {
    let mut chars = name.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

fn scan<'a>(template: &'a str, mut emit: impl FnMut(Segment<'a>)) {
    let mut rest = template;
    while let Some(open) = rest.find("${") {
        let after = &rest[open + 2..];
        match after.find('}') {
            Some(close) if is_name(&after[..close]) => {
                if open > 0 {
                    emit(Segment::Text(&rest[..open]));
                }
                emit(Segment::Placeholder(&after[..close]));
                rest = &after[close + 1..];
            }
            _ => {
                // Not a placeholder; keep the "${" literally and move on.
                emit(Segment::Text(&rest[..open + 2]));
                rest = after;
            }
        }
    }
    if !rest.is_empty() {
        emit(Segment::Text(rest));
    }
}
