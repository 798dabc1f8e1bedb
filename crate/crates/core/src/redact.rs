//! Secret registration and log redaction.

use alloc::collections::BTreeSet;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

/// Replacement token used when no custom mask is configured.
pub const DEFAULT_MASK: &str = "***";

/// Secrets shorter than this many characters are refused.
pub const MIN_SECRET_LEN: usize = 4;

// Each pass shrinks the text when the mask is shorter than MIN_SECRET_LEN;
// the bound only matters for long custom masks.
const MAX_PASSES: usize = 16;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SecretError {
    #[error("refusing to register an empty secret")]
    Empty,
    #[error("secret of {len} characters is shorter than the {MIN_SECRET_LEN}-character minimum and will not be masked")]
    TooShort { len: usize },
    #[error("secret is contained in the mask itself")]
    InsideMask,
}

/// The set of values that must never reach a log sink.
///
/// Values live only in memory. The type deliberately has no `Serialize`
/// impl and its `Debug` output lists only the count.
#[derive(Clone)]
pub struct SecretStore {
    secrets: BTreeSet<String>,
    mask: String,
}

impl Default for SecretStore {
    fn default() -> Self {
        Self::new()
    }
}

impl fmt::Debug for SecretStore {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SecretStore")
            .field("secrets", &self.secrets.len())
            .field("mask", &self.mask)
            .finish()
    }
}

impl SecretStore {
    pub fn new() -> Self {
        Self::with_mask(DEFAULT_MASK)
    }

    pub fn with_mask(mask: &str) -> Self {
        Self {
            secrets: BTreeSet::new(),
            mask: mask.to_string(),
        }
    }

    pub fn mask(&self) -> &str {
        &self.mask
    }

    pub fn len(&self) -> usize {
        self.secrets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.secrets.is_empty()
    }

    pub fn contains(&self, value: &str) -> bool {
        self.secrets.contains(value)
    }

    /// Adds `value` to the store. Returns `Ok(true)` when the value was new
    /// and `Ok(false)` when it was already registered.
    pub fn register(&mut self, value: &str) -> Result<bool, SecretError> {
        if value.is_empty() {
            return Err(SecretError::Empty);
        }
        let len = value.chars().count();
        if len < MIN_SECRET_LEN {
            return Err(SecretError::TooShort { len });
        }
        if self.mask.contains(value) {
            return Err(SecretError::InsideMask);
        }
        Ok(self.secrets.insert(value.to_string()))
    }

    /// Replaces every occurrence of every registered secret with the mask.
    ///
    /// Overlapping occurrences are masked as a single region, so the longest
    /// covering match always wins and no fragment of a partially overlapped
    /// secret survives. Passes repeat until the output is clean, which also
    /// catches secrets that only form once a mask lands next to other text.
    pub fn redact(&self, text: &str) -> String {
        if self.secrets.is_empty() {
            return text.to_string();
        }
        let mut current = self.redact_pass(text);
        for _ in 0..MAX_PASSES {
            if !self.secrets.iter().any(|s| current.contains(s.as_str())) {
                break;
            }
            current = self.redact_pass(&current);
        }
        current
    }

    fn redact_pass(&self, text: &str) -> String {
        let mut regions: Vec<(usize, usize)> = Vec::new();
        for secret in &self.secrets {
            let mut from = 0;
            while let Some(pos) = text[from..].find(secret.as_str()) {
                let start = from + pos;
                regions.push((start, start + secret.len()));
                // Step one character so overlapping occurrences are found too.
                from = start + text[start..].chars().next().map_or(1, char::len_utf8);
            }
        }
        if regions.is_empty() {
            return text.to_string();
        }
        regions.sort_unstable();

        let mut out = String::with_capacity(text.len());
        let mut cursor = 0;
        let mut iter = regions.into_iter().peekable();
        while let Some((start, mut end)) = iter.next() {
            while let Some(&(next_start, next_end)) = iter.peek() {
                if next_start < end {
                    end = end.max(next_end);
                    iter.next();
                } else {
                    break;
                }
            }
            out.push_str(&text[cursor..start]);
            out.push_str(&self.mask);
            cursor = end;
        }
        out.push_str(&text[cursor..]);
        out
    }
}
