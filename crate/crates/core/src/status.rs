//! Status events and how each level is rendered.

use alloc::string::String;
use serde::{Deserialize, Serialize};

/// Prefix written in front of unstable diagnostics.
pub const UNSTABLE_PREFIX: &str = "[UNSTABLE] ";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Info,
    Error,
    Unstable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Channel {
    Stdout,
    Stderr,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatusEvent {
    pub level: Level,
    pub message: String,
    /// Milliseconds on a monotonic clock since the run started.
    pub timestamp_ms: u64,
}

impl StatusEvent {
    pub fn new(level: Level, message: impl Into<String>, timestamp_ms: u64) -> Self {
        Self {
            level,
            message: message.into(),
            timestamp_ms,
        }
    }

    /// Whether emitting this event ends the run.
    pub fn terminates(&self) -> bool {
        self.level == Level::Error
    }

    /// The channel and text of the line this event produces.
    pub fn render(&self) -> (Channel, String) {
        match self.level {
            Level::Info => (Channel::Stdout, self.message.clone()),
            Level::Error => (Channel::Stderr, self.message.clone()),
            Level::Unstable => {
                let mut line = String::with_capacity(UNSTABLE_PREFIX.len() + self.message.len());
                line.push_str(UNSTABLE_PREFIX);
                line.push_str(&self.message);
                (Channel::Stdout, line)
            }
        }
    }
}
