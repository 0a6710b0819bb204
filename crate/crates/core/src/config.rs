//! Configuration validation errors shared by every config-bearing type.

use std::fmt;

/// A configuration value that violates an invariant.
///
/// `key` is the dotted path of the offending field (e.g. `world.coverage_radius`)
/// so callers can point users at the exact line to fix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    pub key: String,
    pub reason: String,
}

impl ConfigError {
    pub fn new(key: impl Into<String>, reason: impl Into<String>) -> Self {
        Self {
            key: key.into(),
            reason: reason.into(),
        }
    }

    /// Prefix the key with a parent section name.
    pub fn within(mut self, section: &str) -> Self {
        self.key = format!("{section}.{}", self.key);
        self
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "invalid `{}`: {}", self.key, self.reason)
    }
}

impl std::error::Error for ConfigError {}

pub(crate) fn ensure(cond: bool, key: &str, reason: impl Into<String>) -> Result<(), ConfigError> {
    if cond {
        Ok(())
    } else {
        Err(ConfigError::new(key, reason))
    }
}

pub(crate) fn ensure_positive(value: f64, key: &str) -> Result<(), ConfigError> {
    ensure(
        value.is_finite() && value > 0.0,
        key,
        format!("must be a finite positive number, got {value}"),
    )
}
