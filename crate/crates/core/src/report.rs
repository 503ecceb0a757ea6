use std::fmt;

use serde::{Deserialize, Serialize};

/// One broken rule, located at a node, matrix entry or file section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub location: String,
    pub rule: String,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}] {}: {}", self.location, self.rule, self.detail)
    }
}

/// Validation outcome. Violations are data; an empty list means ok.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn push(&mut self, location: impl Into<String>, rule: &str, detail: impl Into<String>) {
        self.violations.push(Violation {
            location: location.into(),
            rule: rule.to_string(),
            detail: detail.into(),
        });
    }

    /// Appends another report, prefixing its locations.
    pub fn absorb(&mut self, prefix: &str, other: ValidationReport) {
        for mut v in other.violations {
            v.location = format!("{prefix}{}", v.location);
            self.violations.push(v);
        }
    }

    pub fn has_rule(&self, rule: &str) -> bool {
        self.violations.iter().any(|v| v.rule == rule)
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_ok() {
            return write!(f, "ok");
        }
        for (k, v) in self.violations.iter().enumerate() {
            if k > 0 {
                writeln!(f)?;
            }
            write!(f, "{v}")?;
        }
        Ok(())
    }
}
