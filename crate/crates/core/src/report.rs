//! Validation reports shared by the taxonomy, dependency and policy checks.

use serde::{Deserialize, Serialize};

/// A single validation finding. Violations are data, not errors: callers
/// decide whether a non-empty report blocks progress.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum Violation {
    /// A requirement names a mechanism that does not belong to its category.
    CategoryMechanismMismatch {
        category: String,
        mechanism: String,
        detail: String,
    },
    /// A required attribute for (category, mechanism) is absent.
    MissingAttribute {
        category: String,
        mechanism: String,
        attribute: String,
    },
    /// A policy's grammar is not accepted by its capability and no declared
    /// transform chain bridges the gap.
    GrammarMismatch {
        capability_id: String,
        grammar: String,
        detail: String,
    },
    /// A profile uses a category whose prerequisite category is missing.
    MissingDependency {
        category: String,
        requires: String,
    },
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn push(&mut self, v: Violation) {
        self.violations.push(v);
    }

    pub fn is_empty(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn len(&self) -> usize {
        self.violations.len()
    }
}
