//! Policy/transform dependency validation.
//!
//! A policy assigned to a capability is satisfiable when the capability
//! accepts its grammar directly or a declared transform chain of length at
//! most two maps the policy grammar to an accepted one.

use std::collections::{BTreeMap, BTreeSet};

use crate::profile::TransformDescriptor;
use crate::report::{ValidationReport, Violation};

/// A policy grammar assigned to a capability.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PolicyAssignment {
    pub capability_id: String,
    pub grammar: String,
}

const MAX_CHAIN_LEN: usize = 2;

pub fn validate_policy_dependencies(
    assignments: &[PolicyAssignment],
    transforms: &[TransformDescriptor],
    capability_grammars: &BTreeMap<String, BTreeSet<String>>,
) -> ValidationReport {
    let mut report = ValidationReport::empty();
    for a in assignments {
        let supported = capability_grammars
            .get(&a.capability_id)
            .cloned()
            .unwrap_or_default();
        if reachable(&a.grammar, &supported, transforms) {
            continue;
        }
        report.push(Violation::GrammarMismatch {
            capability_id: a.capability_id.clone(),
            grammar: a.grammar.clone(),
            detail: format!(
                "capability accepts {{{}}} and no transform chain (length <= {MAX_CHAIN_LEN}) bridges",
                supported.iter().cloned().collect::<Vec<_>>().join(", ")
            ),
        });
    }
    report
}

fn reachable(grammar: &str, supported: &BTreeSet<String>, transforms: &[TransformDescriptor]) -> bool {
    let mut frontier: BTreeSet<String> = [grammar.to_string()].into_iter().collect();
    for _hop in 0..=MAX_CHAIN_LEN {
        if frontier.iter().any(|g| supported.contains(g)) {
            return true;
        }
        frontier = transforms
            .iter()
            .filter(|t| frontier.contains(&t.from_grammar))
            .map(|t| t.to_grammar.clone())
            .collect();
        if frontier.is_empty() {
            return false;
        }
    }
    false
}
