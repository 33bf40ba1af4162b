//! Authorization policy engine.
//!
//! Covers the assertion language used for access-control requirements
//! (parse, derive with proof), policy template instantiation, declared
//! metadata transforms and policy/transform dependency validation. All
//! operations here are pure functions of their inputs.

mod ast;
mod deps;
mod engine;
mod parser;
mod template;
mod transform;

#[cfg(any(test, feature = "test-oracles"))]
pub mod oracle;

pub use ast::{Assertion, Decision, Fact, Outcome, ProofStep, Query, Rule, MAX_DELEGATION_DEPTH};
pub use deps::{validate_policy_dependencies, PolicyAssignment};
pub use engine::{derivable_closure, derive, replay_proof};
pub use parser::{parse_assertion, parse_assertion_lines, parse_query, SyntaxError};
pub use template::{
    instantiate_template, ConcretePolicy, PolicyTemplate, TemplateError, TemplateWarning,
};
pub use transform::{apply_transform, TransformError};
