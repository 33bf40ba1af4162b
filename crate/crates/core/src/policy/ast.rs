//! Assertion language AST.
//!
//! Three fact forms: a direct permission (`can`), a principal alias
//! (`can-act-as`) and bounded delegation (`can say`). Facts are ground;
//! there are no variables, constraints or negation.

use serde::{Deserialize, Serialize};

/// Maximum `can say` nesting.
pub const MAX_DELEGATION_DEPTH: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Fact {
    Can {
        subject: String,
        action: String,
        resource: String,
    },
    CanActAs {
        subject: String,
        target: String,
    },
    CanSay {
        delegate: String,
        inner: Box<Fact>,
    },
}

impl Fact {
    /// Number of `can say` wrappers.
    pub fn delegation_depth(&self) -> usize {
        match self {
            Fact::CanSay { inner, .. } => 1 + inner.delegation_depth(),
            _ => 0,
        }
    }
}

impl std::fmt::Display for Fact {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Fact::Can {
                subject,
                action,
                resource,
            } => write!(f, "{subject} can {action} {resource}"),
            Fact::CanActAs { subject, target } => write!(f, "{subject} can-act-as {target}"),
            Fact::CanSay { delegate, inner } => write!(f, "{delegate} can say {inner}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Assertion {
    pub issuer: String,
    pub fact: Fact,
}

impl std::fmt::Display for Assertion {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} says {}", self.issuer, self.fact)
    }
}

/// A question: no `can say` at top level.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Query {
    pub issuer: String,
    pub fact: Fact,
}

impl Query {
    pub fn as_assertion(&self) -> Assertion {
        Assertion {
            issuer: self.issuer.clone(),
            fact: self.fact.clone(),
        }
    }
}

impl std::fmt::Display for Query {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} says {}?", self.issuer, self.fact)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Rule {
    /// Stated: every context assertion holds.
    R1,
    /// Delegation: `A says B can say F` and `B says F` give `A says F`.
    R2,
    /// Alias: `A says B can-act-as C` and `A says C <can-fact>` give
    /// `A says B <can-fact>`.
    R3,
}

impl std::fmt::Display for Rule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Rule::R1 => f.write_str("R1"),
            Rule::R2 => f.write_str("R2"),
            Rule::R3 => f.write_str("R3"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProofStep {
    pub rule: Rule,
    pub premises: Vec<Assertion>,
    pub conclusion: Assertion,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Outcome {
    Permit,
    Deny,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Decision {
    pub outcome: Outcome,
    /// Derivation steps in dependency order; empty iff `Deny`.
    pub proof: Vec<ProofStep>,
}
