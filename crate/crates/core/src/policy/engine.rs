//! Derivation engine: monotone fixpoint over ground assertions with proof
//! provenance.
//!
//! Rules:
//! - R1 (stated): every context assertion holds.
//! - R2 (delegation): `A says B can say F` and `B says F` give `A says F`.
//! - R3 (alias): `A says B can-act-as C` and `A says C <can-fact>` give
//!   `A says B <can-fact>`.
//!
//! The Herbrand base is finite and the rules are monotone, so the fixpoint
//! always terminates.

use std::collections::HashMap;

use super::ast::{Assertion, Decision, Fact, Outcome, ProofStep, Query, Rule};

#[derive(Debug, Clone)]
struct Provenance {
    rule: Rule,
    premises: Vec<Assertion>,
}

/// Everything derivable from the context, with the rule and premises that
/// first established each assertion.
fn closure_with_provenance(context: &[Assertion]) -> HashMap<Assertion, Provenance> {
    let mut derived: HashMap<Assertion, Provenance> = HashMap::new();
    for a in context {
        derived.entry(a.clone()).or_insert(Provenance {
            rule: Rule::R1,
            premises: Vec::new(),
        });
    }
    loop {
        let mut fresh: Vec<(Assertion, Provenance)> = Vec::new();
        {
            let known: Vec<&Assertion> = derived.keys().collect();
            for a1 in &known {
                match &a1.fact {
                    Fact::CanSay { delegate, inner } => {
                        let voucher = Assertion {
                            issuer: delegate.clone(),
                            fact: (**inner).clone(),
                        };
                        if derived.contains_key(&voucher) {
                            let conclusion = Assertion {
                                issuer: a1.issuer.clone(),
                                fact: (**inner).clone(),
                            };
                            if !derived.contains_key(&conclusion) {
                                fresh.push((
                                    conclusion,
                                    Provenance {
                                        rule: Rule::R2,
                                        premises: vec![(*a1).clone(), voucher],
                                    },
                                ));
                            }
                        }
                    }
                    Fact::CanActAs { subject, target } => {
                        for a2 in &known {
                            if a2.issuer != a1.issuer {
                                continue;
                            }
                            if let Fact::Can {
                                subject: s,
                                action,
                                resource,
                            } = &a2.fact
                            {
                                if s == target {
                                    let conclusion = Assertion {
                                        issuer: a1.issuer.clone(),
                                        fact: Fact::Can {
                                            subject: subject.clone(),
                                            action: action.clone(),
                                            resource: resource.clone(),
                                        },
                                    };
                                    if !derived.contains_key(&conclusion) {
                                        fresh.push((
                                            conclusion,
                                            Provenance {
                                                rule: Rule::R3,
                                                premises: vec![(*a1).clone(), (*a2).clone()],
                                            },
                                        ));
                                    }
                                }
                            }
                        }
                    }
                    Fact::Can { .. } => {}
                }
            }
        }
        let mut changed = false;
        for (a, p) in fresh {
            if !derived.contains_key(&a) {
                derived.insert(a, p);
                changed = true;
            }
        }
        if !changed {
            return derived;
        }
    }
}

/// The set of assertions derivable from `context`, sorted.
///
/// Provenance-free variant of the fixpoint: callers that only need the set
/// (validation, exhaustive comparisons) skip the bookkeeping `derive` pays
/// for proofs. Membership is a linear scan — contexts and their closures
/// stay small enough that this beats hashing.
pub fn derivable_closure(context: &[Assertion]) -> Vec<Assertion> {
    let mut set: Vec<Assertion> = Vec::with_capacity(context.len() * 2);
    for a in context {
        if !set.contains(a) {
            set.push(a.clone());
        }
    }
    // Rescan until stable; rounds are few because each adds at least one
    // assertion from a finite Herbrand base.
    loop {
        let mut fresh: Vec<Assertion> = Vec::new();
        for a1 in &set[..] {
            match &a1.fact {
                Fact::CanSay { delegate, inner } => {
                    let vouched = set
                        .iter()
                        .any(|a2| &a2.issuer == delegate && a2.fact == **inner);
                    if vouched {
                        let conclusion = Assertion {
                            issuer: a1.issuer.clone(),
                            fact: (**inner).clone(),
                        };
                        if !set.contains(&conclusion) && !fresh.contains(&conclusion) {
                            fresh.push(conclusion);
                        }
                    }
                }
                Fact::CanActAs { subject, target } => {
                    for a2 in &set[..] {
                        if a2.issuer != a1.issuer {
                            continue;
                        }
                        if let Fact::Can {
                            subject: s,
                            action,
                            resource,
                        } = &a2.fact
                        {
                            if s == target {
                                let conclusion = Assertion {
                                    issuer: a1.issuer.clone(),
                                    fact: Fact::Can {
                                        subject: subject.clone(),
                                        action: action.clone(),
                                        resource: resource.clone(),
                                    },
                                };
                                if !set.contains(&conclusion) && !fresh.contains(&conclusion) {
                                    fresh.push(conclusion);
                                }
                            }
                        }
                    }
                }
                Fact::Can { .. } => {}
            }
        }
        if fresh.is_empty() {
            break;
        }
        set.extend(fresh);
    }
    set.sort();
    set
}

/// Decide a query against a context. `Permit` carries a replayable proof.
pub fn derive(context: &[Assertion], query: &Query) -> Decision {
    let derived = closure_with_provenance(context);
    let goal = query.as_assertion();
    if !derived.contains_key(&goal) {
        return Decision {
            outcome: Outcome::Deny,
            proof: Vec::new(),
        };
    }
    // Walk provenance back from the goal, emitting steps in dependency
    // order. Provenance is well founded: premises were established before
    // their conclusion.
    let mut proof = Vec::new();
    let mut emitted: std::collections::HashSet<Assertion> = std::collections::HashSet::new();
    emit_proof(&goal, &derived, &mut proof, &mut emitted);
    Decision {
        outcome: Outcome::Permit,
        proof,
    }
}

fn emit_proof(
    goal: &Assertion,
    derived: &HashMap<Assertion, Provenance>,
    proof: &mut Vec<ProofStep>,
    emitted: &mut std::collections::HashSet<Assertion>,
) {
    if emitted.contains(goal) {
        return;
    }
    let p = &derived[goal];
    for premise in &p.premises {
        emit_proof(premise, derived, proof, emitted);
    }
    emitted.insert(goal.clone());
    proof.push(ProofStep {
        rule: p.rule,
        premises: p.premises.clone(),
        conclusion: goal.clone(),
    });
}

/// Re-derive a proof step by step. Returns the final conclusion when every
/// step is justified by its named rule from the context and earlier
/// conclusions.
pub fn replay_proof(context: &[Assertion], proof: &[ProofStep]) -> Result<Assertion, String> {
    let mut established: std::collections::HashSet<Assertion> = context.iter().cloned().collect();
    let mut last = None;
    for (i, step) in proof.iter().enumerate() {
        let ok = match step.rule {
            Rule::R1 => {
                step.premises.is_empty() && context.contains(&step.conclusion)
            }
            Rule::R2 => match step.premises.as_slice() {
                [grant, voucher] => {
                    established.contains(grant)
                        && established.contains(voucher)
                        && matches!(&grant.fact, Fact::CanSay { delegate, inner }
                            if delegate == &voucher.issuer
                                && **inner == voucher.fact
                                && step.conclusion.issuer == grant.issuer
                                && step.conclusion.fact == voucher.fact)
                }
                _ => false,
            },
            Rule::R3 => match step.premises.as_slice() {
                [alias, grant] => {
                    established.contains(alias)
                        && established.contains(grant)
                        && alias.issuer == grant.issuer
                        && step.conclusion.issuer == alias.issuer
                        && match (&alias.fact, &grant.fact, &step.conclusion.fact) {
                            (
                                Fact::CanActAs { subject, target },
                                Fact::Can {
                                    subject: gs,
                                    action: ga,
                                    resource: gr,
                                },
                                Fact::Can {
                                    subject: cs,
                                    action: ca,
                                    resource: cr,
                                },
                            ) => gs == target && cs == subject && ga == ca && gr == cr,
                            _ => false,
                        }
                }
                _ => false,
            },
        };
        if !ok {
            return Err(format!("proof step {i} is not justified by {}", step.rule));
        }
        established.insert(step.conclusion.clone());
        last = Some(step.conclusion.clone());
    }
    last.ok_or_else(|| "empty proof".to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::parser::{parse_assertion, parse_query};

    fn ctx(lines: &[&str]) -> Vec<Assertion> {
        lines.iter().map(|l| parse_assertion(l).unwrap()).collect()
    }

    #[test]
    fn stated_fact_permits_with_r1_proof() {
        let context = ctx(&["CP2 says VMS can read catalog"]);
        let q = parse_query("CP2 says VMS can read catalog?").unwrap();
        let d = derive(&context, &q);
        assert_eq!(d.outcome, Outcome::Permit);
        assert_eq!(d.proof.len(), 1);
        assert_eq!(d.proof[0].rule, Rule::R1);
    }

    #[test]
    fn delegation_permits_via_r2() {
        let context = ctx(&[
            "CP2 says STS can say Alice can read catalog",
            "STS says Alice can read catalog",
        ]);
        let q = parse_query("CP2 says Alice can read catalog?").unwrap();
        let d = derive(&context, &q);
        assert_eq!(d.outcome, Outcome::Permit);
        assert!(d.proof.iter().any(|s| s.rule == Rule::R2));
        let conclusion = replay_proof(&context, &d.proof).unwrap();
        assert_eq!(conclusion, q.as_assertion());
    }

    #[test]
    fn unstated_fact_denies() {
        let context = ctx(&["CP2 says VMS can read catalog"]);
        let q = parse_query("CP2 says Alice can read catalog?").unwrap();
        let d = derive(&context, &q);
        assert_eq!(d.outcome, Outcome::Deny);
        assert!(d.proof.is_empty());
    }

    #[test]
    fn alias_permits_via_r3() {
        let context = ctx(&[
            "CP2 says Alice can-act-as member",
            "CP2 says member can read catalog",
        ]);
        let q = parse_query("CP2 says Alice can read catalog?").unwrap();
        let d = derive(&context, &q);
        assert_eq!(d.outcome, Outcome::Permit);
        assert!(d.proof.iter().any(|s| s.rule == Rule::R3));
        assert!(replay_proof(&context, &d.proof).is_ok());
    }

    #[test]
    fn chained_delegation_and_alias() {
        let context = ctx(&[
            "CP2 says STS can say Alice can-act-as member",
            "STS says Alice can-act-as member",
            "CP2 says member can read catalog",
        ]);
        let q = parse_query("CP2 says Alice can read catalog?").unwrap();
        let d = derive(&context, &q);
        assert_eq!(d.outcome, Outcome::Permit);
        let conclusion = replay_proof(&context, &d.proof).unwrap();
        assert_eq!(conclusion, q.as_assertion());
    }

    #[test]
    fn tampered_proof_fails_replay() {
        let context = ctx(&[
            "CP2 says STS can say Alice can read catalog",
            "STS says Alice can read catalog",
        ]);
        let q = parse_query("CP2 says Alice can read catalog?").unwrap();
        let mut d = derive(&context, &q);
        let last = d.proof.last_mut().unwrap();
        last.conclusion = parse_assertion("CP2 says Mallory can read catalog").unwrap();
        assert!(replay_proof(&context, &d.proof).is_err());
    }
}
