//! Independent reference implementations for tests.
//!
//! `closure_oracle` is a deliberately naive repeat-until-stable closure that
//! shares no code with the engine's provenance fixpoint. `assertion_universe`
//! enumerates every expressible assertion over small vocabularies for
//! exhaustive comparisons.

use std::collections::BTreeSet;

use super::ast::{Assertion, Fact};

/// Brute-force closure: re-scan every pair of assertions until nothing new
/// appears.
pub fn closure_oracle(context: &[Assertion]) -> BTreeSet<Assertion> {
    let mut set: BTreeSet<Assertion> = context.iter().cloned().collect();
    loop {
        let mut additions: Vec<Assertion> = Vec::new();
        for a1 in &set {
            for a2 in &set {
                // Delegation: a1 = `A says B can say F`, a2 = `B says F`.
                if let Fact::CanSay { delegate, inner } = &a1.fact {
                    if &a2.issuer == delegate && a2.fact == **inner {
                        additions.push(Assertion {
                            issuer: a1.issuer.clone(),
                            fact: (**inner).clone(),
                        });
                    }
                }
                // Alias: a1 = `A says B can-act-as C`, a2 = `A says C can x r`.
                if let Fact::CanActAs { subject, target } = &a1.fact {
                    if a1.issuer == a2.issuer {
                        if let Fact::Can {
                            subject: s,
                            action,
                            resource,
                        } = &a2.fact
                        {
                            if s == target {
                                additions.push(Assertion {
                                    issuer: a1.issuer.clone(),
                                    fact: Fact::Can {
                                        subject: subject.clone(),
                                        action: action.clone(),
                                        resource: resource.clone(),
                                    },
                                });
                            }
                        }
                    }
                }
            }
        }
        let before = set.len();
        set.extend(additions);
        if set.len() == before {
            return set;
        }
    }
}

/// Every fact over the vocabulary with at most `max_depth` delegation
/// wrappers.
pub fn fact_universe(
    principals: &[&str],
    actions: &[&str],
    resources: &[&str],
    max_depth: usize,
) -> Vec<Fact> {
    let mut by_depth: Vec<Vec<Fact>> = Vec::new();
    let mut base = Vec::new();
    for s in principals {
        for a in actions {
            for r in resources {
                base.push(Fact::Can {
                    subject: s.to_string(),
                    action: a.to_string(),
                    resource: r.to_string(),
                });
            }
        }
        for t in principals {
            base.push(Fact::CanActAs {
                subject: s.to_string(),
                target: t.to_string(),
            });
        }
    }
    by_depth.push(base);
    for d in 1..=max_depth {
        let mut level = Vec::new();
        for delegate in principals {
            for inner in &by_depth[d - 1] {
                level.push(Fact::CanSay {
                    delegate: delegate.to_string(),
                    inner: Box::new(inner.clone()),
                });
            }
        }
        by_depth.push(level);
    }
    by_depth.into_iter().flatten().collect()
}

/// Every assertion over the vocabulary.
pub fn assertion_universe(
    principals: &[&str],
    actions: &[&str],
    resources: &[&str],
    max_depth: usize,
) -> Vec<Assertion> {
    let facts = fact_universe(principals, actions, resources, max_depth);
    principals
        .iter()
        .flat_map(|p| {
            facts.iter().map(move |f| Assertion {
                issuer: p.to_string(),
                fact: f.clone(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::engine::derivable_closure;

    #[test]
    fn universe_sizes_are_as_expected() {
        // 2 principals x (2x2 can + 2 can-act-as) = 12 base facts,
        // 24 at depth 1, 48 at depth 2.
        let facts = fact_universe(&["A", "B"], &["read", "write"], &["r1", "r2"], 2);
        assert_eq!(facts.len(), 12 + 24 + 48);
        let assertions = assertion_universe(&["A", "B"], &["read", "write"], &["r1", "r2"], 2);
        assert_eq!(assertions.len(), 2 * 84);
    }

    #[test]
    fn oracle_agrees_with_engine_on_samples() {
        use crate::policy::parser::parse_assertion;
        let ctx: Vec<Assertion> = [
            "CP2 says STS can say Alice can read catalog",
            "STS says Alice can read catalog",
            "CP2 says Bob can-act-as Alice",
        ]
        .iter()
        .map(|l| parse_assertion(l).unwrap())
        .collect();
        let oracle: Vec<Assertion> = closure_oracle(&ctx).into_iter().collect();
        assert_eq!(oracle, derivable_closure(&ctx));
    }
}
