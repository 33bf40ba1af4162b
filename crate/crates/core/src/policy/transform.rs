//! Declared metadata transforms: identity and field renames.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::profile::{TransformDescriptor, TransformKind};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TransformError {
    #[error("rename would write key `{target}` more than once")]
    RenameCollision { target: String },
}

/// Apply a transform to a flat key/value document. Identity returns the
/// input unchanged; field renames rewrite mapped keys and preserve the
/// rest. Any key written twice is a collision.
pub fn apply_transform(
    descriptor: &TransformDescriptor,
    document: &BTreeMap<String, String>,
) -> Result<BTreeMap<String, String>, TransformError> {
    match descriptor.kind {
        TransformKind::Identity => Ok(document.clone()),
        TransformKind::FieldRename => {
            let mut out: BTreeMap<String, String> = BTreeMap::new();
            for (k, v) in document {
                let target = descriptor.rename_map.get(k).unwrap_or(k);
                if out.insert(target.clone(), v.clone()).is_some() {
                    return Err(TransformError::RenameCollision {
                        target: target.clone(),
                    });
                }
            }
            // A later unmapped key can also collide with an earlier renamed
            // one; the insert check above only catches first-writer order.
            // Re-check against the full key multiset.
            let mut targets: Vec<&String> = document
                .keys()
                .map(|k| descriptor.rename_map.get(k).unwrap_or(k))
                .collect();
            targets.sort();
            for pair in targets.windows(2) {
                if pair[0] == pair[1] {
                    return Err(TransformError::RenameCollision {
                        target: pair[0].clone(),
                    });
                }
            }
            Ok(out)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc(pairs: &[(&str, &str)]) -> BTreeMap<String, String> {
        pairs
            .iter()
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect()
    }

    fn rename(pairs: &[(&str, &str)]) -> TransformDescriptor {
        TransformDescriptor {
            from_grammar: "g1".into(),
            to_grammar: "g2".into(),
            kind: TransformKind::FieldRename,
            rename_map: pairs
                .iter()
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .collect(),
        }
    }

    #[test]
    fn identity_returns_input() {
        let d = TransformDescriptor {
            from_grammar: "g".into(),
            to_grammar: "g".into(),
            kind: TransformKind::Identity,
            rename_map: BTreeMap::new(),
        };
        let input = doc(&[("login", "a")]);
        assert_eq!(apply_transform(&d, &input).unwrap(), input);
    }

    #[test]
    fn rename_preserves_unmapped_keys() {
        let out = apply_transform(&rename(&[("login", "username")]), &doc(&[("login", "a"), ("x", "b")]))
            .unwrap();
        assert_eq!(out, doc(&[("username", "a"), ("x", "b")]));
    }

    #[test]
    fn rename_collision_detected() {
        let err = apply_transform(&rename(&[("a", "b")]), &doc(&[("a", "1"), ("b", "2")])).unwrap_err();
        assert_eq!(err, TransformError::RenameCollision { target: "b".into() });
    }

    #[test]
    fn collision_matches_multiset_oracle() {
        // Oracle: post-rename key multiset has a duplicate iff apply fails.
        let cases = [
            (rename(&[("a", "b")]), doc(&[("a", "1")])),
            (rename(&[("a", "b")]), doc(&[("a", "1"), ("b", "2")])),
            (rename(&[("a", "b"), ("c", "b")]), doc(&[("a", "1"), ("c", "2")])),
            (rename(&[]), doc(&[("a", "1"), ("b", "2")])),
        ];
        for (d, input) in cases {
            let mut targets: Vec<String> = input
                .keys()
                .map(|k| d.rename_map.get(k).unwrap_or(k).clone())
                .collect();
            targets.sort();
            let has_dup = targets.windows(2).any(|w| w[0] == w[1]);
            assert_eq!(apply_transform(&d, &input).is_err(), has_dup, "case {d:?} {input:?}");
        }
    }
}
