//! Policy templates and context instantiation.
//!
//! Placeholder syntax is `${key}`; `$${` escapes to a literal `${`.
//! Substitution is single-pass: substituted values are never re-scanned.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TemplateError {
    #[error("unclosed placeholder at byte {offset}")]
    UnclosedPlaceholder { offset: usize },
    #[error("declared required keys do not match the placeholders in the body")]
    KeySetMismatch,
    #[error("no binding for placeholder `{0}`")]
    MissingBinding(String),
}

/// Non-fatal finding reported alongside a successful instantiation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum TemplateWarning {
    UnusedBinding(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyTemplate {
    pub template_id: String,
    pub grammar: String,
    pub body: String,
    pub required_keys: BTreeSet<String>,
}

impl PolicyTemplate {
    /// Build a template, deriving `required_keys` from the body.
    pub fn new(
        template_id: impl Into<String>,
        grammar: impl Into<String>,
        body: impl Into<String>,
    ) -> Result<Self, TemplateError> {
        let body = body.into();
        let required_keys = placeholders(&body)?;
        Ok(Self {
            template_id: template_id.into(),
            grammar: grammar.into(),
            body,
            required_keys,
        })
    }
}

/// Context-instantiated policy text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConcretePolicy {
    pub grammar: String,
    pub body: String,
    pub source_template: String,
}

/// Scan for placeholder keys, honoring the `$${` escape.
fn placeholders(body: &str) -> Result<BTreeSet<String>, TemplateError> {
    let mut keys = BTreeSet::new();
    let bytes = body.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'$' && i + 1 < bytes.len() && bytes[i + 1] == b'$' && bytes.get(i + 2) == Some(&b'{') {
            i += 3;
            continue;
        }
        if bytes[i] == b'$' && bytes.get(i + 1) == Some(&b'{') {
            let start = i + 2;
            match body[start..].find('}') {
                Some(end) => {
                    keys.insert(body[start..start + end].to_string());
                    i = start + end + 1;
                }
                None => return Err(TemplateError::UnclosedPlaceholder { offset: i }),
            }
            continue;
        }
        i += 1;
    }
    Ok(keys)
}

/// Replace every placeholder with its binding. Bindings must cover all
/// required keys; surplus bindings are reported as warnings, not errors.
pub fn instantiate_template(
    template: &PolicyTemplate,
    bindings: &BTreeMap<String, String>,
) -> Result<(ConcretePolicy, Vec<TemplateWarning>), TemplateError> {
    if placeholders(&template.body)? != template.required_keys {
        return Err(TemplateError::KeySetMismatch);
    }
    for key in &template.required_keys {
        if !bindings.contains_key(key) {
            return Err(TemplateError::MissingBinding(key.clone()));
        }
    }
    let mut out: Vec<u8> = Vec::with_capacity(template.body.len());
    let body = &template.body;
    let bytes = body.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'$' && bytes.get(i + 1) == Some(&b'$') && bytes.get(i + 2) == Some(&b'{') {
            out.extend_from_slice(b"${");
            i += 3;
            continue;
        }
        if bytes[i] == b'$' && bytes.get(i + 1) == Some(&b'{') {
            let start = i + 2;
            let end = body[start..].find('}').expect("validated above");
            let key = &body[start..start + end];
            out.extend_from_slice(bindings[key].as_bytes());
            i = start + end + 1;
            continue;
        }
        out.push(bytes[i]);
        i += 1;
    }
    let out = String::from_utf8(out).expect("substitution preserves UTF-8");
    let warnings = bindings
        .keys()
        .filter(|k| !template.required_keys.contains(*k))
        .map(|k| TemplateWarning::UnusedBinding(k.clone()))
        .collect();
    Ok((
        ConcretePolicy {
            grammar: template.grammar.clone(),
            body: out,
            source_template: template.template_id.clone(),
        },
        warnings,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bindings(pairs: &[(&str, &str)]) -> BTreeMap<String, String> {
        pairs
            .iter()
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect()
    }

    #[test]
    fn substitutes_placeholders() {
        let t = PolicyTemplate::new("t", "secpal", "permit ${subject} read ${resource}").unwrap();
        assert_eq!(
            t.required_keys,
            ["subject", "resource"].iter().map(|s| s.to_string()).collect()
        );
        let (c, warnings) =
            instantiate_template(&t, &bindings(&[("subject", "VMS"), ("resource", "catalog")]))
                .unwrap();
        assert_eq!(c.body, "permit VMS read catalog");
        assert_eq!(c.source_template, "t");
        assert!(warnings.is_empty());
    }

    #[test]
    fn missing_binding_is_an_error() {
        let t = PolicyTemplate::new("t", "secpal", "permit ${subject} read ${resource}").unwrap();
        assert_eq!(
            instantiate_template(&t, &bindings(&[("subject", "VMS")])),
            Err(TemplateError::MissingBinding("resource".into()))
        );
    }

    #[test]
    fn placeholder_free_template_is_identity() {
        let t = PolicyTemplate::new("t", "secpal", "permit all").unwrap();
        let (c, _) = instantiate_template(&t, &BTreeMap::new()).unwrap();
        assert_eq!(c.body, "permit all");
        // Idempotence: any bindings leave the body unchanged (reported as
        // unused).
        let (c2, warnings) = instantiate_template(&t, &bindings(&[("x", "y")])).unwrap();
        assert_eq!(c2.body, "permit all");
        assert_eq!(warnings, vec![TemplateWarning::UnusedBinding("x".into())]);
    }

    #[test]
    fn escape_produces_literal_placeholder() {
        let t = PolicyTemplate::new("t", "g", "a $${literal} b ${k}").unwrap();
        assert_eq!(t.required_keys, ["k"].iter().map(|s| s.to_string()).collect());
        let (c, _) = instantiate_template(&t, &bindings(&[("k", "v")])).unwrap();
        assert_eq!(c.body, "a ${literal} b v");
    }

    #[test]
    fn unclosed_placeholder_is_rejected() {
        assert_eq!(
            PolicyTemplate::new("t", "g", "x ${oops"),
            Err(TemplateError::UnclosedPlaceholder { offset: 2 })
        );
    }
}
