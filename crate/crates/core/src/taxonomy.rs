//! Capability description taxonomy and inter-category dependency rules.
//!
//! The taxonomy is data: it names the known security categories, the
//! mechanisms under each category, and the attribute keys a requirement must
//! supply for a given (category, mechanism). Profiles and registry entries
//! are both described against the same taxonomy.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TaxonomyError {
    #[error("mechanism `{mechanism}` appears under more than one category")]
    DuplicateMechanism { mechanism: String },
    #[error("mechanism map references unknown category `{category}`")]
    UnknownCategory { category: String },
    #[error("required attributes reference unknown mechanism `{category}/{mechanism}`")]
    UnknownMechanism { category: String, mechanism: String },
}

/// Closed-world description taxonomy.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Taxonomy {
    categories: BTreeSet<String>,
    /// category -> mechanisms under it
    mechanisms: BTreeMap<String, BTreeSet<String>>,
    /// category -> mechanism -> attribute keys a requirement must carry
    required_attributes: BTreeMap<String, BTreeMap<String, BTreeSet<String>>>,
}

impl Taxonomy {
    pub fn new(
        categories: BTreeSet<String>,
        mechanisms: BTreeMap<String, BTreeSet<String>>,
        required_attributes: BTreeMap<String, BTreeMap<String, BTreeSet<String>>>,
    ) -> Result<Self, TaxonomyError> {
        for cat in mechanisms.keys() {
            if !categories.contains(cat) {
                return Err(TaxonomyError::UnknownCategory {
                    category: cat.clone(),
                });
            }
        }
        let mut seen = BTreeSet::new();
        for mechs in mechanisms.values() {
            for m in mechs {
                if !seen.insert(m.clone()) {
                    return Err(TaxonomyError::DuplicateMechanism {
                        mechanism: m.clone(),
                    });
                }
            }
        }
        for (cat, per_mech) in &required_attributes {
            for mech in per_mech.keys() {
                let known = mechanisms
                    .get(cat)
                    .map(|m| m.contains(mech))
                    .unwrap_or(false);
                if !known {
                    return Err(TaxonomyError::UnknownMechanism {
                        category: cat.clone(),
                        mechanism: mech.clone(),
                    });
                }
            }
        }
        Ok(Self {
            categories,
            mechanisms,
            required_attributes,
        })
    }

    /// The taxonomy shipped with the middleware: five categories covering
    /// identity, access control, audit, transport and metadata transformation.
    pub fn built_in() -> Self {
        let categories: BTreeSet<String> = [
            "identity-management",
            "access-control",
            "audit",
            "transport",
            "transformation",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();

        let mut mechanisms: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
        mechanisms.insert(
            "identity-management".into(),
            ["http-basic", "xml-token", "token-secpal"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
        );
        mechanisms.insert(
            "access-control".into(),
            ["secpal-pdp"].iter().map(|s| s.to_string()).collect(),
        );
        mechanisms.insert(
            "audit".into(),
            ["audit-log"].iter().map(|s| s.to_string()).collect(),
        );
        mechanisms.insert(
            "transformation".into(),
            ["identity-transform"].iter().map(|s| s.to_string()).collect(),
        );
        mechanisms.insert("transport".into(), BTreeSet::new());

        let mut required_attributes: BTreeMap<String, BTreeMap<String, BTreeSet<String>>> =
            BTreeMap::new();
        required_attributes
            .entry("identity-management".into())
            .or_default()
            .insert(
                "xml-token".into(),
                ["schema_ref"].iter().map(|s| s.to_string()).collect(),
            );

        Self::new(categories, mechanisms, required_attributes)
            .expect("built-in taxonomy is well formed")
    }

    pub fn categories(&self) -> impl Iterator<Item = &str> {
        self.categories.iter().map(|s| s.as_str())
    }

    pub fn has_category(&self, category: &str) -> bool {
        self.categories.contains(category)
    }

    /// True iff `mechanism` is defined under `category`.
    pub fn mechanism_in_category(&self, category: &str, mechanism: &str) -> bool {
        self.mechanisms
            .get(category)
            .map(|m| m.contains(mechanism))
            .unwrap_or(false)
    }

    /// Attribute keys a requirement for (category, mechanism) must supply.
    pub fn required_attributes(&self, category: &str, mechanism: &str) -> BTreeSet<String> {
        self.required_attributes
            .get(category)
            .and_then(|m| m.get(mechanism))
            .cloned()
            .unwrap_or_default()
    }
}

/// Inter-category dependency rules, loaded with the taxonomy.
///
/// `requires_category` maps a category to a category that must also be
/// present in the same profile. `not_alone` lists categories that only make
/// sense alongside at least one other category.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DependencyRules {
    pub requires_category: BTreeMap<String, String>,
    pub not_alone: BTreeSet<String>,
}

impl DependencyRules {
    pub fn built_in() -> Self {
        let mut requires_category = BTreeMap::new();
        requires_category.insert("access-control".to_string(), "identity-management".to_string());
        let mut not_alone = BTreeSet::new();
        not_alone.insert("transformation".to_string());
        Self {
            requires_category,
            not_alone,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn built_in_taxonomy_is_valid() {
        let t = Taxonomy::built_in();
        assert!(t.has_category("identity-management"));
        assert!(t.mechanism_in_category("identity-management", "http-basic"));
        assert!(!t.mechanism_in_category("audit", "http-basic"));
        assert_eq!(
            t.required_attributes("identity-management", "xml-token"),
            ["schema_ref"].iter().map(|s| s.to_string()).collect()
        );
        assert!(t.required_attributes("audit", "audit-log").is_empty());
    }

    #[test]
    fn mechanism_belongs_to_one_category() {
        let categories: BTreeSet<String> = ["a", "b"].iter().map(|s| s.to_string()).collect();
        let mut mechanisms = BTreeMap::new();
        mechanisms.insert("a".to_string(), ["m"].iter().map(|s| s.to_string()).collect());
        mechanisms.insert("b".to_string(), ["m"].iter().map(|s| s.to_string()).collect());
        let err = Taxonomy::new(categories, mechanisms, BTreeMap::new()).unwrap_err();
        assert_eq!(
            err,
            TaxonomyError::DuplicateMechanism {
                mechanism: "m".into()
            }
        );
    }

    #[test]
    fn required_attributes_must_reference_known_mechanism() {
        let categories: BTreeSet<String> = ["a"].iter().map(|s| s.to_string()).collect();
        let mut mechanisms: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
        mechanisms.insert("a".to_string(), BTreeSet::new());
        let mut reqs: BTreeMap<String, BTreeMap<String, BTreeSet<String>>> = BTreeMap::new();
        reqs.entry("a".into())
            .or_default()
            .insert("ghost".into(), BTreeSet::new());
        assert!(Taxonomy::new(categories, mechanisms, reqs).is_err());
    }
}
