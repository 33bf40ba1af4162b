//! Registry of security capability services.
//!
//! Providers register capability descriptors expressed against the same
//! taxonomy used by the profiles. Candidate lookup is deterministic:
//! matching descriptors are returned in ascending capability id order.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::profile::Requirement;
use crate::taxonomy::Taxonomy;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InvocationPattern {
    RequestResponse,
    OneWay,
    OutOfBandTokenFetch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Availability {
    Available,
    Unavailable,
}

/// Registry entry describing one capability service.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CapabilityDescriptor {
    pub capability_id: String,
    pub provider: String,
    pub category: String,
    pub mechanism: String,
    #[serde(default)]
    pub attributes: BTreeMap<String, String>,
    pub control_endpoint: String,
    pub data_endpoint: String,
    #[serde(default)]
    pub supported_grammars: BTreeSet<String>,
    pub invocation_patterns: BTreeSet<InvocationPattern>,
    #[serde(default = "default_available")]
    pub availability: Availability,
}

fn default_available() -> Availability {
    Availability::Available
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RegistryError {
    #[error("capability id `{0}` is already registered")]
    DuplicateId(String),
    #[error("descriptor references unknown taxonomy entry `{category}/{mechanism}`")]
    InvalidTaxonomyRef { category: String, mechanism: String },
    #[error("descriptor `{0}` declares no invocation pattern")]
    NoInvocationPattern(String),
    #[error("unknown capability `{0}`")]
    UnknownCapability(String),
}

/// Availability-change event delivered to subscribers in per-capability
/// order. Deregistration is reported as `Unavailable`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AvailabilityEvent {
    pub capability_id: String,
    pub availability: Availability,
}

#[derive(Debug, Clone)]
pub struct Registry {
    taxonomy: Taxonomy,
    entries: BTreeMap<String, CapabilityDescriptor>,
    events: VecDeque<AvailabilityEvent>,
}

impl Registry {
    pub fn new(taxonomy: Taxonomy) -> Self {
        Self {
            taxonomy,
            entries: BTreeMap::new(),
            events: VecDeque::new(),
        }
    }

    pub fn register(&mut self, mut descriptor: CapabilityDescriptor) -> Result<String, RegistryError> {
        if self.entries.contains_key(&descriptor.capability_id) {
            return Err(RegistryError::DuplicateId(descriptor.capability_id));
        }
        if !self
            .taxonomy
            .mechanism_in_category(&descriptor.category, &descriptor.mechanism)
        {
            return Err(RegistryError::InvalidTaxonomyRef {
                category: descriptor.category,
                mechanism: descriptor.mechanism,
            });
        }
        if descriptor.invocation_patterns.is_empty() {
            return Err(RegistryError::NoInvocationPattern(descriptor.capability_id));
        }
        descriptor.availability = Availability::Available;
        let id = descriptor.capability_id.clone();
        self.entries.insert(id.clone(), descriptor);
        Ok(id)
    }

    pub fn get(&self, capability_id: &str) -> Option<&CapabilityDescriptor> {
        self.entries.get(capability_id)
    }

    pub fn descriptors(&self) -> impl Iterator<Item = &CapabilityDescriptor> {
        self.entries.values()
    }

    /// All available descriptors matching the requirement: same category and
    /// mechanism, every requirement attribute present with an equal value,
    /// and the requirement's grammar (if any) supported. Ascending id order.
    pub fn find_candidates(&self, requirement: &Requirement) -> Vec<CapabilityDescriptor> {
        self.entries
            .values()
            .filter(|d| descriptor_matches(d, requirement))
            .cloned()
            .collect()
    }

    pub fn set_availability(
        &mut self,
        capability_id: &str,
        availability: Availability,
    ) -> Result<(), RegistryError> {
        let entry = self
            .entries
            .get_mut(capability_id)
            .ok_or_else(|| RegistryError::UnknownCapability(capability_id.to_string()))?;
        entry.availability = availability;
        self.events.push_back(AvailabilityEvent {
            capability_id: capability_id.to_string(),
            availability,
        });
        Ok(())
    }

    pub fn deregister(&mut self, capability_id: &str) -> Result<(), RegistryError> {
        if self.entries.remove(capability_id).is_none() {
            return Err(RegistryError::UnknownCapability(capability_id.to_string()));
        }
        self.events.push_back(AvailabilityEvent {
            capability_id: capability_id.to_string(),
            availability: Availability::Unavailable,
        });
        Ok(())
    }

    /// Drain pending availability events in emission order.
    pub fn drain_events(&mut self) -> Vec<AvailabilityEvent> {
        self.events.drain(..).collect()
    }
}

/// The registry match predicate, exposed so callers and oracles share one
/// definition of "matches" while the lookup path stays independent.
pub fn descriptor_matches(d: &CapabilityDescriptor, requirement: &Requirement) -> bool {
    if d.availability != Availability::Available {
        return false;
    }
    if d.category != requirement.category || d.mechanism != requirement.mechanism {
        return false;
    }
    for (k, v) in &requirement.attributes {
        // Configuration parameters constrain how the capability is set up,
        // not which descriptors match: invocation_pattern selects from the
        // pattern set and hash_alg is pushed through the control pane.
        if k == "invocation_pattern" || k == "hash_alg" {
            continue;
        }
        if d.attributes.get(k) != Some(v) {
            return false;
        }
    }
    if let Some(grammar) = &requirement.grammar {
        if !d.supported_grammars.contains(grammar) {
            return false;
        }
    }
    true
}
