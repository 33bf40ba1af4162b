//! Security profile document model, lifecycle state machine and snapshots.
//!
//! A profile is the normalized statement of a resource owner's security
//! requirements plus the artifacts accumulated while the middleware walks it
//! through the 39-step lifecycle. Profiles are immutable values: `advance`
//! returns a new version and never mutates its input.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::policy::ConcretePolicy;
use crate::process::CoordinationProcess;
use crate::registry::InvocationPattern;
use crate::report::{ValidationReport, Violation};
use crate::taxonomy::Taxonomy;

/// Named lifecycle checkpoints. Each state after `Deposited` corresponds to
/// a completed stage of the numbered step plan:
/// steps 1-4 -> `ServicesDescribed`, 5-8 -> `PoliciesSchemed`,
/// 9-12 -> `BindingsValidated`, 13-15 -> `ProfileComplete`,
/// 16-20 -> `Instantiable`, 21-24 -> `ContextBound`,
/// 25-27 -> `PoliciesRefined`, 28-30 -> `TransformsRefined`,
/// 31-35 -> `CoordinationBound`, 36-39 -> `Enacted`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum LifecycleState {
    Deposited,
    ServicesDescribed,
    PoliciesSchemed,
    BindingsValidated,
    ProfileComplete,
    Instantiable,
    ContextBound,
    PoliciesRefined,
    TransformsRefined,
    CoordinationBound,
    Enacted,
    Failed { stage: String, reason: String },
}

impl LifecycleState {
    pub const ORDER: [LifecycleState; 11] = [
        LifecycleState::Deposited,
        LifecycleState::ServicesDescribed,
        LifecycleState::PoliciesSchemed,
        LifecycleState::BindingsValidated,
        LifecycleState::ProfileComplete,
        LifecycleState::Instantiable,
        LifecycleState::ContextBound,
        LifecycleState::PoliciesRefined,
        LifecycleState::TransformsRefined,
        LifecycleState::CoordinationBound,
        LifecycleState::Enacted,
    ];

    /// Position in the canonical order; `None` for `Failed`.
    pub fn index(&self) -> Option<usize> {
        Self::ORDER.iter().position(|s| s == self)
    }

    pub fn next(&self) -> Option<LifecycleState> {
        let i = self.index()?;
        Self::ORDER.get(i + 1).cloned()
    }

    /// Short name used in snapshot file names and CLI output.
    pub fn name(&self) -> &'static str {
        match self {
            LifecycleState::Deposited => "Deposited",
            LifecycleState::ServicesDescribed => "ServicesDescribed",
            LifecycleState::PoliciesSchemed => "PoliciesSchemed",
            LifecycleState::BindingsValidated => "BindingsValidated",
            LifecycleState::ProfileComplete => "ProfileComplete",
            LifecycleState::Instantiable => "Instantiable",
            LifecycleState::ContextBound => "ContextBound",
            LifecycleState::PoliciesRefined => "PoliciesRefined",
            LifecycleState::TransformsRefined => "TransformsRefined",
            LifecycleState::CoordinationBound => "CoordinationBound",
            LifecycleState::Enacted => "Enacted",
            LifecycleState::Failed { .. } => "Failed",
        }
    }

    /// True iff `self` is at or past `other` in the canonical order.
    pub fn at_least(&self, other: &LifecycleState) -> bool {
        match (self.index(), other.index()) {
            (Some(a), Some(b)) => a >= b,
            _ => false,
        }
    }
}

impl std::fmt::Display for LifecycleState {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransformKind {
    Identity,
    FieldRename,
}

/// Declared metadata transform between two policy grammars. Semantic
/// translation is out of scope; only identity and field renames are
/// expressible.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransformDescriptor {
    pub from_grammar: String,
    pub to_grammar: String,
    pub kind: TransformKind,
    pub rename_map: BTreeMap<String, String>,
}

impl TransformDescriptor {
    pub fn validate(&self) -> Result<(), ProfileParseError> {
        match self.kind {
            TransformKind::Identity => {
                if self.from_grammar != self.to_grammar {
                    return Err(ProfileParseError::MalformedDocument {
                        detail: format!(
                            "identity transform must keep the grammar ({} != {})",
                            self.from_grammar, self.to_grammar
                        ),
                    });
                }
                if !self.rename_map.is_empty() {
                    return Err(ProfileParseError::MalformedDocument {
                        detail: "identity transform carries a rename map".into(),
                    });
                }
            }
            TransformKind::FieldRename => {
                let mut targets = std::collections::BTreeSet::new();
                for v in self.rename_map.values() {
                    if !targets.insert(v) {
                        return Err(ProfileParseError::MalformedDocument {
                            detail: format!("rename map targets `{v}` twice"),
                        });
                    }
                }
            }
        }
        Ok(())
    }
}

/// One normalized security requirement.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Requirement {
    pub category: String,
    pub mechanism: String,
    pub attributes: BTreeMap<String, String>,
    pub policy_template_ref: Option<String>,
    pub grammar: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExposureTarget {
    pub endpoint: String,
    pub interface: String,
    pub operations: Vec<String>,
}

/// Wire form of a deposited profile document (strict fields).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProfileDocument {
    profile_id: String,
    owner: String,
    target: ExposureTarget,
    requirements: Vec<Requirement>,
    declared_transforms: Vec<TransformDescriptor>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ProfileParseError {
    #[error("malformed profile document: {detail}")]
    MalformedDocument { detail: String },
    #[error("unknown field in profile document: {detail}")]
    UnknownField { detail: String },
    #[error("missing field in profile document: {detail}")]
    MissingField { detail: String },
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum LifecycleError {
    #[error("artifact for stage {artifact_stage} cannot be applied at state {state}")]
    IllegalTransition {
        state: String,
        artifact_stage: String,
    },
    #[error("profile is already enacted")]
    AlreadyEnacted,
}

// ---------------------------------------------------------------------------
// Stage artifacts

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ServiceDescription {
    pub requirement_index: usize,
    pub category: String,
    pub mechanism: String,
    pub attributes: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TemplateAssignment {
    pub requirement_index: usize,
    pub template_id: String,
    pub grammar: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateSet {
    pub requirement_index: usize,
    pub capability_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OperationBinding {
    pub requirement_index: usize,
    pub operation: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatternBinding {
    pub requirement_index: usize,
    pub pattern: InvocationPattern,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Selection {
    pub requirement_index: usize,
    pub capability_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlannedStep {
    pub number: u32,
    pub action: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstancePlan {
    pub instance_id: String,
    pub capability_id: String,
    pub requirement_index: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstancePolicy {
    pub instance_id: String,
    pub policy: ConcretePolicy,
}

/// Artifact produced by one lifecycle stage. Applying the artifact for the
/// stage after the profile's current state is the only legal transition.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "stage")]
pub enum StageArtifact {
    /// Steps 1-4: abstract service descriptions gathered from the profile.
    ServiceDescriptions { descriptions: Vec<ServiceDescription> },
    /// Steps 5-8: tentative candidates, policy templates and transform
    /// domains.
    PolicyScheme {
        tentative_candidates: Vec<CandidateSet>,
        template_assignments: Vec<TemplateAssignment>,
        transform_domains: Vec<TransformDescriptor>,
    },
    /// Steps 9-12: candidate confirmation, operation bindings and invocation
    /// patterns, with inter-service relationships checked.
    ServiceBindings {
        candidates: Vec<CandidateSet>,
        operation_bindings: Vec<OperationBinding>,
        invocation_patterns: Vec<PatternBinding>,
    },
    /// Steps 13-15: authoritative service selection and resolved transforms.
    FinalSelection {
        selections: Vec<Selection>,
        resolved_transforms: Vec<TransformDescriptor>,
    },
    /// Steps 16-20: management process skeleton and coordination DAG.
    ManagementPlan {
        process_skeleton: Vec<PlannedStep>,
        coordination: CoordinationProcess,
    },
    /// Steps 21-24: context binding to a route and forward target.
    ContextBinding {
        route: String,
        forward_target: String,
        discovered_profile: String,
    },
    /// Steps 25-27: capability instances and context-instantiated policies.
    PolicyRefinement {
        instances: Vec<InstancePlan>,
        concrete_policies: Vec<InstancePolicy>,
    },
    /// Steps 28-30: service-specific transform refinement.
    TransformRefinement { refined: Vec<TransformDescriptor> },
    /// Steps 31-35: instantiated coordination binding.
    CoordinationBinding { coordination: CoordinationProcess },
    /// Steps 36-39: policies pushed, endpoint exposed, service published.
    Enactment {
        pipeline_id: String,
        route: String,
        version: u32,
    },
}

impl StageArtifact {
    /// The state a profile reaches by applying this artifact.
    pub fn target_state(&self) -> LifecycleState {
        match self {
            StageArtifact::ServiceDescriptions { .. } => LifecycleState::ServicesDescribed,
            StageArtifact::PolicyScheme { .. } => LifecycleState::PoliciesSchemed,
            StageArtifact::ServiceBindings { .. } => LifecycleState::BindingsValidated,
            StageArtifact::FinalSelection { .. } => LifecycleState::ProfileComplete,
            StageArtifact::ManagementPlan { .. } => LifecycleState::Instantiable,
            StageArtifact::ContextBinding { .. } => LifecycleState::ContextBound,
            StageArtifact::PolicyRefinement { .. } => LifecycleState::PoliciesRefined,
            StageArtifact::TransformRefinement { .. } => LifecycleState::TransformsRefined,
            StageArtifact::CoordinationBinding { .. } => LifecycleState::CoordinationBound,
            StageArtifact::Enactment { .. } => LifecycleState::Enacted,
        }
    }
}

// ---------------------------------------------------------------------------
// Security profile

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SecurityProfile {
    pub profile_id: String,
    pub owner: String,
    pub target: ExposureTarget,
    pub requirements: Vec<Requirement>,
    pub declared_transforms: Vec<TransformDescriptor>,
    pub state: LifecycleState,
    /// One artifact per completed stage, in application order.
    pub artifacts: Vec<StageArtifact>,
    /// Bumped by the store on each snapshot/restore.
    pub version: u32,
}

impl SecurityProfile {
    /// Canonical serialization; byte-identical for equal profiles.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("profile serializes")
    }

    pub fn artifact_for(&self, state: &LifecycleState) -> Option<&StageArtifact> {
        self.artifacts.iter().find(|a| &a.target_state() == state)
    }

    pub fn find_requirement(&self, category: &str, mechanism: &str) -> Option<(usize, &Requirement)> {
        self.requirements
            .iter()
            .enumerate()
            .find(|(_, r)| r.category == category && r.mechanism == mechanism)
    }
}

/// Parse a deposited profile document. Strict-field policy: unknown fields
/// are rejected rather than ignored.
pub fn parse_profile(document: &[u8]) -> Result<SecurityProfile, ProfileParseError> {
    let text = std::str::from_utf8(document).map_err(|e| ProfileParseError::MalformedDocument {
        detail: format!("not UTF-8: {e}"),
    })?;
    if text.trim().is_empty() {
        return Err(ProfileParseError::MalformedDocument {
            detail: "empty document".into(),
        });
    }
    let doc: ProfileDocument = serde_json::from_str(text).map_err(classify_serde_error)?;
    if doc.profile_id.is_empty() {
        return Err(ProfileParseError::MalformedDocument {
            detail: "profile_id must be non-empty".into(),
        });
    }
    for t in &doc.declared_transforms {
        t.validate()?;
    }
    Ok(SecurityProfile {
        profile_id: doc.profile_id,
        owner: doc.owner,
        target: doc.target,
        requirements: doc.requirements,
        declared_transforms: doc.declared_transforms,
        state: LifecycleState::Deposited,
        artifacts: Vec::new(),
        version: 0,
    })
}

fn classify_serde_error(e: serde_json::Error) -> ProfileParseError {
    let detail = e.to_string();
    if detail.contains("unknown field") {
        ProfileParseError::UnknownField { detail }
    } else if detail.contains("missing field") {
        ProfileParseError::MissingField { detail }
    } else {
        ProfileParseError::MalformedDocument { detail }
    }
}

/// Check every requirement against the taxonomy: category/mechanism must
/// agree and all required attributes must be present.
pub fn validate_against_taxonomy(profile: &SecurityProfile, taxonomy: &Taxonomy) -> ValidationReport {
    let mut report = ValidationReport::empty();
    for req in &profile.requirements {
        if !taxonomy.mechanism_in_category(&req.category, &req.mechanism) {
            report.push(Violation::CategoryMechanismMismatch {
                category: req.category.clone(),
                mechanism: req.mechanism.clone(),
                detail: if taxonomy.has_category(&req.category) {
                    format!(
                        "mechanism `{}` is not defined under category `{}`",
                        req.mechanism, req.category
                    )
                } else {
                    format!("unknown category `{}`", req.category)
                },
            });
            continue;
        }
        for attr in taxonomy.required_attributes(&req.category, &req.mechanism) {
            if !req.attributes.contains_key(&attr) {
                report.push(Violation::MissingAttribute {
                    category: req.category.clone(),
                    mechanism: req.mechanism.clone(),
                    attribute: attr,
                });
            }
        }
    }
    report
}

/// Apply a stage artifact, producing the next profile version. The input is
/// left untouched.
pub fn advance(
    profile: &SecurityProfile,
    artifact: StageArtifact,
) -> Result<SecurityProfile, LifecycleError> {
    if profile.state == LifecycleState::Enacted {
        return Err(LifecycleError::AlreadyEnacted);
    }
    let next = profile.state.next().ok_or_else(|| LifecycleError::IllegalTransition {
        state: profile.state.name().to_string(),
        artifact_stage: artifact.target_state().name().to_string(),
    })?;
    if artifact.target_state() != next {
        return Err(LifecycleError::IllegalTransition {
            state: profile.state.name().to_string(),
            artifact_stage: artifact.target_state().name().to_string(),
        });
    }
    let mut out = profile.clone();
    out.state = next;
    out.artifacts.push(artifact);
    Ok(out)
}

/// Mark a profile failed at its current stage.
pub fn fail(profile: &SecurityProfile, reason: impl Into<String>) -> SecurityProfile {
    let mut out = profile.clone();
    out.state = LifecycleState::Failed {
        stage: profile.state.name().to_string(),
        reason: reason.into(),
    };
    out
}

/// Immutable copy of a profile at a point in its lifecycle.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Snapshot {
    pub snapshot_id: String,
    pub profile_id: String,
    pub state: LifecycleState,
    pub document: SecurityProfile,
    pub created_at: String,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cp1_doc() -> Vec<u8> {
        serde_json::json!({
            "profile_id": "cp1",
            "owner": "CP1",
            "target": {"endpoint": "mock:cp1", "interface": "catalog", "operations": ["read"]},
            "requirements": [{
                "category": "identity-management",
                "mechanism": "http-basic",
                "attributes": {},
                "policy_template_ref": null,
                "grammar": null
            }],
            "declared_transforms": []
        })
        .to_string()
        .into_bytes()
    }

    #[test]
    fn parses_cp1_document() {
        let p = parse_profile(&cp1_doc()).unwrap();
        assert_eq!(p.profile_id, "cp1");
        assert_eq!(p.requirements.len(), 1);
        assert_eq!(p.state, LifecycleState::Deposited);
        assert!(p.artifacts.is_empty());
    }

    #[test]
    fn empty_document_is_malformed() {
        assert!(matches!(
            parse_profile(b""),
            Err(ProfileParseError::MalformedDocument { .. })
        ));
        assert!(matches!(
            parse_profile(b"   \n"),
            Err(ProfileParseError::MalformedDocument { .. })
        ));
    }

    #[test]
    fn parses_cp2_document_with_two_requirements() {
        let doc = serde_json::json!({
            "profile_id": "cp2",
            "owner": "CP2",
            "target": {"endpoint": "mock:cp2", "interface": "catalog", "operations": ["read"]},
            "requirements": [
                {"category": "identity-management", "mechanism": "token-secpal",
                 "attributes": {}, "policy_template_ref": null, "grammar": null},
                {"category": "access-control", "mechanism": "secpal-pdp",
                 "attributes": {}, "policy_template_ref": "cp2-acl", "grammar": "secpal"}
            ],
            "declared_transforms": []
        })
        .to_string();
        let p = parse_profile(doc.as_bytes()).unwrap();
        assert_eq!(p.requirements.len(), 2);
        assert_eq!(p.requirements[1].grammar.as_deref(), Some("secpal"));
    }

    #[test]
    fn unknown_and_missing_fields_are_distinguished() {
        let unknown = serde_json::json!({
            "profile_id": "x", "owner": "o", "surprise": 1,
            "target": {"endpoint": "e", "interface": "i", "operations": []},
            "requirements": [], "declared_transforms": []
        })
        .to_string();
        assert!(matches!(
            parse_profile(unknown.as_bytes()),
            Err(ProfileParseError::UnknownField { .. })
        ));

        let missing = serde_json::json!({"profile_id": "x", "owner": "o"}).to_string();
        assert!(matches!(
            parse_profile(missing.as_bytes()),
            Err(ProfileParseError::MissingField { .. })
        ));
    }

    #[test]
    fn taxonomy_validation_flags_mismatch_and_missing_attribute() {
        let taxonomy = Taxonomy::built_in();
        let mut p = parse_profile(&cp1_doc()).unwrap();
        assert!(validate_against_taxonomy(&p, &taxonomy).is_empty());

        p.requirements[0].category = "audit".into(); // http-basic under audit
        let report = validate_against_taxonomy(&p, &taxonomy);
        assert_eq!(report.len(), 1);
        assert!(matches!(
            report.violations[0],
            Violation::CategoryMechanismMismatch { .. }
        ));

        let mut p2 = parse_profile(&cp1_doc()).unwrap();
        p2.requirements[0].mechanism = "xml-token".into();
        let report = validate_against_taxonomy(&p2, &taxonomy);
        assert_eq!(report.len(), 1);
        assert_eq!(
            report.violations[0],
            Violation::MissingAttribute {
                category: "identity-management".into(),
                mechanism: "xml-token".into(),
                attribute: "schema_ref".into(),
            }
        );
    }

    #[test]
    fn cp3_style_requirement_with_schema_ref_is_clean() {
        let taxonomy = Taxonomy::built_in();
        let mut p = parse_profile(&cp1_doc()).unwrap();
        p.requirements[0].mechanism = "xml-token".into();
        p.requirements[0]
            .attributes
            .insert("schema_ref".into(), "urn:cp3:token:v1".into());
        assert!(validate_against_taxonomy(&p, &taxonomy).is_empty());
    }

    fn artifact_for_stage(state: &LifecycleState) -> StageArtifact {
        match state {
            LifecycleState::ServicesDescribed => StageArtifact::ServiceDescriptions {
                descriptions: vec![],
            },
            LifecycleState::PoliciesSchemed => StageArtifact::PolicyScheme {
                tentative_candidates: vec![],
                template_assignments: vec![],
                transform_domains: vec![],
            },
            LifecycleState::BindingsValidated => StageArtifact::ServiceBindings {
                candidates: vec![],
                operation_bindings: vec![],
                invocation_patterns: vec![],
            },
            LifecycleState::ProfileComplete => StageArtifact::FinalSelection {
                selections: vec![],
                resolved_transforms: vec![],
            },
            LifecycleState::Instantiable => StageArtifact::ManagementPlan {
                process_skeleton: vec![],
                coordination: CoordinationProcess::default(),
            },
            LifecycleState::ContextBound => StageArtifact::ContextBinding {
                route: "r".into(),
                forward_target: "t".into(),
                discovered_profile: "p".into(),
            },
            LifecycleState::PoliciesRefined => StageArtifact::PolicyRefinement {
                instances: vec![],
                concrete_policies: vec![],
            },
            LifecycleState::TransformsRefined => StageArtifact::TransformRefinement {
                refined: vec![],
            },
            LifecycleState::CoordinationBound => StageArtifact::CoordinationBinding {
                coordination: CoordinationProcess::default(),
            },
            LifecycleState::Enacted => StageArtifact::Enactment {
                pipeline_id: "pl".into(),
                route: "r".into(),
                version: 1,
            },
            _ => unreachable!(),
        }
    }

    #[test]
    fn advance_walks_the_full_order() {
        let mut p = parse_profile(&cp1_doc()).unwrap();
        for state in &LifecycleState::ORDER[1..] {
            p = advance(&p, artifact_for_stage(state)).unwrap();
            assert_eq!(&p.state, state);
        }
        assert_eq!(p.artifacts.len(), 10);
        assert!(matches!(
            advance(&p, artifact_for_stage(&LifecycleState::Enacted)),
            Err(LifecycleError::AlreadyEnacted)
        ));
    }

    #[test]
    fn advance_rejects_wrong_stage_artifact() {
        let p = parse_profile(&cp1_doc()).unwrap();
        let err = advance(&p, artifact_for_stage(&LifecycleState::CoordinationBound)).unwrap_err();
        assert!(matches!(err, LifecycleError::IllegalTransition { .. }));
    }

    #[test]
    fn advance_does_not_mutate_input() {
        let p = parse_profile(&cp1_doc()).unwrap();
        let before = p.canonical_json();
        let _ = advance(&p, artifact_for_stage(&LifecycleState::ServicesDescribed)).unwrap();
        assert_eq!(p.canonical_json(), before);
    }
}
