//! Profile manager: orchestrates the 39-step lifecycle over the taxonomy,
//! registry, policy engine, capability services and gateway, and executes
//! the adaptation operations S1-S6 plus runtime failure recovery.
//!
//! All lifecycle work for one profile is serialized through the `Middleware`
//! value; failures never leave partial state behind (created instances are
//! rolled back, the stored profile keeps its pre-operation version).

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::capability::{
    CapabilityInstance, CapabilityKind, HashAlg, InstanceStore,
};
use crate::gateway::{
    DenyBehavior, EnactedPipeline, Forwarder, Gateway, GatewayError, PipelineStep, ReplayReport,
};
use crate::policy::{
    instantiate_template, validate_policy_dependencies, PolicyAssignment, PolicyTemplate,
};
use crate::process::{CoordinationEdge, CoordinationProcess, ManagementProcess};
use crate::profile::{
    advance, validate_against_taxonomy, CandidateSet, LifecycleError, LifecycleState,
    OperationBinding, PatternBinding, PlannedStep, SecurityProfile, Selection,
    ServiceDescription, StageArtifact, TemplateAssignment,
};
use crate::profile::{InstancePlan, InstancePolicy};
use crate::registry::{Availability, InvocationPattern, Registry};
use crate::report::{ValidationReport, Violation};
use crate::store::{ProfileStore, StoreError};
use crate::taxonomy::{DependencyRules, Taxonomy};

/// Step actions 1-39, kebab-cased from the lifecycle plan. Index i holds the
/// action of step i+1.
pub const STEP_ACTIONS: [&str; 39] = [
    "define-service-description",
    "define-service-policy-scheme",
    "define-service-usage-policy",
    "define-service-management-process",
    "select-service",
    "define-policy-template",
    "define-transform-domain",
    "define-policy-management-processes",
    "select-security-service",
    "define-operation-bindings",
    "define-invocation-pattern",
    "validate-security-service-dependencies",
    "select-security-services",
    "define-policy-metadata-transformations",
    "validate-policy-dependencies",
    "select-security-service-management-processes",
    "select-policy-management-processes",
    "define-coordination-process",
    "bind-management-processes",
    "validate-dependencies",
    "discover-infrastructure-profiles",
    "select-infrastructure-profiles",
    "define-bindings-to-business-capability",
    "validate-service-dependencies",
    "select-infrastructure-capability",
    "refine-policy-template-specific-policies",
    "update-capability-policies",
    "select-infrastructure-capabilities",
    "refine-policy-metadata-transformations",
    "validate-policy-dependencies",
    "select-profile-management-processes",
    "select-business-capability-management-processes",
    "define-coordination-process",
    "bind-management-processes",
    "validate-dependencies",
    "update-capability-policy-stores",
    "update-infrastructure-bindings",
    "expose-business-capability",
    "publish-service",
];

/// Context supplied at enactment: where the profile is exposed, where
/// surviving messages go, and the concrete values the templates and
/// capability configurations need.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnactContext {
    pub route: String,
    pub forward_target: String,
    /// Placeholder values for policy template instantiation.
    #[serde(default)]
    pub template_bindings: BTreeMap<String, String>,
    /// Per-mechanism configuration overrides (e.g. the VMS credential pair
    /// for an http-basic capability).
    #[serde(default)]
    pub configs: BTreeMap<String, BTreeMap<String, String>>,
    /// Principal -> password table seeded into identity capabilities.
    #[serde(default)]
    pub credential_table: BTreeMap<String, String>,
}

/// What an adaptation request changes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum AdaptationRequest {
    /// S1: change a local parameter of one requirement's capability.
    S1 {
        profile_id: String,
        mechanism: String,
        key: String,
        value: String,
    },
    /// S2: introduce new security functionality.
    S2 {
        profile_id: String,
        requirement: crate::profile::Requirement,
    },
    /// S3: compose capabilities — inject gateway request context into a
    /// capability's data-pane input.
    S3 {
        profile_id: String,
        mechanism: String,
    },
    /// S4: replace a capability, excluding the old one from selection.
    S4 {
        profile_id: String,
        exclude_capability: String,
    },
    /// S5: use an externally provided capability (selection path of S4).
    S5 {
        profile_id: String,
        exclude_capability: String,
    },
    /// S6: change a security policy (template body), handled via the S1
    /// revalidation path.
    S6 {
        profile_id: String,
        template_id: String,
        grammar: String,
        body: String,
    },
}

impl AdaptationRequest {
    pub fn profile_id(&self) -> &str {
        match self {
            AdaptationRequest::S1 { profile_id, .. }
            | AdaptationRequest::S2 { profile_id, .. }
            | AdaptationRequest::S3 { profile_id, .. }
            | AdaptationRequest::S4 { profile_id, .. }
            | AdaptationRequest::S5 { profile_id, .. }
            | AdaptationRequest::S6 { profile_id, .. } => profile_id,
        }
    }
}

#[derive(Debug, Error)]
pub enum ManagerError {
    #[error("taxonomy validation failed: {0:?}")]
    TaxonomyViolation(ValidationReport),
    #[error("no registered candidate for requirement {index} ({category}/{mechanism})")]
    NoCandidate {
        index: usize,
        category: String,
        mechanism: String,
    },
    #[error("no candidate for requirement {index} supports pattern {pattern:?}")]
    IncompatibleInvocationPattern {
        index: usize,
        pattern: InvocationPattern,
    },
    #[error("missing components: {0:?}")]
    MissingComponents(ValidationReport),
    #[error("policy grammar mismatch: {0:?}")]
    GrammarMismatch(ValidationReport),
    #[error("coordination process is cyclic or unbound: {0}")]
    CoordinationInvalid(String),
    #[error("capability `{0}` is unavailable")]
    CapabilityUnavailable(String),
    #[error("policy push failed: {0}")]
    PolicyPushFailure(String),
    #[error("change rejected: {0}")]
    ChangeRejected(String),
    #[error("no replacement for `{0}` in the registry")]
    NoReplacement(String),
    #[error("profile `{profile_id}` is at {actual}, expected {expected}")]
    WrongState {
        profile_id: String,
        expected: String,
        actual: String,
    },
    #[error("unknown policy template `{0}`")]
    UnknownTemplate(String),
    #[error("profile `{0}` is not recovering")]
    NotRecovering(String),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Lifecycle(#[from] LifecycleError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

/// One logical middleware deployment.
pub struct Middleware {
    pub taxonomy: Taxonomy,
    pub rules: DependencyRules,
    pub templates: BTreeMap<String, PolicyTemplate>,
    pub registry: Registry,
    pub store: ProfileStore,
    pub instances: InstanceStore,
    pub gateway: Gateway,
    processes: BTreeMap<String, ManagementProcess>,
    enact_contexts: BTreeMap<String, EnactContext>,
    /// Instance ids serving each profile's current pipeline.
    live_instances: BTreeMap<String, Vec<String>>,
    /// Capability ids excluded from selection per profile (S4 history).
    exclusions: BTreeMap<String, BTreeSet<String>>,
    recovering: BTreeSet<String>,
    pipeline_counters: BTreeMap<String, u64>,
    process_counter: u64,
    instance_counter: u64,
    step_log: Vec<String>,
    /// Test hook: simulate a control-pane failure at policy push (step 36)
    /// for the named profile.
    pub fail_policy_push_for: Option<String>,
}

impl Middleware {
    pub fn new(store: ProfileStore) -> Self {
        let taxonomy = Taxonomy::built_in();
        Self {
            registry: Registry::new(taxonomy.clone()),
            taxonomy,
            rules: DependencyRules::built_in(),
            templates: BTreeMap::new(),
            store,
            instances: InstanceStore::new(),
            gateway: Gateway::new(),
            processes: BTreeMap::new(),
            enact_contexts: BTreeMap::new(),
            live_instances: BTreeMap::new(),
            exclusions: BTreeMap::new(),
            recovering: BTreeSet::new(),
            pipeline_counters: BTreeMap::new(),
            process_counter: 0,
            instance_counter: 0,
            step_log: Vec::new(),
            fail_policy_push_for: None,
        }
    }

    pub fn add_template(&mut self, template: PolicyTemplate) {
        self.templates.insert(template.template_id.clone(), template);
    }

    pub fn process_for(&self, profile_id: &str) -> Option<&ManagementProcess> {
        self.processes.get(profile_id)
    }

    pub fn step_log(&self) -> &[String] {
        &self.step_log
    }

    pub fn context_for(&self, profile_id: &str) -> Option<&EnactContext> {
        self.enact_contexts.get(profile_id)
    }

    pub fn live_instance_ids(&self, profile_id: &str) -> &[String] {
        self.live_instances
            .get(profile_id)
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    fn fresh_process(&mut self, profile_id: &str) -> ManagementProcess {
        self.process_counter += 1;
        ManagementProcess::new(format!("{profile_id}-mp{}", self.process_counter))
    }

    /// Continue the profile's management process if it stopped exactly at
    /// `expected_last`; otherwise (fresh run or lifecycle re-entry) start a
    /// new process.
    fn continuing_process(&mut self, profile_id: &str, expected_last: u32) -> ManagementProcess {
        match self.processes.remove(profile_id) {
            Some(p) if p.steps.last().map(|s| s.number) == Some(expected_last) => p,
            _ => self.fresh_process(profile_id),
        }
    }

    fn record_step(&mut self, process: &mut ManagementProcess, number: u32, artifact: Option<String>) {
        let action = STEP_ACTIONS[(number - 1) as usize];
        process
            .record_done(number, action, artifact)
            .expect("steps recorded in order");
        self.step_log.push(format!("STEP {number} {action} done"));
    }

    fn record_failed_step(&mut self, process: &mut ManagementProcess, number: u32) {
        let action = STEP_ACTIONS[(number - 1) as usize];
        process.record_failed(number, action);
        self.step_log.push(format!("STEP {number} {action} failed"));
    }

    // -- deposit & stages 1-12 ----------------------------------------------

    /// Parse and store a deposited profile document.
    pub fn deposit(&mut self, document: &[u8]) -> Result<SecurityProfile, ManagerError> {
        let profile = crate::profile::parse_profile(document).map_err(|e| {
            ManagerError::ChangeRejected(e.to_string())
        })?;
        self.store.deposit(profile.clone())?;
        Ok(profile)
    }

    fn require_state(
        profile: &SecurityProfile,
        expected: &LifecycleState,
    ) -> Result<(), ManagerError> {
        if &profile.state != expected {
            return Err(ManagerError::WrongState {
                profile_id: profile.profile_id.clone(),
                expected: expected.name().to_string(),
                actual: profile.state.name().to_string(),
            });
        }
        Ok(())
    }

    /// Steps 1-12: describe services, scheme policies, validate bindings.
    pub fn run_consistency_stages(&mut self, profile_id: &str) -> Result<(), ManagerError> {
        let profile = self.store.get(profile_id)?.clone();
        Self::require_state(&profile, &LifecycleState::Deposited)?;
        let mut process = self.fresh_process(profile_id);
        let result = self.consistency_stages_inner(&profile, &mut process);
        self.processes.insert(profile_id.to_string(), process);
        let advanced = result?;
        self.store.put(advanced)?;
        Ok(())
    }

    fn consistency_stages_inner(
        &mut self,
        profile: &SecurityProfile,
        process: &mut ManagementProcess,
    ) -> Result<SecurityProfile, ManagerError> {
        let report = validate_against_taxonomy(profile, &self.taxonomy);
        if !report.is_empty() {
            self.record_failed_step(process, 1);
            return Err(ManagerError::TaxonomyViolation(report));
        }

        // Steps 1-4: abstract descriptions from the requirements.
        let descriptions: Vec<ServiceDescription> = profile
            .requirements
            .iter()
            .enumerate()
            .map(|(i, r)| ServiceDescription {
                requirement_index: i,
                category: r.category.clone(),
                mechanism: r.mechanism.clone(),
                attributes: r.attributes.clone(),
            })
            .collect();
        let mut current = advance(
            profile,
            StageArtifact::ServiceDescriptions { descriptions },
        )?;
        for n in 1..=4 {
            self.record_step(process, n, Some("service-descriptions".into()));
        }

        // Steps 5-8: tentative candidates, templates, transform domains.
        let excluded = self.exclusions.get(&profile.profile_id).cloned().unwrap_or_default();
        let mut tentative = Vec::new();
        for (i, req) in current.requirements.iter().enumerate() {
            let ids: Vec<String> = self
                .registry
                .find_candidates(req)
                .into_iter()
                .map(|d| d.capability_id)
                .filter(|id| !excluded.contains(id))
                .collect();
            if ids.is_empty() {
                self.record_failed_step(process, 5);
                return Err(ManagerError::NoCandidate {
                    index: i,
                    category: req.category.clone(),
                    mechanism: req.mechanism.clone(),
                });
            }
            tentative.push(CandidateSet {
                requirement_index: i,
                capability_ids: ids,
            });
        }
        let template_assignments: Vec<TemplateAssignment> = current
            .requirements
            .iter()
            .enumerate()
            .filter_map(|(i, r)| {
                r.policy_template_ref.as_ref().map(|t| TemplateAssignment {
                    requirement_index: i,
                    template_id: t.clone(),
                    grammar: r.grammar.clone().unwrap_or_default(),
                })
            })
            .collect();
        current = advance(
            &current,
            StageArtifact::PolicyScheme {
                tentative_candidates: tentative.clone(),
                template_assignments,
                transform_domains: current.declared_transforms.clone(),
            },
        )?;
        for n in 5..=8 {
            self.record_step(process, n, Some("policy-scheme".into()));
        }

        // Steps 9-12: confirm candidates under invocation patterns, bind
        // operations, check inter-service relationships.
        let mut candidates = Vec::new();
        let mut operation_bindings = Vec::new();
        let mut invocation_patterns = Vec::new();
        for (i, req) in current.requirements.iter().enumerate() {
            let pattern = required_pattern(req);
            let surviving: Vec<String> = tentative[i]
                .capability_ids
                .iter()
                .filter(|id| {
                    self.registry
                        .get(id)
                        .map(|d| d.invocation_patterns.contains(&pattern))
                        .unwrap_or(false)
                })
                .cloned()
                .collect();
            if surviving.is_empty() {
                self.record_failed_step(process, 11);
                return Err(ManagerError::IncompatibleInvocationPattern { index: i, pattern });
            }
            candidates.push(CandidateSet {
                requirement_index: i,
                capability_ids: surviving,
            });
            if let Some(kind) = CapabilityKind::from_mechanism(&req.mechanism) {
                operation_bindings.push(OperationBinding {
                    requirement_index: i,
                    operation: kind.operation().to_string(),
                });
            }
            invocation_patterns.push(PatternBinding {
                requirement_index: i,
                pattern,
            });
        }
        let relationships = self.check_missing_components_of(&current);
        if !relationships.is_empty() {
            self.record_failed_step(process, 12);
            return Err(ManagerError::MissingComponents(relationships));
        }
        current = advance(
            &current,
            StageArtifact::ServiceBindings {
                candidates,
                operation_bindings,
                invocation_patterns,
            },
        )?;
        for n in 9..=12 {
            self.record_step(process, n, Some("service-bindings".into()));
        }
        Ok(current)
    }

    /// Inter-category dependency check against the rule table.
    pub fn check_missing_components(&self, profile_id: &str) -> Result<ValidationReport, ManagerError> {
        let profile = self.store.get(profile_id)?;
        Ok(self.check_missing_components_of(profile))
    }

    pub fn check_missing_components_of(&self, profile: &SecurityProfile) -> ValidationReport {
        let present: BTreeSet<&str> = profile
            .requirements
            .iter()
            .map(|r| r.category.as_str())
            .collect();
        check_category_rules(&present, &self.rules)
    }

    // -- stages 13-20 -------------------------------------------------------

    /// Steps 13-20: final selection, resolved transforms, management plan.
    /// Snapshots the profile at ProfileComplete and at Instantiable.
    pub fn build_instantiable(&mut self, profile_id: &str) -> Result<(), ManagerError> {
        let profile = self.store.get(profile_id)?.clone();
        Self::require_state(&profile, &LifecycleState::BindingsValidated)?;
        let mut process = self.continuing_process(profile_id, 12);
        let result = self.build_instantiable_inner(&profile, &mut process);
        self.processes.insert(profile_id.to_string(), process);
        result
    }

    fn build_instantiable_inner(
        &mut self,
        profile: &SecurityProfile,
        process: &mut ManagementProcess,
    ) -> Result<(), ManagerError> {
        let missing = self.check_missing_components_of(profile);
        if !missing.is_empty() {
            self.record_failed_step(process, 13);
            return Err(ManagerError::MissingComponents(missing));
        }
        let Some(StageArtifact::ServiceBindings { candidates, .. }) =
            profile.artifact_for(&LifecycleState::BindingsValidated)
        else {
            return Err(ManagerError::WrongState {
                profile_id: profile.profile_id.clone(),
                expected: LifecycleState::BindingsValidated.name().into(),
                actual: profile.state.name().into(),
            });
        };

        // Step 13: authoritative selection. The step-9 candidate set is
        // tentative; selection re-queries the registry so capabilities
        // registered since (e.g. an S4 replacement twin) are considered.
        // First match in id order wins, honoring the exclusion set and the
        // required invocation pattern.
        let excluded = self
            .exclusions
            .get(&profile.profile_id)
            .cloned()
            .unwrap_or_default();
        let mut selections = Vec::new();
        for set in candidates {
            let req = &profile.requirements[set.requirement_index];
            let pattern = required_pattern(req);
            let chosen = self
                .registry
                .find_candidates(req)
                .into_iter()
                .filter(|d| !excluded.contains(&d.capability_id))
                .find(|d| d.invocation_patterns.contains(&pattern));
            let Some(descriptor) = chosen else {
                self.record_failed_step(process, 13);
                return Err(ManagerError::NoReplacement(format!(
                    "{}/{}",
                    req.category, req.mechanism
                )));
            };
            selections.push(Selection {
                requirement_index: set.requirement_index,
                capability_id: descriptor.capability_id,
            });
        }

        // Step 14: transforms resolved; step 15: policy dependencies.
        let resolved_transforms = profile.declared_transforms.clone();
        let mut assignments = Vec::new();
        let mut capability_grammars: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
        for sel in &selections {
            let req = &profile.requirements[sel.requirement_index];
            if let Some(grammar) = &req.grammar {
                assignments.push(PolicyAssignment {
                    capability_id: sel.capability_id.clone(),
                    grammar: grammar.clone(),
                });
            }
            if let Some(d) = self.registry.get(&sel.capability_id) {
                capability_grammars
                    .insert(sel.capability_id.clone(), d.supported_grammars.clone());
            }
        }
        let grammar_report =
            validate_policy_dependencies(&assignments, &resolved_transforms, &capability_grammars);
        if !grammar_report.is_empty() {
            self.record_failed_step(process, 15);
            return Err(ManagerError::GrammarMismatch(grammar_report));
        }
        let mut current = advance(
            profile,
            StageArtifact::FinalSelection {
                selections: selections.clone(),
                resolved_transforms,
            },
        )?;
        for n in 13..=15 {
            self.record_step(process, n, Some("final-selection".into()));
        }
        self.store.put(current.clone())?;
        self.store.take_snapshot(&current.profile_id)?;

        // Steps 16-20: management plan skeleton + coordination DAG. Each
        // selected capability contributes a node whose readiness feeds the
        // gateway node.
        let process_skeleton: Vec<PlannedStep> = (21..=39)
            .map(|n| PlannedStep {
                number: n,
                action: STEP_ACTIONS[(n - 1) as usize].to_string(),
            })
            .collect();
        let mut nodes: Vec<String> = selections.iter().map(|s| s.capability_id.clone()).collect();
        nodes.push("gateway".into());
        let gateway_node = nodes.len() - 1;
        let edges: Vec<CoordinationEdge> = (0..gateway_node)
            .map(|i| CoordinationEdge {
                from: i,
                output: "ready".into(),
                to: gateway_node,
                input: format!("ready:{}", nodes[i]),
            })
            .collect();
        let mut required_inputs = vec![Vec::new(); nodes.len()];
        required_inputs[gateway_node] = (0..gateway_node)
            .map(|i| format!("ready:{}", nodes[i]))
            .collect();
        let coordination = CoordinationProcess {
            nodes,
            edges,
            required_inputs,
        };
        if let Err(e) = coordination.validate() {
            self.record_failed_step(process, 20);
            return Err(ManagerError::CoordinationInvalid(e.to_string()));
        }
        current = advance(
            &current,
            StageArtifact::ManagementPlan {
                process_skeleton,
                coordination,
            },
        )?;
        for n in 16..=20 {
            self.record_step(process, n, Some("management-plan".into()));
        }
        self.store.put(current.clone())?;
        self.store.take_snapshot(&current.profile_id)?;
        Ok(())
    }

    // -- stages 21-39 -------------------------------------------------------

    /// Steps 21-39: bind context, instantiate capabilities, refine policies
    /// and transforms, bind coordination, push policies and expose.
    pub fn enact(&mut self, profile_id: &str, context: EnactContext) -> Result<EnactedPipeline, ManagerError> {
        let profile = self.store.get(profile_id)?.clone();
        Self::require_state(&profile, &LifecycleState::Instantiable)?;
        let mut process = self.continuing_process(profile_id, 20);
        let result = self.enact_inner(&profile, &context, &mut process);
        self.processes.insert(profile_id.to_string(), process);
        let pipeline = result?;
        self.enact_contexts.insert(profile_id.to_string(), context);
        Ok(pipeline)
    }

    fn enact_inner(
        &mut self,
        profile: &SecurityProfile,
        context: &EnactContext,
        process: &mut ManagementProcess,
    ) -> Result<EnactedPipeline, ManagerError> {
        let profile_id = profile.profile_id.clone();
        let Some(StageArtifact::FinalSelection { selections, resolved_transforms }) =
            profile.artifact_for(&LifecycleState::ProfileComplete).cloned()
        else {
            return Err(ManagerError::WrongState {
                profile_id,
                expected: "profile with final selection".into(),
                actual: profile.state.name().into(),
            });
        };

        // Steps 21-24: locate the instantiable profile and bind the exposure
        // context; all selected capabilities must still be available.
        for sel in &selections {
            let available = self
                .registry
                .get(&sel.capability_id)
                .map(|d| d.availability == Availability::Available)
                .unwrap_or(false);
            if !available {
                self.record_failed_step(process, 24);
                return Err(ManagerError::CapabilityUnavailable(sel.capability_id.clone()));
            }
        }
        let discovered = self
            .store
            .latest_snapshot_at(&profile_id, &LifecycleState::Instantiable)
            .map(|s| s.snapshot_id.clone())
            .unwrap_or_else(|| format!("{profile_id}.Instantiable.?"));
        let mut current = advance(
            profile,
            StageArtifact::ContextBinding {
                route: context.route.clone(),
                forward_target: context.forward_target.clone(),
                discovered_profile: discovered,
            },
        )?;
        for n in 21..=24 {
            self.record_step(process, n, Some("context-binding".into()));
        }

        // Steps 25-27: create instances and instantiate policy templates.
        // Everything created from here on is rolled back on failure.
        let mut created: Vec<String> = Vec::new();
        let result = self.refine_and_expose(
            &mut current,
            context,
            &selections,
            &resolved_transforms,
            process,
            &mut created,
        );
        match result {
            Ok(pipeline) => {
                // Retire instances of the previous pipeline version, if any.
                let old = self
                    .live_instances
                    .insert(profile_id.clone(), created)
                    .unwrap_or_default();
                for id in old {
                    self.instances.remove(&id);
                }
                self.store.put(current)?;
                self.store.take_snapshot(&profile_id)?;
                Ok(pipeline)
            }
            Err(e) => {
                for id in created {
                    self.instances.remove(&id);
                }
                Err(e)
            }
        }
    }

    fn refine_and_expose(
        &mut self,
        current: &mut SecurityProfile,
        context: &EnactContext,
        selections: &[Selection],
        resolved_transforms: &[crate::profile::TransformDescriptor],
        process: &mut ManagementProcess,
        created: &mut Vec<String>,
    ) -> Result<EnactedPipeline, ManagerError> {
        let profile_id = current.profile_id.clone();
        let mut plans: Vec<InstancePlan> = Vec::new();
        let mut policies: Vec<InstancePolicy> = Vec::new();
        let mut configs: BTreeMap<String, BTreeMap<String, String>> = BTreeMap::new();
        for sel in selections {
            let req = &current.requirements[sel.requirement_index];
            let kind = CapabilityKind::from_mechanism(&req.mechanism).ok_or_else(|| {
                ManagerError::ChangeRejected(format!("no capability kind for `{}`", req.mechanism))
            })?;
            self.instance_counter += 1;
            let instance_id = format!("{profile_id}.{}.{}", sel.capability_id, self.instance_counter);
            let mut instance = CapabilityInstance::new(
                &instance_id,
                &sel.capability_id,
                kind,
                context.credential_table.clone(),
            );

            // Configuration: requirement attributes filtered to the kind's
            // key set, overridden by the context's per-mechanism values.
            let mut config: BTreeMap<String, String> = req
                .attributes
                .iter()
                .filter(|(k, _)| kind.valid_config_keys().contains(&k.as_str()))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect();
            if let Some(overrides) = context.configs.get(&req.mechanism) {
                for (k, v) in overrides {
                    config.insert(k.clone(), v.clone());
                }
            }
            if kind == CapabilityKind::SecpalPdp && !config.contains_key("resource_owner") {
                config.insert("resource_owner".into(), current.owner.clone());
            }

            // Step 26: refine template-specific policies for this instance.
            if let Some(template_ref) = &req.policy_template_ref {
                let template = self
                    .templates
                    .get(template_ref)
                    .ok_or_else(|| ManagerError::UnknownTemplate(template_ref.clone()))?;
                let (concrete, _warnings) =
                    instantiate_template(template, &context.template_bindings)
                        .map_err(|e| ManagerError::ChangeRejected(e.to_string()))?;
                policies.push(InstancePolicy {
                    instance_id: instance_id.clone(),
                    policy: concrete,
                });
            }

            // Step 27: configure via the control pane (policies follow at 36).
            instance
                .configure(config.clone(), Vec::new())
                .map_err(|e| ManagerError::ChangeRejected(e.to_string()))?;
            configs.insert(instance_id.clone(), config);
            created.push(instance_id.clone());
            plans.push(InstancePlan {
                instance_id: instance_id.clone(),
                capability_id: sel.capability_id.clone(),
                requirement_index: sel.requirement_index,
            });
            self.instances.insert(instance);
        }
        *current = advance(
            current,
            StageArtifact::PolicyRefinement {
                instances: plans.clone(),
                concrete_policies: policies.clone(),
            },
        )?;
        for n in 25..=27 {
            self.record_step(process, n, Some("policy-refinement".into()));
        }

        // Steps 28-30: service-specific transform refinement.
        for plan in &plans {
            let req = &current.requirements[plan.requirement_index];
            if req.mechanism == "identity-transform" {
                if let Some(descriptor) = resolved_transforms.first() {
                    if let Some(inst) = self.instances.get_mut(&plan.instance_id) {
                        inst.set_transform(descriptor.clone());
                    }
                }
            }
        }
        *current = advance(
            current,
            StageArtifact::TransformRefinement {
                refined: resolved_transforms.to_vec(),
            },
        )?;
        for n in 28..=30 {
            self.record_step(process, n, Some("transform-refinement".into()));
        }

        // Steps 31-35: bind the instantiated coordination process.
        let mut nodes: Vec<String> = plans.iter().map(|p| p.instance_id.clone()).collect();
        nodes.push("gateway".into());
        let gateway_node = nodes.len() - 1;
        let edges: Vec<CoordinationEdge> = (0..gateway_node)
            .map(|i| CoordinationEdge {
                from: i,
                output: "ready".into(),
                to: gateway_node,
                input: format!("ready:{}", nodes[i]),
            })
            .collect();
        let mut required_inputs = vec![Vec::new(); nodes.len()];
        required_inputs[gateway_node] = (0..gateway_node)
            .map(|i| format!("ready:{}", nodes[i]))
            .collect();
        let coordination = CoordinationProcess {
            nodes,
            edges,
            required_inputs,
        };
        coordination
            .validate()
            .map_err(|e| ManagerError::CoordinationInvalid(e.to_string()))?;
        *current = advance(current, StageArtifact::CoordinationBinding { coordination })?;
        for n in 31..=35 {
            self.record_step(process, n, Some("coordination-binding".into()));
        }

        // Step 36: push the instantiated policies to the capability stores.
        if self.fail_policy_push_for.as_deref() == Some(profile_id.as_str()) {
            self.record_failed_step(process, 36);
            return Err(ManagerError::PolicyPushFailure(
                "control pane rejected policy push (injected)".into(),
            ));
        }
        for ip in &policies {
            let config = configs.get(&ip.instance_id).cloned().unwrap_or_default();
            let instance = self
                .instances
                .get_mut(&ip.instance_id)
                .expect("instance created above");
            instance
                .configure(config, vec![ip.policy.clone()])
                .map_err(|e| {
                    self.step_log
                        .push(format!("STEP 36 {} failed", STEP_ACTIONS[35]));
                    ManagerError::PolicyPushFailure(e.to_string())
                })?;
        }

        // Steps 37-39: build, expose and publish the pipeline.
        let counter = self.pipeline_counters.entry(profile_id.clone()).or_insert(0);
        *counter += 1;
        let version = *counter;
        let mut steps = Vec::new();
        for plan in &plans {
            let req = &current.requirements[plan.requirement_index];
            let kind = CapabilityKind::from_mechanism(&req.mechanism).expect("validated");
            let on_deny = if req.category == "audit" {
                DenyBehavior::Annotate
            } else {
                DenyBehavior::Reject
            };
            steps.push(PipelineStep {
                instance_id: plan.instance_id.clone(),
                operation: kind.operation().to_string(),
                bindings: BTreeMap::new(),
                on_deny,
            });
        }
        let pipeline = EnactedPipeline {
            pipeline_id: format!("{profile_id}-pl{version}"),
            profile_ref: profile_id.clone(),
            version,
            route: context.route.clone(),
            steps,
            forward_target: context.forward_target.clone(),
        };
        self.gateway.expose(pipeline.clone())?;
        if let Some((_, req)) = current.find_requirement("audit", "audit-log") {
            if let Some(alg) = req.attributes.get("hash_alg").and_then(|a| HashAlg::parse(a)) {
                self.gateway.set_audit_algorithm(&profile_id, alg);
            }
        }
        *current = advance(
            current,
            StageArtifact::Enactment {
                pipeline_id: pipeline.pipeline_id.clone(),
                route: pipeline.route.clone(),
                version: version as u32,
            },
        )?;
        for n in 36..=39 {
            self.record_step(process, n, Some("enactment".into()));
        }
        Ok(pipeline)
    }

    /// Convenience: run a deposited profile all the way to Enacted.
    pub fn run_full_lifecycle(
        &mut self,
        profile_id: &str,
        context: EnactContext,
    ) -> Result<EnactedPipeline, ManagerError> {
        self.run_consistency_stages(profile_id)?;
        self.build_instantiable(profile_id)?;
        self.enact(profile_id, context)
    }

    // -- adaptation ---------------------------------------------------------

    /// Execute an adaptation request. The serving pipeline stays live until
    /// the replacement is fully built; a rejected change leaves the old
    /// version enacted.
    pub fn adapt(&mut self, request: AdaptationRequest) -> Result<EnactedPipeline, ManagerError> {
        let profile_id = request.profile_id().to_string();
        match request {
            AdaptationRequest::S1 { mechanism, key, value, .. } => {
                self.validate_parameter_change(&mechanism, &key, &value)?;
                self.reenact_from_profile_complete(&profile_id, Some((mechanism, key, value)))
            }
            AdaptationRequest::S6 { template_id, grammar, body, .. } => {
                // Per the model, a policy change is a parameter change on the
                // template: revalidate, swap the template, re-enact.
                let owning_mechanism = self.mechanism_using_template(&profile_id, &template_id)?;
                let kind = CapabilityKind::from_mechanism(&owning_mechanism).ok_or_else(|| {
                    ManagerError::ChangeRejected(format!("unknown mechanism `{owning_mechanism}`"))
                })?;
                if !kind.supported_policy_grammars().contains(&grammar.as_str()) {
                    return Err(ManagerError::ChangeRejected(format!(
                        "grammar `{grammar}` unsupported by `{owning_mechanism}`"
                    )));
                }
                let template = PolicyTemplate::new(&template_id, &grammar, body)
                    .map_err(|e| ManagerError::ChangeRejected(e.to_string()))?;
                let previous = self.templates.insert(template_id.clone(), template);
                match self.reenact_from_profile_complete(&profile_id, None) {
                    Ok(p) => Ok(p),
                    Err(e) => {
                        // Restore the old template; the old pipeline serves on.
                        match previous {
                            Some(t) => {
                                self.templates.insert(template_id, t);
                            }
                            None => {
                                self.templates.remove(&template_id);
                            }
                        }
                        Err(e)
                    }
                }
            }
            AdaptationRequest::S2 { requirement, .. } => {
                // A new requirement invalidates the early-stage artifacts:
                // amend the deposited document and rerun the lifecycle.
                let context = self
                    .enact_contexts
                    .get(&profile_id)
                    .cloned()
                    .ok_or_else(|| ManagerError::ChangeRejected("profile was never enacted".into()))?;
                let deposited = self
                    .store
                    .latest_snapshot_at(&profile_id, &LifecycleState::Deposited)
                    .ok_or_else(|| StoreError::UnknownSnapshot(format!("{profile_id}.Deposited.*")))?
                    .snapshot_id
                    .clone();
                let mut amended = self.store.restore_snapshot(&deposited)?;
                // Carry forward requirements added by earlier adaptations.
                let enacted_requirements = self.store.get(&profile_id)?.requirements.clone();
                amended.requirements = enacted_requirements;
                amended.requirements.push(requirement);
                self.store.put(amended)?;
                self.run_consistency_stages(&profile_id)?;
                self.build_instantiable(&profile_id)?;
                self.enact(&profile_id, context)
            }
            AdaptationRequest::S3 { mechanism, .. } => {
                // Compose: re-enact, then bind the gateway's request context
                // record into the capability's data-pane input slot.
                let pipeline = self.reenact_from_profile_complete(&profile_id, None)?;
                let mut updated = pipeline.clone();
                for step in &mut updated.steps {
                    let owns = self
                        .instances
                        .get(&step.instance_id)
                        .map(|i| {
                            CapabilityKind::from_mechanism(&mechanism) == Some(i.kind)
                        })
                        .unwrap_or(false);
                    if owns {
                        step.bindings.insert(
                            "context".into(),
                            "subject,action,resource,client,timestamp".into(),
                        );
                    }
                }
                self.gateway.expose(updated.clone())?;
                Ok(updated)
            }
            AdaptationRequest::S4 { exclude_capability, .. }
            | AdaptationRequest::S5 { exclude_capability, .. } => {
                self.exclusions
                    .entry(profile_id.clone())
                    .or_default()
                    .insert(exclude_capability);
                self.reenact_from_profile_complete(&profile_id, None)
            }
        }
    }

    fn validate_parameter_change(
        &self,
        mechanism: &str,
        key: &str,
        value: &str,
    ) -> Result<(), ManagerError> {
        let kind = CapabilityKind::from_mechanism(mechanism).ok_or_else(|| {
            ManagerError::ChangeRejected(format!("unknown mechanism `{mechanism}`"))
        })?;
        if !kind.valid_config_keys().contains(&key) {
            return Err(ManagerError::ChangeRejected(format!(
                "`{key}` is not a parameter of `{mechanism}`"
            )));
        }
        if key == "hash_alg" && HashAlg::parse(value).is_none() {
            return Err(ManagerError::ChangeRejected(format!(
                "unsupported hash algorithm `{value}`"
            )));
        }
        Ok(())
    }

    fn mechanism_using_template(
        &self,
        profile_id: &str,
        template_id: &str,
    ) -> Result<String, ManagerError> {
        let profile = self.store.get(profile_id)?;
        profile
            .requirements
            .iter()
            .find(|r| r.policy_template_ref.as_deref() == Some(template_id))
            .map(|r| r.mechanism.clone())
            .ok_or_else(|| ManagerError::UnknownTemplate(template_id.to_string()))
    }

    /// Shared re-entry path: restore the latest ProfileComplete snapshot,
    /// optionally amend one requirement attribute, rewind to step 13 and run
    /// the lifecycle forward to a fresh enactment.
    fn reenact_from_profile_complete(
        &mut self,
        profile_id: &str,
        amend: Option<(String, String, String)>,
    ) -> Result<EnactedPipeline, ManagerError> {
        let context = self
            .enact_contexts
            .get(profile_id)
            .cloned()
            .ok_or_else(|| ManagerError::ChangeRejected("profile was never enacted".into()))?;
        let pre_adapt = self.store.get(profile_id)?.clone();
        let snapshot_id = self
            .store
            .latest_snapshot_at(profile_id, &LifecycleState::ProfileComplete)
            .ok_or_else(|| StoreError::UnknownSnapshot(format!("{profile_id}.ProfileComplete.*")))?
            .snapshot_id
            .clone();
        let mut restored = self.store.restore_snapshot(&snapshot_id)?;
        // Rewind to BindingsValidated so selection (step 13) reruns.
        restored.artifacts.pop();
        restored.state = LifecycleState::BindingsValidated;
        if let Some((mechanism, key, value)) = amend {
            let req = restored
                .requirements
                .iter_mut()
                .find(|r| r.mechanism == mechanism)
                .ok_or_else(|| {
                    ManagerError::ChangeRejected(format!(
                        "profile has no `{mechanism}` requirement"
                    ))
                })?;
            req.attributes.insert(key, value);
        }
        self.store.put(restored)?;
        let result = self
            .build_instantiable(profile_id)
            .and_then(|_| self.enact(profile_id, context));
        if result.is_err() {
            // Old pipeline keeps serving; put the pre-adaptation profile back.
            self.store.put(pre_adapt)?;
        }
        result
    }

    // -- runtime failure recovery (S4) --------------------------------------

    /// A capability in an enacted profile just failed: buffer the endpoint
    /// and mark its instances failed. Recovery completes separately so
    /// in-flight traffic can be observed buffering.
    pub fn begin_recovery(&mut self, profile_id: &str, capability_id: &str) -> Result<(), ManagerError> {
        let context = self
            .enact_contexts
            .get(profile_id)
            .ok_or_else(|| ManagerError::ChangeRejected("profile was never enacted".into()))?
            .clone();
        self.gateway.enter_buffering(&context.route)?;
        for id in self.live_instance_ids(profile_id).to_vec() {
            let belongs = self
                .instances
                .get(&id)
                .map(|i| i.descriptor_ref == capability_id)
                .unwrap_or(false);
            if belongs {
                if let Some(inst) = self.instances.get_mut(&id) {
                    inst.mark_failed();
                }
            }
        }
        self.exclusions
            .entry(profile_id.to_string())
            .or_default()
            .insert(capability_id.to_string());
        self.recovering.insert(profile_id.to_string());
        Ok(())
    }

    /// Regenerate the profile from step 13 with the failed capability
    /// excluded, swap the pipeline in, and replay the buffered messages.
    pub fn complete_recovery(
        &mut self,
        profile_id: &str,
        forwarder: &dyn Forwarder,
    ) -> Result<ReplayReport, ManagerError> {
        if !self.recovering.contains(profile_id) {
            return Err(ManagerError::NotRecovering(profile_id.to_string()));
        }
        let route = self
            .enact_contexts
            .get(profile_id)
            .map(|c| c.route.clone())
            .ok_or_else(|| ManagerError::ChangeRejected("profile was never enacted".into()))?;
        self.reenact_from_profile_complete(profile_id, None)?;
        self.recovering.remove(profile_id);
        let instances = std::mem::take(&mut self.instances);
        let report = self.gateway.replay(&route, &instances, forwarder);
        self.instances = instances;
        Ok(report?)
    }

    /// Buffer, regenerate and replay in one call.
    pub fn on_capability_failure(
        &mut self,
        profile_id: &str,
        capability_id: &str,
        forwarder: &dyn Forwarder,
    ) -> Result<ReplayReport, ManagerError> {
        self.begin_recovery(profile_id, capability_id)?;
        self.complete_recovery(profile_id, forwarder)
    }

    /// React to registry availability events: any enacted profile whose
    /// pipeline uses a capability that just went unavailable enters recovery.
    pub fn pump_events(&mut self, forwarder: &dyn Forwarder) -> Vec<(String, Result<ReplayReport, String>)> {
        let events = self.registry.drain_events();
        let mut outcomes = Vec::new();
        for event in events {
            if event.availability != Availability::Unavailable {
                continue;
            }
            let affected: Vec<String> = self
                .live_instances
                .iter()
                .filter(|(_, ids)| {
                    ids.iter().any(|id| {
                        self.instances
                            .get(id)
                            .map(|i| i.descriptor_ref == event.capability_id)
                            .unwrap_or(false)
                    })
                })
                .map(|(profile, _)| profile.clone())
                .collect();
            for profile_id in affected {
                let result = self
                    .on_capability_failure(&profile_id, &event.capability_id, forwarder)
                    .map_err(|e| e.to_string());
                outcomes.push((profile_id, result));
            }
        }
        outcomes
    }
}

/// Default invocation pattern per requirement, overridable through the
/// requirement's `invocation_pattern` attribute.
fn required_pattern(req: &crate::profile::Requirement) -> InvocationPattern {
    if let Some(p) = req.attributes.get("invocation_pattern") {
        return match p.as_str() {
            "one-way" => InvocationPattern::OneWay,
            "out-of-band-token-fetch" => InvocationPattern::OutOfBandTokenFetch,
            _ => InvocationPattern::RequestResponse,
        };
    }
    match req.mechanism.as_str() {
        "xml-token" | "token-secpal" => InvocationPattern::OutOfBandTokenFetch,
        "audit-log" => InvocationPattern::OneWay,
        _ => InvocationPattern::RequestResponse,
    }
}

/// The rule table applied to a profile's category set.
pub fn check_category_rules(present: &BTreeSet<&str>, rules: &DependencyRules) -> ValidationReport {
    let mut report = ValidationReport::empty();
    for (category, requires) in &rules.requires_category {
        if present.contains(category.as_str()) && !present.contains(requires.as_str()) {
            report.push(Violation::MissingDependency {
                category: category.clone(),
                requires: requires.clone(),
            });
        }
    }
    for category in &rules.not_alone {
        if present.contains(category.as_str()) && present.len() == 1 {
            report.push(Violation::MissingDependency {
                category: category.clone(),
                requires: "any other category".into(),
            });
        }
    }
    report
}

/// Pipeline descriptor with run-specific identifiers masked, for
/// determinism comparisons across fresh runs and snapshot restores.
pub fn normalized_pipeline(pipeline: &EnactedPipeline) -> serde_json::Value {
    let steps: Vec<serde_json::Value> = pipeline
        .steps
        .iter()
        .enumerate()
        .map(|(i, s)| {
            // Instance ids embed a global counter; keep only the capability
            // reference portion (profile.capability.counter -> capability).
            let capability = s
                .instance_id
                .split('.')
                .nth(1)
                .unwrap_or(&s.instance_id)
                .to_string();
            serde_json::json!({
                "index": i,
                "capability": capability,
                "operation": s.operation,
                "bindings": s.bindings,
                "on_deny": s.on_deny,
            })
        })
        .collect();
    serde_json::json!({
        "profile_ref": pipeline.profile_ref,
        "route": pipeline.route,
        "forward_target": pipeline.forward_target,
        "steps": steps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::registry::CapabilityDescriptor;

    fn descriptor(id: &str, category: &str, mechanism: &str) -> CapabilityDescriptor {
        let patterns: BTreeSet<InvocationPattern> = [
            InvocationPattern::RequestResponse,
            InvocationPattern::OneWay,
            InvocationPattern::OutOfBandTokenFetch,
        ]
        .into_iter()
        .collect();
        CapabilityDescriptor {
            capability_id: id.into(),
            provider: "prov".into(),
            category: category.into(),
            mechanism: mechanism.into(),
            attributes: BTreeMap::new(),
            control_endpoint: format!("mgmt:{id}"),
            data_endpoint: format!("data:{id}"),
            supported_grammars: ["secpal".to_string()].into_iter().collect(),
            invocation_patterns: patterns,
            availability: Availability::Available,
        }
    }

    fn middleware() -> Middleware {
        let mut mw = Middleware::new(ProfileStore::new());
        mw.registry
            .register(descriptor("basic-auth-1", "identity-management", "http-basic"))
            .unwrap();
        mw.registry
            .register(descriptor("audit-1", "audit", "audit-log"))
            .unwrap();
        mw.registry
            .register(descriptor("secpal-sts-1", "identity-management", "token-secpal"))
            .unwrap();
        mw.registry
            .register(descriptor("pdp-a", "access-control", "secpal-pdp"))
            .unwrap();
        mw.registry
            .register(descriptor("pdp-b", "access-control", "secpal-pdp"))
            .unwrap();
        mw
    }

    fn cp1_doc() -> Vec<u8> {
        serde_json::json!({
            "profile_id": "cp1",
            "owner": "CP1",
            "target": {"endpoint": "mock:cp1", "interface": "catalog", "operations": ["read"]},
            "requirements": [
                {"category": "identity-management", "mechanism": "http-basic",
                 "attributes": {}, "policy_template_ref": null, "grammar": null},
                {"category": "audit", "mechanism": "audit-log",
                 "attributes": {"hash_alg": "sha-256"}, "policy_template_ref": null, "grammar": null}
            ],
            "declared_transforms": []
        })
        .to_string()
        .into_bytes()
    }

    fn cp1_context() -> EnactContext {
        EnactContext {
            route: "cp1".into(),
            forward_target: "mock:cp1".into(),
            template_bindings: BTreeMap::new(),
            configs: [(
                "http-basic".to_string(),
                [("login".to_string(), "vms".to_string()),
                 ("password".to_string(), "pw1".to_string())]
                    .into_iter()
                    .collect(),
            )]
            .into_iter()
            .collect(),
            credential_table: BTreeMap::new(),
        }
    }

    #[test]
    fn full_lifecycle_records_steps_1_to_39() {
        let mut mw = middleware();
        mw.deposit(&cp1_doc()).unwrap();
        let pipeline = mw.run_full_lifecycle("cp1", cp1_context()).unwrap();
        assert_eq!(mw.store.get("cp1").unwrap().state, LifecycleState::Enacted);
        let numbers = mw.process_for("cp1").unwrap().step_numbers();
        assert_eq!(numbers, (1..=39).collect::<Vec<u32>>());
        assert_eq!(pipeline.steps.len(), 2);
        assert_eq!(pipeline.steps[0].operation, "basic_auth.apply");
        assert_eq!(pipeline.steps[1].operation, "audit_log.record");
        assert_eq!(pipeline.steps[1].on_deny, DenyBehavior::Annotate);
    }

    #[test]
    fn no_candidate_when_registry_lacks_mechanism() {
        let mut mw = Middleware::new(ProfileStore::new());
        mw.deposit(&cp1_doc()).unwrap();
        assert!(matches!(
            mw.run_consistency_stages("cp1"),
            Err(ManagerError::NoCandidate { index: 0, .. })
        ));
        // Profile untouched.
        assert_eq!(mw.store.get("cp1").unwrap().state, LifecycleState::Deposited);
    }

    #[test]
    fn incompatible_invocation_pattern_detected() {
        let mut mw = middleware();
        let mut doc = serde_json::from_slice::<serde_json::Value>(&cp1_doc()).unwrap();
        doc["requirements"][0]["attributes"]["invocation_pattern"] = "one-way".into();
        let mut mw2 = Middleware::new(ProfileStore::new());
        let mut d = descriptor("rr-only", "identity-management", "http-basic");
        d.invocation_patterns = [InvocationPattern::RequestResponse].into_iter().collect();
        mw2.registry.register(d).unwrap();
        mw2.registry
            .register(descriptor("audit-1", "audit", "audit-log"))
            .unwrap();
        mw2.deposit(doc.to_string().as_bytes()).unwrap();
        assert!(matches!(
            mw2.run_consistency_stages("cp1"),
            Err(ManagerError::IncompatibleInvocationPattern { index: 0, .. })
        ));
        drop(mw);
    }

    #[test]
    fn category_rule_table_over_all_subsets() {
        // Oracle: enumerate the rule table by hand over all 2^5 subsets.
        let rules = DependencyRules::built_in();
        let categories = [
            "identity-management",
            "access-control",
            "audit",
            "transport",
            "transformation",
        ];
        for mask in 0u32..32 {
            let present: BTreeSet<&str> = categories
                .iter()
                .enumerate()
                .filter(|(i, _)| mask & (1 << i) != 0)
                .map(|(_, c)| *c)
                .collect();
            let report = check_category_rules(&present, &rules);
            let expect_ac = present.contains("access-control")
                && !present.contains("identity-management");
            let expect_alone = present.contains("transformation") && present.len() == 1;
            let expected = usize::from(expect_ac) + usize::from(expect_alone);
            assert_eq!(report.len(), expected, "subset {present:?}");
        }
    }

    #[test]
    fn enact_with_unavailable_capability_leaks_nothing() {
        let mut mw = middleware();
        mw.deposit(&cp1_doc()).unwrap();
        mw.run_consistency_stages("cp1").unwrap();
        mw.build_instantiable("cp1").unwrap();
        mw.registry
            .set_availability("basic-auth-1", Availability::Unavailable)
            .unwrap();
        let err = mw.enact("cp1", cp1_context()).unwrap_err();
        assert!(matches!(err, ManagerError::CapabilityUnavailable(_)));
        assert_eq!(mw.store.get("cp1").unwrap().state, LifecycleState::Instantiable);
        assert!(mw.instances.is_empty());
    }

    #[test]
    fn policy_push_failure_rolls_back_instances() {
        let mut mw = middleware();
        mw.deposit(&cp1_doc()).unwrap();
        mw.run_consistency_stages("cp1").unwrap();
        mw.build_instantiable("cp1").unwrap();
        mw.fail_policy_push_for = Some("cp1".into());
        let err = mw.enact("cp1", cp1_context()).unwrap_err();
        assert!(matches!(err, ManagerError::PolicyPushFailure(_)));
        assert!(mw.instances.is_empty());
        assert_eq!(mw.store.get("cp1").unwrap().state, LifecycleState::Instantiable);
        // Remove the hook and enact cleanly.
        mw.fail_policy_push_for = None;
        mw.enact("cp1", cp1_context()).unwrap();
        assert_eq!(mw.instances.len(), 2);
    }

    #[test]
    fn restore_at_instantiable_then_enact_matches_full_run() {
        let mut mw = middleware();
        mw.deposit(&cp1_doc()).unwrap();
        let full = mw.run_full_lifecycle("cp1", cp1_context()).unwrap();
        let full_norm = normalized_pipeline(&full);

        let snap = mw
            .store
            .latest_snapshot_at("cp1", &LifecycleState::Instantiable)
            .unwrap()
            .snapshot_id
            .clone();
        mw.store.restore_snapshot(&snap).unwrap();
        let again = mw.enact("cp1", cp1_context()).unwrap();
        assert_eq!(normalized_pipeline(&again), full_norm);
    }

    #[test]
    fn s1_hash_alg_change_reenacts_with_new_algorithm() {
        let mut mw = middleware();
        mw.deposit(&cp1_doc()).unwrap();
        mw.run_full_lifecycle("cp1", cp1_context()).unwrap();
        let pipeline = mw
            .adapt(AdaptationRequest::S1 {
                profile_id: "cp1".into(),
                mechanism: "audit-log".into(),
                key: "hash_alg".into(),
                value: "sha-512".into(),
            })
            .unwrap();
        assert_eq!(pipeline.version, 2);
        assert_eq!(mw.store.get("cp1").unwrap().state, LifecycleState::Enacted);
        // Old instances retired, new ones live.
        assert_eq!(mw.instances.len(), 2);
    }

    #[test]
    fn invalid_s1_change_is_rejected_and_old_version_serves() {
        let mut mw = middleware();
        mw.deposit(&cp1_doc()).unwrap();
        mw.run_full_lifecycle("cp1", cp1_context()).unwrap();
        let err = mw
            .adapt(AdaptationRequest::S1 {
                profile_id: "cp1".into(),
                mechanism: "audit-log".into(),
                key: "hash_alg".into(),
                value: "md5".into(),
            })
            .unwrap_err();
        assert!(matches!(err, ManagerError::ChangeRejected(_)));
        assert_eq!(mw.store.get("cp1").unwrap().state, LifecycleState::Enacted);
        assert_eq!(mw.gateway.pipeline("cp1").unwrap().version, 1);
    }

    #[test]
    fn s2_adds_requirement_and_extends_pipeline() {
        let mut mw = middleware();
        let doc = serde_json::json!({
            "profile_id": "cp1",
            "owner": "CP1",
            "target": {"endpoint": "mock:cp1", "interface": "catalog", "operations": ["read"]},
            "requirements": [
                {"category": "identity-management", "mechanism": "http-basic",
                 "attributes": {}, "policy_template_ref": null, "grammar": null}
            ],
            "declared_transforms": []
        })
        .to_string();
        mw.deposit(doc.as_bytes()).unwrap();
        let before = mw.run_full_lifecycle("cp1", cp1_context()).unwrap();
        assert_eq!(before.steps.len(), 1);
        let after = mw
            .adapt(AdaptationRequest::S2 {
                profile_id: "cp1".into(),
                requirement: crate::profile::Requirement {
                    category: "audit".into(),
                    mechanism: "audit-log".into(),
                    attributes: BTreeMap::new(),
                    policy_template_ref: None,
                    grammar: None,
                },
            })
            .unwrap();
        assert_eq!(after.steps.len(), 2);
        assert_eq!(after.steps[0].operation, before.steps[0].operation);
        assert_eq!(after.steps[1].operation, "audit_log.record");
    }

    #[test]
    fn s4_swaps_to_twin_and_excludes_old() {
        let mut mw = middleware();
        let doc = serde_json::json!({
            "profile_id": "cp2",
            "owner": "CP2",
            "target": {"endpoint": "mock:cp2", "interface": "catalog", "operations": ["read"]},
            "requirements": [
                {"category": "identity-management", "mechanism": "token-secpal",
                 "attributes": {}, "policy_template_ref": null, "grammar": null},
                {"category": "access-control", "mechanism": "secpal-pdp",
                 "attributes": {}, "policy_template_ref": null, "grammar": "secpal"}
            ],
            "declared_transforms": []
        })
        .to_string();
        mw.deposit(doc.as_bytes()).unwrap();
        let ctx = EnactContext {
            route: "cp2".into(),
            forward_target: "mock:cp2".into(),
            template_bindings: BTreeMap::new(),
            configs: BTreeMap::new(),
            credential_table: BTreeMap::new(),
        };
        mw.run_full_lifecycle("cp2", ctx).unwrap();
        let before: Vec<String> = mw
            .live_instance_ids("cp2")
            .iter()
            .filter(|id| id.contains("pdp"))
            .cloned()
            .collect();
        assert!(before[0].contains("pdp-a"));
        mw.adapt(AdaptationRequest::S4 {
            profile_id: "cp2".into(),
            exclude_capability: "pdp-a".into(),
        })
        .unwrap();
        let after: Vec<String> = mw
            .live_instance_ids("cp2")
            .iter()
            .filter(|id| id.contains("pdp"))
            .cloned()
            .collect();
        assert!(after[0].contains("pdp-b"));
    }

    struct NullForwarder;
    impl Forwarder for NullForwarder {
        fn forward(
            &self,
            _target: &str,
            _message: &crate::gateway::Message,
        ) -> Result<crate::gateway::ForwardResponse, String> {
            Ok(crate::gateway::ForwardResponse {
                status: 200,
                body: "ok".into(),
            })
        }
    }

    #[test]
    fn recovery_buffers_and_replays_in_order() {
        let mut mw = middleware();
        mw.deposit(&cp1_doc()).unwrap();
        mw.run_full_lifecycle("cp1", cp1_context()).unwrap();
        mw.registry
            .register(descriptor("basic-auth-2", "identity-management", "http-basic"))
            .unwrap();
        mw.begin_recovery("cp1", "basic-auth-1").unwrap();
        let fwd = NullForwarder;
        for i in 0..5 {
            let instances = std::mem::take(&mut mw.instances);
            let r = mw.gateway.process(
                "cp1",
                crate::gateway::Message::new(format!("m{i}")),
                &instances,
                &fwd,
            );
            mw.instances = instances;
            assert_eq!(r.status, 202);
        }
        let report = mw.complete_recovery("cp1", &fwd).unwrap();
        assert_eq!(report.buffered, 5);
        assert_eq!(report.rejected, 0);
        let ids: Vec<u64> = report.replayed.iter().map(|(id, _)| *id).collect();
        let mut sorted = ids.clone();
        sorted.sort();
        assert_eq!(ids, sorted);
        // Replacement selected, no leaked instances.
        assert!(mw
            .live_instance_ids("cp1")
            .iter()
            .any(|id| id.contains("basic-auth-2")));
        assert_eq!(mw.instances.len(), 2);
    }

    #[test]
    fn recovery_without_replacement_keeps_buffering() {
        let mut mw = middleware();
        mw.deposit(&cp1_doc()).unwrap();
        mw.run_full_lifecycle("cp1", cp1_context()).unwrap();
        mw.begin_recovery("cp1", "basic-auth-1").unwrap();
        let err = mw.complete_recovery("cp1", &NullForwarder).unwrap_err();
        assert!(matches!(err, ManagerError::NoReplacement(_)));
        // Endpoint still buffering: new messages are retained, not served.
        let instances = std::mem::take(&mut mw.instances);
        let r = mw.gateway.process(
            "cp1",
            crate::gateway::Message::new("queued"),
            &instances,
            &NullForwarder,
        );
        mw.instances = instances;
        assert_eq!(r.status, 202);
    }
}
