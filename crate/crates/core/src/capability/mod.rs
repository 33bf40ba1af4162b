//! Reference security capability services.
//!
//! Every capability instance has a control pane (configuration and policy
//! administration) and a data pane (the security action itself). Data-pane
//! operations are rejected unless the instance is active, and never touch
//! the policy store.

pub mod audit;
pub mod token;

use std::collections::BTreeMap;

use base64::Engine;
use chrono::{DateTime, Duration, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::policy::{
    derive, parse_assertion_lines, Assertion, ConcretePolicy, Fact, Outcome, Query,
};
use crate::profile::TransformDescriptor;

pub use audit::{verify_chain, AuditChain, AuditRecord, ChainError, HashAlg};
pub use token::{SchemaViolation, XmlToken, TOKEN_NAMESPACE};

/// Metadata key whose value replaces the message body.
pub const META_BODY: &str = "body";
/// Prefix for metadata keys merged into message headers.
pub const META_HEADER_PREFIX: &str = "header:";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CapabilityKind {
    BasicAuth,
    XmlTokenSts,
    SecpalSts,
    SecpalPdp,
    AuditLog,
    IdentityTransform,
}

impl CapabilityKind {
    pub fn from_mechanism(mechanism: &str) -> Option<Self> {
        match mechanism {
            "http-basic" => Some(Self::BasicAuth),
            "xml-token" => Some(Self::XmlTokenSts),
            "token-secpal" => Some(Self::SecpalSts),
            "secpal-pdp" => Some(Self::SecpalPdp),
            "audit-log" => Some(Self::AuditLog),
            "identity-transform" => Some(Self::IdentityTransform),
            _ => None,
        }
    }

    /// Data-pane operation this kind contributes to a pipeline.
    pub fn operation(&self) -> &'static str {
        match self {
            Self::BasicAuth => "basic_auth.apply",
            Self::XmlTokenSts => "xml_token_sts.issue",
            Self::SecpalSts => "secpal_sts.identify",
            Self::SecpalPdp => "secpal_pdp.authorize",
            Self::AuditLog => "audit_log.record",
            Self::IdentityTransform => "transform.apply",
        }
    }

    pub fn valid_config_keys(&self) -> &'static [&'static str] {
        match self {
            Self::BasicAuth => &["login", "password"],
            Self::XmlTokenSts => &["login", "password", "max_age_seconds", "schema_ref"],
            Self::SecpalSts => &["issuer_name"],
            Self::SecpalPdp => &["resource_owner"],
            Self::AuditLog => &["hash_alg"],
            Self::IdentityTransform => &[],
        }
    }

    /// Policy grammars this kind's policy store accepts.
    pub fn supported_policy_grammars(&self) -> &'static [&'static str] {
        match self {
            Self::SecpalPdp => &["secpal"],
            _ => &[],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InstanceState {
    Configured,
    Active,
    Failed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResultOutcome {
    Success,
    Denied,
    Error,
}

impl ResultOutcome {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Success => "success",
            Self::Denied => "denied",
            Self::Error => "error",
        }
    }
}

/// Outcome of one data-pane action.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CapabilityResult {
    pub action: String,
    pub outcome: ResultOutcome,
    pub emitted_metadata: BTreeMap<String, String>,
    pub detail: String,
}

impl CapabilityResult {
    fn success(action: &str, detail: impl Into<String>) -> Self {
        Self {
            action: action.into(),
            outcome: ResultOutcome::Success,
            emitted_metadata: BTreeMap::new(),
            detail: detail.into(),
        }
    }

    fn denied(action: &str, detail: impl Into<String>) -> Self {
        let detail = detail.into();
        debug_assert!(!detail.is_empty());
        Self {
            action: action.into(),
            outcome: ResultOutcome::Denied,
            emitted_metadata: BTreeMap::new(),
            detail,
        }
    }

    fn with_header(mut self, name: &str, value: impl Into<String>) -> Self {
        self.emitted_metadata
            .insert(format!("{META_HEADER_PREFIX}{name}"), value.into());
        self
    }

    fn with_body(mut self, body: impl Into<String>) -> Self {
        self.emitted_metadata.insert(META_BODY.into(), body.into());
        self
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CapabilityError {
    #[error("instance `{0}` is not active")]
    InstanceNotActive(String),
    #[error("invalid config key `{key}`: {detail}")]
    InvalidConfigKey { key: String, detail: String },
    #[error("policy grammar `{grammar}` unsupported by this capability")]
    PolicyGrammarUnsupported { grammar: String },
    #[error("missing credential: {0}")]
    MissingCredential(String),
    #[error("token schema violation: {0}")]
    SchemaViolation(String),
    #[error("unknown principal `{0}`")]
    UnknownPrincipal(String),
    #[error("token expired (issued {issued}, max age {max_age_seconds}s)")]
    TokenExpired { issued: String, max_age_seconds: i64 },
    #[error("bad timestamp `{0}`")]
    BadTimestamp(String),
    #[error("no prior configuration version to roll back to")]
    NoPriorVersion,
    #[error("unknown operation `{0}` for this capability")]
    UnknownOperation(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AuthorizeRequest {
    pub subject: String,
    pub action: String,
    pub resource: String,
    pub presented_assertions: Vec<Assertion>,
}

/// One deployed capability instance, private to a profile.
#[derive(Debug, Clone)]
pub struct CapabilityInstance {
    pub instance_id: String,
    pub descriptor_ref: String,
    pub kind: CapabilityKind,
    config: BTreeMap<String, String>,
    policy_store: Vec<ConcretePolicy>,
    pub state: InstanceState,
    transform: Option<TransformDescriptor>,
    /// Principal -> password table seeded from harness fixtures.
    credential_table: BTreeMap<String, String>,
    history: Vec<(BTreeMap<String, String>, Vec<ConcretePolicy>)>,
}

impl CapabilityInstance {
    pub fn new(
        instance_id: impl Into<String>,
        descriptor_ref: impl Into<String>,
        kind: CapabilityKind,
        credential_table: BTreeMap<String, String>,
    ) -> Self {
        Self {
            instance_id: instance_id.into(),
            descriptor_ref: descriptor_ref.into(),
            kind,
            config: BTreeMap::new(),
            policy_store: Vec::new(),
            state: InstanceState::Configured,
            transform: None,
            credential_table,
            history: Vec::new(),
        }
    }

    // -- control pane -------------------------------------------------------

    /// Validate and apply configuration plus policies; the instance becomes
    /// active. The previous version is retained for rollback.
    pub fn configure(
        &mut self,
        config: BTreeMap<String, String>,
        policies: Vec<ConcretePolicy>,
    ) -> Result<(), CapabilityError> {
        for key in config.keys() {
            if !self.kind.valid_config_keys().contains(&key.as_str()) {
                return Err(CapabilityError::InvalidConfigKey {
                    key: key.clone(),
                    detail: "key not recognized by this capability".into(),
                });
            }
        }
        if let Some(alg) = config.get("hash_alg") {
            if HashAlg::parse(alg).is_none() {
                return Err(CapabilityError::InvalidConfigKey {
                    key: "hash_alg".into(),
                    detail: format!("unsupported algorithm `{alg}`"),
                });
            }
        }
        for policy in &policies {
            if !self
                .kind
                .supported_policy_grammars()
                .contains(&policy.grammar.as_str())
            {
                return Err(CapabilityError::PolicyGrammarUnsupported {
                    grammar: policy.grammar.clone(),
                });
            }
        }
        self.history.push((self.config.clone(), self.policy_store.clone()));
        self.config = config;
        self.policy_store = policies;
        self.state = InstanceState::Active;
        Ok(())
    }

    /// Restore the previous configuration version.
    pub fn rollback(&mut self) -> Result<(), CapabilityError> {
        let (config, policies) = self.history.pop().ok_or(CapabilityError::NoPriorVersion)?;
        self.config = config;
        self.policy_store = policies;
        Ok(())
    }

    pub fn set_transform(&mut self, descriptor: TransformDescriptor) {
        self.transform = Some(descriptor);
    }

    pub fn mark_failed(&mut self) {
        self.state = InstanceState::Failed;
    }

    pub fn config(&self) -> &BTreeMap<String, String> {
        &self.config
    }

    pub fn policy_store(&self) -> &[ConcretePolicy] {
        &self.policy_store
    }

    fn require_active(&self) -> Result<(), CapabilityError> {
        if self.state != InstanceState::Active {
            return Err(CapabilityError::InstanceNotActive(self.instance_id.clone()));
        }
        Ok(())
    }

    // -- data pane ----------------------------------------------------------

    /// Emit an RFC 7617 basic authentication header for the credentials.
    pub fn basic_auth_apply(
        &self,
        login: &str,
        password: &str,
    ) -> Result<CapabilityResult, CapabilityError> {
        self.require_active()?;
        if login.is_empty() {
            return Err(CapabilityError::MissingCredential("login".into()));
        }
        if password.is_empty() {
            return Err(CapabilityError::MissingCredential("password".into()));
        }
        let encoded =
            base64::engine::general_purpose::STANDARD.encode(format!("{login}:{password}"));
        Ok(
            CapabilityResult::success("basic_auth.apply", format!("credential for `{login}`"))
                .with_header("Authorization", format!("Basic {encoded}")),
        )
    }

    /// Issue the bit-exact XML login token.
    pub fn sts_issue(
        &self,
        login: &str,
        password: &str,
        issued_at: &str,
    ) -> Result<CapabilityResult, CapabilityError> {
        self.require_active()?;
        if login.is_empty() {
            return Err(CapabilityError::MissingCredential("login".into()));
        }
        let token = XmlToken {
            login: login.to_string(),
            password: password.to_string(),
            issued: issued_at.to_string(),
        };
        Ok(
            CapabilityResult::success("xml_token_sts.issue", format!("token for `{login}`"))
                .with_body(token.to_xml()),
        )
    }

    /// Validate a presented token: schema, credential table and freshness.
    /// The age bound is inclusive: a token issued exactly `max_age_seconds`
    /// ago is still valid.
    pub fn sts_validate(
        &self,
        token_text: &str,
        now: DateTime<Utc>,
    ) -> Result<CapabilityResult, CapabilityError> {
        self.require_active()?;
        let token = XmlToken::parse(token_text)
            .map_err(|e| CapabilityError::SchemaViolation(e.0))?;
        match self.credential_table.get(&token.login) {
            Some(expected) if expected == &token.password => {}
            Some(_) => return Err(CapabilityError::UnknownPrincipal(format!(
                "{} (credential mismatch)",
                token.login
            ))),
            None => return Err(CapabilityError::UnknownPrincipal(token.login)),
        }
        let issued: DateTime<Utc> = token
            .issued
            .parse()
            .map_err(|_| CapabilityError::BadTimestamp(token.issued.clone()))?;
        let max_age_seconds: i64 = self
            .config
            .get("max_age_seconds")
            .and_then(|v| v.parse().ok())
            .unwrap_or(300);
        if issued < now - Duration::seconds(max_age_seconds) {
            return Err(CapabilityError::TokenExpired {
                issued: token.issued,
                max_age_seconds,
            });
        }
        Ok(CapabilityResult::success(
            "xml_token_sts.validate",
            format!("token for `{}` is valid", token.login),
        ))
    }

    /// Vouch for a requester known to this token service: emits an
    /// assertion usable by a downstream decision point.
    pub fn secpal_identify(
        &self,
        subject: &str,
        action: &str,
        resource: &str,
    ) -> Result<CapabilityResult, CapabilityError> {
        self.require_active()?;
        if !self.credential_table.contains_key(subject) {
            return Ok(CapabilityResult::denied(
                "secpal_sts.identify",
                format!("requester `{subject}` is not known to the token service"),
            ));
        }
        let issuer = self
            .config
            .get("issuer_name")
            .cloned()
            .unwrap_or_else(|| "STS".to_string());
        let assertion = Assertion {
            issuer,
            fact: Fact::Can {
                subject: subject.to_string(),
                action: action.to_string(),
                resource: resource.to_string(),
            },
        };
        Ok(CapabilityResult::success(
            "secpal_sts.identify",
            format!("identified `{subject}`"),
        )
        .with_header("X-SecPAL-Assertion", assertion.to_string()))
    }

    /// Decide an access request against the policy store plus presented
    /// assertions.
    pub fn pdp_authorize(
        &self,
        request: &AuthorizeRequest,
    ) -> Result<CapabilityResult, CapabilityError> {
        self.require_active()?;
        let owner = self
            .config
            .get("resource_owner")
            .cloned()
            .unwrap_or_else(|| "owner".to_string());
        let mut context: Vec<Assertion> = Vec::new();
        for policy in &self.policy_store {
            let parsed = parse_assertion_lines(&policy.body).map_err(|e| {
                CapabilityError::SchemaViolation(format!("policy store: {e}"))
            })?;
            context.extend(parsed);
        }
        context.extend(request.presented_assertions.iter().cloned());
        let query = Query {
            issuer: owner,
            fact: Fact::Can {
                subject: request.subject.clone(),
                action: request.action.clone(),
                resource: request.resource.clone(),
            },
        };
        let decision = derive(&context, &query);
        match decision.outcome {
            Outcome::Permit => {
                let proof_text: String = decision
                    .proof
                    .iter()
                    .map(|s| format!("{}:{}\n", s.rule, s.conclusion))
                    .collect();
                let proof_id = &Sha256::digest(proof_text.as_bytes())
                    .iter()
                    .map(|b| format!("{b:02x}"))
                    .collect::<String>()[..16];
                Ok(CapabilityResult::success(
                    "secpal_pdp.authorize",
                    format!("permit {} ({} proof steps)", query, decision.proof.len()),
                )
                .with_header("X-Proof-Id", proof_id))
            }
            Outcome::Deny => Ok(CapabilityResult::denied(
                "secpal_pdp.authorize",
                format!("deny {query}"),
            )),
        }
    }

    /// Message-level audit note. The chain entry itself is written by the
    /// gateway's per-action audit, so the step is a plain success marker.
    pub fn audit_note(&self) -> Result<CapabilityResult, CapabilityError> {
        self.require_active()?;
        Ok(CapabilityResult::success(
            "audit_log.record",
            "message recorded",
        ))
    }

    /// Apply the bound metadata transform to a flat document.
    pub fn transform_apply(
        &self,
        document: &BTreeMap<String, String>,
    ) -> Result<(CapabilityResult, BTreeMap<String, String>), CapabilityError> {
        self.require_active()?;
        let Some(descriptor) = &self.transform else {
            return Ok((
                CapabilityResult::success("transform.apply", "no transform bound"),
                document.clone(),
            ));
        };
        match crate::policy::apply_transform(descriptor, document) {
            Ok(out) => Ok((
                CapabilityResult::success(
                    "transform.apply",
                    format!("{} -> {}", descriptor.from_grammar, descriptor.to_grammar),
                ),
                out,
            )),
            Err(e) => Ok((
                CapabilityResult::denied("transform.apply", e.to_string()),
                document.clone(),
            )),
        }
    }
}

/// All live capability instances, keyed by instance id.
#[derive(Debug, Default)]
pub struct InstanceStore {
    instances: BTreeMap<String, CapabilityInstance>,
}

impl InstanceStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, instance: CapabilityInstance) {
        self.instances.insert(instance.instance_id.clone(), instance);
    }

    pub fn get(&self, instance_id: &str) -> Option<&CapabilityInstance> {
        self.instances.get(instance_id)
    }

    pub fn get_mut(&mut self, instance_id: &str) -> Option<&mut CapabilityInstance> {
        self.instances.get_mut(instance_id)
    }

    pub fn remove(&mut self, instance_id: &str) -> Option<CapabilityInstance> {
        self.instances.remove(instance_id)
    }

    pub fn ids(&self) -> Vec<String> {
        self.instances.keys().cloned().collect()
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn values(&self) -> impl Iterator<Item = &CapabilityInstance> {
        self.instances.values()
    }
}
