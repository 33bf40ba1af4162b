//! Message gateway: enforces an enacted pipeline on every message crossing a
//! route, audits each enforcement action, and forwards what survives.
//!
//! The gateway also implements the availability seam used during adaptation:
//! a route can be put into buffering mode, where in-flight messages queue up
//! (FIFO, bounded) until the replacement pipeline is swapped in and the queue
//! is replayed.

use std::collections::{BTreeMap, VecDeque};

use chrono::Utc;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::capability::{
    verify_chain, AuditChain, AuditRecord, AuthorizeRequest, CapabilityResult, ChainError,
    HashAlg, InstanceStore, ResultOutcome, META_BODY, META_HEADER_PREFIX,
};
use crate::policy::parse_assertion;

/// Buffered messages beyond this bound are refused outright.
pub const BUFFER_CAPACITY: usize = 1024;

/// Separator for multiple assertions carried in one header value.
pub const ASSERTION_SEPARATOR: char = '|';

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub headers: BTreeMap<String, String>,
    pub body: String,
}

impl Message {
    pub fn new(body: impl Into<String>) -> Self {
        Self {
            headers: BTreeMap::new(),
            body: body.into(),
        }
    }

    pub fn with_header(mut self, name: &str, value: impl Into<String>) -> Self {
        self.headers.insert(name.to_string(), value.into());
        self
    }
}

/// What a pipeline step does when its capability denies the message.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DenyBehavior {
    /// Stop processing and reject the message.
    Reject,
    /// Record the denial and let the message continue.
    Annotate,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PipelineStep {
    pub instance_id: String,
    pub operation: String,
    #[serde(default)]
    pub bindings: BTreeMap<String, String>,
    pub on_deny: DenyBehavior,
}

/// The enforced shape of one profile's traffic.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnactedPipeline {
    pub pipeline_id: String,
    pub profile_ref: String,
    pub version: u64,
    pub route: String,
    pub steps: Vec<PipelineStep>,
    pub forward_target: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ForwardResponse {
    pub status: u16,
    pub body: String,
}

/// Delivery of a processed message to its protected target.
pub trait Forwarder {
    fn forward(&self, target: &str, message: &Message) -> Result<ForwardResponse, String>;
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GatewayResponse {
    pub status: u16,
    pub message_id: u64,
    pub body: String,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum GatewayError {
    #[error("route `{route}` is already exposed for profile `{owner}`")]
    RouteConflict { route: String, owner: String },
    #[error("no pipeline exposed on route `{0}`")]
    UnknownRoute(String),
    #[error("route `{0}` is not buffering")]
    NotBuffering(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum RouteMode {
    Serving,
    Buffering,
}

#[derive(Debug)]
struct RouteEntry {
    pipeline: EnactedPipeline,
    mode: RouteMode,
    buffer: VecDeque<(u64, Message)>,
}

/// Per-message replay outcome, in replay order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReplayReport {
    pub buffered: usize,
    pub replayed: Vec<(u64, u16)>,
    pub rejected: usize,
}

#[derive(Debug, Default)]
pub struct Gateway {
    routes: BTreeMap<String, RouteEntry>,
    chains: BTreeMap<String, AuditChain>,
    next_message_id: u64,
}

impl Gateway {
    pub fn new() -> Self {
        Self::default()
    }

    /// Expose a pipeline on its route. Re-exposing for the same profile is an
    /// atomic swap: the old pipeline serves every message up to the swap, the
    /// new one everything after, and the profile's audit chain continues
    /// uninterrupted.
    pub fn expose(&mut self, pipeline: EnactedPipeline) -> Result<(), GatewayError> {
        if let Some(existing) = self.routes.get_mut(&pipeline.route) {
            if existing.pipeline.profile_ref != pipeline.profile_ref {
                return Err(GatewayError::RouteConflict {
                    route: pipeline.route.clone(),
                    owner: existing.pipeline.profile_ref.clone(),
                });
            }
            existing.pipeline = pipeline.clone();
        } else {
            self.routes.insert(
                pipeline.route.clone(),
                RouteEntry {
                    pipeline: pipeline.clone(),
                    mode: RouteMode::Serving,
                    buffer: VecDeque::new(),
                },
            );
        }
        self.chains
            .entry(pipeline.profile_ref)
            .or_insert_with(|| AuditChain::new(HashAlg::Sha256));
        Ok(())
    }

    pub fn retire(&mut self, route: &str) -> Result<EnactedPipeline, GatewayError> {
        self.routes
            .remove(route)
            .map(|e| e.pipeline)
            .ok_or_else(|| GatewayError::UnknownRoute(route.to_string()))
    }

    pub fn pipeline(&self, route: &str) -> Option<&EnactedPipeline> {
        self.routes.get(route).map(|e| &e.pipeline)
    }

    /// Switch the audit algorithm for a profile's future records. Existing
    /// records keep their digests; verification handles the mixed chain.
    pub fn set_audit_algorithm(&mut self, profile_ref: &str, alg: HashAlg) {
        self.chains
            .entry(profile_ref.to_string())
            .or_insert_with(|| AuditChain::new(alg))
            .set_algorithm(alg);
    }

    pub fn query_audit(&self, profile_ref: &str) -> &[AuditRecord] {
        self.chains
            .get(profile_ref)
            .map(|c| c.records())
            .unwrap_or(&[])
    }

    pub fn verify_audit(&self, profile_ref: &str) -> Result<(), ChainError> {
        verify_chain(self.query_audit(profile_ref))
    }

    /// Put a route into buffering mode ahead of a pipeline swap.
    pub fn enter_buffering(&mut self, route: &str) -> Result<(), GatewayError> {
        let entry = self
            .routes
            .get_mut(route)
            .ok_or_else(|| GatewayError::UnknownRoute(route.to_string()))?;
        entry.mode = RouteMode::Buffering;
        Ok(())
    }

    pub fn buffered_count(&self, route: &str) -> usize {
        self.routes.get(route).map(|e| e.buffer.len()).unwrap_or(0)
    }

    /// Resume serving: drain the buffer through the current pipeline in FIFO
    /// order, then accept live traffic again.
    pub fn replay(
        &mut self,
        route: &str,
        instances: &InstanceStore,
        forwarder: &dyn Forwarder,
    ) -> Result<ReplayReport, GatewayError> {
        let entry = self
            .routes
            .get_mut(route)
            .ok_or_else(|| GatewayError::UnknownRoute(route.to_string()))?;
        if entry.mode != RouteMode::Buffering {
            return Err(GatewayError::NotBuffering(route.to_string()));
        }
        entry.mode = RouteMode::Serving;
        let queued: Vec<(u64, Message)> = entry.buffer.drain(..).collect();
        let mut report = ReplayReport {
            buffered: queued.len(),
            replayed: Vec::new(),
            rejected: 0,
        };
        for (message_id, message) in queued {
            let response = self.run_pipeline(route, message_id, message, instances, forwarder);
            if response.status != 200 {
                report.rejected += 1;
            }
            report.replayed.push((message_id, response.status));
        }
        Ok(report)
    }

    /// Process one inbound message on a route.
    pub fn process(
        &mut self,
        route: &str,
        message: Message,
        instances: &InstanceStore,
        forwarder: &dyn Forwarder,
    ) -> GatewayResponse {
        let message_id = self.next_message_id;
        self.next_message_id += 1;
        let Some(entry) = self.routes.get_mut(route) else {
            return GatewayResponse {
                status: 404,
                message_id,
                body: format!("no pipeline on route `{route}`"),
            };
        };
        if entry.mode == RouteMode::Buffering {
            if entry.buffer.len() >= BUFFER_CAPACITY {
                return GatewayResponse {
                    status: 503,
                    message_id,
                    body: "buffer full; message refused".into(),
                };
            }
            entry.buffer.push_back((message_id, message));
            return GatewayResponse {
                status: 202,
                message_id,
                body: "buffered pending pipeline swap".into(),
            };
        }
        self.run_pipeline(route, message_id, message, instances, forwarder)
    }

    fn run_pipeline(
        &mut self,
        route: &str,
        message_id: u64,
        mut message: Message,
        instances: &InstanceStore,
        forwarder: &dyn Forwarder,
    ) -> GatewayResponse {
        let pipeline = self.routes.get(route).expect("caller checked route").pipeline.clone();
        let prefix = format!("msg={message_id} v={}", pipeline.version);
        for step in &pipeline.steps {
            let acted = execute_step(step, &message, instances);
            match acted {
                Ok(result) => {
                    self.audit(
                        &pipeline,
                        &step.instance_id,
                        &result.action,
                        result.outcome.as_str(),
                        &format!("{prefix} {}", result.detail),
                    );
                    match result.outcome {
                        ResultOutcome::Success => {
                            apply_metadata(&mut message, &result.emitted_metadata);
                        }
                        ResultOutcome::Denied if step.on_deny == DenyBehavior::Annotate => {
                            // Denial already audited above; message continues.
                        }
                        ResultOutcome::Denied => {
                            self.audit(
                                &pipeline,
                                "gateway",
                                "forward",
                                "denied",
                                &format!("{prefix} rejected at {}", result.action),
                            );
                            return GatewayResponse {
                                status: 403,
                                message_id,
                                body: format!("denied: {}", result.detail),
                            };
                        }
                        ResultOutcome::Error => {
                            self.audit(
                                &pipeline,
                                "gateway",
                                "forward",
                                "error",
                                &format!("{prefix} failed at {}", result.action),
                            );
                            return GatewayResponse {
                                status: 502,
                                message_id,
                                body: format!("enforcement error: {}", result.detail),
                            };
                        }
                    }
                }
                Err(detail) => {
                    self.audit(
                        &pipeline,
                        &step.instance_id,
                        &step.operation,
                        "error",
                        &format!("{prefix} {detail}"),
                    );
                    self.audit(
                        &pipeline,
                        "gateway",
                        "forward",
                        "error",
                        &format!("{prefix} failed at {}", step.operation),
                    );
                    return GatewayResponse {
                        status: 502,
                        message_id,
                        body: format!("enforcement error: {detail}"),
                    };
                }
            }
        }
        match forwarder.forward(&pipeline.forward_target, &message) {
            Ok(response) => {
                self.audit(
                    &pipeline,
                    "gateway",
                    "forward",
                    "success",
                    &format!("{prefix} forwarded to {}", pipeline.forward_target),
                );
                GatewayResponse {
                    status: response.status,
                    message_id,
                    body: response.body,
                }
            }
            Err(detail) => {
                self.audit(
                    &pipeline,
                    "gateway",
                    "forward",
                    "error",
                    &format!("{prefix} forward to {} failed: {detail}", pipeline.forward_target),
                );
                GatewayResponse {
                    status: 502,
                    message_id,
                    body: format!("forward failed: {detail}"),
                }
            }
        }
    }

    fn audit(
        &mut self,
        pipeline: &EnactedPipeline,
        instance_id: &str,
        action: &str,
        outcome: &str,
        detail: &str,
    ) {
        let chain = self
            .chains
            .entry(pipeline.profile_ref.clone())
            .or_insert_with(|| AuditChain::new(HashAlg::Sha256));
        chain.append(
            &pipeline.profile_ref,
            &Utc::now().to_rfc3339(),
            instance_id,
            action,
            outcome,
            detail,
        );
    }
}

fn apply_metadata(message: &mut Message, metadata: &BTreeMap<String, String>) {
    for (key, value) in metadata {
        if let Some(header) = key.strip_prefix(META_HEADER_PREFIX) {
            message.headers.insert(header.to_string(), value.clone());
        } else if key == META_BODY {
            message.body = value.clone();
        }
    }
}

/// Credential pair for an identity step: the requester may present its own
/// credentials (`X-Login`/`X-Password`); otherwise the instance's configured
/// pair applies.
fn credentials_for(
    instance: &crate::capability::CapabilityInstance,
    message: &Message,
) -> (String, String) {
    let login = message
        .headers
        .get("X-Login")
        .or_else(|| instance.config().get("login"))
        .cloned()
        .unwrap_or_default();
    let password = message
        .headers
        .get("X-Password")
        .or_else(|| instance.config().get("password"))
        .cloned()
        .unwrap_or_default();
    (login, password)
}

fn header<'a>(message: &'a Message, name: &str) -> Result<&'a str, String> {
    message
        .headers
        .get(name)
        .map(String::as_str)
        .ok_or_else(|| format!("missing header {name}"))
}

/// Dispatch one pipeline step to its instance's data pane. `Err` is an
/// enforcement failure (missing instance, inactive instance, malformed
/// input); a denial is an `Ok` result with outcome denied.
fn execute_step(
    step: &PipelineStep,
    message: &Message,
    instances: &InstanceStore,
) -> Result<CapabilityResult, String> {
    let instance = instances
        .get(&step.instance_id)
        .ok_or_else(|| format!("no such instance `{}`", step.instance_id))?;
    let result = match step.operation.as_str() {
        "basic_auth.apply" => {
            let (login, password) = credentials_for(instance, message);
            instance.basic_auth_apply(&login, &password)
        }
        "xml_token_sts.issue" => {
            let (login, password) = credentials_for(instance, message);
            // Message-supplied timestamp wins so token age is testable.
            let issued = message
                .headers
                .get("X-Timestamp")
                .cloned()
                .unwrap_or_else(|| Utc::now().format("%Y-%m-%dT%H:%M:%SZ").to_string());
            instance.sts_issue(&login, &password, &issued)
        }
        "xml_token_sts.validate" => instance.sts_validate(&message.body, Utc::now()),
        "secpal_sts.identify" => {
            let subject = header(message, "X-Subject")?;
            let action = header(message, "X-Action")?;
            let resource = header(message, "X-Resource")?;
            instance.secpal_identify(subject, action, resource)
        }
        "secpal_pdp.authorize" => {
            let subject = header(message, "X-Subject")?;
            let action = header(message, "X-Action")?;
            let resource = header(message, "X-Resource")?;
            let mut presented = Vec::new();
            if let Some(raw) = message.headers.get("X-SecPAL-Assertion") {
                for part in raw.split(ASSERTION_SEPARATOR) {
                    let part = part.trim();
                    if part.is_empty() {
                        continue;
                    }
                    presented.push(
                        parse_assertion(part)
                            .map_err(|e| format!("bad presented assertion: {e}"))?,
                    );
                }
            }
            instance.pdp_authorize(&AuthorizeRequest {
                subject: subject.to_string(),
                action: action.to_string(),
                resource: resource.to_string(),
                presented_assertions: presented,
            })
        }
        "audit_log.record" => instance.audit_note(),
        "transform.apply" => {
            return instance
                .transform_apply(&message.headers)
                .map(|(result, _headers)| result)
                .map_err(|e| e.to_string());
        }
        other => return Err(format!("unknown operation `{other}`")),
    };
    result.map_err(|e| e.to_string())
}
