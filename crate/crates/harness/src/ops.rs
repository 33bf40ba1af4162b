//! Shared management-verb dispatch used by both the CLI and the HTTP
//! management API, so the two surfaces cannot drift apart.

use govgw_core::gateway::Forwarder;
use govgw_core::manager::{AdaptationRequest, EnactContext, ManagerError, Middleware};
use serde_json::{json, Value};

use crate::scenario::{run_scenario, ScenarioOptions};

/// Whether a failed verb is the caller's fault (bad profile, bad change)
/// or the deployment's (unavailable capability, store trouble).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpClass {
    Validation,
    Operational,
}

#[derive(Debug)]
pub struct OpError {
    pub code: String,
    pub detail: String,
    pub class: OpClass,
}

impl OpError {
    fn validation(code: &str, detail: impl std::fmt::Display) -> Self {
        OpError {
            code: code.into(),
            detail: detail.to_string(),
            class: OpClass::Validation,
        }
    }

    fn operational(code: &str, detail: impl std::fmt::Display) -> Self {
        OpError {
            code: code.into(),
            detail: detail.to_string(),
            class: OpClass::Operational,
        }
    }

    pub fn to_json(&self) -> Value {
        json!({"error": self.code, "detail": self.detail})
    }
}

impl From<ManagerError> for OpError {
    fn from(e: ManagerError) -> Self {
        let code = match &e {
            ManagerError::TaxonomyViolation(_) => "taxonomy-violation",
            ManagerError::NoCandidate { .. } => "no-candidate",
            ManagerError::IncompatibleInvocationPattern { .. } => "incompatible-pattern",
            ManagerError::MissingComponents(_) => "missing-components",
            ManagerError::GrammarMismatch(_) => "grammar-mismatch",
            ManagerError::ChangeRejected(_) => "change-rejected",
            ManagerError::WrongState { .. } => "wrong-state",
            ManagerError::UnknownTemplate(_) => "unknown-template",
            ManagerError::Lifecycle(_) => "lifecycle",
            ManagerError::CoordinationInvalid(_) => "coordination-invalid",
            ManagerError::CapabilityUnavailable(_) => "capability-unavailable",
            ManagerError::PolicyPushFailure(_) => "policy-push-failure",
            ManagerError::NoReplacement(_) => "no-replacement",
            ManagerError::NotRecovering(_) => "not-recovering",
            ManagerError::Store(_) => "store",
            ManagerError::Gateway(_) => "gateway",
        };
        let class = match &e {
            ManagerError::CoordinationInvalid(_)
            | ManagerError::CapabilityUnavailable(_)
            | ManagerError::PolicyPushFailure(_)
            | ManagerError::NoReplacement(_)
            | ManagerError::NotRecovering(_)
            | ManagerError::Store(_)
            | ManagerError::Gateway(_) => OpClass::Operational,
            _ => OpClass::Validation,
        };
        OpError {
            code: code.into(),
            detail: e.to_string(),
            class,
        }
    }
}

fn required_str<'a>(args: &'a Value, key: &str) -> Result<&'a str, OpError> {
    args.get(key)
        .and_then(Value::as_str)
        .ok_or_else(|| OpError::validation("bad-arguments", format!("missing `{key}`")))
}

fn state_of(mw: &Middleware, profile_id: &str) -> Result<Value, OpError> {
    let profile = mw.store.get(profile_id).map_err(ManagerError::from)?;
    Ok(serde_json::to_value(&profile.state).expect("state serializes"))
}

fn profile_status(mw: &Middleware, profile_id: &str) -> Result<Value, OpError> {
    let state = state_of(mw, profile_id)?;
    let snapshots: Vec<String> = mw
        .store
        .snapshot_ids()
        .into_iter()
        .filter(|id| id.starts_with(&format!("{profile_id}.")))
        .collect();
    let steps = mw
        .process_for(profile_id)
        .map(|p| p.step_numbers())
        .unwrap_or_default();
    Ok(json!({
        "profile_id": profile_id,
        "state": state,
        "snapshots": snapshots,
        "live_instances": mw.live_instance_ids(profile_id),
        "recorded_steps": steps,
        "route": mw.context_for(profile_id).map(|c| c.route.clone()),
    }))
}

/// Execute one management verb against the deployment.  `args` is the
/// verb's JSON argument object; the result is the JSON the caller prints
/// or returns over HTTP.
pub fn apply(
    mw: &mut Middleware,
    forwarder: &dyn Forwarder,
    verb: &str,
    args: &Value,
) -> Result<Value, OpError> {
    match verb {
        "deposit" => {
            let document = args
                .get("document")
                .ok_or_else(|| OpError::validation("bad-arguments", "missing `document`"))?;
            let bytes = serde_json::to_vec(document)
                .map_err(|e| OpError::validation("bad-arguments", e))?;
            let profile = mw.deposit(&bytes)?;
            Ok(json!({"profile_id": profile.profile_id, "state": "Deposited"}))
        }
        "validate" => {
            let id = required_str(args, "profile")?;
            mw.run_consistency_stages(id)?;
            Ok(json!({"profile_id": id, "state": state_of(mw, id)?}))
        }
        "instantiate" => {
            let id = required_str(args, "profile")?;
            mw.build_instantiable(id)?;
            Ok(json!({"profile_id": id, "state": state_of(mw, id)?}))
        }
        "enact" => {
            let id = required_str(args, "profile")?;
            let context: EnactContext = serde_json::from_value(
                args.get("context").cloned().unwrap_or(Value::Null),
            )
            .map_err(|e| OpError::validation("bad-arguments", format!("context: {e}")))?;
            let pipeline = mw.enact(id, context)?;
            Ok(json!({
                "profile_id": id,
                "state": state_of(mw, id)?,
                "pipeline_id": pipeline.pipeline_id,
                "version": pipeline.version,
                "route": pipeline.route,
            }))
        }
        "adapt" => {
            // Accept either a wrapped {"request": {...}} or the request
            // object itself (it is self-describing via its `kind` tag).
            let raw = args.get("request").unwrap_or(args);
            let request: AdaptationRequest = serde_json::from_value(raw.clone())
                .map_err(|e| OpError::validation("bad-arguments", format!("request: {e}")))?;
            let id = request.profile_id().to_string();
            let pipeline = mw.adapt(request)?;
            Ok(json!({
                "profile_id": id,
                "state": state_of(mw, &id)?,
                "pipeline_id": pipeline.pipeline_id,
                "version": pipeline.version,
            }))
        }
        "snapshot" => {
            let id = required_str(args, "profile")?;
            let snapshot = mw
                .store
                .take_snapshot(id)
                .map_err(ManagerError::from)?;
            Ok(json!({
                "profile_id": id,
                "snapshot_id": snapshot.snapshot_id,
                "state": serde_json::to_value(&snapshot.state).expect("state serializes"),
            }))
        }
        "restore" => {
            let snapshot_id = required_str(args, "snapshot")?;
            let profile = mw
                .store
                .restore_snapshot(snapshot_id)
                .map_err(ManagerError::from)?;
            Ok(json!({
                "profile_id": profile.profile_id,
                "state": serde_json::to_value(&profile.state).expect("state serializes"),
            }))
        }
        "status" => match args.get("profile").and_then(Value::as_str) {
            Some(id) => profile_status(mw, id),
            None => {
                let ids: Vec<String> =
                    mw.store.profiles().map(|p| p.profile_id.clone()).collect();
                let mut profiles = Vec::new();
                for id in ids {
                    profiles.push(profile_status(mw, &id)?);
                }
                Ok(json!({"profiles": profiles}))
            }
        },
        "audit" => {
            let id = required_str(args, "profile")?;
            // Surface the records even when verification fails: the caller
            // needs them to locate the bad sequence number.
            let verified = mw.gateway.verify_audit(id).map_err(|e| e.to_string());
            let records = mw.gateway.query_audit(id);
            Ok(json!({
                "profile_id": id,
                "records": records,
                "verified": verified.is_ok(),
                "verify_error": verified.err(),
            }))
        }
        "run-scenario" => {
            let _ = forwarder; // the scenario brings its own mock providers
            let report = run_scenario(&ScenarioOptions::default());
            let passed = report.passed();
            let value = serde_json::to_value(&report)
                .map_err(|e| OpError::operational("serialize", e))?;
            if passed {
                Ok(json!({"passed": true, "report": value}))
            } else {
                Err(OpError::operational(
                    "scenario-assertion-failed",
                    serde_json::to_string(&value).unwrap_or_default(),
                ))
            }
        }
        other => Err(OpError::validation(
            "unknown-verb",
            format!("unknown command `{other}`"),
        )),
    }
}
