//! Virtual Music Store fixture: registry seed, content-provider profiles,
//! policy templates, enactment contexts and the message corpus.
//!
//! The store (VMS) buys catalog access from three content providers with
//! different security postures: CP1 wants HTTP basic authentication, CP2
//! wants token-based identification plus an authorization decision point,
//! CP3 wants a fresh XML login token and keeps an audit trail.

use std::collections::{BTreeMap, BTreeSet};

use govgw_core::gateway::Message;
use govgw_core::manager::{EnactContext, Middleware};
use govgw_core::policy::PolicyTemplate;
use govgw_core::registry::{Availability, CapabilityDescriptor, InvocationPattern};
use govgw_core::store::ProfileStore;

/// VMS login/password at CP1.
pub const CP1_LOGIN: &str = "vms";
pub const CP1_PASSWORD: &str = "pw1";
/// VMS principal name at CP2's token service.
pub const CP2_SUBJECT: &str = "VMS";
pub const CP2_PASSWORD: &str = "secret2";
/// VMS login/password at CP3's token service.
pub const CP3_LOGIN: &str = "vms";
pub const CP3_PASSWORD: &str = "pw3";
/// Token freshness bound CP3 enforces, in seconds.
pub const CP3_MAX_AGE_SECONDS: i64 = 300;

/// One corpus entry: a message plus the acceptance expectation.
#[derive(Debug, Clone)]
pub struct CorpusMessage {
    pub label: String,
    pub route: String,
    pub message: Message,
    pub expect_accept: bool,
}

pub fn registry_seed() -> Vec<CapabilityDescriptor> {
    fn descriptor(
        id: &str,
        category: &str,
        mechanism: &str,
        patterns: &[InvocationPattern],
    ) -> CapabilityDescriptor {
        CapabilityDescriptor {
            capability_id: id.into(),
            provider: "security-saas".into(),
            category: category.into(),
            mechanism: mechanism.into(),
            attributes: BTreeMap::new(),
            control_endpoint: format!("mgmt:{id}"),
            data_endpoint: format!("data:{id}"),
            supported_grammars: BTreeSet::new(),
            invocation_patterns: patterns.iter().copied().collect(),
            availability: Availability::Available,
        }
    }

    let rr = [InvocationPattern::RequestResponse];
    let oob = [InvocationPattern::OutOfBandTokenFetch];
    let ow = [InvocationPattern::OneWay];

    let mut sts = descriptor("xml-sts-1", "identity-management", "xml-token", &oob);
    sts.attributes
        .insert("schema_ref".into(), "urn:cp3:token:v1".into());

    let mut pdp_a = descriptor("pdp-a", "access-control", "secpal-pdp", &rr);
    pdp_a.supported_grammars.insert("secpal".into());
    // pdp-b is the identical twin used by the S4 replacement scenario.
    let mut pdp_b = descriptor("pdp-b", "access-control", "secpal-pdp", &rr);
    pdp_b.supported_grammars.insert("secpal".into());

    vec![
        descriptor("basic-auth-1", "identity-management", "http-basic", &rr),
        sts,
        descriptor("secpal-sts-1", "identity-management", "token-secpal", &oob),
        pdp_a,
        pdp_b,
        descriptor("audit-1", "audit", "audit-log", &ow),
    ]
}

pub fn cp1_profile() -> Vec<u8> {
    serde_json::json!({
        "profile_id": "cp1",
        "owner": "CP1",
        "target": {"endpoint": "mock:cp1", "interface": "catalog", "operations": ["read"]},
        "requirements": [
            {"category": "identity-management", "mechanism": "http-basic",
             "attributes": {}, "policy_template_ref": null, "grammar": null}
        ],
        "declared_transforms": []
    })
    .to_string()
    .into_bytes()
}

pub fn cp2_profile() -> Vec<u8> {
    serde_json::json!({
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
    .to_string()
    .into_bytes()
}

pub fn cp3_profile() -> Vec<u8> {
    serde_json::json!({
        "profile_id": "cp3",
        "owner": "CP3",
        "target": {"endpoint": "mock:cp3", "interface": "catalog", "operations": ["read"]},
        "requirements": [
            {"category": "identity-management", "mechanism": "xml-token",
             "attributes": {"schema_ref": "urn:cp3:token:v1"},
             "policy_template_ref": null, "grammar": null},
            {"category": "audit", "mechanism": "audit-log",
             "attributes": {"hash_alg": "sha-256"}, "policy_template_ref": null, "grammar": null}
        ],
        "declared_transforms": []
    })
    .to_string()
    .into_bytes()
}

/// The requirement S2 appends to CP1: secure logging.
pub fn audit_requirement() -> govgw_core::profile::Requirement {
    govgw_core::profile::Requirement {
        category: "audit".into(),
        mechanism: "audit-log".into(),
        attributes: [("hash_alg".to_string(), "sha-256".to_string())]
            .into_iter()
            .collect(),
        policy_template_ref: None,
        grammar: None,
    }
}

pub fn cp2_acl_template() -> PolicyTemplate {
    PolicyTemplate::new(
        "cp2-acl",
        "secpal",
        "CP2 says ${sts} can say ${subject} can ${action} ${resource}",
    )
    .expect("template body is well formed")
}

fn string_map(pairs: &[(&str, &str)]) -> BTreeMap<String, String> {
    pairs
        .iter()
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect()
}

pub fn cp1_context() -> EnactContext {
    EnactContext {
        route: "cp1".into(),
        forward_target: "mock:cp1".into(),
        template_bindings: BTreeMap::new(),
        configs: [(
            "http-basic".to_string(),
            string_map(&[("login", CP1_LOGIN), ("password", CP1_PASSWORD)]),
        )]
        .into_iter()
        .collect(),
        credential_table: BTreeMap::new(),
    }
}

pub fn cp2_context() -> EnactContext {
    EnactContext {
        route: "cp2".into(),
        forward_target: "mock:cp2".into(),
        template_bindings: string_map(&[
            ("sts", "STS"),
            ("subject", CP2_SUBJECT),
            ("action", "read"),
            ("resource", "catalog"),
        ]),
        configs: [
            ("token-secpal".to_string(), string_map(&[("issuer_name", "STS")])),
            ("secpal-pdp".to_string(), string_map(&[("resource_owner", "CP2")])),
        ]
        .into_iter()
        .collect(),
        credential_table: string_map(&[(CP2_SUBJECT, CP2_PASSWORD)]),
    }
}

pub fn cp3_context() -> EnactContext {
    EnactContext {
        route: "cp3".into(),
        forward_target: "mock:cp3".into(),
        template_bindings: BTreeMap::new(),
        configs: [(
            "xml-token".to_string(),
            string_map(&[
                ("login", CP3_LOGIN),
                ("password", CP3_PASSWORD),
                ("max_age_seconds", "300"),
            ]),
        )]
        .into_iter()
        .collect(),
        credential_table: string_map(&[(CP3_LOGIN, CP3_PASSWORD)]),
    }
}

/// Build the whole middleware deployment for the fixture.
pub fn build_middleware(store: ProfileStore) -> Middleware {
    let mut mw = Middleware::new(store);
    for descriptor in registry_seed() {
        mw.registry
            .register(descriptor)
            .expect("seed descriptors are valid");
    }
    mw.add_template(cp2_acl_template());
    mw
}

fn cp2_request(subject: &str, action: &str) -> Message {
    Message::new("")
        .with_header("X-Subject", subject)
        .with_header("X-Action", action)
        .with_header("X-Resource", "catalog")
}

/// 30 positive messages (10 per provider) followed by 6 negatives.
pub fn message_corpus() -> Vec<CorpusMessage> {
    let mut corpus = Vec::new();
    for i in 0..10 {
        corpus.push(CorpusMessage {
            label: format!("cp1-ok-{i}"),
            route: "cp1".into(),
            message: Message::new(format!("track-{i}")),
            expect_accept: true,
        });
    }
    for i in 0..10 {
        corpus.push(CorpusMessage {
            label: format!("cp2-ok-{i}"),
            route: "cp2".into(),
            message: cp2_request(CP2_SUBJECT, "read"),
            expect_accept: true,
        });
    }
    for i in 0..10 {
        corpus.push(CorpusMessage {
            label: format!("cp3-ok-{i}"),
            route: "cp3".into(),
            message: Message::new(format!("track-{i}")),
            expect_accept: true,
        });
    }
    // Negatives: bad credentials, underivable requests, stale token.
    corpus.push(CorpusMessage {
        label: "cp1-bad-password".into(),
        route: "cp1".into(),
        message: Message::new("x")
            .with_header("X-Login", CP1_LOGIN)
            .with_header("X-Password", "wrong"),
        expect_accept: false,
    });
    corpus.push(CorpusMessage {
        label: "cp1-unknown-login".into(),
        route: "cp1".into(),
        message: Message::new("x")
            .with_header("X-Login", "mallory")
            .with_header("X-Password", CP1_PASSWORD),
        expect_accept: false,
    });
    corpus.push(CorpusMessage {
        label: "cp2-unknown-subject".into(),
        route: "cp2".into(),
        message: cp2_request("Mallory", "read"),
        expect_accept: false,
    });
    corpus.push(CorpusMessage {
        label: "cp2-underivable-action".into(),
        route: "cp2".into(),
        message: cp2_request(CP2_SUBJECT, "write"),
        expect_accept: false,
    });
    corpus.push(CorpusMessage {
        label: "cp3-stale-token".into(),
        route: "cp3".into(),
        // Forces the issued timestamp far past the freshness bound.
        message: Message::new("x").with_header("X-Timestamp", "2010-01-01T00:00:00Z"),
        expect_accept: false,
    });
    corpus.push(CorpusMessage {
        label: "cp3-unknown-login".into(),
        route: "cp3".into(),
        message: Message::new("x")
            .with_header("X-Login", "mallory")
            .with_header("X-Password", "whatever"),
        expect_accept: false,
    });
    corpus
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_covers_every_fixture_requirement() {
        let mw = build_middleware(ProfileStore::new());
        for doc in [cp1_profile(), cp2_profile(), cp3_profile()] {
            let profile = govgw_core::profile::parse_profile(&doc).unwrap();
            for req in &profile.requirements {
                assert!(
                    !mw.registry.find_candidates(req).is_empty(),
                    "no candidate for {}/{}",
                    req.category,
                    req.mechanism
                );
            }
        }
    }

    #[test]
    fn corpus_has_thirty_positives_and_six_negatives() {
        let corpus = message_corpus();
        assert_eq!(corpus.iter().filter(|m| m.expect_accept).count(), 30);
        assert_eq!(corpus.iter().filter(|m| !m.expect_accept).count(), 6);
    }
}
