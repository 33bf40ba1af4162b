//! In-process mock content providers and the forwarder that reaches them.
//!
//! Each provider applies exactly the check its security setting demands:
//! CP1 verifies the basic authentication header against its credential
//! table, CP2 trusts the governance gateway's decision gate (proof id
//! present), CP3 re-validates the XML token end to end.

use std::cell::RefCell;

use base64::Engine;
use chrono::{DateTime, Duration, Utc};
use govgw_core::capability::XmlToken;
use govgw_core::gateway::{ForwardResponse, Forwarder, Message};

use crate::fixtures::{CP1_LOGIN, CP1_PASSWORD, CP3_LOGIN, CP3_MAX_AGE_SECONDS, CP3_PASSWORD};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Verdict {
    Accept,
    Reject(String),
}

pub fn cp1_check(message: &Message) -> Verdict {
    let expected = format!(
        "Basic {}",
        base64::engine::general_purpose::STANDARD.encode(format!("{CP1_LOGIN}:{CP1_PASSWORD}"))
    );
    match message.headers.get("Authorization") {
        Some(value) if value == &expected => Verdict::Accept,
        Some(_) => Verdict::Reject("bad credentials".into()),
        None => Verdict::Reject("missing Authorization header".into()),
    }
}

pub fn cp2_check(message: &Message) -> Verdict {
    // CP2 trusts the governance provider: the proof id marks a message the
    // decision point permitted.
    if message.headers.contains_key("X-Proof-Id") {
        Verdict::Accept
    } else {
        Verdict::Reject("no authorization proof".into())
    }
}

pub fn cp3_check(message: &Message, now: DateTime<Utc>) -> Verdict {
    let token = match XmlToken::parse(&message.body) {
        Ok(t) => t,
        Err(e) => return Verdict::Reject(format!("token rejected: {e}")),
    };
    if token.login != CP3_LOGIN || token.password != CP3_PASSWORD {
        return Verdict::Reject("unknown credentials".into());
    }
    let issued: DateTime<Utc> = match token.issued.parse() {
        Ok(t) => t,
        Err(_) => return Verdict::Reject("unreadable issue timestamp".into()),
    };
    if issued < now - Duration::seconds(CP3_MAX_AGE_SECONDS) {
        return Verdict::Reject("stale token".into());
    }
    Verdict::Accept
}

#[derive(Debug, Clone)]
pub struct Delivery {
    pub target: String,
    pub message: Message,
    pub verdict: Verdict,
}

/// Forwarder for `mock:cp1` / `mock:cp2` / `mock:cp3` targets, recording
/// every delivery for post-hoc assertions.
#[derive(Default)]
pub struct MockProviders {
    deliveries: RefCell<Vec<Delivery>>,
}

impl MockProviders {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn check(target: &str, message: &Message) -> Option<Verdict> {
        match target {
            "mock:cp1" => Some(cp1_check(message)),
            "mock:cp2" => Some(cp2_check(message)),
            "mock:cp3" => Some(cp3_check(message, Utc::now())),
            _ => None,
        }
    }

    pub fn deliveries(&self) -> Vec<Delivery> {
        self.deliveries.borrow().clone()
    }

    pub fn deliveries_to(&self, target: &str) -> Vec<Delivery> {
        self.deliveries
            .borrow()
            .iter()
            .filter(|d| d.target == target)
            .cloned()
            .collect()
    }

    pub fn clear(&self) {
        self.deliveries.borrow_mut().clear();
    }
}

impl Forwarder for MockProviders {
    fn forward(&self, target: &str, message: &Message) -> Result<ForwardResponse, String> {
        let verdict =
            Self::check(target, message).ok_or_else(|| format!("unknown provider `{target}`"))?;
        self.deliveries.borrow_mut().push(Delivery {
            target: target.to_string(),
            message: message.clone(),
            verdict: verdict.clone(),
        });
        Ok(match verdict {
            Verdict::Accept => ForwardResponse {
                status: 200,
                body: "accepted".into(),
            },
            Verdict::Reject(reason) => ForwardResponse {
                status: 401,
                body: format!("rejected: {reason}"),
            },
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cp1_accepts_documented_header_shape() {
        // Base-64 of "a:b" cross-checked by hand: YTpi.
        let msg = Message::new("").with_header("Authorization", "Basic YTpi");
        // Fixture credentials differ, so this exact header is rejected...
        assert!(matches!(cp1_check(&msg), Verdict::Reject(_)));
        // ...and the fixture pair is accepted.
        let ok = Message::new("").with_header("Authorization", "Basic dm1zOnB3MQ==");
        assert_eq!(cp1_check(&ok), Verdict::Accept);
    }

    #[test]
    fn cp2_requires_proof_id() {
        assert!(matches!(cp2_check(&Message::new("")), Verdict::Reject(_)));
        let ok = Message::new("").with_header("X-Proof-Id", "abc123");
        assert_eq!(cp2_check(&ok), Verdict::Accept);
    }

    #[test]
    fn cp3_enforces_schema_credentials_and_freshness() {
        let now: DateTime<Utc> = "2026-01-01T00:10:00Z".parse().unwrap();
        let fresh = XmlToken {
            login: CP3_LOGIN.into(),
            password: CP3_PASSWORD.into(),
            issued: "2026-01-01T00:06:00Z".into(),
        };
        assert_eq!(cp3_check(&Message::new(fresh.to_xml()), now), Verdict::Accept);

        let stale = XmlToken {
            issued: "2026-01-01T00:04:59Z".into(),
            ..fresh.clone()
        };
        assert!(matches!(
            cp3_check(&Message::new(stale.to_xml()), now),
            Verdict::Reject(_)
        ));

        let stranger = XmlToken {
            login: "mallory".into(),
            ..fresh
        };
        assert!(matches!(
            cp3_check(&Message::new(stranger.to_xml()), now),
            Verdict::Reject(_)
        ));
        assert!(matches!(
            cp3_check(&Message::new("<not-a-token/>"), now),
            Verdict::Reject(_)
        ));
    }
}
