//! CP3-style XML login token: fixed element order, single namespace, no
//! whitespace between elements. The byte format is part of the external
//! contract and must not drift.

use thiserror::Error;

pub const TOKEN_NAMESPACE: &str = "urn:cp3:token:v1";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct XmlToken {
    pub login: String,
    pub password: String,
    /// ISO-8601 UTC timestamp, e.g. `2010-01-01T00:00:00Z`.
    pub issued: String,
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("token schema violation: {0}")]
pub struct SchemaViolation(pub String);

impl XmlToken {
    /// Bit-exact serialization of the token document.
    pub fn to_xml(&self) -> String {
        format!(
            "<token xmlns=\"{TOKEN_NAMESPACE}\"><login>{}</login><password>{}</password><issued>{}</issued></token>",
            self.login, self.password, self.issued
        )
    }

    /// Strict parse: exact element order and namespace, nothing else
    /// accepted.
    pub fn parse(text: &str) -> Result<Self, SchemaViolation> {
        let rest = text
            .strip_prefix(&format!("<token xmlns=\"{TOKEN_NAMESPACE}\">"))
            .ok_or_else(|| SchemaViolation("missing or wrong token namespace".into()))?;
        let rest = rest
            .strip_suffix("</token>")
            .ok_or_else(|| SchemaViolation("missing </token>".into()))?;
        let (login, rest) = take_element(rest, "login")?;
        let (password, rest) = take_element(rest, "password")?;
        let (issued, rest) = take_element(rest, "issued")?;
        if !rest.is_empty() {
            return Err(SchemaViolation(format!("trailing content `{rest}`")));
        }
        Ok(Self {
            login,
            password,
            issued,
        })
    }
}

fn take_element<'a>(text: &'a str, name: &str) -> Result<(String, &'a str), SchemaViolation> {
    let open = format!("<{name}>");
    let close = format!("</{name}>");
    let rest = text
        .strip_prefix(open.as_str())
        .ok_or_else(|| SchemaViolation(format!("expected <{name}>")))?;
    let end = rest
        .find(close.as_str())
        .ok_or_else(|| SchemaViolation(format!("missing </{name}>")))?;
    Ok((rest[..end].to_string(), &rest[end + close.len()..]))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn serializes_bit_exact() {
        let token = XmlToken {
            login: "vms".into(),
            password: "pw1".into(),
            issued: "2010-01-01T00:00:00Z".into(),
        };
        assert_eq!(
            token.to_xml(),
            "<token xmlns=\"urn:cp3:token:v1\"><login>vms</login><password>pw1</password><issued>2010-01-01T00:00:00Z</issued></token>"
        );
    }

    #[test]
    fn round_trips() {
        let token = XmlToken {
            login: "a".into(),
            password: "b".into(),
            issued: "2010-01-01T00:00:00Z".into(),
        };
        assert_eq!(XmlToken::parse(&token.to_xml()).unwrap(), token);
    }

    #[test]
    fn missing_issued_is_a_schema_violation() {
        let text = "<token xmlns=\"urn:cp3:token:v1\"><login>a</login><password>b</password></token>";
        assert!(XmlToken::parse(text).is_err());
    }

    #[test]
    fn wrong_namespace_is_rejected() {
        let text = "<token xmlns=\"urn:other\"><login>a</login><password>b</password><issued>t</issued></token>";
        assert!(XmlToken::parse(text).is_err());
    }

    #[test]
    fn element_order_is_fixed() {
        let text = "<token xmlns=\"urn:cp3:token:v1\"><password>b</password><login>a</login><issued>t</issued></token>";
        assert!(XmlToken::parse(text).is_err());
    }
}
