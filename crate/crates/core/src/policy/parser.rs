//! Line parser for assertions and queries.
//!
//! Grammar (ASCII, tokens separated by single spaces):
//!
//! ```text
//! assertion := principal "says" fact
//! fact      := principal "can" action resource
//!            | principal "can-act-as" principal
//!            | principal "can say" fact
//! query     := assertion "?"
//! principal, action, resource := [A-Za-z][A-Za-z0-9_-]*
//! ```
//!
//! Lines beginning `#` are comments. Syntax errors carry the byte offset of
//! the failure.

use thiserror::Error;

use super::ast::{Assertion, Fact, Query, MAX_DELEGATION_DEPTH};

#[derive(Debug, Error, PartialEq, Eq)]
#[error("syntax error at offset {offset}: {message}")]
pub struct SyntaxError {
    pub offset: usize,
    pub message: String,
}

fn err(offset: usize, message: impl Into<String>) -> SyntaxError {
    SyntaxError {
        offset,
        message: message.into(),
    }
}

const KEYWORDS: [&str; 4] = ["says", "can", "can-act-as", "say"];

fn is_identifier(token: &str) -> bool {
    let mut chars = token.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
}

struct Tokens<'a> {
    items: Vec<(&'a str, usize)>,
    pos: usize,
    end_offset: usize,
}

impl<'a> Tokens<'a> {
    /// Split on single spaces. Double spaces, leading or trailing spaces are
    /// rejected up front.
    fn lex(text: &'a str) -> Result<Self, SyntaxError> {
        let mut items = Vec::new();
        let mut offset = 0;
        if text.is_empty() {
            return Err(err(0, "empty input"));
        }
        for piece in text.split(' ') {
            if piece.is_empty() {
                return Err(err(offset, "tokens must be separated by single spaces"));
            }
            items.push((piece, offset));
            offset += piece.len() + 1;
        }
        Ok(Self {
            items,
            pos: 0,
            end_offset: text.len(),
        })
    }

    fn peek(&self) -> Option<(&'a str, usize)> {
        self.items.get(self.pos).copied()
    }

    fn next(&mut self) -> Option<(&'a str, usize)> {
        let item = self.items.get(self.pos).copied();
        if item.is_some() {
            self.pos += 1;
        }
        item
    }

    fn expect_identifier(&mut self, role: &str) -> Result<String, SyntaxError> {
        match self.next() {
            Some((tok, off)) => {
                if KEYWORDS.contains(&tok) {
                    return Err(err(off, format!("expected {role}, found keyword `{tok}`")));
                }
                if !is_identifier(tok) {
                    return Err(err(off, format!("expected {role}, found `{tok}`")));
                }
                Ok(tok.to_string())
            }
            None => Err(err(self.end_offset, format!("expected {role}"))),
        }
    }

    fn expect_keyword(&mut self, kw: &str) -> Result<(), SyntaxError> {
        match self.next() {
            Some((tok, _)) if tok == kw => Ok(()),
            Some((tok, off)) => Err(err(off, format!("expected `{kw}`, found `{tok}`"))),
            None => Err(err(self.end_offset, format!("expected `{kw}`"))),
        }
    }
}

fn parse_fact(tokens: &mut Tokens<'_>, depth: usize) -> Result<Fact, SyntaxError> {
    let subject = tokens.expect_identifier("principal")?;
    match tokens.next() {
        Some(("can-act-as", _)) => {
            let target = tokens.expect_identifier("principal")?;
            Ok(Fact::CanActAs { subject, target })
        }
        Some(("can", can_off)) => match tokens.peek() {
            Some(("say", _)) => {
                tokens.next();
                if depth + 1 > MAX_DELEGATION_DEPTH {
                    return Err(err(
                        can_off,
                        format!("delegation deeper than {MAX_DELEGATION_DEPTH}"),
                    ));
                }
                let inner = parse_fact(tokens, depth + 1)?;
                Ok(Fact::CanSay {
                    delegate: subject,
                    inner: Box::new(inner),
                })
            }
            _ => {
                let action = tokens.expect_identifier("action")?;
                let resource = tokens.expect_identifier("resource")?;
                Ok(Fact::Can {
                    subject,
                    action,
                    resource,
                })
            }
        },
        Some((tok, off)) => Err(err(off, format!("expected `can` or `can-act-as`, found `{tok}`"))),
        None => Err(err(tokens.end_offset, "expected `can` or `can-act-as`")),
    }
}

/// Parse one assertion line.
pub fn parse_assertion(text: &str) -> Result<Assertion, SyntaxError> {
    let mut tokens = Tokens::lex(text)?;
    let issuer = tokens.expect_identifier("principal")?;
    tokens.expect_keyword("says")?;
    let fact = parse_fact(&mut tokens, 0)?;
    if let Some((tok, off)) = tokens.peek() {
        return Err(err(off, format!("unexpected trailing token `{tok}`")));
    }
    Ok(Assertion { issuer, fact })
}

/// Parse a query: an assertion followed by `?`, with no top-level
/// delegation.
pub fn parse_query(text: &str) -> Result<Query, SyntaxError> {
    let Some(body) = text.strip_suffix('?') else {
        return Err(err(text.len(), "query must end with `?`"));
    };
    let assertion = parse_assertion(body)?;
    if matches!(assertion.fact, Fact::CanSay { .. }) {
        return Err(err(0, "query cannot have `can say` at top level"));
    }
    Ok(Query {
        issuer: assertion.issuer,
        fact: assertion.fact,
    })
}

/// Parse a multi-line policy body: one assertion per line, `#` comments and
/// blank lines skipped.
pub fn parse_assertion_lines(text: &str) -> Result<Vec<Assertion>, SyntaxError> {
    let mut out = Vec::new();
    for line in text.lines() {
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        out.push(parse_assertion(trimmed)?);
    }
    Ok(out)
}
