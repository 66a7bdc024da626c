//! Static bearer tokens.
//!
//! Token file: one `<token> <role>` pair per line, role `admin` or `viewer`.

use std::collections::HashMap;
use std::path::Path;

use axum::extract::{Request, State};
use axum::http::{header, Method};
use axum::middleware::Next;
use axum::response::{IntoResponse, Response};

use crate::error::ApiError;
use crate::AppState;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Admin,
    Viewer,
}

#[derive(Debug, Clone, Default)]
pub struct TokenTable {
    tokens: HashMap<String, Role>,
}

#[derive(Debug, thiserror::Error)]
pub enum TokenError {
    #[error("token file: {0}")]
    Io(#[from] std::io::Error),
    #[error("token file line {line}: {message}")]
    Syntax { line: usize, message: String },
}

impl TokenTable {
    pub fn parse(text: &str) -> Result<Self, TokenError> {
        let mut tokens = HashMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let syntax = |message: &str| TokenError::Syntax {
                line: n + 1,
                message: message.to_owned(),
            };
            let mut parts = line.split_whitespace();
            let (Some(token), Some(role), None) = (parts.next(), parts.next(), parts.next()) else {
                return Err(syntax("expected `<token> <role>`"));
            };
            let role = match role {
                "admin" => Role::Admin,
                "viewer" => Role::Viewer,
                _ => return Err(syntax("role must be admin or viewer")),
            };
            tokens.insert(token.to_owned(), role);
        }
        Ok(Self { tokens })
    }

    pub fn load(path: &Path) -> Result<Self, TokenError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn role(&self, token: &str) -> Option<Role> {
        self.tokens.get(token).copied()
    }
}

/// `Authorization: Bearer` header, or `?token=` for clients that cannot set
/// headers on an event stream.
fn presented_token(req: &Request) -> Option<String> {
    if let Some(value) = req.headers().get(header::AUTHORIZATION).and_then(|v| v.to_str().ok()) {
        return value.strip_prefix("Bearer ").map(|t| t.trim().to_owned());
    }
    req.uri()
        .query()?
        .split('&')
        .filter_map(|kv| kv.split_once('='))
        .find(|(k, _)| *k == "token")
        .map(|(_, v)| v.to_owned())
}

fn is_mutation(req: &Request) -> bool {
    let read_only = matches!(*req.method(), Method::GET | Method::HEAD | Method::OPTIONS);
    // a computation, not a state change
    !read_only && req.uri().path() != "/models/battery/predict"
}

pub async fn require_token(State(state): State<AppState>, req: Request, next: Next) -> Response {
    if req.uri().path() == "/healthz" {
        return next.run(req).await;
    }
    let role = presented_token(&req).and_then(|t| state.tokens.role(&t));
    match role {
        None => ApiError::unauthenticated().into_response(),
        Some(Role::Viewer) if is_mutation(&req) => ApiError::forbidden().into_response(),
        Some(_) => next.run(req).await,
    }
}
