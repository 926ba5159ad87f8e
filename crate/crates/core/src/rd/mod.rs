//! CoRE resource directory: link-format registrations with lifetimes, plus semantic
//! lookup over the Turtle descriptions each endpoint uploads.

mod client;
mod directory;
mod link;
mod server;

use thiserror::Error;

use crate::coap::Code;
use crate::semantic::ParseError;

pub use client::{parse_base, RdClient, RemoteLink, RemoteSolution};
pub use directory::{
    Directory, LinkFilter, LinkHit, RegisterOutcome, RegistrationEntry, SemanticHit,
    DEFAULT_LIFETIME_S,
};
pub use link::{parse_links, serialize_links, LinkAttr, LinkEntry, LinkFormatError, LinkValue};
pub use server::{serve_directory, RdServer};

#[derive(Debug, Error)]
pub enum RdError {
    #[error(transparent)]
    BadLinkFormat(#[from] LinkFormatError),
    #[error("registration needs an ep parameter")]
    MissingEndpoint,
    #[error("lifetime must be a positive integer")]
    BadLifetime,
    #[error("payload is not UTF-8")]
    BadEncoding,
    #[error("unknown endpoint {0}")]
    UnknownEndpoint(String),
    #[error("no registration at {0}")]
    UnknownLocation(String),
    #[error("description rejected: {0}")]
    Syntax(#[from] ParseError),
    #[error("bad query: {0}")]
    BadQuery(ParseError),
    #[error("no resource at /{0}")]
    NotFound(String),
    #[error("method not allowed")]
    MethodNotAllowed,
    #[error("directory unreachable")]
    Unreachable,
    #[error("transport: {0}")]
    Transport(String),
    #[error("directory answered {code}: {reason}")]
    Rejected { code: Code, reason: String },
}

impl RdError {
    pub fn code(&self) -> Code {
        match self {
            RdError::UnknownEndpoint(_) | RdError::UnknownLocation(_) | RdError::NotFound(_) => {
                Code::NOT_FOUND
            }
            RdError::MethodNotAllowed => Code::METHOD_NOT_ALLOWED,
            RdError::Unreachable | RdError::Transport(_) => Code::INTERNAL_SERVER_ERROR,
            RdError::Rejected { code, .. } => *code,
            _ => Code::BAD_REQUEST,
        }
    }
}
