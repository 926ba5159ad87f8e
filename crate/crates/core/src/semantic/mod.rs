//! RDF triples, a Turtle subset parser/serializer, and a SPARQL subset evaluator
//! used for service descriptions and QoS-aware discovery.

mod eval;
mod graph;
mod lexer;
mod query;
mod term;
mod turtle;

use thiserror::Error;

pub use eval::{evaluate, evaluate_dataset, Binding};
pub use graph::{merge_named, Dataset, Graph};
pub use query::{parse_query, parse_query_with, Comparator, Filter, Query, TriplePattern};
pub use term::{format_number, ns, Literal, PrefixMap, Term, TermError, Triple};
pub use turtle::{parse_turtle, parse_turtle_with, serialize_turtle};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("line {line}, column {col}: {message}")]
pub struct SyntaxError {
    pub line: usize,
    pub col: usize,
    pub message: String,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ParseError {
    #[error("syntax error at {0}")]
    Syntax(#[from] SyntaxError),
    #[error("unknown prefix '{prefix}:' at line {line}, column {col}")]
    UnknownPrefix {
        prefix: String,
        line: usize,
        col: usize,
    },
    #[error("filter variable ?{0} does not occur in any pattern")]
    UnboundVariableInFilter(String),
    #[error("selected variable ?{0} does not occur in any pattern")]
    UnboundSelectVariable(String),
}
