use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

pub mod ns {
    pub const RDF: &str = "http://www.w3.org/1999/02/22-rdf-syntax-ns#";
    pub const RDFS: &str = "http://www.w3.org/2000/01/rdf-schema#";
    pub const XSD: &str = "http://www.w3.org/2001/XMLSchema#";
    pub const OWL: &str = "http://www.w3.org/2002/07/owl#";
    pub const DBPEDIA: &str = "http://dbpedia.org/resource/";
    /// Liqueur plant system vocabulary.
    pub const LPS: &str = "http://ssegvml.ece.upatras.gr/LiqueurPlantSystem#";

    pub const RDF_TYPE: &str = "http://www.w3.org/1999/02/22-rdf-syntax-ns#type";
    pub const RDF_LANG_STRING: &str = "http://www.w3.org/1999/02/22-rdf-syntax-ns#langString";
    pub const XSD_STRING: &str = "http://www.w3.org/2001/XMLSchema#string";
    pub const XSD_INTEGER: &str = "http://www.w3.org/2001/XMLSchema#integer";
    pub const XSD_DECIMAL: &str = "http://www.w3.org/2001/XMLSchema#decimal";
    pub const XSD_DOUBLE: &str = "http://www.w3.org/2001/XMLSchema#double";
    pub const XSD_BOOLEAN: &str = "http://www.w3.org/2001/XMLSchema#boolean";
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TermError {
    #[error("{position} cannot hold {term}")]
    BadPosition {
        position: &'static str,
        term: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Literal {
    lexical: String,
    datatype: String,
    language: Option<String>,
}

impl Literal {
    /// Plain literal, typed as xsd:string.
    pub fn plain(lexical: impl Into<String>) -> Self {
        Literal {
            lexical: lexical.into(),
            datatype: ns::XSD_STRING.to_string(),
            language: None,
        }
    }

    pub fn typed(lexical: impl Into<String>, datatype: impl Into<String>) -> Self {
        Literal {
            lexical: lexical.into(),
            datatype: datatype.into(),
            language: None,
        }
    }

    /// Language tags compare case-insensitively, so they are stored lowercased.
    pub fn lang(lexical: impl Into<String>, tag: &str) -> Self {
        Literal {
            lexical: lexical.into(),
            datatype: ns::RDF_LANG_STRING.to_string(),
            language: Some(tag.to_ascii_lowercase()),
        }
    }

    pub fn double(v: f64) -> Self {
        Literal::typed(format_number(v), ns::XSD_DOUBLE)
    }

    pub fn lexical(&self) -> &str {
        &self.lexical
    }

    pub fn datatype(&self) -> &str {
        &self.datatype
    }

    pub fn language(&self) -> Option<&str> {
        self.language.as_deref()
    }

    pub fn is_numeric(&self) -> bool {
        matches!(
            self.datatype.as_str(),
            ns::XSD_INTEGER | ns::XSD_DOUBLE | ns::XSD_DECIMAL
        )
    }

    /// Value in double precision when the datatype is numeric and the lexical form parses.
    pub fn numeric_value(&self) -> Option<f64> {
        if !self.is_numeric() {
            return None;
        }
        self.lexical.trim().parse::<f64>().ok()
    }
}

/// Decimal text for a number: integral values keep one fractional digit ("20.0").
pub fn format_number(v: f64) -> String {
    if v.is_finite() && v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{v:.1}")
    } else {
        format!("{v}")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Term {
    Iri(String),
    Literal(Literal),
    Blank(String),
    /// Only valid inside query patterns.
    Variable(String),
}

impl Term {
    pub fn iri(s: impl Into<String>) -> Term {
        Term::Iri(s.into())
    }

    pub fn var(name: impl Into<String>) -> Term {
        Term::Variable(name.into())
    }

    pub fn as_iri(&self) -> Option<&str> {
        match self {
            Term::Iri(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_literal(&self) -> Option<&Literal> {
        match self {
            Term::Literal(l) => Some(l),
            _ => None,
        }
    }

    pub fn is_variable(&self) -> bool {
        matches!(self, Term::Variable(_))
    }
}

impl From<Literal> for Term {
    fn from(l: Literal) -> Self {
        Term::Literal(l)
    }
}

pub(crate) fn escape_string(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            '\t' => out.push_str("\\t"),
            c => out.push(c),
        }
    }
    out
}

impl fmt::Display for Term {
    /// N-Triples style, no prefixes.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::Iri(i) => write!(f, "<{i}>"),
            Term::Blank(b) => write!(f, "_:{b}"),
            Term::Variable(v) => write!(f, "?{v}"),
            Term::Literal(l) => {
                write!(f, "\"{}\"", escape_string(&l.lexical))?;
                if let Some(tag) = &l.language {
                    write!(f, "@{tag}")
                } else if l.datatype != ns::XSD_STRING {
                    write!(f, "^^<{}>", l.datatype)
                } else {
                    Ok(())
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Triple {
    subject: Term,
    predicate: Term,
    object: Term,
}

impl Triple {
    pub fn new(subject: Term, predicate: Term, object: Term) -> Result<Triple, TermError> {
        if !matches!(subject, Term::Iri(_) | Term::Blank(_)) {
            return Err(TermError::BadPosition {
                position: "subject",
                term: subject.to_string(),
            });
        }
        if !matches!(predicate, Term::Iri(_)) {
            return Err(TermError::BadPosition {
                position: "predicate",
                term: predicate.to_string(),
            });
        }
        if object.is_variable() {
            return Err(TermError::BadPosition {
                position: "object",
                term: object.to_string(),
            });
        }
        Ok(Triple {
            subject,
            predicate,
            object,
        })
    }

    pub fn subject(&self) -> &Term {
        &self.subject
    }

    pub fn predicate(&self) -> &Term {
        &self.predicate
    }

    pub fn object(&self) -> &Term {
        &self.object
    }
}

impl PartialOrd for Triple {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Triple {
    fn cmp(&self, other: &Self) -> Ordering {
        (&self.subject, &self.predicate, &self.object).cmp(&(
            &other.subject,
            &other.predicate,
            &other.object,
        ))
    }
}

impl fmt::Display for Triple {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} {} .", self.subject, self.predicate, self.object)
    }
}

/// Prefix label to namespace IRI.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PrefixMap {
    map: BTreeMap<String, String>,
}

impl PrefixMap {
    pub fn new() -> Self {
        PrefixMap::default()
    }

    /// rdf, rdfs, xsd, owl, dbpedia and the plant vocabulary lps.
    pub fn well_known() -> Self {
        let mut m = PrefixMap::new();
        m.insert("rdf", ns::RDF);
        m.insert("rdfs", ns::RDFS);
        m.insert("xsd", ns::XSD);
        m.insert("owl", ns::OWL);
        m.insert("dbpedia", ns::DBPEDIA);
        m.insert("lps", ns::LPS);
        m
    }

    pub fn insert(&mut self, prefix: impl Into<String>, namespace: impl Into<String>) {
        self.map.insert(prefix.into(), namespace.into());
    }

    pub fn get(&self, prefix: &str) -> Option<&str> {
        self.map.get(prefix).map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.map.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Entries of `other` not already bound here.
    pub fn extend_missing(&mut self, other: &PrefixMap) {
        for (k, v) in other.iter() {
            self.map
                .entry(k.to_string())
                .or_insert_with(|| v.to_string());
        }
    }

    /// Longest matching namespace whose remainder is a valid local name.
    pub fn compact_iri(&self, iri: &str) -> Option<(String, String)> {
        self.map
            .iter()
            .filter(|(_, ns)| iri.starts_with(ns.as_str()))
            .filter(|(_, ns)| is_local_name(&iri[ns.len()..]))
            .max_by(|a, b| a.1.len().cmp(&b.1.len()).then_with(|| b.0.cmp(a.0)))
            .map(|(p, ns)| (p.clone(), iri[ns.len()..].to_string()))
    }

    /// Turtle text for a term, compacting IRIs and datatypes where possible.
    pub fn render(&self, term: &Term) -> String {
        match term {
            Term::Iri(i) => self.render_iri(i),
            Term::Literal(l) => {
                let mut s = format!("\"{}\"", escape_string(l.lexical()));
                if let Some(tag) = l.language() {
                    s.push('@');
                    s.push_str(tag);
                } else if l.datatype() != ns::XSD_STRING {
                    s.push_str("^^");
                    s.push_str(&self.render_iri(l.datatype()));
                }
                s
            }
            other => other.to_string(),
        }
    }

    fn render_iri(&self, iri: &str) -> String {
        match self.compact_iri(iri) {
            Some((p, l)) => format!("{p}:{l}"),
            None => format!("<{iri}>"),
        }
    }
}

pub(crate) fn is_local_name(s: &str) -> bool {
    if s.is_empty() {
        return true;
    }
    let mut chars = s.chars();
    let first = chars.next().unwrap();
    (first.is_ascii_alphanumeric() || first == '_')
        && s.chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'))
        && !s.ends_with('.')
}
