//! Turtle/N3 subset: prefix directives in both `@prefix` and `PREFIX` spelling,
//! prefixed names, `a`, predicate and object lists, typed and language-tagged literals.

use std::collections::BTreeSet;

use super::lexer::{Lexer, Tok, Token};
use super::term::{ns, Literal, PrefixMap, Term, Triple};
use super::{Graph, ParseError, SyntaxError};

pub(crate) struct Cursor {
    toks: Vec<Token>,
    pub pos: usize,
    /// Position reported when input ends.
    end: (usize, usize),
}

impl Cursor {
    pub fn new(src: &str) -> Result<Cursor, SyntaxError> {
        let toks = Lexer::new(src).tokenize()?;
        let lines = src.split('\n').count();
        let last_col = src.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
        Ok(Cursor {
            toks,
            pos: 0,
            end: (lines.max(1), last_col),
        })
    }

    pub fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|t| &t.tok)
    }

    pub fn peek_word(&self, w: &str) -> bool {
        matches!(self.peek(), Some(Tok::Word(x)) if x.eq_ignore_ascii_case(w))
    }

    pub fn next(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.pos).map(|t| t.tok.clone());
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    pub fn at_end(&self) -> bool {
        self.pos >= self.toks.len()
    }

    pub fn err(&self, msg: impl Into<String>) -> SyntaxError {
        let (line, col) = self
            .toks
            .get(self.pos)
            .map_or(self.end, |t| (t.line, t.col));
        SyntaxError {
            line,
            col,
            message: msg.into(),
        }
    }

    pub fn expect(&mut self, want: &Tok, what: &str) -> Result<(), SyntaxError> {
        if self.peek() == Some(want) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.err(format!("expected {what}, found {}", describe(self.peek()))))
        }
    }

    pub fn expect_word(&mut self, w: &str) -> Result<(), SyntaxError> {
        if self.peek_word(w) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.err(format!("expected {w}, found {}", describe(self.peek()))))
        }
    }
}

pub(crate) fn describe(t: Option<&Tok>) -> String {
    match t {
        None => "end of input".into(),
        Some(t) => format!("{t:?}"),
    }
}

/// Declared and seeded prefixes plus the set actually declared by the document.
pub(crate) struct Scope {
    pub map: PrefixMap,
    pub declared: PrefixMap,
}

impl Scope {
    pub fn new(defaults: &PrefixMap) -> Self {
        Scope {
            map: defaults.clone(),
            declared: PrefixMap::new(),
        }
    }

    pub fn expand(&self, c: &Cursor, prefix: &str, local: &str) -> Result<String, ParseError> {
        match self.map.get(prefix) {
            Some(ns) => Ok(format!("{ns}{local}")),
            None => Err(ParseError::UnknownPrefix {
                prefix: prefix.to_string(),
                line: c.err("").line,
                col: c.err("").col,
            }),
        }
    }

    /// Handles a directive if one starts here. Returns whether one was consumed.
    pub fn directive(&mut self, c: &mut Cursor) -> Result<bool, ParseError> {
        let at_form = match c.peek() {
            Some(Tok::AtPrefix) => true,
            _ if c.peek_word("PREFIX") => false,
            Some(Tok::AtBase) => return Err(c.err("@base is not supported").into()),
            _ => return Ok(false),
        };
        c.next();
        let prefix = match c.next() {
            Some(Tok::PName(p, l)) if l.is_empty() => p,
            other => {
                c.pos -= usize::from(other.is_some());
                return Err(c.err("expected prefix label ending in ':'").into());
            }
        };
        let iri = match c.next() {
            Some(Tok::IriRef(i)) => i,
            other => {
                c.pos -= usize::from(other.is_some());
                return Err(c.err("expected <namespace IRI>").into());
            }
        };
        if at_form {
            c.expect(&Tok::Dot, "'.' after @prefix")?;
        }
        self.map.insert(prefix.clone(), iri.clone());
        self.declared.insert(prefix, iri);
        Ok(true)
    }
}

/// Parses with the well-known prefix table seeded (rdf, rdfs, xsd, owl, dbpedia, lps).
pub fn parse_turtle(text: &str) -> Result<Graph, ParseError> {
    parse_turtle_with(text, &PrefixMap::well_known())
}

pub fn parse_turtle_with(text: &str, defaults: &PrefixMap) -> Result<Graph, ParseError> {
    let mut c = Cursor::new(text)?;
    let mut scope = Scope::new(defaults);
    let mut triples = Vec::new();
    while !c.at_end() {
        if scope.directive(&mut c)? {
            continue;
        }
        statement(&mut c, &scope, &mut triples)?;
    }
    let mut g = Graph::with_prefixes(scope.declared);
    g.extend(triples);
    Ok(g)
}

fn statement(c: &mut Cursor, scope: &Scope, out: &mut Vec<Triple>) -> Result<(), ParseError> {
    let subject = match c.peek() {
        Some(Tok::IriRef(_)) | Some(Tok::PName(..)) | Some(Tok::Blank(_)) => term(c, scope)?,
        _ => {
            return Err(c
                .err(format!("expected subject, found {}", describe(c.peek())))
                .into())
        }
    };
    loop {
        let predicate = verb(c, scope)?;
        loop {
            let object = term(c, scope)?;
            let t = Triple::new(subject.clone(), predicate.clone(), object)
                .map_err(|e| c.err(e.to_string()))?;
            out.push(t);
            if c.peek() == Some(&Tok::Comma) {
                c.next();
            } else {
                break;
            }
        }
        if c.peek() == Some(&Tok::Semi) {
            while c.peek() == Some(&Tok::Semi) {
                c.next();
            }
            if c.peek() == Some(&Tok::Dot) {
                break;
            }
        } else {
            break;
        }
    }
    c.expect(&Tok::Dot, "'.' at end of statement")?;
    Ok(())
}

pub(crate) fn verb(c: &mut Cursor, scope: &Scope) -> Result<Term, ParseError> {
    if matches!(c.peek(), Some(Tok::Word(w)) if w == "a") {
        c.next();
        return Ok(Term::iri(ns::RDF_TYPE));
    }
    match c.peek() {
        Some(Tok::IriRef(_)) | Some(Tok::PName(..)) => term(c, scope),
        _ => Err(c
            .err(format!("expected predicate, found {}", describe(c.peek())))
            .into()),
    }
}

/// IRI, prefixed name, blank node, literal, or (for queries) variable.
pub(crate) fn term(c: &mut Cursor, scope: &Scope) -> Result<Term, ParseError> {
    let start = c.pos;
    let tok = c.next();
    let t = match tok {
        Some(Tok::IriRef(i)) => Term::Iri(i),
        Some(Tok::PName(p, l)) => {
            c.pos = start;
            let iri = scope.expand(c, &p, &l)?;
            c.pos = start + 1;
            Term::Iri(iri)
        }
        Some(Tok::Blank(b)) => Term::Blank(b),
        Some(Tok::Var(v)) => Term::Variable(v),
        Some(Tok::Number(lex, dt)) => Term::Literal(Literal::typed(lex, dt)),
        Some(Tok::Word(w)) if w == "true" || w == "false" => {
            Term::Literal(Literal::typed(w, ns::XSD_BOOLEAN))
        }
        Some(Tok::Str(s)) => match c.peek() {
            Some(Tok::LangTag(tag)) => {
                let tag = tag.clone();
                c.next();
                Term::Literal(Literal::lang(s, &tag))
            }
            Some(Tok::DoubleCaret) => {
                c.next();
                let dt_start = c.pos;
                let dt = match c.next() {
                    Some(Tok::IriRef(i)) => i,
                    Some(Tok::PName(p, l)) => {
                        c.pos = dt_start;
                        let iri = scope.expand(c, &p, &l)?;
                        c.pos = dt_start + 1;
                        iri
                    }
                    _ => {
                        c.pos = dt_start;
                        return Err(c.err("expected datatype IRI after ^^").into());
                    }
                };
                Term::Literal(Literal::typed(s, dt))
            }
            _ => Term::Literal(Literal::plain(s)),
        },
        other => {
            c.pos = start;
            return Err(c
                .err(format!("expected term, found {}", describe(other.as_ref())))
                .into());
        }
    };
    Ok(t)
}

/// Deterministic Turtle: prefix block, then subjects in order with `;`-grouped predicates.
pub fn serialize_turtle(g: &Graph) -> String {
    let mut prefixes = g.prefixes().clone();
    prefixes.extend_missing(&PrefixMap::well_known());

    let mut used: BTreeSet<String> = g.prefixes().iter().map(|(p, _)| p.to_string()).collect();
    for t in g.iter() {
        for term in [t.subject(), t.predicate(), t.object()] {
            let iri = match term {
                Term::Iri(i) => Some(i.as_str()),
                Term::Literal(l) if l.language().is_none() => Some(l.datatype()),
                _ => None,
            };
            if let Some((p, _)) = iri.and_then(|i| prefixes.compact_iri(i)) {
                used.insert(p);
            }
        }
    }

    let mut out = String::new();
    for p in &used {
        if let Some(ns) = prefixes.get(p) {
            out.push_str(&format!("@prefix {p}: <{ns}> .\n"));
        }
    }
    let mut emitted = PrefixMap::new();
    for p in &used {
        if let Some(ns) = prefixes.get(p) {
            emitted.insert(p.clone(), ns);
        }
    }

    let mut current: Option<&Term> = None;
    for t in g.iter() {
        let pred = if t.predicate().as_iri() == Some(ns::RDF_TYPE) {
            "a".to_string()
        } else {
            emitted.render(t.predicate())
        };
        let obj = emitted.render(t.object());
        if current == Some(t.subject()) {
            out.push_str(&format!(" ;\n    {pred} {obj}"));
        } else {
            if current.is_some() {
                out.push_str(" .\n");
            }
            if current.is_none() {
                out.push('\n');
            }
            out.push_str(&format!("{} {pred} {obj}", emitted.render(t.subject())));
            current = Some(t.subject());
        }
    }
    if current.is_some() {
        out.push_str(" .\n");
    }
    out
}
