//! SELECT/WHERE/FILTER subset with `;`/`,` abbreviations and sequence property paths.

use std::fmt;

use super::lexer::Tok;
use super::term::{ns, PrefixMap, Term};
use super::turtle::{describe, term, verb, Cursor, Scope};
use super::ParseError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Comparator {
    Ge,
    Gt,
    Le,
    Lt,
    Eq,
    Ne,
}

impl Comparator {
    fn parse(op: &str) -> Option<Self> {
        Some(match op {
            ">=" => Comparator::Ge,
            ">" => Comparator::Gt,
            "<=" => Comparator::Le,
            "<" => Comparator::Lt,
            "=" => Comparator::Eq,
            "!=" => Comparator::Ne,
            _ => return None,
        })
    }

    /// The comparator with operands swapped: `50 <= ?v` is `?v >= 50`.
    fn flipped(self) -> Self {
        match self {
            Comparator::Ge => Comparator::Le,
            Comparator::Gt => Comparator::Lt,
            Comparator::Le => Comparator::Ge,
            Comparator::Lt => Comparator::Gt,
            other => other,
        }
    }

    pub fn holds(self, lhs: f64, rhs: f64) -> bool {
        match self {
            Comparator::Ge => lhs >= rhs,
            Comparator::Gt => lhs > rhs,
            Comparator::Le => lhs <= rhs,
            Comparator::Lt => lhs < rhs,
            Comparator::Eq => lhs == rhs,
            Comparator::Ne => lhs != rhs,
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            Comparator::Ge => ">=",
            Comparator::Gt => ">",
            Comparator::Le => "<=",
            Comparator::Lt => "<",
            Comparator::Eq => "=",
            Comparator::Ne => "!=",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Filter {
    pub variable: String,
    pub comparator: Comparator,
    pub value: f64,
}

impl fmt::Display for Filter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "?{} {} {}",
            self.variable,
            self.comparator.symbol(),
            self.value
        )
    }
}

/// Subject, a non-empty sequence of predicate IRIs, object.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TriplePattern {
    pub subject: Term,
    pub path: Vec<String>,
    pub object: Term,
}

impl TriplePattern {
    pub fn new(subject: Term, path: Vec<String>, object: Term) -> Self {
        assert!(!path.is_empty(), "empty property path");
        TriplePattern {
            subject,
            path,
            object,
        }
    }

    pub fn variables(&self) -> impl Iterator<Item = &str> {
        [&self.subject, &self.object]
            .into_iter()
            .filter_map(|t| match t {
                Term::Variable(v) => Some(v.as_str()),
                _ => None,
            })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Query {
    pub select: Vec<String>,
    pub patterns: Vec<TriplePattern>,
    pub filters: Vec<Filter>,
    pub prefixes: PrefixMap,
}

impl Query {
    fn mentions(&self, var: &str) -> bool {
        self.patterns
            .iter()
            .any(|p| p.variables().any(|v| v == var))
    }

    /// Checks that every selected and filtered variable occurs in a pattern.
    pub fn validate(&self) -> Result<(), ParseError> {
        if self.patterns.is_empty() {
            return Err(ParseError::Syntax(super::SyntaxError {
                line: 1,
                col: 1,
                message: "query has no triple patterns".into(),
            }));
        }
        for f in &self.filters {
            if !self.mentions(&f.variable) {
                return Err(ParseError::UnboundVariableInFilter(f.variable.clone()));
            }
        }
        for v in &self.select {
            if !self.mentions(v) {
                return Err(ParseError::UnboundSelectVariable(v.clone()));
            }
        }
        Ok(())
    }
}

pub fn parse_query(text: &str) -> Result<Query, ParseError> {
    parse_query_with(text, &PrefixMap::well_known())
}

pub fn parse_query_with(text: &str, defaults: &PrefixMap) -> Result<Query, ParseError> {
    let mut c = Cursor::new(text)?;
    let mut scope = Scope::new(defaults);
    while scope.directive(&mut c)? {}

    c.expect_word("SELECT")?;
    if c.peek_word("DISTINCT") {
        c.next();
    }
    let mut select = Vec::new();
    let mut star = false;
    loop {
        match c.peek() {
            Some(Tok::Var(v)) => {
                select.push(v.clone());
                c.next();
            }
            Some(Tok::Star) if select.is_empty() && !star => {
                star = true;
                c.next();
            }
            _ => break,
        }
    }
    if select.is_empty() && !star {
        return Err(c.err("expected variables or * after SELECT").into());
    }
    if c.peek_word("WHERE") {
        c.next();
    }
    c.expect(&Tok::LBrace, "'{'")?;

    let mut patterns = Vec::new();
    let mut filters = Vec::new();
    loop {
        match c.peek() {
            Some(Tok::RBrace) => {
                c.next();
                break;
            }
            Some(Tok::Dot) => {
                c.next();
            }
            _ if c.peek_word("FILTER") => {
                c.next();
                filter(&mut c, &mut filters)?;
            }
            None => return Err(c.err("unterminated WHERE block").into()),
            _ => same_subject(&mut c, &scope, &mut patterns)?,
        }
    }
    if !c.at_end() {
        return Err(c
            .err(format!("unexpected {} after query", describe(c.peek())))
            .into());
    }
    if star {
        for p in &patterns {
            for v in p.variables() {
                if !select.iter().any(|s| s == v) {
                    select.push(v.to_string());
                }
            }
        }
    }
    let q = Query {
        select,
        patterns,
        filters,
        prefixes: {
            let mut m = scope.declared;
            m.extend_missing(&PrefixMap::well_known());
            m
        },
    };
    q.validate()?;
    Ok(q)
}

fn same_subject(
    c: &mut Cursor,
    scope: &Scope,
    out: &mut Vec<TriplePattern>,
) -> Result<(), ParseError> {
    let subject = match c.peek() {
        Some(Tok::Var(_)) | Some(Tok::IriRef(_)) | Some(Tok::PName(..)) | Some(Tok::Blank(_)) => {
            term(c, scope)?
        }
        _ => {
            return Err(c
                .err(format!("expected subject, found {}", describe(c.peek())))
                .into())
        }
    };
    loop {
        let p = path(c, scope)?;
        loop {
            let object = term(c, scope)?;
            out.push(TriplePattern::new(subject.clone(), p.clone(), object));
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
            if matches!(c.peek(), Some(Tok::Dot) | Some(Tok::RBrace)) || c.peek_word("FILTER") {
                return Ok(());
            }
        } else {
            return Ok(());
        }
    }
}

fn path(c: &mut Cursor, scope: &Scope) -> Result<Vec<String>, ParseError> {
    let mut steps = Vec::new();
    loop {
        let p = verb(c, scope)?;
        steps.push(p.as_iri().unwrap_or(ns::RDF_TYPE).to_string());
        if c.peek() == Some(&Tok::Slash) {
            c.next();
        } else {
            return Ok(steps);
        }
    }
}

enum Operand {
    Var(String),
    Num(f64),
}

fn operand(c: &mut Cursor) -> Result<Operand, ParseError> {
    match c.next() {
        Some(Tok::Var(v)) => Ok(Operand::Var(v)),
        Some(Tok::Number(lex, _)) => lex
            .parse::<f64>()
            .map(Operand::Num)
            .map_err(|_| c.err("bad number").into()),
        other => {
            c.pos -= usize::from(other.is_some());
            Err(c
                .err(format!(
                    "expected variable or number, found {}",
                    describe(other.as_ref())
                ))
                .into())
        }
    }
}

/// `FILTER ( cmp (&& cmp)* )`; parentheses around single comparisons allowed.
fn filter(c: &mut Cursor, out: &mut Vec<Filter>) -> Result<(), ParseError> {
    c.expect(&Tok::LParen, "'(' after FILTER")?;
    loop {
        let mut depth = 0;
        while c.peek() == Some(&Tok::LParen) {
            c.next();
            depth += 1;
        }
        let lhs = operand(c)?;
        let op = match c.next() {
            Some(Tok::Op(op)) => Comparator::parse(op).expect("lexer emits known operators"),
            other => {
                c.pos -= usize::from(other.is_some());
                return Err(c.err("expected comparison operator").into());
            }
        };
        let rhs = operand(c)?;
        let f = match (lhs, rhs) {
            (Operand::Var(v), Operand::Num(n)) => Filter {
                variable: v,
                comparator: op,
                value: n,
            },
            (Operand::Num(n), Operand::Var(v)) => Filter {
                variable: v,
                comparator: op.flipped(),
                value: n,
            },
            _ => {
                return Err(c
                    .err("filter must compare one variable with a number")
                    .into())
            }
        };
        out.push(f);
        for _ in 0..depth {
            c.expect(&Tok::RParen, "')'")?;
        }
        if c.peek() == Some(&Tok::AndAnd) {
            c.next();
        } else {
            break;
        }
    }
    c.expect(&Tok::RParen, "')' closing FILTER")?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_pattern() {
        let q = parse_query("SELECT ?s WHERE { ?s a lps:Service. }").unwrap();
        assert_eq!(q.select, vec!["s"]);
        assert_eq!(q.patterns.len(), 1);
        assert_eq!(q.patterns[0].path, vec![ns::RDF_TYPE.to_string()]);
        assert_eq!(
            q.patterns[0].object,
            Term::iri(format!("{}Service", ns::LPS))
        );
    }

    #[test]
    fn filter_on_unbound_variable() {
        let e = parse_query("SELECT ?s WHERE { ?s a lps:Service FILTER(?v > 3) }").unwrap_err();
        assert!(matches!(e, ParseError::UnboundVariableInFilter(v) if v == "v"));
        let e = parse_query("SELECT ?x WHERE { ?s a lps:Service }").unwrap_err();
        assert!(matches!(e, ParseError::UnboundSelectVariable(v) if v == "x"));
    }

    #[test]
    fn filter_forms() {
        let q = parse_query(
            "SELECT * WHERE { ?s <http://p> ?v . FILTER((?v > 1) && 10 >= ?v) FILTER(?v != 5) }",
        )
        .unwrap();
        assert_eq!(q.select, vec!["s", "v"]);
        assert_eq!(q.filters.len(), 3);
        assert_eq!(q.filters[1].comparator, Comparator::Le);
        assert_eq!(q.filters[1].value, 10.0);
        assert_eq!(q.filters[2].comparator, Comparator::Ne);
    }

    #[test]
    fn syntax_errors() {
        assert!(parse_query("SELECT WHERE { ?s ?p ?o }").is_err());
        assert!(parse_query("SELECT ?s WHERE { ?s a lps:Service ").is_err());
        assert!(parse_query("SELECT ?s WHERE { ?s a lps:Service } extra").is_err());
        assert!(parse_query("SELECT ?s WHERE { ?s a lps:Service FILTER(?s > ?s) }").is_err());
        assert!(matches!(
            parse_query("SELECT ?s WHERE { ?s a zz:Service }"),
            Err(ParseError::UnknownPrefix { .. })
        ));
    }
}
