//! Tokenizer shared by the Turtle and query parsers.

use super::SyntaxError;

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Tok {
    IriRef(String),
    /// `prefix:local`; local may be empty (namespace declaration form).
    PName(String, String),
    Blank(String),
    Var(String),
    Str(String),
    LangTag(String),
    DoubleCaret,
    /// Bare number with its lexical form and inferred XSD datatype.
    Number(String, &'static str),
    /// Bare word: `a`, `true`, `PREFIX`, `SELECT`, ...
    Word(String),
    AtPrefix,
    AtBase,
    Dot,
    Semi,
    Comma,
    Slash,
    Star,
    LBrace,
    RBrace,
    LParen,
    RParen,
    Op(&'static str),
    AndAnd,
}

#[derive(Debug, Clone)]
pub(crate) struct Token {
    pub tok: Tok,
    pub line: usize,
    pub col: usize,
}

pub(crate) struct Lexer<'a> {
    chars: Vec<char>,
    pos: usize,
    line: usize,
    col: usize,
    _src: &'a str,
}

fn is_pn_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_' || c == '-'
}

impl<'a> Lexer<'a> {
    pub fn new(src: &'a str) -> Self {
        Lexer {
            chars: src.chars().collect(),
            pos: 0,
            line: 1,
            col: 1,
            _src: src,
        }
    }

    fn peek(&self) -> Option<char> {
        self.chars.get(self.pos).copied()
    }

    fn peek_at(&self, n: usize) -> Option<char> {
        self.chars.get(self.pos + n).copied()
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.chars.get(self.pos).copied()?;
        self.pos += 1;
        if c == '\n' {
            self.line += 1;
            self.col = 1;
        } else {
            self.col += 1;
        }
        Some(c)
    }

    fn err(&self, line: usize, col: usize, msg: impl Into<String>) -> SyntaxError {
        SyntaxError {
            line,
            col,
            message: msg.into(),
        }
    }

    fn skip_trivia(&mut self) {
        while let Some(c) = self.peek() {
            if c.is_whitespace() {
                self.bump();
            } else if c == '#' {
                while let Some(c) = self.peek() {
                    if c == '\n' {
                        break;
                    }
                    self.bump();
                }
            } else {
                break;
            }
        }
    }

    pub fn tokenize(mut self) -> Result<Vec<Token>, SyntaxError> {
        let mut out = Vec::new();
        loop {
            self.skip_trivia();
            let (line, col) = (self.line, self.col);
            let Some(c) = self.peek() else { break };
            let tok = match c {
                '<' => {
                    // IRI unless followed by '=' or whitespace (comparison operator)
                    match self.peek_at(1) {
                        Some('=') => {
                            self.bump();
                            self.bump();
                            Tok::Op("<=")
                        }
                        Some(n)
                            if n.is_whitespace() || n.is_ascii_digit() || n == '?' || n == '-' =>
                        {
                            self.bump();
                            Tok::Op("<")
                        }
                        _ => self.iri_ref(line, col)?,
                    }
                }
                '>' => {
                    self.bump();
                    if self.peek() == Some('=') {
                        self.bump();
                        Tok::Op(">=")
                    } else {
                        Tok::Op(">")
                    }
                }
                '=' => {
                    self.bump();
                    Tok::Op("=")
                }
                '!' if self.peek_at(1) == Some('=') => {
                    self.bump();
                    self.bump();
                    Tok::Op("!=")
                }
                '&' if self.peek_at(1) == Some('&') => {
                    self.bump();
                    self.bump();
                    Tok::AndAnd
                }
                '"' | '\'' => self.string(c, line, col)?,
                '@' => self.at_word(line, col)?,
                '^' if self.peek_at(1) == Some('^') => {
                    self.bump();
                    self.bump();
                    Tok::DoubleCaret
                }
                '.' if !self.peek_at(1).is_some_and(|c| c.is_ascii_digit()) => {
                    self.bump();
                    Tok::Dot
                }
                ';' => {
                    self.bump();
                    Tok::Semi
                }
                ',' => {
                    self.bump();
                    Tok::Comma
                }
                '/' => {
                    self.bump();
                    Tok::Slash
                }
                '*' => {
                    self.bump();
                    Tok::Star
                }
                '{' => {
                    self.bump();
                    Tok::LBrace
                }
                '}' => {
                    self.bump();
                    Tok::RBrace
                }
                '(' => {
                    self.bump();
                    Tok::LParen
                }
                ')' => {
                    self.bump();
                    Tok::RParen
                }
                '?' | '$' => {
                    self.bump();
                    let name = self.take_while(is_pn_char);
                    if name.is_empty() {
                        return Err(self.err(line, col, "empty variable name"));
                    }
                    Tok::Var(name)
                }
                '_' if self.peek_at(1) == Some(':') => {
                    self.bump();
                    self.bump();
                    let label = self.take_local();
                    if label.is_empty() {
                        return Err(self.err(line, col, "empty blank node label"));
                    }
                    Tok::Blank(label)
                }
                c if c.is_ascii_digit() || c == '+' || c == '-' || c == '.' => {
                    self.number(line, col)?
                }
                c if c.is_alphabetic() || c == ':' => self.name(),
                other => {
                    return Err(self.err(line, col, format!("unexpected character {other:?}")))
                }
            };
            out.push(Token { tok, line, col });
        }
        Ok(out)
    }

    fn take_while(&mut self, f: impl Fn(char) -> bool) -> String {
        let mut s = String::new();
        while let Some(c) = self.peek() {
            if !f(c) {
                break;
            }
            s.push(c);
            self.bump();
        }
        s
    }

    /// Local part of a prefixed name: dots allowed inside, never trailing.
    fn take_local(&mut self) -> String {
        let mut s = String::new();
        loop {
            match self.peek() {
                Some(c) if is_pn_char(c) => {
                    s.push(c);
                    self.bump();
                }
                Some('.') if self.peek_at(1).is_some_and(is_pn_char) && !s.is_empty() => {
                    s.push('.');
                    self.bump();
                }
                _ => break,
            }
        }
        s
    }

    fn iri_ref(&mut self, line: usize, col: usize) -> Result<Tok, SyntaxError> {
        self.bump();
        let mut s = String::new();
        loop {
            match self.bump() {
                Some('>') => return Ok(Tok::IriRef(s)),
                Some(c) if c.is_whitespace() || c == '<' => {
                    return Err(self.err(line, col, "invalid character in IRI"))
                }
                Some(c) => s.push(c),
                None => return Err(self.err(line, col, "unterminated IRI")),
            }
        }
    }

    fn string(&mut self, quote: char, line: usize, col: usize) -> Result<Tok, SyntaxError> {
        self.bump();
        let mut s = String::new();
        loop {
            match self.bump() {
                Some(c) if c == quote => return Ok(Tok::Str(s)),
                Some('\\') => {
                    let esc = self
                        .bump()
                        .ok_or_else(|| self.err(line, col, "unterminated string"))?;
                    s.push(match esc {
                        'n' => '\n',
                        'r' => '\r',
                        't' => '\t',
                        '"' => '"',
                        '\'' => '\'',
                        '\\' => '\\',
                        other => {
                            return Err(self.err(
                                self.line,
                                self.col,
                                format!("bad escape \\{other}"),
                            ))
                        }
                    });
                }
                Some('\n') | None => return Err(self.err(line, col, "unterminated string")),
                Some(c) => s.push(c),
            }
        }
    }

    fn at_word(&mut self, line: usize, col: usize) -> Result<Tok, SyntaxError> {
        self.bump();
        let w = self.take_while(|c| c.is_ascii_alphanumeric() || c == '-');
        match w.as_str() {
            "prefix" => Ok(Tok::AtPrefix),
            "base" => Ok(Tok::AtBase),
            "" => Err(self.err(line, col, "empty language tag")),
            _ => Ok(Tok::LangTag(w)),
        }
    }

    fn number(&mut self, line: usize, col: usize) -> Result<Tok, SyntaxError> {
        let mut s = String::new();
        if matches!(self.peek(), Some('+') | Some('-')) {
            s.push(self.bump().unwrap());
        }
        s.push_str(&self.take_while(|c| c.is_ascii_digit()));
        let mut dt = super::term::ns::XSD_INTEGER;
        if self.peek() == Some('.') && self.peek_at(1).is_some_and(|c| c.is_ascii_digit()) {
            s.push(self.bump().unwrap());
            s.push_str(&self.take_while(|c| c.is_ascii_digit()));
            dt = super::term::ns::XSD_DECIMAL;
        }
        if matches!(self.peek(), Some('e') | Some('E')) {
            s.push(self.bump().unwrap());
            if matches!(self.peek(), Some('+') | Some('-')) {
                s.push(self.bump().unwrap());
            }
            let exp = self.take_while(|c| c.is_ascii_digit());
            if exp.is_empty() {
                return Err(self.err(line, col, "malformed exponent"));
            }
            s.push_str(&exp);
            dt = super::term::ns::XSD_DOUBLE;
        }
        if !s.chars().any(|c| c.is_ascii_digit()) {
            return Err(self.err(line, col, format!("malformed number {s:?}")));
        }
        Ok(Tok::Number(s, dt))
    }

    fn name(&mut self) -> Tok {
        let prefix = self.take_while(|c| is_pn_char(c) || c == '.');
        // a trailing '.' belongs to the statement, not the name
        let mut prefix = prefix;
        while prefix.ends_with('.') {
            prefix.pop();
            self.pos -= 1;
            self.col -= 1;
        }
        if self.peek() == Some(':') {
            self.bump();
            let local = self.take_local();
            Tok::PName(prefix, local)
        } else {
            Tok::Word(prefix)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<Tok> {
        Lexer::new(s)
            .tokenize()
            .unwrap()
            .into_iter()
            .map(|t| t.tok)
            .collect()
    }

    #[test]
    fn prefixed_names_stop_before_statement_dot() {
        assert_eq!(
            toks("lps:hasMaterialType dbpedia:Liquid."),
            vec![
                Tok::PName("lps".into(), "hasMaterialType".into()),
                Tok::PName("dbpedia".into(), "Liquid".into()),
                Tok::Dot
            ]
        );
    }

    #[test]
    fn path_and_filter_tokens() {
        assert_eq!(
            toks("lps:QoS/lps:hasMaterialType FILTER(?value>=50)."),
            vec![
                Tok::PName("lps".into(), "QoS".into()),
                Tok::Slash,
                Tok::PName("lps".into(), "hasMaterialType".into()),
                Tok::Word("FILTER".into()),
                Tok::LParen,
                Tok::Var("value".into()),
                Tok::Op(">="),
                Tok::Number("50".into(), super::super::term::ns::XSD_INTEGER),
                Tok::RParen,
                Tok::Dot,
            ]
        );
    }

    #[test]
    fn literals() {
        assert_eq!(
            toks(r#""70"^^xsd:double 'Heat'@en"#),
            vec![
                Tok::Str("70".into()),
                Tok::DoubleCaret,
                Tok::PName("xsd".into(), "double".into()),
                Tok::Str("Heat".into()),
                Tok::LangTag("en".into()),
            ]
        );
    }

    #[test]
    fn positions_reported() {
        let e = Lexer::new("a:b\n  \"open").tokenize().unwrap_err();
        assert_eq!((e.line, e.col), (2, 3));
    }
}
