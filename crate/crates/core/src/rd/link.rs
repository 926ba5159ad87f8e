//! CoRE Link Format (RFC 6690): `</path>;rt="x";ct=40,</other>`.

use std::fmt;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("bad link format at byte {offset}: {message}")]
pub struct LinkFormatError {
    pub offset: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum LinkValue {
    Quoted(String),
    Token(String),
    /// Parameter without a value (`;obs`).
    Flag,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct LinkAttr {
    pub name: String,
    pub value: LinkValue,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct LinkEntry {
    pub uri: String,
    pub attrs: Vec<LinkAttr>,
}

impl LinkEntry {
    pub fn new(uri: impl Into<String>) -> Self {
        LinkEntry {
            uri: uri.into(),
            attrs: Vec::new(),
        }
    }

    pub fn quoted(mut self, name: &str, value: impl Into<String>) -> Self {
        self.attrs.push(LinkAttr {
            name: name.to_string(),
            value: LinkValue::Quoted(value.into()),
        });
        self
    }

    pub fn token(mut self, name: &str, value: impl Into<String>) -> Self {
        self.attrs.push(LinkAttr {
            name: name.to_string(),
            value: LinkValue::Token(value.into()),
        });
        self
    }

    /// First value of attribute `name`; flags read as the empty string.
    pub fn get(&self, name: &str) -> Option<&str> {
        self.attrs
            .iter()
            .find(|a| a.name == name)
            .map(|a| match &a.value {
                LinkValue::Quoted(s) | LinkValue::Token(s) => s.as_str(),
                LinkValue::Flag => "",
            })
    }

    pub fn remove(&mut self, name: &str) -> Option<String> {
        let i = self.attrs.iter().position(|a| a.name == name)?;
        match self.attrs.remove(i).value {
            LinkValue::Quoted(s) | LinkValue::Token(s) => Some(s),
            LinkValue::Flag => Some(String::new()),
        }
    }

    /// `rt`, `if` and `ct` may hold space-separated lists; a filter matches any member.
    pub fn matches(&self, name: &str, want: &str) -> bool {
        match self.get(name) {
            Some(v) if matches!(name, "rt" | "if") => v.split(' ').any(|x| x == want),
            Some(v) => v == want,
            None => false,
        }
    }
}

fn is_parmname(c: u8) -> bool {
    c.is_ascii_alphanumeric() || b"!#$&+-.^_`|~".contains(&c)
}

fn is_ptoken(c: u8) -> bool {
    c.is_ascii_alphanumeric() || b"!#$%&'()*+-./:<=>?@[]^_`{|}~".contains(&c)
}

impl fmt::Display for LinkEntry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "<{}>", self.uri)?;
        for a in &self.attrs {
            match &a.value {
                LinkValue::Flag => write!(f, ";{}", a.name)?,
                LinkValue::Token(t) => write!(f, ";{}={t}", a.name)?,
                LinkValue::Quoted(q) => {
                    write!(f, ";{}=\"", a.name)?;
                    for c in q.chars() {
                        if c == '"' || c == '\\' {
                            write!(f, "\\")?;
                        }
                        write!(f, "{c}")?;
                    }
                    write!(f, "\"")?;
                }
            }
        }
        Ok(())
    }
}

pub fn serialize_links(links: &[LinkEntry]) -> String {
    links
        .iter()
        .map(LinkEntry::to_string)
        .collect::<Vec<_>>()
        .join(",")
}

pub fn parse_links(text: &str) -> Result<Vec<LinkEntry>, LinkFormatError> {
    let b = text.as_bytes();
    let err = |offset: usize, m: &str| LinkFormatError {
        offset,
        message: m.to_string(),
    };
    let mut out = Vec::new();
    if b.is_empty() {
        return Ok(out);
    }
    let mut i = 0;
    loop {
        if b.get(i) != Some(&b'<') {
            return Err(err(i, "expected '<'"));
        }
        let close = text[i + 1..]
            .find('>')
            .ok_or_else(|| err(i, "unterminated URI reference"))?;
        let uri = &text[i + 1..i + 1 + close];
        if uri.bytes().any(|c| c.is_ascii_whitespace() || c == b'<') {
            return Err(err(i + 1, "invalid character in URI reference"));
        }
        let mut entry = LinkEntry::new(uri);
        i += close + 2;
        while b.get(i) == Some(&b';') {
            i += 1;
            let start = i;
            while i < b.len() && is_parmname(b[i]) {
                i += 1;
            }
            if start == i {
                return Err(err(i, "empty parameter name"));
            }
            let name = text[start..i].to_string();
            let value = if b.get(i) == Some(&b'=') {
                i += 1;
                if b.get(i) == Some(&b'"') {
                    i += 1;
                    let mut s = String::new();
                    loop {
                        match b.get(i) {
                            None => return Err(err(i, "unterminated quoted string")),
                            Some(b'"') => {
                                i += 1;
                                break;
                            }
                            Some(b'\\') => {
                                let c = text[i + 1..]
                                    .chars()
                                    .next()
                                    .ok_or_else(|| err(i, "dangling escape"))?;
                                s.push(c);
                                i += 1 + c.len_utf8();
                            }
                            Some(_) => {
                                let c = text[i..].chars().next().unwrap();
                                s.push(c);
                                i += c.len_utf8();
                            }
                        }
                    }
                    LinkValue::Quoted(s)
                } else {
                    let start = i;
                    while i < b.len() && is_ptoken(b[i]) {
                        i += 1;
                    }
                    if start == i {
                        return Err(err(i, "empty parameter value"));
                    }
                    LinkValue::Token(text[start..i].to_string())
                }
            } else {
                LinkValue::Flag
            };
            entry.attrs.push(LinkAttr { name, value });
        }
        out.push(entry);
        match b.get(i) {
            None => return Ok(out),
            Some(b',') => i += 1,
            Some(_) => return Err(err(i, "expected ',' or ';'")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn silo_link() {
        let links = parse_links(r#"</26241/0>;rt="lps.silo";ct=40"#).unwrap();
        assert_eq!(links.len(), 1);
        assert_eq!(links[0].uri, "/26241/0");
        assert_eq!(links[0].get("rt"), Some("lps.silo"));
        assert_eq!(links[0].get("ct"), Some("40"));
        assert_eq!(serialize_links(&links), r#"</26241/0>;rt="lps.silo";ct=40"#);
    }

    #[test]
    fn lists_flags_and_escapes() {
        let text = r#"</a>;obs;title="x, \"y\"; z",</b>;rt="one two""#;
        let links = parse_links(text).unwrap();
        assert_eq!(links.len(), 2);
        assert_eq!(links[0].get("obs"), Some(""));
        assert_eq!(links[0].get("title"), Some("x, \"y\"; z"));
        assert!(links[1].matches("rt", "two"));
        assert!(!links[1].matches("rt", "on"));
        assert_eq!(serialize_links(&links), text);
    }

    #[test]
    fn malformed() {
        for bad in [
            "/a",
            "<a",
            "</a>;",
            "</a>;rt=",
            "</a>;rt=\"x",
            "</a> ,</b>",
            "</a>,",
        ] {
            assert!(parse_links(bad).is_err(), "{bad}");
        }
        assert!(parse_links("").unwrap().is_empty());
    }

    fn arb_link() -> impl Strategy<Value = LinkEntry> {
        (
            "/[a-z0-9/]{0,10}",
            proptest::collection::vec(
                (
                    "[a-z]{1,5}",
                    prop_oneof![
                        "[ -~]{0,8}".prop_map(LinkValue::Quoted),
                        "[a-z0-9.:/]{1,6}".prop_map(LinkValue::Token),
                        Just(LinkValue::Flag),
                    ],
                ),
                0..4,
            ),
        )
            .prop_map(|(uri, attrs)| LinkEntry {
                uri,
                attrs: attrs
                    .into_iter()
                    .map(|(name, value)| LinkAttr { name, value })
                    .collect(),
            })
    }

    proptest! {
        #[test]
        fn round_trip(links in proptest::collection::vec(arb_link(), 0..5)) {
            prop_assert_eq!(parse_links(&serialize_links(&links)).unwrap(), links);
        }
    }
}
