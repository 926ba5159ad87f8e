//! CoAP message model and the RFC 7252 wire codec.

use std::fmt;

use thiserror::Error;

/// Only version understood on the wire.
pub const VERSION: u8 = 1;

const PAYLOAD_MARKER: u8 = 0xFF;
const MAX_TOKEN_LEN: usize = 8;
/// Largest delta or length expressible with the 2-byte extended form.
const MAX_EXTENDED: usize = 65535 + 269;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CodecError {
    #[error("invalid message: {0}")]
    InvalidMessage(String),
    #[error("malformed packet: {0}")]
    MalformedPacket(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MessageType {
    Confirmable,
    NonConfirmable,
    Acknowledgement,
    Reset,
}

impl MessageType {
    fn bits(self) -> u8 {
        match self {
            MessageType::Confirmable => 0,
            MessageType::NonConfirmable => 1,
            MessageType::Acknowledgement => 2,
            MessageType::Reset => 3,
        }
    }

    fn from_bits(bits: u8) -> Self {
        match bits & 0x3 {
            0 => MessageType::Confirmable,
            1 => MessageType::NonConfirmable,
            2 => MessageType::Acknowledgement,
            _ => MessageType::Reset,
        }
    }
}

/// Request method or response code, `class.detail`.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Code {
    class: u8,
    detail: u8,
}

impl Code {
    pub const EMPTY: Code = Code::new(0, 0);
    pub const GET: Code = Code::new(0, 1);
    pub const POST: Code = Code::new(0, 2);
    pub const PUT: Code = Code::new(0, 3);
    pub const DELETE: Code = Code::new(0, 4);

    pub const CREATED: Code = Code::new(2, 1);
    pub const DELETED: Code = Code::new(2, 2);
    pub const VALID: Code = Code::new(2, 3);
    pub const CHANGED: Code = Code::new(2, 4);
    pub const CONTENT: Code = Code::new(2, 5);

    pub const BAD_REQUEST: Code = Code::new(4, 0);
    pub const FORBIDDEN: Code = Code::new(4, 3);
    pub const NOT_FOUND: Code = Code::new(4, 4);
    pub const METHOD_NOT_ALLOWED: Code = Code::new(4, 5);
    pub const CONFLICT: Code = Code::new(4, 9);

    pub const INTERNAL_SERVER_ERROR: Code = Code::new(5, 0);

    /// Panics if `class > 7` or `detail > 31`; both must fit the 3/5-bit split.
    pub const fn new(class: u8, detail: u8) -> Self {
        assert!(class < 8 && detail < 32, "code out of range");
        Code { class, detail }
    }

    pub fn class(self) -> u8 {
        self.class
    }

    pub fn detail(self) -> u8 {
        self.detail
    }

    pub fn is_request(self) -> bool {
        self.class == 0 && self.detail != 0
    }

    pub fn is_success(self) -> bool {
        self.class == 2
    }

    fn to_byte(self) -> u8 {
        (self.class << 5) | self.detail
    }

    fn from_byte(b: u8) -> Self {
        Code {
            class: b >> 5,
            detail: b & 0x1F,
        }
    }
}

impl fmt::Display for Code {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{:02}", self.class, self.detail)
    }
}

impl fmt::Debug for Code {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

/// Option numbers this crate interprets. Others survive decoding untouched.
pub mod option {
    pub const OBSERVE: u16 = 6;
    pub const LOCATION_PATH: u16 = 8;
    pub const URI_PATH: u16 = 11;
    pub const CONTENT_FORMAT: u16 = 12;
    pub const URI_QUERY: u16 = 15;
}

/// Content-format identifiers.
pub mod content_format {
    pub const TEXT_PLAIN: u16 = 0;
    pub const LINK_FORMAT: u16 = 40;
    /// No registered number exists for text/turtle; taken from the experimental range.
    pub const TEXT_TURTLE: u16 = 65201;
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CoapOption {
    pub number: u16,
    pub value: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Message {
    pub msg_type: MessageType,
    pub code: Code,
    pub message_id: u16,
    pub token: Vec<u8>,
    options: Vec<CoapOption>,
    pub payload: Vec<u8>,
}

impl Message {
    pub fn new(msg_type: MessageType, code: Code, message_id: u16) -> Self {
        Message {
            msg_type,
            code,
            message_id,
            token: Vec::new(),
            options: Vec::new(),
            payload: Vec::new(),
        }
    }

    /// A confirmable request addressed to `path` (slash separated, query allowed).
    pub fn request(code: Code, path: &str) -> Self {
        let mut m = Message::new(MessageType::Confirmable, code, 0);
        m.set_uri(path);
        m
    }

    pub fn options(&self) -> &[CoapOption] {
        &self.options
    }

    /// Inserts after any existing options with the same number, keeping the list sorted.
    pub fn add_option(&mut self, number: u16, value: impl Into<Vec<u8>>) {
        let at = self.options.partition_point(|o| o.number <= number);
        self.options.insert(
            at,
            CoapOption {
                number,
                value: value.into(),
            },
        );
    }

    pub fn remove_options(&mut self, number: u16) {
        self.options.retain(|o| o.number != number);
    }

    pub fn option_values(&self, number: u16) -> impl Iterator<Item = &[u8]> {
        self.options
            .iter()
            .filter(move |o| o.number == number)
            .map(|o| o.value.as_slice())
    }

    /// Splits `path?query` into Uri-Path and Uri-Query options.
    pub fn set_uri(&mut self, uri: &str) {
        self.remove_options(option::URI_PATH);
        self.remove_options(option::URI_QUERY);
        let (path, query) = match uri.split_once('?') {
            Some((p, q)) => (p, Some(q)),
            None => (uri, None),
        };
        for seg in path.split('/').filter(|s| !s.is_empty()) {
            self.add_option(option::URI_PATH, seg.as_bytes());
        }
        if let Some(q) = query {
            for part in q.split('&').filter(|s| !s.is_empty()) {
                self.add_option(option::URI_QUERY, part.as_bytes());
            }
        }
    }

    pub fn path_segments(&self) -> Vec<String> {
        self.option_values(option::URI_PATH)
            .map(|v| String::from_utf8_lossy(v).into_owned())
            .collect()
    }

    pub fn path(&self) -> String {
        self.path_segments().join("/")
    }

    /// Query parameters as `(key, value)`; a bare key yields an empty value.
    pub fn queries(&self) -> Vec<(String, String)> {
        self.option_values(option::URI_QUERY)
            .map(|v| {
                let s = String::from_utf8_lossy(v);
                match s.split_once('=') {
                    Some((k, v)) => (k.to_string(), v.to_string()),
                    None => (s.into_owned(), String::new()),
                }
            })
            .collect()
    }

    pub fn query(&self, key: &str) -> Option<String> {
        self.queries()
            .into_iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v)
    }

    pub fn location_path(&self) -> String {
        let segs: Vec<String> = self
            .option_values(option::LOCATION_PATH)
            .map(|v| String::from_utf8_lossy(v).into_owned())
            .collect();
        format!("/{}", segs.join("/"))
    }

    pub fn observe(&self) -> Option<u32> {
        self.option_values(option::OBSERVE)
            .next()
            .map(|v| decode_uint(v) as u32)
    }

    pub fn set_observe(&mut self, seq: u32) {
        self.remove_options(option::OBSERVE);
        self.add_option(option::OBSERVE, encode_uint(seq as u64));
    }

    pub fn content_format(&self) -> Option<u16> {
        self.option_values(option::CONTENT_FORMAT)
            .next()
            .map(|v| decode_uint(v) as u16)
    }

    pub fn set_content_format(&mut self, cf: u16) {
        self.remove_options(option::CONTENT_FORMAT);
        self.add_option(option::CONTENT_FORMAT, encode_uint(cf as u64));
    }

    pub fn payload_str(&self) -> String {
        String::from_utf8_lossy(&self.payload).into_owned()
    }

    pub fn encode(&self) -> Result<Vec<u8>, CodecError> {
        encode(self)
    }

    pub fn decode(bytes: &[u8]) -> Result<Message, CodecError> {
        decode(bytes)
    }
}

/// Minimal big-endian unsigned encoding used by Observe and Content-Format.
pub fn encode_uint(v: u64) -> Vec<u8> {
    let bytes = v.to_be_bytes();
    let skip = bytes.iter().take_while(|&&b| b == 0).count();
    bytes[skip..].to_vec()
}

pub fn decode_uint(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0u64, |acc, &b| (acc << 8) | b as u64)
}

fn nibble(v: usize) -> Result<(u8, Vec<u8>), CodecError> {
    match v {
        0..=12 => Ok((v as u8, Vec::new())),
        13..=268 => Ok((13, vec![(v - 13) as u8])),
        269..=MAX_EXTENDED => Ok((14, ((v - 269) as u16).to_be_bytes().to_vec())),
        _ => Err(CodecError::InvalidMessage(format!(
            "option delta/length {v} not representable"
        ))),
    }
}

pub fn encode(msg: &Message) -> Result<Vec<u8>, CodecError> {
    if msg.token.len() > MAX_TOKEN_LEN {
        return Err(CodecError::InvalidMessage(format!(
            "token length {} exceeds 8",
            msg.token.len()
        )));
    }
    let mut out = Vec::with_capacity(4 + msg.token.len() + msg.payload.len() + 16);
    out.push((VERSION << 6) | (msg.msg_type.bits() << 4) | msg.token.len() as u8);
    out.push(msg.code.to_byte());
    out.extend_from_slice(&msg.message_id.to_be_bytes());
    out.extend_from_slice(&msg.token);

    let mut prev = 0u16;
    for opt in &msg.options {
        if opt.number < prev {
            return Err(CodecError::InvalidMessage("options out of order".into()));
        }
        let (dn, dext) = nibble((opt.number - prev) as usize)?;
        let (ln, lext) = nibble(opt.value.len())?;
        out.push((dn << 4) | ln);
        out.extend_from_slice(&dext);
        out.extend_from_slice(&lext);
        out.extend_from_slice(&opt.value);
        prev = opt.number;
    }
    if !msg.payload.is_empty() {
        out.push(PAYLOAD_MARKER);
        out.extend_from_slice(&msg.payload);
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8], CodecError> {
        if self.pos + n > self.buf.len() {
            return Err(CodecError::MalformedPacket(format!("truncated {what}")));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn extended(&mut self, nib: u8, what: &str) -> Result<usize, CodecError> {
        match nib {
            0..=12 => Ok(nib as usize),
            13 => Ok(self.take(1, what)?[0] as usize + 13),
            14 => {
                let b = self.take(2, what)?;
                Ok(u16::from_be_bytes([b[0], b[1]]) as usize + 269)
            }
            _ => Err(CodecError::MalformedPacket(format!(
                "reserved nibble in {what}"
            ))),
        }
    }
}

pub fn decode(bytes: &[u8]) -> Result<Message, CodecError> {
    if bytes.len() < 4 {
        return Err(CodecError::MalformedPacket("truncated header".into()));
    }
    let version = bytes[0] >> 6;
    if version != VERSION {
        return Err(CodecError::MalformedPacket(format!(
            "bad version {version}"
        )));
    }
    let tkl = (bytes[0] & 0x0F) as usize;
    if tkl > MAX_TOKEN_LEN {
        return Err(CodecError::MalformedPacket(format!("token length {tkl}")));
    }
    let mut msg = Message::new(
        MessageType::from_bits(bytes[0] >> 4),
        Code::from_byte(bytes[1]),
        u16::from_be_bytes([bytes[2], bytes[3]]),
    );
    let mut r = Reader { buf: bytes, pos: 4 };
    msg.token = r.take(tkl, "token")?.to_vec();

    let mut number = 0usize;
    while r.pos < bytes.len() {
        let head = bytes[r.pos];
        r.pos += 1;
        if head == PAYLOAD_MARKER {
            if r.pos == bytes.len() {
                return Err(CodecError::MalformedPacket(
                    "payload marker with empty payload".into(),
                ));
            }
            msg.payload = bytes[r.pos..].to_vec();
            break;
        }
        let delta = r.extended(head >> 4, "option delta")?;
        let len = r.extended(head & 0x0F, "option length")?;
        number += delta;
        if number > u16::MAX as usize {
            return Err(CodecError::MalformedPacket("option number overflow".into()));
        }
        let value = r.take(len, "option value")?.to_vec();
        msg.options.push(CoapOption {
            number: number as u16,
            value,
        });
    }
    Ok(msg)
}
