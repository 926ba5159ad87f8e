use std::net::SocketAddr;

use super::directory::LinkFilter;
use super::link::{parse_links, serialize_links, LinkEntry};
use super::RdError;
use crate::coap::{content_format, Client, CoapError, Code, Message, RequestConfig};

/// A link returned by a remote lookup, with the owning endpoint and its base URI split off.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RemoteLink {
    pub endpoint: String,
    pub base: String,
    pub link: LinkEntry,
}

impl RemoteLink {
    /// Socket address from a `coap://host:port` base.
    pub fn address(&self) -> Option<SocketAddr> {
        parse_base(&self.base)
    }
}

pub fn parse_base(base: &str) -> Option<SocketAddr> {
    base.strip_prefix("coap://")?
        .trim_end_matches('/')
        .parse()
        .ok()
}

/// One semantic lookup solution as sent on the wire: endpoint and `(var, term text)` pairs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RemoteSolution {
    pub endpoint: String,
    pub values: Vec<(String, String)>,
}

impl RemoteSolution {
    pub fn get(&self, var: &str) -> Option<&str> {
        self.values
            .iter()
            .find(|(k, _)| k == var)
            .map(|(_, v)| v.as_str())
    }

    /// Numeric value of a literal rendered as `"70"^^xsd:double` or a bare number.
    pub fn number(&self, var: &str) -> Option<f64> {
        let t = self.get(var)?;
        let lex = match t.strip_prefix('"') {
            Some(rest) => &rest[..rest.find('"')?],
            None => t,
        };
        lex.parse().ok()
    }

    pub fn parse_line(line: &str) -> Option<RemoteSolution> {
        let mut parts = line.split('\t');
        let endpoint = parts.next()?.to_string();
        let values = parts
            .filter_map(|p| p.split_once('='))
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect();
        Some(RemoteSolution { endpoint, values })
    }
}

/// Talks to a resource directory over CoAP.
#[derive(Clone)]
pub struct RdClient {
    client: Client,
    rd: SocketAddr,
    cfg: RequestConfig,
}

impl RdClient {
    pub fn new(client: Client, rd: SocketAddr, cfg: RequestConfig) -> Self {
        RdClient { client, rd, cfg }
    }

    pub fn address(&self) -> SocketAddr {
        self.rd
    }

    fn send(&self, msg: Message) -> Result<Message, RdError> {
        let resp = self
            .client
            .request(self.rd, msg, &self.cfg)
            .map_err(|e| match e {
                CoapError::Timeout | CoapError::ResetReceived => RdError::Unreachable,
                other => RdError::Transport(other.to_string()),
            })?;
        if resp.code.is_success() {
            Ok(resp)
        } else {
            Err(RdError::Rejected {
                code: resp.code,
                reason: resp.payload_str(),
            })
        }
    }

    /// Registers and returns the assigned location (e.g. `/rd/1`).
    pub fn register(
        &self,
        ep: &str,
        lifetime_s: u64,
        base: &str,
        links: &[LinkEntry],
    ) -> Result<String, RdError> {
        let mut m = Message::request(
            Code::POST,
            &format!("/rd?ep={ep}&lt={lifetime_s}&base={base}"),
        );
        m.set_content_format(content_format::LINK_FORMAT);
        m.payload = serialize_links(links).into_bytes();
        Ok(self.send(m)?.location_path())
    }

    pub fn put_description(&self, ep: &str, turtle: &str) -> Result<(), RdError> {
        let mut m = Message::request(Code::POST, &format!("/rd-desc?ep={ep}"));
        m.set_content_format(content_format::TEXT_TURTLE);
        m.payload = turtle.as_bytes().to_vec();
        self.send(m).map(|_| ())
    }

    pub fn update(&self, location: &str, lifetime_s: Option<u64>) -> Result<(), RdError> {
        let uri = match lifetime_s {
            Some(lt) => format!("{location}?lt={lt}"),
            None => location.to_string(),
        };
        self.send(Message::request(Code::POST, &uri)).map(|_| ())
    }

    pub fn remove(&self, location: &str) -> Result<(), RdError> {
        self.send(Message::request(Code::DELETE, location))
            .map(|_| ())
    }

    pub fn lookup_links(&self, filter: &LinkFilter) -> Result<Vec<RemoteLink>, RdError> {
        let mut q = Vec::new();
        if let Some(ep) = &filter.endpoint {
            q.push(format!("ep={ep}"));
        }
        if let Some(rt) = &filter.rt {
            q.push(format!("rt={rt}"));
        }
        if let Some(i) = &filter.interface {
            q.push(format!("if={i}"));
        }
        let mut uri = "/rd-lookup/res".to_string();
        if !q.is_empty() {
            uri.push('?');
            uri.push_str(&q.join("&"));
        }
        let resp = self.send(Message::request(Code::GET, &uri))?;
        let links = parse_links(&resp.payload_str())?;
        Ok(links
            .into_iter()
            .map(|mut link| {
                let base = link.remove("anchor").unwrap_or_default();
                let endpoint = link.remove("ep").unwrap_or_default();
                RemoteLink {
                    endpoint,
                    base,
                    link,
                }
            })
            .collect())
    }

    pub fn lookup_semantic(&self, query: &str) -> Result<Vec<RemoteSolution>, RdError> {
        let mut m = Message::request(Code::POST, "/rd-lookup/sem");
        m.payload = query.as_bytes().to_vec();
        let resp = self.send(m)?;
        Ok(resp
            .payload_str()
            .lines()
            .filter(|l| !l.is_empty())
            .filter_map(RemoteSolution::parse_line)
            .collect())
    }
}
