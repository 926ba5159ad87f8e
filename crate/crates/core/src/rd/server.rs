//! CoAP front end of the directory.
//!
//! | method | path                  | payload             |
//! |--------|-----------------------|---------------------|
//! | POST   | `/rd?ep&lt&base`      | link-format         |
//! | POST   | `/rd-desc?ep`         | text/turtle         |
//! | POST   | `/rd/{n}?lt`          | (refresh)           |
//! | DELETE | `/rd/{n}`             |                     |
//! | GET    | `/rd-lookup/res?rt&if&ep` | → link-format   |
//! | POST   | `/rd-lookup/sem`      | query → `ep\tvar=term` lines |

use std::net::ToSocketAddrs;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::Duration;

use super::directory::{Directory, LinkFilter, RegisterOutcome, DEFAULT_LIFETIME_S};
use super::link::serialize_links;
use super::RdError;
use crate::coap::{
    content_format, encode_uint, option, CoapError, Code, Request, Response, Server, ServerHandle,
};

pub struct RdServer {
    handle: ServerHandle,
    stop: Arc<AtomicBool>,
    sweeper: Option<JoinHandle<()>>,
    directory: Arc<Directory>,
}

impl RdServer {
    pub fn local_addr(&self) -> std::net::SocketAddr {
        self.handle.local_addr()
    }

    pub fn directory(&self) -> &Arc<Directory> {
        &self.directory
    }

    /// Blocks the calling thread for as long as the server runs.
    pub fn wait(self) {
        loop {
            thread::park();
        }
    }
}

impl Drop for RdServer {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        if let Some(t) = self.sweeper.take() {
            t.thread().unpark();
            let _ = t.join();
        }
    }
}

/// Serves `directory` on `addr`, sweeping expired entries every `sweep_every`.
pub fn serve_directory(
    addr: impl ToSocketAddrs,
    directory: Arc<Directory>,
    sweep_every: Duration,
) -> Result<RdServer, CoapError> {
    let server = Server::bind(addr)?;
    let d = directory.clone();
    let handle = server.run(move |req: &Request| Ok(route(&d, req)))?;
    let stop = Arc::new(AtomicBool::new(false));
    let sweeper = {
        let stop = stop.clone();
        let d = directory.clone();
        thread::Builder::new()
            .name("rd-sweep".into())
            .spawn(move || {
                while !stop.load(Ordering::SeqCst) {
                    thread::park_timeout(sweep_every);
                    d.expire_sweep(d.now());
                }
            })
            .map_err(CoapError::Io)?
    };
    Ok(RdServer {
        handle,
        stop,
        sweeper: Some(sweeper),
        directory,
    })
}

fn error_response(e: RdError) -> Response {
    Response::with_payload(e.code(), e.to_string())
}

fn parse_lt(req: &Request) -> Result<Option<u64>, RdError> {
    match req.message.query("lt") {
        None => Ok(None),
        Some(s) => s.parse().map(Some).map_err(|_| RdError::BadLifetime),
    }
}

pub(crate) fn route(d: &Directory, req: &Request) -> Response {
    match dispatch(d, req) {
        Ok(r) => r,
        Err(e) => error_response(e),
    }
}

fn dispatch(d: &Directory, req: &Request) -> Result<Response, RdError> {
    let m = &req.message;
    let segs = m.path_segments();
    let segs: Vec<&str> = segs.iter().map(String::as_str).collect();
    let payload = std::str::from_utf8(&m.payload).map_err(|_| RdError::BadEncoding)?;
    match (m.code, segs.as_slice()) {
        (Code::POST, ["rd"]) => {
            let ep = m.query("ep").ok_or(RdError::MissingEndpoint)?;
            let lt = parse_lt(req)?.unwrap_or(DEFAULT_LIFETIME_S);
            let base = m
                .query("base")
                .unwrap_or_else(|| format!("coap://{}", req.source));
            let (location, outcome) = d.register(&ep, lt, &base, payload)?;
            let code = match outcome {
                RegisterOutcome::Created => Code::CREATED,
                RegisterOutcome::Updated => Code::CHANGED,
            };
            let mut resp = Response::new(code);
            for seg in location.split('/').filter(|s| !s.is_empty()) {
                resp = resp.option(option::LOCATION_PATH, seg.as_bytes());
            }
            Ok(resp)
        }
        (Code::POST, ["rd-desc"]) => {
            let ep = m.query("ep").ok_or(RdError::MissingEndpoint)?;
            d.put_description(&ep, payload)?;
            Ok(Response::new(Code::CHANGED))
        }
        (Code::POST, ["rd", n]) => {
            d.update(&format!("/rd/{n}"), parse_lt(req)?)?;
            Ok(Response::new(Code::CHANGED))
        }
        (Code::DELETE, ["rd", n]) => {
            d.remove(&format!("/rd/{n}"))?;
            Ok(Response::new(Code::DELETED))
        }
        (Code::GET, ["rd-lookup", "res"]) => {
            let filter = LinkFilter {
                endpoint: m.query("ep"),
                rt: m.query("rt"),
                interface: m.query("if"),
            };
            let links: Vec<_> = d
                .lookup_links(&filter)
                .into_iter()
                .map(|h| h.link.quoted("ep", h.endpoint).quoted("anchor", h.base))
                .collect();
            Ok(
                Response::with_payload(Code::CONTENT, serialize_links(&links)).option(
                    option::CONTENT_FORMAT,
                    encode_uint(content_format::LINK_FORMAT as u64),
                ),
            )
        }
        (Code::POST, ["rd-lookup", "sem"]) => {
            let hits = d.lookup_semantic(payload)?;
            let body: String = hits
                .iter()
                .map(|h| format!("{}\t{}\n", h.endpoint, h.rendered))
                .collect();
            Ok(Response::with_payload(Code::CONTENT, body))
        }
        (code, _) if code.is_request() && known_path(&segs) => Err(RdError::MethodNotAllowed),
        _ => Err(RdError::NotFound(m.path())),
    }
}

fn known_path(segs: &[&str]) -> bool {
    matches!(
        segs,
        ["rd"] | ["rd-desc"] | ["rd", _] | ["rd-lookup", "res"] | ["rd-lookup", "sem"]
    )
}
