//! UDP request/response endpoints: a multiplexing client and a sequential server.

use std::collections::HashMap;
use std::io;
use std::net::{SocketAddr, ToSocketAddrs, UdpSocket};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use crossbeam::channel::{self, Receiver, RecvTimeoutError, Sender};
use log::{debug, trace, warn};
use parking_lot::Mutex;
use rand::Rng;
use thiserror::Error;

use super::message::{Code, CodecError, Message, MessageType};

const MAX_DATAGRAM: usize = 65_535;
const POLL_INTERVAL: Duration = Duration::from_millis(50);
/// RFC 7252 EXCHANGE_LIFETIME with default transmission parameters.
const EXCHANGE_LIFETIME: Duration = Duration::from_secs(247);

#[derive(Debug, Error)]
pub enum CoapError {
    #[error("request timed out")]
    Timeout,
    #[error("peer answered with reset")]
    ResetReceived,
    #[error("cannot bind {addr}: {source}")]
    Bind { addr: String, source: io::Error },
    #[error("not a request: {0}")]
    NotARequest(Code),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error("io: {0}")]
    Io(#[from] io::Error),
}

/// Retransmission parameters for confirmable requests.
#[derive(Debug, Clone)]
pub struct RequestConfig {
    pub ack_timeout: Duration,
    pub ack_random_factor: f64,
    pub max_retransmit: u32,
}

impl Default for RequestConfig {
    fn default() -> Self {
        RequestConfig {
            ack_timeout: Duration::from_secs(2),
            ack_random_factor: 1.5,
            max_retransmit: 4,
        }
    }
}

impl RequestConfig {
    /// Fixed timeout without jitter; convenient for loopback use and tests.
    pub fn fixed(ack_timeout: Duration, max_retransmit: u32) -> Self {
        RequestConfig {
            ack_timeout,
            ack_random_factor: 1.0,
            max_retransmit,
        }
    }

    /// The wait before each transmission attempt times out, first attempt included.
    pub fn backoff_schedule(&self, initial: Duration) -> Vec<Duration> {
        (0..=self.max_retransmit)
            .map(|i| initial * 2u32.pow(i))
            .collect()
    }

    fn initial_timeout(&self) -> Duration {
        if self.ack_random_factor <= 1.0 {
            return self.ack_timeout;
        }
        let f = rand::thread_rng().gen_range(1.0..self.ack_random_factor);
        self.ack_timeout.mul_f64(f)
    }

    /// Upper bound of the whole exchange, used as the wait for non-confirmable requests.
    pub fn total_budget(&self) -> Duration {
        self.backoff_schedule(self.ack_timeout.mul_f64(self.ack_random_factor.max(1.0)))
            .into_iter()
            .sum()
    }
}

pub fn resolve(addr: impl ToSocketAddrs) -> io::Result<SocketAddr> {
    addr.to_socket_addrs()?
        .next()
        .ok_or_else(|| io::Error::new(io::ErrorKind::NotFound, "no address"))
}

#[derive(Default)]
struct ClientShared {
    pending: Mutex<HashMap<Vec<u8>, Sender<Message>>>,
    /// (peer, message id) of outstanding confirmables, for matching empty RSTs.
    by_mid: Mutex<HashMap<(SocketAddr, u16), Vec<u8>>>,
    observers: Mutex<HashMap<Vec<u8>, Sender<Message>>>,
    next_mid: Mutex<HashMap<SocketAddr, u16>>,
    closed: AtomicBool,
}

struct ClientInner {
    socket: Arc<UdpSocket>,
    shared: Arc<ClientShared>,
    token_prefix: u32,
    token_counter: AtomicU64,
    reader: Mutex<Option<JoinHandle<()>>>,
}

impl Drop for ClientInner {
    fn drop(&mut self) {
        self.shared.closed.store(true, Ordering::SeqCst);
        if let Some(h) = self.reader.lock().take() {
            let _ = h.join();
        }
    }
}

/// A CoAP client bound to one local UDP socket. Cloning shares the socket.
#[derive(Clone)]
pub struct Client {
    inner: Arc<ClientInner>,
}

/// Stream of notifications for one Observe registration.
pub struct Observation {
    pub initial: Message,
    pub token: Vec<u8>,
    pub peer: SocketAddr,
    path: String,
    rx: Receiver<Message>,
    client: Client,
}

impl Observation {
    pub fn recv_timeout(&self, timeout: Duration) -> Option<Message> {
        self.rx.recv_timeout(timeout).ok()
    }

    pub fn receiver(&self) -> &Receiver<Message> {
        &self.rx
    }

    pub fn path(&self) -> &str {
        &self.path
    }

    /// Deregisters at the server (Observe=1) and stops local delivery.
    /// Merely dropping an observation stops delivery; the server learns of it by RST.
    pub fn cancel(self, cfg: &RequestConfig) -> Result<(), CoapError> {
        self.client
            .inner
            .shared
            .observers
            .lock()
            .remove(&self.token);
        let mut m = Message::request(Code::GET, &self.path);
        m.token = self.token.clone();
        m.set_observe(1);
        self.client
            .request_with_token(self.peer, m, cfg)
            .map(|_| ())
    }
}

impl Drop for Observation {
    fn drop(&mut self) {
        self.client
            .inner
            .shared
            .observers
            .lock()
            .remove(&self.token);
    }
}

impl Client {
    pub fn bind(addr: impl ToSocketAddrs) -> Result<Client, CoapError> {
        let addr = resolve(addr)?;
        let socket = UdpSocket::bind(addr).map_err(|source| CoapError::Bind {
            addr: addr.to_string(),
            source,
        })?;
        socket.set_read_timeout(Some(POLL_INTERVAL))?;
        let socket = Arc::new(socket);
        let shared = Arc::new(ClientShared::default());
        let reader = {
            let socket = socket.clone();
            let shared = shared.clone();
            thread::Builder::new()
                .name("coap-client".into())
                .spawn(move || client_reader(socket, shared))?
        };
        Ok(Client {
            inner: Arc::new(ClientInner {
                socket,
                shared,
                token_prefix: rand::random(),
                token_counter: AtomicU64::new(1),
                reader: Mutex::new(Some(reader)),
            }),
        })
    }

    /// Client on an ephemeral loopback port.
    pub fn loopback() -> Result<Client, CoapError> {
        Client::bind("127.0.0.1:0")
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.inner.socket.local_addr().expect("bound socket")
    }

    fn next_token(&self) -> Vec<u8> {
        let n = self.inner.token_counter.fetch_add(1, Ordering::Relaxed) as u32;
        let mut t = self.inner.token_prefix.to_be_bytes().to_vec();
        t.extend_from_slice(&n.to_be_bytes());
        t
    }

    fn next_mid(&self, peer: SocketAddr) -> u16 {
        let mut mids = self.inner.shared.next_mid.lock();
        let slot = mids.entry(peer).or_insert_with(rand::random);
        *slot = slot.wrapping_add(1);
        *slot
    }

    /// Sends `msg` (CON or NON request) and waits for the response with the same token.
    /// A fresh token and message id are assigned.
    pub fn request(
        &self,
        peer: SocketAddr,
        mut msg: Message,
        cfg: &RequestConfig,
    ) -> Result<Message, CoapError> {
        msg.token = self.next_token();
        self.request_with_token(peer, msg, cfg)
    }

    fn request_with_token(
        &self,
        peer: SocketAddr,
        mut msg: Message,
        cfg: &RequestConfig,
    ) -> Result<Message, CoapError> {
        if !msg.code.is_request() {
            return Err(CoapError::NotARequest(msg.code));
        }
        msg.message_id = self.next_mid(peer);
        let (tx, rx) = channel::bounded(4);
        let shared = &self.inner.shared;
        shared.pending.lock().insert(msg.token.clone(), tx);
        let confirmable = msg.msg_type == MessageType::Confirmable;
        if confirmable {
            shared
                .by_mid
                .lock()
                .insert((peer, msg.message_id), msg.token.clone());
        }
        let result = self.exchange(peer, &msg, cfg, &rx);
        shared.pending.lock().remove(&msg.token);
        if confirmable {
            shared.by_mid.lock().remove(&(peer, msg.message_id));
        }
        result
    }

    fn exchange(
        &self,
        peer: SocketAddr,
        msg: &Message,
        cfg: &RequestConfig,
        rx: &Receiver<Message>,
    ) -> Result<Message, CoapError> {
        let bytes = msg.encode()?;
        let waits = if msg.msg_type == MessageType::Confirmable {
            cfg.backoff_schedule(cfg.initial_timeout())
        } else {
            vec![cfg.total_budget()]
        };
        for (attempt, wait) in waits.into_iter().enumerate() {
            if attempt > 0 {
                debug!(
                    "retransmit {} to {peer} (attempt {attempt})",
                    msg.message_id
                );
            }
            self.inner.socket.send_to(&bytes, peer)?;
            let deadline = Instant::now() + wait;
            loop {
                let left = deadline.saturating_duration_since(Instant::now());
                match rx.recv_timeout(left) {
                    Ok(resp) if resp.msg_type == MessageType::Reset => {
                        return Err(CoapError::ResetReceived)
                    }
                    // empty ACK: separate responses are not supported, keep waiting
                    Ok(resp) if resp.code == Code::EMPTY => continue,
                    Ok(resp) => return Ok(resp),
                    Err(RecvTimeoutError::Timeout) => break,
                    Err(RecvTimeoutError::Disconnected) => return Err(CoapError::Timeout),
                }
            }
        }
        Err(CoapError::Timeout)
    }

    /// Registers an Observe relation on `path`; notifications arrive on the returned stream.
    pub fn observe(
        &self,
        peer: SocketAddr,
        path: &str,
        cfg: &RequestConfig,
    ) -> Result<Observation, CoapError> {
        let token = self.next_token();
        let (tx, rx) = channel::unbounded();
        self.inner.shared.observers.lock().insert(token.clone(), tx);
        let mut m = Message::request(Code::GET, path);
        m.token = token.clone();
        m.set_observe(0);
        match self.request_with_token(peer, m, cfg) {
            Ok(initial) => Ok(Observation {
                initial,
                token,
                peer,
                path: path.to_string(),
                rx,
                client: self.clone(),
            }),
            Err(e) => {
                self.inner.shared.observers.lock().remove(&token);
                Err(e)
            }
        }
    }
}

fn client_reader(socket: Arc<UdpSocket>, shared: Arc<ClientShared>) {
    let mut buf = vec![0u8; MAX_DATAGRAM];
    while !shared.closed.load(Ordering::SeqCst) {
        let (n, src) = match socket.recv_from(&mut buf) {
            Ok(r) => r,
            Err(e) if is_timeout(&e) => continue,
            Err(e) => {
                warn!("client socket error: {e}");
                continue;
            }
        };
        let msg = match Message::decode(&buf[..n]) {
            Ok(m) => m,
            Err(e) => {
                trace!("dropping undecodable datagram from {src}: {e}");
                continue;
            }
        };
        if msg.msg_type == MessageType::Reset {
            let token = shared.by_mid.lock().get(&(src, msg.message_id)).cloned();
            if let Some(tx) = token.and_then(|t| shared.pending.lock().get(&t).cloned()) {
                let _ = tx.try_send(msg);
            }
            continue;
        }
        if msg.msg_type == MessageType::Confirmable {
            let ack = Message::new(MessageType::Acknowledgement, Code::EMPTY, msg.message_id);
            if let Ok(b) = ack.encode() {
                let _ = socket.send_to(&b, src);
            }
        }
        // the registration response itself goes to the pending request
        if let Some(tx) = shared.pending.lock().get(&msg.token).cloned() {
            let _ = tx.try_send(msg);
            continue;
        }
        if let Some(tx) = shared.observers.lock().get(&msg.token).cloned() {
            let _ = tx.send(msg);
            continue;
        }
        if msg.msg_type == MessageType::NonConfirmable && msg.observe().is_some() {
            // unknown observation: tell the server to forget us
            let rst = Message::new(MessageType::Reset, Code::EMPTY, msg.message_id);
            if let Ok(b) = rst.encode() {
                let _ = socket.send_to(&b, src);
            }
        }
    }
}

fn is_timeout(e: &io::Error) -> bool {
    matches!(
        e.kind(),
        io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut
    )
}

/// Inbound request as seen by a handler.
#[derive(Debug, Clone)]
pub struct Request {
    pub source: SocketAddr,
    pub message: Message,
}

/// Handler reply: code, extra options and payload. Token and id are filled in by the server.
#[derive(Debug, Clone, PartialEq)]
pub struct Response {
    pub code: Code,
    pub options: Vec<(u16, Vec<u8>)>,
    pub payload: Vec<u8>,
}

impl Response {
    pub fn new(code: Code) -> Self {
        Response {
            code,
            options: Vec::new(),
            payload: Vec::new(),
        }
    }

    pub fn with_payload(code: Code, payload: impl Into<Vec<u8>>) -> Self {
        Response {
            code,
            options: Vec::new(),
            payload: payload.into(),
        }
    }

    pub fn option(mut self, number: u16, value: impl Into<Vec<u8>>) -> Self {
        self.options.push((number, value.into()));
        self
    }
}

#[derive(Debug, Error)]
#[error("{0}")]
pub struct HandlerError(pub String);

pub trait Handler: Send + 'static {
    fn handle(&mut self, req: &Request) -> Result<Response, HandlerError>;

    /// Called when a peer rejects one of our messages (typically a notification) with RST.
    fn reset(&mut self, _source: SocketAddr, _message_id: u16) {}
}

impl<F> Handler for F
where
    F: FnMut(&Request) -> Result<Response, HandlerError> + Send + 'static,
{
    fn handle(&mut self, req: &Request) -> Result<Response, HandlerError> {
        self(req)
    }
}

/// Sends unsolicited messages (Observe notifications) from a server's socket.
#[derive(Clone)]
pub struct Notifier {
    socket: Arc<UdpSocket>,
    next_mid: Arc<Mutex<u16>>,
}

impl Notifier {
    /// Sends a non-confirmable notification carrying `token`; returns its message id.
    pub fn notify(
        &self,
        dest: SocketAddr,
        token: &[u8],
        seq: u32,
        code: Code,
        payload: &[u8],
    ) -> Result<u16, CoapError> {
        let mid = {
            let mut g = self.next_mid.lock();
            *g = g.wrapping_add(1);
            *g
        };
        let mut m = Message::new(MessageType::NonConfirmable, code, mid);
        m.token = token.to_vec();
        m.set_observe(seq);
        m.payload = payload.to_vec();
        self.socket.send_to(&m.encode()?, dest)?;
        Ok(mid)
    }

    fn next_mid(&self) -> u16 {
        let mut g = self.next_mid.lock();
        *g = g.wrapping_add(1);
        *g
    }
}

/// A bound but not yet running server.
pub struct Server {
    socket: Arc<UdpSocket>,
    notifier: Notifier,
}

pub struct ServerHandle {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    thread: Option<JoinHandle<()>>,
    notifier: Notifier,
}

impl ServerHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn notifier(&self) -> Notifier {
        self.notifier.clone()
    }

    pub fn shutdown(mut self) {
        self.stop_and_join();
    }

    /// Blocks until the server thread exits (it only does after `shutdown` from elsewhere).
    pub fn join(mut self) {
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }

    fn stop_and_join(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        self.stop_and_join();
    }
}

impl Server {
    pub fn bind(addr: impl ToSocketAddrs) -> Result<Server, CoapError> {
        let addr = resolve(addr)?;
        let socket = UdpSocket::bind(addr).map_err(|source| CoapError::Bind {
            addr: addr.to_string(),
            source,
        })?;
        socket.set_read_timeout(Some(POLL_INTERVAL))?;
        let socket = Arc::new(socket);
        Ok(Server {
            notifier: Notifier {
                socket: socket.clone(),
                next_mid: Arc::new(Mutex::new(rand::random())),
            },
            socket,
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.socket.local_addr().expect("bound socket")
    }

    pub fn notifier(&self) -> Notifier {
        self.notifier.clone()
    }

    pub fn run(self, handler: impl Handler) -> Result<ServerHandle, CoapError> {
        let addr = self.local_addr();
        let stop = Arc::new(AtomicBool::new(false));
        let notifier = self.notifier.clone();
        let thread = {
            let stop = stop.clone();
            thread::Builder::new()
                .name(format!("coap-server-{}", addr.port()))
                .spawn(move || serve_loop(self.socket, self.notifier, handler, stop))?
        };
        Ok(ServerHandle {
            addr,
            stop,
            thread: Some(thread),
            notifier,
        })
    }
}

/// Binds `addr` and answers each inbound request through `handler`.
pub fn serve(addr: impl ToSocketAddrs, handler: impl Handler) -> Result<ServerHandle, CoapError> {
    Server::bind(addr)?.run(handler)
}

struct Exchange {
    at: Instant,
    /// None for NON requests, whose duplicates are simply dropped.
    response: Option<Vec<u8>>,
}

fn serve_loop(
    socket: Arc<UdpSocket>,
    notifier: Notifier,
    mut handler: impl Handler,
    stop: Arc<AtomicBool>,
) {
    let mut seen: HashMap<(SocketAddr, u16), Exchange> = HashMap::new();
    let mut last_prune = Instant::now();
    let mut buf = vec![0u8; MAX_DATAGRAM];
    while !stop.load(Ordering::SeqCst) {
        let (n, src) = match socket.recv_from(&mut buf) {
            Ok(r) => r,
            Err(e) if is_timeout(&e) => continue,
            Err(e) => {
                warn!("server socket error: {e}");
                continue;
            }
        };
        if last_prune.elapsed() > Duration::from_secs(10) {
            seen.retain(|_, ex| ex.at.elapsed() < EXCHANGE_LIFETIME);
            last_prune = Instant::now();
        }
        let msg = match Message::decode(&buf[..n]) {
            Ok(m) => m,
            Err(e) => {
                trace!("dropping undecodable datagram from {src}: {e}");
                continue;
            }
        };
        match msg.msg_type {
            MessageType::Acknowledgement => continue,
            MessageType::Reset => {
                handler.reset(src, msg.message_id);
                continue;
            }
            _ => {}
        }
        if !msg.code.is_request() {
            if msg.msg_type == MessageType::Confirmable {
                // ping or stray response
                let rst = Message::new(MessageType::Reset, Code::EMPTY, msg.message_id);
                if let Ok(b) = rst.encode() {
                    let _ = socket.send_to(&b, src);
                }
            }
            continue;
        }
        let key = (src, msg.message_id);
        if let Some(ex) = seen.get(&key) {
            if let Some(bytes) = &ex.response {
                let _ = socket.send_to(bytes, src);
            }
            continue;
        }
        let req = Request {
            source: src,
            message: msg,
        };
        let reply = match handler.handle(&req) {
            Ok(r) => r,
            Err(e) => Response::with_payload(Code::INTERNAL_SERVER_ERROR, e.0),
        };
        let msg = req.message;
        let confirmable = msg.msg_type == MessageType::Confirmable;
        let mut out = if confirmable {
            Message::new(MessageType::Acknowledgement, reply.code, msg.message_id)
        } else {
            Message::new(MessageType::NonConfirmable, reply.code, notifier.next_mid())
        };
        out.token = msg.token.clone();
        for (num, val) in reply.options {
            out.add_option(num, val);
        }
        out.payload = reply.payload;
        let bytes = match out.encode() {
            Ok(b) => b,
            Err(e) => {
                warn!("cannot encode response: {e}");
                continue;
            }
        };
        let _ = socket.send_to(&bytes, src);
        seen.insert(
            key,
            Exchange {
                at: Instant::now(),
                response: confirmable.then_some(bytes),
            },
        );
    }
}
