//! Round-trip latency of one Execute (a heat action) across integration mechanisms:
//! direct call, in-process channel, raw UDP and CoAP/LwM2M, each with client and
//! server in one process (1N) or in two processes on loopback (2N).

use std::fmt;
use std::fs;
use std::io::{self, BufRead, BufReader, Write as _};
use std::net::{SocketAddr, UdpSocket};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};
use std::str::FromStr;
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use log::{debug, info};
use parking_lot::{Condvar, Mutex};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coap::{Client, Code, Message, RequestConfig};
use crate::lwm2m::{Actuator, Caller, Device, DeviceError, DeviceHandle, ExecArgs, ResourcePath};
use crate::plant::{silo, silo_object, silo_path};

/// The logical request every scenario carries.
pub const PAYLOAD: &str = "setpoint=50";
const REPLY: &[u8] = b"ok";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum BenchScenario {
    DirectCall,
    InProcChannel,
    #[serde(rename = "RawUdp_1N")]
    RawUdp1N,
    #[serde(rename = "RawUdp_2N")]
    RawUdp2N,
    #[serde(rename = "Lwm2m_1N")]
    Lwm2m1N,
    #[serde(rename = "Lwm2m_2N")]
    Lwm2m2N,
}

impl BenchScenario {
    pub const ALL: [BenchScenario; 6] = [
        BenchScenario::DirectCall,
        BenchScenario::InProcChannel,
        BenchScenario::RawUdp1N,
        BenchScenario::RawUdp2N,
        BenchScenario::Lwm2m1N,
        BenchScenario::Lwm2m2N,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BenchScenario::DirectCall => "DirectCall",
            BenchScenario::InProcChannel => "InProcChannel",
            BenchScenario::RawUdp1N => "RawUdp_1N",
            BenchScenario::RawUdp2N => "RawUdp_2N",
            BenchScenario::Lwm2m1N => "Lwm2m_1N",
            BenchScenario::Lwm2m2N => "Lwm2m_2N",
        }
    }

    /// Whether the server side runs in a second OS process.
    pub fn two_node(self) -> bool {
        matches!(self, BenchScenario::RawUdp2N | BenchScenario::Lwm2m2N)
    }
}

impl fmt::Display for BenchScenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BenchScenario {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        BenchScenario::ALL
            .into_iter()
            .find(|sc| sc.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| {
                let names: Vec<&str> = BenchScenario::ALL.iter().map(|s| s.name()).collect();
                format!("unknown scenario {s:?} (one of {})", names.join(", "))
            })
    }
}

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("cannot launch peer: {0}")]
    Launch(String),
    #[error("{0} needs a peer command")]
    NoPeer(BenchScenario),
    #[error("too many timeouts ({0}) in {1}")]
    Timeouts(usize, BenchScenario),
    #[error("io: {0}")]
    Io(#[from] io::Error),
    #[error("bad samples file: {0}")]
    Csv(String),
}

#[derive(Debug, Clone)]
pub struct BenchOptions {
    pub n: usize,
    /// Unrecorded round trips before measuring.
    pub warmup: usize,
    /// A round trip slower than this is excluded and re-measured.
    pub timeout: Duration,
    /// Command that starts a peer process: `<cmd...> <udp|lwm2m>`; it must print
    /// `listening <addr>` and serve until its stdin closes.
    pub peer: Option<Vec<String>>,
}

impl Default for BenchOptions {
    fn default() -> Self {
        BenchOptions {
            n: 1000,
            warmup: 100,
            timeout: Duration::from_secs(1),
            peer: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LatencyStats {
    pub scenario: BenchScenario,
    pub avg_ms: f64,
    pub min_ms: f64,
    pub max_ms: f64,
    /// Sample standard deviation.
    pub stdev_ms: f64,
    pub samples: Vec<f64>,
    /// Timed-out round trips that were dropped and re-measured.
    pub excluded: usize,
}

impl LatencyStats {
    pub fn from_samples(scenario: BenchScenario, samples: Vec<f64>) -> LatencyStats {
        let n = samples.len();
        let (avg, min, max, stdev) = if n == 0 {
            (0.0, 0.0, 0.0, 0.0)
        } else {
            let avg = samples.iter().sum::<f64>() / n as f64;
            let min = samples.iter().copied().fold(f64::INFINITY, f64::min);
            let max = samples.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let stdev = if n > 1 {
                (samples.iter().map(|s| (s - avg).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
            } else {
                0.0
            };
            (avg, min, max, stdev)
        };
        LatencyStats {
            scenario,
            avg_ms: avg,
            min_ms: min,
            max_ms: max,
            stdev_ms: stdev,
            samples,
            excluded: 0,
        }
    }

    /// Raw samples as CSV (`index,rtt_ms`), full precision.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("index,rtt_ms\n");
        for (i, s) in self.samples.iter().enumerate() {
            out.push_str(&format!("{i},{s}\n"));
        }
        out
    }

    pub fn csv_path(&self, dir: &Path) -> PathBuf {
        dir.join(format!("bench-{}.csv", self.scenario))
    }

    pub fn write_csv(&self, dir: &Path) -> io::Result<PathBuf> {
        let path = self.csv_path(dir);
        fs::write(&path, self.to_csv())?;
        Ok(path)
    }
}

pub fn parse_samples_csv(text: &str) -> Result<Vec<f64>, BenchError> {
    let mut lines = text.lines();
    match lines.next() {
        Some("index,rtt_ms") => {}
        other => return Err(BenchError::Csv(format!("unexpected header {other:?}"))),
    }
    lines
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            l.split_once(',')
                .and_then(|(_, v)| v.trim().parse::<f64>().ok())
                .ok_or_else(|| BenchError::Csv(format!("bad row {l:?}")))
        })
        .collect()
}

/// Fixed-width table: one column per scenario, rows avg/min/max/stdev in ms.
pub fn report(stats: &[LatencyStats]) -> String {
    let width = stats
        .iter()
        .map(|s| s.scenario.name().len())
        .max()
        .unwrap_or(0)
        .max(10);
    let mut out = format!("{:<6}", "ms");
    for s in stats {
        out.push_str(&format!(" {:>width$}", s.scenario.name()));
    }
    out.push('\n');
    let rows: [(&str, fn(&LatencyStats) -> f64); 4] = [
        ("avg", |s| s.avg_ms),
        ("min", |s| s.min_ms),
        ("max", |s| s.max_ms),
        ("stdev", |s| s.stdev_ms),
    ];
    for (name, get) in rows {
        out.push_str(&format!("{name:<6}"));
        for s in stats {
            out.push_str(&format!(" {:>width$.2}", get(s)));
        }
        out.push('\n');
    }
    out
}

/// The Execute handler itself: find the setpoint argument and check its range.
pub fn heat_action(args: &str) -> Result<f64, DeviceError> {
    let raw = args
        .split(',')
        .find_map(|kv| kv.trim().strip_prefix("setpoint="))
        .ok_or_else(|| DeviceError::BadArgs("setpoint missing".into()))?;
    let sp: f64 = raw
        .trim()
        .parse()
        .map_err(|_| DeviceError::BadArgs(format!("setpoint {raw:?} is not a number")))?;
    if !(0.0..=1000.0).contains(&sp) {
        return Err(DeviceError::BadArgs(format!("setpoint {sp} out of range")));
    }
    Ok(sp)
}

struct BenchActuator;

impl Actuator for BenchActuator {
    fn execute(
        &self,
        _: &DeviceHandle,
        path: ResourcePath,
        args: &ExecArgs,
        _: &Caller,
    ) -> Result<(), DeviceError> {
        if path.resource_id != silo::HEAT {
            return Err(DeviceError::Unsupported(path.to_string()));
        }
        match args.get("setpoint") {
            Some(v) => heat_action(&format!("setpoint={v}")).map(|_| ()),
            None => Err(DeviceError::BadArgs("setpoint missing".into())),
        }
    }
}

/// A bench server kind that can live in a peer process.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PeerKind {
    Udp,
    Lwm2m,
}

impl FromStr for PeerKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "udp" => Ok(PeerKind::Udp),
            "lwm2m" => Ok(PeerKind::Lwm2m),
            other => Err(format!("unknown peer kind {other:?} (udp|lwm2m)")),
        }
    }
}

impl fmt::Display for PeerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PeerKind::Udp => "udp",
            PeerKind::Lwm2m => "lwm2m",
        })
    }
}

enum ServerSide {
    Udp(SocketAddr),
    Device(Device),
}

impl ServerSide {
    fn start(kind: PeerKind) -> io::Result<ServerSide> {
        match kind {
            PeerKind::Udp => {
                let sock = UdpSocket::bind("127.0.0.1:0")?;
                let addr = sock.local_addr()?;
                thread::Builder::new()
                    .name("bench-udp".into())
                    .spawn(move || udp_echo(sock))?;
                Ok(ServerSide::Udp(addr))
            }
            PeerKind::Lwm2m => {
                let def = silo_object();
                let inst = def.instantiate(0);
                let dev = Device::start(
                    "127.0.0.1:0",
                    "bench",
                    vec![def],
                    vec![inst],
                    Arc::new(BenchActuator),
                )
                .map_err(|e| io::Error::other(e.to_string()))?;
                Ok(ServerSide::Device(dev))
            }
        }
    }

    fn addr(&self) -> SocketAddr {
        match self {
            ServerSide::Udp(a) => *a,
            ServerSide::Device(d) => d.local_addr(),
        }
    }
}

fn udp_echo(sock: UdpSocket) {
    let mut buf = [0u8; 1500];
    loop {
        let Ok((n, from)) = sock.recv_from(&mut buf) else {
            return;
        };
        if &buf[..n] == b"quit" {
            return;
        }
        let reply: &[u8] = match std::str::from_utf8(&buf[..n]).ok().map(heat_action) {
            Some(Ok(_)) => REPLY,
            _ => b"error",
        };
        let _ = sock.send_to(reply, from);
    }
}

/// Body of the peer process: serve `kind` on loopback, print the address, and exit
/// when stdin closes.
pub fn run_peer(kind: PeerKind) -> io::Result<()> {
    let side = ServerSide::start(kind)?;
    let mut out = io::stdout();
    writeln!(out, "listening {}", side.addr())?;
    out.flush()?;
    let mut sink = String::new();
    while io::stdin().read_line(&mut sink)? > 0 {
        sink.clear();
    }
    if let ServerSide::Device(d) = side {
        d.shutdown();
    }
    Ok(())
}

struct Peer {
    child: Child,
    addr: SocketAddr,
}

impl Peer {
    fn launch(cmd: &[String], kind: PeerKind) -> Result<Peer, BenchError> {
        let (prog, args) = cmd
            .split_first()
            .ok_or_else(|| BenchError::Launch("empty peer command".into()))?;
        let mut child = Command::new(prog)
            .args(args)
            .arg(kind.to_string())
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .spawn()
            .map_err(|e| BenchError::Launch(format!("{prog}: {e}")))?;
        let stdout = child.stdout.take().expect("piped stdout");
        let mut line = String::new();
        BufReader::new(stdout).read_line(&mut line)?;
        let addr = line
            .trim()
            .strip_prefix("listening ")
            .and_then(|a| a.parse().ok())
            .ok_or_else(|| {
                let _ = child.kill();
                BenchError::Launch(format!("peer said {:?}", line.trim()))
            })?;
        debug!("peer {kind} at {addr}");
        Ok(Peer { child, addr })
    }
}

impl Drop for Peer {
    fn drop(&mut self) {
        drop(self.child.stdin.take());
        if self.child.try_wait().ok().flatten().is_none() {
            thread::sleep(Duration::from_millis(20));
            let _ = self.child.kill();
        }
        let _ = self.child.wait();
    }
}

/// One-slot message channel between two threads. The receiver parks right away
/// instead of spinning first, which matters when both threads share one core.
struct Mailbox<T> {
    slot: Mutex<(Option<T>, bool)>,
    ready: Condvar,
}

impl<T> Default for Mailbox<T> {
    fn default() -> Self {
        Mailbox {
            slot: Mutex::new((None, false)),
            ready: Condvar::new(),
        }
    }
}

impl<T> Mailbox<T> {
    fn send(&self, v: T) {
        self.slot.lock().0 = Some(v);
        self.ready.notify_one();
    }

    fn close(&self) {
        self.slot.lock().1 = true;
        self.ready.notify_one();
    }

    /// Next message; `None` once closed or after `timeout`.
    fn recv(&self, timeout: Option<Duration>) -> Option<T> {
        let deadline = timeout.map(|t| Instant::now() + t);
        let mut g = self.slot.lock();
        loop {
            if let Some(v) = g.0.take() {
                return Some(v);
            }
            if g.1 {
                return None;
            }
            match deadline {
                Some(d) => {
                    if self.ready.wait_until(&mut g, d).timed_out() {
                        return g.0.take();
                    }
                }
                None => self.ready.wait(&mut g),
            }
        }
    }
}

/// Times `n` sequential round trips after `warmup` unrecorded ones. `trip` returns
/// false on timeout; such trips are excluded and repeated.
fn measure(
    scenario: BenchScenario,
    opts: &BenchOptions,
    mut trip: impl FnMut() -> bool,
) -> Result<LatencyStats, BenchError> {
    let limit = opts.n.max(10);
    let mut excluded = 0;
    for _ in 0..opts.warmup {
        trip();
    }
    let mut samples = Vec::with_capacity(opts.n);
    while samples.len() < opts.n {
        let t = Instant::now();
        let ok = trip();
        let ms = t.elapsed().as_secs_f64() * 1000.0;
        if ok {
            samples.push(ms);
        } else {
            excluded += 1;
            if excluded > limit {
                return Err(BenchError::Timeouts(excluded, scenario));
            }
        }
    }
    let mut stats = LatencyStats::from_samples(scenario, samples);
    stats.excluded = excluded;
    info!(
        "{scenario}: n={} avg={:.4} ms excluded={excluded}",
        opts.n, stats.avg_ms
    );
    Ok(stats)
}

fn udp_client(
    server: SocketAddr,
    opts: &BenchOptions,
    scenario: BenchScenario,
) -> Result<LatencyStats, BenchError> {
    let sock = UdpSocket::bind("127.0.0.1:0")?;
    sock.connect(server)?;
    sock.set_read_timeout(Some(opts.timeout))?;
    let mut buf = [0u8; 64];
    let stats = measure(scenario, opts, || {
        if sock.send(PAYLOAD.as_bytes()).is_err() {
            return false;
        }
        match sock.recv(&mut buf) {
            Ok(n) => &buf[..n] == REPLY,
            Err(_) => {
                // drop a late reply so it is not taken for the next one
                let _ = sock.set_nonblocking(true);
                while sock.recv(&mut buf).is_ok() {}
                let _ = sock.set_nonblocking(false);
                false
            }
        }
    })?;
    Ok(stats)
}

fn lwm2m_client(
    server: SocketAddr,
    opts: &BenchOptions,
    scenario: BenchScenario,
) -> Result<LatencyStats, BenchError> {
    let client = Client::bind("127.0.0.1:0").map_err(|e| io::Error::other(e.to_string()))?;
    let cfg = RequestConfig::fixed(opts.timeout, 0);
    let path = silo_path(silo::HEAT);
    measure(scenario, opts, || {
        let mut m = Message::request(Code::POST, &path);
        m.payload = PAYLOAD.as_bytes().to_vec();
        matches!(client.request(server, m, &cfg), Ok(r) if r.code == Code::CHANGED)
    })
}

/// Runs one scenario.
pub fn run_bench(scenario: BenchScenario, opts: &BenchOptions) -> Result<LatencyStats, BenchError> {
    match scenario {
        BenchScenario::DirectCall => measure(scenario, opts, || {
            std::hint::black_box(heat_action(std::hint::black_box(PAYLOAD))).is_ok()
        }),
        BenchScenario::InProcChannel => {
            let requests = Arc::new(Mailbox::<String>::default());
            let replies = Arc::new(Mailbox::<Result<f64, DeviceError>>::default());
            let server = {
                let (requests, replies) = (requests.clone(), replies.clone());
                thread::Builder::new()
                    .name("bench-chan".into())
                    .spawn(move || {
                        while let Some(r) = requests.recv(None) {
                            replies.send(heat_action(&r));
                        }
                    })?
            };
            let stats = measure(scenario, opts, || {
                requests.send(PAYLOAD.to_string());
                matches!(replies.recv(Some(opts.timeout)), Some(Ok(_)))
            });
            requests.close();
            let _ = server.join();
            stats
        }
        BenchScenario::RawUdp1N => {
            let side = ServerSide::start(PeerKind::Udp)?;
            let stats = udp_client(side.addr(), opts, scenario);
            let _ = UdpSocket::bind("127.0.0.1:0").and_then(|s| s.send_to(b"quit", side.addr()));
            stats
        }
        BenchScenario::Lwm2m1N => {
            let side = ServerSide::start(PeerKind::Lwm2m)?;
            let stats = lwm2m_client(side.addr(), opts, scenario);
            if let ServerSide::Device(d) = side {
                d.shutdown();
            }
            stats
        }
        BenchScenario::RawUdp2N | BenchScenario::Lwm2m2N => {
            let cmd = opts.peer.as_ref().ok_or(BenchError::NoPeer(scenario))?;
            let kind = if scenario == BenchScenario::RawUdp2N {
                PeerKind::Udp
            } else {
                PeerKind::Lwm2m
            };
            let peer = Peer::launch(cmd, kind)?;
            let stats = match kind {
                PeerKind::Udp => udp_client(peer.addr, opts, scenario),
                PeerKind::Lwm2m => lwm2m_client(peer.addr, opts, scenario),
            };
            drop(peer);
            stats
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_form_stats() {
        let s = LatencyStats::from_samples(BenchScenario::DirectCall, vec![1.0, 2.0, 3.0]);
        assert_eq!(
            (s.avg_ms, s.min_ms, s.max_ms, s.stdev_ms),
            (2.0, 1.0, 3.0, 1.0)
        );
        let one = LatencyStats::from_samples(BenchScenario::DirectCall, vec![4.0]);
        assert_eq!(one.stdev_ms, 0.0);
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let s = LatencyStats::from_samples(BenchScenario::Lwm2m1N, vec![0.1, 1.0 / 3.0, 2.5e-5]);
        assert_eq!(parse_samples_csv(&s.to_csv()).unwrap(), s.samples);
        assert!(parse_samples_csv("x\n").is_err());
    }

    #[test]
    fn report_shape() {
        let one = report(&[LatencyStats::from_samples(
            BenchScenario::DirectCall,
            vec![1.0, 2.0, 3.0],
        )]);
        let lines: Vec<&str> = one.lines().collect();
        assert_eq!(lines.len(), 5);
        assert!(lines[1].starts_with("avg") && lines[1].ends_with("2.00"));
        assert!(lines[4].starts_with("stdev") && lines[4].ends_with("1.00"));
        let all: Vec<_> = BenchScenario::ALL
            .iter()
            .map(|s| LatencyStats::from_samples(*s, vec![1.0]))
            .collect();
        let t = report(&all);
        assert!(t.lines().all(|l| l.split_whitespace().count() == 7));
    }

    #[test]
    fn scenario_names() {
        for s in BenchScenario::ALL {
            assert_eq!(s.name().parse::<BenchScenario>().unwrap(), s);
        }
        assert_eq!(
            "rawudp_2n".parse::<BenchScenario>().unwrap(),
            BenchScenario::RawUdp2N
        );
        assert!("Docker".parse::<BenchScenario>().is_err());
    }

    #[test]
    fn heat_action_validates() {
        assert_eq!(heat_action(PAYLOAD).unwrap(), 50.0);
        assert!(heat_action("volume=3").is_err());
        assert!(heat_action("setpoint=x").is_err());
    }

    #[test]
    fn one_node_scenarios_run() {
        let opts = BenchOptions {
            n: 50,
            warmup: 5,
            ..Default::default()
        };
        for s in [
            BenchScenario::DirectCall,
            BenchScenario::InProcChannel,
            BenchScenario::RawUdp1N,
            BenchScenario::Lwm2m1N,
        ] {
            let st = run_bench(s, &opts).unwrap();
            assert_eq!(st.samples.len(), 50);
            assert!(st.min_ms <= st.avg_ms && st.avg_ms <= st.max_ms && st.stdev_ms >= 0.0);
        }
        assert!(matches!(
            run_bench(BenchScenario::Lwm2m2N, &opts),
            Err(BenchError::NoPeer(_))
        ));
    }
}
