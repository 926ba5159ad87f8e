use std::collections::BTreeSet;
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::thread;
use std::time::{Duration, Instant};

use log::{debug, warn};
use serde::Serialize;

use super::discovery::{Catalog, PipeInfo, Topology};
use super::plan::{temp_after, transform_pim_to_psm, BindingMode, BoundPlan, BoundStep, Planner};
use super::process::{ProcessSpec, ServiceRequest};
use super::OrchestratorError;
use crate::coap::{Client, Code, Message, RequestConfig};
use crate::plant::{pipe, pipe_path, silo, silo_path, Service};
use crate::rd::RdClient;
use crate::semantic::format_number;

/// Bounded retry with doubling delays.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetryPolicy {
    pub base: Duration,
    pub attempts: u32,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            base: Duration::from_millis(100),
            attempts: 5,
        }
    }
}

impl RetryPolicy {
    /// Wait after the failed attempt `attempt` (0-based).
    pub fn delay(&self, attempt: u32) -> Duration {
        self.base * 2u32.saturating_pow(attempt)
    }
}

#[derive(Debug, Clone)]
pub struct ExecOptions {
    /// Reservation token identifying this process instance.
    pub holder: String,
    pub step_timeout: Duration,
    pub retry: RetryPolicy,
    pub request: RequestConfig,
    /// Origin of trace timestamps; the process start when `None`. Sharing one epoch
    /// puts the traces of concurrent instances on a common time axis.
    pub epoch: Option<Instant>,
}

static INSTANCE: AtomicU64 = AtomicU64::new(1);

impl ExecOptions {
    pub fn new(holder: impl Into<String>) -> Self {
        ExecOptions {
            holder: holder.into(),
            step_timeout: Duration::from_secs(30),
            retry: RetryPolicy::default(),
            request: RequestConfig::default(),
            epoch: None,
        }
    }

    /// A holder token unique within this OS process: `name-pid-n`.
    pub fn unique(name: &str) -> Self {
        let n = INSTANCE.fetch_add(1, Ordering::Relaxed);
        ExecOptions::new(format!("{name}-{}-{n}", std::process::id()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum Outcome {
    Ok,
    Error(String),
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Outcome::Ok => f.write_str("ok"),
            Outcome::Error(r) => write!(f, "error({r})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepRecord {
    pub index: usize,
    pub step: String,
    pub endpoint: String,
    /// Milliseconds since the process started.
    pub start_ms: f64,
    pub end_ms: f64,
    pub outcome: Outcome,
}

impl StepRecord {
    /// `ts step endpoint outcome`, the timestamp in seconds.
    pub fn line(&self) -> String {
        format!(
            "{:.3} {}:{} {} {}",
            self.start_ms / 1000.0,
            self.index,
            self.step,
            self.endpoint,
            self.outcome
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProcessTrace {
    pub process: String,
    pub holder: String,
    pub mode: BindingMode,
    pub records: Vec<StepRecord>,
    /// Batch summary read just before delivery.
    pub batch: Option<String>,
    pub error: Option<OrchestratorError>,
}

impl ProcessTrace {
    pub fn is_ok(&self) -> bool {
        self.error.is_none()
    }

    pub fn steps(&self) -> Vec<String> {
        self.records
            .iter()
            .map(|r| format!("{}@{}", r.step, r.endpoint))
            .collect()
    }

    /// The trace text with timestamps blanked, for comparing runs.
    pub fn normalized(&self) -> String {
        self.to_string()
            .lines()
            .map(|l| match l.split_once(' ') {
                Some((ts, rest)) if ts.parse::<f64>().is_ok() => format!("- {rest}"),
                _ => l.to_string(),
            })
            .collect::<Vec<_>>()
            .join("\n")
    }
}

impl fmt::Display for ProcessTrace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "# process {} ({})", self.process, self.mode)?;
        for r in &self.records {
            writeln!(f, "{}", r.line())?;
        }
        if let Some(b) = &self.batch {
            writeln!(f, "# batch {b}")?;
        }
        match &self.error {
            None => writeln!(f, "# result ok"),
            Some(e) => writeln!(f, "# result error: {e}"),
        }
    }
}

/// Reservation resource of a silo or pipe.
fn reserved_path(topo: &Topology, endpoint: &str) -> String {
    if topo.is_pipe(endpoint) {
        pipe_path(pipe::RESERVED)
    } else {
        silo_path(silo::RESERVED)
    }
}

fn holder_path(topo: &Topology, endpoint: &str) -> String {
    if topo.is_pipe(endpoint) {
        pipe_path(pipe::HOLDER)
    } else {
        silo_path(silo::HOLDER)
    }
}

fn send(
    client: &Client,
    topo: &Topology,
    endpoint: &str,
    code: Code,
    uri: &str,
    payload: &str,
    cfg: &RequestConfig,
) -> Result<Message, OrchestratorError> {
    let addr = topo.address(endpoint)?;
    let mut m = Message::request(code, uri);
    m.payload = payload.as_bytes().to_vec();
    client
        .request(addr, m, cfg)
        .map_err(|_| OrchestratorError::Unreachable(endpoint.to_string()))
}

fn device_error(endpoint: &str, resp: &Message) -> OrchestratorError {
    OrchestratorError::DeviceError {
        endpoint: endpoint.to_string(),
        code: resp.code.to_string(),
        reason: resp.payload_str(),
    }
}

/// Claims `endpoint` for `holder` (compare-and-set of its reserved flag).
/// `Ok(false)` when someone else holds it.
pub fn reserve(
    client: &Client,
    topo: &Topology,
    endpoint: &str,
    holder: &str,
    cfg: &RequestConfig,
) -> Result<bool, OrchestratorError> {
    let uri = format!("{}?holder={holder}", reserved_path(topo, endpoint));
    let resp = send(client, topo, endpoint, Code::PUT, &uri, "true", cfg)?;
    match resp.code {
        Code::CHANGED => Ok(true),
        Code::CONFLICT => Ok(false),
        _ => Err(device_error(endpoint, &resp)),
    }
}

/// Gives `endpoint` back; rejected by the device unless `holder` holds it.
pub fn release(
    client: &Client,
    topo: &Topology,
    endpoint: &str,
    holder: &str,
    cfg: &RequestConfig,
) -> Result<(), OrchestratorError> {
    let uri = format!("{}?holder={holder}", reserved_path(topo, endpoint));
    let resp = send(client, topo, endpoint, Code::PUT, &uri, "false", cfg)?;
    if resp.code == Code::CHANGED {
        Ok(())
    } else {
        Err(device_error(endpoint, &resp))
    }
}

struct Run<'a> {
    planner: Planner<'a>,
    opts: &'a ExecOptions,
    mode: BindingMode,
    client: Client,
    t0: Instant,
    held: BTreeSet<String>,
    loc: Option<String>,
    temp: f64,
    trace: ProcessTrace,
}

impl<'a> Run<'a> {
    fn topo(&self) -> &'a Topology {
        self.planner.topo
    }

    fn now_ms(&self) -> f64 {
        self.t0.elapsed().as_secs_f64() * 1000.0
    }

    fn send(
        &self,
        endpoint: &str,
        code: Code,
        path: &str,
        payload: &str,
    ) -> Result<Message, OrchestratorError> {
        let uri = format!("{path}?holder={}", self.opts.holder);
        send(
            &self.client,
            self.topo(),
            endpoint,
            code,
            &uri,
            payload,
            &self.opts.request,
        )
    }

    /// A failed write or execute: lost reservation if someone else now holds the unit.
    fn failure(&self, endpoint: &str, resp: &Message) -> OrchestratorError {
        if resp.code == Code::CONFLICT {
            let holder = send(
                &self.client,
                self.topo(),
                endpoint,
                Code::GET,
                &holder_path(self.topo(), endpoint),
                "",
                &self.opts.request,
            );
            if let Ok(h) = holder {
                if h.code.is_success() && h.payload_str() != self.opts.holder {
                    return OrchestratorError::ReservationLost(endpoint.to_string());
                }
            }
        }
        device_error(endpoint, resp)
    }

    fn expect_changed(&self, endpoint: &str, resp: Message) -> Result<(), OrchestratorError> {
        if resp.code == Code::CHANGED {
            Ok(())
        } else {
            Err(self.failure(endpoint, &resp))
        }
    }

    /// One reservation attempt over all of `endpoints`; all or nothing.
    fn try_acquire(
        &mut self,
        endpoints: &BTreeSet<String>,
    ) -> Result<Option<String>, OrchestratorError> {
        let mut fresh = Vec::new();
        for ep in endpoints {
            if self.held.contains(ep) {
                continue;
            }
            match reserve(
                &self.client,
                self.topo(),
                ep,
                &self.opts.holder,
                &self.opts.request,
            ) {
                Ok(true) => {
                    self.held.insert(ep.clone());
                    fresh.push(ep.clone());
                }
                Ok(false) => {
                    fresh.iter().for_each(|e| self.release(e));
                    return Ok(Some(ep.clone()));
                }
                Err(e) => {
                    fresh.iter().for_each(|e| self.release(e));
                    return Err(e);
                }
            }
        }
        Ok(None)
    }

    fn acquire(&mut self, endpoints: &BTreeSet<String>) -> Result<(), OrchestratorError> {
        let retry = self.opts.retry;
        let mut blocked = String::new();
        for attempt in 0..retry.attempts {
            match self.try_acquire(endpoints)? {
                None => return Ok(()),
                Some(b) => blocked = b,
            }
            debug!(
                "{}: {blocked} busy (attempt {})",
                self.opts.holder,
                attempt + 1
            );
            if attempt + 1 < retry.attempts {
                thread::sleep(retry.delay(attempt));
            }
        }
        Err(OrchestratorError::Busy(blocked))
    }

    fn release(&mut self, endpoint: &str) {
        if !self.held.remove(endpoint) {
            return;
        }
        if let Err(e) = release(
            &self.client,
            self.topo(),
            endpoint,
            &self.opts.holder,
            &self.opts.request,
        ) {
            warn!("{}: releasing {endpoint} failed: {e}", self.opts.holder);
        }
    }

    fn release_all(&mut self) {
        for ep in self.held.clone() {
            self.release(&ep);
        }
    }

    /// Runs one step and records it.
    fn record(
        &mut self,
        step: String,
        endpoint: &str,
        body: impl FnOnce(&mut Self) -> Result<(), OrchestratorError>,
    ) -> Result<(), OrchestratorError> {
        let start_ms = self.now_ms();
        let result = body(self);
        let record = StepRecord {
            index: self.trace.records.len() + 1,
            step,
            endpoint: endpoint.to_string(),
            start_ms,
            end_ms: self.now_ms(),
            outcome: match &result {
                Ok(()) => Outcome::Ok,
                Err(e) => Outcome::Error(e.to_string()),
            },
        };
        debug!("{}: {}", self.opts.holder, record.line());
        self.trace.records.push(record);
        result
    }

    /// Write parameters, Execute, then wait until the unit reports Idle again.
    fn actuate(
        &mut self,
        endpoint: &str,
        writes: &[(String, String)],
        exec_path: &str,
        args: &str,
        step_index: usize,
    ) -> Result<(), OrchestratorError> {
        let state_path = if self.topo().is_pipe(endpoint) {
            pipe_path(pipe::STATE)
        } else {
            silo_path(silo::STATE)
        };
        for (path, value) in writes {
            let resp = self.send(endpoint, Code::PUT, path, value)?;
            self.expect_changed(endpoint, resp)?;
        }
        let addr = self.topo().address(endpoint)?;
        let obs = self
            .client
            .observe(addr, &state_path, &self.opts.request)
            .map_err(|_| OrchestratorError::Unreachable(endpoint.to_string()))?;
        let resp = self.send(endpoint, Code::POST, exec_path, args)?;
        self.expect_changed(endpoint, resp)?;
        let deadline = Instant::now() + self.opts.step_timeout;
        let poll = Duration::from_millis(250);
        loop {
            let left = deadline.saturating_duration_since(Instant::now());
            match obs.recv_timeout(left.min(poll)) {
                Some(n) if n.payload_str() == "Idle" => break,
                Some(_) => continue,
                None if left.is_zero() => {
                    return Err(OrchestratorError::StepTimeout {
                        step: step_index,
                        endpoint: endpoint.to_string(),
                    })
                }
                None => {
                    // a lost notification must not stall the process
                    let r = self.send(endpoint, Code::GET, &state_path, "")?;
                    if r.payload_str() == "Idle" {
                        break;
                    }
                }
            }
        }
        let _ = obs.cancel(&self.opts.request);
        Ok(())
    }

    fn next_index(&self) -> usize {
        self.trace.records.len() + 1
    }

    fn fill(
        &mut self,
        endpoint: &str,
        ingredient: &str,
        volume: f64,
    ) -> Result<(), OrchestratorError> {
        let i = self.next_index();
        let args = format!("ingredient={ingredient},volume={}", format_number(volume));
        self.record("Fill".into(), endpoint, |r| {
            r.actuate(endpoint, &[], &silo_path(silo::FILL), &args, i)
        })
    }

    fn apply(
        &mut self,
        endpoint: &str,
        path: &str,
        req: &ServiceRequest,
    ) -> Result<(), OrchestratorError> {
        let i = self.next_index();
        let mut writes = Vec::new();
        match req.service() {
            Some(Service::Heat) => writes.push((silo_path(silo::SETPOINT), req.param("setpoint"))),
            Some(Service::Mix) => {
                writes.push((silo_path(silo::MIX_DURATION), req.param("duration")))
            }
            _ => {}
        }
        let writes: Vec<(String, String)> = writes
            .into_iter()
            .filter_map(|(p, v)| Some((p, format_number(v?))))
            .collect();
        self.record(req.label.clone(), endpoint, |r| {
            r.actuate(endpoint, &writes, path, "", i)
        })?;
        self.temp = temp_after(self.temp, req);
        Ok(())
    }

    fn transfer(&mut self, hop: &PipeInfo, volume: Option<f64>) -> Result<(), OrchestratorError> {
        let i = self.next_index();
        let writes = vec![(
            pipe_path(pipe::VOLUME),
            format_number(volume.unwrap_or(0.0)),
        )];
        let label = format!("Transfer({}->{})", hop.from, hop.to);
        self.record(label, &hop.id, |r| {
            r.actuate(&hop.id, &writes, &pipe_path(pipe::TRANSFER), "", i)
        })?;
        self.loc = Some(hop.to.clone());
        Ok(())
    }

    fn empty(&mut self, endpoint: &str) -> Result<(), OrchestratorError> {
        let i = self.next_index();
        self.record("Empty".into(), endpoint, |r| {
            let b = r.send(endpoint, Code::GET, &silo_path(silo::BATCH), "")?;
            if b.code.is_success() {
                r.trace.batch = Some(b.payload_str());
            }
            r.actuate(endpoint, &[], &silo_path(silo::EMPTY), "", i)
        })?;
        self.loc = None;
        Ok(())
    }

    /// Dynamic mode: pushes the batch along `route`, whose units are already held,
    /// letting go of each pipe and each silo left behind.
    fn move_along(&mut self, route: &[PipeInfo]) -> Result<(), OrchestratorError> {
        for hop in route {
            self.transfer(hop, None)?;
            self.release(&hop.id);
            self.release(&hop.from);
        }
        Ok(())
    }

    fn route_units(route: &[PipeInfo]) -> BTreeSet<String> {
        route
            .iter()
            .flat_map(|h| [h.id.clone(), h.to.clone()])
            .collect()
    }

    fn move_to(&mut self, dest: &str) -> Result<(), OrchestratorError> {
        let from = self.loc.clone().expect("batch exists");
        let route = self.planner.route(&from, dest, self.temp)?;
        self.acquire(&Self::route_units(&route))?;
        self.move_along(&route)
    }

    /// Dynamic mode: picks a provider that can be reserved now (with retries) and
    /// brings the batch there.
    fn resolve(&mut self, req: &ServiceRequest) -> Result<String, OrchestratorError> {
        let loc = self.loc.clone().expect("batch exists");
        let retry = self.opts.retry;
        let mut blocked = String::new();
        for attempt in 0..retry.attempts {
            let options = self.planner.options(req, &loc, self.temp)?;
            for (target, route) in &options {
                match self.try_acquire(&Self::route_units(route))? {
                    None => {
                        self.move_along(route)?;
                        return Ok(target.clone());
                    }
                    Some(b) => blocked = b,
                }
            }
            if attempt + 1 < retry.attempts {
                thread::sleep(retry.delay(attempt));
            }
        }
        Err(OrchestratorError::Busy(blocked))
    }

    fn execute(&mut self, plan: &BoundPlan) -> Result<(), OrchestratorError> {
        let dynamic = self.mode == BindingMode::Dynamic;
        if !dynamic {
            self.acquire(&plan.endpoints())?;
        }
        for step in &plan.steps {
            match step {
                BoundStep::Fill {
                    endpoint,
                    ingredient,
                    volume_pct,
                } => {
                    if dynamic {
                        self.acquire(&BTreeSet::from([endpoint.clone()]))?;
                    }
                    self.fill(endpoint, ingredient, *volume_pct)?;
                    let prev = self.loc.replace(endpoint.clone());
                    if let (true, Some(prev)) = (dynamic, prev) {
                        if &prev != endpoint {
                            self.move_to(&prev)?;
                        }
                    }
                }
                BoundStep::Apply {
                    endpoint,
                    path,
                    request,
                } => {
                    let target = match endpoint {
                        Some(e) if dynamic => {
                            self.move_to(e)?;
                            e.clone()
                        }
                        Some(e) => e.clone(),
                        None => self.resolve(request)?,
                    };
                    self.apply(&target, path, request)?;
                }
                BoundStep::Transfer {
                    pipe,
                    from,
                    to,
                    volume_pct,
                } => {
                    let hop = PipeInfo {
                        id: pipe.clone(),
                        from: from.clone(),
                        to: to.clone(),
                    };
                    if dynamic {
                        self.acquire(&Self::route_units(std::slice::from_ref(&hop)))?;
                    }
                    self.transfer(&hop, *volume_pct)?;
                    if dynamic {
                        self.release(pipe);
                        self.release(from);
                    }
                }
                BoundStep::Empty { endpoint } => {
                    let target = match endpoint {
                        Some(e) if dynamic => {
                            self.move_to(e)?;
                            e.clone()
                        }
                        Some(e) => e.clone(),
                        None => self.resolve(&ServiceRequest::new("Empty"))?,
                    };
                    self.empty(&target)?;
                    if dynamic {
                        self.release(&target);
                    }
                }
            }
        }
        Ok(())
    }
}

/// Executes a bound plan against the plant devices. On failure every reservation is
/// released and the partial trace carries the error.
pub fn run_plan(
    plan: &BoundPlan,
    catalog: &dyn Catalog,
    topo: &Topology,
    opts: &ExecOptions,
) -> ProcessTrace {
    let mut trace = ProcessTrace {
        process: plan.process.clone(),
        holder: opts.holder.clone(),
        mode: plan.mode,
        records: Vec::new(),
        batch: None,
        error: None,
    };
    let setup = Planner::new(catalog, topo).and_then(|p| {
        let client =
            Client::bind("0.0.0.0:0").map_err(|e| OrchestratorError::Transport(e.to_string()))?;
        Ok((p, client))
    });
    let (planner, client) = match setup {
        Ok(x) => x,
        Err(e) => {
            trace.error = Some(e);
            return trace;
        }
    };
    let mut run = Run {
        planner,
        opts,
        mode: plan.mode,
        client,
        t0: opts.epoch.unwrap_or_else(Instant::now),
        held: BTreeSet::new(),
        loc: None,
        temp: f64::NEG_INFINITY,
        trace,
    };
    let result = run.execute(plan);
    run.release_all();
    run.trace.error = result.err();
    run.trace
}

/// Executes a plan, discovering the plant topology from the directory first.
pub fn execute_plan(plan: &BoundPlan, rd: &RdClient, opts: &ExecOptions) -> ProcessTrace {
    match discover_topology(rd, opts) {
        Ok(topo) => run_plan(plan, rd, &topo, opts),
        Err(e) => ProcessTrace {
            process: plan.process.clone(),
            holder: opts.holder.clone(),
            mode: plan.mode,
            records: Vec::new(),
            batch: None,
            error: Some(e),
        },
    }
}

fn discover_topology(rd: &RdClient, opts: &ExecOptions) -> Result<Topology, OrchestratorError> {
    let client =
        Client::bind("0.0.0.0:0").map_err(|e| OrchestratorError::Transport(e.to_string()))?;
    Topology::discover(rd, &client, &opts.request)
}

/// Transforms and executes a process against the plant registered at `rd`.
pub fn run_process(
    pim: &ProcessSpec,
    rd: &RdClient,
    mode: BindingMode,
    opts: &ExecOptions,
) -> Result<(BoundPlan, ProcessTrace), OrchestratorError> {
    let topo = discover_topology(rd, opts)?;
    let plan = transform_pim_to_psm(pim, rd, &topo, mode)?;
    let trace = run_plan(&plan, rd, &topo, opts);
    Ok((plan, trace))
}
