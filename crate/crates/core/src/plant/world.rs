use std::fmt;

use serde::Serialize;
use thiserror::Error;

use super::config::{PlantConfig, Service, SiloSpec};
use crate::semantic::format_number;

/// Relative slack for volume bookkeeping.
pub const VOLUME_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum UnitState {
    Idle,
    Filling,
    Heating,
    Mixing,
    Emptying,
    Transferring,
}

impl fmt::Display for UnitState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum UnitId {
    Silo(usize),
    Pipe(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BatchRecord {
    /// (ingredient, liters)
    pub ingredients: Vec<(String, f64)>,
    pub temp_c: f64,
    pub mixed: bool,
    pub history: Vec<Service>,
}

impl BatchRecord {
    pub fn volume(&self) -> f64 {
        self.ingredients.iter().map(|(_, v)| v).sum()
    }

    /// Splits off `fraction` of every ingredient into a new record with the same history.
    fn split(&mut self, fraction: f64) -> BatchRecord {
        let mut taken = self.clone();
        for ((_, keep), (_, take)) in self
            .ingredients
            .iter_mut()
            .zip(taken.ingredients.iter_mut())
        {
            *take = *keep * fraction;
            *keep -= *take;
        }
        taken
    }

    fn add_ingredient(&mut self, name: &str, liters: f64) {
        match self.ingredients.iter_mut().find(|(n, _)| n == name) {
            Some((_, v)) => *v += liters,
            None => self.ingredients.push((name.to_string(), liters)),
        }
    }

    /// Pours `other` into this batch: volumes add, temperatures blend, histories concatenate.
    fn absorb(&mut self, other: BatchRecord) {
        let (a, b) = (self.volume(), other.volume());
        if a + b > 0.0 {
            self.temp_c = (a * self.temp_c + b * other.temp_c) / (a + b);
        }
        for (n, v) in &other.ingredients {
            self.add_ingredient(n, *v);
        }
        self.mixed = self.mixed && other.mixed;
        self.history.extend(other.history);
    }

    /// `ingredients=a:50.0;temp=50.0;mixed=true;history=Fill,Heat,Mix`
    pub fn summary(&self, capacity: f64) -> String {
        let ingr: Vec<String> = self
            .ingredients
            .iter()
            .map(|(n, v)| format!("{n}:{}", format_number(v / capacity * 100.0)))
            .collect();
        let hist: Vec<&str> = self.history.iter().map(|s| s.label()).collect();
        format!(
            "ingredients={};temp={};mixed={};history={}",
            ingr.join(","),
            format_number(self.temp_c),
            self.mixed,
            hist.join(",")
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum Action {
    Fill {
        ingredient: String,
        target_l: f64,
    },
    Heat {
        setpoint_c: f64,
    },
    Mix {
        remaining_s: f64,
    },
    Empty,
    /// This silo is one end of the transfer carried out by `pipe`.
    Transfer {
        pipe: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SiloState {
    pub spec: SiloSpec,
    pub volume_l: f64,
    pub temp_c: f64,
    pub state: UnitState,
    pub reserved: bool,
    pub holder: String,
    pub batch: Option<BatchRecord>,
    pub action: Option<Action>,
    pub setpoint_c: f64,
    pub mix_duration_s: f64,
    pub last_action: String,
}

impl SiloState {
    pub fn level_pct(&self) -> f64 {
        self.volume_l / self.spec.capacity_liters * 100.0
    }

    pub fn batch_summary(&self) -> String {
        self.batch
            .as_ref()
            .map(|b| b.summary(self.spec.capacity_liters))
            .unwrap_or_default()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TransferProgress {
    pub from: usize,
    pub to: usize,
    pub total_l: f64,
    pub moved_l: f64,
    from_final_l: f64,
    to_final_l: f64,
    in_flight: BatchRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PipeState {
    pub id: String,
    pub from: usize,
    pub to: usize,
    pub rate_pct_per_s: f64,
    pub state: UnitState,
    pub reserved: bool,
    pub holder: String,
    /// Default transfer volume in percent of the source capacity; 0 means everything.
    pub volume_pct: f64,
    pub transfer: Option<TransferProgress>,
    pub last_action: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Delivery {
    pub silo: String,
    pub at_s: f64,
    pub volume_l: f64,
    pub batch: BatchRecord,
}

/// Simulated time, advanced only by ticks.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimClock {
    pub now_s: f64,
}

/// A physical action request as carried by an Execute.
#[derive(Debug, Clone, PartialEq)]
pub enum ActionRequest {
    Fill {
        ingredient: String,
        volume_pct: f64,
    },
    Heat {
        setpoint_c: Option<f64>,
    },
    Mix {
        duration_s: Option<f64>,
    },
    Empty,
    /// `None` uses the pipe's volume parameter (0 there means the whole batch).
    Transfer {
        volume_pct: Option<f64>,
    },
}

impl ActionRequest {
    fn name(&self) -> &'static str {
        match self {
            ActionRequest::Fill { .. } => "Fill",
            ActionRequest::Heat { .. } => "Heat",
            ActionRequest::Mix { .. } => "Mix",
            ActionRequest::Empty => "Empty",
            ActionRequest::Transfer { .. } => "Transfer",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Param {
    Setpoint(f64),
    MixDuration(f64),
    TransferVolume(f64),
    Reserved(bool),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum WorldError {
    #[error("{0} is busy")]
    Busy(String),
    #[error("{0}")]
    QoSViolation(String),
    #[error("{unit} does not provide {service}")]
    UnsupportedService { unit: String, service: String },
    #[error("{unit} holds {available_l} l, {requested_l} l requested")]
    InsufficientVolume {
        unit: String,
        available_l: f64,
        requested_l: f64,
    },
    #[error("{unit} would overflow")]
    Overflow { unit: String },
    #[error("{0} holds no batch")]
    NoBatch(String),
    #[error("{unit} is reserved by {holder}")]
    Reserved { unit: String, holder: String },
    #[error("{unit} is already reserved")]
    AlreadyReserved { unit: String },
    #[error("{unit} is held by another holder")]
    NotHolder { unit: String },
    #[error("bad parameter: {0}")]
    BadParam(String),
}

/// A completed physical action, reported once.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Completion {
    pub unit: UnitId,
    pub action: String,
}

/// The whole plant: silos, pipes, time and delivered batches.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct World {
    pub silos: Vec<SiloState>,
    pub pipes: Vec<PipeState>,
    pub clock: SimClock,
    pub deliveries: Vec<Delivery>,
    #[serde(skip)]
    pub config: PlantConfig,
    #[serde(skip)]
    completions: Vec<Completion>,
}

impl World {
    pub fn new(config: &PlantConfig) -> World {
        let index = |id: &str| {
            config
                .silos
                .iter()
                .position(|s| s.id == id)
                .expect("validated")
        };
        World {
            silos: config
                .silos
                .iter()
                .map(|s| SiloState {
                    spec: s.clone(),
                    volume_l: 0.0,
                    temp_c: s.initial_temp_c,
                    state: UnitState::Idle,
                    reserved: false,
                    holder: String::new(),
                    batch: None,
                    action: None,
                    setpoint_c: s.initial_temp_c,
                    mix_duration_s: s.mix_min_s,
                    last_action: String::new(),
                })
                .collect(),
            pipes: config
                .pipes
                .iter()
                .map(|p| PipeState {
                    id: p.id.clone(),
                    from: index(&p.from_silo),
                    to: index(&p.to_silo),
                    rate_pct_per_s: p.transfer_rate_pct_per_s,
                    state: UnitState::Idle,
                    reserved: false,
                    holder: String::new(),
                    volume_pct: 0.0,
                    transfer: None,
                    last_action: String::new(),
                })
                .collect(),
            clock: SimClock { now_s: 0.0 },
            deliveries: Vec::new(),
            config: config.clone(),
            completions: Vec::new(),
        }
    }

    pub fn unit(&self, id: &str) -> Option<UnitId> {
        self.silos
            .iter()
            .position(|s| s.spec.id == id)
            .map(UnitId::Silo)
            .or_else(|| self.pipes.iter().position(|p| p.id == id).map(UnitId::Pipe))
    }

    pub fn units(&self) -> Vec<UnitId> {
        (0..self.silos.len())
            .map(UnitId::Silo)
            .chain((0..self.pipes.len()).map(UnitId::Pipe))
            .collect()
    }

    pub fn unit_name(&self, u: UnitId) -> &str {
        match u {
            UnitId::Silo(i) => &self.silos[i].spec.id,
            UnitId::Pipe(i) => &self.pipes[i].id,
        }
    }

    pub fn silo(&self, id: &str) -> Option<&SiloState> {
        self.silos.iter().find(|s| s.spec.id == id)
    }

    pub fn state_of(&self, u: UnitId) -> UnitState {
        match u {
            UnitId::Silo(i) => self.silos[i].state,
            UnitId::Pipe(i) => self.pipes[i].state,
        }
    }

    fn reservation(&self, u: UnitId) -> (bool, &str) {
        match u {
            UnitId::Silo(i) => (self.silos[i].reserved, &self.silos[i].holder),
            UnitId::Pipe(i) => (self.pipes[i].reserved, &self.pipes[i].holder),
        }
    }

    fn reservation_mut(&mut self, u: UnitId) -> (&mut bool, &mut String) {
        match u {
            UnitId::Silo(i) => {
                let s = &mut self.silos[i];
                (&mut s.reserved, &mut s.holder)
            }
            UnitId::Pipe(i) => {
                let p = &mut self.pipes[i];
                (&mut p.reserved, &mut p.holder)
            }
        }
    }

    /// A reserved unit only accepts commands from its holder.
    fn check_holder(&self, u: UnitId, holder: Option<&str>) -> Result<(), WorldError> {
        let (reserved, current) = self.reservation(u);
        if reserved && holder != Some(current) {
            return Err(WorldError::Reserved {
                unit: self.unit_name(u).to_string(),
                holder: current.to_string(),
            });
        }
        Ok(())
    }

    fn check_idle(&self, u: UnitId) -> Result<(), WorldError> {
        if self.state_of(u) != UnitState::Idle {
            return Err(WorldError::Busy(self.unit_name(u).to_string()));
        }
        Ok(())
    }

    pub fn any_active(&self) -> bool {
        self.silos.iter().any(|s| s.state != UnitState::Idle)
            || self.pipes.iter().any(|p| p.state != UnitState::Idle)
    }

    /// Completions since the last call.
    pub fn take_completions(&mut self) -> Vec<Completion> {
        std::mem::take(&mut self.completions)
    }

    /// Writes a parameter resource. Reservation is a compare-and-set keyed by `holder`.
    pub fn write(
        &mut self,
        u: UnitId,
        param: Param,
        holder: Option<&str>,
    ) -> Result<(), WorldError> {
        if let Param::Reserved(want) = param {
            return self.write_reserved(u, want, holder);
        }
        self.check_holder(u, holder)?;
        let nonneg = |v: f64, what: &str| {
            if v.is_finite() && v >= 0.0 {
                Ok(v)
            } else {
                Err(WorldError::BadParam(format!(
                    "{what} must be a non-negative number"
                )))
            }
        };
        match (u, param) {
            (UnitId::Silo(i), Param::Setpoint(v)) => {
                self.silos[i].setpoint_c = if v.is_finite() {
                    v
                } else {
                    return Err(WorldError::BadParam("setpoint must be finite".into()));
                }
            }
            (UnitId::Silo(i), Param::MixDuration(v)) => {
                self.silos[i].mix_duration_s = nonneg(v, "duration")?
            }
            (UnitId::Pipe(i), Param::TransferVolume(v)) => {
                if v > 100.0 {
                    return Err(WorldError::BadParam("volume above 100 %".into()));
                }
                self.pipes[i].volume_pct = nonneg(v, "volume")?
            }
            _ => {
                return Err(WorldError::BadParam(format!(
                    "{param:?} does not apply here"
                )))
            }
        }
        Ok(())
    }

    fn write_reserved(
        &mut self,
        u: UnitId,
        want: bool,
        holder: Option<&str>,
    ) -> Result<(), WorldError> {
        let name = self.unit_name(u).to_string();
        let holder = holder.unwrap_or("").to_string();
        let (reserved, current) = self.reservation_mut(u);
        match (want, *reserved) {
            (true, true) => Err(WorldError::AlreadyReserved { unit: name }),
            (true, false) => {
                *reserved = true;
                *current = holder;
                Ok(())
            }
            (false, false) => Ok(()),
            (false, true) if *current == holder => {
                *reserved = false;
                current.clear();
                Ok(())
            }
            (false, true) => Err(WorldError::NotHolder { unit: name }),
        }
    }

    /// Starts a physical action after checking reservation, state, service and QoS.
    pub fn start(
        &mut self,
        u: UnitId,
        req: ActionRequest,
        holder: Option<&str>,
    ) -> Result<(), WorldError> {
        match u {
            UnitId::Pipe(p) => match req {
                ActionRequest::Transfer { volume_pct } => {
                    let v = volume_pct.unwrap_or(self.pipes[p].volume_pct);
                    self.start_transfer(p, v, holder)
                }
                other => Err(WorldError::UnsupportedService {
                    unit: self.pipes[p].id.clone(),
                    service: other.name().into(),
                }),
            },
            UnitId::Silo(i) => self.start_silo(i, req, holder),
        }
    }

    fn start_silo(
        &mut self,
        i: usize,
        req: ActionRequest,
        holder: Option<&str>,
    ) -> Result<(), WorldError> {
        let u = UnitId::Silo(i);
        self.check_holder(u, holder)?;
        self.check_idle(u)?;
        let s = &self.silos[i];
        let id = s.spec.id.clone();
        let service = match &req {
            ActionRequest::Fill { .. } => Service::Fill,
            ActionRequest::Heat { .. } => Service::Heat,
            ActionRequest::Mix { .. } => Service::Mix,
            ActionRequest::Empty => Service::Empty,
            ActionRequest::Transfer { .. } => {
                return Err(WorldError::UnsupportedService {
                    unit: id,
                    service: "Transfer".into(),
                })
            }
        };
        if !s.spec.provides(service) {
            return Err(WorldError::UnsupportedService {
                unit: id,
                service: service.label().into(),
            });
        }
        let (state, action) = match req {
            ActionRequest::Fill {
                ingredient,
                volume_pct,
            } => {
                if self.config.ingredient_sources.get(&ingredient) != Some(&id) {
                    return Err(WorldError::UnsupportedService {
                        unit: id,
                        service: format!("Fill({ingredient})"),
                    });
                }
                if !(volume_pct.is_finite() && volume_pct > 0.0) {
                    return Err(WorldError::BadParam("fill volume must be positive".into()));
                }
                let add = volume_pct / 100.0 * s.spec.capacity_liters;
                if s.volume_l + add > s.spec.capacity_liters * (1.0 + VOLUME_EPS) {
                    return Err(WorldError::Overflow { unit: id });
                }
                (
                    UnitState::Filling,
                    Action::Fill {
                        ingredient,
                        target_l: (s.volume_l + add).min(s.spec.capacity_liters),
                    },
                )
            }
            ActionRequest::Heat { setpoint_c } => {
                let sp = setpoint_c.unwrap_or(s.setpoint_c);
                if !sp.is_finite() {
                    return Err(WorldError::BadParam("setpoint must be finite".into()));
                }
                if sp > s.spec.heat_max_c {
                    return Err(WorldError::QoSViolation(format!(
                        "setpoint {} exceeds the maximum temperature {} of {id}",
                        format_number(sp),
                        format_number(s.spec.heat_max_c)
                    )));
                }
                if s.batch.is_none() {
                    return Err(WorldError::NoBatch(id));
                }
                (UnitState::Heating, Action::Heat { setpoint_c: sp })
            }
            ActionRequest::Mix { duration_s } => {
                let d = duration_s.unwrap_or(s.mix_duration_s);
                if !(d.is_finite() && d >= 0.0) {
                    return Err(WorldError::BadParam("duration must be non-negative".into()));
                }
                if d < s.spec.mix_min_s {
                    return Err(WorldError::QoSViolation(format!(
                        "mix duration {} is below the minimum {} of {id}",
                        format_number(d),
                        format_number(s.spec.mix_min_s)
                    )));
                }
                if s.batch.is_none() {
                    return Err(WorldError::NoBatch(id));
                }
                (UnitState::Mixing, Action::Mix { remaining_s: d })
            }
            ActionRequest::Empty => {
                if s.batch.is_none() {
                    return Err(WorldError::NoBatch(id));
                }
                (UnitState::Emptying, Action::Empty)
            }
            ActionRequest::Transfer { .. } => unreachable!(),
        };
        let s = &mut self.silos[i];
        s.state = state;
        s.action = Some(action);
        Ok(())
    }

    /// Starts moving `volume_pct` of the source capacity (0: the whole batch) through pipe `p`.
    pub fn start_transfer(
        &mut self,
        p: usize,
        volume_pct: f64,
        holder: Option<&str>,
    ) -> Result<(), WorldError> {
        let (from, to) = (self.pipes[p].from, self.pipes[p].to);
        for u in [UnitId::Pipe(p), UnitId::Silo(from), UnitId::Silo(to)] {
            self.check_holder(u, holder)?;
        }
        for u in [UnitId::Pipe(p), UnitId::Silo(from), UnitId::Silo(to)] {
            self.check_idle(u)?;
        }
        if !(volume_pct.is_finite() && (0.0..=100.0).contains(&volume_pct)) {
            return Err(WorldError::BadParam(
                "transfer volume must be within 0..100 %".into(),
            ));
        }
        let (src, dst) = (&self.silos[from], &self.silos[to]);
        let Some(batch) = &src.batch else {
            return Err(WorldError::NoBatch(src.spec.id.clone()));
        };
        let amount = if volume_pct == 0.0 {
            src.volume_l
        } else {
            volume_pct / 100.0 * src.spec.capacity_liters
        };
        if amount <= 0.0 || amount > src.volume_l * (1.0 + VOLUME_EPS) {
            return Err(WorldError::InsufficientVolume {
                unit: src.spec.id.clone(),
                available_l: src.volume_l,
                requested_l: amount,
            });
        }
        let amount = amount.min(src.volume_l);
        if dst.volume_l + amount > dst.spec.capacity_liters * (1.0 + VOLUME_EPS) {
            return Err(WorldError::Overflow {
                unit: dst.spec.id.clone(),
            });
        }
        let blended = (dst.volume_l * dst.temp_c + amount * batch.temp_c) / (dst.volume_l + amount);
        if blended > dst.spec.heat_max_c {
            return Err(WorldError::QoSViolation(format!(
                "batch at {} exceeds the maximum temperature {} of {}",
                format_number(batch.temp_c),
                format_number(dst.spec.heat_max_c),
                dst.spec.id
            )));
        }
        let whole = amount >= src.volume_l;
        let (from_final_l, to_final_l) = (
            if whole { 0.0 } else { src.volume_l - amount },
            dst.volume_l + amount,
        );
        let src = &mut self.silos[from];
        let mut batch = src.batch.take().expect("checked");
        let in_flight = if whole {
            batch
        } else {
            let taken = batch.split(amount / src.volume_l);
            src.batch = Some(batch);
            taken
        };
        self.pipes[p].transfer = Some(TransferProgress {
            from,
            to,
            total_l: amount,
            moved_l: 0.0,
            from_final_l,
            to_final_l,
            in_flight,
        });
        self.pipes[p].state = UnitState::Transferring;
        for i in [from, to] {
            self.silos[i].state = UnitState::Transferring;
            self.silos[i].action = Some(Action::Transfer { pipe: p });
        }
        Ok(())
    }

    /// Advances physics by `dt_s` seconds.
    pub fn tick(&mut self, dt_s: f64) {
        assert!(dt_s > 0.0, "tick needs a positive step");
        self.clock.now_s += dt_s;
        for i in 0..self.silos.len() {
            self.tick_silo(i, dt_s);
        }
        for p in 0..self.pipes.len() {
            self.tick_pipe(p, dt_s);
        }
    }

    fn complete(&mut self, u: UnitId, action: &str) {
        match u {
            UnitId::Silo(i) => {
                let s = &mut self.silos[i];
                s.state = UnitState::Idle;
                s.action = None;
                s.last_action = action.to_string();
            }
            UnitId::Pipe(p) => {
                let pipe = &mut self.pipes[p];
                pipe.state = UnitState::Idle;
                pipe.transfer = None;
                pipe.last_action = action.to_string();
            }
        }
        self.completions.push(Completion {
            unit: u,
            action: action.to_string(),
        });
    }

    fn tick_silo(&mut self, i: usize, dt: f64) {
        let now = self.clock.now_s;
        let s = &mut self.silos[i];
        let cap = s.spec.capacity_liters;
        match s.action.clone() {
            None | Some(Action::Transfer { .. }) => {}
            Some(Action::Fill {
                ingredient,
                target_l,
            }) => {
                let step = s.spec.fill_rate_pct_per_s / 100.0 * cap * dt;
                if s.volume_l + step >= target_l {
                    let added = target_l - s.batch.as_ref().map_or(0.0, BatchRecord::volume);
                    s.volume_l = target_l;
                    let ambient = s.spec.initial_temp_c;
                    let incoming = BatchRecord {
                        ingredients: vec![(ingredient, added)],
                        temp_c: ambient,
                        mixed: false,
                        history: vec![Service::Fill],
                    };
                    let batch = match s.batch.take() {
                        Some(mut b) => {
                            b.absorb(incoming);
                            b
                        }
                        None => incoming,
                    };
                    s.temp_c = batch.temp_c;
                    s.batch = Some(batch);
                    self.complete(UnitId::Silo(i), "Fill");
                } else {
                    s.volume_l += step;
                }
            }
            Some(Action::Heat { setpoint_c }) => {
                let next = s.temp_c + s.spec.heat_rate_c_per_s * dt;
                if next >= setpoint_c {
                    s.temp_c = s.temp_c.max(setpoint_c);
                    if let Some(b) = &mut s.batch {
                        b.temp_c = s.temp_c;
                        b.history.push(Service::Heat);
                    }
                    self.complete(UnitId::Silo(i), "Heat");
                } else {
                    s.temp_c = next;
                    if let Some(b) = &mut s.batch {
                        b.temp_c = next;
                    }
                }
            }
            Some(Action::Mix { remaining_s }) => {
                let left = remaining_s - dt;
                if left <= 1e-12 {
                    if let Some(b) = &mut s.batch {
                        b.mixed = true;
                        b.history.push(Service::Mix);
                    }
                    self.complete(UnitId::Silo(i), "Mix");
                } else {
                    s.action = Some(Action::Mix { remaining_s: left });
                }
            }
            Some(Action::Empty) => {
                let step = s.spec.empty_rate_pct_per_s / 100.0 * cap * dt;
                if s.volume_l - step <= 0.0 {
                    let batch = s.batch.take().expect("emptying needs a batch");
                    let delivery = Delivery {
                        silo: s.spec.id.clone(),
                        at_s: now,
                        volume_l: batch.volume(),
                        batch,
                    };
                    s.volume_l = 0.0;
                    self.deliveries.push(delivery);
                    self.complete(UnitId::Silo(i), "Empty");
                } else {
                    s.volume_l -= step;
                }
            }
        }
    }

    fn tick_pipe(&mut self, p: usize, dt: f64) {
        let Some(mut t) = self.pipes[p].transfer.take() else {
            return;
        };
        let rate_l = self.pipes[p].rate_pct_per_s / 100.0 * self.silos[t.from].spec.capacity_liters;
        let step = rate_l * dt;
        if t.moved_l + step >= t.total_l {
            self.silos[t.from].volume_l = t.from_final_l;
            let dst = &mut self.silos[t.to];
            dst.volume_l = t.to_final_l;
            let batch = match dst.batch.take() {
                Some(mut b) => {
                    b.absorb(t.in_flight);
                    b
                }
                None => t.in_flight,
            };
            dst.temp_c = batch.temp_c;
            dst.batch = Some(batch);
            let (from, to) = (t.from, t.to);
            self.complete(UnitId::Silo(from), "Transfer");
            self.complete(UnitId::Silo(to), "Transfer");
            self.complete(UnitId::Pipe(p), "Transfer");
        } else {
            t.moved_l += step;
            self.silos[t.from].volume_l -= step;
            self.silos[t.to].volume_l += step;
            self.pipes[p].transfer = Some(t);
        }
    }

    /// Liters inside the plant plus everything delivered so far.
    pub fn total_volume(&self) -> f64 {
        self.silos.iter().map(|s| s.volume_l).sum()
    }

    pub fn delivered_volume(&self) -> f64 {
        self.deliveries.iter().map(|d| d.volume_l).sum()
    }

    /// Checks the physical invariants; returns a description of the first violation.
    pub fn check_invariants(&self) -> Result<(), String> {
        for s in &self.silos {
            let cap = s.spec.capacity_liters;
            let id = &s.spec.id;
            if s.volume_l < -VOLUME_EPS * cap || s.volume_l > cap * (1.0 + VOLUME_EPS) {
                return Err(format!("{id}: level {} out of range", s.level_pct()));
            }
            if s.temp_c > s.spec.heat_max_c + 1e-9 {
                return Err(format!("{id}: temperature {} above max", s.temp_c));
            }
            if (s.state == UnitState::Idle) != s.action.is_none() {
                return Err(format!("{id}: state {} inconsistent with action", s.state));
            }
            if s.state == UnitState::Idle {
                let batch_l = s.batch.as_ref().map_or(0.0, BatchRecord::volume);
                if (batch_l - s.volume_l).abs() > VOLUME_EPS * cap {
                    return Err(format!(
                        "{id}: batch {batch_l} l but level holds {} l",
                        s.volume_l
                    ));
                }
            }
        }
        for p in &self.pipes {
            if (p.state == UnitState::Idle) != p.transfer.is_none() {
                return Err(format!("{}: state inconsistent with transfer", p.id));
            }
        }
        Ok(())
    }
}
