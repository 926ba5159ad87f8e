use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use crossbeam::channel::{self, Receiver, RecvTimeoutError, Sender, TryRecvError};
use log::debug;

use super::world::{ActionRequest, Completion, Param, UnitId, World, WorldError};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TimeMode {
    /// Simulated time jumps ahead as fast as the machine allows while a unit acts.
    Virtual,
    /// Simulated seconds pass `scale` times faster than wall-clock seconds.
    Real { scale: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RuntimeOptions {
    pub mode: TimeMode,
    pub dt_s: f64,
}

impl Default for RuntimeOptions {
    fn default() -> Self {
        RuntimeOptions {
            mode: TimeMode::Virtual,
            dt_s: 0.1,
        }
    }
}

/// Receives the world after every change, on the runtime thread.
pub trait Publisher: Send + 'static {
    fn publish(&mut self, world: &World, completions: &[Completion]);
}

impl Publisher for () {
    fn publish(&mut self, _: &World, _: &[Completion]) {}
}

enum Command {
    Start {
        unit: UnitId,
        req: ActionRequest,
        holder: Option<String>,
        reply: Sender<Result<(), WorldError>>,
    },
    Write {
        unit: UnitId,
        param: Param,
        holder: Option<String>,
        reply: Sender<Result<(), WorldError>>,
    },
    Snapshot(Sender<World>),
    Stop,
}

/// Cloneable handle for sending commands to the world's owner thread.
#[derive(Clone)]
pub struct PlantLink {
    tx: Sender<Command>,
}

impl PlantLink {
    fn call(
        &self,
        make: impl FnOnce(Sender<Result<(), WorldError>>) -> Command,
    ) -> Result<(), WorldError> {
        let (tx, rx) = channel::bounded(1);
        if self.tx.send(make(tx)).is_err() {
            return Err(WorldError::BadParam("plant runtime stopped".into()));
        }
        rx.recv()
            .unwrap_or_else(|_| Err(WorldError::BadParam("plant runtime stopped".into())))
    }

    pub fn start(
        &self,
        unit: UnitId,
        req: ActionRequest,
        holder: Option<&str>,
    ) -> Result<(), WorldError> {
        let holder = holder.map(str::to_string);
        self.call(|reply| Command::Start {
            unit,
            req,
            holder,
            reply,
        })
    }

    pub fn write(
        &self,
        unit: UnitId,
        param: Param,
        holder: Option<&str>,
    ) -> Result<(), WorldError> {
        let holder = holder.map(str::to_string);
        self.call(|reply| Command::Write {
            unit,
            param,
            holder,
            reply,
        })
    }

    /// A copy of the current world, or `None` once the runtime has stopped.
    pub fn snapshot(&self) -> Option<World> {
        let (tx, rx) = channel::bounded(1);
        self.tx.send(Command::Snapshot(tx)).ok()?;
        rx.recv().ok()
    }
}

/// The thread that owns and advances the world.
pub struct PlantRuntime {
    link: PlantLink,
    thread: Option<JoinHandle<World>>,
}

/// Creates the command channel first so device actuators can hold a link before the
/// runtime (which needs the devices as publishers) starts.
pub fn plant_channel() -> (PlantLink, PendingRuntime) {
    let (tx, rx) = channel::unbounded();
    (PlantLink { tx: tx.clone() }, PendingRuntime { tx, rx })
}

pub struct PendingRuntime {
    tx: Sender<Command>,
    rx: Receiver<Command>,
}

impl PendingRuntime {
    pub fn spawn(
        self,
        world: World,
        opts: RuntimeOptions,
        publisher: impl Publisher,
    ) -> PlantRuntime {
        let rx = self.rx;
        let thread = thread::Builder::new()
            .name("plant".into())
            .spawn(move || run(world, opts, rx, publisher))
            .expect("spawn plant runtime");
        PlantRuntime {
            link: PlantLink { tx: self.tx },
            thread: Some(thread),
        }
    }
}

impl PlantRuntime {
    pub fn spawn(world: World, opts: RuntimeOptions, publisher: impl Publisher) -> PlantRuntime {
        plant_channel().1.spawn(world, opts, publisher)
    }

    pub fn link(&self) -> PlantLink {
        self.link.clone()
    }

    /// Stops the thread and returns the final world.
    pub fn stop(mut self) -> World {
        self.stop_inner().expect("runtime already stopped")
    }

    fn stop_inner(&mut self) -> Option<World> {
        let t = self.thread.take()?;
        let _ = self.link.tx.send(Command::Stop);
        t.join().ok()
    }
}

impl Drop for PlantRuntime {
    fn drop(&mut self) {
        self.stop_inner();
    }
}

fn apply(world: &mut World, cmd: Command) -> bool {
    match cmd {
        Command::Start {
            unit,
            req,
            holder,
            reply,
        } => {
            let r = world.start(unit, req, holder.as_deref());
            debug!("start {} -> {r:?}", world.unit_name(unit));
            let _ = reply.send(r);
        }
        Command::Write {
            unit,
            param,
            holder,
            reply,
        } => {
            let _ = reply.send(world.write(unit, param, holder.as_deref()));
        }
        Command::Snapshot(reply) => {
            let _ = reply.send(world.clone());
        }
        Command::Stop => return false,
    }
    true
}

fn run(
    mut world: World,
    opts: RuntimeOptions,
    rx: Receiver<Command>,
    mut publisher: impl Publisher,
) -> World {
    publisher.publish(&world, &[]);
    let wall_dt = match opts.mode {
        TimeMode::Virtual => Duration::ZERO,
        TimeMode::Real { scale } => Duration::from_secs_f64(opts.dt_s / scale),
    };
    let mut next_tick = Instant::now() + wall_dt;
    loop {
        // commands first, then one tick if anything is moving
        let cmd = if world.any_active() {
            match opts.mode {
                TimeMode::Virtual => match rx.try_recv() {
                    Ok(c) => Some(c),
                    Err(TryRecvError::Empty) => None,
                    Err(TryRecvError::Disconnected) => return world,
                },
                TimeMode::Real { .. } => {
                    match rx.recv_timeout(next_tick.saturating_duration_since(Instant::now())) {
                        Ok(c) => Some(c),
                        Err(RecvTimeoutError::Timeout) => None,
                        Err(RecvTimeoutError::Disconnected) => return world,
                    }
                }
            }
        } else {
            match rx.recv() {
                Ok(c) => {
                    next_tick = Instant::now() + wall_dt;
                    Some(c)
                }
                Err(_) => return world,
            }
        };
        if let Some(cmd) = cmd {
            if !apply(&mut world, cmd) {
                return world;
            }
            publisher.publish(&world, &[]);
            continue;
        }
        if Instant::now() >= next_tick {
            world.tick(opts.dt_s);
            next_tick += wall_dt;
            let done = world.take_completions();
            publisher.publish(&world, &done);
        }
    }
}
