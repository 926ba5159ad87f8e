use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::sync::Arc;

use log::info;

use super::config::{PlantConfig, Service, SiloSpec};
use super::runtime::{plant_channel, PlantLink, PlantRuntime, Publisher, RuntimeOptions};
use super::world::{ActionRequest, Completion, Param, UnitId, World, WorldError};
use super::PlantError;
use crate::lwm2m::{
    register_with_directory, Actuator, Caller, CpmsDescriptor, CpmsKind, Device, DeviceError,
    DeviceHandle, ExecArgs, ObjectDef, ObjectInstance, Operations, ProvidedIf, Registration,
    ResourceDef, ResourcePath, Value, ValueType,
};
use crate::rd::RdClient;
use crate::semantic::{format_number, ns, parse_turtle, Graph};

pub const SILO_OBJECT: u16 = 26241;
pub const PIPE_OBJECT: u16 = 26242;
pub const SILO_RT: &str = "lps.silo";
pub const PIPE_RT: &str = "lps.pipe";

/// Resource ids of the silo object.
pub mod silo {
    pub const STATE: u16 = 0;
    pub const LEVEL: u16 = 1;
    pub const TEMPERATURE: u16 = 2;
    pub const SETPOINT: u16 = 3;
    pub const MIX_DURATION: u16 = 4;
    pub const RESERVED: u16 = 5;
    pub const HOLDER: u16 = 6;
    pub const BATCH: u16 = 7;
    pub const CAPACITY: u16 = 8;
    pub const LAST_ACTION: u16 = 9;
    pub const FILL: u16 = 10;
    pub const EMPTY: u16 = 11;
    pub const HEAT: u16 = 12;
    pub const MIX: u16 = 13;
}

/// Resource ids of the pipe object.
pub mod pipe {
    pub const STATE: u16 = 0;
    pub const FROM: u16 = 1;
    pub const TO: u16 = 2;
    pub const VOLUME: u16 = 3;
    pub const RESERVED: u16 = 5;
    pub const HOLDER: u16 = 6;
    pub const LAST_ACTION: u16 = 9;
    pub const TRANSFER: u16 = 10;
}

/// Execute resource of a silo service.
pub fn service_resource(s: Service) -> u16 {
    match s {
        Service::Fill => silo::FILL,
        Service::Empty => silo::EMPTY,
        Service::Heat => silo::HEAT,
        Service::Mix => silo::MIX,
    }
}

pub fn silo_path(rid: u16) -> String {
    ResourcePath::new(SILO_OBJECT, 0, rid).to_string()
}

pub fn pipe_path(rid: u16) -> String {
    ResourcePath::new(PIPE_OBJECT, 0, rid).to_string()
}

pub fn silo_object() -> ObjectDef {
    use ValueType::*;
    let r = |id, name, ops, t| ResourceDef::new(id, name, ops, t);
    ObjectDef::new(
        SILO_OBJECT,
        "SmartSilo",
        vec![
            r(silo::STATE, "state", Operations::R, String),
            r(silo::LEVEL, "level", Operations::R, Double),
            r(silo::TEMPERATURE, "temperature", Operations::R, Double),
            r(silo::SETPOINT, "setpoint", Operations::RW, Double),
            r(silo::MIX_DURATION, "mixDuration", Operations::RW, Double),
            r(silo::RESERVED, "reserved", Operations::RW, Boolean),
            r(silo::HOLDER, "holder", Operations::R, String),
            r(silo::BATCH, "batch", Operations::R, String),
            r(silo::CAPACITY, "capacity", Operations::R, Double),
            r(silo::LAST_ACTION, "lastAction", Operations::R, String),
            ResourceDef::action(silo::FILL, "Fill"),
            ResourceDef::action(silo::EMPTY, "Empty"),
            ResourceDef::action(silo::HEAT, "Heat"),
            ResourceDef::action(silo::MIX, "Mix"),
        ],
    )
    .expect("unique ids")
}

pub fn pipe_object() -> ObjectDef {
    use ValueType::*;
    let r = |id, name, ops, t| ResourceDef::new(id, name, ops, t);
    ObjectDef::new(
        PIPE_OBJECT,
        "SmartPipe",
        vec![
            r(pipe::STATE, "state", Operations::R, String),
            r(pipe::FROM, "from", Operations::R, String),
            r(pipe::TO, "to", Operations::R, String),
            r(pipe::VOLUME, "volume", Operations::RW, Double),
            r(pipe::RESERVED, "reserved", Operations::RW, Boolean),
            r(pipe::HOLDER, "holder", Operations::R, String),
            r(pipe::LAST_ACTION, "lastAction", Operations::R, String),
            ResourceDef::action(pipe::TRANSFER, "Transfer"),
        ],
    )
    .expect("unique ids")
}

fn device_error(e: WorldError) -> DeviceError {
    let msg = e.to_string();
    match e {
        WorldError::Busy(_) => DeviceError::Busy(msg),
        WorldError::QoSViolation(_) => DeviceError::QoSViolation(msg),
        WorldError::UnsupportedService { .. } => DeviceError::Unsupported(msg),
        WorldError::InsufficientVolume { .. }
        | WorldError::Overflow { .. }
        | WorldError::NoBatch(_) => DeviceError::Conflict(msg),
        WorldError::Reserved { .. } | WorldError::AlreadyReserved { .. } => {
            DeviceError::Conflict(msg)
        }
        WorldError::NotHolder { .. } => DeviceError::Forbidden(msg),
        WorldError::BadParam(_) => DeviceError::BadArgs(msg),
    }
}

/// Routes a device's writes and executes to its unit in the world.
struct UnitActuator {
    unit: UnitId,
    link: PlantLink,
}

impl Actuator for UnitActuator {
    fn write(
        &self,
        _d: &DeviceHandle,
        path: ResourcePath,
        value: Value,
        caller: &Caller,
    ) -> Result<(), DeviceError> {
        let num = || value.as_f64().unwrap_or(f64::NAN);
        let param = match (self.unit, path.resource_id) {
            (UnitId::Silo(_), silo::SETPOINT) => Param::Setpoint(num()),
            (UnitId::Silo(_), silo::MIX_DURATION) => Param::MixDuration(num()),
            (UnitId::Pipe(_), pipe::VOLUME) => Param::TransferVolume(num()),
            (_, silo::RESERVED) => Param::Reserved(value.as_bool().unwrap_or(false)),
            _ => return Err(DeviceError::MethodNotAllowed),
        };
        self.link
            .write(self.unit, param, caller.holder.as_deref())
            .map_err(device_error)
    }

    fn execute(
        &self,
        _d: &DeviceHandle,
        path: ResourcePath,
        args: &ExecArgs,
        caller: &Caller,
    ) -> Result<(), DeviceError> {
        let req = match (self.unit, path.resource_id) {
            (UnitId::Silo(_), silo::FILL) => ActionRequest::Fill {
                ingredient: args
                    .get("ingredient")
                    .ok_or_else(|| DeviceError::BadArgs("Fill needs ingredient=".into()))?
                    .to_string(),
                volume_pct: args
                    .number("volume")?
                    .ok_or_else(|| DeviceError::BadArgs("Fill needs volume=".into()))?,
            },
            (UnitId::Silo(_), silo::EMPTY) => ActionRequest::Empty,
            (UnitId::Silo(_), silo::HEAT) => ActionRequest::Heat {
                setpoint_c: args.number("setpoint")?,
            },
            (UnitId::Silo(_), silo::MIX) => ActionRequest::Mix {
                duration_s: args.number("duration")?,
            },
            (UnitId::Pipe(_), pipe::TRANSFER) => ActionRequest::Transfer {
                volume_pct: args.number("volume")?,
            },
            _ => return Err(DeviceError::MethodNotAllowed),
        };
        self.link
            .start(self.unit, req, caller.holder.as_deref())
            .map_err(device_error)
    }
}

/// Mirrors the world into the device resources after every change.
struct DevicePublisher {
    devices: Vec<(UnitId, DeviceHandle)>,
}

impl Publisher for DevicePublisher {
    fn publish(&mut self, world: &World, completions: &[Completion]) {
        for (unit, dev) in &self.devices {
            match *unit {
                UnitId::Silo(i) => {
                    let s = &world.silos[i];
                    let p = |rid| ResourcePath::new(SILO_OBJECT, 0, rid);
                    dev.set(p(silo::STATE), s.state.to_string().into());
                    dev.set(p(silo::LEVEL), Value::Double(s.level_pct()));
                    dev.set(p(silo::TEMPERATURE), Value::Double(s.temp_c));
                    dev.set(p(silo::SETPOINT), Value::Double(s.setpoint_c));
                    dev.set(p(silo::MIX_DURATION), Value::Double(s.mix_duration_s));
                    dev.set(p(silo::RESERVED), Value::Boolean(s.reserved));
                    dev.set(p(silo::HOLDER), s.holder.clone().into());
                    dev.set(p(silo::BATCH), s.batch_summary().into());
                }
                UnitId::Pipe(i) => {
                    let pp = &world.pipes[i];
                    let p = |rid| ResourcePath::new(PIPE_OBJECT, 0, rid);
                    dev.set(p(pipe::STATE), pp.state.to_string().into());
                    dev.set(p(pipe::VOLUME), Value::Double(pp.volume_pct));
                    dev.set(p(pipe::RESERVED), Value::Boolean(pp.reserved));
                    dev.set(p(pipe::HOLDER), pp.holder.clone().into());
                }
            }
        }
        // lastAction is an event: every completion notifies, even when the value repeats
        for c in completions {
            if let Some((_, dev)) = self.devices.iter().find(|(u, _)| *u == c.unit) {
                let path = match c.unit {
                    UnitId::Silo(_) => ResourcePath::new(SILO_OBJECT, 0, silo::LAST_ACTION),
                    UnitId::Pipe(_) => ResourcePath::new(PIPE_OBJECT, 0, pipe::LAST_ACTION),
                };
                dev.set_forced(path, c.action.clone().into());
            }
        }
    }
}

const PREFIXES: &str = "PREFIX lps: <http://ssegvml.ece.upatras.gr/LiqueurPlantSystem#>\n\
PREFIX xsd: <http://www.w3.org/2001/XMLSchema#>\n";

/// Namespace of a unit's own description terms.
pub fn local_namespace(id: &str) -> String {
    format!("http://{}.plant.local/", id.to_ascii_lowercase())
}

/// Turtle description of a silo in the service/QoS vocabulary of the plant.
pub fn silo_description(spec: &SiloSpec, config: &PlantConfig) -> String {
    let mut t = format!(
        "PREFIX local: <{}>\n{PREFIXES}\n",
        local_namespace(&spec.id)
    );
    t.push_str(
        "local:material rdf:type lps:AllowedMaterial;\n    lps:hasMaterialType dbpedia:Liquid.\n",
    );
    // every silo states the temperature it tolerates; Heat services point at it as QoS
    t.push_str("local:unit rdf:type lps:AllowedUnit;\n    lps:hasUnitType dbpedia:Celsius.\n");
    t.push_str(&format!(
        "local:maxTemp rdf:type lps:MaxTemperature;\n    lps:hasValue \"{}\"^^xsd:double;\n    lps:hasUnit local:unit.\n",
        spec.heat_max_c
    ));
    for s in &spec.services {
        let name = s.label().to_ascii_lowercase();
        let qos = match s {
            Service::Heat => "local:unit,local:maxTemp,local:material",
            _ => "local:material",
        };
        t.push_str(&format!(
            "local:{name} a lps:Service;\n    rdfs:label \"{}\"@en;\n    lps:QoS {qos}",
            s.label()
        ));
        if *s == Service::Fill {
            for (ingredient, _) in config
                .ingredient_sources
                .iter()
                .filter(|(_, silo)| **silo == spec.id)
            {
                t.push_str(&format!(";\n    lps:suppliesIngredient \"{ingredient}\""));
            }
        }
        if *s == Service::Mix && spec.mix_min_s > 0.0 {
            t.push_str(&format!(
                ";\n    lps:minDuration \"{}\"^^xsd:double",
                spec.mix_min_s
            ));
        }
        t.push_str(".\n");
    }
    t
}

pub fn pipe_description(spec: &super::config::PipeSpec) -> String {
    format!(
        "PREFIX local: <{}>\n{PREFIXES}\nlocal:material rdf:type lps:AllowedMaterial;\n    lps:hasMaterialType dbpedia:Liquid.\n\
local:transfer a lps:Service;\n    rdfs:label \"Transfer\"@en;\n    lps:QoS local:material;\n    lps:fromSilo \"{}\";\n    lps:toSilo \"{}\".\n",
        local_namespace(&spec.id),
        spec.from_silo,
        spec.to_silo
    )
}

/// The published description must state the same max temperature the silo enforces.
fn check_published_max(spec: &SiloSpec, g: &Graph) -> Result<(), PlantError> {
    if !spec.provides(Service::Heat) {
        return Ok(());
    }
    let has_value = format!("{}hasValue", ns::LPS);
    let published: Vec<f64> = g
        .iter()
        .filter(|t| t.predicate().as_iri() == Some(has_value.as_str()))
        .filter_map(|t| t.object().as_literal().and_then(|l| l.numeric_value()))
        .collect();
    if published.iter().any(|v| (v - spec.heat_max_c).abs() < 1e-9) {
        Ok(())
    } else {
        Err(PlantError::Config(format!(
            "{}: description does not publish heat_max_C {}",
            spec.id,
            format_number(spec.heat_max_c)
        )))
    }
}

/// A running simulated plant: world thread plus one CoAP device per silo and pipe.
pub struct Plant {
    devices: Vec<(String, Device)>,
    registrations: Vec<Registration>,
    runtime: Option<PlantRuntime>,
    link: PlantLink,
}

impl Plant {
    pub fn link(&self) -> PlantLink {
        self.link.clone()
    }

    pub fn snapshot(&self) -> World {
        self.link.snapshot().expect("plant runtime running")
    }

    /// Endpoint name and CoAP address of every device.
    pub fn endpoints(&self) -> BTreeMap<String, SocketAddr> {
        self.devices
            .iter()
            .map(|(n, d)| (n.clone(), d.local_addr()))
            .collect()
    }

    pub fn device(&self, name: &str) -> Option<&DeviceHandle> {
        self.devices
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, d)| d.handle())
    }

    pub fn registration_locations(&self) -> Vec<String> {
        self.registrations.iter().map(|r| r.location()).collect()
    }

    /// Stops devices and the world thread; returns the final world.
    pub fn shutdown(mut self) -> World {
        self.registrations.clear();
        for (_, d) in self.devices.drain(..) {
            d.shutdown();
        }
        self.runtime.take().expect("running").stop()
    }
}

/// Where devices bind and how they register.
#[derive(Debug, Clone)]
pub struct DeviceOptions {
    pub bind_ip: String,
    pub lifetime_s: u64,
}

impl Default for DeviceOptions {
    fn default() -> Self {
        DeviceOptions {
            bind_ip: "127.0.0.1".into(),
            lifetime_s: 86400,
        }
    }
}

/// Starts the world and one device per silo and pipe; registers each with `rd` if given.
pub fn build_devices(
    config: &PlantConfig,
    rd: Option<&RdClient>,
    runtime: RuntimeOptions,
    opts: &DeviceOptions,
) -> Result<Plant, PlantError> {
    config.validate()?;
    let world = World::new(config);
    let (link, pending) = plant_channel();
    let mut devices = Vec::new();
    let mut descriptors = Vec::new();
    for unit in world.units() {
        let name = world.unit_name(unit).to_string();
        let (def, rt, turtle) = match unit {
            UnitId::Silo(i) => {
                let spec = &config.silos[i];
                let text = spec
                    .description
                    .clone()
                    .unwrap_or_else(|| silo_description(spec, config));
                (silo_object(), SILO_RT, text)
            }
            UnitId::Pipe(i) => (pipe_object(), PIPE_RT, pipe_description(&config.pipes[i])),
        };
        let description =
            parse_turtle(&turtle).map_err(|e| PlantError::Config(format!("{name}: {e}")))?;
        if let UnitId::Silo(i) = unit {
            check_published_max(&config.silos[i], &description)?;
        }
        let mut inst: ObjectInstance = def.instantiate(0);
        match unit {
            UnitId::Silo(i) => {
                inst.values.insert(
                    silo::CAPACITY,
                    Value::Double(config.silos[i].capacity_liters),
                );
            }
            UnitId::Pipe(i) => {
                inst.values
                    .insert(pipe::FROM, config.pipes[i].from_silo.clone().into());
                inst.values
                    .insert(pipe::TO, config.pipes[i].to_silo.clone().into());
            }
        }
        let actuator = Arc::new(UnitActuator {
            unit,
            link: link.clone(),
        });
        let device = Device::start(
            (opts.bind_ip.as_str(), 0),
            &name,
            vec![def.clone()],
            vec![inst.clone()],
            actuator,
        )
        .map_err(|e| PlantError::Device(format!("{name}: {e}")))?;
        descriptors.push(CpmsDescriptor {
            endpoint_name: name.clone(),
            kind: CpmsKind::Primitive,
            provided_if: vec![ProvidedIf {
                path: inst.path(),
                label: rt.into(),
            }],
            required_if: vec![],
            description,
            hosted_objects: vec![inst],
        });
        devices.push((unit, name, device));
    }
    let publisher = DevicePublisher {
        devices: devices
            .iter()
            .map(|(u, _, d)| (*u, d.handle().clone()))
            .collect(),
    };
    let runtime = pending.spawn(world, runtime, publisher);
    // make sure the initial values are in place before anyone registers
    link.snapshot();
    let mut registrations = Vec::new();
    if let Some(rd) = rd {
        for (d, (_, _, dev)) in descriptors.iter().zip(&devices) {
            d.validate(|_| true)
                .map_err(|e| PlantError::Device(e.to_string()))?;
            let reg = register_with_directory(rd, d, &dev.handle().base_uri(), opts.lifetime_s)?;
            info!(
                "{} at {} registered as {}",
                d.endpoint_name,
                dev.local_addr(),
                reg.location()
            );
            registrations.push(reg);
        }
    }
    Ok(Plant {
        devices: devices.into_iter().map(|(_, n, d)| (n, d)).collect(),
        registrations,
        runtime: Some(runtime),
        link,
    })
}

/// A directory holding the plant's links and descriptions without running any device;
/// enough for discovery and planning.
pub fn offline_directory(config: &PlantConfig) -> Result<crate::rd::Directory, PlantError> {
    use crate::clock::VirtualClock;
    use crate::rd::LinkEntry;
    config.validate()?;
    let dir = crate::rd::Directory::new(Arc::new(VirtualClock::new()));
    let reject = |e: crate::rd::RdError| PlantError::Config(e.to_string());
    let add = |id: &str, object: u16, rt: &str, turtle: String| -> Result<(), PlantError> {
        let link = LinkEntry::new(format!("/{object}/0")).quoted("rt", rt);
        let links = crate::rd::serialize_links(&[link]);
        dir.register(id, u32::MAX as u64, "coap://0.0.0.0:0", &links)
            .map_err(reject)?;
        dir.put_description(id, &turtle).map_err(reject)?;
        Ok(())
    };
    for s in &config.silos {
        let text = s
            .description
            .clone()
            .unwrap_or_else(|| silo_description(s, config));
        add(&s.id, SILO_OBJECT, SILO_RT, text)?;
    }
    for p in &config.pipes {
        add(&p.id, PIPE_OBJECT, PIPE_RT, pipe_description(p))?;
    }
    Ok(dir)
}
