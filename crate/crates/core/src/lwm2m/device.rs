use std::collections::BTreeMap;
use std::net::{SocketAddr, ToSocketAddrs};
use std::sync::Arc;

use log::{debug, warn};
use parking_lot::Mutex;

use super::model::{ExecArgs, ObjectDef, ObjectInstance, ResourcePath, Value};
use super::DeviceError;
use crate::coap::{
    content_format, encode_uint, option, CoapError, Code, Handler, HandlerError, Notifier, Request,
    Response, Server, ServerHandle,
};

/// Who is calling: peer address plus the optional reservation holder token (`?holder=`).
#[derive(Debug, Clone)]
pub struct Caller {
    pub source: SocketAddr,
    pub holder: Option<String>,
}

/// The physical side of a device. Writes and executes are routed here after the
/// object model has checked the path, operation and value type.
pub trait Actuator: Send + Sync + 'static {
    fn write(
        &self,
        device: &DeviceHandle,
        path: ResourcePath,
        value: Value,
        _caller: &Caller,
    ) -> Result<(), DeviceError> {
        device.set(path, value);
        Ok(())
    }

    fn execute(
        &self,
        device: &DeviceHandle,
        path: ResourcePath,
        args: &ExecArgs,
        caller: &Caller,
    ) -> Result<(), DeviceError>;
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ObserveRegistration {
    pub observer: SocketAddr,
    pub token: Vec<u8>,
    pub path: ResourcePath,
    pub seq: u32,
    last_mid: Option<u16>,
}

struct Store {
    instances: BTreeMap<(u16, u16), ObjectInstance>,
    observers: Vec<ObserveRegistration>,
}

struct Shared {
    name: String,
    defs: BTreeMap<u16, ObjectDef>,
    store: Mutex<Store>,
    notifier: Notifier,
    addr: SocketAddr,
}

/// Shared view of a running device: its object model, values and observers.
#[derive(Clone)]
pub struct DeviceHandle {
    shared: Arc<Shared>,
}

impl DeviceHandle {
    pub fn name(&self) -> &str {
        &self.shared.name
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.shared.addr
    }

    /// `coap://ip:port` of this device, as registered in the directory.
    pub fn base_uri(&self) -> String {
        format!("coap://{}", self.shared.addr)
    }

    pub fn defs(&self) -> impl Iterator<Item = &ObjectDef> {
        self.shared.defs.values()
    }

    pub fn instances(&self) -> Vec<ObjectInstance> {
        self.shared
            .store
            .lock()
            .instances
            .values()
            .cloned()
            .collect()
    }

    fn locate(&self, path: ResourcePath) -> Result<&super::ResourceDef, DeviceError> {
        let nf = || DeviceError::NotFound(path.to_string());
        let def = self.shared.defs.get(&path.object_id).ok_or_else(nf)?;
        let store = self.shared.store.lock();
        if !store
            .instances
            .contains_key(&(path.object_id, path.instance_id))
        {
            return Err(nf());
        }
        def.resource(path.resource_id).ok_or_else(nf)
    }

    /// Read as a client would see it: 4.04 for unknown paths, 4.05 unless readable.
    pub fn read(&self, path: ResourcePath) -> Result<Value, DeviceError> {
        if !self.locate(path)?.ops.read {
            return Err(DeviceError::MethodNotAllowed);
        }
        self.value(path)
            .ok_or_else(|| DeviceError::NotFound(path.to_string()))
    }

    /// Current stored value, bypassing operation checks.
    pub fn value(&self, path: ResourcePath) -> Option<Value> {
        let store = self.shared.store.lock();
        store
            .instances
            .get(&(path.object_id, path.instance_id))?
            .values
            .get(&path.resource_id)
            .cloned()
    }

    /// Stores `value` and notifies observers if it changed.
    pub fn set(&self, path: ResourcePath, value: Value) {
        self.store_value(path, value, false);
    }

    /// Stores `value` and notifies observers even if it is unchanged (event-like resources).
    pub fn set_forced(&self, path: ResourcePath, value: Value) {
        self.store_value(path, value, true);
    }

    fn store_value(&self, path: ResourcePath, value: Value, force: bool) {
        let mut store = self.shared.store.lock();
        let Some(inst) = store.instances.get_mut(&(path.object_id, path.instance_id)) else {
            warn!("{}: set on unknown path {path}", self.shared.name);
            return;
        };
        let changed = inst.values.get(&path.resource_id) != Some(&value);
        if !changed && !force {
            return;
        }
        let payload = value.to_payload();
        inst.values.insert(path.resource_id, value);
        let notifier = &self.shared.notifier;
        for reg in store.observers.iter_mut().filter(|r| r.path == path) {
            reg.seq += 1;
            match notifier.notify(reg.observer, &reg.token, reg.seq, Code::CONTENT, &payload) {
                Ok(mid) => reg.last_mid = Some(mid),
                Err(e) => debug!("notify {} failed: {e}", reg.observer),
            }
        }
    }

    pub fn observers(&self) -> Vec<ObserveRegistration> {
        self.shared.store.lock().observers.clone()
    }

    fn observe(&self, req: &Request, path: ResourcePath) -> Result<Response, DeviceError> {
        let value = self.read(path)?;
        let mut store = self.shared.store.lock();
        let (observer, token) = (req.source, req.message.token.clone());
        store
            .observers
            .retain(|r| !(r.observer == observer && r.token == token));
        store.observers.push(ObserveRegistration {
            observer,
            token,
            path,
            seq: 0,
            last_mid: None,
        });
        Ok(text_response(Code::CONTENT, &value).option(option::OBSERVE, encode_uint(0)))
    }

    fn deregister(&self, source: SocketAddr, token: &[u8]) {
        self.shared
            .store
            .lock()
            .observers
            .retain(|r| !(r.observer == source && r.token == token));
    }

    fn on_reset(&self, source: SocketAddr, mid: u16) {
        self.shared
            .store
            .lock()
            .observers
            .retain(|r| !(r.observer == source && r.last_mid == Some(mid)));
    }
}

fn text_response(code: Code, value: &Value) -> Response {
    Response::with_payload(code, value.to_payload()).option(
        option::CONTENT_FORMAT,
        encode_uint(content_format::TEXT_PLAIN as u64),
    )
}

struct DeviceService {
    device: DeviceHandle,
    actuator: Arc<dyn Actuator>,
}

impl DeviceService {
    fn dispatch(&self, req: &Request) -> Result<Response, DeviceError> {
        let m = &req.message;
        let segs = m.path_segments();
        let path =
            ResourcePath::from_segments(&segs).ok_or_else(|| DeviceError::NotFound(m.path()))?;
        let caller = Caller {
            source: req.source,
            holder: m.query("holder"),
        };
        let dev = &self.device;
        match m.code {
            Code::GET => match m.observe() {
                Some(0) => dev.observe(req, path),
                Some(1) => {
                    dev.deregister(req.source, &m.token);
                    Ok(text_response(Code::CONTENT, &dev.read(path)?))
                }
                _ => Ok(text_response(Code::CONTENT, &dev.read(path)?)),
            },
            Code::PUT => {
                let def = dev.locate(path)?;
                if !def.ops.write {
                    return Err(DeviceError::MethodNotAllowed);
                }
                let value = Value::from_payload(def.value_type, &m.payload)?;
                self.actuator.write(dev, path, value, &caller)?;
                Ok(Response::new(Code::CHANGED))
            }
            Code::POST => {
                if !dev.locate(path)?.ops.execute {
                    return Err(DeviceError::MethodNotAllowed);
                }
                let text = std::str::from_utf8(&m.payload)
                    .map_err(|_| DeviceError::BadArgs("arguments are not UTF-8".into()))?;
                let args = ExecArgs::parse(text)?;
                self.actuator.execute(dev, path, &args, &caller)?;
                Ok(Response::new(Code::CHANGED))
            }
            _ => {
                dev.locate(path)?;
                Err(DeviceError::MethodNotAllowed)
            }
        }
    }
}

impl Handler for DeviceService {
    fn handle(&mut self, req: &Request) -> Result<Response, HandlerError> {
        Ok(match self.dispatch(req) {
            Ok(r) => r,
            Err(e) => {
                debug!(
                    "{} {} {}: {e}",
                    self.device.name(),
                    req.message.code,
                    req.message.path()
                );
                Response::with_payload(e.code(), e.to_string())
            }
        })
    }

    fn reset(&mut self, source: SocketAddr, message_id: u16) {
        self.device.on_reset(source, message_id);
    }
}

/// A device endpoint serving one or more object instances over CoAP.
pub struct Device {
    handle: DeviceHandle,
    server: ServerHandle,
}

impl Device {
    /// Binds `addr` and serves `instances` (each must belong to one of `defs`).
    pub fn start(
        addr: impl ToSocketAddrs,
        name: &str,
        defs: Vec<ObjectDef>,
        instances: Vec<ObjectInstance>,
        actuator: Arc<dyn Actuator>,
    ) -> Result<Device, DeviceStartError> {
        let defs: BTreeMap<u16, ObjectDef> = defs.into_iter().map(|d| (d.object_id, d)).collect();
        let mut map = BTreeMap::new();
        for inst in instances {
            if !defs.contains_key(&inst.object_id) {
                return Err(DeviceStartError::UnknownObject(inst.object_id));
            }
            map.insert((inst.object_id, inst.instance_id), inst);
        }
        let server = Server::bind(addr)?;
        let handle = DeviceHandle {
            shared: Arc::new(Shared {
                name: name.to_string(),
                defs,
                store: Mutex::new(Store {
                    instances: map,
                    observers: Vec::new(),
                }),
                notifier: server.notifier(),
                addr: server.local_addr(),
            }),
        };
        let service = DeviceService {
            device: handle.clone(),
            actuator,
        };
        let server = server.run(service)?;
        Ok(Device { handle, server })
    }

    pub fn handle(&self) -> &DeviceHandle {
        &self.handle
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.server.local_addr()
    }

    pub fn shutdown(self) {
        self.server.shutdown();
    }
}

#[derive(Debug, thiserror::Error)]
pub enum DeviceStartError {
    #[error("instance of undefined object {0}")]
    UnknownObject(u16),
    #[error(transparent)]
    Coap(#[from] CoapError),
}
