use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::Duration;

use log::{debug, info, warn};
use parking_lot::Mutex;
use thiserror::Error;

use super::model::ObjectInstance;
use crate::coap::Code;
use crate::rd::{LinkEntry, RdClient, RdError};
use crate::semantic::{serialize_turtle, Graph};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CpmsKind {
    Primitive,
    Composite,
}

/// A provided interface: an object instance path and the service label it offers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProvidedIf {
    pub path: String,
    pub label: String,
}

/// What a CPMS publishes about itself: its ports and its semantic description.
#[derive(Debug, Clone)]
pub struct CpmsDescriptor {
    pub endpoint_name: String,
    pub kind: CpmsKind,
    pub provided_if: Vec<ProvidedIf>,
    pub required_if: Vec<String>,
    pub description: Graph,
    pub hosted_objects: Vec<ObjectInstance>,
}

#[derive(Debug, Error)]
pub enum RegistrationError {
    #[error("invalid descriptor: {0}")]
    InvalidDescriptor(String),
    #[error("directory unreachable")]
    DirectoryUnreachable,
    #[error("registration rejected: {0}")]
    Rejected(RdError),
}

impl From<RdError> for RegistrationError {
    fn from(e: RdError) -> Self {
        match e {
            RdError::Unreachable => RegistrationError::DirectoryUnreachable,
            other => RegistrationError::Rejected(other),
        }
    }
}

impl CpmsDescriptor {
    /// `has_execute` reports whether an object id carries an Execute resource.
    pub fn validate(&self, has_execute: impl Fn(u16) -> bool) -> Result<(), RegistrationError> {
        let bad = |m: &str| {
            Err(RegistrationError::InvalidDescriptor(format!(
                "{}: {m}",
                self.endpoint_name
            )))
        };
        if self.endpoint_name.is_empty() {
            return bad("empty endpoint name");
        }
        match self.kind {
            CpmsKind::Primitive
                if !self.hosted_objects.iter().any(|o| has_execute(o.object_id)) =>
            {
                bad("a primitive CPMS must host an object with an Execute resource")
            }
            CpmsKind::Composite if self.required_if.is_empty() => {
                bad("a composite CPMS must require at least one service")
            }
            _ => Ok(()),
        }
    }

    /// One link per provided interface, typed by its label.
    pub fn links(&self) -> Vec<LinkEntry> {
        self.provided_if
            .iter()
            .map(|p| LinkEntry::new(&p.path).quoted("rt", &p.label))
            .collect()
    }
}

/// A live directory registration, refreshed at half its lifetime until dropped.
pub struct Registration {
    location: Arc<Mutex<String>>,
    stop: Arc<AtomicBool>,
    refresher: Option<JoinHandle<()>>,
}

impl Registration {
    pub fn location(&self) -> String {
        self.location.lock().clone()
    }
}

impl Drop for Registration {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        if let Some(t) = self.refresher.take() {
            t.thread().unpark();
            let _ = t.join();
        }
    }
}

fn post_all(
    rd: &RdClient,
    d: &CpmsDescriptor,
    base: &str,
    lifetime_s: u64,
) -> Result<String, RdError> {
    let location = rd.register(&d.endpoint_name, lifetime_s, base, &d.links())?;
    rd.put_description(&d.endpoint_name, &serialize_turtle(&d.description))?;
    Ok(location)
}

/// Posts the descriptor's links and description to the directory and keeps the
/// registration alive. `base` is the `coap://` address the device serves on.
pub fn register_with_directory(
    rd: &RdClient,
    descriptor: &CpmsDescriptor,
    base: &str,
    lifetime_s: u64,
) -> Result<Registration, RegistrationError> {
    if lifetime_s == 0 {
        return Err(RegistrationError::InvalidDescriptor(
            "lifetime must be positive".into(),
        ));
    }
    let location = post_all(rd, descriptor, base, lifetime_s)?;
    info!("{} registered at {location}", descriptor.endpoint_name);
    let location = Arc::new(Mutex::new(location));
    let stop = Arc::new(AtomicBool::new(false));
    let refresher = {
        let (rd, d, base) = (rd.clone(), descriptor.clone(), base.to_string());
        let (location, stop) = (location.clone(), stop.clone());
        let period = Duration::from_millis(lifetime_s * 500);
        thread::Builder::new()
            .name(format!("rd-refresh-{}", d.endpoint_name))
            .spawn(move || loop {
                thread::park_timeout(period);
                if stop.load(Ordering::SeqCst) {
                    return;
                }
                let loc = location.lock().clone();
                match rd.update(&loc, None) {
                    Ok(()) => debug!("{} refreshed {loc}", d.endpoint_name),
                    Err(RdError::Rejected { code, .. }) if code == Code::NOT_FOUND => {
                        // expired or directory restarted
                        match post_all(&rd, &d, &base, lifetime_s) {
                            Ok(l) => *location.lock() = l,
                            Err(e) => warn!("{} re-registration failed: {e}", d.endpoint_name),
                        }
                    }
                    Err(e) => warn!("{} refresh failed: {e}", d.endpoint_name),
                }
            })
            .expect("spawn refresh thread")
    };
    Ok(Registration {
        location,
        stop,
        refresher: Some(refresher),
    })
}
