//! LwM2M-style object model (Object / Instance / Resource) served over CoAP, with
//! Read/Write/Execute/Observe and resource-directory registration.

mod device;
mod model;
mod registration;

use thiserror::Error;

use crate::coap::Code;

pub use device::{Actuator, Caller, Device, DeviceHandle, DeviceStartError, ObserveRegistration};
pub use model::{
    ExecArgs, ObjectDef, ObjectInstance, Operations, ResourceDef, ResourcePath, Value, ValueType,
};
pub use registration::{
    register_with_directory, CpmsDescriptor, CpmsKind, ProvidedIf, Registration, RegistrationError,
};

/// Errors a device reports to its clients; each maps to a CoAP response code.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum DeviceError {
    #[error("no resource at {0}")]
    NotFound(String),
    #[error("method not allowed")]
    MethodNotAllowed,
    #[error("bad value: {0}")]
    BadValue(String),
    #[error("bad arguments: {0}")]
    BadArgs(String),
    #[error("qos violation: {0}")]
    QoSViolation(String),
    #[error("unsupported service: {0}")]
    Unsupported(String),
    #[error("busy: {0}")]
    Busy(String),
    #[error("conflict: {0}")]
    Conflict(String),
    #[error("forbidden: {0}")]
    Forbidden(String),
    #[error("internal: {0}")]
    Internal(String),
}

impl DeviceError {
    pub fn code(&self) -> Code {
        match self {
            DeviceError::NotFound(_) => Code::NOT_FOUND,
            DeviceError::MethodNotAllowed | DeviceError::Unsupported(_) => Code::METHOD_NOT_ALLOWED,
            DeviceError::BadValue(_) | DeviceError::BadArgs(_) | DeviceError::QoSViolation(_) => {
                Code::BAD_REQUEST
            }
            DeviceError::Busy(_) | DeviceError::Conflict(_) => Code::CONFLICT,
            DeviceError::Forbidden(_) => Code::FORBIDDEN,
            DeviceError::Internal(_) => Code::INTERNAL_SERVER_ERROR,
        }
    }
}
