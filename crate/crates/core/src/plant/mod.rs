//! Discrete-time simulation of the liqueur plant (silos and pipes) and the LwM2M
//! devices that expose each unit as a primitive cyber-physical microservice.

mod config;
mod devices;
mod runtime;
mod world;

use thiserror::Error;

use crate::lwm2m::RegistrationError;

pub use config::{PipeSpec, PlantConfig, Service, SiloSpec};
pub use devices::{
    build_devices, local_namespace, offline_directory, pipe, pipe_description, pipe_object,
    pipe_path, service_resource, silo, silo_description, silo_object, silo_path, DeviceOptions,
    Plant, PIPE_OBJECT, PIPE_RT, SILO_OBJECT, SILO_RT,
};
pub use runtime::{
    plant_channel, PendingRuntime, PlantLink, PlantRuntime, Publisher, RuntimeOptions, TimeMode,
};
pub use world::{
    Action, ActionRequest, BatchRecord, Completion, Delivery, Param, PipeState, SiloState,
    SimClock, UnitId, UnitState, World, WorldError, VOLUME_EPS,
};

#[derive(Debug, Error)]
pub enum PlantError {
    #[error("invalid plant configuration: {0}")]
    Config(String),
    #[error("device: {0}")]
    Device(String),
    #[error(transparent)]
    Registration(#[from] RegistrationError),
}
