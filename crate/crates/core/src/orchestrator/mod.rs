//! Composite processes over the plant: plant-independent process specs, their binding
//! to discovered devices, reservation, execution by Execute + Observe, and rule-based
//! choreography.

mod choreo;
mod discovery;
mod execute;
mod plan;
mod process;

use thiserror::Error;

pub use choreo::{
    parse_rules, run_choreography, ChoreoEnd, ChoreoEvent, ChoreoOptions, ChoreoTrace,
    ChoreographyRule, RuleAction, Trigger,
};
pub use discovery::{
    discover, discovery_query, ingredient_sources, tolerances, Candidate, Catalog, PipeInfo,
    Topology,
};
pub use execute::{
    execute_plan, release, reserve, run_plan, run_process, ExecOptions, Outcome, ProcessTrace,
    RetryPolicy, StepRecord,
};
pub use plan::{service_path, transform_pim_to_psm, BindingMode, BoundPlan, BoundStep};
pub use process::{ProcessInput, ProcessSpec, QosConstraint, ServiceRequest};

use crate::rd::RdError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OrchestratorError {
    #[error("invalid process: {0}")]
    InvalidProcess(String),
    #[error("invalid rules: {0}")]
    InvalidRules(String),
    #[error("directory unreachable")]
    DirectoryUnreachable,
    #[error("directory: {0}")]
    Directory(String),
    #[error("no provider for {0}")]
    NoProvider(String),
    #[error("no pipe route from {from} to {to}")]
    Unroutable { from: String, to: String },
    #[error("no provider of {0} satisfies the requested QoS")]
    QoSUnsatisfiable(String),
    #[error("{0} stayed reserved by another process")]
    Busy(String),
    #[error("step {step} on {endpoint} timed out")]
    StepTimeout { step: usize, endpoint: String },
    #[error("{endpoint} answered {code}: {reason}")]
    DeviceError {
        endpoint: String,
        code: String,
        reason: String,
    },
    #[error("reservation of {0} was lost")]
    ReservationLost(String),
    #[error("{0} unreachable")]
    Unreachable(String),
    #[error("more than {0} rule firings")]
    CycleBudgetExceeded(usize),
    #[error("transport: {0}")]
    Transport(String),
}

impl From<RdError> for OrchestratorError {
    fn from(e: RdError) -> Self {
        match e {
            RdError::Unreachable => OrchestratorError::DirectoryUnreachable,
            other => OrchestratorError::Directory(other.to_string()),
        }
    }
}
