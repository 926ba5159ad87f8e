pub mod clock;
pub mod coap;
pub mod latency;
pub mod lwm2m;
pub mod orchestrator;
pub mod plant;
pub mod rd;
pub mod semantic;
