//! Fixtures shared by the criterion benches.

use cpms_core::coap::{Code, Message, MessageType};
use cpms_core::plant::{PipeSpec, PlantConfig, Service, SiloSpec};

pub const HEAT_TTL: &str = include_str!("../../core/tests/data/heat_service.ttl");
pub const HEAT_QUERY: &str = include_str!("../../core/tests/data/heat_discovery.rq");

/// A CON Execute carrying the heat payload, as the orchestrator sends it.
pub fn execute_request() -> Message {
    let mut m = Message::request(Code::POST, "/26241/0/12?holder=lgpA-1");
    m.msg_type = MessageType::Confirmable;
    m.message_id = 0x2a2a;
    m.token = vec![1, 2, 3, 4];
    m.payload = b"setpoint=50".to_vec();
    m
}

/// `n` silos in a ring with a chord every third silo; S0 fills and delivers,
/// the last silo heats and the middle one mixes.
pub fn ring_plant(n: usize) -> PlantConfig {
    assert!(n >= 3);
    let mut silos: Vec<SiloSpec> = (0..n)
        .map(|i| SiloSpec::new(&format!("S{i}"), 1000.0, &[]))
        .collect();
    silos[0].services.extend([Service::Fill, Service::Empty]);
    silos[n - 1].services.insert(Service::Heat);
    silos[n / 2].services.insert(Service::Mix);
    let mut pipes = Vec::new();
    for i in 0..n {
        let j = (i + 1) % n;
        pipes.push(PipeSpec::new(
            &format!("P{i}_{j}"),
            &format!("S{i}"),
            &format!("S{j}"),
        ));
        if i % 3 == 0 {
            let k = (i + n / 2) % n;
            if k != i {
                pipes.push(PipeSpec::new(
                    &format!("C{i}_{k}"),
                    &format!("S{i}"),
                    &format!("S{k}"),
                ));
            }
        }
    }
    PlantConfig {
        silos,
        pipes,
        ingredient_sources: [("liqueur-base".to_string(), "S0".to_string())].into(),
        delivery_silo: "S0".into(),
    }
}
