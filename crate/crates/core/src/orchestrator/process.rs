use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::OrchestratorError;
use crate::plant::Service;

/// One QoS requirement on a requested service.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct QosConstraint {
    /// Material the service must accept, e.g. `dbpedia:Liquid`.
    #[serde(
        default,
        alias = "material_type",
        skip_serializing_if = "Option::is_none"
    )]
    pub material: Option<String>,
    /// Unit of the capability value, e.g. `dbpedia:Celsius`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unit: Option<String>,
    /// Lower bound on the published capability (max temperature for Heat).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_capability: Option<f64>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum OneOrMany {
    One(QosConstraint),
    Many(Vec<QosConstraint>),
}

fn qos_list<'de, D: serde::Deserializer<'de>>(d: D) -> Result<Vec<QosConstraint>, D::Error> {
    Ok(match OneOrMany::deserialize(d)? {
        OneOrMany::One(c) => vec![c],
        OneOrMany::Many(v) => v,
    })
}

/// A plant-independent request for a service, resolved to a device during planning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServiceRequest {
    pub label: String,
    #[serde(
        default,
        deserialize_with = "qos_list",
        skip_serializing_if = "Vec::is_empty"
    )]
    pub qos: Vec<QosConstraint>,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
}

impl ServiceRequest {
    pub fn new(label: &str) -> Self {
        ServiceRequest {
            label: label.to_string(),
            qos: Vec::new(),
            params: BTreeMap::new(),
        }
    }

    pub fn heat(setpoint_c: f64) -> Self {
        let mut r = ServiceRequest::new("Heat");
        r.params.insert("setpoint".into(), setpoint_c);
        r.qos.push(QosConstraint {
            material: Some("dbpedia:Liquid".into()),
            unit: Some("dbpedia:Celsius".into()),
            min_capability: None,
        });
        r
    }

    pub fn mix(duration_s: f64) -> Self {
        let mut r = ServiceRequest::new("Mix");
        r.params.insert("duration".into(), duration_s);
        r.qos.push(QosConstraint {
            material: Some("dbpedia:Liquid".into()),
            ..Default::default()
        });
        r
    }

    pub fn with_min_capability(mut self, v: f64) -> Self {
        match self.qos.first_mut() {
            Some(c) => c.min_capability = Some(v),
            None => self.qos.push(QosConstraint {
                min_capability: Some(v),
                ..Default::default()
            }),
        }
        self
    }

    pub fn service(&self) -> Option<Service> {
        Service::from_label(&self.label)
    }

    pub fn param(&self, name: &str) -> Option<f64> {
        self.params.get(name).copied()
    }

    /// The capability a provider needs: the largest stated minimum, and for Heat the setpoint.
    pub fn required_capability(&self) -> Option<f64> {
        let stated = self.qos.iter().filter_map(|c| c.min_capability);
        let implied = match self.service() {
            Some(Service::Heat) => self.param("setpoint"),
            _ => None,
        };
        stated.chain(implied).reduce(f64::max)
    }

    pub fn validate(&self) -> Result<(), OrchestratorError> {
        let bad = |m: String| Err(OrchestratorError::InvalidProcess(m));
        if self.label.trim().is_empty() {
            return bad("service label is empty".into());
        }
        if !self
            .label
            .chars()
            .all(|c| c.is_alphanumeric() || c == '-' || c == '_')
        {
            return bad(format!(
                "service label {:?} must be a plain word",
                self.label
            ));
        }
        if ["fill", "empty", "transfer"].contains(&self.label.to_ascii_lowercase().as_str()) {
            return bad(format!(
                "{} is a plant-specific operation and cannot appear in a process spec",
                self.label
            ));
        }
        if let Some((k, v)) = self.params.iter().find(|(_, v)| !v.is_finite()) {
            return bad(format!("{}: parameter {k} = {v} is not finite", self.label));
        }
        let needs = match self.service() {
            Some(Service::Heat) => Some("setpoint"),
            Some(Service::Mix) => Some("duration"),
            _ => None,
        };
        if let Some(p) = needs {
            if self.param(p).is_none() {
                return bad(format!("{} needs parameter {p}", self.label));
            }
        }
        if self.service() == Some(Service::Mix) && self.param("duration").unwrap_or(0.0) < 0.0 {
            return bad("Mix duration must be non-negative".into());
        }
        Ok(())
    }
}

impl fmt::Display for ServiceRequest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label)?;
        if !self.params.is_empty() {
            let ps: Vec<String> = self
                .params
                .iter()
                .map(|(k, v)| format!("{k}={v}"))
                .collect();
            write!(f, "({})", ps.join(","))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProcessInput {
    pub ingredient: String,
    /// Percent of the source silo's capacity.
    pub volume: f64,
}

/// A process described independently of any plant (the PIM).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProcessSpec {
    pub name: String,
    pub inputs: Vec<ProcessInput>,
    pub steps: Vec<ServiceRequest>,
    /// Silo that delivers the product; any Empty provider when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delivery: Option<String>,
}

impl ProcessSpec {
    pub fn from_json(text: &str) -> Result<ProcessSpec, OrchestratorError> {
        let spec: ProcessSpec = serde_json::from_str(text)
            .map_err(|e| OrchestratorError::InvalidProcess(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("process spec serializes")
    }

    pub fn validate(&self) -> Result<(), OrchestratorError> {
        if self.name.trim().is_empty() {
            return Err(OrchestratorError::InvalidProcess(
                "process name is empty".into(),
            ));
        }
        if self.inputs.is_empty() {
            return Err(OrchestratorError::InvalidProcess(format!(
                "{} has no inputs",
                self.name
            )));
        }
        for i in &self.inputs {
            if i.ingredient.is_empty() || i.ingredient.contains(['"', '\\', ',', '&', '=', '?']) {
                return Err(OrchestratorError::InvalidProcess(format!(
                    "bad ingredient name {:?}",
                    i.ingredient
                )));
            }
            if !(i.volume > 0.0 && i.volume <= 100.0) {
                return Err(OrchestratorError::InvalidProcess(format!(
                    "input {} volume {} must be in (0, 100] percent",
                    i.ingredient, i.volume
                )));
            }
        }
        self.steps.iter().try_for_each(ServiceRequest::validate)
    }

    /// Heat to 50 °C, then mix for 30 s.
    pub fn lgp_a() -> ProcessSpec {
        ProcessSpec {
            name: "lgpA".into(),
            inputs: vec![ProcessInput {
                ingredient: "liqueur-base".into(),
                volume: 50.0,
            }],
            steps: vec![ServiceRequest::heat(50.0), ServiceRequest::mix(30.0)],
            delivery: None,
        }
    }

    /// Heat to 60 °C on a silo rated for at least 50 °C, then mix for 60 s.
    pub fn lgp_b() -> ProcessSpec {
        ProcessSpec {
            name: "lgpB".into(),
            inputs: vec![ProcessInput {
                ingredient: "liqueur-base".into(),
                volume: 50.0,
            }],
            steps: vec![
                ServiceRequest::heat(60.0).with_min_capability(50.0),
                ServiceRequest::mix(60.0),
            ],
            delivery: None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_shape() {
        let p = ProcessSpec::from_json(
            r#"{"name":"lgpA","inputs":[{"ingredient":"liqueur-base","volume":50}],
                "steps":[{"label":"Heat","qos":{"material":"dbpedia:Liquid","unit":"dbpedia:Celsius"},"params":{"setpoint":50}},
                         {"label":"Mix","qos":[{"material":"dbpedia:Liquid"}],"params":{"duration":30}}]}"#,
        )
        .unwrap();
        assert_eq!(p, ProcessSpec::lgp_a());
        assert_eq!(ProcessSpec::from_json(&p.to_json()).unwrap(), p);
    }

    #[test]
    fn pim_purity() {
        for label in ["Fill", "empty", "Transfer"] {
            let mut p = ProcessSpec::lgp_a();
            p.steps.insert(1, ServiceRequest::new(label));
            assert!(
                matches!(p.validate(), Err(OrchestratorError::InvalidProcess(_))),
                "{label}"
            );
        }
        let mut p = ProcessSpec::lgp_a();
        p.steps[0].params.clear();
        assert!(p.validate().is_err());
        let mut p = ProcessSpec::lgp_b();
        p.inputs[0].volume = 0.0;
        assert!(p.validate().is_err());
        ProcessSpec::lgp_b().validate().unwrap();
    }

    #[test]
    fn required_capability() {
        assert_eq!(ServiceRequest::heat(50.0).required_capability(), Some(50.0));
        assert_eq!(
            ServiceRequest::heat(40.0)
                .with_min_capability(50.0)
                .required_capability(),
            Some(50.0)
        );
        assert_eq!(ServiceRequest::mix(3.0).required_capability(), None);
        assert_eq!(ServiceRequest::heat(60.0).to_string(), "Heat(setpoint=60)");
    }
}
