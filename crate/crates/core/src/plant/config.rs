use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use super::PlantError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Service {
    Fill,
    Empty,
    Heat,
    Mix,
}

impl Service {
    pub const ALL: [Service; 4] = [Service::Fill, Service::Empty, Service::Heat, Service::Mix];

    pub fn label(self) -> &'static str {
        match self {
            Service::Fill => "Fill",
            Service::Empty => "Empty",
            Service::Heat => "Heat",
            Service::Mix => "Mix",
        }
    }

    pub fn from_label(s: &str) -> Option<Service> {
        Service::ALL
            .into_iter()
            .find(|x| x.label().eq_ignore_ascii_case(s))
    }
}

impl fmt::Display for Service {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

fn d_initial_temp() -> f64 {
    20.0
}
fn d_heat_max() -> f64 {
    100.0
}
fn d_heat_rate() -> f64 {
    2.0
}
fn d_rate_pct() -> f64 {
    10.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiloSpec {
    pub id: String,
    pub capacity_liters: f64,
    #[serde(rename = "initial_temp_C", default = "d_initial_temp")]
    pub initial_temp_c: f64,
    pub services: BTreeSet<Service>,
    #[serde(rename = "heat_max_C", default = "d_heat_max")]
    pub heat_max_c: f64,
    #[serde(rename = "heat_rate_C_per_s", default = "d_heat_rate")]
    pub heat_rate_c_per_s: f64,
    #[serde(default = "d_rate_pct")]
    pub fill_rate_pct_per_s: f64,
    #[serde(default = "d_rate_pct")]
    pub empty_rate_pct_per_s: f64,
    #[serde(default)]
    pub mix_min_s: f64,
    /// Turtle published instead of the generated description.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
}

impl SiloSpec {
    /// A silo with default dynamics.
    pub fn new(id: &str, capacity_liters: f64, services: &[Service]) -> Self {
        SiloSpec {
            id: id.to_string(),
            capacity_liters,
            initial_temp_c: d_initial_temp(),
            services: services.iter().copied().collect(),
            heat_max_c: d_heat_max(),
            heat_rate_c_per_s: d_heat_rate(),
            fill_rate_pct_per_s: d_rate_pct(),
            empty_rate_pct_per_s: d_rate_pct(),
            mix_min_s: 0.0,
            description: None,
        }
    }

    pub fn with_heat_max(mut self, c: f64) -> Self {
        self.heat_max_c = c;
        self
    }

    pub fn provides(&self, s: Service) -> bool {
        self.services.contains(&s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipeSpec {
    pub id: String,
    pub from_silo: String,
    pub to_silo: String,
    #[serde(default = "d_rate_pct")]
    pub transfer_rate_pct_per_s: f64,
}

impl PipeSpec {
    pub fn new(id: &str, from: &str, to: &str) -> Self {
        PipeSpec {
            id: id.to_string(),
            from_silo: from.to_string(),
            to_silo: to.to_string(),
            transfer_rate_pct_per_s: d_rate_pct(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantConfig {
    pub silos: Vec<SiloSpec>,
    #[serde(default)]
    pub pipes: Vec<PipeSpec>,
    #[serde(default)]
    pub ingredient_sources: BTreeMap<String, String>,
    pub delivery_silo: String,
}

impl PlantConfig {
    pub fn from_json(text: &str) -> Result<PlantConfig, PlantError> {
        let cfg: PlantConfig =
            serde_json::from_str(text).map_err(|e| PlantError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn silo(&self, id: &str) -> Option<&SiloSpec> {
        self.silos.iter().find(|s| s.id == id)
    }

    pub fn validate(&self) -> Result<(), PlantError> {
        let bad = |m: String| Err(PlantError::Config(m));
        let mut ids = BTreeSet::new();
        for id in self
            .silos
            .iter()
            .map(|s| &s.id)
            .chain(self.pipes.iter().map(|p| &p.id))
        {
            if id.is_empty() || id.contains(['/', '?', '&', '=', ' ', '"']) {
                return bad(format!("bad unit id {id:?}"));
            }
            if !ids.insert(id) {
                return bad(format!("duplicate unit id {id}"));
            }
        }
        for s in &self.silos {
            let positive = [
                s.capacity_liters,
                s.heat_rate_c_per_s,
                s.fill_rate_pct_per_s,
                s.empty_rate_pct_per_s,
            ];
            if positive.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
                return bad(format!("{}: capacity and rates must be positive", s.id));
            }
            if s.mix_min_s.is_nan() || s.mix_min_s < 0.0 {
                return bad(format!("{}: mix_min_s must be non-negative", s.id));
            }
            if s.initial_temp_c > s.heat_max_c {
                return bad(format!("{}: initial temperature above heat_max_C", s.id));
            }
        }
        for p in &self.pipes {
            for end in [&p.from_silo, &p.to_silo] {
                if self.silo(end).is_none() {
                    return bad(format!("pipe {} references unknown silo {end}", p.id));
                }
            }
            if p.from_silo == p.to_silo {
                return bad(format!("pipe {} loops on {}", p.id, p.from_silo));
            }
            if !(p.transfer_rate_pct_per_s.is_finite() && p.transfer_rate_pct_per_s > 0.0) {
                return bad(format!("pipe {}: rate must be positive", p.id));
            }
        }
        for (ingredient, silo) in &self.ingredient_sources {
            match self.silo(silo) {
                Some(s) if s.provides(Service::Fill) => {}
                _ => {
                    return bad(format!(
                        "source of {ingredient} ({silo}) is not a Fill silo"
                    ))
                }
            }
        }
        match self.silo(&self.delivery_silo) {
            Some(s) if s.provides(Service::Empty) => Ok(()),
            _ => bad(format!(
                "delivery silo {} must provide Empty",
                self.delivery_silo
            )),
        }
    }

    /// Two silos: S1 fills, mixes and delivers; S2 heats up to 70 °C.
    pub fn two_silo() -> PlantConfig {
        PlantConfig {
            silos: vec![
                SiloSpec::new("S1", 1000.0, &[Service::Fill, Service::Mix, Service::Empty]),
                SiloSpec::new("S2", 1000.0, &[Service::Heat]).with_heat_max(70.0),
            ],
            pipes: vec![
                PipeSpec::new("P12", "S1", "S2"),
                PipeSpec::new("P21", "S2", "S1"),
            ],
            ingredient_sources: [("liqueur-base".to_string(), "S1".to_string())].into(),
            delivery_silo: "S1".into(),
        }
    }

    /// One silo that does everything.
    pub fn colocated() -> PlantConfig {
        PlantConfig {
            silos: vec![SiloSpec::new("S1", 1000.0, &Service::ALL).with_heat_max(70.0)],
            pipes: vec![],
            ingredient_sources: [("liqueur-base".to_string(), "S1".to_string())].into(),
            delivery_silo: "S1".into(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_defaults_and_names() {
        let cfg = PlantConfig::from_json(
            r#"{"silos":[{"id":"S1","capacity_liters":500,"services":["Fill","Empty"],"heat_max_C":70}],
                "ingredient_sources":{"base":"S1"},"delivery_silo":"S1"}"#,
        )
        .unwrap();
        let s = &cfg.silos[0];
        assert_eq!(s.initial_temp_c, 20.0);
        assert_eq!(s.heat_max_c, 70.0);
        assert_eq!(s.fill_rate_pct_per_s, 10.0);
        assert!(cfg.pipes.is_empty());
        let back = serde_json::to_string(&cfg).unwrap();
        assert!(back.contains("\"heat_max_C\":70.0"));
        assert_eq!(PlantConfig::from_json(&back).unwrap(), cfg);
    }

    #[test]
    fn validation() {
        PlantConfig::two_silo().validate().unwrap();
        PlantConfig::colocated().validate().unwrap();
        let mut c = PlantConfig::two_silo();
        c.pipes.push(PipeSpec::new("P9", "S1", "S9"));
        assert!(c.validate().is_err());
        let mut c = PlantConfig::two_silo();
        c.delivery_silo = "S2".into();
        assert!(c.validate().is_err());
        let mut c = PlantConfig::two_silo();
        c.ingredient_sources.insert("x".into(), "S2".into());
        assert!(c.validate().is_err());
        let mut c = PlantConfig::two_silo();
        c.pipes[1].id = "S1".into();
        assert!(c.validate().is_err());
        assert!(PlantConfig::from_json("{").is_err());
    }
}
