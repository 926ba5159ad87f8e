use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::net::SocketAddr;

use serde::Serialize;

use super::process::ServiceRequest;
use super::OrchestratorError;
use crate::coap::{Client, Code, Message, RequestConfig};
use crate::plant::{pipe, pipe_path, PlantConfig, Service, PIPE_RT, SILO_RT};
use crate::rd::{Directory, LinkFilter, RdClient, RemoteSolution};

/// Anything that answers semantic lookups: a remote directory or an in-process one.
pub trait Catalog {
    fn select(&self, query: &str) -> Result<Vec<RemoteSolution>, OrchestratorError>;
}

impl Catalog for RdClient {
    fn select(&self, query: &str) -> Result<Vec<RemoteSolution>, OrchestratorError> {
        Ok(self.lookup_semantic(query)?)
    }
}

impl Catalog for Directory {
    fn select(&self, query: &str) -> Result<Vec<RemoteSolution>, OrchestratorError> {
        Ok(self
            .lookup_semantic(query)?
            .into_iter()
            .filter_map(|h| RemoteSolution::parse_line(&format!("{}\t{}", h.endpoint, h.rendered)))
            .collect())
    }
}

/// A device offering a requested service.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Candidate {
    pub endpoint: String,
    pub service: String,
    pub capability: Option<f64>,
}

fn term(s: &str) -> String {
    if s.starts_with('<') || !s.contains("://") {
        s.to_string()
    } else {
        format!("<{s}>")
    }
}

/// The discovery query for a request: service label, accepted materials and, when a
/// capability is involved, a unit-qualified value with a lower bound.
pub fn discovery_query(req: &ServiceRequest) -> String {
    let is_heat = req.service() == Some(Service::Heat);
    let unit = req
        .qos
        .iter()
        .find_map(|c| c.unit.clone())
        .or_else(|| is_heat.then(|| "dbpedia:Celsius".to_string()));
    let min = req.required_capability();
    let with_capability = is_heat || unit.is_some() || min.is_some();
    let cap_var = if is_heat { "?maxTemp" } else { "?cap" };

    let mut lines = vec![
        "?service a lps:Service".to_string(),
        format!("rdfs:label '{}'@en", req.label),
    ];
    let materials: BTreeSet<&str> = req
        .qos
        .iter()
        .filter_map(|c| c.material.as_deref())
        .collect();
    for m in materials {
        lines.push(format!("lps:QoS/lps:hasMaterialType {}", term(m)));
    }
    if with_capability {
        lines.push(format!("lps:QoS {cap_var}"));
    }
    let mut q = String::from("SELECT ?service");
    if with_capability {
        q.push_str(" ?value");
    }
    q.push_str("\nWHERE {\n  ");
    q.push_str(&lines.join(";\n           "));
    q.push_str(".\n");
    if with_capability {
        let mut cap = Vec::new();
        if is_heat {
            cap.push(format!("{cap_var} a lps:MaxTemperature"));
        }
        if let Some(u) = &unit {
            cap.push(format!("lps:hasUnit/lps:hasUnitType {}", term(u)));
        }
        cap.push("lps:hasValue ?value".into());
        let mut block = cap.join(";\n           ");
        if !is_heat {
            block = format!("{cap_var} {block}");
        }
        q.push_str("  ");
        q.push_str(&block);
        if let Some(m) = min {
            q.push_str(&format!("\n           FILTER(?value>={m})"));
        }
        q.push_str(".\n");
    }
    q.push('}');
    q
}

/// Ranking: capability descending, then endpoint name.
fn rank(a: &Candidate, b: &Candidate) -> Ordering {
    let cap = |c: &Candidate| c.capability.unwrap_or(f64::NEG_INFINITY);
    cap(b)
        .partial_cmp(&cap(a))
        .unwrap_or(Ordering::Equal)
        .then_with(|| a.endpoint.cmp(&b.endpoint))
        .then_with(|| a.service.cmp(&b.service))
}

/// Providers of `req`, best first. One candidate per endpoint.
pub fn discover(
    req: &ServiceRequest,
    catalog: &dyn Catalog,
) -> Result<Vec<Candidate>, OrchestratorError> {
    let mut all: Vec<Candidate> = catalog
        .select(&discovery_query(req))?
        .into_iter()
        .filter_map(|s| {
            Some(Candidate {
                service: s.get("service")?.to_string(),
                capability: s.number("value"),
                endpoint: s.endpoint,
            })
        })
        .collect();
    all.sort_by(rank);
    let mut seen = BTreeSet::new();
    all.retain(|c| seen.insert(c.endpoint.clone()));
    Ok(all)
}

/// Fill providers that supply `ingredient`, by name.
pub fn ingredient_sources(
    ingredient: &str,
    catalog: &dyn Catalog,
) -> Result<Vec<String>, OrchestratorError> {
    let q = format!(
        "SELECT ?service\nWHERE {{\n  ?service a lps:Service;\n           rdfs:label 'Fill'@en;\n           lps:suppliesIngredient \"{ingredient}\".\n}}"
    );
    let eps: BTreeSet<String> = catalog
        .select(&q)?
        .into_iter()
        .map(|s| s.endpoint)
        .collect();
    Ok(eps.into_iter().collect())
}

/// Highest temperature each silo accepts, from its published MaxTemperature facts.
/// Silos that publish none are absent (no limit).
pub fn tolerances(catalog: &dyn Catalog) -> Result<BTreeMap<String, f64>, OrchestratorError> {
    let q = "SELECT ?value\nWHERE {\n  ?m a lps:MaxTemperature;\n     lps:hasValue ?value.\n}";
    let mut out: BTreeMap<String, f64> = BTreeMap::new();
    for s in catalog.select(q)? {
        if let Some(v) = s.number("value") {
            let e = out.entry(s.endpoint).or_insert(v);
            *e = e.min(v);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub struct PipeInfo {
    pub id: String,
    pub from: String,
    pub to: String,
}

/// Silos, the pipes between them, and where their devices listen.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Topology {
    pub silos: BTreeSet<String>,
    pub pipes: Vec<PipeInfo>,
    pub addresses: BTreeMap<String, SocketAddr>,
}

impl Topology {
    pub fn from_config(cfg: &PlantConfig) -> Topology {
        let mut pipes: Vec<PipeInfo> = cfg
            .pipes
            .iter()
            .map(|p| PipeInfo {
                id: p.id.clone(),
                from: p.from_silo.clone(),
                to: p.to_silo.clone(),
            })
            .collect();
        pipes.sort();
        Topology {
            silos: cfg.silos.iter().map(|s| s.id.clone()).collect(),
            pipes,
            addresses: BTreeMap::new(),
        }
    }

    /// Reads silos and pipes from the directory, then asks each pipe for its ends.
    pub fn discover(
        rd: &RdClient,
        client: &Client,
        cfg: &RequestConfig,
    ) -> Result<Topology, OrchestratorError> {
        let mut t = Topology::default();
        for l in rd.lookup_links(&LinkFilter::rt(SILO_RT))? {
            if let Some(a) = l.address() {
                t.addresses.insert(l.endpoint.clone(), a);
            }
            t.silos.insert(l.endpoint);
        }
        for l in rd.lookup_links(&LinkFilter::rt(PIPE_RT))? {
            let addr = l
                .address()
                .ok_or_else(|| OrchestratorError::Unreachable(l.endpoint.clone()))?;
            let read = |rid| -> Result<String, OrchestratorError> {
                let resp = client
                    .request(addr, Message::request(Code::GET, &pipe_path(rid)), cfg)
                    .map_err(|_| OrchestratorError::Unreachable(l.endpoint.clone()))?;
                if !resp.code.is_success() {
                    return Err(OrchestratorError::DeviceError {
                        endpoint: l.endpoint.clone(),
                        code: resp.code.to_string(),
                        reason: resp.payload_str(),
                    });
                }
                Ok(resp.payload_str())
            };
            let info = PipeInfo {
                id: l.endpoint.clone(),
                from: read(pipe::FROM)?,
                to: read(pipe::TO)?,
            };
            t.addresses.insert(l.endpoint, addr);
            t.pipes.push(info);
        }
        t.pipes.sort();
        Ok(t)
    }

    pub fn is_pipe(&self, endpoint: &str) -> bool {
        self.pipes.iter().any(|p| p.id == endpoint)
    }

    pub fn address(&self, endpoint: &str) -> Result<SocketAddr, OrchestratorError> {
        self.addresses
            .get(endpoint)
            .copied()
            .ok_or_else(|| OrchestratorError::Unreachable(endpoint.to_string()))
    }

    /// Shortest pipe route (fewest hops); among equals, the smallest pipe id is taken at
    /// every hop, starting from the first. `Some(vec![])` when `from == to`.
    pub fn route(&self, from: &str, to: &str) -> Option<Vec<&PipeInfo>> {
        self.route_avoiding(from, to, &|_| true)
    }

    /// Like [`route`](Self::route), passing only through silos accepted by `ok`
    /// (the destination included, the start excluded).
    pub fn route_avoiding(
        &self,
        from: &str,
        to: &str,
        ok: &dyn Fn(&str) -> bool,
    ) -> Option<Vec<&PipeInfo>> {
        if from == to {
            return Some(Vec::new());
        }
        if !ok(to) {
            return None;
        }
        // hop distance to `to`, searched backwards
        let mut dist: BTreeMap<&str, usize> = BTreeMap::from([(to, 0)]);
        let mut queue = VecDeque::from([to]);
        while let Some(n) = queue.pop_front() {
            let d = dist[n];
            for p in self.pipes.iter().filter(|p| p.to == n) {
                let m = p.from.as_str();
                if m != from && !ok(m) {
                    continue;
                }
                if !dist.contains_key(m) {
                    dist.insert(m, d + 1);
                    queue.push_back(m);
                }
            }
        }
        let mut at = from;
        let mut hops = Vec::new();
        while at != to {
            let d = *dist.get(at)?;
            let next = self
                .pipes
                .iter()
                .filter(|p| p.from == at && dist.get(p.to.as_str()) == Some(&(d - 1)))
                .min_by(|a, b| a.id.cmp(&b.id))?;
            hops.push(next);
            at = &next.to;
        }
        Some(hops)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::semantic::parse_query;

    #[test]
    fn heat_query_has_the_reference_shape() {
        let q = discovery_query(&ServiceRequest::heat(40.0).with_min_capability(50.0));
        let expected = "SELECT ?service ?value
WHERE {
  ?service a lps:Service;
           rdfs:label 'Heat'@en;
           lps:QoS/lps:hasMaterialType dbpedia:Liquid;
           lps:QoS ?maxTemp.
  ?maxTemp a lps:MaxTemperature;
           lps:hasUnit/lps:hasUnitType dbpedia:Celsius;
           lps:hasValue ?value
           FILTER(?value>=50).
}";
        assert_eq!(q, expected);
        let parsed = parse_query(&q).unwrap();
        assert_eq!(parsed.patterns.len(), 7);
        assert_eq!(parsed.filters.len(), 1);
    }

    #[test]
    fn other_queries_parse() {
        for r in [
            ServiceRequest::mix(3.0),
            ServiceRequest::new("Empty"),
            ServiceRequest::mix(3.0).with_min_capability(2.0),
        ] {
            parse_query(&discovery_query(&r)).unwrap();
        }
    }

    fn topo(pipes: &[(&str, &str, &str)]) -> Topology {
        let mut t = Topology::default();
        for (id, f, to) in pipes {
            t.silos.insert(f.to_string());
            t.silos.insert(to.to_string());
            t.pipes.push(PipeInfo {
                id: id.to_string(),
                from: f.to_string(),
                to: to.to_string(),
            });
        }
        t.pipes.sort();
        t
    }

    #[test]
    fn routes() {
        let t = topo(&[
            ("P12", "S1", "S2"),
            ("P21", "S2", "S1"),
            ("P13", "S1", "S3"),
            ("P32", "S3", "S2"),
            ("Pa", "S1", "S2"),
        ]);
        let ids = |r: Option<Vec<&PipeInfo>>| {
            r.map(|v| v.iter().map(|p| p.id.clone()).collect::<Vec<_>>())
        };
        assert_eq!(ids(t.route("S1", "S2")), Some(vec!["P12".to_string()]));
        assert_eq!(ids(t.route("S1", "S1")), Some(vec![]));
        assert_eq!(
            ids(t.route("S3", "S1")),
            Some(vec!["P32".into(), "P21".into()])
        );
        assert_eq!(
            ids(t.route("S2", "S3")),
            Some(vec!["P21".into(), "P13".into()])
        );
        assert_eq!(ids(t.route("S2", "S9")), None);
        assert_eq!(ids(t.route_avoiding("S3", "S1", &|s| s != "S2")), None);
    }
}
