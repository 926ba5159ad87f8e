use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::Duration;

use log::{debug, info};
use parking_lot::{Mutex, RwLock};

use super::link::{parse_links, LinkEntry};
use super::RdError;
use crate::clock::Clock;
use crate::semantic::{evaluate_dataset, merge_named, parse_query, parse_turtle, Dataset, Graph};

/// Registration lifetime used when `lt` is omitted.
pub const DEFAULT_LIFETIME_S: u64 = 86_400;

#[derive(Debug, Clone)]
pub struct RegistrationEntry {
    pub endpoint: String,
    /// Base URI the endpoint serves on, e.g. `coap://127.0.0.1:40001`.
    pub base: String,
    pub location: String,
    pub lifetime_s: u64,
    pub links: Vec<LinkEntry>,
    pub description: Graph,
    pub last_refresh: Duration,
}

impl RegistrationEntry {
    /// Live while `now - last_refresh <= lifetime`; the boundary instant still counts.
    pub fn is_live(&self, now: Duration) -> bool {
        now.saturating_sub(self.last_refresh) <= Duration::from_secs(self.lifetime_s)
    }
}

/// A lookup hit: the owning endpoint, its base URI, and one of its links.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LinkHit {
    pub endpoint: String,
    pub base: String,
    pub link: LinkEntry,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SemanticHit {
    pub endpoint: String,
    pub binding: crate::semantic::Binding,
    /// `var=term` pairs, tab separated, terms compacted with the endpoint's prefixes.
    pub rendered: String,
}

#[derive(Debug, Clone, Default)]
pub struct LinkFilter {
    pub endpoint: Option<String>,
    pub rt: Option<String>,
    pub interface: Option<String>,
}

impl LinkFilter {
    pub fn rt(rt: impl Into<String>) -> Self {
        LinkFilter {
            rt: Some(rt.into()),
            ..Default::default()
        }
    }

    fn accepts(&self, ep: &str, link: &LinkEntry) -> bool {
        self.endpoint.as_deref().is_none_or(|e| e == ep)
            && self.rt.as_deref().is_none_or(|rt| link.matches("rt", rt))
            && self
                .interface
                .as_deref()
                .is_none_or(|i| link.matches("if", i))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RegisterOutcome {
    Created,
    Updated,
}

/// Immutable view queried by lookups; rebuilt after every mutation.
#[derive(Debug, Default)]
struct Snapshot {
    entries: Vec<RegistrationEntry>,
    dataset: Dataset,
}

#[derive(Default)]
struct Registry {
    entries: BTreeMap<String, RegistrationEntry>,
    next_location: u64,
}

/// Resource directory state. Mutations are serialized; lookups read an `Arc` snapshot.
pub struct Directory {
    registry: Mutex<Registry>,
    snapshot: RwLock<Arc<Snapshot>>,
    clock: Arc<dyn Clock>,
}

impl Directory {
    pub fn new(clock: Arc<dyn Clock>) -> Self {
        Directory {
            registry: Mutex::new(Registry::default()),
            snapshot: RwLock::new(Arc::new(Snapshot::default())),
            clock,
        }
    }

    pub fn now(&self) -> Duration {
        self.clock.now()
    }

    fn publish(&self, reg: &Registry) {
        let entries: Vec<RegistrationEntry> = reg.entries.values().cloned().collect();
        let dataset = merge_named(
            entries
                .iter()
                .map(|e| (e.endpoint.clone(), e.description.clone())),
        );
        *self.snapshot.write() = Arc::new(Snapshot { entries, dataset });
    }

    fn current(&self) -> Arc<Snapshot> {
        self.snapshot.read().clone()
    }

    /// Registers `ep` or replaces its links when already known. Returns its location.
    pub fn register(
        &self,
        ep: &str,
        lifetime_s: u64,
        base: &str,
        links_text: &str,
    ) -> Result<(String, RegisterOutcome), RdError> {
        if ep.is_empty() {
            return Err(RdError::MissingEndpoint);
        }
        if lifetime_s == 0 {
            return Err(RdError::BadLifetime);
        }
        let links = parse_links(links_text)?;
        let now = self.now();
        let mut reg = self.registry.lock();
        let outcome = if let Some(e) = reg.entries.get_mut(ep) {
            e.links = links;
            e.lifetime_s = lifetime_s;
            e.base = base.to_string();
            e.last_refresh = now;
            RegisterOutcome::Updated
        } else {
            reg.next_location += 1;
            let location = format!("/rd/{}", reg.next_location);
            reg.entries.insert(
                ep.to_string(),
                RegistrationEntry {
                    endpoint: ep.to_string(),
                    base: base.to_string(),
                    location,
                    lifetime_s,
                    links,
                    description: Graph::new(),
                    last_refresh: now,
                },
            );
            RegisterOutcome::Created
        };
        let location = reg.entries[ep].location.clone();
        info!("{ep} registered at {location} ({outcome:?}, lt={lifetime_s})");
        self.publish(&reg);
        Ok((location, outcome))
    }

    pub fn put_description(&self, ep: &str, turtle: &str) -> Result<usize, RdError> {
        let graph = parse_turtle(turtle)?;
        let mut reg = self.registry.lock();
        let entry = reg
            .entries
            .get_mut(ep)
            .ok_or_else(|| RdError::UnknownEndpoint(ep.to_string()))?;
        let n = graph.len();
        entry.description = graph;
        self.publish(&reg);
        debug!("{ep} description replaced ({n} triples)");
        Ok(n)
    }

    /// Refreshes the registration at `location`, optionally replacing its lifetime.
    pub fn update(&self, location: &str, lifetime_s: Option<u64>) -> Result<(), RdError> {
        if lifetime_s == Some(0) {
            return Err(RdError::BadLifetime);
        }
        let now = self.now();
        let mut reg = self.registry.lock();
        let entry = reg
            .entries
            .values_mut()
            .find(|e| e.location == location)
            .ok_or_else(|| RdError::UnknownLocation(location.to_string()))?;
        entry.last_refresh = now;
        if let Some(lt) = lifetime_s {
            entry.lifetime_s = lt;
        }
        self.publish(&reg);
        Ok(())
    }

    pub fn remove(&self, location: &str) -> Result<String, RdError> {
        let mut reg = self.registry.lock();
        let ep = reg
            .entries
            .values()
            .find(|e| e.location == location)
            .map(|e| e.endpoint.clone())
            .ok_or_else(|| RdError::UnknownLocation(location.to_string()))?;
        reg.entries.remove(&ep);
        self.publish(&reg);
        Ok(ep)
    }

    /// Drops every entry with `now - last_refresh > lifetime`. Returns removed endpoint names.
    pub fn expire_sweep(&self, now: Duration) -> Vec<String> {
        let mut reg = self.registry.lock();
        let dead: Vec<String> = reg
            .entries
            .values()
            .filter(|e| !e.is_live(now))
            .map(|e| e.endpoint.clone())
            .collect();
        if !dead.is_empty() {
            for ep in &dead {
                reg.entries.remove(ep);
            }
            info!("expired: {}", dead.join(", "));
            self.publish(&reg);
        }
        dead
    }

    pub fn entry(&self, ep: &str) -> Option<RegistrationEntry> {
        self.expire_sweep(self.now());
        self.current()
            .entries
            .iter()
            .find(|e| e.endpoint == ep)
            .cloned()
    }

    pub fn endpoints(&self) -> Vec<String> {
        self.expire_sweep(self.now());
        self.current()
            .entries
            .iter()
            .map(|e| e.endpoint.clone())
            .collect()
    }

    pub fn lookup_links(&self, filter: &LinkFilter) -> Vec<LinkHit> {
        let now = self.now();
        self.expire_sweep(now);
        let snap = self.current();
        snap.entries
            .iter()
            .filter(|e| e.is_live(now))
            .flat_map(|e| {
                e.links
                    .iter()
                    .filter(move |l| filter.accepts(&e.endpoint, l))
                    .map(move |l| LinkHit {
                        endpoint: e.endpoint.clone(),
                        base: e.base.clone(),
                        link: l.clone(),
                    })
            })
            .collect()
    }

    /// Runs the query against every live description; each solution names its endpoint.
    pub fn lookup_semantic(&self, query_text: &str) -> Result<Vec<SemanticHit>, RdError> {
        let q = parse_query(query_text).map_err(RdError::BadQuery)?;
        let now = self.now();
        self.expire_sweep(now);
        let snap = self.current();
        let hits = evaluate_dataset(&snap.dataset, &q)
            .into_iter()
            .filter_map(|(ep, binding)| {
                let entry = snap.entries.iter().find(|e| e.endpoint == ep)?;
                if !entry.is_live(now) {
                    return None;
                }
                let mut prefixes = entry.description.prefixes().clone();
                prefixes.extend_missing(&q.prefixes);
                Some(SemanticHit {
                    rendered: binding.render(&q.select, &prefixes),
                    endpoint: ep,
                    binding,
                })
            })
            .collect();
        Ok(hits)
    }
}
