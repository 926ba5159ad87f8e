use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::discovery::{discover, ingredient_sources, tolerances, Catalog, PipeInfo, Topology};
use super::process::{ProcessSpec, ServiceRequest};
use super::OrchestratorError;
use crate::plant::{service_resource, silo_path, Service};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BindingMode {
    /// Every endpoint chosen and reserved before the first step.
    Static,
    /// Service providers chosen and reserved just before they are needed.
    Dynamic,
}

impl FromStr for BindingMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "static" => Ok(BindingMode::Static),
            "dynamic" => Ok(BindingMode::Dynamic),
            other => Err(format!("unknown binding mode {other:?} (static|dynamic)")),
        }
    }
}

impl fmt::Display for BindingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BindingMode::Static => "static",
            BindingMode::Dynamic => "dynamic",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind")]
pub enum BoundStep {
    Fill {
        endpoint: String,
        ingredient: String,
        volume_pct: f64,
    },
    /// A process service; `endpoint` is `None` until resolved (dynamic mode).
    Apply {
        endpoint: Option<String>,
        path: String,
        request: ServiceRequest,
    },
    /// Move the batch through one pipe; `volume_pct` of the source capacity, whole batch if `None`.
    Transfer {
        pipe: String,
        from: String,
        to: String,
        volume_pct: Option<f64>,
    },
    Empty {
        endpoint: Option<String>,
    },
}

impl BoundStep {
    pub fn transfer(p: &PipeInfo) -> BoundStep {
        BoundStep::Transfer {
            pipe: p.id.clone(),
            from: p.from.clone(),
            to: p.to.clone(),
            volume_pct: None,
        }
    }

    /// Step name as used in traces: `Fill`, `Heat`, `Transfer(S1->S2)`, `Empty`.
    pub fn label(&self) -> String {
        match self {
            BoundStep::Fill { .. } => "Fill".into(),
            BoundStep::Apply { request, .. } => request.label.clone(),
            BoundStep::Transfer { from, to, .. } => format!("Transfer({from}->{to})"),
            BoundStep::Empty { .. } => "Empty".into(),
        }
    }

    pub fn endpoint(&self) -> Option<&str> {
        match self {
            BoundStep::Fill { endpoint, .. } => Some(endpoint),
            BoundStep::Apply { endpoint, .. } | BoundStep::Empty { endpoint } => {
                endpoint.as_deref()
            }
            BoundStep::Transfer { pipe, .. } => Some(pipe),
        }
    }
}

impl fmt::Display for BoundStep {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let at = |e: &Option<String>| e.clone().unwrap_or_else(|| "?".into());
        match self {
            BoundStep::Fill {
                endpoint,
                ingredient,
                volume_pct,
            } => write!(f, "Fill@{endpoint} {ingredient} {}%", volume_pct),
            BoundStep::Apply {
                endpoint, request, ..
            } => write!(f, "{}@{} {request}", request.label, at(endpoint)),
            BoundStep::Transfer {
                pipe,
                from,
                to,
                volume_pct,
            } => {
                write!(f, "Transfer {from}->{to} via {pipe}")?;
                match volume_pct {
                    Some(v) => write!(f, " {v}%"),
                    None => Ok(()),
                }
            }
            BoundStep::Empty { endpoint } => write!(f, "Empty@{}", at(endpoint)),
        }
    }
}

/// A process bound to a plant (the PSM).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundPlan {
    pub process: String,
    pub mode: BindingMode,
    pub steps: Vec<BoundStep>,
}

impl BoundPlan {
    /// Every endpoint named by the plan.
    pub fn endpoints(&self) -> BTreeSet<String> {
        self.steps
            .iter()
            .filter_map(|s| s.endpoint().map(str::to_string))
            .collect()
    }

    pub fn transfer_count(&self) -> usize {
        self.steps
            .iter()
            .filter(|s| matches!(s, BoundStep::Transfer { .. }))
            .count()
    }

    /// Short form, e.g. `Fill@S1, Transfer S1->S2, Heat@S2`.
    pub fn summary(&self) -> Vec<String> {
        self.steps
            .iter()
            .map(|s| match s {
                BoundStep::Transfer { from, to, .. } => format!("Transfer {from}->{to}"),
                BoundStep::Fill { endpoint, .. } => format!("Fill@{endpoint}"),
                BoundStep::Apply {
                    endpoint, request, ..
                } => {
                    format!("{}@{}", request.label, endpoint.as_deref().unwrap_or("?"))
                }
                BoundStep::Empty { endpoint } => {
                    format!("Empty@{}", endpoint.as_deref().unwrap_or("?"))
                }
            })
            .collect()
    }
}

impl fmt::Display for BoundPlan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "# plan {} ({})", self.process, self.mode)?;
        for (i, s) in self.steps.iter().enumerate() {
            writeln!(f, "{}. {s}", i + 1)?;
        }
        Ok(())
    }
}

/// Execute resource of a requested service.
pub fn service_path(req: &ServiceRequest) -> Result<String, OrchestratorError> {
    match req.service() {
        Some(s @ (Service::Heat | Service::Mix)) => Ok(silo_path(service_resource(s))),
        _ => Err(OrchestratorError::NoProvider(req.label.clone())),
    }
}

/// Provider selection shared by planning and dynamic execution.
pub(crate) struct Planner<'a> {
    pub catalog: &'a dyn Catalog,
    pub topo: &'a Topology,
    tolerance: BTreeMap<String, f64>,
}

impl<'a> Planner<'a> {
    pub fn new(catalog: &'a dyn Catalog, topo: &'a Topology) -> Result<Self, OrchestratorError> {
        Ok(Planner {
            tolerance: tolerances(catalog)?,
            catalog,
            topo,
        })
    }

    /// Whether a silo tolerates a batch as hot as `temp`.
    pub fn accepts(&self, silo: &str, temp: f64) -> bool {
        self.tolerance.get(silo).is_none_or(|t| *t >= temp)
    }

    pub fn route(
        &self,
        from: &str,
        to: &str,
        temp: f64,
    ) -> Result<Vec<PipeInfo>, OrchestratorError> {
        self.topo
            .route_avoiding(from, to, &|s| self.accepts(s, temp))
            .map(|r| r.into_iter().cloned().collect())
            .ok_or_else(|| OrchestratorError::Unroutable {
                from: from.to_string(),
                to: to.to_string(),
            })
    }

    /// Providers of `req` reachable from `loc`, in preference order (staying put first,
    /// then ranking order), each with its route.
    pub fn options(
        &self,
        req: &ServiceRequest,
        loc: &str,
        temp: f64,
    ) -> Result<Vec<(String, Vec<PipeInfo>)>, OrchestratorError> {
        let mut cands: Vec<String> = discover(req, self.catalog)?
            .into_iter()
            .map(|c| c.endpoint)
            .filter(|e| self.topo.silos.contains(e))
            .collect();
        if cands.is_empty() {
            let mut relaxed = req.clone();
            relaxed.qos.iter_mut().for_each(|c| c.min_capability = None);
            relaxed.params.clear();
            let any = discover(&relaxed, self.catalog)?
                .iter()
                .any(|c| self.topo.silos.contains(&c.endpoint));
            return Err(if any {
                OrchestratorError::QoSUnsatisfiable(req.label.clone())
            } else {
                OrchestratorError::NoProvider(req.label.clone())
            });
        }
        if let Some(i) = cands.iter().position(|c| c == loc) {
            let here = cands.remove(i);
            cands.insert(0, here);
        }
        if cands.iter().all(|c| !self.accepts(c, temp)) {
            return Err(OrchestratorError::QoSUnsatisfiable(req.label.clone()));
        }
        let options: Vec<_> = cands
            .iter()
            .filter_map(|c| self.route(loc, c, temp).ok().map(|r| (c.clone(), r)))
            .collect();
        if options.is_empty() {
            return Err(OrchestratorError::Unroutable {
                from: loc.to_string(),
                to: cands[0].clone(),
            });
        }
        Ok(options)
    }

    pub fn source_of(&self, ingredient: &str) -> Result<String, OrchestratorError> {
        ingredient_sources(ingredient, self.catalog)?
            .into_iter()
            .find(|s| self.topo.silos.contains(s))
            .ok_or_else(|| OrchestratorError::NoProvider(format!("Fill {ingredient}")))
    }

    /// Where the batch is delivered from `loc`, and the route there.
    pub fn delivery(
        &self,
        pim: &ProcessSpec,
        loc: &str,
        temp: f64,
    ) -> Result<(String, Vec<PipeInfo>), OrchestratorError> {
        match &pim.delivery {
            Some(d) => Ok((d.clone(), self.route(loc, d, temp)?)),
            None => Ok(self
                .options(&ServiceRequest::new("Empty"), loc, temp)?
                .remove(0)),
        }
    }
}

/// Upper bound of the batch temperature after `req` ran on it.
pub(crate) fn temp_after(temp: f64, req: &ServiceRequest) -> f64 {
    match (req.service(), req.param("setpoint")) {
        (Some(Service::Heat), Some(sp)) => temp.max(sp),
        _ => temp,
    }
}

/// Binds a plant-independent process to the plant: inserts fills, transfers along
/// shortest pipe routes, and the final empty.
pub fn transform_pim_to_psm(
    pim: &ProcessSpec,
    catalog: &dyn Catalog,
    topo: &Topology,
    mode: BindingMode,
) -> Result<BoundPlan, OrchestratorError> {
    pim.validate()?;
    let planner = Planner::new(catalog, topo)?;
    let mut steps = Vec::new();
    let mut loc: Option<String> = None;
    // ingredients enter at room temperature
    let mut temp = f64::NEG_INFINITY;
    for input in &pim.inputs {
        let src = planner.source_of(&input.ingredient)?;
        steps.push(BoundStep::Fill {
            endpoint: src.clone(),
            ingredient: input.ingredient.clone(),
            volume_pct: input.volume,
        });
        match &loc {
            None => loc = Some(src),
            Some(at) => steps.extend(
                planner
                    .route(&src, at, temp)?
                    .iter()
                    .map(BoundStep::transfer),
            ),
        }
    }
    let mut loc = loc.expect("validated: at least one input");
    for req in &pim.steps {
        let path = service_path(req)?;
        let (target, route) = planner.options(req, &loc, temp)?.remove(0);
        steps.extend(route.iter().map(BoundStep::transfer));
        steps.push(BoundStep::Apply {
            endpoint: Some(target.clone()),
            path,
            request: req.clone(),
        });
        temp = temp_after(temp, req);
        loc = target;
    }
    let (target, route) = planner.delivery(pim, &loc, temp)?;
    steps.extend(route.iter().map(BoundStep::transfer));
    steps.push(BoundStep::Empty {
        endpoint: Some(target),
    });

    if mode == BindingMode::Dynamic {
        steps = steps
            .into_iter()
            .filter_map(|s| match s {
                BoundStep::Transfer { .. } => None,
                BoundStep::Apply { path, request, .. } => Some(BoundStep::Apply {
                    endpoint: None,
                    path,
                    request,
                }),
                BoundStep::Empty { .. } => Some(BoundStep::Empty {
                    endpoint: pim.delivery.clone(),
                }),
                fill => Some(fill),
            })
            .collect();
    }
    Ok(BoundPlan {
        process: pim.name.clone(),
        mode,
        steps,
    })
}
