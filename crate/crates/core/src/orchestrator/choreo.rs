use std::collections::BTreeMap;
use std::fmt;
use std::net::SocketAddr;
use std::time::{Duration, Instant};

use crossbeam::channel::Select;
use log::debug;
use serde::{Deserialize, Serialize};

use super::execute::Outcome;
use super::OrchestratorError;
use crate::coap::{Client, Code, Message, Observation, RequestConfig};
use crate::lwm2m::ResourcePath;
use crate::plant::{pipe, silo, PIPE_OBJECT, SILO_OBJECT};
use crate::rd::{LinkFilter, RdClient};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trigger {
    pub endpoint: String,
    pub path: String,
    pub value: String,
}

/// An Execute on a device resource.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleAction {
    pub endpoint: String,
    pub path: String,
    #[serde(default)]
    pub args: String,
}

impl fmt::Display for RuleAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}", self.endpoint, self.path)?;
        if !self.args.is_empty() {
            write!(f, " {}", self.args)?;
        }
        Ok(())
    }
}

/// When `trigger` is observed, run `action`. A `final` rule ends the run once it fired.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChoreographyRule {
    pub trigger: Trigger,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub action: Option<RuleAction>,
    #[serde(default, rename = "final")]
    pub is_final: bool,
}

/// Name an Execute resource reports as lastAction once done.
fn action_name(path: &str) -> Option<&'static str> {
    let p: ResourcePath = path.parse().ok()?;
    match (p.object_id, p.resource_id) {
        (SILO_OBJECT, silo::FILL) => Some("Fill"),
        (SILO_OBJECT, silo::EMPTY) => Some("Empty"),
        (SILO_OBJECT, silo::HEAT) => Some("Heat"),
        (SILO_OBJECT, silo::MIX) => Some("Mix"),
        (PIPE_OBJECT, pipe::TRANSFER) => Some("Transfer"),
        _ => None,
    }
}

fn is_last_action(path: &str) -> bool {
    match path.parse::<ResourcePath>() {
        Ok(p) => {
            (p.object_id == SILO_OBJECT && p.resource_id == silo::LAST_ACTION)
                || (p.object_id == PIPE_OBJECT && p.resource_id == pipe::LAST_ACTION)
        }
        Err(_) => false,
    }
}

impl ChoreographyRule {
    /// Rejects rules that would re-trigger themselves directly.
    pub fn validate(&self) -> Result<(), OrchestratorError> {
        let Some(a) = &self.action else {
            return if self.is_final {
                Ok(())
            } else {
                Err(OrchestratorError::InvalidRules(
                    "rule without action must be final".into(),
                ))
            };
        };
        let t = &self.trigger;
        let same_resource = a.endpoint == t.endpoint && a.path == t.path;
        let own_completion = a.endpoint == t.endpoint
            && is_last_action(&t.path)
            && action_name(&a.path) == Some(t.value.as_str());
        if same_resource || own_completion {
            return Err(OrchestratorError::InvalidRules(format!(
                "rule on {} {}={} triggers itself",
                t.endpoint, t.path, t.value
            )));
        }
        Ok(())
    }
}

pub fn parse_rules(json: &str) -> Result<Vec<ChoreographyRule>, OrchestratorError> {
    let rules: Vec<ChoreographyRule> =
        serde_json::from_str(json).map_err(|e| OrchestratorError::InvalidRules(e.to_string()))?;
    rules.iter().try_for_each(ChoreographyRule::validate)?;
    Ok(rules)
}

#[derive(Debug, Clone)]
pub struct ChoreoOptions {
    /// Most rule firings allowed in one run.
    pub budget: usize,
    /// The run ends after this long without any notification.
    pub quiescence: Duration,
    pub request: RequestConfig,
}

impl Default for ChoreoOptions {
    fn default() -> Self {
        ChoreoOptions {
            budget: 1000,
            quiescence: Duration::from_secs(2),
            request: RequestConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChoreoEvent {
    pub ts_ms: f64,
    /// Index of the rule that fired; `None` for the initial Execute.
    pub rule: Option<usize>,
    pub action: RuleAction,
    pub outcome: Outcome,
}

impl ChoreoEvent {
    pub fn line(&self, index: usize) -> String {
        let rule = self.rule.map_or("init".to_string(), |r| format!("rule{r}"));
        format!(
            "{:.3} {index}:{rule} {} {}",
            self.ts_ms / 1000.0,
            self.action,
            self.outcome
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ChoreoEnd {
    FinalRule,
    Quiescent,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChoreoTrace {
    pub events: Vec<ChoreoEvent>,
    pub firings: usize,
    pub end: Result<ChoreoEnd, OrchestratorError>,
}

impl ChoreoTrace {
    /// `endpoint path` of every Execute in order.
    pub fn actions(&self) -> Vec<String> {
        self.events
            .iter()
            .map(|e| format!("{} {}", e.action.endpoint, e.action.path))
            .collect()
    }
}

impl fmt::Display for ChoreoTrace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, e) in self.events.iter().enumerate() {
            writeln!(f, "{}", e.line(i))?;
        }
        match &self.end {
            Ok(ChoreoEnd::FinalRule) => {
                writeln!(f, "# end final rule after {} firings", self.firings)
            }
            Ok(ChoreoEnd::Quiescent) => {
                writeln!(f, "# end quiescent after {} firings", self.firings)
            }
            Err(e) => writeln!(f, "# end error: {e}"),
        }
    }
}

fn execute(client: &Client, addr: SocketAddr, a: &RuleAction, cfg: &RequestConfig) -> Outcome {
    let mut m = Message::request(Code::POST, &a.path);
    m.payload = a.args.as_bytes().to_vec();
    match client.request(addr, m, cfg) {
        Ok(r) if r.code == Code::CHANGED => Outcome::Ok,
        Ok(r) => Outcome::Error(format!("{} {}", r.code, r.payload_str())),
        Err(e) => Outcome::Error(e.to_string()),
    }
}

/// Installs one Observe per distinct trigger resource, runs `initial`, then fires
/// matching rules (in rule order) on every notification until a final rule fires,
/// nothing happens for `quiescence`, or the firing budget is exhausted.
pub fn run_choreography(
    rules: &[ChoreographyRule],
    rd: &RdClient,
    initial: &RuleAction,
    opts: &ChoreoOptions,
) -> ChoreoTrace {
    let mut trace = ChoreoTrace {
        events: Vec::new(),
        firings: 0,
        end: Ok(ChoreoEnd::Quiescent),
    };
    if let Err(e) = choreograph(rules, rd, initial, opts, &mut trace) {
        trace.end = Err(e);
    }
    trace
}

fn choreograph(
    rules: &[ChoreographyRule],
    rd: &RdClient,
    initial: &RuleAction,
    opts: &ChoreoOptions,
    trace: &mut ChoreoTrace,
) -> Result<(), OrchestratorError> {
    rules.iter().try_for_each(ChoreographyRule::validate)?;
    let addresses: BTreeMap<String, SocketAddr> = rd
        .lookup_links(&LinkFilter::default())?
        .into_iter()
        .filter_map(|l| Some((l.endpoint.clone(), l.address()?)))
        .collect();
    let addr = |ep: &str| {
        addresses
            .get(ep)
            .copied()
            .ok_or_else(|| OrchestratorError::Unreachable(ep.to_string()))
    };
    for r in rules {
        addr(&r.trigger.endpoint)?;
        if let Some(a) = &r.action {
            addr(&a.endpoint)?;
        }
    }
    let initial_addr = addr(&initial.endpoint)?;

    let client =
        Client::bind("0.0.0.0:0").map_err(|e| OrchestratorError::Transport(e.to_string()))?;
    let mut watched: Vec<((String, String), Observation)> = Vec::new();
    for r in rules {
        let key = (r.trigger.endpoint.clone(), r.trigger.path.clone());
        if watched.iter().any(|(k, _)| *k == key) {
            continue;
        }
        let obs = client
            .observe(addr(&key.0)?, &key.1, &opts.request)
            .map_err(|_| OrchestratorError::Unreachable(key.0.clone()))?;
        watched.push((key, obs));
    }

    let t0 = Instant::now();
    let outcome = execute(&client, initial_addr, initial, &opts.request);
    trace.events.push(ChoreoEvent {
        ts_ms: 0.0,
        rule: None,
        action: initial.clone(),
        outcome,
    });

    let mut sel = Select::new();
    for (_, o) in &watched {
        sel.recv(o.receiver());
    }
    loop {
        let Ok(op) = sel.select_timeout(opts.quiescence) else {
            trace.end = Ok(ChoreoEnd::Quiescent);
            break;
        };
        let i = op.index();
        let Ok(note) = op.recv(watched[i].1.receiver()) else {
            continue;
        };
        let (ep, path) = &watched[i].0;
        let value = note.payload_str();
        debug!("notification {ep} {path} = {value}");
        let mut done = false;
        for (ri, r) in rules.iter().enumerate() {
            let t = &r.trigger;
            if t.endpoint != *ep || t.path != *path || t.value != value {
                continue;
            }
            if let Some(a) = &r.action {
                if trace.firings == opts.budget {
                    return Err(OrchestratorError::CycleBudgetExceeded(opts.budget));
                }
                trace.firings += 1;
                let outcome = execute(&client, addr(&a.endpoint)?, a, &opts.request);
                trace.events.push(ChoreoEvent {
                    ts_ms: t0.elapsed().as_secs_f64() * 1000.0,
                    rule: Some(ri),
                    action: a.clone(),
                    outcome,
                });
            }
            done |= r.is_final;
        }
        if done {
            trace.end = Ok(ChoreoEnd::FinalRule);
            break;
        }
    }
    drop(sel);
    for (_, o) in watched {
        let _ = o.cancel(&opts.request);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rule(tv: &str, apath: &str) -> ChoreographyRule {
        ChoreographyRule {
            trigger: Trigger {
                endpoint: "S1".into(),
                path: "/26241/0/9".into(),
                value: tv.into(),
            },
            action: Some(RuleAction {
                endpoint: "S1".into(),
                path: apath.into(),
                args: String::new(),
            }),
            is_final: false,
        }
    }

    #[test]
    fn self_triggering_rules_are_rejected() {
        assert!(rule("Fill", "/26241/0/12").validate().is_ok());
        assert!(rule("Heat", "/26241/0/12").validate().is_err());
        assert!(rule("x", "/26241/0/9").validate().is_err());
        let mut other = rule("Heat", "/26241/0/12");
        other.action.as_mut().unwrap().endpoint = "S2".into();
        assert!(other.validate().is_ok());
        let mut r = rule("Mix", "/26241/0/12");
        r.action = None;
        assert!(r.validate().is_err());
        r.is_final = true;
        assert!(r.validate().is_ok());
    }

    #[test]
    fn rules_json() {
        let rules = parse_rules(
            r#"[{"trigger":{"endpoint":"S1","path":"/26241/0/9","value":"Fill"},
                 "action":{"endpoint":"S1","path":"/26241/0/12","args":"setpoint=50"}},
                {"trigger":{"endpoint":"S1","path":"/26241/0/9","value":"Mix"},"final":true}]"#,
        )
        .unwrap();
        assert_eq!(rules.len(), 2);
        assert!(rules[1].is_final);
        assert_eq!(rules[0].action.as_ref().unwrap().args, "setpoint=50");
        assert!(parse_rules("[{}]").is_err());
    }
}
