use std::collections::BTreeSet;
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use cpms_core::clock::SystemClock;
use cpms_core::coap::{Client, RequestConfig};
use cpms_core::orchestrator::{
    discover, parse_rules, release, reserve, run_choreography, run_plan, run_process,
    transform_pim_to_psm, BindingMode, BoundPlan, BoundStep, ChoreoEnd, ChoreoOptions, ExecOptions,
    OrchestratorError, PipeInfo, ProcessSpec, RetryPolicy, RuleAction, ServiceRequest, Topology,
};
use cpms_core::plant::{
    build_devices, offline_directory, silo, silo_path, DeviceOptions, PipeSpec, Plant, PlantConfig,
    RuntimeOptions, Service, SiloSpec, TimeMode, World,
};
use cpms_core::rd::{serve_directory, Directory, RdClient, RdServer};

fn plan_of(
    cfg: &PlantConfig,
    pim: &ProcessSpec,
    mode: BindingMode,
) -> Result<BoundPlan, OrchestratorError> {
    let dir = offline_directory(cfg).unwrap();
    transform_pim_to_psm(pim, &dir, &Topology::from_config(cfg), mode)
}

fn pim(steps: Vec<ServiceRequest>) -> ProcessSpec {
    let mut p = ProcessSpec::lgp_a();
    p.steps = steps;
    p
}

#[test]
fn two_silo_plan_inserts_transfers() {
    let plan = plan_of(
        &PlantConfig::two_silo(),
        &ProcessSpec::lgp_a(),
        BindingMode::Static,
    )
    .unwrap();
    assert_eq!(
        plan.summary(),
        [
            "Fill@S1",
            "Transfer S1->S2",
            "Heat@S2",
            "Transfer S2->S1",
            "Mix@S1",
            "Empty@S1"
        ]
    );
    assert!(matches!(&plan.steps[1], BoundStep::Transfer { pipe, .. } if pipe == "P12"));
    assert_eq!(plan.to_string().lines().count(), 7);
}

#[test]
fn colocated_plan_has_no_transfers() {
    let plan = plan_of(
        &PlantConfig::colocated(),
        &ProcessSpec::lgp_a(),
        BindingMode::Static,
    )
    .unwrap();
    assert_eq!(plan.transfer_count(), 0);
    assert_eq!(plan.summary(), ["Fill@S1", "Heat@S1", "Mix@S1", "Empty@S1"]);
}

#[test]
fn dynamic_plan_defers_providers() {
    let plan = plan_of(
        &PlantConfig::two_silo(),
        &ProcessSpec::lgp_b(),
        BindingMode::Dynamic,
    )
    .unwrap();
    assert_eq!(plan.summary(), ["Fill@S1", "Heat@?", "Mix@?", "Empty@?"]);
}

#[test]
fn planning_errors() {
    let two = PlantConfig::two_silo();
    let hot = pim(vec![ServiceRequest::heat(50.0).with_min_capability(90.0)]);
    assert_eq!(
        plan_of(&two, &hot, BindingMode::Static),
        Err(OrchestratorError::QoSUnsatisfiable("Heat".into()))
    );
    let too_hot = pim(vec![ServiceRequest::heat(80.0)]);
    assert!(matches!(
        plan_of(&two, &too_hot, BindingMode::Static),
        Err(OrchestratorError::QoSUnsatisfiable(_))
    ));
    let cool = pim(vec![ServiceRequest::new("Cool")]);
    assert_eq!(
        plan_of(&two, &cool, BindingMode::Static),
        Err(OrchestratorError::NoProvider("Cool".into()))
    );
    let mut one_way = two.clone();
    one_way.pipes.retain(|p| p.id == "P12");
    assert_eq!(
        plan_of(&one_way, &ProcessSpec::lgp_a(), BindingMode::Static),
        Err(OrchestratorError::Unroutable {
            from: "S2".into(),
            to: "S1".into()
        })
    );
    let mut impure = ProcessSpec::lgp_a();
    impure.steps.push(ServiceRequest::new("Transfer"));
    assert!(matches!(
        plan_of(&two, &impure, BindingMode::Static),
        Err(OrchestratorError::InvalidProcess(_))
    ));
}

#[test]
fn hot_batches_avoid_intolerant_silos() {
    // S1 -> S2 (heat to 80) -> {S3 tolerates 60, S4 tolerates 100} -> mix on either
    let mut cfg = PlantConfig {
        silos: vec![
            SiloSpec::new("S1", 1000.0, &[Service::Fill, Service::Empty]),
            SiloSpec::new("S2", 1000.0, &[Service::Heat]).with_heat_max(90.0),
            SiloSpec::new("S3", 1000.0, &[Service::Mix]).with_heat_max(60.0),
            SiloSpec::new("S4", 1000.0, &[Service::Mix]),
        ],
        pipes: vec![
            PipeSpec::new("P12", "S1", "S2"),
            PipeSpec::new("P23", "S2", "S3"),
            PipeSpec::new("P24", "S2", "S4"),
            PipeSpec::new("P31", "S3", "S1"),
            PipeSpec::new("P41", "S4", "S1"),
        ],
        ingredient_sources: [("liqueur-base".to_string(), "S1".to_string())].into(),
        delivery_silo: "S1".into(),
    };
    let p = pim(vec![ServiceRequest::heat(80.0), ServiceRequest::mix(1.0)]);
    let plan = plan_of(&cfg, &p, BindingMode::Static).unwrap();
    assert!(plan.summary().contains(&"Mix@S4".to_string()), "{plan}");
    cfg.silos[3].heat_max_c = 70.0;
    assert!(matches!(
        plan_of(&cfg, &p, BindingMode::Static),
        Err(OrchestratorError::QoSUnsatisfiable(_))
    ));
}

#[test]
fn discovery_ranks_by_capability_then_name() {
    let mut cfg = PlantConfig::two_silo();
    cfg.silos
        .push(SiloSpec::new("S0", 1000.0, &[Service::Heat]).with_heat_max(60.0));
    cfg.silos
        .push(SiloSpec::new("S3", 1000.0, &[Service::Heat]).with_heat_max(70.0));
    let dir = offline_directory(&cfg).unwrap();
    let req = ServiceRequest::heat(40.0).with_min_capability(50.0);
    let eps: Vec<String> = discover(&req, &dir)
        .unwrap()
        .into_iter()
        .map(|c| c.endpoint)
        .collect();
    assert_eq!(eps, ["S2", "S3", "S0"]);
    let none = ServiceRequest::heat(40.0).with_min_capability(95.0);
    assert!(discover(&none, &dir).unwrap().is_empty());
}

#[test]
fn discovery_on_the_reference_description() {
    let dir = Directory::new(Arc::new(SystemClock::new()));
    dir.register(
        "smartSilo4",
        60,
        "coap://127.0.0.1:1",
        r#"</26241/0>;rt="lps.silo""#,
    )
    .unwrap();
    dir.put_description("smartSilo4", include_str!("data/heat_service.ttl"))
        .unwrap();
    let hits = discover(&ServiceRequest::heat(40.0).with_min_capability(50.0), &dir).unwrap();
    assert_eq!(hits.len(), 1);
    assert_eq!(
        (hits[0].endpoint.as_str(), hits[0].service.as_str()),
        ("smartSilo4", "local:heat")
    );
    assert_eq!(hits[0].capability, Some(70.0));
}

// ---- end to end over CoAP ----

struct Rig {
    plant: Plant,
    rd: RdClient,
    _server: RdServer,
}

fn rig(cfg: &PlantConfig, runtime: RuntimeOptions) -> Rig {
    let dir = Arc::new(Directory::new(Arc::new(SystemClock::new())));
    let server = serve_directory("127.0.0.1:0", dir, Duration::from_secs(1)).unwrap();
    let rd = RdClient::new(Client::loopback().unwrap(), server.local_addr(), quick());
    let plant = build_devices(cfg, Some(&rd), runtime, &DeviceOptions::default()).unwrap();
    Rig {
        plant,
        rd,
        _server: server,
    }
}

fn quick() -> RequestConfig {
    RequestConfig::fixed(Duration::from_millis(500), 3)
}

fn opts(holder: &str) -> ExecOptions {
    let mut o = ExecOptions::new(holder);
    o.request = quick();
    o.step_timeout = Duration::from_secs(5);
    o
}

fn assert_released(w: &World) {
    assert!(w.silos.iter().all(|s| !s.reserved), "silo left reserved");
    assert!(w.pipes.iter().all(|p| !p.reserved), "pipe left reserved");
}

#[test]
fn lgpa_end_to_end_in_both_modes() {
    let mut sequences = Vec::new();
    for mode in [BindingMode::Static, BindingMode::Dynamic] {
        let r = rig(&PlantConfig::two_silo(), RuntimeOptions::default());
        let (_, trace) = run_process(&ProcessSpec::lgp_a(), &r.rd, mode, &opts("p1")).unwrap();
        assert!(trace.is_ok(), "{trace}");
        assert_eq!(trace.records.len(), 6);
        let batch = trace.batch.clone().unwrap();
        assert!(batch.contains("history=Fill,Heat,Mix"), "{batch}");
        let w = r.plant.shutdown();
        assert_released(&w);
        assert_eq!(w.deliveries.len(), 1);
        let d = &w.deliveries[0];
        assert_eq!(d.silo, "S1");
        assert!((d.volume_l - 500.0).abs() <= 1e-9 * 500.0);
        assert!((d.batch.temp_c - 50.0).abs() <= 1e-6);
        assert_eq!(
            d.batch.history,
            [Service::Fill, Service::Heat, Service::Mix]
        );
        sequences.push(trace.steps());
    }
    assert_eq!(sequences[0], sequences[1]);
    assert_eq!(
        sequences[0],
        [
            "Fill@S1",
            "Transfer(S1->S2)@P12",
            "Heat@S2",
            "Transfer(S2->S1)@P21",
            "Mix@S1",
            "Empty@S1"
        ]
    );
}

#[test]
fn device_conflict_mid_plan_releases_everything() {
    let cfg = PlantConfig::colocated();
    let r = rig(&cfg, RuntimeOptions::default());
    let topo = Topology::discover(&r.rd, &Client::loopback().unwrap(), &quick()).unwrap();
    let plan = BoundPlan {
        process: "broken".into(),
        mode: BindingMode::Static,
        steps: vec![
            BoundStep::Fill {
                endpoint: "S1".into(),
                ingredient: "liqueur-base".into(),
                volume_pct: 10.0,
            },
            BoundStep::Empty {
                endpoint: Some("S1".into()),
            },
            BoundStep::Empty {
                endpoint: Some("S1".into()),
            },
        ],
    };
    let trace = run_plan(&plan, &r.rd, &topo, &opts("p1"));
    assert_eq!(trace.records.len(), 3);
    match &trace.error {
        Some(OrchestratorError::DeviceError { code, .. }) => assert_eq!(code, "4.09"),
        other => panic!("{other:?}"),
    }
    assert!(trace.to_string().contains("3:Empty S1 error("));
    assert_released(&r.plant.snapshot());
}

#[test]
fn silent_device_times_out_and_releases() {
    let mut cfg = PlantConfig::colocated();
    cfg.silos[0].heat_rate_c_per_s = 1e-3;
    cfg.silos[0].fill_rate_pct_per_s = 1e4;
    let r = rig(
        &cfg,
        RuntimeOptions {
            mode: TimeMode::Real { scale: 1.0 },
            dt_s: 0.1,
        },
    );
    let mut o = opts("p1");
    o.step_timeout = Duration::from_millis(400);
    let (_, trace) = run_process(&ProcessSpec::lgp_a(), &r.rd, BindingMode::Static, &o).unwrap();
    assert!(
        matches!(&trace.error, Some(OrchestratorError::StepTimeout { step: 2, endpoint }) if endpoint == "S1"),
        "{trace}"
    );
    assert_released(&r.plant.snapshot());
}

#[test]
fn reservation_is_mutually_exclusive() {
    let r = rig(&PlantConfig::two_silo(), RuntimeOptions::default());
    let topo = Topology::discover(&r.rd, &Client::loopback().unwrap(), &quick()).unwrap();
    let c = Client::loopback().unwrap();
    assert!(reserve(&c, &topo, "S1", "a", &quick()).unwrap());
    assert!(!reserve(&c, &topo, "S1", "b", &quick()).unwrap());
    assert!(matches!(
        release(&c, &topo, "S1", "b", &quick()),
        Err(OrchestratorError::DeviceError { code, .. }) if code == "4.03"
    ));
    release(&c, &topo, "S1", "a", &quick()).unwrap();
    // pipes too
    assert!(reserve(&c, &topo, "P12", "a", &quick()).unwrap());
    release(&c, &topo, "P12", "a", &quick()).unwrap();

    for _ in 0..5 {
        let winners: Vec<bool> = (0..8)
            .map(|i| {
                let topo = topo.clone();
                thread::spawn(move || {
                    let c = Client::loopback().unwrap();
                    reserve(&c, &topo, "S2", &format!("h{i}"), &quick()).unwrap()
                })
            })
            .collect::<Vec<_>>()
            .into_iter()
            .map(|h| h.join().unwrap())
            .collect();
        assert_eq!(winners.iter().filter(|w| **w).count(), 1);
        let holder = r.plant.snapshot().silos[1].holder.clone();
        release(&c, &topo, "S2", &holder, &quick()).unwrap();
    }
}

#[test]
fn contention_is_retried_then_fails_cleanly() {
    let r = rig(&PlantConfig::two_silo(), RuntimeOptions::default());
    let topo = Topology::discover(&r.rd, &Client::loopback().unwrap(), &quick()).unwrap();
    let c = Client::loopback().unwrap();
    assert!(reserve(&c, &topo, "S2", "squatter", &quick()).unwrap());
    for mode in [BindingMode::Static, BindingMode::Dynamic] {
        let mut o = opts("p1");
        o.retry = RetryPolicy {
            base: Duration::from_millis(5),
            attempts: 3,
        };
        let (_, trace) = run_process(&ProcessSpec::lgp_a(), &r.rd, mode, &o).unwrap();
        assert_eq!(
            trace.error,
            Some(OrchestratorError::Busy("S2".into())),
            "{trace}"
        );
        let w = r.plant.snapshot();
        assert_eq!(w.silos[1].holder, "squatter");
        assert!(!w.silos[0].reserved && w.pipes.iter().all(|p| !p.reserved));
        // dynamic mode got as far as filling S1; clear it for the next round
        if mode == BindingMode::Dynamic {
            assert_eq!(trace.steps(), ["Fill@S1"]);
        }
    }
}

#[test]
fn concurrent_instances_never_share_a_device() {
    let r = rig(&PlantConfig::two_silo(), RuntimeOptions::default());
    let rd = r.rd.clone();
    let traces: Vec<_> = (0..4)
        .map(|i| {
            let rd = rd.clone();
            thread::spawn(move || {
                let mut o = opts(&format!("inst{i}"));
                o.retry = RetryPolicy {
                    base: Duration::from_millis(50),
                    attempts: 8,
                };
                run_process(&ProcessSpec::lgp_a(), &rd, BindingMode::Static, &o)
                    .unwrap()
                    .1
            })
        })
        .collect::<Vec<_>>()
        .into_iter()
        .map(|h| h.join().unwrap())
        .collect();
    // a shared device would surface as a 4.09 on some step
    for t in &traces {
        assert!(
            !matches!(t.error, Some(OrchestratorError::DeviceError { .. })),
            "{t}"
        );
    }
    let ok = traces.iter().filter(|t| t.is_ok()).count();
    assert!(ok >= 1);
    let w = r.plant.shutdown();
    assert_released(&w);
    assert_eq!(w.deliveries.len(), ok);
}

#[test]
fn choreography_chain_and_budget() {
    let r = rig(&PlantConfig::colocated(), RuntimeOptions::default());
    let rules = parse_rules(include_str!("data/fill_heat_mix.rules.json")).unwrap();
    let fill = RuleAction {
        endpoint: "S1".into(),
        path: silo_path(silo::FILL),
        args: "ingredient=liqueur-base,volume=40".into(),
    };
    let o = ChoreoOptions {
        quiescence: Duration::from_millis(300),
        request: quick(),
        ..Default::default()
    };
    let t = run_choreography(&rules, &r.rd, &fill, &o);
    assert_eq!(t.end, Ok(ChoreoEnd::Quiescent), "{t}");
    assert_eq!(
        t.actions(),
        ["S1 /26241/0/10", "S1 /26241/0/12", "S1 /26241/0/13"]
    );
    assert_eq!(t.firings, 2);

    let empty = run_choreography(&[], &r.rd, &fill, &o);
    assert_eq!(empty.events.len(), 1);
    assert_eq!(empty.end, Ok(ChoreoEnd::Quiescent));

    let cyclic = parse_rules(include_str!("data/cyclic.rules.json")).unwrap();
    let heat = RuleAction {
        endpoint: "S1".into(),
        path: silo_path(silo::HEAT),
        args: "setpoint=20".into(),
    };
    let t = run_choreography(&cyclic, &r.rd, &heat, &o);
    assert_eq!(t.end, Err(OrchestratorError::CycleBudgetExceeded(1000)));
    assert_eq!(t.firings, 1000);
}

#[test]
fn choreography_final_rule_and_same_trigger_order() {
    let r = rig(&PlantConfig::colocated(), RuntimeOptions::default());
    let rules = parse_rules(
        r#"[{"trigger":{"endpoint":"S1","path":"/26241/0/9","value":"Fill"},
             "action":{"endpoint":"S1","path":"/26241/0/13","args":"duration=1"}},
            {"trigger":{"endpoint":"S1","path":"/26241/0/9","value":"Fill"},
             "action":{"endpoint":"S1","path":"/26241/0/12","args":"setpoint=30"}},
            {"trigger":{"endpoint":"S1","path":"/26241/0/9","value":"Mix"},"final":true}]"#,
    )
    .unwrap();
    let fill = RuleAction {
        endpoint: "S1".into(),
        path: silo_path(silo::FILL),
        args: "ingredient=liqueur-base,volume=10".into(),
    };
    let o = ChoreoOptions {
        quiescence: Duration::from_secs(2),
        request: quick(),
        ..Default::default()
    };
    let t = run_choreography(&rules, &r.rd, &fill, &o);
    // both Fill rules fire, in rule order
    assert_eq!(
        t.events.iter().map(|e| e.rule).collect::<Vec<_>>(),
        [None, Some(0), Some(1)]
    );
    assert_eq!(t.end, Ok(ChoreoEnd::FinalRule));
    let unknown = RuleAction {
        endpoint: "nowhere".into(),
        ..fill
    };
    assert_eq!(
        run_choreography(&rules, &r.rd, &unknown, &o).end,
        Err(OrchestratorError::Unreachable("nowhere".into()))
    );
}

// ---- properties ----

mod props {
    use super::*;
    use cpms_core::plant::{ActionRequest, WorldError};
    use proptest::prelude::*;

    /// Every simple route from `from` to `to`, as pipe id lists.
    fn all_routes(pipes: &[PipeInfo], from: &str, to: &str) -> Vec<Vec<String>> {
        fn go(
            pipes: &[PipeInfo],
            at: &str,
            to: &str,
            seen: &mut Vec<String>,
            path: &mut Vec<String>,
            out: &mut Vec<Vec<String>>,
        ) {
            if at == to {
                out.push(path.clone());
                return;
            }
            for p in pipes.iter().filter(|p| p.from == at) {
                if seen.contains(&p.to) {
                    continue;
                }
                seen.push(p.to.clone());
                path.push(p.id.clone());
                go(pipes, &p.to, to, seen, path, out);
                path.pop();
                seen.pop();
            }
        }
        let mut out = Vec::new();
        go(
            pipes,
            from,
            to,
            &mut vec![from.to_string()],
            &mut Vec::new(),
            &mut out,
        );
        out
    }

    fn best(pipes: &[PipeInfo], from: &str, to: &str) -> Option<Vec<String>> {
        all_routes(pipes, from, to)
            .into_iter()
            .min_by(|a, b| a.len().cmp(&b.len()).then(a.cmp(b)))
    }

    prop_compose! {
        fn arb_topology()(n in 2..=6usize)(
            n in Just(n),
            edges in prop::collection::vec((0..n, 0..n, 0..100u32), 1..=8),
        ) -> Topology {
            let mut t = Topology::default();
            for i in 0..n { t.silos.insert(format!("S{i}")); }
            let mut seen = BTreeSet::new();
            for (a, b, id) in edges {
                if a == b || !seen.insert(format!("P{id:02}")) { continue; }
                t.pipes.push(PipeInfo { id: format!("P{id:02}"), from: format!("S{a}"), to: format!("S{b}") });
            }
            t.pipes.sort();
            t
        }
    }

    proptest! {
        #[test]
        fn routes_are_shortest_and_tie_broken_by_pipe_id(t in arb_topology()) {
            for a in &t.silos {
                for b in &t.silos {
                    let got = t.route(a, b).map(|r| r.iter().map(|p| p.id.clone()).collect::<Vec<_>>());
                    prop_assert_eq!(got, best(&t.pipes, a, b), "{} -> {}", a, b);
                }
            }
        }
    }

    fn arb_plant() -> impl Strategy<Value = PlantConfig> {
        let services = prop::collection::btree_set(
            prop::sample::select(vec![Service::Heat, Service::Mix, Service::Empty]),
            0..=3,
        );
        (
            prop::collection::vec(
                (
                    services,
                    prop::sample::select(vec![60.0, 70.0, 80.0, 100.0]),
                ),
                2..=6,
            ),
            prop::collection::vec((0..6usize, 0..6usize), 1..=8),
        )
            .prop_map(|(silos, edges)| {
                let n = silos.len();
                let mut silos: Vec<SiloSpec> = silos
                    .into_iter()
                    .enumerate()
                    .map(|(i, (svc, max))| {
                        let mut s = SiloSpec::new(
                            &format!("S{i}"),
                            1000.0,
                            &svc.into_iter().collect::<Vec<_>>(),
                        );
                        s.heat_max_c = max;
                        s
                    })
                    .collect();
                silos[0].services.insert(Service::Fill);
                silos[0].services.insert(Service::Empty);
                let mut pipes: Vec<PipeSpec> = Vec::new();
                for (k, (a, b)) in edges.into_iter().enumerate() {
                    let (a, b) = (a % n, b % n);
                    if a != b {
                        pipes.push(PipeSpec::new(
                            &format!("P{k}"),
                            &format!("S{a}"),
                            &format!("S{b}"),
                        ));
                    }
                }
                PlantConfig {
                    silos,
                    pipes,
                    ingredient_sources: [("base".to_string(), "S0".to_string())].into(),
                    delivery_silo: "S0".into(),
                }
            })
    }

    fn arb_pim() -> impl Strategy<Value = ProcessSpec> {
        let step = prop_oneof![
            (20.0..55.0f64).prop_map(ServiceRequest::heat),
            (0.0..3.0f64).prop_map(ServiceRequest::mix),
        ];
        (prop::collection::vec(step, 0..4), 1.0..100.0f64).prop_map(|(steps, v)| ProcessSpec {
            name: "p".into(),
            inputs: vec![cpms_core::orchestrator::ProcessInput {
                ingredient: "base".into(),
                volume: v,
            }],
            steps,
            delivery: None,
        })
    }

    fn replay(cfg: &PlantConfig, plan: &BoundPlan) -> Result<World, WorldError> {
        let mut w = World::new(cfg);
        for s in &plan.steps {
            let (unit, req) = match s {
                BoundStep::Fill {
                    endpoint,
                    ingredient,
                    volume_pct,
                } => (
                    w.unit(endpoint).unwrap(),
                    ActionRequest::Fill {
                        ingredient: ingredient.clone(),
                        volume_pct: *volume_pct,
                    },
                ),
                BoundStep::Apply {
                    endpoint, request, ..
                } => (
                    w.unit(endpoint.as_ref().unwrap()).unwrap(),
                    match request.service().unwrap() {
                        Service::Heat => ActionRequest::Heat {
                            setpoint_c: request.param("setpoint"),
                        },
                        _ => ActionRequest::Mix {
                            duration_s: request.param("duration"),
                        },
                    },
                ),
                BoundStep::Transfer { pipe, .. } => (
                    w.unit(pipe).unwrap(),
                    ActionRequest::Transfer { volume_pct: None },
                ),
                BoundStep::Empty { endpoint } => (
                    w.unit(endpoint.as_ref().unwrap()).unwrap(),
                    ActionRequest::Empty,
                ),
            };
            w.start(unit, req, None)?;
            while w.any_active() {
                w.tick(0.1);
            }
        }
        Ok(w)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(300))]

        /// Generated plans replay on the world model without service or QoS violations,
        /// and transfers between two services follow a shortest route.
        #[test]
        fn plans_are_sound_and_minimal(cfg in arb_plant(), pim in arb_pim()) {
            let plan = match plan_of(&cfg, &pim, BindingMode::Static) {
                Ok(p) => p,
                Err(OrchestratorError::NoProvider(_) | OrchestratorError::Unroutable { .. }) => return Ok(()),
                Err(e) => return Err(TestCaseError::fail(format!("{e}"))),
            };
            let w = replay(&cfg, &plan).map_err(|e| TestCaseError::fail(format!("{e}\n{plan}")))?;
            prop_assert_eq!(w.deliveries.len(), 1);
            let want: Vec<Service> = std::iter::once(Service::Fill)
                .chain(pim.steps.iter().map(|s| s.service().unwrap()))
                .collect();
            prop_assert_eq!(&w.deliveries[0].batch.history, &want);
            // setpoints stay below every tolerance, so routes are unconstrained shortest ones
            let topo = Topology::from_config(&cfg);
            let mut i = 0;
            while i < plan.steps.len() {
                let start = i;
                while matches!(plan.steps[i], BoundStep::Transfer { .. }) { i += 1; }
                if i > start {
                    let (BoundStep::Transfer { from, .. }, BoundStep::Transfer { to, .. }) = (&plan.steps[start], &plan.steps[i - 1]) else { unreachable!() };
                    let ids: Vec<String> = plan.steps[start..i].iter().map(|s| s.endpoint().unwrap().to_string()).collect();
                    prop_assert_eq!(Some(ids), best(&topo.pipes, from, to));
                }
                i += 1;
            }
        }

        #[test]
        fn planning_is_deterministic(cfg in arb_plant(), pim in arb_pim()) {
            let a = plan_of(&cfg, &pim, BindingMode::Static);
            let b = plan_of(&cfg, &pim, BindingMode::Static);
            prop_assert_eq!(a, b);
        }
    }
}
