use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};

use cpms_bench::{execute_request, ring_plant, HEAT_QUERY, HEAT_TTL};
use cpms_core::coap::decode;
use cpms_core::latency::heat_action;
use cpms_core::orchestrator::{transform_pim_to_psm, BindingMode, ProcessSpec, Topology};
use cpms_core::plant::{offline_directory, ActionRequest, PlantConfig, World};
use cpms_core::semantic::{evaluate, parse_query, parse_turtle};

fn codec(c: &mut Criterion) {
    let m = execute_request();
    let bytes = m.encode().unwrap();
    c.bench_function("coap/encode_execute", |b| {
        b.iter(|| black_box(&m).encode().unwrap())
    });
    c.bench_function("coap/decode_execute", |b| {
        b.iter(|| decode(black_box(&bytes)).unwrap())
    });
    c.bench_function("handler/heat_action", |b| {
        b.iter(|| heat_action(black_box("setpoint=50")).unwrap())
    });
}

fn semantic(c: &mut Criterion) {
    c.bench_function("turtle/parse_heat_description", |b| {
        b.iter(|| parse_turtle(black_box(HEAT_TTL)).unwrap())
    });
    c.bench_function("sparql/parse_heat_query", |b| {
        b.iter(|| parse_query(black_box(HEAT_QUERY)).unwrap())
    });
    let g = parse_turtle(HEAT_TTL).unwrap();
    let q = parse_query(HEAT_QUERY).unwrap();
    c.bench_function("sparql/evaluate_heat_query", |b| {
        b.iter(|| evaluate(black_box(&g), black_box(&q)))
    });
}

fn planning(c: &mut Criterion) {
    let mut group = c.benchmark_group("plan/lgpA");
    for n in [3usize, 8, 16, 32] {
        let cfg = if n == 3 {
            PlantConfig::two_silo()
        } else {
            ring_plant(n)
        };
        let dir = offline_directory(&cfg).unwrap();
        let topo = Topology::from_config(&cfg);
        let pim = ProcessSpec::lgp_a();
        group.bench_with_input(BenchmarkId::from_parameter(cfg.silos.len()), &n, |b, _| {
            b.iter(|| transform_pim_to_psm(&pim, &dir, &topo, BindingMode::Static).unwrap())
        });
    }
    group.finish();

    let cfg = ring_plant(32);
    let topo = Topology::from_config(&cfg);
    c.bench_function("route/ring32_far", |b| {
        b.iter(|| topo.route(black_box("S1"), black_box("S0")))
    });
}

fn simulation(c: &mut Criterion) {
    let cfg = PlantConfig::two_silo();
    c.bench_function("world/fill_half", |b| {
        b.iter(|| {
            let mut w = World::new(&cfg);
            let s1 = w.unit("S1").unwrap();
            w.start(
                s1,
                ActionRequest::Fill {
                    ingredient: "liqueur-base".into(),
                    volume_pct: 50.0,
                },
                None,
            )
            .unwrap();
            while w.any_active() {
                w.tick(0.1);
            }
            w
        })
    });
}

criterion_group!(benches, codec, semantic, planning, simulation);
criterion_main!(benches);
