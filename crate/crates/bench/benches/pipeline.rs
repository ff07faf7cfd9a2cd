use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sogmap_bench::{random_tensor, scene_sogm};
use sogmap_core::net::{Graph, NetConfig, Network};
use sogmap_core::planner::{plan, PlannerWeights};
use sogmap_core::pipeline::obstacle_points;
use sogmap_core::risk::sogm_to_srm;
use sogmap_core::{SogmParams, Vec2};

fn conv(c: &mut Criterion) {
    let x = random_tensor(&[16, 48, 48], 1);
    let w = random_tensor(&[16, 16, 3, 3], 2);
    let b = random_tensor(&[16], 3);
    c.bench_function("conv3x3_16ch_48_forward_backward", |bench| {
        bench.iter(|| {
            let mut g = Graph::new();
            let xi = g.variable(&x);
            let wi = g.param(0, &w);
            let bi = g.param(1, &b);
            let y = g.conv2d(xi, wi, bi, 1, 1).unwrap();
            let seed = vec![1.0; g.value(y).len()];
            g.backward(&[(y, seed)]).unwrap();
            black_box(g.grad(wi)[0])
        })
    });
}

fn network(c: &mut Criterion) {
    let cfg = NetConfig::small();
    let net = Network::init(&cfg, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
    let x = random_tensor(&[cfg.in_channels, 48, 48], 5);
    c.bench_function("small_net_forward", |bench| bench.iter(|| black_box(net.forward(&x).unwrap().probs[0])));
}

fn risk_and_plan(c: &mut Criterion) {
    let params = SogmParams::default();
    let sogm = scene_sogm(&params, 6);
    c.bench_function("sogm_to_srm_94x94x31", |bench| bench.iter(|| black_box(sogm_to_srm(&sogm, 3.0, 2.0).unwrap())));
    let srm = sogm_to_srm(&sogm, 3.0, 2.0).unwrap();
    let obstacles = obstacle_points(&sogm, 0.5).unwrap();
    let start = sogm.geometry.center();
    let goal = start + Vec2::new(3.0, 0.5);
    let w = PlannerWeights::default();
    c.bench_function("plan_default_weights", |bench| {
        bench.iter(|| black_box(plan(start, goal, &srm, &obstacles, &w).unwrap().cost))
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = conv, network, risk_and_plan
}
criterion_main!(benches);
