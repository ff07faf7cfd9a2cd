//! Fixtures shared by the benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sogmap_core::sogm::{GridGeometry, DYNAMIC, MOVABLE, PERMANENT};
use sogmap_core::{Sogm, SogmParams, Tensor, Vec2};

/// Grid with static walls and a few moving dynamic cells.
pub fn scene_sogm(params: &SogmParams, seed: u64) -> Sogm {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let side = params.side();
    let geom = GridGeometry::centered(Vec2::ZERO, side, params.dl_2d);
    let mut s = Sogm::zeros(params.n_t(), 3, geom, params.dt, 0.0);
    let movers: Vec<(f64, f64, f64, f64)> = (0..6)
        .map(|_| {
            (
                rng.random_range(0.0..side as f64),
                rng.random_range(0.0..side as f64),
                rng.random_range(-0.5..0.5),
                rng.random_range(-0.5..0.5),
            )
        })
        .collect();
    for k in 0..s.n_t {
        for i in 0..side {
            s.plane_mut(k, PERMANENT)[i] = 1.0;
            s.plane_mut(k, MOVABLE)[(side / 2) * side + i / 4] = 1.0;
        }
        for &(r, c, vr, vc) in &movers {
            let r = (r + vr * k as f64).clamp(0.0, side as f64 - 1.0) as usize;
            let c = (c + vc * k as f64).clamp(0.0, side as f64 - 1.0) as usize;
            s.plane_mut(k, DYNAMIC)[r * side + c] = 1.0;
        }
    }
    s
}

pub fn random_tensor(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).expect("shape matches")
}
