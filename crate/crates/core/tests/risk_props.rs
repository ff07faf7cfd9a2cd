use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sogmap_core::risk::{
    extract_obstacle_points, interpolate_risk, linear_cost, risk_plane, sogm_to_srm, RiskKernel, Srm,
};
use sogmap_core::sogm::{GridGeometry, Sogm, DYNAMIC};
use sogmap_core::Vec2;

const DL: f64 = 0.12;
const D0: f64 = 2.0;

fn random_layer(rng: &mut ChaCha8Rng, side: usize, occupied: usize, channel: usize) -> Sogm {
    let mut s = Sogm::zeros(1, 3, GridGeometry::centered(Vec2::ZERO, side, DL), 0.1, 0.0);
    for _ in 0..occupied {
        let (r, c) = (rng.random_range(0..side), rng.random_range(0..side));
        let i = s.index(0, channel, r, c);
        s.data[i] = 1.0;
    }
    s
}

/// Direct double sum over all cell pairs.
fn brute_force(values: &[f32], side: usize, p: f64) -> Vec<f64> {
    let mut out = vec![0.0; side * side];
    for i in 0..side * side {
        let mut sum = 0.0;
        for j in 0..side * side {
            if values[j] == 0.0 {
                continue;
            }
            let dr = (i / side) as f64 - (j / side) as f64;
            let dc = (i % side) as f64 - (j % side) as f64;
            sum += linear_cost((dr * dr + dc * dc).sqrt(), DL, D0).powf(p) * values[j] as f64;
        }
        out[i] = sum.powf(1.0 / p);
    }
    out
}

fn max_cost(values: &[f32], side: usize) -> Vec<f64> {
    (0..side * side)
        .map(|i| {
            (0..side * side)
                .filter(|&j| values[j] != 0.0)
                .map(|j| {
                    let dr = (i / side) as f64 - (j / side) as f64;
                    let dc = (i % side) as f64 - (j % side) as f64;
                    linear_cost((dr * dr + dc * dc).sqrt(), DL, D0)
                })
                .fold(0.0, f64::max)
        })
        .collect()
}

#[test]
fn matches_brute_force_double_sum() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let kernel = RiskKernel::new(DL, D0, 3.0).unwrap();
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let n = rng.random_range(1..40);
        let s = random_layer(&mut rng, 24, n, DYNAMIC);
        let fast = risk_plane(s.plane(0, DYNAMIC), 24, &kernel);
        let slow = brute_force(s.plane(0, DYNAMIC), 24, 3.0);
        for (a, b) in fast.iter().zip(&slow) {
            worst = worst.max((a - b).abs());
        }
        let srm = sogm_to_srm(&s, 3.0, D0).unwrap();
        for (a, b) in srm.data.iter().zip(&slow) {
            assert!((a - b.min(1.0)).abs() < 1e-9);
        }
    }
    assert!(worst < 1e-9, "{worst:e}");
}

#[test]
fn high_exponent_stays_within_norm_bounds() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let n = rng.random_range(1..=20);
        let s = random_layer(&mut rng, 24, n, DYNAMIC);
        let srm = sogm_to_srm(&s, 16.0, D0).unwrap();
        let m = max_cost(s.plane(0, DYNAMIC), 24);
        for (a, b) in srm.data.iter().zip(&m) {
            assert!(*a + 1e-12 >= *b);
            assert!(*a <= (n as f64).powf(1.0 / 16.0) * b + 1e-12);
            worst = worst.max(a - b);
        }
    }
    eprintln!("max excess over the kernel maximum at p = 16: {worst:.4}");
    // a lone occupied cell gives exactly the kernel maximum
    let s = random_layer(&mut rng, 24, 1, DYNAMIC);
    let srm = sogm_to_srm(&s, 16.0, D0).unwrap();
    for (a, b) in srm.data.iter().zip(max_cost(s.plane(0, DYNAMIC), 24)) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn locality_and_support() {
    let mut s = Sogm::zeros(1, 3, GridGeometry::centered(Vec2::ZERO, 60, DL), 0.1, 0.0);
    let i = s.index(0, DYNAMIC, 30, 30);
    s.data[i] = 1.0;
    let srm = sogm_to_srm(&s, 3.0, D0).unwrap();
    for r in 0..60 {
        for c in 0..60 {
            let d = (((r as f64 - 30.0).powi(2) + (c as f64 - 30.0).powi(2)).sqrt()) * DL;
            if d >= D0 {
                assert_eq!(srm.get(0, r, c), 0.0);
            } else {
                assert!(srm.get(0, r, c) > 0.0);
            }
        }
    }
    assert!(srm.get(0, 30, 46) > 0.0);
    assert_eq!(srm.get(0, 30, 47), 0.0);
}

/// Independent nested linear interpolation: time, then rows, then columns.
fn nested_lerp(srm: &Srm, x: f64, y: f64, t: f64) -> f64 {
    let lerp = |a: f64, b: f64, f: f64| a + (b - a) * f;
    let g = srm.geometry;
    let u = (x - g.origin.x) / g.dl;
    let v = (y - g.origin.y) / g.dl;
    let tau = ((t - srm.t0) / srm.dt).max(0.0);
    let (c0, r0, k0) = (u.floor().min(g.side as f64 - 2.0), v.floor().min(g.side as f64 - 2.0), tau.floor().min(srm.n_t as f64 - 2.0));
    let at = |k: f64, r: f64| {
        lerp(
            srm.get(k as usize, r as usize, c0 as usize),
            srm.get(k as usize, r as usize, c0 as usize + 1),
            u - c0,
        )
    };
    let layer = |k: f64| lerp(at(k, r0), at(k, r0 + 1.0), v - r0);
    lerp(layer(k0), layer(k0 + 1.0), tau - k0)
}

fn random_srm(rng: &mut ChaCha8Rng, n_t: usize, side: usize) -> Srm {
    Srm {
        n_t,
        geometry: GridGeometry::centered(Vec2::new(rng.random_range(-3.0..3.0), 1.0), side, DL),
        dt: 0.1,
        t0: 2.0,
        p: 3.0,
        d0: D0,
        data: (0..n_t * side * side).map(|_| rng.random()).collect(),
    }
}

#[test]
fn interpolation_matches_nested_lerp() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..2000 {
        let srm = random_srm(&mut rng, 5, 9);
        let g = srm.geometry;
        let span = (g.side - 1) as f64 * g.dl;
        let x = g.origin.x + rng.random_range(0.0..=span);
        let y = g.origin.y + rng.random_range(0.0..=span);
        let t = srm.t0 + rng.random_range(0.0..=0.4);
        let q = interpolate_risk(&srm, x, y, t).unwrap();
        assert!((q.value - nested_lerp(&srm, x, y, t)).abs() < 1e-12);
    }
}

#[test]
fn interpolation_gradient_matches_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..200 {
        let srm = random_srm(&mut rng, 3, 8);
        let g = srm.geometry;
        let span = (g.side - 1) as f64 * g.dl;
        let x = g.origin.x + rng.random_range(0.01..span - 0.01);
        let y = g.origin.y + rng.random_range(0.01..span - 0.01);
        let t = srm.t0 + rng.random_range(0.0..0.2);
        let q = interpolate_risk(&srm, x, y, t).unwrap();
        let h = 1e-7;
        let f = |x, y| interpolate_risk(&srm, x, y, t).unwrap().value;
        let gx = (f(x + h, y) - f(x - h, y)) / (2.0 * h);
        let gy = (f(x, y + h) - f(x, y - h)) / (2.0 * h);
        // skip queries straddling a cell boundary where the field kinks
        let fu = ((x - g.origin.x) / g.dl).fract();
        let fv = ((y - g.origin.y) / g.dl).fract();
        if fu.min(1.0 - fu) < 1e-4 || fv.min(1.0 - fv) < 1e-4 {
            continue;
        }
        assert!((q.grad.x - gx).abs() < 1e-5 && (q.grad.y - gy).abs() < 1e-5);
    }
}

#[test]
fn two_blobs_match_exhaustive_scan() {
    let side = 30;
    let mut s = Sogm::zeros(1, 3, GridGeometry::centered(Vec2::ZERO, side, DL), 0.1, 0.0);
    for (cr, cc, amp) in [(8.0, 9.0, 0.9), (20.0, 22.0, 0.7)] {
        for r in 0..side {
            for c in 0..side {
                let d2 = (r as f64 - cr).powi(2) + (c as f64 - cc).powi(2);
                let i = s.index(0, DYNAMIC, r, c);
                s.data[i] += (amp * (-d2 / 6.0).exp()) as f32;
            }
        }
    }
    let got = extract_obstacle_points(&s, 0, 0.3).unwrap();
    let mut want = Vec::new();
    let v = |r: isize, c: isize| {
        if r < 0 || c < 0 || r >= side as isize || c >= side as isize {
            f32::NEG_INFINITY
        } else {
            s.get(0, DYNAMIC, r as usize, c as usize)
        }
    };
    for r in 0..side as isize {
        for c in 0..side as isize {
            let x = v(r, c);
            let is_max = x >= 0.3
                && (-1..=1).all(|dr| (-1..=1).all(|dc| (dr, dc) == (0, 0) || v(r + dr, c + dc) < x));
            if is_max {
                want.push(s.geometry.cell_center(r as usize, c as usize));
            }
        }
    }
    assert_eq!(want.len(), 2);
    assert_eq!(got, want);
    assert!(extract_obstacle_points(&s, 0, 0.95).unwrap().is_empty());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn ordering_bounds_and_channel_max(seed in 0u64..1_000_000, n in 1usize..25) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let side = 20;
        let s = random_layer(&mut rng, side, n, DYNAMIC);
        let values = s.plane(0, DYNAMIC);
        let k1 = RiskKernel::new(DL, D0, 1.0).unwrap();
        let k3 = RiskKernel::new(DL, D0, 3.0).unwrap();
        let k8 = RiskKernel::new(DL, D0, 8.0).unwrap();
        let (r1, r3, r8) = (risk_plane(values, side, &k1), risk_plane(values, side, &k3), risk_plane(values, side, &k8));
        let m = max_cost(values, side);
        let occupied: Vec<usize> = (0..side * side).filter(|&j| values[j] != 0.0).collect();
        for i in 0..side * side {
            prop_assert!(r1[i] + 1e-12 >= r3[i] && r3[i] + 1e-12 >= r8[i]);
            let in_range = occupied
                .iter()
                .filter(|&&j| {
                    let dr = (i / side) as f64 - (j / side) as f64;
                    let dc = (i % side) as f64 - (j % side) as f64;
                    linear_cost((dr * dr + dc * dc).sqrt(), DL, D0) > 0.0
                })
                .count();
            prop_assert!(m[i] <= r3[i] + 1e-12);
            prop_assert!(r3[i].min(1.0) <= (in_range as f64).cbrt() * m[i] + 1e-12);
        }
        // a second channel can only raise the merged map
        let mut both = s.clone();
        let extra = random_layer(&mut rng, side, n, 0);
        both.plane_mut(0, 0).copy_from_slice(extra.plane(0, 0));
        let merged = sogm_to_srm(&both, 3.0, D0).unwrap();
        let only_dyn = sogm_to_srm(&s, 3.0, D0).unwrap();
        let only_perm = sogm_to_srm(&extra, 3.0, D0).unwrap();
        for i in 0..side * side {
            prop_assert!(merged.data[i] >= only_dyn.data[i] && merged.data[i] >= only_perm.data[i]);
            prop_assert!((0.0..=1.0).contains(&merged.data[i]));
        }
    }
}
