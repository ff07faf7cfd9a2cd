use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sogmap_core::sim::{record_session, Label, Scenario, SessionConfig};
use sogmap_core::sogm::{
    build_sogm, grid_subsample, make_samples, rasterize_input, rotate_augment, LabeledPoint, Sample,
    Sogm, SogmParams, TimedPoints,
};
use sogmap_core::Vec2;

fn label_of(i: u8) -> Label {
    Label::from_u8(i % 3).unwrap()
}

/// Rotate a grid by a quarter turn counter-clockwise about its center.
fn rotate_grid_quarter(s: &Sogm) -> Sogm {
    let n = s.side();
    let mut out = s.clone();
    for k in 0..s.n_t {
        for c in 0..s.channels {
            for r in 0..n {
                for col in 0..n {
                    // (dx, dy) -> (-dy, dx)
                    let (r2, c2) = (col, n - 1 - r);
                    let i = out.index(k, c, r2, c2);
                    out.data[i] = s.get(k, c, r, col);
                }
            }
        }
    }
    out
}

#[test]
fn moving_point_follows_its_rasterized_path() {
    let params = SogmParams::default();
    let center = Vec2::new(0.013, -0.021);
    let start = Vec2::new(-1.5, 0.4);
    let n_t = params.n_t();
    let pos = |t: f64| start + Vec2::new(t, 0.0);
    let stack: Vec<TimedPoints> = (0..n_t)
        .map(|k| {
            let t = k as f64 * params.dt;
            TimedPoints {
                t,
                points: vec![LabeledPoint { pos: pos(t), label: Label::Dynamic }],
            }
        })
        .collect();
    let s = build_sogm(&stack, 0.0, center, &params).unwrap();
    let half = (params.side() as f64 - 1.0) / 2.0;
    let mut prev_col = None;
    for k in 0..n_t {
        let p = pos(k as f64 * params.dt);
        // independent rasterization of the true path
        let col = ((p.x - center.x) / params.dl_2d + half).round() as usize;
        let row = ((p.y - center.y) / params.dl_2d + half).round() as usize;
        let set: Vec<(usize, usize)> = (0..s.side())
            .flat_map(|r| (0..s.side()).map(move |c| (r, c)))
            .filter(|&(r, c)| s.get(k, 2, r, c) == 1.0)
            .collect();
        assert_eq!(set, vec![(row, col)], "layer {k}");
        if let Some(pc) = prev_col {
            let step: usize = col - pc;
            assert!(step <= 2, "advance {step}");
        }
        prev_col = Some(col);
    }
    let advance = prev_col.unwrap() as f64 - ((start.x - center.x) / params.dl_2d + half).round();
    assert!((advance / (n_t - 1) as f64 - 0.1 / 0.12).abs() < 0.05);

    // input channels: the blob shifts by about one cell per frame
    let frames = &stack[..params.n_f];
    let x = rasterize_input(frames, center, &params).unwrap();
    let plane = params.side() * params.side();
    let cols: Vec<usize> = (0..params.n_f)
        .map(|i| x.data[i * plane..(i + 1) * plane].iter().position(|&v| v == 1.0).unwrap() % params.side())
        .collect();
    for (i, &c) in cols.iter().enumerate() {
        let want = ((pos(i as f64 * params.dt).x - center.x) / params.dl_2d + half).round() as usize;
        assert_eq!(c, want);
    }
    for w in cols.windows(2) {
        assert!(w[1] - w[0] <= 2, "{cols:?}");
    }
}

#[test]
fn subsample_returns_cell_mean() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let pts: Vec<LabeledPoint> = (0..100)
        .map(|_| LabeledPoint {
            pos: Vec2::new(0.3 + rng.random_range(0.0..0.03), 0.6 + rng.random_range(0.0..0.03)),
            label: Label::Movable,
        })
        .collect();
    let out = grid_subsample(&pts, 0.03);
    assert_eq!(out.len(), 1);
    let mean = pts.iter().fold(Vec2::ZERO, |a, p| a + p.pos) / 100.0;
    assert!(out[0].pos.dist(mean) < 1e-9);
}

#[test]
fn session_samples_are_windowed_and_static_persistent() {
    let cfg = SessionConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let session = record_session(&cfg, &Scenario::office(), &mut rng).unwrap();
    let params = SogmParams::default();
    let samples = make_samples(&session.frames, "s", &params, 1);
    assert_eq!(samples.len(), 68);
    for sample in samples.iter().step_by(9) {
        let (x, gt) = sample.rasterize(&params).unwrap();
        assert_eq!(x.shape, vec![6, 94, 94]);
        assert!(gt.is_binary());
        for k in 1..gt.n_t {
            assert_eq!(gt.plane(k, 0), gt.plane(0, 0));
            assert_eq!(gt.plane(k, 1), gt.plane(0, 1));
        }
        let center = gt.geometry.center();
        for k in 0..gt.n_t {
            for c in 0..3 {
                for r in 0..94 {
                    for col in 0..94 {
                        if gt.get(k, c, r, col) != 0.0 {
                            assert!(gt.geometry.cell_center(r, col).dist(center) <= params.r_in);
                        }
                    }
                }
            }
        }
        let back = Sample::decode(&sample.encode()).unwrap();
        assert_eq!(&back, sample);
    }
    assert_eq!(make_samples(&session.frames, "s", &params, 5).len(), 14);
}

fn arb_points() -> impl Strategy<Value = Vec<(f64, f64, u8)>> {
    prop::collection::vec((-3.0f64..3.0, -3.0f64..3.0, 0u8..3), 0..40)
}

fn sample_from(points: &[Vec<(f64, f64, u8)>], center: Vec2, params: &SogmParams) -> Sample {
    let n_t = params.n_t();
    let set = |i: usize| TimedPoints {
        t: i as f64 * params.dt,
        points: points[i % points.len()]
            .iter()
            .map(|&(x, y, l)| LabeledPoint {
                pos: center + Vec2::new(x, y),
                label: label_of(l),
            })
            .collect(),
    };
    Sample {
        id: "p".into(),
        center,
        t0: (params.n_f - 1) as f64 * params.dt,
        inputs: (0..params.n_f).map(set).collect(),
        future: (params.n_f - 1..params.n_f - 1 + n_t).map(set).collect(),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn quarter_turns_commute_with_rasterization(
        points in prop::collection::vec(arb_points(), 1..4),
        cx in -5.0f64..5.0,
        cy in -5.0f64..5.0,
        turns in 0usize..4,
    ) {
        let params = SogmParams::small();
        let center = Vec2::new(cx, cy);
        let sample = sample_from(&points, center, &params);
        let (_, gt) = sample.rasterize(&params).unwrap();
        let angle = turns as f64 * std::f64::consts::FRAC_PI_2;
        let (_, gt_rot) = rotate_augment(&sample, angle).rasterize(&params).unwrap();
        let mut expected = gt.clone();
        for _ in 0..turns {
            expected = rotate_grid_quarter(&expected);
        }
        prop_assert_eq!(gt_rot.data, expected.data);
    }

    #[test]
    fn quarter_turn_preserves_class_counts(points in prop::collection::vec(arb_points(), 1..3)) {
        let params = SogmParams::small();
        let sample = sample_from(&points, Vec2::new(1.0, 2.0), &params);
        let (x, gt) = sample.rasterize(&params).unwrap();
        let (xr, gtr) = rotate_augment(&sample, std::f64::consts::FRAC_PI_2).rasterize(&params).unwrap();
        let plane = gt.plane_len();
        for c in 0..x.shape[0] {
            let s = |t: &sogmap_core::Tensor| t.data[c * plane..(c + 1) * plane].iter().sum::<f64>();
            prop_assert_eq!(s(&x), s(&xr));
        }
        for k in 0..gt.n_t {
            for c in 0..3 {
                let count = |g: &Sogm| g.plane(k, c).iter().filter(|&&v| v > 0.0).count();
                prop_assert_eq!(count(&gt), count(&gtr));
            }
        }
    }

    #[test]
    fn zero_rotation_is_identity(points in prop::collection::vec(arb_points(), 1..3), a in 0.0f64..1.0) {
        let params = SogmParams::small();
        let sample = sample_from(&points, Vec2::new(a, -a), &params);
        prop_assert_eq!(&rotate_augment(&sample, 0.0), &sample);
    }

    #[test]
    fn recount_matches_per_class_counts(points in arb_points()) {
        let frame = sogmap_core::Frame {
            timestamp: 0.0,
            sensor_pose: Default::default(),
            points: points.iter().map(|&(x, y, _)| Vec2::new(x, y)).collect(),
            labels: points.iter().map(|&(_, _, l)| label_of(l)).collect(),
            ranges: vec![],
            inferred: None,
        };
        let kept = sogmap_core::sogm::filter_obstacle_points(&frame);
        let by_class: usize = Label::ALL.iter().map(|l| kept.iter().filter(|p| p.label == *l).count()).sum();
        prop_assert_eq!(kept.len(), points.len());
        prop_assert_eq!(by_class, points.len());
    }
}
