use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{Actor, Frame, Label, Pose2, WorldMap};
use crate::geom::{ray_circle, ray_segment, Vec2};

#[derive(Debug, Clone)]
pub struct LidarParams {
    pub n_rays: usize,
    pub r_max: f64,
    /// Gaussian range noise standard deviation (m).
    pub sigma_r: f64,
}

impl Default for LidarParams {
    fn default() -> Self {
        LidarParams {
            n_rays: 720,
            r_max: 20.0,
            sigma_r: 0.0,
        }
    }
}

/// First-hit ray casting against walls, movables and actor discs.
pub fn lidar_scan<R: Rng + ?Sized>(
    world: &WorldMap,
    actors: &[Actor],
    pose: Pose2,
    timestamp: f64,
    params: &LidarParams,
    rng: &mut R,
) -> Frame {
    let n = params.n_rays.max(1);
    let origin = pose.position();
    let noise = (params.sigma_r > 0.0).then(|| Normal::new(0.0, params.sigma_r).unwrap());
    let mut frame = Frame {
        timestamp,
        sensor_pose: pose,
        points: Vec::new(),
        labels: Vec::new(),
        ranges: Vec::with_capacity(n),
        inferred: None,
    };
    for i in 0..n {
        let bearing = pose.theta + std::f64::consts::TAU * i as f64 / n as f64;
        let dir = Vec2::from_angle(bearing);
        let mut best = (f64::INFINITY, Label::Permanent);
        for w in &world.walls {
            if let Some(s) = ray_segment(origin, dir, w) {
                if s < best.0 {
                    best = (s, Label::Permanent);
                }
            }
        }
        for m in &world.movables {
            for e in m.edges() {
                if let Some(s) = ray_segment(origin, dir, &e) {
                    if s < best.0 {
                        best = (s, Label::Movable);
                    }
                }
            }
        }
        for a in actors {
            if let Some(s) = ray_circle(origin, dir, a.position, a.radius) {
                if s < best.0 {
                    best = (s, Label::Dynamic);
                }
            }
        }
        let (mut range, label) = best;
        if range > params.r_max {
            frame.ranges.push(f64::INFINITY);
            continue;
        }
        if let Some(noise) = &noise {
            range = (range + noise.sample(rng)).max(0.0);
        }
        frame.ranges.push(range);
        frame.points.push(origin + dir * range);
        frame.labels.push(label);
    }
    frame
}
