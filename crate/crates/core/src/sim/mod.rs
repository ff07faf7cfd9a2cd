//! 2D world simulation: static walls, movable boxes, moving actors and a
//! planar range sensor.

mod actor;
mod flow;
mod lidar;
mod scenario;
mod session;

pub use actor::{step_actor, Actor, ActorParams, Behavior};
pub use flow::{compute_flow_field, FlowField, FlowSet};
pub use lidar::{lidar_scan, LidarParams};
pub use scenario::Scenario;
pub use session::{load_session, record_session, save_session, SessionConfig, SessionData};

use crate::error::{Error, Result};
use crate::geom::{Polygon, Rect, Segment, Vec2};

/// Semantic class of an obstacle point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum Label {
    Permanent = 0,
    Movable = 1,
    Dynamic = 2,
}

impl Label {
    pub const ALL: [Label; 3] = [Label::Permanent, Label::Movable, Label::Dynamic];

    pub fn from_u8(v: u8) -> Option<Label> {
        match v {
            0 => Some(Label::Permanent),
            1 => Some(Label::Movable),
            2 => Some(Label::Dynamic),
            _ => None,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Pose2 {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl Pose2 {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Pose2 { x, y, theta }
    }

    pub fn position(&self) -> Vec2 {
        Vec2::new(self.x, self.y)
    }
}

/// Static geometry of one session: walls, the movable boxes placed for
/// that session, and the outer bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct WorldMap {
    pub walls: Vec<Segment>,
    pub movables: Vec<Polygon>,
    pub bounds: Rect,
}

impl WorldMap {
    pub fn new(walls: Vec<Segment>, movables: Vec<Polygon>, bounds: Rect) -> Result<Self> {
        if bounds.max.x <= bounds.min.x || bounds.max.y <= bounds.min.y {
            return Err(Error::invalid("world bounds are empty"));
        }
        if let Some(i) = walls.iter().position(|w| w.length() <= 0.0) {
            return Err(Error::invalid(format!("wall {i} has zero length")));
        }
        for (i, m) in movables.iter().enumerate() {
            if m.vertices.len() < 3 || !m.vertices.iter().all(|&v| bounds.contains(v)) {
                return Err(Error::invalid(format!("movable {i} is not inside bounds")));
            }
        }
        Ok(WorldMap {
            walls,
            movables,
            bounds,
        })
    }

    /// Every segment an actor can collide with, including the bounds.
    pub fn collision_segments(&self) -> Vec<Segment> {
        let mut segs = self.walls.clone();
        for m in &self.movables {
            segs.extend(m.edges());
        }
        segs.extend(self.bounds.edges());
        segs
    }

    /// Distance from `p` to the nearest wall, movable or bound.
    pub fn clearance(&self, p: Vec2) -> f64 {
        if !self.bounds.contains(p) {
            return 0.0;
        }
        let mut d = f64::INFINITY;
        for w in &self.walls {
            d = d.min(w.distance(p));
        }
        for m in &self.movables {
            d = d.min(m.distance(p));
        }
        for e in self.bounds.edges() {
            d = d.min(e.distance(p));
        }
        d
    }
}

/// One timestamped range scan.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub timestamp: f64,
    pub sensor_pose: Pose2,
    /// World-frame hit points.
    pub points: Vec<Vec2>,
    /// Ground-truth class per point.
    pub labels: Vec<Label>,
    /// Range per ray, `INFINITY` on a miss. Empty for frames loaded from disk.
    pub ranges: Vec<f64>,
    /// Labels inferred by the annotator, kept apart from the ground truth.
    pub inferred: Option<Vec<Label>>,
}

impl Frame {
    /// Labels used downstream: inferred ones when present.
    pub fn effective_labels(&self) -> &[Label] {
        self.inferred.as_deref().unwrap_or(&self.labels)
    }
}
