use rand::seq::SliceRandom;
use rand::Rng;

use super::WorldMap;
use crate::error::Result;
use crate::geom::{Polygon, Rect, Segment, Vec2};

/// A static layout from which randomized sessions are drawn: walls,
/// candidate box placements, flow-follower goals and robot tour points.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub id: String,
    pub bounds: Rect,
    pub walls: Vec<Segment>,
    pub movable_slots: Vec<Polygon>,
    pub goals: Vec<Vec2>,
    pub tour_points: Vec<Vec2>,
}

fn seg(ax: f64, ay: f64, bx: f64, by: f64) -> Segment {
    Segment::new(Vec2::new(ax, ay), Vec2::new(bx, by))
}

impl Scenario {
    /// Three rooms joined by doorways, 14 m x 10 m.
    pub fn office() -> Scenario {
        let bounds = Rect::new(Vec2::new(0.0, 0.0), Vec2::new(14.0, 10.0));
        let mut walls: Vec<Segment> = bounds.edges().to_vec();
        walls.extend([
            // vertical divider with a doorway at y in [3.5, 5.0]
            seg(7.0, 0.0, 7.0, 3.5),
            seg(7.0, 5.0, 7.0, 10.0),
            // left rooms, doorway at x in [2.5, 4.0]
            seg(0.0, 5.0, 2.5, 5.0),
            seg(4.0, 5.0, 7.0, 5.0),
            // right rooms, doorway at x in [7.0, 9.5]
            seg(9.5, 6.0, 14.0, 6.0),
            // a pillar
            seg(10.5, 2.5, 11.0, 2.5),
            seg(11.0, 2.5, 11.0, 3.0),
            seg(11.0, 3.0, 10.5, 3.0),
            seg(10.5, 3.0, 10.5, 2.5),
        ]);
        let boxes = [
            (1.8, 2.0, 0.0),
            (5.2, 8.2, 0.4),
            (9.5, 1.2, 0.0),
            (12.3, 8.3, 1.0),
            (4.6, 1.5, 0.2),
            (8.8, 8.6, 0.0),
            (12.4, 4.5, 0.6),
            (1.5, 8.5, 0.0),
        ];
        let movable_slots = boxes
            .iter()
            .map(|&(x, y, th)| Polygon::rect(Vec2::new(x, y), 0.3, 0.2, th))
            .collect();
        Scenario {
            id: "office".into(),
            bounds,
            walls,
            movable_slots,
            goals: vec![
                Vec2::new(1.5, 3.5),
                Vec2::new(5.5, 6.5),
                Vec2::new(12.5, 1.5),
                Vec2::new(12.8, 7.2),
                Vec2::new(2.5, 7.5),
                Vec2::new(9.0, 4.2),
            ],
            tour_points: vec![
                Vec2::new(3.0, 3.0),
                Vec2::new(4.0, 7.5),
                Vec2::new(8.5, 4.0),
                Vec2::new(11.0, 7.6),
                Vec2::new(12.8, 3.3),
                Vec2::new(5.5, 3.0),
            ],
        }
    }

    /// A session map: the scenario walls plus a random subset of the boxes.
    pub fn sample_map<R: Rng + ?Sized>(&self, rng: &mut R, box_probability: f64) -> Result<WorldMap> {
        let movables = self
            .movable_slots
            .iter()
            .filter(|_| rng.random_bool(box_probability))
            .cloned()
            .collect();
        WorldMap::new(self.walls.clone(), movables, self.bounds)
    }

    /// A random tour over `len` distinct tour points.
    pub fn sample_tour<R: Rng + ?Sized>(&self, rng: &mut R, len: usize) -> Vec<Vec2> {
        let mut pts = self.tour_points.clone();
        pts.shuffle(rng);
        pts.truncate(len.clamp(2, pts.len()));
        pts
    }
}
