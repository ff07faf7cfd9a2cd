use std::cmp::Ordering;
use std::collections::BinaryHeap;

use super::WorldMap;
use crate::error::{Error, Result};
use crate::geom::Vec2;

const NEIGHBORS: [(i64, i64); 8] = [
    (1, 0),
    (-1, 0),
    (0, 1),
    (0, -1),
    (1, 1),
    (1, -1),
    (-1, 1),
    (-1, -1),
];

/// Grid of unit steering vectors descending a distance-to-goal wavefront.
#[derive(Debug, Clone)]
pub struct FlowField {
    /// Center of cell (0, 0).
    pub origin: Vec2,
    pub resolution: f64,
    pub width: usize,
    pub height: usize,
    pub goals: Vec<Vec2>,
    /// Geodesic distance to the nearest goal; `INFINITY` if blocked or unreachable.
    pub distance: Vec<f64>,
    pub blocked: Vec<bool>,
    pub vectors: Vec<Vec2>,
}

#[derive(PartialEq)]
struct Entry(f64, usize);

impl Eq for Entry {}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .0
            .total_cmp(&self.0)
            .then_with(|| other.1.cmp(&self.1))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl FlowField {
    pub fn cell_of(&self, p: Vec2) -> Option<(usize, usize)> {
        let c = ((p.x - self.origin.x) / self.resolution).round();
        let r = ((p.y - self.origin.y) / self.resolution).round();
        if c < 0.0 || r < 0.0 || c >= self.width as f64 || r >= self.height as f64 {
            return None;
        }
        Some((r as usize, c as usize))
    }

    pub fn cell_center(&self, row: usize, col: usize) -> Vec2 {
        self.origin + Vec2::new(col as f64, row as f64) * self.resolution
    }

    /// Steering vector at the cell containing `p` (zero outside the grid).
    pub fn vector_at(&self, p: Vec2) -> Vec2 {
        self.cell_of(p)
            .map(|(r, c)| self.vectors[r * self.width + c])
            .unwrap_or(Vec2::ZERO)
    }

    pub fn distance_at(&self, p: Vec2) -> f64 {
        self.cell_of(p)
            .map(|(r, c)| self.distance[r * self.width + c])
            .unwrap_or(f64::INFINITY)
    }

    fn neighbor(&self, r: usize, c: usize, dr: i64, dc: i64) -> Option<usize> {
        let (nr, nc) = (r as i64 + dr, c as i64 + dc);
        if nr < 0 || nc < 0 || nr >= self.height as i64 || nc >= self.width as i64 {
            return None;
        }
        Some(nr as usize * self.width + nc as usize)
    }

    fn free(&self, idx: Option<usize>) -> bool {
        idx.is_some_and(|i| !self.blocked[i])
    }
}

/// Multi-source wavefront over the free cells of `map`, followed by a
/// descent direction per cell.
///
/// Cells whose center is closer than `clearance` to any obstacle are
/// blocked. Diagonal moves may not cut blocked corners.
pub fn compute_flow_field(
    map: &WorldMap,
    goals: &[Vec2],
    dl_flow: f64,
    clearance: f64,
) -> Result<FlowField> {
    if dl_flow <= 0.0 {
        return Err(Error::invalid("flow resolution must be positive"));
    }
    if goals.is_empty() {
        return Err(Error::invalid("flow field needs at least one goal"));
    }
    let origin = map.bounds.min + Vec2::new(dl_flow, dl_flow) * 0.5;
    let width = ((map.bounds.max.x - map.bounds.min.x) / dl_flow).floor() as usize;
    let height = ((map.bounds.max.y - map.bounds.min.y) / dl_flow).floor() as usize;
    let n = width * height;
    let mut field = FlowField {
        origin,
        resolution: dl_flow,
        width,
        height,
        goals: goals.to_vec(),
        distance: vec![f64::INFINITY; n],
        blocked: vec![false; n],
        vectors: vec![Vec2::ZERO; n],
    };
    for r in 0..height {
        for c in 0..width {
            let p = field.cell_center(r, c);
            field.blocked[r * width + c] = map.clearance(p) < clearance;
        }
    }

    let mut heap = BinaryHeap::new();
    let mut is_goal = vec![false; n];
    for (i, &g) in goals.iter().enumerate() {
        let (r, c) = field
            .cell_of(g)
            .ok_or_else(|| Error::invalid(format!("goal {i} lies outside the map")))?;
        let idx = r * width + c;
        if field.blocked[idx] {
            return Err(Error::invalid(format!("goal {i} lies inside an obstacle")));
        }
        is_goal[idx] = true;
        field.distance[idx] = 0.0;
        heap.push(Entry(0.0, idx));
    }

    while let Some(Entry(d, idx)) = heap.pop() {
        if d > field.distance[idx] {
            continue;
        }
        let (r, c) = (idx / width, idx % width);
        for &(dr, dc) in &NEIGHBORS {
            let Some(nb) = field.neighbor(r, c, dr, dc) else {
                continue;
            };
            if field.blocked[nb] {
                continue;
            }
            let diagonal = dr != 0 && dc != 0;
            if diagonal
                && !(field.free(field.neighbor(r, c, dr, 0)) && field.free(field.neighbor(r, c, 0, dc)))
            {
                continue;
            }
            let step = if diagonal { std::f64::consts::SQRT_2 } else { 1.0 };
            let nd = d + step * dl_flow;
            if nd < field.distance[nb] {
                field.distance[nb] = nd;
                heap.push(Entry(nd, nb));
            }
        }
    }

    let mut reachable = 0usize;
    for r in 0..height {
        for c in 0..width {
            let idx = r * width + c;
            if is_goal[idx] || !field.distance[idx].is_finite() {
                continue;
            }
            reachable += 1;
            field.vectors[idx] = descent_direction(&field, r, c);
        }
    }
    if reachable == 0 {
        return Err(Error::DisconnectedFlowField);
    }
    Ok(field)
}

fn descent_direction(f: &FlowField, r: usize, c: usize) -> Vec2 {
    let d0 = f.distance[r * f.width + c];
    let value = |dr: i64, dc: i64| {
        f.neighbor(r, c, dr, dc)
            .map(|i| f.distance[i])
            .filter(|d| d.is_finite())
    };
    let partial = |plus: Option<f64>, minus: Option<f64>| match (plus, minus) {
        (Some(p), Some(m)) => (p - m) / 2.0,
        (Some(p), None) => p - d0,
        (None, Some(m)) => d0 - m,
        (None, None) => 0.0,
    };
    let gx = partial(value(0, 1), value(0, -1));
    let gy = partial(value(1, 0), value(-1, 0));
    let g = Vec2::new(-gx, -gy);
    if g.norm() > 1e-12 {
        let dir = g.normalized();
        // the rounded next cell along the gradient must be free and closer
        let dc = dir.x.round() as i64;
        let dr = dir.y.round() as i64;
        if let Some(next) = value(dr, dc) {
            if next < d0 {
                return dir;
            }
        }
    }
    // steepest neighbor
    let mut best: Option<(f64, Vec2)> = None;
    for &(dr, dc) in &NEIGHBORS {
        if let Some(d) = value(dr, dc) {
            let step = ((dr * dr + dc * dc) as f64).sqrt();
            let slope = (d0 - d) / step;
            if slope > 0.0 && best.is_none_or(|(s, _)| slope > s + 1e-12) {
                best = Some((slope, Vec2::new(dc as f64, dr as f64).normalized()));
            }
        }
    }
    best.map(|(_, v)| v).unwrap_or(Vec2::ZERO)
}

/// One flow field per goal, so an agent can follow the field of its own goal.
#[derive(Debug, Clone)]
pub struct FlowSet {
    pub goals: Vec<Vec2>,
    pub fields: Vec<FlowField>,
}

impl FlowSet {
    pub fn new(map: &WorldMap, goals: &[Vec2], dl_flow: f64, clearance: f64) -> Result<Self> {
        let fields = goals
            .iter()
            .map(|&g| compute_flow_field(map, &[g], dl_flow, clearance))
            .collect::<Result<Vec<_>>>()?;
        Ok(FlowSet {
            goals: goals.to_vec(),
            fields,
        })
    }
}
