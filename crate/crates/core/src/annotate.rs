//! Self-supervised point labeling from hit/miss ray statistics gathered
//! over several sessions in the same map.
//!
//! Within one session, a cell that is both hit and traversed by rays is
//! dynamic. Across sessions, a cell hit in some sessions and seen empty in
//! others is movable. Anything hit consistently is permanent.

use std::path::Path;

use crate::error::{Error, Result};
use crate::geom::{Rect, Vec2};
use crate::io::{ByteReader, ByteWriter};
use crate::sim::{Frame, Label, SessionData};

pub const UNKNOWN: u8 = 255;

/// Per-cell hit and ray pass-through counts.
#[derive(Debug, Clone, PartialEq)]
pub struct HitMissGrid {
    /// Center of cell (0, 0).
    pub origin: Vec2,
    pub resolution: f64,
    pub width: usize,
    pub height: usize,
    pub hits: Vec<u32>,
    pub misses: Vec<u32>,
    /// Bit `s` set when session `s` hit the cell at least once.
    pub presence: Vec<u64>,
    /// Traversed cells within this many steps of a ray end get no miss.
    pub miss_margin: usize,
}

impl HitMissGrid {
    pub fn new(origin: Vec2, resolution: f64, width: usize, height: usize) -> Self {
        let n = width * height;
        HitMissGrid {
            origin,
            resolution,
            width,
            height,
            hits: vec![0; n],
            misses: vec![0; n],
            presence: vec![0; n],
            miss_margin: 0,
        }
    }

    pub fn with_miss_margin(mut self, cells: usize) -> Self {
        self.miss_margin = cells;
        self
    }

    /// A grid covering `bounds` plus a one-cell margin.
    pub fn covering(bounds: Rect, resolution: f64) -> Self {
        let origin = bounds.min - Vec2::new(resolution, resolution) * 0.5;
        let width = ((bounds.max.x - bounds.min.x) / resolution).ceil() as usize + 2;
        let height = ((bounds.max.y - bounds.min.y) / resolution).ceil() as usize + 2;
        HitMissGrid::new(origin, resolution, width, height)
    }

    fn cell(&self, p: Vec2) -> (i64, i64) {
        (
            ((p.y - self.origin.y) / self.resolution).round() as i64,
            ((p.x - self.origin.x) / self.resolution).round() as i64,
        )
    }

    fn index(&self, r: i64, c: i64) -> Option<usize> {
        (r >= 0 && c >= 0 && (r as usize) < self.height && (c as usize) < self.width)
            .then(|| r as usize * self.width + c as usize)
    }

    pub fn at(&self, p: Vec2) -> Option<usize> {
        let (r, c) = self.cell(p);
        self.index(r, c)
    }

    /// Trace one ray: every traversed cell gets a miss, the end cell a hit.
    pub fn add_ray(&mut self, from: Vec2, to: Vec2, session: usize) {
        let (r0, c0) = self.cell(from);
        let (r1, c1) = self.cell(to);
        let steps = (c1 - c0).abs().max((r1 - r0).abs()) as usize;
        let free_until = steps.saturating_sub(self.miss_margin);
        let mut k = 0usize;
        bresenham(c0, r0, c1, r1, |c, r| {
            if k < free_until {
                if let Some(i) = self.index(r, c) {
                    self.misses[i] += 1;
                }
            }
            k += 1;
        });
        if let Some(i) = self.index(r1, c1) {
            self.hits[i] += 1;
            self.presence[i] |= 1 << session;
        }
    }

    pub fn accumulate_frames(&mut self, frames: &[Frame], poses: &[Vec2], session: usize) -> Result<()> {
        if frames.len() != poses.len() {
            return Err(Error::invalid(format!(
                "frame/pose count mismatch: {} frames, {} poses",
                frames.len(),
                poses.len()
            )));
        }
        if session >= 64 {
            return Err(Error::invalid("at most 64 sessions per grid"));
        }
        for (f, &origin) in frames.iter().zip(poses) {
            for &p in &f.points {
                self.add_ray(origin, p, session);
            }
        }
        Ok(())
    }

    /// Trace every ray of every frame of `session`.
    pub fn accumulate_session(&mut self, session: &SessionData, index: usize) -> Result<()> {
        let poses: Vec<Vec2> = session.poses().map(|(_, p)| p.position()).collect();
        self.accumulate_frames(&session.frames, &poses, index)
    }

    /// Per-cell sum and presence union; grids must share geometry.
    pub fn merge(&mut self, other: &HitMissGrid) -> Result<()> {
        if (self.width, self.height) != (other.width, other.height)
            || self.origin != other.origin
            || self.resolution != other.resolution
        {
            return Err(Error::invalid("cannot merge grids with different geometry"));
        }
        for i in 0..self.hits.len() {
            self.hits[i] += other.hits[i];
            self.misses[i] += other.misses[i];
            self.presence[i] |= other.presence[i];
        }
        Ok(())
    }
}

fn bresenham(x0: i64, y0: i64, x1: i64, y1: i64, mut visit: impl FnMut(i64, i64)) {
    let dx = (x1 - x0).abs();
    let dy = -(y1 - y0).abs();
    let sx = if x0 < x1 { 1 } else { -1 };
    let sy = if y0 < y1 { 1 } else { -1 };
    let (mut x, mut y, mut err) = (x0, y0, dx + dy);
    loop {
        visit(x, y);
        if x == x1 && y == y1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
}

/// Per-cell class: 0 permanent, 1 movable, 2 dynamic, 255 never hit.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelGrid {
    pub origin: Vec2,
    pub resolution: f64,
    pub width: usize,
    pub height: usize,
    pub cells: Vec<u8>,
}

/// Classify cells from per-session grids.
///
/// A session is said to observe a cell when it recorded a hit or a miss
/// there. A cell with no hit at all stays unknown.
pub fn classify_cells(grids: &[HitMissGrid], theta_dyn: f64) -> Result<LabelGrid> {
    let first = grids.first().ok_or_else(|| Error::invalid("no session grids"))?;
    if grids.len() < 2 {
        return Err(Error::invalid("classification needs at least two sessions"));
    }
    if grids
        .iter()
        .any(|g| (g.width, g.height, g.origin) != (first.width, first.height, first.origin))
    {
        return Err(Error::invalid("session grids differ in geometry"));
    }
    let n = first.hits.len();
    if n == 0 {
        return Err(Error::invalid("empty grids"));
    }
    let mut cells = vec![UNKNOWN; n];
    for (i, cell) in cells.iter_mut().enumerate() {
        let mut any_hit = false;
        let mut dynamic = false;
        let mut absent = false;
        for g in grids {
            let (h, m) = (g.hits[i] as f64, g.misses[i] as f64);
            if h > 0.0 {
                any_hit = true;
                if m / (h + m) >= theta_dyn {
                    dynamic = true;
                }
            } else if m > 0.0 {
                absent = true;
            }
        }
        *cell = match (any_hit, dynamic, absent) {
            (false, _, _) => UNKNOWN,
            (true, true, _) => Label::Dynamic as u8,
            (true, false, true) => Label::Movable as u8,
            (true, false, false) => Label::Permanent as u8,
        };
    }
    Ok(LabelGrid {
        origin: first.origin,
        resolution: first.resolution,
        width: first.width,
        height: first.height,
        cells,
    })
}

/// Outcome of labeling one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledFrame {
    pub frame: Frame,
    /// Points outside the grid, labeled dynamic.
    pub outside: usize,
}

/// Copy each point's cell class into `frame.inferred`. Unknown cells and
/// points off the grid are labeled dynamic.
pub fn label_frame_points(frame: &Frame, grid: &LabelGrid) -> LabeledFrame {
    let mut outside = 0;
    let inferred = frame
        .points
        .iter()
        .map(|&p| match grid.cell(p) {
            Some(v) => Label::from_u8(v).unwrap_or(Label::Dynamic),
            None => {
                outside += 1;
                Label::Dynamic
            }
        })
        .collect();
    let mut frame = frame.clone();
    frame.inferred = Some(inferred);
    LabeledFrame { frame, outside }
}

const LABEL_MAGIC: &[u8; 4] = b"LBL1";

impl LabelGrid {
    pub fn cell(&self, p: Vec2) -> Option<u8> {
        let r = ((p.y - self.origin.y) / self.resolution).round();
        let c = ((p.x - self.origin.x) / self.resolution).round();
        if r < 0.0 || c < 0.0 || r >= self.height as f64 || c >= self.width as f64 {
            return None;
        }
        Some(self.cells[r as usize * self.width + c as usize])
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = ByteWriter::new();
        w.bytes(LABEL_MAGIC);
        w.u32(self.height as u32);
        w.u32(self.width as u32);
        w.f32(self.resolution as f32);
        w.f64(self.origin.x);
        w.f64(self.origin.y);
        w.bytes(&self.cells);
        w.into_inner()
    }

    pub fn decode(data: &[u8]) -> Result<LabelGrid> {
        let mut r = ByteReader::new(data);
        r.magic(LABEL_MAGIC)?;
        let height = r.u32()? as usize;
        let width = r.u32()? as usize;
        let resolution = r.f32()? as f64;
        let origin = Vec2::new(r.f64()?, r.f64()?);
        let cells = r.take(width * height)?.to_vec();
        r.finish()?;
        if let Some(bad) = cells.iter().find(|&&c| c > 2 && c != UNKNOWN) {
            return Err(Error::format(format!("bad label byte {bad}")));
        }
        Ok(LabelGrid {
            origin,
            resolution,
            width,
            height,
            cells,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        Ok(std::fs::write(path, self.encode())?)
    }

    pub fn load(path: &Path) -> Result<LabelGrid> {
        LabelGrid::decode(&std::fs::read(path)?)
    }
}

/// Build per-session grids over `bounds` and classify them.
pub fn annotate_sessions(
    sessions: &[SessionData],
    bounds: Rect,
    params: &AnnotateParams,
) -> Result<LabelGrid> {
    let grids = sessions
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let mut g =
                HitMissGrid::covering(bounds, params.dl_map).with_miss_margin(params.miss_margin);
            g.accumulate_session(s, i)?;
            Ok(g)
        })
        .collect::<Result<Vec<_>>>()?;
    classify_cells(&grids, params.theta_dyn)
}

#[derive(Debug, Clone)]
pub struct AnnotateParams {
    pub dl_map: f64,
    pub theta_dyn: f64,
    pub miss_margin: usize,
}

impl Default for AnnotateParams {
    fn default() -> Self {
        AnnotateParams {
            dl_map: 0.06,
            theta_dyn: 0.5,
            miss_margin: 5,
        }
    }
}

/// Axis-aligned box around every sensor pose and point of the sessions.
pub fn session_bounds(sessions: &[SessionData]) -> Option<Rect> {
    let mut min = Vec2::new(f64::INFINITY, f64::INFINITY);
    let mut max = Vec2::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
    for f in sessions.iter().flat_map(|s| &s.frames) {
        let pose = f.sensor_pose.position();
        for p in f.points.iter().chain(std::iter::once(&pose)) {
            min = Vec2::new(min.x.min(p.x), min.y.min(p.y));
            max = Vec2::new(max.x.max(p.x), max.y.max(p.y));
        }
    }
    (min.x <= max.x).then(|| Rect::new(min, max))
}
