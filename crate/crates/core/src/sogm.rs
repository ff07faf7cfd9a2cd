//! Ground-truth SOGM generation and network input rasterization.
//!
//! Frames are reduced to labeled 2D point sets first; grids are only built
//! at the end so that rotation augmentation acts on points.

use std::collections::BTreeMap;
use std::f64::consts::FRAC_PI_2;
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::geom::Vec2;
use crate::io::{ByteReader, ByteWriter};
use crate::sim::{Frame, Label};
use crate::tensor::Tensor;

/// Channel order of ground-truth and predicted grids.
pub const PERMANENT: usize = 0;
pub const MOVABLE: usize = 1;
pub const DYNAMIC: usize = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct SogmParams {
    /// Cell size (m).
    pub dl_2d: f64,
    /// Layer spacing (s).
    pub dt: f64,
    /// Forecast horizon (s).
    pub horizon: f64,
    /// Input radius (m).
    pub r_in: f64,
    /// Number of input frames.
    pub n_f: usize,
    /// Subsampling cell (m).
    pub dl_sub: f64,
}

impl Default for SogmParams {
    fn default() -> Self {
        SogmParams {
            dl_2d: 0.12,
            dt: 0.1,
            horizon: 3.0,
            r_in: 8.0,
            n_f: 3,
            dl_sub: 0.03,
        }
    }
}

impl SogmParams {
    /// 48 x 48 cells and 11 layers.
    pub fn small() -> Self {
        SogmParams {
            horizon: 1.0,
            r_in: 4.1,
            ..SogmParams::default()
        }
    }

    pub fn n_t(&self) -> usize {
        (self.horizon / self.dt).round() as usize + 1
    }

    /// Side of the square inscribed in the input disc, in cells.
    pub fn side(&self) -> usize {
        (2.0 * self.r_in / std::f64::consts::SQRT_2 / self.dl_2d).floor() as usize
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("dl_2d", self.dl_2d),
            ("dt", self.dt),
            ("horizon", self.horizon),
            ("r_in", self.r_in),
            ("dl_sub", self.dl_sub),
        ] {
            if !(v > 0.0) {
                return Err(Error::config(format!("sogm.{name} must be positive")));
            }
        }
        if self.n_f == 0 {
            return Err(Error::config("sogm.n_f must be at least 1"));
        }
        if self.side() < 2 {
            return Err(Error::config("sogm.r_in is too small for one grid cell"));
        }
        Ok(())
    }

    pub fn geometry(&self, center: Vec2) -> GridGeometry {
        GridGeometry::centered(center, self.side(), self.dl_2d)
    }
}

/// Square grid placement in world coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridGeometry {
    /// Center of cell (0, 0); rows run along +y, columns along +x.
    pub origin: Vec2,
    pub side: usize,
    pub dl: f64,
}

impl GridGeometry {
    pub fn centered(center: Vec2, side: usize, dl: f64) -> Self {
        let half = (side as f64 - 1.0) / 2.0;
        GridGeometry {
            origin: center - Vec2::new(half, half) * dl,
            side,
            dl,
        }
    }

    pub fn center(&self) -> Vec2 {
        let half = (self.side as f64 - 1.0) / 2.0;
        self.origin + Vec2::new(half, half) * self.dl
    }

    pub fn cell_of(&self, p: Vec2) -> Option<(usize, usize)> {
        let c = ((p.x - self.origin.x) / self.dl).round();
        let r = ((p.y - self.origin.y) / self.dl).round();
        let n = self.side as f64;
        (r >= 0.0 && c >= 0.0 && r < n && c < n).then_some((r as usize, c as usize))
    }

    pub fn cell_center(&self, row: usize, col: usize) -> Vec2 {
        self.origin + Vec2::new(col as f64, row as f64) * self.dl
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabeledPoint {
    pub pos: Vec2,
    pub label: Label,
}

/// A timestamped labeled 2D point set.
#[derive(Debug, Clone, PartialEq)]
pub struct TimedPoints {
    pub t: f64,
    pub points: Vec<LabeledPoint>,
}

/// Keep obstacle points with their labels.
///
/// There is no ground class in the planar world, so the height test of a
/// 3D pipeline has nothing to remove and this is a pure label filter.
pub fn filter_obstacle_points(frame: &Frame) -> Vec<LabeledPoint> {
    frame
        .points
        .iter()
        .zip(frame.effective_labels())
        .filter(|(_, l)| Label::ALL.contains(l))
        .map(|(&pos, &label)| LabeledPoint { pos, label })
        .collect()
}

/// One barycenter per occupied `dl_sub` cell and class.
pub fn grid_subsample(points: &[LabeledPoint], dl_sub: f64) -> Vec<LabeledPoint> {
    let mut cells: BTreeMap<(Label, i64, i64), (Vec2, usize)> = BTreeMap::new();
    for p in points {
        let key = (
            p.label,
            (p.pos.x / dl_sub).floor() as i64,
            (p.pos.y / dl_sub).floor() as i64,
        );
        let e = cells.entry(key).or_insert((Vec2::ZERO, 0));
        e.0 += p.pos;
        e.1 += 1;
    }
    cells
        .into_iter()
        .map(|((label, _, _), (sum, n))| LabeledPoint {
            pos: sum / n as f64,
            label,
        })
        .collect()
}

/// Filter then subsample one frame.
pub fn preprocess_frame(frame: &Frame, params: &SogmParams) -> TimedPoints {
    TimedPoints {
        t: frame.timestamp,
        points: grid_subsample(&filter_obstacle_points(frame), params.dl_sub),
    }
}

/// Spatiotemporal grid stored as `[layer][channel][row][col]`.
///
/// Also used, with one channel, for risk maps and, with one layer, for
/// network input grids.
#[derive(Debug, Clone, PartialEq)]
pub struct Sogm {
    pub n_t: usize,
    pub channels: usize,
    pub geometry: GridGeometry,
    pub dt: f64,
    /// Time of layer 0 (s).
    pub t0: f64,
    pub data: Vec<f32>,
}

impl Sogm {
    pub fn zeros(n_t: usize, channels: usize, geometry: GridGeometry, dt: f64, t0: f64) -> Self {
        let n = n_t * channels * geometry.side * geometry.side;
        Sogm {
            n_t,
            channels,
            geometry,
            dt,
            t0,
            data: vec![0.0; n],
        }
    }

    pub fn side(&self) -> usize {
        self.geometry.side
    }

    pub fn plane_len(&self) -> usize {
        self.geometry.side * self.geometry.side
    }

    pub fn index(&self, k: usize, c: usize, row: usize, col: usize) -> usize {
        ((k * self.channels + c) * self.geometry.side + row) * self.geometry.side + col
    }

    pub fn get(&self, k: usize, c: usize, row: usize, col: usize) -> f32 {
        self.data[self.index(k, c, row, col)]
    }

    pub fn plane(&self, k: usize, c: usize) -> &[f32] {
        let start = self.index(k, c, 0, 0);
        &self.data[start..start + self.plane_len()]
    }

    pub fn plane_mut(&mut self, k: usize, c: usize) -> &mut [f32] {
        let start = self.index(k, c, 0, 0);
        let n = self.plane_len();
        &mut self.data[start..start + n]
    }

    pub fn same_geometry(&self, other: &Sogm) -> bool {
        self.n_t == other.n_t
            && self.channels == other.channels
            && self.geometry == other.geometry
    }

    pub fn is_binary(&self) -> bool {
        self.data.iter().all(|&v| v == 0.0 || v == 1.0)
    }
}

fn inside_disc(p: Vec2, center: Vec2, r: f64) -> bool {
    p.dist(center) <= r
}

/// Stack timed point sets into a ground-truth SOGM whose layer 0 is at `t0`.
///
/// Dynamic points mark the layer nearest their timestamp; permanent and
/// movable points from every layer are merged into all layers.
pub fn build_sogm(stack: &[TimedPoints], t0: f64, center: Vec2, params: &SogmParams) -> Result<Sogm> {
    let n_t = params.n_t();
    let geo = params.geometry(center);
    let mut sogm = Sogm::zeros(n_t, 3, geo, params.dt, t0);
    let tol = params.dt / 2.0 + 1e-9;
    let mut seen = vec![false; n_t];
    let plane = sogm.plane_len();
    let mut statics = vec![[false; 2]; plane];
    for entry in stack {
        let u = (entry.t - t0) / params.dt;
        let k = u.round();
        if k < 0.0 || k >= n_t as f64 || (entry.t - (t0 + k * params.dt)).abs() > tol {
            continue;
        }
        let k = k as usize;
        seen[k] = true;
        for p in &entry.points {
            if !inside_disc(p.pos, center, params.r_in) {
                continue;
            }
            let Some((r, c)) = geo.cell_of(p.pos) else {
                continue;
            };
            match p.label {
                Label::Dynamic => {
                    let i = sogm.index(k, 2, r, c);
                    sogm.data[i] = 1.0;
                }
                l => statics[r * geo.side + c][l.index()] = true,
            }
        }
    }
    if let Some(k) = seen.iter().position(|s| !s) {
        return Err(Error::MissingLayer {
            layer: k,
            time: t0 + k as f64 * params.dt,
        });
    }
    for k in 0..n_t {
        for ch in 0..2 {
            let layer = sogm.plane_mut(k, ch);
            for (v, s) in layer.iter_mut().zip(&statics) {
                if s[ch] {
                    *v = 1.0;
                }
            }
        }
    }
    Ok(sogm)
}

/// Network input `[n_f + 3][H][W]`: one occupancy channel per frame
/// (oldest first), then per-class occupancy of the newest frame.
pub fn rasterize_input(frames: &[TimedPoints], center: Vec2, params: &SogmParams) -> Result<Tensor> {
    let n_f = params.n_f;
    if frames.len() < n_f {
        return Err(Error::invalid(format!(
            "need {n_f} input frames, got {}",
            frames.len()
        )));
    }
    let frames = &frames[frames.len() - n_f..];
    if frames.windows(2).any(|w| w[1].t < w[0].t) {
        return Err(Error::invalid("input frames are not time-ordered"));
    }
    let geo = params.geometry(center);
    let side = geo.side;
    let plane = side * side;
    let mut data = vec![0.0; (n_f + 3) * plane];
    for (i, f) in frames.iter().enumerate() {
        for p in &f.points {
            if !inside_disc(p.pos, center, params.r_in) {
                continue;
            }
            if let Some((r, c)) = geo.cell_of(p.pos) {
                data[i * plane + r * side + c] = 1.0;
                if i == n_f - 1 {
                    data[(n_f + p.label.index()) * plane + r * side + c] = 1.0;
                }
            }
        }
    }
    Tensor::from_vec(&[n_f + 3, side, side], data)
}

fn rotate_about(p: Vec2, center: Vec2, angle: f64) -> Vec2 {
    let d = p - center;
    let quarter = angle / FRAC_PI_2;
    let r = if (quarter - quarter.round()).abs() < 1e-12 {
        // exact quarter turns keep cell assignment exact
        match (quarter.round() as i64).rem_euclid(4) {
            0 => d,
            1 => Vec2::new(-d.y, d.x),
            2 => Vec2::new(-d.x, -d.y),
            _ => Vec2::new(d.y, -d.x),
        }
    } else {
        d.rotate(angle)
    };
    center + r
}

/// The raw material of one training sample: input frames and the future
/// frames spanning the forecast window, as point sets around `center`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub center: Vec2,
    pub t0: f64,
    /// Last `n_f` frames, oldest first; the newest is at `t0`.
    pub inputs: Vec<TimedPoints>,
    /// Frames from `t0` to `t0 + T`.
    pub future: Vec<TimedPoints>,
}

impl Sample {
    /// Input tensor and ground-truth SOGM.
    pub fn rasterize(&self, params: &SogmParams) -> Result<(Tensor, Sogm)> {
        let input = rasterize_input(&self.inputs, self.center, params)?;
        let gt = build_sogm(&self.future, self.t0, self.center, params)?;
        Ok((input, gt))
    }
}

/// Rotate every point of a sample about its grid center.
pub fn rotate_augment(sample: &Sample, angle: f64) -> Sample {
    let rot = |sets: &[TimedPoints]| {
        sets.iter()
            .map(|s| TimedPoints {
                t: s.t,
                points: s
                    .points
                    .iter()
                    .map(|p| LabeledPoint {
                        pos: rotate_about(p.pos, sample.center, angle),
                        label: p.label,
                    })
                    .collect(),
            })
            .collect()
    };
    Sample {
        id: sample.id.clone(),
        center: sample.center,
        t0: sample.t0,
        inputs: rot(&sample.inputs),
        future: rot(&sample.future),
    }
}

/// Rotation by an angle drawn uniformly from [0, 2 pi).
pub fn random_rotation<R: Rng + ?Sized>(sample: &Sample, rng: &mut R) -> Sample {
    let angle = rng.random_range(0.0..std::f64::consts::TAU);
    rotate_augment(sample, angle)
}

/// One sample per frame index `f` with `n_f - 1` past frames and `n_T - 1`
/// future frames available, every `stride` frames.
pub fn make_samples(frames: &[Frame], session_id: &str, params: &SogmParams, stride: usize) -> Vec<Sample> {
    let n_f = params.n_f;
    let n_t = params.n_t();
    let stride = stride.max(1);
    if frames.len() < n_f.max(n_t) || frames.len() + 1 < n_f + n_t {
        return Vec::new();
    }
    let processed: Vec<TimedPoints> = frames.iter().map(|f| preprocess_frame(f, params)).collect();
    let first = n_f - 1;
    let last = frames.len() - n_t;
    (first..=last)
        .step_by(stride)
        .map(|f| Sample {
            id: format!("{session_id}_{f:05}"),
            center: frames[f].sensor_pose.position(),
            t0: frames[f].timestamp,
            inputs: processed[f + 1 - n_f..=f].to_vec(),
            future: processed[f..f + n_t].to_vec(),
        })
        .collect()
}

const SOGM_MAGIC: &[u8; 4] = b"SOGM";

/// Extra header fields carried by risk maps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RiskHeader {
    pub p: f32,
    pub d0: f32,
}

pub fn encode_grid(sogm: &Sogm, risk: Option<RiskHeader>) -> Vec<u8> {
    let mut w = ByteWriter::new();
    w.bytes(SOGM_MAGIC);
    w.u8(if risk.is_some() { 2 } else { 1 });
    w.u32(sogm.n_t as u32);
    w.u32(sogm.channels as u32);
    w.u32(sogm.side() as u32);
    w.u32(sogm.side() as u32);
    w.f32(sogm.dt as f32);
    w.f32(sogm.geometry.dl as f32);
    w.f64(sogm.geometry.origin.x);
    w.f64(sogm.geometry.origin.y);
    w.f64(sogm.t0);
    for &v in &sogm.data {
        w.f32(v);
    }
    if let Some(h) = risk {
        w.f32(h.p);
        w.f32(h.d0);
    }
    w.into_inner()
}

pub fn decode_grid(data: &[u8]) -> Result<(Sogm, Option<RiskHeader>)> {
    let mut r = ByteReader::new(data);
    r.magic(SOGM_MAGIC)?;
    let version = r.u8()?;
    if version != 1 && version != 2 {
        return Err(Error::format(format!("unknown SOGM version {version}")));
    }
    let n_t = r.u32()? as usize;
    let channels = r.u32()? as usize;
    let h = r.u32()? as usize;
    let w = r.u32()? as usize;
    if h != w {
        return Err(Error::format(format!("non-square grid {h}x{w}")));
    }
    let dt = r.f32()? as f64;
    let dl = r.f32()? as f64;
    let origin = Vec2::new(r.f64()?, r.f64()?);
    let t0 = r.f64()?;
    let n = n_t * channels * h * w;
    let mut values = Vec::with_capacity(n);
    for _ in 0..n {
        values.push(r.f32()?);
    }
    let risk = if version == 2 {
        Some(RiskHeader {
            p: r.f32()?,
            d0: r.f32()?,
        })
    } else {
        None
    };
    r.finish()?;
    Ok((
        Sogm {
            n_t,
            channels,
            geometry: GridGeometry { origin, side: h, dl },
            dt,
            t0,
            data: values,
        },
        risk,
    ))
}

impl Sogm {
    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        Ok(std::fs::write(path, encode_grid(self, None))?)
    }

    pub fn load(path: &Path) -> Result<Sogm> {
        let (s, risk) = decode_grid(&std::fs::read(path)?)?;
        if risk.is_some() {
            return Err(Error::format(format!("{} holds a risk map", path.display())));
        }
        Ok(s)
    }

    /// Wrap a `[C][H][W]` tensor as a one-layer grid.
    pub fn from_input(input: &Tensor, geometry: GridGeometry, dt: f64, t0: f64) -> Result<Sogm> {
        if input.shape.len() != 3 || input.shape[1] != geometry.side || input.shape[2] != geometry.side {
            return Err(Error::ShapeMismatch {
                expected: vec![0, geometry.side, geometry.side],
                got: input.shape.clone(),
            });
        }
        Ok(Sogm {
            n_t: 1,
            channels: input.shape[0],
            geometry,
            dt,
            t0,
            data: input.data.iter().map(|&v| v as f32).collect(),
        })
    }

    /// Inverse of [`Sogm::from_input`].
    pub fn to_input(&self) -> Result<Tensor> {
        if self.n_t != 1 {
            return Err(Error::invalid("an input grid has exactly one layer"));
        }
        Tensor::from_vec(
            &[self.channels, self.side(), self.side()],
            self.data.iter().map(|&v| v as f64).collect(),
        )
    }
}

const SAMPLE_MAGIC: &[u8; 4] = b"PTS1";

fn write_sets(w: &mut ByteWriter, sets: &[TimedPoints]) {
    w.u32(sets.len() as u32);
    for s in sets {
        w.f64(s.t);
        w.u32(s.points.len() as u32);
        for p in &s.points {
            w.f64(p.pos.x);
            w.f64(p.pos.y);
            w.u8(p.label as u8);
        }
    }
}

fn read_sets(r: &mut ByteReader) -> Result<Vec<TimedPoints>> {
    let n = r.u32()? as usize;
    let mut sets = Vec::with_capacity(n);
    for _ in 0..n {
        let t = r.f64()?;
        let m = r.u32()? as usize;
        let mut points = Vec::with_capacity(m);
        for _ in 0..m {
            let pos = Vec2::new(r.f64()?, r.f64()?);
            let l = r.u8()?;
            let label = Label::from_u8(l).ok_or_else(|| Error::format(format!("bad label {l}")))?;
            points.push(LabeledPoint { pos, label });
        }
        sets.push(TimedPoints { t, points });
    }
    Ok(sets)
}

impl Sample {
    /// Point-set sample container (`PTS1`), read back by training.
    pub fn encode(&self) -> Vec<u8> {
        let mut w = ByteWriter::new();
        w.bytes(SAMPLE_MAGIC);
        w.u16(self.id.len() as u16);
        w.bytes(self.id.as_bytes());
        w.f64(self.center.x);
        w.f64(self.center.y);
        w.f64(self.t0);
        write_sets(&mut w, &self.inputs);
        write_sets(&mut w, &self.future);
        w.into_inner()
    }

    pub fn decode(data: &[u8]) -> Result<Sample> {
        let mut r = ByteReader::new(data);
        r.magic(SAMPLE_MAGIC)?;
        let len = r.u16()? as usize;
        let id = String::from_utf8(r.take(len)?.to_vec()).map_err(|_| Error::format("bad sample id"))?;
        let center = Vec2::new(r.f64()?, r.f64()?);
        let t0 = r.f64()?;
        let inputs = read_sets(&mut r)?;
        let future = read_sets(&mut r)?;
        r.finish()?;
        Ok(Sample {
            id,
            center,
            t0,
            inputs,
            future,
        })
    }
}
