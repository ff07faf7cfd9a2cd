//! Spatiotemporal risk maps: a p-norm over a linearly decaying kernel of
//! occupied cells, queried by trilinear interpolation.

use std::path::Path;

use crate::error::{Error, Result};
use crate::geom::Vec2;
use crate::sogm::{decode_grid, encode_grid, GridGeometry, RiskHeader, Sogm, DYNAMIC};

/// `C(d)^p` on a square stencil, `d` in cells.
#[derive(Debug, Clone, PartialEq)]
pub struct RiskKernel {
    pub radius: usize,
    pub dl: f64,
    pub d0: f64,
    pub p: f64,
    pub values: Vec<f64>,
}

/// `max(0, 1 - d * dl / d0)`.
pub fn linear_cost(d: f64, dl: f64, d0: f64) -> f64 {
    (1.0 - d * dl / d0).max(0.0)
}

impl RiskKernel {
    pub fn new(dl: f64, d0: f64, p: f64) -> Result<RiskKernel> {
        if !(p >= 1.0) || !(d0 > 0.0) || !(dl > 0.0) {
            return Err(Error::invalid(format!("risk kernel needs p >= 1, d0 > 0 (p = {p}, d0 = {d0})")));
        }
        let radius = (d0 / dl).ceil() as usize;
        let n = 2 * radius + 1;
        let mut values = vec![0.0; n * n];
        for dy in 0..n {
            for dx in 0..n {
                let d = ((dx as f64 - radius as f64).powi(2) + (dy as f64 - radius as f64).powi(2)).sqrt();
                values[dy * n + dx] = linear_cost(d, dl, d0).powf(p);
            }
        }
        Ok(RiskKernel {
            radius,
            dl,
            d0,
            p,
            values,
        })
    }

    pub fn side(&self) -> usize {
        2 * self.radius + 1
    }

    pub fn at(&self, dy: isize, dx: isize) -> f64 {
        let r = self.radius as isize;
        if dy.abs() > r || dx.abs() > r {
            return 0.0;
        }
        self.values[((dy + r) as usize) * self.side() + (dx + r) as usize]
    }
}

/// Risk of one channel and layer before clamping:
/// `(sum_j C(d_ij)^p * v_j)^(1/p)`.
pub fn risk_plane(values: &[f32], side: usize, kernel: &RiskKernel) -> Vec<f64> {
    let mut acc = vec![0.0; side * side];
    let r = kernel.radius as isize;
    let n = side as isize;
    for (j, &v) in values.iter().enumerate() {
        if v == 0.0 {
            continue;
        }
        let (jr, jc) = ((j / side) as isize, (j % side) as isize);
        for dy in -r..=r {
            let ir = jr + dy;
            if ir < 0 || ir >= n {
                continue;
            }
            let krow = &kernel.values[((dy + r) as usize) * kernel.side()..][..kernel.side()];
            let row = &mut acc[(ir as usize) * side..][..side];
            let c_lo = (jc - r).max(0);
            let c_hi = (jc + r).min(n - 1);
            for ic in c_lo..=c_hi {
                row[ic as usize] += krow[(ic - jc + r) as usize] * v as f64;
            }
        }
    }
    let inv = 1.0 / kernel.p;
    acc.iter_mut().for_each(|a| *a = a.powf(inv));
    acc
}

#[derive(Debug, Clone, PartialEq)]
pub struct Srm {
    pub n_t: usize,
    pub geometry: GridGeometry,
    pub dt: f64,
    pub t0: f64,
    pub p: f64,
    pub d0: f64,
    /// `[n_T][H][W]`, values in [0, 1].
    pub data: Vec<f64>,
}

impl Srm {
    pub fn side(&self) -> usize {
        self.geometry.side
    }

    pub fn get(&self, k: usize, row: usize, col: usize) -> f64 {
        let s = self.side();
        self.data[(k * s + row) * s + col]
    }

    pub fn layer(&self, k: usize) -> &[f64] {
        let n = self.side() * self.side();
        &self.data[k * n..(k + 1) * n]
    }

    /// Time of the last layer.
    pub fn horizon(&self) -> f64 {
        self.t0 + (self.n_t as f64 - 1.0) * self.dt
    }

    pub fn to_grid(&self) -> Sogm {
        Sogm {
            n_t: self.n_t,
            channels: 1,
            geometry: self.geometry,
            dt: self.dt,
            t0: self.t0,
            data: self.data.iter().map(|&v| v as f32).collect(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        let header = RiskHeader {
            p: self.p as f32,
            d0: self.d0 as f32,
        };
        Ok(std::fs::write(path, encode_grid(&self.to_grid(), Some(header)))?)
    }

    pub fn load(path: &Path) -> Result<Srm> {
        let (g, header) = decode_grid(&std::fs::read(path)?)?;
        let h = header.ok_or_else(|| Error::format(format!("{} is not a risk map", path.display())))?;
        if g.channels != 1 {
            return Err(Error::format("risk map must have one channel"));
        }
        Ok(Srm {
            n_t: g.n_t,
            geometry: g.geometry,
            dt: g.dt,
            t0: g.t0,
            p: h.p as f64,
            d0: h.d0 as f64,
            data: g.data.iter().map(|&v| v as f64).collect(),
        })
    }
}

/// Per-channel risk maps, clamped to [0, 1], merged by pixel-wise maximum.
pub fn sogm_to_srm(sogm: &Sogm, p: f64, d0: f64) -> Result<Srm> {
    let expected = sogm.n_t * sogm.channels * sogm.plane_len();
    if sogm.data.len() != expected || sogm.n_t == 0 || sogm.channels == 0 {
        return Err(Error::ShapeMismatch {
            expected: vec![sogm.n_t, sogm.channels, sogm.side(), sogm.side()],
            got: vec![sogm.data.len()],
        });
    }
    let kernel = RiskKernel::new(sogm.geometry.dl, d0, p)?;
    let plane = sogm.plane_len();
    let mut data = vec![0.0f64; sogm.n_t * plane];
    for k in 0..sogm.n_t {
        let out = &mut data[k * plane..(k + 1) * plane];
        for c in 0..sogm.channels {
            let r = risk_plane(sogm.plane(k, c), sogm.side(), &kernel);
            for (o, v) in out.iter_mut().zip(r) {
                *o = (*o).max(v.clamp(0.0, 1.0));
            }
        }
    }
    Ok(Srm {
        n_t: sogm.n_t,
        geometry: sogm.geometry,
        dt: sogm.dt,
        t0: sogm.t0,
        p,
        d0,
        data,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RiskSample {
    pub value: f64,
    /// Spatial gradient (per metre).
    pub grad: Vec2,
    /// The query time lies beyond the last layer; value and gradient are 0.
    pub past_horizon: bool,
}

/// Trilinear interpolation; `None` outside the span of cell centers.
pub fn try_interpolate(srm: &Srm, x: f64, y: f64, t: f64) -> Option<RiskSample> {
    let g = &srm.geometry;
    let n = g.side;
    let u = (x - g.origin.x) / g.dl;
    let v = (y - g.origin.y) / g.dl;
    let last = (n - 1) as f64;
    if !(u >= 0.0 && v >= 0.0 && u <= last && v <= last) {
        return None;
    }
    let tau = ((t - srm.t0) / srm.dt).max(0.0);
    if tau > (srm.n_t - 1) as f64 + 1e-9 {
        return Some(RiskSample {
            value: 0.0,
            grad: Vec2::ZERO,
            past_horizon: true,
        });
    }
    let split = |a: f64, cells: usize| {
        if cells < 2 {
            return (0, 0, 0.0);
        }
        let i = (a.floor() as usize).min(cells - 2);
        (i, i + 1, a - i as f64)
    };
    let (c0, c1, fu) = split(u, n);
    let (r0, r1, fv) = split(v, n);
    let (k0, k1, ft) = split(tau.min((srm.n_t - 1) as f64), srm.n_t);
    let bilinear = |k: usize| {
        let a = srm.get(k, r0, c0);
        let b = srm.get(k, r0, c1);
        let c = srm.get(k, r1, c0);
        let d = srm.get(k, r1, c1);
        let val = (1.0 - fv) * ((1.0 - fu) * a + fu * b) + fv * ((1.0 - fu) * c + fu * d);
        let du = (1.0 - fv) * (b - a) + fv * (d - c);
        let dv = (1.0 - fu) * (c - a) + fu * (d - b);
        (val, du, dv)
    };
    let (v0, du0, dv0) = bilinear(k0);
    let (v1, du1, dv1) = bilinear(k1);
    let mix = |a: f64, b: f64| (1.0 - ft) * a + ft * b;
    Some(RiskSample {
        value: mix(v0, v1),
        grad: Vec2::new(mix(du0, du1), mix(dv0, dv1)) / g.dl,
        past_horizon: false,
    })
}

/// As [`try_interpolate`], failing with `OutOfGrid` (index 0) outside.
pub fn interpolate_risk(srm: &Srm, x: f64, y: f64, t: f64) -> Result<RiskSample> {
    try_interpolate(srm, x, y, t).ok_or(Error::OutOfGrid { index: 0, x, y })
}

/// World positions of the dynamic-channel peaks of layer `k`.
///
/// A peak is an 8-connected plateau of equal values, at least `theta`,
/// whose neighbours are all strictly lower; it is reported at its lowest
/// (row, col) cell.
pub fn extract_obstacle_points(sogm: &Sogm, k: usize, theta: f64) -> Result<Vec<Vec2>> {
    if k >= sogm.n_t || sogm.channels <= DYNAMIC {
        return Err(Error::invalid(format!("no dynamic layer {k}")));
    }
    let n = sogm.side();
    let vals = sogm.plane(k, DYNAMIC);
    let mut visited = vec![false; n * n];
    let mut out = Vec::new();
    let mut stack = Vec::new();
    let mut region = Vec::new();
    for start in 0..n * n {
        let v = vals[start];
        if visited[start] || (v as f64) < theta {
            continue;
        }
        region.clear();
        stack.push(start);
        visited[start] = true;
        let mut strict = true;
        while let Some(i) = stack.pop() {
            region.push(i);
            let (r, c) = ((i / n) as isize, (i % n) as isize);
            for dr in -1..=1 {
                for dc in -1..=1 {
                    let (nr, nc) = (r + dr, c + dc);
                    if (dr, dc) == (0, 0) || nr < 0 || nc < 0 || nr >= n as isize || nc >= n as isize {
                        continue;
                    }
                    let j = nr as usize * n + nc as usize;
                    if vals[j] > v {
                        strict = false;
                    } else if vals[j] == v && !visited[j] {
                        visited[j] = true;
                        stack.push(j);
                    }
                }
            }
        }
        if strict {
            let i = *region.iter().min().expect("region holds its seed");
            out.push(sogm.geometry.cell_center(i / n, i % n));
        }
    }
    Ok(out)
}
