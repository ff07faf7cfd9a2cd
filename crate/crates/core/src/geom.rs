//! Planar geometry primitives shared by the simulator and the annotator.

use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub, SubAssign};

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Vec2 { x, y }
    }

    pub fn from_angle(theta: f64) -> Self {
        Vec2::new(theta.cos(), theta.sin())
    }

    pub fn dot(self, o: Vec2) -> f64 {
        self.x * o.x + self.y * o.y
    }

    pub fn cross(self, o: Vec2) -> f64 {
        self.x * o.y - self.y * o.x
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn norm_sq(self) -> f64 {
        self.dot(self)
    }

    pub fn dist(self, o: Vec2) -> f64 {
        (self - o).norm()
    }

    /// Unit vector, or zero for the zero vector.
    pub fn normalized(self) -> Vec2 {
        let n = self.norm();
        if n > 0.0 {
            self / n
        } else {
            Vec2::ZERO
        }
    }

    pub fn perp(self) -> Vec2 {
        Vec2::new(-self.y, self.x)
    }

    pub fn angle(self) -> f64 {
        self.y.atan2(self.x)
    }

    pub fn rotate(self, theta: f64) -> Vec2 {
        let (s, c) = theta.sin_cos();
        Vec2::new(c * self.x - s * self.y, s * self.x + c * self.y)
    }

    /// Mirror `self` about the line orthogonal to the unit normal `n`.
    pub fn reflect(self, n: Vec2) -> Vec2 {
        self - n * (2.0 * self.dot(n))
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    fn add(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x + o.x, self.y + o.y)
    }
}

impl AddAssign for Vec2 {
    fn add_assign(&mut self, o: Vec2) {
        self.x += o.x;
        self.y += o.y;
    }
}

impl SubAssign for Vec2 {
    fn sub_assign(&mut self, o: Vec2) {
        self.x -= o.x;
        self.y -= o.y;
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x - o.x, self.y - o.y)
    }
}

impl Mul<f64> for Vec2 {
    type Output = Vec2;
    fn mul(self, s: f64) -> Vec2 {
        Vec2::new(self.x * s, self.y * s)
    }
}

impl Div<f64> for Vec2 {
    type Output = Vec2;
    fn div(self, s: f64) -> Vec2 {
        Vec2::new(self.x / s, self.y / s)
    }
}

impl Neg for Vec2 {
    type Output = Vec2;
    fn neg(self) -> Vec2 {
        Vec2::new(-self.x, -self.y)
    }
}

/// Wrap an angle into (-pi, pi].
pub fn wrap_angle(a: f64) -> f64 {
    let mut a = a % std::f64::consts::TAU;
    if a > std::f64::consts::PI {
        a -= std::f64::consts::TAU;
    } else if a <= -std::f64::consts::PI {
        a += std::f64::consts::TAU;
    }
    a
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub a: Vec2,
    pub b: Vec2,
}

impl Segment {
    pub const fn new(a: Vec2, b: Vec2) -> Self {
        Segment { a, b }
    }

    pub fn length(&self) -> f64 {
        self.a.dist(self.b)
    }

    pub fn closest_point(&self, p: Vec2) -> Vec2 {
        let d = self.b - self.a;
        let len2 = d.norm_sq();
        if len2 == 0.0 {
            return self.a;
        }
        let t = ((p - self.a).dot(d) / len2).clamp(0.0, 1.0);
        self.a + d * t
    }

    pub fn distance(&self, p: Vec2) -> f64 {
        p.dist(self.closest_point(p))
    }
}

/// Distance along the ray `origin + s * dir` (unit `dir`) to a segment, if hit.
pub fn ray_segment(origin: Vec2, dir: Vec2, seg: &Segment) -> Option<f64> {
    let e = seg.b - seg.a;
    let denom = dir.cross(e);
    if denom.abs() < 1e-15 {
        return None;
    }
    let w = seg.a - origin;
    let s = w.cross(e) / denom;
    let u = w.cross(dir) / denom;
    if s >= 0.0 && (-1e-12..=1.0 + 1e-12).contains(&u) {
        Some(s)
    } else {
        None
    }
}

/// Distance along the ray to the first crossing of a circle boundary.
pub fn ray_circle(origin: Vec2, dir: Vec2, center: Vec2, radius: f64) -> Option<f64> {
    let m = origin - center;
    let b = m.dot(dir);
    let c = m.norm_sq() - radius * radius;
    // origin inside the disc, or disc behind the origin
    if c <= 0.0 || b > 0.0 {
        return None;
    }
    let disc = b * b - c;
    if disc < 0.0 {
        return None;
    }
    Some(-b - disc.sqrt())
}

/// Earliest time in `[0, t_max]` at which a point moving from `p` with
/// velocity `v` comes within `radius` of a segment, together with the
/// contact normal (pointing from the segment toward the point).
pub fn sweep_disc_segment(
    p: Vec2,
    v: Vec2,
    radius: f64,
    seg: &Segment,
    t_max: f64,
) -> Option<(f64, Vec2)> {
    let mut best: Option<(f64, Vec2)> = None;
    let mut consider = |t: f64, n: Vec2| {
        if t >= 0.0 && t <= t_max && best.is_none_or(|(bt, _)| t < bt) {
            best = Some((t, n));
        }
    };

    let e = seg.b - seg.a;
    let len = e.norm();
    if len > 0.0 {
        let u = e / len;
        let mut n = u.perp();
        let side = (p - seg.a).dot(n);
        if side < 0.0 {
            n = -n;
        }
        let dist = side.abs();
        let approach = v.dot(n);
        if approach < 0.0 {
            let t = ((dist - radius) / -approach).max(0.0);
            let hit = p + v * t;
            let along = (hit - seg.a).dot(u);
            if (0.0..=len).contains(&along) {
                consider(t, n);
            }
        }
    }
    for end in [seg.a, seg.b] {
        if let Some(t) = sweep_point_circle(p, v, end, radius) {
            let n = (p + v * t - end).normalized();
            consider(t, n);
        }
    }
    best
}

/// First time a point moving from `p` with velocity `v` enters the circle.
pub fn sweep_point_circle(p: Vec2, v: Vec2, center: Vec2, radius: f64) -> Option<f64> {
    let m = p - center;
    let a = v.norm_sq();
    if a == 0.0 {
        return None;
    }
    let b = m.dot(v);
    let c = m.norm_sq() - radius * radius;
    if b >= 0.0 {
        return None;
    }
    if c <= 0.0 {
        return Some(0.0);
    }
    let disc = b * b - a * c;
    if disc < 0.0 {
        return None;
    }
    Some((-b - disc.sqrt()) / a)
}

/// Convex polygon given counter-clockwise or clockwise.
#[derive(Debug, Clone, PartialEq)]
pub struct Polygon {
    pub vertices: Vec<Vec2>,
}

impl Polygon {
    pub fn new(vertices: Vec<Vec2>) -> Self {
        Polygon { vertices }
    }

    /// Axis-aligned box centered at `c` with half extents `hx`, `hy`,
    /// rotated by `theta`.
    pub fn rect(c: Vec2, hx: f64, hy: f64, theta: f64) -> Self {
        let corners = [(-hx, -hy), (hx, -hy), (hx, hy), (-hx, hy)];
        Polygon::new(
            corners
                .iter()
                .map(|&(x, y)| c + Vec2::new(x, y).rotate(theta))
                .collect(),
        )
    }

    pub fn edges(&self) -> impl Iterator<Item = Segment> + '_ {
        let n = self.vertices.len();
        (0..n).map(move |i| Segment::new(self.vertices[i], self.vertices[(i + 1) % n]))
    }

    pub fn contains(&self, p: Vec2) -> bool {
        let mut sign = 0.0;
        for e in self.edges() {
            let c = (e.b - e.a).cross(p - e.a);
            if c == 0.0 {
                continue;
            }
            if sign == 0.0 {
                sign = c.signum();
            } else if c.signum() != sign {
                return false;
            }
        }
        true
    }

    pub fn distance(&self, p: Vec2) -> f64 {
        if self.contains(p) {
            return 0.0;
        }
        self.edges()
            .map(|e| e.distance(p))
            .fold(f64::INFINITY, f64::min)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rect {
    pub min: Vec2,
    pub max: Vec2,
}

impl Rect {
    pub fn new(min: Vec2, max: Vec2) -> Self {
        Rect { min, max }
    }

    pub fn contains(&self, p: Vec2) -> bool {
        p.x >= self.min.x && p.x <= self.max.x && p.y >= self.min.y && p.y <= self.max.y
    }

    pub fn edges(&self) -> [Segment; 4] {
        let (a, c) = (self.min, self.max);
        let b = Vec2::new(c.x, a.y);
        let d = Vec2::new(a.x, c.y);
        [
            Segment::new(a, b),
            Segment::new(b, c),
            Segment::new(c, d),
            Segment::new(d, a),
        ]
    }
}
