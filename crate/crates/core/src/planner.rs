//! Elastic-band trajectory optimization over a risk map.
//!
//! Poses are holonomic points at a fixed time step; only interior poses
//! move. Several seeds (a straight line and detours around forecast
//! obstacles) are optimized and the cheapest result wins.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::geom::{Segment, Vec2};
use crate::risk::{try_interpolate, Srm};

#[derive(Debug, Clone, PartialEq)]
pub struct PlannerWeights {
    pub w_risk: f64,
    pub w_smooth: f64,
    pub w_vel: f64,
    /// Speed above which the velocity penalty applies (m/s).
    pub v_max: f64,
    /// Speed used to size seeds (m/s).
    pub v_nom: f64,
    pub iters: usize,
    /// Initial gradient step (m per unit gradient).
    pub step: f64,
    /// Obstacle points used for detour seeds.
    pub k_seeds: usize,
}

impl Default for PlannerWeights {
    fn default() -> Self {
        PlannerWeights {
            w_risk: 1.0,
            w_smooth: 0.5,
            w_vel: 1.0,
            v_max: 1.2,
            v_nom: 1.0,
            iters: 200,
            step: 0.05,
            k_seeds: 3,
        }
    }
}

impl PlannerWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("w_risk", self.w_risk), ("w_smooth", self.w_smooth), ("w_vel", self.w_vel)] {
            if !(v >= 0.0) {
                return Err(Error::config(format!("plan.{name} must be nonnegative")));
            }
        }
        for (name, v) in [("v_max", self.v_max), ("v_nom", self.v_nom), ("step", self.step)] {
            if !(v > 0.0) {
                return Err(Error::config(format!("plan.{name} must be positive")));
            }
        }
        Ok(())
    }
}

/// Poses `points[i]` at times `t0 + i * dt`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub points: Vec<Vec2>,
    pub t0: f64,
    pub dt: f64,
}

impl Trajectory {
    pub fn time(&self, i: usize) -> f64 {
        self.t0 + i as f64 * self.dt
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn max_risk(&self, srm: &Srm) -> Result<f64> {
        let mut m: f64 = 0.0;
        for (i, p) in self.points.iter().enumerate() {
            m = m.max(risk_at(srm, i, *p, self.time(i))?.0);
        }
        Ok(m)
    }
}

fn risk_at(srm: &Srm, index: usize, p: Vec2, t: f64) -> Result<(f64, Vec2)> {
    let q = try_interpolate(srm, p.x, p.y, t).ok_or(Error::OutOfGrid { index, x: p.x, y: p.y })?;
    Ok((q.value, q.grad))
}

fn grid_bounds(srm: &Srm) -> (Vec2, Vec2) {
    let g = srm.geometry;
    let span = (g.side - 1) as f64 * g.dl;
    (g.origin, g.origin + Vec2::new(span, span))
}

fn clamp_to(p: Vec2, (lo, hi): (Vec2, Vec2)) -> Vec2 {
    Vec2::new(p.x.clamp(lo.x, hi.x), p.y.clamp(lo.y, hi.y))
}

fn inside(p: Vec2, (lo, hi): (Vec2, Vec2)) -> bool {
    p.x >= lo.x && p.y >= lo.y && p.x <= hi.x && p.y <= hi.y
}

/// `n` points evenly spaced by arc length along a polyline.
fn resample(poly: &[Vec2], n: usize) -> Vec<Vec2> {
    let lengths: Vec<f64> = poly.windows(2).map(|w| w[0].dist(w[1])).collect();
    let total: f64 = lengths.iter().sum();
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        if i + 1 == n {
            out.push(*poly.last().expect("nonempty polyline"));
            continue;
        }
        let mut s = total * i as f64 / (n - 1) as f64;
        let mut seg = 0;
        while seg + 1 < lengths.len() && s > lengths[seg] {
            s -= lengths[seg];
            seg += 1;
        }
        let f = if lengths[seg] > 0.0 { (s / lengths[seg]).min(1.0) } else { 0.0 };
        out.push(poly[seg] + (poly[seg + 1] - poly[seg]) * f);
    }
    out
}

/// The straight seed and two detours around each of the `k_seeds` obstacle
/// points nearest the start-goal segment.
pub fn init_trajectories(start: Vec2, goal: Vec2, srm: &Srm, obstacles: &[Vec2], w: &PlannerWeights) -> Result<Vec<Trajectory>> {
    let bounds = grid_bounds(srm);
    if !inside(start, bounds) {
        return Err(Error::OutOfGrid {
            index: 0,
            x: start.x,
            y: start.y,
        });
    }
    let dt = srm.dt;
    let length = start.dist(goal);
    let n = ((length / (w.v_nom * dt)).ceil() as usize).max(2);
    if !inside(goal, bounds) {
        return Err(Error::OutOfGrid {
            index: n - 1,
            x: goal.x,
            y: goal.y,
        });
    }
    let make = |points: Vec<Vec2>| Trajectory { points, t0: srm.t0, dt };
    let mut seeds = vec![make(resample(&[start, goal], n))];
    let seg = Segment::new(start, goal);
    let mut near: Vec<(f64, Vec2)> = obstacles.iter().map(|&o| (seg.distance(o), o)).collect();
    near.sort_by(|a, b| {
        a.0.total_cmp(&b.0)
            .then(a.1.x.total_cmp(&b.1.x))
            .then(a.1.y.total_cmp(&b.1.y))
    });
    near.dedup_by(|a, b| a.1 == b.1);
    let normal = if length > 0.0 { (goal - start).perp() / length } else { Vec2::new(0.0, 1.0) };
    for &(_, o) in near.iter().take(w.k_seeds) {
        for side in [1.0, -1.0] {
            let via = clamp_to(o + normal * (side * srm.d0 / 2.0), bounds);
            let mut pts = resample(&[start, via, goal], n);
            pts[0] = start;
            pts[n - 1] = goal;
            seeds.push(make(pts));
        }
    }
    Ok(seeds)
}

/// Per-pose cost terms; they sum to the objective.
#[derive(Debug, Clone, PartialEq)]
pub struct CostBreakdown {
    pub risk: f64,
    pub smooth: f64,
    pub vel: f64,
    /// Risk at the pose, smoothness at the pose and the velocity penalty of
    /// the segment leaving it, weighted.
    pub per_pose: Vec<f64>,
}

impl CostBreakdown {
    pub fn total(&self) -> f64 {
        self.risk + self.smooth + self.vel
    }
}

pub fn cost_breakdown(traj: &Trajectory, srm: &Srm, w: &PlannerWeights) -> Result<CostBreakdown> {
    let n = traj.len();
    let mut per_pose = vec![0.0; n];
    let (mut risk, mut smooth, mut vel) = (0.0, 0.0, 0.0);
    for (i, &p) in traj.points.iter().enumerate() {
        let r = w.w_risk * risk_at(srm, i, p, traj.time(i))?.0;
        risk += r;
        per_pose[i] += r;
    }
    for i in 1..n.saturating_sub(1) {
        let s = traj.points[i + 1] - traj.points[i] * 2.0 + traj.points[i - 1];
        let c = w.w_smooth * s.dot(s);
        smooth += c;
        per_pose[i] += c;
    }
    for i in 0..n.saturating_sub(1) {
        let speed = traj.points[i].dist(traj.points[i + 1]) / traj.dt;
        let excess = (speed - w.v_max).max(0.0);
        let c = w.w_vel * excess * excess;
        vel += c;
        per_pose[i] += c;
    }
    Ok(CostBreakdown {
        risk,
        smooth,
        vel,
        per_pose,
    })
}

/// Objective value; poses past the map horizon add no risk.
pub fn cost(traj: &Trajectory, srm: &Srm, w: &PlannerWeights) -> Result<f64> {
    Ok(cost_breakdown(traj, srm, w)?.total())
}

/// Gradient with respect to every pose (endpoints included).
pub fn cost_gradient(traj: &Trajectory, srm: &Srm, w: &PlannerWeights) -> Result<Vec<Vec2>> {
    let n = traj.len();
    let p = &traj.points;
    let mut g = vec![Vec2::ZERO; n];
    for i in 0..n {
        g[i] += risk_at(srm, i, p[i], traj.time(i))?.1 * w.w_risk;
    }
    for i in 1..n.saturating_sub(1) {
        let s = (p[i + 1] - p[i] * 2.0 + p[i - 1]) * (2.0 * w.w_smooth);
        g[i - 1] += s;
        g[i] -= s * 2.0;
        g[i + 1] += s;
    }
    for i in 0..n.saturating_sub(1) {
        let e = p[i + 1] - p[i];
        let len = e.norm();
        let excess = len / traj.dt - w.v_max;
        if excess > 0.0 && len > 0.0 {
            let d = e / len * (2.0 * w.w_vel * excess / traj.dt);
            g[i + 1] += d;
            g[i] -= d;
        }
    }
    Ok(g)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Optimized {
    pub trajectory: Trajectory,
    /// Objective after every accepted step, starting with the seed's.
    pub trace: Vec<f64>,
}

/// Solve `A d = g` for interior poses, `A = tridiag(-1, 2, -1)`.
///
/// Spreads a local push over its neighbours so the band deforms smoothly;
/// the stiff smoothness term would otherwise cap the step size.
fn precondition(g: &[Vec2]) -> Vec<Vec2> {
    let m = g.len();
    let mut c = vec![0.0; m];
    let mut d = vec![Vec2::ZERO; m];
    for i in 0..m {
        let (sub, diag) = (if i > 0 { -1.0 } else { 0.0 }, 2.0);
        let denom = diag - sub * if i > 0 { c[i - 1] } else { 0.0 };
        c[i] = -1.0 / denom;
        let prev = if i > 0 { d[i - 1] } else { Vec2::ZERO };
        d[i] = (g[i] - prev * sub) / denom;
    }
    for i in (0..m.saturating_sub(1)).rev() {
        let next = d[i + 1];
        d[i] -= next * c[i];
    }
    d
}

/// Preconditioned gradient descent on interior poses with step halving
/// until the objective strictly decreases.
pub fn optimize(seed: &Trajectory, srm: &Srm, w: &PlannerWeights) -> Result<Optimized> {
    w.validate()?;
    let mut traj = seed.clone();
    let mut j = cost(&traj, srm, w)?;
    let mut trace = vec![j];
    let n = traj.len();
    if n < 3 {
        return Ok(Optimized { trajectory: traj, trace });
    }
    let bounds = grid_bounds(srm);
    let mut step = w.step;
    for _ in 0..w.iters {
        let grad = cost_gradient(&traj, srm, w)?;
        if grad[1..n - 1].iter().all(|v| *v == Vec2::ZERO) {
            break;
        }
        let dir = precondition(&grad[1..n - 1]);
        let mut accepted = None;
        for _ in 0..40 {
            let mut cand = traj.clone();
            for i in 1..n - 1 {
                cand.points[i] = clamp_to(traj.points[i] - dir[i - 1] * step, bounds);
            }
            let jc = cost(&cand, srm, w)?;
            if jc < j {
                accepted = Some((cand, jc));
                break;
            }
            step *= 0.5;
        }
        let Some((cand, jc)) = accepted else { break };
        let rel = (j - jc) / j.abs().max(f64::MIN_POSITIVE);
        traj = cand;
        j = jc;
        trace.push(j);
        step = (step * 2.0).min(w.step * 1e3);
        if rel < 1e-6 {
            break;
        }
    }
    Ok(Optimized { trajectory: traj, trace })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Plan {
    pub best: Optimized,
    pub seed_index: usize,
    pub cost: f64,
    /// Final cost of every seed, in seed order.
    pub seed_costs: Vec<f64>,
}

/// Optimize every seed and keep the cheapest (lowest index on ties).
pub fn plan(start: Vec2, goal: Vec2, srm: &Srm, obstacles: &[Vec2], w: &PlannerWeights) -> Result<Plan> {
    w.validate()?;
    let seeds = init_trajectories(start, goal, srm, obstacles, w)?;
    let mut best: Option<(usize, Optimized)> = None;
    let mut seed_costs = Vec::with_capacity(seeds.len());
    for (i, s) in seeds.iter().enumerate() {
        let o = optimize(s, srm, w)?;
        let c = *o.trace.last().expect("trace starts with the seed cost");
        seed_costs.push(c);
        if best.as_ref().is_none_or(|(_, b)| c < *b.trace.last().expect("nonempty")) {
            best = Some((i, o));
        }
    }
    let (seed_index, best) = best.expect("the straight seed always exists");
    Ok(Plan {
        cost: seed_costs[seed_index],
        best,
        seed_index,
        seed_costs,
    })
}

/// `t,x,y,cost_at_pose` rows.
pub fn trajectory_csv(traj: &Trajectory, srm: &Srm, w: &PlannerWeights) -> Result<String> {
    let b = cost_breakdown(traj, srm, w)?;
    let mut s = String::from("t,x,y,cost_at_pose\n");
    for (i, p) in traj.points.iter().enumerate() {
        let _ = writeln!(s, "{:.3},{:.6},{:.6},{:.8}", traj.time(i), p.x, p.y, b.per_pose[i]);
    }
    Ok(s)
}
