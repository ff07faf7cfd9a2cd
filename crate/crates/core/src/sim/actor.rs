use rand::Rng;

use super::{FlowSet, WorldMap};
use crate::error::{Error, Result};
use crate::geom::{sweep_disc_segment, wrap_angle, Segment, Vec2};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Behavior {
    /// Straight lines with specular bounces.
    Bouncer,
    /// Constant speed, random heading changes, repelled by the robot.
    Wanderer,
    /// Follows a precomputed flow field to a goal drawn from a fixed set.
    FlowFollower,
}

impl Behavior {
    pub fn name(self) -> &'static str {
        match self {
            Behavior::Bouncer => "bouncer",
            Behavior::Wanderer => "wanderer",
            Behavior::FlowFollower => "flow_follower",
        }
    }

    pub fn parse(s: &str) -> Option<Behavior> {
        match s {
            "bouncer" | "bouncers" => Some(Behavior::Bouncer),
            "wanderer" | "wanderers" => Some(Behavior::Wanderer),
            "flow_follower" | "flow_followers" | "follower" => Some(Behavior::FlowFollower),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Actor {
    pub position: Vec2,
    pub velocity: Vec2,
    pub behavior: Behavior,
    pub speed: f64,
    /// Index into the flow set goals, for flow followers.
    pub goal: Option<usize>,
    pub radius: f64,
}

impl Actor {
    pub fn new(position: Vec2, heading: f64, speed: f64, behavior: Behavior, radius: f64) -> Self {
        Actor {
            position,
            velocity: Vec2::from_angle(heading) * speed,
            behavior,
            speed,
            goal: None,
            radius,
        }
    }

    /// Reject actors overlapping a wall, a movable or the bounds.
    pub fn check_spawn(&self, world: &WorldMap, index: usize) -> Result<()> {
        if self.radius <= 0.0 || !(world.clearance(self.position) >= self.radius) {
            return Err(Error::ActorInObstacle { index });
        }
        if world.movables.iter().any(|m| m.contains(self.position)) {
            return Err(Error::ActorInObstacle { index });
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct ActorParams {
    /// Wanderer heading noise amplitude per step (rad).
    pub heading_noise: f64,
    /// Wanderers turn away from the robot inside this radius (m).
    pub repulsion_radius: f64,
    /// Maximum repulsion turn per step (rad).
    pub repulsion_turn: f64,
    /// Flow followers sidestep the robot inside this radius (m).
    pub avoid_radius: f64,
    /// Fraction of the heading error removed per step for flow followers.
    pub steer_gain: f64,
    pub arrival_radius: f64,
    pub robot_radius: f64,
}

impl Default for ActorParams {
    fn default() -> Self {
        ActorParams {
            heading_noise: 0.3,
            repulsion_radius: 1.5,
            repulsion_turn: 0.4,
            avoid_radius: 0.8,
            steer_gain: 0.5,
            arrival_radius: 0.5,
            robot_radius: 0.35,
        }
    }
}

/// Advance one actor by `dt`. `others` must not contain the actor itself.
#[allow(clippy::too_many_arguments)]
pub fn step_actor<R: Rng + ?Sized>(
    actor: &Actor,
    world: &WorldMap,
    segments: &[Segment],
    others: &[Actor],
    robot: Vec2,
    flows: Option<&FlowSet>,
    dt: f64,
    params: &ActorParams,
    rng: &mut R,
) -> Result<Actor> {
    if dt <= 0.0 {
        return Err(Error::invalid("dt_sim must be positive"));
    }
    let mut a = actor.clone();
    let away = a.position - robot;
    let robot_dist = away.norm();
    match a.behavior {
        Behavior::Bouncer => {}
        Behavior::Wanderer => {
            if params.heading_noise > 0.0 {
                let turn = rng.random_range(-params.heading_noise..=params.heading_noise);
                a.velocity = a.velocity.rotate(turn);
            }
            if robot_dist < params.repulsion_radius && robot_dist > 0.0 {
                let heading = a.velocity.angle();
                let err = wrap_angle(away.angle() - heading);
                let turn = err.clamp(-params.repulsion_turn, params.repulsion_turn);
                a.velocity = a.velocity.rotate(turn);
            }
        }
        Behavior::FlowFollower => {
            let flows = flows.ok_or_else(|| Error::invalid("flow follower without flow fields"))?;
            if flows.goals.is_empty() {
                return Err(Error::invalid("flow follower with an empty goal set"));
            }
            let arrived = a
                .goal
                .is_none_or(|g| a.position.dist(flows.goals[g]) < params.arrival_radius);
            if arrived {
                a.goal = Some(pick_goal(a.goal, flows.goals.len(), rng));
            }
            let g = a.goal.unwrap_or(0);
            let mut desired = flows.fields[g].vector_at(a.position);
            if desired == Vec2::ZERO {
                desired = (flows.goals[g] - a.position).normalized();
            }
            if robot_dist < params.avoid_radius && robot_dist > 0.0 {
                desired = (desired + away / robot_dist * 1.5).normalized();
            }
            if desired != Vec2::ZERO {
                let heading = a.velocity.angle();
                let err = wrap_angle(desired.angle() - heading);
                a.velocity = Vec2::from_angle(heading + params.steer_gain * err) * a.speed;
            }
        }
    }
    a.velocity = rescale(a.velocity, a.speed);
    advance(&mut a, world, segments, dt);
    bounce_discs(&mut a, others, robot, params.robot_radius);
    Ok(a)
}

fn pick_goal<R: Rng + ?Sized>(current: Option<usize>, n: usize, rng: &mut R) -> usize {
    match current {
        Some(c) if n > 1 => {
            let k = rng.random_range(0..n - 1);
            if k >= c {
                k + 1
            } else {
                k
            }
        }
        _ => rng.random_range(0..n),
    }
}

fn rescale(v: Vec2, speed: f64) -> Vec2 {
    let n = v.norm();
    if n > 0.0 {
        v * (speed / n)
    } else {
        v
    }
}

/// Straight-line motion split at every segment contact.
fn advance(a: &mut Actor, world: &WorldMap, segments: &[Segment], dt: f64) {
    let mut remaining = dt;
    for _ in 0..16 {
        if remaining <= 0.0 {
            break;
        }
        let mut hit: Option<(f64, Vec2)> = None;
        for s in segments {
            if let Some((t, n)) = sweep_disc_segment(a.position, a.velocity, a.radius, s, remaining) {
                if hit.is_none_or(|(bt, _)| t < bt) {
                    hit = Some((t, n));
                }
            }
        }
        match hit {
            Some((t, n)) => {
                a.position += a.velocity * t;
                a.velocity = rescale(a.velocity.reflect(n), a.speed);
                remaining -= t;
            }
            None => {
                a.position += a.velocity * remaining;
                remaining = 0.0;
            }
        }
    }
    // numerical safety for the containment invariant
    let b = world.bounds;
    a.position.x = a.position.x.clamp(b.min.x, b.max.x);
    a.position.y = a.position.y.clamp(b.min.y, b.max.y);
}

fn bounce_discs(a: &mut Actor, others: &[Actor], robot: Vec2, robot_radius: f64) {
    let mut discs: Vec<(Vec2, f64)> = others.iter().map(|o| (o.position, o.radius)).collect();
    discs.push((robot, robot_radius));
    for (c, r) in discs {
        let d = a.position - c;
        let dist = d.norm();
        if dist > 0.0 && dist < a.radius + r {
            let n = d / dist;
            if a.velocity.dot(n) < 0.0 {
                a.velocity = rescale(a.velocity.reflect(n), a.speed);
            }
        }
    }
}
