use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::Rng;

use super::{
    lidar_scan, step_actor, Actor, ActorParams, Behavior, FlowSet, Frame, Label, LidarParams,
    Pose2, Scenario, WorldMap,
};
use crate::error::{Error, Result};
use crate::geom::{wrap_angle, Vec2};
use crate::io::{parse_key_values, ByteReader, ByteWriter};

#[derive(Debug, Clone)]
pub struct SessionConfig {
    pub id: String,
    pub behavior: Behavior,
    /// Session length (s).
    pub duration: f64,
    /// Frame rate (Hz).
    pub f_lidar: f64,
    /// Simulation sub-steps per frame.
    pub substeps: usize,
    pub n_actors: usize,
    pub actor_speed: f64,
    pub actor_radius: f64,
    pub actor: ActorParams,
    pub lidar: LidarParams,
    pub robot_speed: f64,
    pub tour_len: usize,
    pub box_probability: f64,
    pub dl_flow: f64,
}

impl Default for SessionConfig {
    fn default() -> Self {
        SessionConfig {
            id: "s000".into(),
            behavior: Behavior::Bouncer,
            duration: 10.0,
            f_lidar: 10.0,
            substeps: 2,
            n_actors: 10,
            actor_speed: 1.0,
            actor_radius: 0.25,
            actor: ActorParams::default(),
            lidar: LidarParams::default(),
            robot_speed: 0.6,
            tour_len: 4,
            box_probability: 0.5,
            dl_flow: 0.1,
        }
    }
}

impl SessionConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("duration", self.duration),
            ("f_lidar", self.f_lidar),
            ("actor_speed", self.actor_speed),
            ("actor_radius", self.actor_radius),
            ("robot_speed", self.robot_speed),
            ("dl_flow", self.dl_flow),
            ("r_max", self.lidar.r_max),
        ];
        for (name, v) in positive {
            if !(v > 0.0) {
                return Err(Error::config(format!("sim.{name} must be positive")));
            }
        }
        if self.substeps == 0 || self.lidar.n_rays == 0 {
            return Err(Error::config("sim.substeps and sim.n_rays must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.box_probability) {
            return Err(Error::config("sim.box_probability must be in [0, 1]"));
        }
        Ok(())
    }

    pub fn frame_count(&self) -> usize {
        (self.duration * self.f_lidar).round() as usize
    }
}

/// A recorded session. `world` and `actor_tracks` are only available for
/// freshly simulated sessions, not for sessions loaded from disk.
#[derive(Debug, Clone)]
pub struct SessionData {
    pub id: String,
    pub map_id: String,
    pub meta: Vec<(String, String)>,
    pub frames: Vec<Frame>,
    pub world: Option<WorldMap>,
    /// Actor positions at every frame time.
    pub actor_tracks: Vec<Vec<Vec2>>,
}

impl SessionData {
    pub fn poses(&self) -> impl Iterator<Item = (f64, Pose2)> + '_ {
        self.frames.iter().map(|f| (f.timestamp, f.sensor_pose))
    }

    pub fn meta_value(&self, key: &str) -> Option<&str> {
        self.meta
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }
}

struct Robot {
    pose: Pose2,
    tour: Vec<Vec2>,
    target: usize,
    flows: FlowSet,
}

impl Robot {
    fn step(&mut self, speed: f64, dt: f64) {
        let p = self.pose.position();
        if p.dist(self.tour[self.target]) < 0.3 {
            self.target = (self.target + 1) % self.tour.len();
        }
        let goal = self.tour[self.target];
        let mut dir = self.flows.fields[self.target].vector_at(p);
        if dir == Vec2::ZERO {
            dir = (goal - p).normalized();
        }
        if dir != Vec2::ZERO {
            let err = wrap_angle(dir.angle() - self.pose.theta);
            self.pose.theta = wrap_angle(self.pose.theta + 0.5 * err);
        }
        let step = Vec2::from_angle(self.pose.theta) * (speed * dt);
        self.pose.x += step.x;
        self.pose.y += step.y;
    }
}

/// Simulate one session of `config.duration` seconds in a map drawn from
/// `scenario`.
pub fn record_session<R: Rng + ?Sized>(
    config: &SessionConfig,
    scenario: &Scenario,
    rng: &mut R,
) -> Result<SessionData> {
    config.validate()?;
    let world = scenario.sample_map(rng, config.box_probability)?;
    let tour = scenario.sample_tour(rng, config.tour_len);
    let robot_clearance = config.actor.robot_radius + 0.05;

    let mut fields = Vec::with_capacity(tour.len());
    for (i, &w) in tour.iter().enumerate() {
        let unreachable = || Error::UnreachableWaypoint { index: i, x: w.x, y: w.y };
        let f = super::compute_flow_field(&world, &[w], config.dl_flow, robot_clearance)
            .map_err(|_| unreachable())?;
        let prev = tour[(i + tour.len() - 1) % tour.len()];
        if !f.distance_at(prev).is_finite() {
            return Err(unreachable());
        }
        fields.push(f);
    }
    let start = tour[0];
    let heading = (tour[1] - start).angle();
    let mut robot = Robot {
        pose: Pose2::new(start.x, start.y, heading),
        tour: tour.clone(),
        target: 1,
        flows: FlowSet {
            goals: tour.clone(),
            fields,
        },
    };

    let segments = world.collision_segments();
    let goal_flows = if config.behavior == Behavior::FlowFollower {
        Some(FlowSet::new(
            &world,
            &scenario.goals,
            config.dl_flow,
            config.actor_radius + 0.1,
        )?)
    } else {
        None
    };
    let mut actors = spawn_actors(config, &world, start, goal_flows.as_ref(), rng)?;

    let n_frames = config.frame_count();
    let dt_sim = 1.0 / (config.f_lidar * config.substeps as f64);
    let mut frames = Vec::with_capacity(n_frames);
    let mut tracks = Vec::with_capacity(n_frames);
    for f in 0..n_frames {
        let t = f as f64 / config.f_lidar;
        frames.push(lidar_scan(&world, &actors, robot.pose, t, &config.lidar, rng));
        tracks.push(actors.iter().map(|a| a.position).collect());
        for _ in 0..config.substeps {
            let robot_pos = robot.pose.position();
            let snapshot = actors.clone();
            for i in 0..actors.len() {
                let others: Vec<Actor> = snapshot
                    .iter()
                    .enumerate()
                    .filter(|&(j, _)| j != i)
                    .map(|(_, a)| a.clone())
                    .collect();
                actors[i] = step_actor(
                    &snapshot[i],
                    &world,
                    &segments,
                    &others,
                    robot_pos,
                    goal_flows.as_ref(),
                    dt_sim,
                    &config.actor,
                    rng,
                )?;
            }
            robot.step(config.robot_speed, dt_sim);
        }
    }

    let meta = vec![
        ("id".to_string(), config.id.clone()),
        ("map_id".to_string(), scenario.id.clone()),
        ("behavior".to_string(), config.behavior.name().to_string()),
        ("frames".to_string(), n_frames.to_string()),
        ("f_lidar".to_string(), config.f_lidar.to_string()),
        ("n_actors".to_string(), config.n_actors.to_string()),
        ("n_movables".to_string(), world.movables.len().to_string()),
    ];
    Ok(SessionData {
        id: config.id.clone(),
        map_id: scenario.id.clone(),
        meta,
        frames,
        world: Some(world),
        actor_tracks: tracks,
    })
}

fn spawn_actors<R: Rng + ?Sized>(
    config: &SessionConfig,
    world: &WorldMap,
    robot: Vec2,
    flows: Option<&FlowSet>,
    rng: &mut R,
) -> Result<Vec<Actor>> {
    let mut actors: Vec<Actor> = Vec::with_capacity(config.n_actors);
    let b = world.bounds;
    let mut tries = 0;
    while actors.len() < config.n_actors {
        tries += 1;
        if tries > 100_000 {
            return Err(Error::invalid("could not place all actors"));
        }
        let p = Vec2::new(
            rng.random_range(b.min.x..b.max.x),
            rng.random_range(b.min.y..b.max.y),
        );
        let heading = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
        let mut a = Actor::new(p, heading, config.actor_speed, config.behavior, config.actor_radius);
        if a.check_spawn(world, actors.len()).is_err()
            || world.clearance(p) < config.actor_radius + 0.1
            || p.dist(robot) < 1.5
            || actors
                .iter()
                .any(|o| o.position.dist(p) < o.radius + a.radius + 0.1)
        {
            continue;
        }
        if let Some(flows) = flows {
            // followers must start somewhere their goals are reachable from
            if flows.fields.iter().any(|f| !f.distance_at(p).is_finite()) {
                continue;
            }
            a.goal = Some(rng.random_range(0..flows.goals.len()));
        }
        actors.push(a);
    }
    for (i, a) in actors.iter().enumerate() {
        a.check_spawn(world, i)?;
    }
    Ok(actors)
}

const FRAME_MAGIC: &[u8; 4] = b"FRM1";

pub fn encode_frame(frame: &Frame) -> Vec<u8> {
    let mut w = ByteWriter::new();
    w.bytes(FRAME_MAGIC);
    w.u32(frame.points.len() as u32);
    for (p, l) in frame.points.iter().zip(&frame.labels) {
        w.f32(p.x as f32);
        w.f32(p.y as f32);
        w.u8(*l as u8);
    }
    w.into_inner()
}

pub fn decode_frame(data: &[u8], timestamp: f64, pose: Pose2) -> Result<Frame> {
    let mut r = ByteReader::new(data);
    r.magic(FRAME_MAGIC)?;
    let n = r.u32()? as usize;
    let mut points = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let x = r.f32()? as f64;
        let y = r.f32()? as f64;
        let l = r.u8()?;
        points.push(Vec2::new(x, y));
        labels.push(Label::from_u8(l).ok_or_else(|| Error::format(format!("bad label {l}")))?);
    }
    r.finish()?;
    Ok(Frame {
        timestamp,
        sensor_pose: pose,
        points,
        labels,
        ranges: Vec::new(),
        inferred: None,
    })
}

/// Write `meta.cfg`, `poses.csv` and `frames/<index>.frm` under `dir`.
pub fn save_session(dir: &Path, data: &SessionData) -> Result<()> {
    fs::create_dir_all(dir.join("frames"))?;
    let mut meta = String::from("# session metadata\n");
    for (k, v) in &data.meta {
        writeln!(meta, "{k}={v}").unwrap();
    }
    fs::write(dir.join("meta.cfg"), meta)?;
    let mut poses = String::from("t,x,y,theta\n");
    for (t, p) in data.poses() {
        writeln!(poses, "{t},{},{},{}", p.x, p.y, p.theta).unwrap();
    }
    fs::write(dir.join("poses.csv"), poses)?;
    for (i, f) in data.frames.iter().enumerate() {
        fs::write(dir.join("frames").join(format!("{i}.frm")), encode_frame(f))?;
    }
    Ok(())
}

pub fn load_session(dir: &Path) -> Result<SessionData> {
    let meta = parse_key_values(&fs::read_to_string(dir.join("meta.cfg"))?)?;
    let get = |k: &str| {
        meta.iter()
            .find(|(key, _)| key == k)
            .map(|(_, v)| v.clone())
            .ok_or_else(|| Error::format(format!("meta.cfg lacks `{k}`")))
    };
    let id = get("id")?;
    let map_id = get("map_id")?;
    let n_frames: usize = get("frames")?
        .parse()
        .map_err(|_| Error::format("meta.cfg: bad frame count"))?;

    let poses_text = fs::read_to_string(dir.join("poses.csv"))?;
    let mut poses = Vec::new();
    for (n, line) in poses_text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let vals: Vec<f64> = line
            .split(',')
            .map(|v| v.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::format(format!("poses.csv line {}: bad number", n + 1)))?;
        if vals.len() != 4 {
            return Err(Error::format(format!("poses.csv line {}: expected 4 columns", n + 1)));
        }
        poses.push((vals[0], Pose2::new(vals[1], vals[2], vals[3])));
    }
    if poses.len() != n_frames {
        return Err(Error::format(format!(
            "frame/pose count mismatch: {} frames, {} poses",
            n_frames,
            poses.len()
        )));
    }
    let mut frames = Vec::with_capacity(n_frames);
    for (i, &(t, pose)) in poses.iter().enumerate() {
        let bytes = fs::read(dir.join("frames").join(format!("{i}.frm")))?;
        frames.push(decode_frame(&bytes, t, pose)?);
    }
    Ok(SessionData {
        id,
        map_id,
        meta,
        frames,
        world: None,
        actor_tracks: Vec::new(),
    })
}
