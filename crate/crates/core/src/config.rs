//! `key=value` configuration with section prefixes.

use std::path::Path;
use std::str::FromStr;

use crate::annotate::AnnotateParams;
use crate::error::{Error, Result};
use crate::io::parse_key_values;
use crate::net::{MaskMode, NetConfig, TrainParams};
use crate::planner::PlannerWeights;
use crate::sim::{Behavior, SessionConfig};
use crate::sogm::SogmParams;

#[derive(Debug, Clone, PartialEq)]
pub struct RiskParams {
    pub p: f64,
    /// Influence distance (m).
    pub d0: f64,
    /// Minimum occupancy of a forecast obstacle peak.
    pub theta_occ: f64,
}

impl Default for RiskParams {
    fn default() -> Self {
        RiskParams {
            p: 3.0,
            d0: 2.0,
            theta_occ: 0.5,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Config {
    pub sim: SessionConfig,
    /// Sessions written by one `record` call.
    pub sessions: usize,
    pub annotate: AnnotateParams,
    pub sogm: SogmParams,
    /// Frames between consecutive samples.
    pub stride: usize,
    pub net: NetConfig,
    pub train: TrainParams,
    pub risk: RiskParams,
    pub plan: PlannerWeights,
    /// Goal offset from the robot (m).
    pub goal_offset: (f64, f64),
    /// Sample whose prediction `plan` uses.
    pub plan_sample: usize,
    /// Write the pooled precision-recall curve.
    pub eval_pr: bool,
}

impl Default for Config {
    fn default() -> Self {
        let sogm = SogmParams::default();
        let net = NetConfig {
            n_t: sogm.n_t(),
            in_channels: sogm.n_f + 3,
            ..NetConfig::default()
        };
        Config {
            sim: SessionConfig::default(),
            sessions: 3,
            annotate: AnnotateParams::default(),
            sogm,
            stride: 1,
            net,
            train: TrainParams::default(),
            risk: RiskParams::default(),
            plan: PlannerWeights::default(),
            goal_offset: (3.0, 0.0),
            plan_sample: 0,
            eval_pr: true,
        }
    }
}

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::config(format!("{key}: cannot parse `{v}`")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::config(format!("{key}: expected true or false, got `{v}`"))),
    }
}

impl Config {
    /// 48 x 48 grids, 11 layers and a narrower network.
    pub fn small() -> Config {
        let sogm = SogmParams::small();
        let net = NetConfig {
            n_t: sogm.n_t(),
            in_channels: sogm.n_f + 3,
            ..NetConfig::small()
        };
        Config {
            sogm,
            net,
            train: TrainParams {
                epochs: 30,
                lr_final: 1e-3,
                ..TrainParams::default()
            },
            stride: 2,
            goal_offset: (2.0, 0.0),
            ..Config::default()
        }
    }

    pub fn profile(small: bool) -> Config {
        if small {
            Config::small()
        } else {
            Config::default()
        }
    }

    /// Apply overrides from `key=value` text.
    pub fn apply(&mut self, text: &str) -> Result<()> {
        for (k, v) in parse_key_values(text)? {
            self.set(&k, &v)?;
        }
        self.sogm.validate()?;
        self.sync();
        self.validate()
    }

    pub fn load(path: &Path, small: bool) -> Result<Config> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read {}: {e}", path.display())))?;
        let mut c = Config::profile(small);
        c.apply(&text)?;
        Ok(c)
    }

    /// Keep derived network sizes in line with the grid parameters.
    fn sync(&mut self) {
        self.net.n_t = self.sogm.n_t();
        self.net.in_channels = self.sogm.n_f + 3;
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let k = key;
        match key {
            "sim.id" => self.sim.id = v.to_string(),
            "sim.behavior" => {
                self.sim.behavior = Behavior::parse(v).ok_or_else(|| Error::config(format!("{k}: unknown behavior `{v}`")))?
            }
            "sim.duration" => self.sim.duration = parse(k, v)?,
            "sim.f_lidar" => self.sim.f_lidar = parse(k, v)?,
            "sim.substeps" => self.sim.substeps = parse(k, v)?,
            "sim.n_actors" => self.sim.n_actors = parse(k, v)?,
            "sim.actor_speed" => self.sim.actor_speed = parse(k, v)?,
            "sim.actor_radius" => self.sim.actor_radius = parse(k, v)?,
            "sim.heading_noise" => self.sim.actor.heading_noise = parse(k, v)?,
            "sim.repulsion_radius" => self.sim.actor.repulsion_radius = parse(k, v)?,
            "sim.n_rays" => self.sim.lidar.n_rays = parse(k, v)?,
            "sim.r_max" => self.sim.lidar.r_max = parse(k, v)?,
            "sim.sigma_r" => self.sim.lidar.sigma_r = parse(k, v)?,
            "sim.robot_speed" => self.sim.robot_speed = parse(k, v)?,
            "sim.tour_len" => self.sim.tour_len = parse(k, v)?,
            "sim.box_probability" => self.sim.box_probability = parse(k, v)?,
            "sim.dl_flow" => self.sim.dl_flow = parse(k, v)?,
            "sim.sessions" => self.sessions = parse(k, v)?,
            "sim.dl_map" => self.annotate.dl_map = parse(k, v)?,
            "sim.theta_dyn" => self.annotate.theta_dyn = parse(k, v)?,
            "sim.miss_margin" => self.annotate.miss_margin = parse(k, v)?,
            "sogm.dl_2d" => self.sogm.dl_2d = parse(k, v)?,
            "sogm.dt" => self.sogm.dt = parse(k, v)?,
            "sogm.T" | "sogm.horizon" => self.sogm.horizon = parse(k, v)?,
            "sogm.r_in" => self.sogm.r_in = parse(k, v)?,
            "sogm.n_f" => self.sogm.n_f = parse(k, v)?,
            "sogm.dl_sub" => self.sogm.dl_sub = parse(k, v)?,
            "sogm.stride" => self.stride = parse(k, v)?,
            "net.n1" => self.net.n1 = parse(k, v)?,
            "net.n2" => self.net.n2 = parse(k, v)?,
            "net.n3" => self.net.n3 = parse(k, v)?,
            "net.base_channels" => self.net.base_channels = parse(k, v)?,
            "net.share_propagation_weights" => self.net.share_propagation_weights = parse_bool(k, v)?,
            "net.leaky_slope" => self.net.leaky_slope = parse(k, v)?,
            "net.residual_scale" => self.net.residual_scale = parse(k, v)?,
            "net.epochs" => self.train.epochs = parse(k, v)?,
            "net.batch_size" => self.train.batch_size = parse(k, v)?,
            "net.lr" => self.train.lr = parse(k, v)?,
            "net.lr_final" => self.train.lr_final = parse(k, v)?,
            "net.momentum" => self.train.momentum = parse(k, v)?,
            "net.clip_norm" => self.train.clip_norm = parse(k, v)?,
            "net.mask" => {
                self.train.mask = MaskMode::parse(v).ok_or_else(|| Error::config(format!("{k}: expected gt, active or none")))?
            }
            "net.neg_ratio" => self.train.neg_ratio = parse(k, v)?,
            "net.lambda2" => self.train.lambda2 = parse(k, v)?,
            "net.augment" => self.train.augment = parse_bool(k, v)?,
            "risk.p" => self.risk.p = parse(k, v)?,
            "risk.d0" => self.risk.d0 = parse(k, v)?,
            "risk.theta_occ" => self.risk.theta_occ = parse(k, v)?,
            "plan.w_risk" => self.plan.w_risk = parse(k, v)?,
            "plan.w_smooth" => self.plan.w_smooth = parse(k, v)?,
            "plan.w_vel" => self.plan.w_vel = parse(k, v)?,
            "plan.v_max" => self.plan.v_max = parse(k, v)?,
            "plan.v_nom" => self.plan.v_nom = parse(k, v)?,
            "plan.iters" => self.plan.iters = parse(k, v)?,
            "plan.step" => self.plan.step = parse(k, v)?,
            "plan.k_seeds" => self.plan.k_seeds = parse(k, v)?,
            "plan.goal_x" => self.goal_offset.0 = parse(k, v)?,
            "plan.goal_y" => self.goal_offset.1 = parse(k, v)?,
            "plan.sample" => self.plan_sample = parse(k, v)?,
            "eval.pr_curve" => self.eval_pr = parse_bool(k, v)?,
            _ => return Err(Error::config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.sim.validate()?;
        if self.sessions == 0 {
            return Err(Error::config("sim.sessions must be at least 1"));
        }
        if !(self.sim.lidar.sigma_r >= 0.0) || !(self.sim.actor.heading_noise >= 0.0) {
            return Err(Error::config("sim.sigma_r and sim.heading_noise must be nonnegative"));
        }
        if !(self.annotate.dl_map > 0.0) || !(0.0..=1.0).contains(&self.annotate.theta_dyn) {
            return Err(Error::config("sim.dl_map must be positive and sim.theta_dyn in [0, 1]"));
        }
        self.sogm.validate()?;
        if self.stride == 0 {
            return Err(Error::config("sogm.stride must be at least 1"));
        }
        self.net.validate()?;
        self.train.validate()?;
        if !(self.risk.p >= 1.0) || !(self.risk.d0 > 0.0) || !(self.risk.theta_occ > 0.0 && self.risk.theta_occ < 1.0) {
            return Err(Error::config("risk.p must be >= 1, risk.d0 positive and risk.theta_occ in (0, 1)"));
        }
        self.plan.validate()
    }
}
