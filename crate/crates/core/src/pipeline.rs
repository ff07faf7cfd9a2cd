//! File-level pipeline steps shared by the command-line driver and the
//! acceptance tests. Every step is a function of (config, seed, inputs).

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::annotate::{annotate_sessions, label_frame_points, session_bounds, LabelGrid};
use crate::config::Config;
use crate::error::{Error, Result};
use crate::eval::{pr_csv, EvalAccumulator, SogmReport};
use crate::geom::Vec2;
use crate::net::{train_monitored, Network, TrainReport};
use crate::planner::{plan, trajectory_csv, Plan};
use crate::render::{draw_points, encode_ppm, merged_pixels};
use crate::risk::{extract_obstacle_points, sogm_to_srm, Srm};
use crate::sim::{load_session, record_session, save_session, Scenario, SessionData};
use crate::sogm::{make_samples, Sample, Sogm};

/// Per-session seeds drawn from the master seed.
pub fn session_seeds(seed: u64, n: usize) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.random()).collect()
}

/// Simulate `cfg.sessions` sessions with ids `<behavior>_<index>`.
pub fn simulate(cfg: &Config, seed: u64) -> Result<Vec<SessionData>> {
    cfg.validate()?;
    let scenario = Scenario::office();
    session_seeds(seed, cfg.sessions)
        .into_iter()
        .enumerate()
        .map(|(i, s)| {
            let mut sc = cfg.sim.clone();
            sc.id = format!("{}_{i:03}", sc.behavior.name());
            record_session(&sc, &scenario, &mut ChaCha8Rng::seed_from_u64(s))
        })
        .collect()
}

/// Write sessions under `<out>/sessions/<id>/`.
pub fn record(cfg: &Config, seed: u64, out: &Path) -> Result<Vec<PathBuf>> {
    let sessions = simulate(cfg, seed)?;
    let mut dirs = Vec::with_capacity(sessions.len());
    for s in &sessions {
        let dir = out.join("sessions").join(&s.id);
        save_session(&dir, s)?;
        dirs.push(dir);
    }
    Ok(dirs)
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut v = fs::read_dir(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<Vec<_>>>()?;
    v.sort();
    Ok(v)
}

/// Sessions in `dir`: one session directory, a directory of them, or a
/// directory holding `sessions/`.
pub fn load_sessions(dir: &Path) -> Result<Vec<SessionData>> {
    if dir.join("meta.cfg").is_file() {
        return Ok(vec![load_session(dir)?]);
    }
    let root = if dir.join("sessions").is_dir() { dir.join("sessions") } else { dir.to_path_buf() };
    let sessions = sorted_entries(&root)?
        .into_iter()
        .filter(|p| p.join("meta.cfg").is_file())
        .map(|p| load_session(&p))
        .collect::<Result<Vec<_>>>()?;
    if sessions.is_empty() {
        return Err(Error::invalid(format!("no sessions under {}", dir.display())));
    }
    Ok(sessions)
}

/// Outcome of annotating a set of sessions.
#[derive(Debug, Clone)]
pub struct Annotation {
    pub grid: LabelGrid,
    pub map_id: String,
    /// Fraction of points whose inferred label equals the ground truth.
    pub agreement: f64,
}

pub fn annotate_in_memory(cfg: &Config, sessions: &[SessionData]) -> Result<Annotation> {
    let bounds = session_bounds(sessions).ok_or_else(|| Error::invalid("sessions hold no points"))?;
    let map_id = sessions[0].map_id.clone();
    if let Some(s) = sessions.iter().find(|s| s.map_id != map_id) {
        return Err(Error::invalid(format!("sessions span maps `{map_id}` and `{}`", s.map_id)));
    }
    let grid = annotate_sessions(sessions, bounds, &cfg.annotate)?;
    let (mut same, mut total) = (0usize, 0usize);
    for f in sessions.iter().flat_map(|s| &s.frames) {
        let lf = label_frame_points(f, &grid);
        let inferred = lf.frame.inferred.as_deref().unwrap_or(&[]);
        same += inferred.iter().zip(&f.labels).filter(|(a, b)| a == b).count();
        total += f.labels.len();
    }
    Ok(Annotation {
        grid,
        map_id,
        agreement: if total == 0 { 1.0 } else { same as f64 / total as f64 },
    })
}

/// Write `<out>/annot/<map_id>.lbl`.
pub fn annotate(cfg: &Config, input: &Path, out: &Path) -> Result<(PathBuf, Annotation)> {
    let sessions = load_sessions(input)?;
    let a = annotate_in_memory(cfg, &sessions)?;
    let path = out.join("annot").join(format!("{}.lbl", a.map_id));
    a.grid.save(&path)?;
    Ok((path, a))
}

/// Windowed samples of every session, with inferred labels when a grid is
/// given.
pub fn build_samples(cfg: &Config, sessions: &[SessionData], labels: Option<&LabelGrid>) -> Vec<Sample> {
    let mut out = Vec::new();
    for s in sessions {
        let frames: Vec<_> = match labels {
            Some(g) => s.frames.iter().map(|f| label_frame_points(f, g).frame).collect(),
            None => s.frames.clone(),
        };
        out.extend(make_samples(&frames, &s.id, &cfg.sogm, cfg.stride));
    }
    out
}

/// Write `<id>.in.sogm`, `<id>.gt.sogm` and `<id>.pts` for every sample.
/// Returns the sample count.
pub fn gen_sogm(cfg: &Config, input: &Path, labels: Option<&Path>, out: &Path) -> Result<usize> {
    let sessions = load_sessions(input)?;
    let grid = labels.map(LabelGrid::load).transpose()?;
    let samples = build_samples(cfg, &sessions, grid.as_ref());
    fs::create_dir_all(out)?;
    for s in &samples {
        write_sample(cfg, s, out)?;
    }
    Ok(samples.len())
}

fn write_sample(cfg: &Config, s: &Sample, out: &Path) -> Result<()> {
    let (x, gt) = s.rasterize(&cfg.sogm)?;
    Sogm::from_input(&x, gt.geometry, cfg.sogm.dt, s.t0)?.save(&out.join(format!("{}.in.sogm", s.id)))?;
    gt.save(&out.join(format!("{}.gt.sogm", s.id)))?;
    fs::write(out.join(format!("{}.pts", s.id)), s.encode())?;
    Ok(())
}

fn files_with_suffix(dir: &Path, suffix: &str) -> Result<Vec<(String, PathBuf)>> {
    Ok(sorted_entries(dir)?
        .into_iter()
        .filter_map(|p| {
            let name = p.file_name()?.to_str()?;
            let id = name.strip_suffix(suffix)?.to_string();
            Some((id, p))
        })
        .collect())
}

pub fn load_samples(dir: &Path) -> Result<Vec<Sample>> {
    let samples = files_with_suffix(dir, ".pts")?
        .into_iter()
        .map(|(_, p)| Sample::decode(&fs::read(p)?))
        .collect::<Result<Vec<_>>>()?;
    if samples.is_empty() {
        return Err(Error::invalid(format!("no samples in {}", dir.display())));
    }
    Ok(samples)
}

/// Initialize from `seed` and train on `samples`.
pub fn train_in_memory(cfg: &Config, seed: u64, samples: &[Sample]) -> Result<(Network, TrainReport)> {
    train_in_memory_monitored(cfg, seed, samples, |_, _, _| false)
}

/// As [`train_in_memory`], with an epoch callback that may stop training.
pub fn train_in_memory_monitored<F>(cfg: &Config, seed: u64, samples: &[Sample], on_epoch: F) -> Result<(Network, TrainReport)>
where
    F: FnMut(usize, &Network, f64) -> bool,
{
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = Network::init(&cfg.net, &mut rng)?;
    let report = train_monitored(&mut net, samples, &cfg.sogm, &cfg.train, &mut rng, on_epoch)?;
    Ok((net, report))
}

pub fn loss_csv(losses: &[f64]) -> String {
    let mut s = String::from("epoch,mean_loss\n");
    for (i, l) in losses.iter().enumerate() {
        writeln!(s, "{},{l}", i + 1).unwrap();
    }
    s
}

/// Write `<out>/weights.wgt` and `<out>/loss.csv`.
pub fn train_cmd(cfg: &Config, seed: u64, input: &Path, out: &Path) -> Result<TrainReport> {
    let samples = load_samples(input)?;
    fs::create_dir_all(out)?;
    let (net, report) = train_in_memory(cfg, seed, &samples)?;
    net.save(&out.join("weights.wgt"))?;
    fs::write(out.join("loss.csv"), loss_csv(&report.losses))?;
    Ok(report)
}

/// Forecast from a stored one-layer input grid.
pub fn predict_grid(net: &Network, cfg: &Config, input: &Sogm) -> Result<Sogm> {
    let x = input.to_input()?;
    net.forward(&x)?.to_sogm(input.geometry, cfg.sogm.dt, input.t0)
}

/// Write `<out>/<id>.pred.sogm` for every `<id>.in.sogm` in `input`.
pub fn predict_cmd(cfg: &Config, weights: &Path, input: &Path, out: &Path) -> Result<usize> {
    let net = Network::load(&cfg.net, weights)?;
    let files = files_with_suffix(input, ".in.sogm")?;
    if files.is_empty() {
        return Err(Error::invalid(format!("no input grids in {}", input.display())));
    }
    fs::create_dir_all(out)?;
    for (id, p) in &files {
        let pred = predict_grid(&net, cfg, &Sogm::load(p)?)?;
        pred.save(&out.join(format!("{id}.pred.sogm")))?;
    }
    Ok(files.len())
}

/// Pooled metrics of `net` on `samples`.
pub fn evaluate_samples(cfg: &Config, net: &Network, samples: &[Sample]) -> Result<SogmReport> {
    let mut acc = EvalAccumulator::new();
    for s in samples {
        let (x, gt) = s.rasterize(&cfg.sogm)?;
        let pred = net.forward(&x)?.to_sogm(gt.geometry, cfg.sogm.dt, s.t0)?;
        acc.add(&pred, &gt)?;
    }
    acc.finish()
}

/// Pair `<id>.pred.sogm` in `pred_dir` with `<id>.gt.sogm` in `gt_dir` and
/// write `report.csv` (and `pr.csv` when enabled) to `out`.
pub fn eval_cmd(cfg: &Config, pred_dir: &Path, gt_dir: &Path, out: &Path) -> Result<SogmReport> {
    let preds = files_with_suffix(pred_dir, ".pred.sogm")?;
    if preds.is_empty() {
        return Err(Error::invalid(format!("no predictions in {}", pred_dir.display())));
    }
    let mut acc = EvalAccumulator::new();
    for (id, p) in &preds {
        let gt = Sogm::load(&gt_dir.join(format!("{id}.gt.sogm")))?;
        acc.add(&Sogm::load(p)?, &gt)?;
    }
    let report = acc.finish()?;
    fs::create_dir_all(out)?;
    fs::write(out.join("report.csv"), report.to_csv())?;
    if cfg.eval_pr {
        match acc.pooled_curve() {
            Ok(c) => fs::write(out.join("pr.csv"), pr_csv(&c))?,
            Err(Error::UndefinedRecall) => {}
            Err(e) => return Err(e),
        }
    }
    Ok(report)
}

/// Local maxima of the dynamic channel over all layers, deduplicated.
pub fn obstacle_points(sogm: &Sogm, theta: f64) -> Result<Vec<Vec2>> {
    let mut pts = Vec::new();
    for k in 0..sogm.n_t {
        for p in extract_obstacle_points(sogm, k, theta)? {
            if !pts.contains(&p) {
                pts.push(p);
            }
        }
    }
    Ok(pts)
}

/// Plan from the grid center to the configured goal offset.
pub fn plan_in_memory(cfg: &Config, sogm: &Sogm) -> Result<(Srm, Vec<Vec2>, Plan)> {
    let srm = sogm_to_srm(sogm, cfg.risk.p, cfg.risk.d0)?;
    let obstacles = obstacle_points(sogm, cfg.risk.theta_occ)?;
    let start = sogm.geometry.center();
    let goal = start + Vec2::new(cfg.goal_offset.0, cfg.goal_offset.1);
    let p = plan(start, goal, &srm, &obstacles, &cfg.plan)?;
    Ok((srm, obstacles, p))
}

/// `input` is a prediction file, or a directory whose `plan.sample`-th
/// prediction is used. Writes `trajectory.csv`, `srm.sogm` and
/// `overlay.ppm` to `out`.
pub fn plan_cmd(cfg: &Config, input: &Path, out: &Path) -> Result<Plan> {
    let path = if input.is_dir() {
        let files = files_with_suffix(input, ".pred.sogm")?;
        files
            .get(cfg.plan_sample)
            .map(|(_, p)| p.clone())
            .ok_or_else(|| Error::invalid(format!("no prediction {} in {}", cfg.plan_sample, input.display())))?
    } else {
        input.to_path_buf()
    };
    let sogm = Sogm::load(&path)?;
    let (srm, obstacles, p) = plan_in_memory(cfg, &sogm)?;
    fs::create_dir_all(out)?;
    fs::write(out.join("trajectory.csv"), trajectory_csv(&p.best.trajectory, &srm, &cfg.plan)?)?;
    srm.save(&out.join("srm.sogm"))?;
    let mut px = merged_pixels(&sogm);
    draw_points(&sogm, &mut px, &obstacles, [0.0, 0.6, 0.0]);
    draw_points(&sogm, &mut px, &p.best.trajectory.points, [0.8, 0.0, 0.8]);
    fs::write(out.join("overlay.ppm"), encode_ppm(sogm.side(), &px))?;
    Ok(p)
}
