use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{collect_prediction, loss_sogm, Graph, MaskMode, Network};
use crate::error::{Error, Result};
use crate::geom::Vec2;
use crate::sogm::{random_rotation, rasterize_input, Sample, Sogm, SogmParams, TimedPoints};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainParams {
    pub epochs: usize,
    pub batch_size: usize,
    /// Initial learning rate.
    pub lr: f64,
    /// Learning rate at the last epoch; decay is exponential in between.
    pub lr_final: f64,
    pub momentum: f64,
    /// Global gradient-norm ceiling; 0 disables clipping.
    pub clip_norm: f64,
    pub mask: MaskMode,
    pub neg_ratio: f64,
    pub lambda2: f64,
    /// Random rotation of every sample before rasterization.
    pub augment: bool,
    /// Stop once an epoch's mean loss falls below this fraction of the first.
    pub stop_ratio: Option<f64>,
    /// Weights written here after every epoch.
    pub checkpoint: Option<PathBuf>,
}

impl Default for TrainParams {
    fn default() -> Self {
        TrainParams {
            epochs: 100,
            batch_size: 4,
            lr: 1e-2,
            lr_final: 1e-4,
            momentum: 0.98,
            clip_norm: 1.0,
            mask: MaskMode::Active,
            neg_ratio: 2.0,
            lambda2: 10.0,
            augment: true,
            stop_ratio: None,
            checkpoint: None,
        }
    }
}

impl TrainParams {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::config("net.epochs and net.batch_size must be at least 1"));
        }
        if !(self.lr >= 0.0 && self.lr_final >= 0.0) || (self.lr > 0.0 && self.lr_final == 0.0) {
            return Err(Error::config("net.lr and net.lr_final must be nonnegative, and lr_final positive when lr is"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config("net.momentum must be in [0, 1)"));
        }
        if !(self.clip_norm >= 0.0) || !(self.neg_ratio >= 0.0) || !(self.lambda2 > 0.0) {
            return Err(Error::config("net.clip_norm, net.neg_ratio must be nonnegative and net.lambda2 positive"));
        }
        Ok(())
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        if self.lr == 0.0 || self.epochs < 2 {
            return self.lr;
        }
        let u = epoch as f64 / (self.epochs - 1) as f64;
        self.lr * (self.lr_final / self.lr).powf(u)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Mean sample loss per epoch.
    pub losses: Vec<f64>,
    pub stopped_early: bool,
}

/// Loss and gradient accumulation for one sample; returns the loss.
fn sample_step(net: &mut Network, input: &Tensor, gt: &Sogm, tp: &TrainParams, rng: &mut ChaCha8Rng) -> Result<f64> {
    let mut g = Graph::new();
    let outs = net.build(&mut g, input)?;
    let pred = collect_prediction(&g, &outs, input.shape[1], input.shape[2]);
    let out = loss_sogm(&pred, gt, tp.mask, tp.neg_ratio, tp.lambda2, rng)?;
    if !out.loss.is_finite() {
        return Ok(out.loss);
    }
    let plane = 3 * pred.plane_len();
    let seeds = outs
        .iter()
        .enumerate()
        .map(|(k, &o)| (o, out.grad[k * plane..(k + 1) * plane].to_vec()))
        .collect::<Vec<_>>();
    g.backward(&seeds)?;
    net.accumulate_grads(&g);
    Ok(out.loss)
}

/// Mini-batch SGD with momentum over point-set samples.
pub fn train<R: Rng + ?Sized>(
    net: &mut Network,
    samples: &[Sample],
    sogm: &SogmParams,
    tp: &TrainParams,
    rng: &mut R,
) -> Result<TrainReport> {
    train_monitored(net, samples, sogm, tp, rng, |_, _, _| false)
}

/// As [`train`]; `on_epoch(epoch, net, mean_loss)` runs after every epoch
/// and stops training by returning true.
pub fn train_monitored<R, F>(
    net: &mut Network,
    samples: &[Sample],
    sogm: &SogmParams,
    tp: &TrainParams,
    rng: &mut R,
    mut on_epoch: F,
) -> Result<TrainReport>
where
    R: Rng + ?Sized,
    F: FnMut(usize, &Network, f64) -> bool,
{
    tp.validate()?;
    if samples.is_empty() {
        return Err(Error::invalid("empty training set"));
    }
    let cached: Vec<(Tensor, Sogm)> = if tp.augment {
        Vec::new()
    } else {
        samples.iter().map(|s| s.rasterize(sogm)).collect::<Result<_>>()?
    };
    let mut velocity: Vec<Vec<f64>> = net.params.iter().map(|p| vec![0.0; p.numel()]).collect();
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut losses = Vec::with_capacity(tp.epochs);
    let mut batch_index = 0usize;
    for epoch in 0..tp.epochs {
        let lr = tp.lr_at(epoch);
        order.shuffle(rng);
        let mut total = 0.0;
        for batch in order.chunks(tp.batch_size) {
            net.zero_grad();
            for &i in batch {
                let mut srng = ChaCha8Rng::seed_from_u64(rng.random());
                let loss = if tp.augment {
                    let (x, y) = random_rotation(&samples[i], &mut srng).rasterize(sogm)?;
                    sample_step(net, &x, &y, tp, &mut srng)?
                } else {
                    let (x, y) = &cached[i];
                    sample_step(net, x, y, tp, &mut srng)?
                };
                if !loss.is_finite() {
                    return Err(Error::Diverged { batch: batch_index });
                }
                total += loss;
            }
            let inv = 1.0 / batch.len() as f64;
            let mut norm2 = 0.0;
            for p in &net.params {
                norm2 += p.grad.as_ref().map_or(0.0, |g| g.iter().map(|v| v * v).sum::<f64>());
            }
            let norm = norm2.sqrt() * inv;
            if !norm.is_finite() {
                return Err(Error::Diverged { batch: batch_index });
            }
            let clip = if tp.clip_norm > 0.0 && norm > tp.clip_norm {
                tp.clip_norm / norm
            } else {
                1.0
            };
            for (p, v) in net.params.iter_mut().zip(velocity.iter_mut()) {
                let Some(g) = p.grad.as_ref() else { continue };
                for ((w, vi), gi) in p.data.iter_mut().zip(v.iter_mut()).zip(g) {
                    *vi = tp.momentum * *vi + gi * inv * clip;
                    *w -= lr * *vi;
                }
            }
            batch_index += 1;
        }
        net.zero_grad();
        let mean = total / samples.len() as f64;
        losses.push(mean);
        if let Some(path) = &tp.checkpoint {
            net.save(path)?;
        }
        let below = tp.stop_ratio.is_some_and(|r| mean < r * losses[0]);
        if below || on_epoch(epoch, net, mean) {
            return Ok(TrainReport {
                losses,
                stopped_early: true,
            });
        }
    }
    Ok(TrainReport {
        losses,
        stopped_early: false,
    })
}

/// Forecast from the last `n_f` point sets around `center`.
pub fn predict(net: &Network, frames: &[TimedPoints], center: Vec2, params: &SogmParams) -> Result<Sogm> {
    let input = rasterize_input(frames, center, params)?;
    let t0 = frames.last().map_or(0.0, |f| f.t);
    net.forward(&input)?.to_sogm(params.geometry(center), params.dt, t0)
}
