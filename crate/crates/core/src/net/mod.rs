//! Convolutional SOGM predictor: a U-net encoder-decoder followed by a chain
//! of residual propagation blocks, one prediction head per time layer.

pub mod gradcheck;
mod graph;
mod loss;
mod train;

use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::io::{ByteReader, ByteWriter};
use crate::sogm::{GridGeometry, Sogm};
use crate::tensor::Tensor;

pub use graph::{Graph, NodeId};
pub use loss::{bce_with_logits, build_mask, loss_sogm, sigmoid, LossOutput, MaskMode};
pub use train::{predict, train, train_monitored, TrainParams, TrainReport};

#[derive(Debug, Clone, PartialEq)]
pub struct NetConfig {
    /// U-net levels.
    pub n1: usize,
    /// Residual blocks per U-net level.
    pub n2: usize,
    /// Residual blocks per propagation block.
    pub n3: usize,
    pub base_channels: usize,
    pub n_t: usize,
    pub in_channels: usize,
    pub share_propagation_weights: bool,
    pub leaky_slope: f64,
    /// Scale on the residual branch.
    pub residual_scale: f64,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            n1: 3,
            n2: 2,
            n3: 2,
            base_channels: 16,
            n_t: 31,
            in_channels: 6,
            share_propagation_weights: false,
            leaky_slope: 0.1,
            residual_scale: 0.5,
        }
    }
}

impl NetConfig {
    pub fn small() -> Self {
        NetConfig {
            base_channels: 8,
            n_t: 11,
            ..NetConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("n1", self.n1),
            ("n2", self.n2),
            ("n3", self.n3),
            ("base_channels", self.base_channels),
            ("n_t", self.n_t),
            ("in_channels", self.in_channels),
        ] {
            if v == 0 {
                return Err(Error::config(format!("net.{name} must be at least 1")));
            }
        }
        if self.n1 > 6 {
            return Err(Error::config("net.n1 must be at most 6"));
        }
        if !(0.0..1.0).contains(&self.leaky_slope) {
            return Err(Error::config("net.leaky_slope must be in [0, 1)"));
        }
        if !(self.residual_scale > 0.0) {
            return Err(Error::config("net.residual_scale must be positive"));
        }
        Ok(())
    }

    pub fn channels(&self, level: usize) -> usize {
        self.base_channels << level
    }

    /// Side lengths are padded up to a multiple of this.
    pub fn pad_multiple(&self) -> usize {
        1 << self.n1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvIds {
    pub w: usize,
    pub b: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ResBlock {
    pub c1: ConvIds,
    pub c2: ConvIds,
}

/// Parameter indices of every layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    pub stem: ConvIds,
    pub encoder: Vec<Vec<ResBlock>>,
    pub down: Vec<ConvIds>,
    /// Decoder levels from deepest to shallowest.
    pub fuse: Vec<ConvIds>,
    pub decoder: Vec<Vec<ResBlock>>,
    pub heads: Vec<ConvIds>,
    /// One entry per propagation block (`n_t - 1`).
    pub propagation: Vec<Vec<ResBlock>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub config: NetConfig,
    pub names: Vec<String>,
    pub params: Vec<Tensor>,
    pub layout: Layout,
}

/// Per-layer logits and probabilities, `[n_T][3][H][W]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub n_t: usize,
    pub height: usize,
    pub width: usize,
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
}

impl Prediction {
    pub fn plane_len(&self) -> usize {
        self.height * self.width
    }

    /// Package as a probability grid with ground-truth conventions.
    pub fn to_sogm(&self, geometry: GridGeometry, dt: f64, t0: f64) -> Result<Sogm> {
        if self.height != geometry.side || self.width != geometry.side {
            return Err(Error::ShapeMismatch {
                expected: vec![geometry.side, geometry.side],
                got: vec![self.height, self.width],
            });
        }
        Ok(Sogm {
            n_t: self.n_t,
            channels: 3,
            geometry,
            dt,
            t0,
            data: self.probs.iter().map(|&p| p as f32).collect(),
        })
    }
}

struct Builder {
    names: Vec<String>,
    shapes: Vec<Vec<usize>>,
}

impl Builder {
    fn conv(&mut self, name: &str, ci: usize, co: usize, k: usize) -> ConvIds {
        let w = self.names.len();
        self.names.push(format!("{name}.w"));
        self.shapes.push(vec![co, ci, k, k]);
        self.names.push(format!("{name}.b"));
        self.shapes.push(vec![co]);
        ConvIds { w, b: w + 1 }
    }

    fn blocks(&mut self, name: &str, n: usize, c: usize) -> Vec<ResBlock> {
        (0..n)
            .map(|i| ResBlock {
                c1: self.conv(&format!("{name}.r{i}.c1"), c, c, 3),
                c2: self.conv(&format!("{name}.r{i}.c2"), c, c, 3),
            })
            .collect()
    }
}

fn layout(config: &NetConfig) -> (Layout, Vec<String>, Vec<Vec<usize>>) {
    let mut b = Builder {
        names: Vec::new(),
        shapes: Vec::new(),
    };
    let c0 = config.channels(0);
    let stem = b.conv("stem", config.in_channels, c0, 3);
    let mut encoder = Vec::new();
    let mut down = Vec::new();
    for l in 0..config.n1 {
        encoder.push(b.blocks(&format!("enc{l}"), config.n2, config.channels(l)));
        if l + 1 < config.n1 {
            down.push(b.conv(&format!("down{l}"), config.channels(l), config.channels(l + 1), 3));
        }
    }
    let mut fuse = Vec::new();
    let mut decoder = Vec::new();
    for l in (0..config.n1 - 1).rev() {
        let c = config.channels(l);
        fuse.push(b.conv(&format!("fuse{l}"), c + config.channels(l + 1), c, 3));
        decoder.push(b.blocks(&format!("dec{l}"), config.n2, c));
    }
    let heads = (0..config.n_t).map(|k| b.conv(&format!("head{k}"), c0, 3, 1)).collect();
    let propagation = if config.share_propagation_weights {
        let shared = b.blocks("prop", config.n3, c0);
        vec![shared; config.n_t - 1]
    } else {
        (1..config.n_t)
            .map(|k| b.blocks(&format!("prop{k}"), config.n3, c0))
            .collect()
    };
    (
        Layout {
            stem,
            encoder,
            down,
            fuse,
            decoder,
            heads,
            propagation,
        },
        b.names,
        b.shapes,
    )
}

impl Network {
    /// All weights and biases zero.
    pub fn zeros(config: &NetConfig) -> Result<Network> {
        config.validate()?;
        let (layout, names, shapes) = layout(config);
        Ok(Network {
            config: config.clone(),
            names,
            params: shapes.iter().map(|s| Tensor::zeros(s)).collect(),
            layout,
        })
    }

    /// He-normal weights, zero biases; the second conv of each residual
    /// block starts small so every block begins close to the identity.
    pub fn init<R: Rng + ?Sized>(config: &NetConfig, rng: &mut R) -> Result<Network> {
        let mut net = Network::zeros(config)?;
        for (name, t) in net.names.iter().zip(net.params.iter_mut()) {
            if !name.ends_with(".w") {
                continue;
            }
            let fan_in: usize = t.shape[1..].iter().product();
            let mut std = (2.0 / fan_in as f64).sqrt();
            if name.ends_with("c2.w") {
                std *= 0.1;
            }
            let normal = Normal::new(0.0, std).expect("finite std");
            t.data.iter_mut().for_each(|v| *v = normal.sample(rng));
        }
        Ok(net)
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|t| t.numel()).sum()
    }

    pub fn zero_grad(&mut self) {
        self.params.iter_mut().for_each(|p| p.zero_grad());
    }

    fn conv(&self, g: &mut Graph, x: NodeId, ids: ConvIds, stride: usize) -> Result<NodeId> {
        let w = g.param(ids.w, &self.params[ids.w]);
        let b = g.param(ids.b, &self.params[ids.b]);
        let pad = self.params[ids.w].shape[2] / 2;
        g.conv2d(x, w, b, stride, pad)
    }

    fn res_block(&self, g: &mut Graph, x: NodeId, blk: ResBlock) -> Result<NodeId> {
        let slope = self.config.leaky_slope;
        let h = self.conv(g, x, blk.c1, 1)?;
        let h = g.leaky(h, slope);
        let h = self.conv(g, h, blk.c2, 1)?;
        let h = g.scale(h, self.config.residual_scale);
        g.add(x, h)
    }

    fn res_blocks(&self, g: &mut Graph, mut x: NodeId, blocks: &[ResBlock]) -> Result<NodeId> {
        for &blk in blocks {
            x = self.res_block(g, x, blk)?;
        }
        Ok(x)
    }

    /// Record the forward pass; returns one `[3][H][W]` logit node per layer.
    pub fn build(&self, g: &mut Graph, input: &Tensor) -> Result<Vec<NodeId>> {
        let cfg = &self.config;
        if input.shape.len() != 3 || input.shape[0] != cfg.in_channels {
            return Err(Error::ShapeMismatch {
                expected: vec![cfg.in_channels, 0, 0],
                got: input.shape.clone(),
            });
        }
        let (h, w) = (input.shape[1], input.shape[2]);
        let m = cfg.pad_multiple();
        let (hp, wp) = (h.div_ceil(m) * m, w.div_ceil(m) * m);
        let slope = cfg.leaky_slope;
        let x = g.input(input);
        let x = g.pad_to(x, hp, wp);
        let x = self.conv(g, x, self.layout.stem, 1)?;
        let mut x = g.leaky(x, slope);
        let mut skips = Vec::new();
        for l in 0..cfg.n1 {
            x = self.res_blocks(g, x, &self.layout.encoder[l])?;
            if l + 1 < cfg.n1 {
                skips.push(x);
                let d = self.conv(g, x, self.layout.down[l], 2)?;
                x = g.leaky(d, slope);
            }
        }
        for (i, skip) in skips.into_iter().rev().enumerate() {
            let up = g.upsample2(x);
            let cat = g.concat(skip, up)?;
            let f = self.conv(g, cat, self.layout.fuse[i], 1)?;
            x = g.leaky(f, slope);
            x = self.res_blocks(g, x, &self.layout.decoder[i])?;
        }
        let mut outs = Vec::with_capacity(cfg.n_t);
        for k in 0..cfg.n_t {
            if k > 0 {
                x = self.res_blocks(g, x, &self.layout.propagation[k - 1])?;
            }
            let y = self.conv(g, x, self.layout.heads[k], 1)?;
            outs.push(g.crop_to(y, h, w));
        }
        Ok(outs)
    }

    pub fn forward(&self, input: &Tensor) -> Result<Prediction> {
        let mut g = Graph::new();
        let outs = self.build(&mut g, input)?;
        Ok(collect_prediction(&g, &outs, input.shape[1], input.shape[2]))
    }

    /// Add parameter gradients from a completed backward pass.
    pub fn accumulate_grads(&mut self, g: &Graph) {
        for &(index, node) in g.params() {
            let src = g.grad(node);
            if src.is_empty() {
                continue;
            }
            let p = &mut self.params[index];
            let dst = p.grad.get_or_insert_with(|| vec![0.0; src.len()]);
            dst.iter_mut().zip(src).for_each(|(a, b)| *a += b);
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = ByteWriter::new();
        w.bytes(WEIGHTS_MAGIC);
        w.u32(self.params.len() as u32);
        for (name, t) in self.names.iter().zip(&self.params) {
            w.u16(name.len() as u16);
            w.bytes(name.as_bytes());
            w.u8(t.shape.len() as u8);
            for &d in &t.shape {
                w.u32(d as u32);
            }
            for &v in &t.data {
                w.f64(v);
            }
        }
        w.into_inner()
    }

    /// Load weights for `config`; names and shapes must match exactly.
    pub fn decode(config: &NetConfig, data: &[u8]) -> Result<Network> {
        let mut net = Network::zeros(config)?;
        let mut r = ByteReader::new(data);
        r.magic(WEIGHTS_MAGIC)?;
        let count = r.u32()? as usize;
        if count != net.params.len() {
            return Err(Error::format(format!(
                "weights hold {count} tensors, network expects {}",
                net.params.len()
            )));
        }
        for i in 0..count {
            let len = r.u16()? as usize;
            let name = String::from_utf8(r.take(len)?.to_vec()).map_err(|_| Error::format("bad tensor name"))?;
            if name != net.names[i] {
                return Err(Error::format(format!("expected tensor {}, found {name}", net.names[i])));
            }
            let rank = r.u8()? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u32()? as usize);
            }
            if shape != net.params[i].shape {
                return Err(Error::ShapeMismatch {
                    expected: net.params[i].shape.clone(),
                    got: shape,
                });
            }
            for v in net.params[i].data.iter_mut() {
                *v = r.f64()?;
            }
        }
        r.finish()?;
        Ok(net)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        Ok(std::fs::write(path, self.encode())?)
    }

    pub fn load(config: &NetConfig, path: &Path) -> Result<Network> {
        let data = std::fs::read(path)
            .map_err(|e| Error::invalid(format!("cannot read weights {}: {e}", path.display())))?;
        Network::decode(config, &data)
    }
}

const WEIGHTS_MAGIC: &[u8; 4] = b"WGT1";

pub(crate) fn collect_prediction(g: &Graph, outs: &[NodeId], h: usize, w: usize) -> Prediction {
    let mut logits = Vec::with_capacity(outs.len() * 3 * h * w);
    for &o in outs {
        logits.extend_from_slice(g.value(o));
    }
    let probs = logits.iter().map(|&x| sigmoid(x)).collect();
    Prediction {
        n_t: outs.len(),
        height: h,
        width: w,
        logits,
        probs,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn conv_params(ci: usize, co: usize, k: usize) -> usize {
        ci * co * k * k + co
    }

    /// Closed-form count from the layer list.
    fn expected_params(c: &NetConfig) -> usize {
        let ch = |l: usize| c.base_channels << l;
        let block = |x: usize| 2 * conv_params(x, x, 3);
        let mut n = conv_params(c.in_channels, ch(0), 3);
        for l in 0..c.n1 {
            n += c.n2 * block(ch(l));
            if l + 1 < c.n1 {
                n += conv_params(ch(l), ch(l + 1), 3);
                n += conv_params(ch(l) + ch(l + 1), ch(l), 3) + c.n2 * block(ch(l));
            }
        }
        n += c.n_t * conv_params(ch(0), 3, 1);
        let blocks = if c.share_propagation_weights { 1 } else { c.n_t - 1 };
        n + blocks * c.n3 * block(ch(0))
    }

    #[test]
    fn parameter_count_matches_closed_form() {
        let c = NetConfig::default();
        let net = Network::zeros(&c).unwrap();
        assert_eq!(net.param_count(), expected_params(&c));
        let mut deeper = c.clone();
        deeper.n3 = 4;
        let more = Network::zeros(&deeper).unwrap().param_count();
        assert!(more > net.param_count());
        assert_eq!(more, expected_params(&deeper));
        let mut shared = c.clone();
        shared.share_propagation_weights = true;
        assert_eq!(Network::zeros(&shared).unwrap().param_count(), expected_params(&shared));
    }

    #[test]
    fn shared_blocks_use_one_weight_set() {
        let c = NetConfig {
            share_propagation_weights: true,
            ..NetConfig::small()
        };
        let net = Network::zeros(&c).unwrap();
        let first = &net.layout.propagation[0];
        for blocks in &net.layout.propagation {
            assert_eq!(blocks, first);
            for (a, b) in blocks.iter().zip(first) {
                assert!(std::ptr::eq(&net.params[a.c1.w], &net.params[b.c1.w]));
                assert!(std::ptr::eq(&net.params[a.c2.w], &net.params[b.c2.w]));
            }
        }
        let ind = Network::zeros(&NetConfig::small()).unwrap();
        assert_ne!(ind.layout.propagation[0], ind.layout.propagation[1]);
    }

    #[test]
    fn zero_weights_predict_one_half() {
        let c = NetConfig {
            n_t: 4,
            ..NetConfig::small()
        };
        let net = Network::zeros(&c).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Tensor::from_vec(&[6, 20, 20], (0..2400).map(|_| rng.random::<f64>()).collect()).unwrap();
        let p = net.forward(&x).unwrap();
        assert_eq!((p.n_t, p.height, p.width), (4, 20, 20));
        assert!(p.probs.iter().all(|&v| v == 0.5));
    }

    #[test]
    fn rejects_wrong_input_channels() {
        let net = Network::zeros(&NetConfig::small()).unwrap();
        assert!(net.forward(&Tensor::zeros(&[5, 16, 16])).is_err());
    }

    #[test]
    fn invalid_config_is_rejected() {
        let c = NetConfig {
            n2: 0,
            ..NetConfig::default()
        };
        assert!(matches!(Network::zeros(&c), Err(Error::Config(_))));
    }

    #[test]
    fn weights_round_trip() {
        let c = NetConfig {
            n_t: 3,
            base_channels: 4,
            ..NetConfig::small()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let net = Network::init(&c, &mut rng).unwrap();
        let bytes = net.encode();
        assert_eq!(&bytes[..4], b"WGT1");
        let back = Network::decode(&c, &bytes).unwrap();
        assert_eq!(back.params, net.params);
        let other = NetConfig { n3: 1, ..c };
        assert!(Network::decode(&other, &bytes).is_err());
    }
}
