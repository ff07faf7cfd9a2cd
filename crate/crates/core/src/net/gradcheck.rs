//! Central-difference gradient checks for graph ops and the masked loss.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{loss_sogm, sigmoid, Graph, MaskMode, NodeId, Prediction};
use crate::geom::Vec2;
use crate::sogm::{GridGeometry, Sogm};
use crate::tensor::Tensor;

pub const EPS: f64 = 1e-5;
pub const TOL: f64 = 1e-5;

/// Relative error with a floor so near-zero gradients compare absolutely.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-3)
}

pub fn random_tensor<R: Rng + ?Sized>(rng: &mut R, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).expect("shape matches")
}

/// Worst relative error of d(sum r * out)/d(input) against central
/// differences, over every entry of every input; `r` is random.
pub fn graph_error<F>(inputs: &[Tensor], f: F) -> f64
where
    F: Fn(&mut Graph, &[NodeId]) -> NodeId,
{
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let eval = |ts: &[Tensor]| {
        let mut g = Graph::new();
        let ids: Vec<NodeId> = ts.iter().map(|t| g.variable(t)).collect();
        let out = f(&mut g, &ids);
        (g, ids, out)
    };
    let (g0, _, out0) = eval(inputs);
    let r: Vec<f64> = (0..g0.value(out0).len()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let objective = |ts: &[Tensor]| {
        let (g, _, out) = eval(ts);
        g.value(out).iter().zip(&r).map(|(a, b)| a * b).sum::<f64>()
    };
    let (mut g, ids, out) = eval(inputs);
    g.backward(&[(out, r.clone())]).expect("seed matches output");
    let mut worst: f64 = 0.0;
    for (k, t) in inputs.iter().enumerate() {
        let analytic = g.grad(ids[k]);
        if analytic.len() != t.numel() {
            return f64::INFINITY;
        }
        for i in 0..t.numel() {
            let mut plus = inputs.to_vec();
            plus[k].data[i] += EPS;
            let mut minus = inputs.to_vec();
            minus[k].data[i] -= EPS;
            let numeric = (objective(&plus) - objective(&minus)) / (2.0 * EPS);
            worst = worst.max(rel_err(analytic[i], numeric));
        }
    }
    worst
}

/// 1x1 per-layer sigmoid heads on a feature map followed by the masked BCE
/// loss (GT mask, fixed mask rng).
pub fn head_and_loss_error(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (n_t, side) = (2, 4);
    let gt = Sogm {
        n_t,
        channels: 3,
        geometry: GridGeometry::centered(Vec2::ZERO, side, 0.12),
        dt: 0.1,
        t0: 0.0,
        data: (0..n_t * 3 * side * side)
            .map(|_| if rng.random_bool(0.3) { 1.0 } else { 0.0 })
            .collect(),
    };
    let mut inputs = vec![random_tensor(&mut rng, &[4, side, side])];
    for _ in 0..n_t {
        inputs.push(random_tensor(&mut rng, &[3, 4, 1, 1]));
        inputs.push(random_tensor(&mut rng, &[3]));
    }
    let loss_of = |ts: &[Tensor], want: bool| {
        let mut g = Graph::new();
        let ids: Vec<NodeId> = ts.iter().map(|t| g.variable(t)).collect();
        let outs: Vec<NodeId> = (0..n_t)
            .map(|k| g.conv2d(ids[0], ids[1 + 2 * k], ids[2 + 2 * k], 1, 0).expect("shapes match"))
            .collect();
        let logits: Vec<f64> = outs.iter().flat_map(|&o| g.value(o).to_vec()).collect();
        let probs = logits.iter().map(|&x| sigmoid(x)).collect();
        let pred = Prediction {
            n_t,
            height: side,
            width: side,
            logits,
            probs,
        };
        let mut mrng = ChaCha8Rng::seed_from_u64(7);
        let out = loss_sogm(&pred, &gt, MaskMode::Gt, 1.0, 10.0, &mut mrng).expect("binary gt");
        let mut grads = Vec::new();
        if want {
            let plane = 3 * side * side;
            let seeds: Vec<(NodeId, Vec<f64>)> = outs
                .iter()
                .enumerate()
                .map(|(k, &o)| (o, out.grad[k * plane..(k + 1) * plane].to_vec()))
                .collect();
            g.backward(&seeds).expect("seeds match outputs");
            grads = ids.iter().map(|&i| g.grad(i).to_vec()).collect();
        }
        (out.loss, grads)
    };
    let (_, analytic) = loss_of(&inputs, true);
    let mut worst: f64 = 0.0;
    for k in 0..inputs.len() {
        for i in 0..inputs[k].numel() {
            let mut plus = inputs.clone();
            plus[k].data[i] += EPS;
            let mut minus = inputs.clone();
            minus[k].data[i] -= EPS;
            let numeric = (loss_of(&plus, false).0 - loss_of(&minus, false).0) / (2.0 * EPS);
            worst = worst.max(rel_err(analytic[k][i], numeric));
        }
    }
    worst
}

/// Worst error per layer type on random small tensors.
pub fn layer_suite(seed: u64) -> Vec<(&'static str, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let mut conv = 0.0f64;
    for (stride, pad, k, h, w) in [(1, 1, 3, 5, 5), (2, 1, 3, 6, 4), (1, 0, 1, 4, 3), (1, 0, 3, 5, 6)] {
        let x = random_tensor(&mut rng, &[2, h, w]);
        let wt = random_tensor(&mut rng, &[3, 2, k, k]);
        let b = random_tensor(&mut rng, &[3]);
        conv = conv.max(graph_error(&[x, wt, b], |g, ids| {
            g.conv2d(ids[0], ids[1], ids[2], stride, pad).expect("shapes match")
        }));
    }
    out.push(("conv2d", conv));
    let a = random_tensor(&mut rng, &[2, 3, 4]);
    let b = random_tensor(&mut rng, &[2, 3, 4]);
    let c = random_tensor(&mut rng, &[1, 3, 4]);
    out.push(("leaky_relu", graph_error(&[a.clone()], |g, ids| g.leaky(ids[0], 0.1))));
    out.push(("add", graph_error(&[a.clone(), b], |g, ids| g.add(ids[0], ids[1]).expect("same shape"))));
    out.push(("scale", graph_error(&[a.clone()], |g, ids| g.scale(ids[0], -0.7))));
    out.push(("upsample2", graph_error(&[a.clone()], |g, ids| g.upsample2(ids[0]))));
    out.push(("concat", graph_error(&[a.clone(), c], |g, ids| g.concat(ids[0], ids[1]).expect("same size"))));
    out.push(("pad", graph_error(&[a.clone()], |g, ids| g.pad_to(ids[0], 5, 7))));
    out.push(("crop", graph_error(&[a], |g, ids| g.crop_to(ids[0], 2, 3))));
    let x = random_tensor(&mut rng, &[3, 5, 5]);
    let w1 = random_tensor(&mut rng, &[3, 3, 3, 3]);
    let b1 = random_tensor(&mut rng, &[3]);
    let w2 = random_tensor(&mut rng, &[3, 3, 3, 3]);
    let b2 = random_tensor(&mut rng, &[3]);
    out.push((
        "resnet_block",
        graph_error(&[x, w1, b1, w2, b2], |g, ids| {
            let h = g.conv2d(ids[0], ids[1], ids[2], 1, 1).expect("shapes match");
            let h = g.leaky(h, 0.1);
            let h = g.conv2d(h, ids[3], ids[4], 1, 1).expect("shapes match");
            let h = g.scale(h, 0.5);
            g.add(ids[0], h).expect("same shape")
        }),
    ));
    out.push(("sigmoid_head_masked_bce", head_and_loss_error(rng.random())));
    out
}
