use rand::seq::index::sample;
use rand::Rng;

use super::Prediction;
use crate::error::{Error, Result};
use crate::sogm::Sogm;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskMode {
    /// Ground-truth positives plus random negatives.
    Gt,
    /// As `Gt`, plus every pixel predicted positive.
    Active,
    /// Every pixel.
    None,
}

impl MaskMode {
    pub fn parse(s: &str) -> Option<MaskMode> {
        match s.to_ascii_lowercase().as_str() {
            "gt" => Some(MaskMode::Gt),
            "active" => Some(MaskMode::Active),
            "none" => Some(MaskMode::None),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            MaskMode::Gt => "gt",
            MaskMode::Active => "active",
            MaskMode::None => "none",
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Binary cross-entropy of `sigmoid(x)` against `y`, without overflow.
pub fn bce_with_logits(x: f64, y: f64) -> f64 {
    x.max(0.0) - x * y + (-x.abs()).exp().ln_1p()
}

/// Loss mask over one plane.
///
/// Negatives are drawn without replacement, `round(neg_ratio * positives)`
/// of them (all negatives if fewer remain).
pub fn build_mask<R: Rng + ?Sized>(gt: &[f32], probs: &[f64], mode: MaskMode, rng: &mut R, neg_ratio: f64) -> Vec<bool> {
    debug_assert_eq!(gt.len(), probs.len());
    if mode == MaskMode::None {
        return vec![true; gt.len()];
    }
    let mut mask: Vec<bool> = gt.iter().map(|&y| y > 0.5).collect();
    let positives = mask.iter().filter(|&&m| m).count();
    let negatives: Vec<usize> = (0..gt.len()).filter(|&i| !mask[i]).collect();
    let want = if positives == 0 {
        0
    } else {
        ((neg_ratio * positives as f64).round() as usize).min(negatives.len())
    };
    for j in sample(rng, negatives.len(), want) {
        mask[negatives[j]] = true;
    }
    if mode == MaskMode::Active {
        for (m, &p) in mask.iter_mut().zip(probs) {
            *m |= p > 0.5;
        }
    }
    mask
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    pub loss: f64,
    /// Gradient with respect to the logits, `[n_T][3][H][W]`.
    pub grad: Vec<f64>,
    /// Masked BCE sum per layer.
    pub per_layer: Vec<f64>,
}

/// `lambda2 * sum_k L_k / n_T`, where `L_k` sums BCE over the masked pixels
/// of all three channels of layer `k`.
pub fn loss_sogm<R: Rng + ?Sized>(
    pred: &Prediction,
    gt: &Sogm,
    mode: MaskMode,
    neg_ratio: f64,
    lambda2: f64,
    rng: &mut R,
) -> Result<LossOutput> {
    if gt.n_t != pred.n_t || gt.channels != 3 || gt.side() != pred.height || gt.side() != pred.width {
        return Err(Error::ShapeMismatch {
            expected: vec![pred.n_t, 3, pred.height, pred.width],
            got: vec![gt.n_t, gt.channels, gt.side(), gt.side()],
        });
    }
    if !gt.is_binary() {
        return Err(Error::invalid("ground truth is not binary"));
    }
    let plane = pred.plane_len();
    let scale = lambda2 / pred.n_t as f64;
    let mut grad = vec![0.0; pred.logits.len()];
    let mut per_layer = vec![0.0; pred.n_t];
    for k in 0..pred.n_t {
        for c in 0..3 {
            let off = (k * 3 + c) * plane;
            let y = gt.plane(k, c);
            let mask = build_mask(y, &pred.probs[off..off + plane], mode, rng, neg_ratio);
            for (i, _) in mask.iter().enumerate().filter(|(_, &m)| m) {
                let x = pred.logits[off + i];
                let yi = y[i] as f64;
                per_layer[k] += bce_with_logits(x, yi);
                grad[off + i] = scale * (pred.probs[off + i] - yi);
            }
        }
    }
    let loss = scale * per_layer.iter().sum::<f64>();
    Ok(LossOutput { loss, grad, per_layer })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sogm::GridGeometry;
    use crate::Vec2;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn pred_from_logits(n_t: usize, side: usize, logits: Vec<f64>) -> Prediction {
        let probs = logits.iter().map(|&x| sigmoid(x)).collect();
        Prediction {
            n_t,
            height: side,
            width: side,
            logits,
            probs,
        }
    }

    fn gt(n_t: usize, side: usize, data: Vec<f32>) -> Sogm {
        Sogm {
            n_t,
            channels: 3,
            geometry: GridGeometry::centered(Vec2::ZERO, side, 0.12),
            dt: 0.1,
            t0: 0.0,
            data,
        }
    }

    fn random_case(rng: &mut ChaCha8Rng, n_t: usize, side: usize) -> (Prediction, Sogm) {
        let n = n_t * 3 * side * side;
        let logits = (0..n).map(|_| rng.random_range(-4.0..4.0)).collect();
        let y = (0..n).map(|_| if rng.random_bool(0.2) { 1.0 } else { 0.0 }).collect();
        (pred_from_logits(n_t, side, logits), gt(n_t, side, y))
    }

    #[test]
    fn saturated_logits_give_tiny_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        // the loss sums over pixels, so keep the grid tiny
        let (_, g) = random_case(&mut rng, 2, 1);
        let logits = g.data.iter().map(|&y| if y > 0.5 { 20.0 } else { -20.0 }).collect();
        let p = pred_from_logits(2, 1, logits);
        let out = loss_sogm(&p, &g, MaskMode::None, 2.0, 10.0, &mut rng).unwrap();
        assert!(out.loss < 1e-7, "{}", out.loss);
    }

    #[test]
    fn single_pixel_is_ln2() {
        let n_t = 4;
        let mut y = vec![0.0f32; n_t * 3 * 9];
        y[(2 * 3 + 2) * 9 + 4] = 1.0;
        let g = gt(n_t, 3, y);
        let p = pred_from_logits(n_t, 3, vec![0.0; n_t * 27]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = loss_sogm(&p, &g, MaskMode::Gt, 0.0, 10.0, &mut rng).unwrap();
        assert!((out.per_layer[2] - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((out.loss - 10.0 * std::f64::consts::LN_2 / n_t as f64).abs() < 1e-14);
    }

    #[test]
    fn none_equals_gt_with_unbounded_negatives() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (p, g) = random_case(&mut rng, 3, 6);
        let a = loss_sogm(&p, &g, MaskMode::None, 2.0, 10.0, &mut rng).unwrap();
        let b = loss_sogm(&p, &g, MaskMode::Gt, f64::INFINITY, 10.0, &mut rng).unwrap();
        assert!((a.loss - b.loss).abs() < 1e-12);
        assert_eq!(a.grad, b.grad);
    }

    #[test]
    fn empty_gt_gives_empty_gt_mask() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let m = build_mask(&[0.0; 50], &[0.9; 50], MaskMode::Gt, &mut rng, 2.0);
        assert!(m.iter().all(|&v| !v));
    }

    #[test]
    fn active_without_predictions_equals_gt() {
        let mut r1 = ChaCha8Rng::seed_from_u64(5);
        let mut r2 = ChaCha8Rng::seed_from_u64(5);
        let y: Vec<f32> = (0..100).map(|i| if i % 7 == 0 { 1.0 } else { 0.0 }).collect();
        let probs = vec![0.3; 100];
        let a = build_mask(&y, &probs, MaskMode::Active, &mut r1, 2.0);
        let b = build_mask(&y, &probs, MaskMode::Gt, &mut r2, 2.0);
        assert_eq!(a, b);
        assert_eq!(b.iter().filter(|&&m| m).count(), 15 + 30);
    }

    #[test]
    fn active_mask_contains_positives() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..50 {
            let y: Vec<f32> = (0..64).map(|_| if rng.random_bool(0.3) { 1.0 } else { 0.0 }).collect();
            let probs: Vec<f64> = (0..64).map(|_| rng.random()).collect();
            let m = build_mask(&y, &probs, MaskMode::Active, &mut rng, 1.0);
            for i in 0..64 {
                if y[i] == 1.0 || probs[i] > 0.5 {
                    assert!(m[i]);
                }
            }
        }
    }

    #[test]
    fn active_loss_dominates_positive_only_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let (p, g) = random_case(&mut rng, 2, 6);
            let active = loss_sogm(&p, &g, MaskMode::Active, 2.0, 10.0, &mut rng).unwrap();
            let pos_only = loss_sogm(&p, &g, MaskMode::Gt, 0.0, 10.0, &mut rng).unwrap();
            assert!(active.loss >= pos_only.loss);
        }
    }

    #[test]
    fn non_binary_gt_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let (p, mut g) = random_case(&mut rng, 1, 4);
        g.data[3] = 0.5;
        assert!(loss_sogm(&p, &g, MaskMode::None, 2.0, 10.0, &mut rng).is_err());
    }

    #[test]
    fn bce_is_stable_at_extremes() {
        assert!(bce_with_logits(800.0, 1.0).abs() < 1e-300);
        assert!((bce_with_logits(-800.0, 1.0) - 800.0).abs() < 1e-9);
        assert!(bce_with_logits(-800.0, 0.0).is_finite());
        assert_eq!(sigmoid(-800.0), 0.0);
        assert_eq!(sigmoid(800.0), 1.0);
    }
}
