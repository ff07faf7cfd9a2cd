//! Precision-recall, step-integrated average precision and MSE over the
//! dynamic channel of predicted grids.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::sogm::Sogm;

pub use crate::sogm::DYNAMIC as DYNAMIC_CHANNEL;

/// One point per distinct score, thresholds descending.
#[derive(Debug, Clone, PartialEq)]
pub struct PrCurve {
    pub thresholds: Vec<f64>,
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
}

fn curve_from_sorted(pairs: &[(f64, bool)]) -> Result<PrCurve> {
    let positives = pairs.iter().filter(|p| p.1).count();
    if positives == 0 {
        return Err(Error::UndefinedRecall);
    }
    let mut c = PrCurve {
        thresholds: Vec::new(),
        precision: Vec::new(),
        recall: Vec::new(),
    };
    let (mut tp, mut seen) = (0usize, 0usize);
    let mut i = 0;
    while i < pairs.len() {
        let s = pairs[i].0;
        while i < pairs.len() && pairs[i].0 == s {
            tp += pairs[i].1 as usize;
            seen += 1;
            i += 1;
        }
        c.thresholds.push(s);
        c.precision.push(tp as f64 / seen as f64);
        c.recall.push(tp as f64 / positives as f64);
    }
    Ok(c)
}

fn sort_desc(pairs: &mut [(f64, bool)]) -> Result<()> {
    if pairs.iter().any(|p| p.0.is_nan()) {
        return Err(Error::invalid("NaN score"));
    }
    pairs.sort_unstable_by(|a, b| b.0.total_cmp(&a.0));
    Ok(())
}

pub fn pr_curve(scores: &[f64], gt: &[bool]) -> Result<PrCurve> {
    if scores.len() != gt.len() {
        return Err(Error::ShapeMismatch {
            expected: vec![scores.len()],
            got: vec![gt.len()],
        });
    }
    let mut pairs: Vec<(f64, bool)> = scores.iter().copied().zip(gt.iter().copied()).collect();
    sort_desc(&mut pairs)?;
    curve_from_sorted(&pairs)
}

/// `sum_k (r_k - r_{k-1}) p_k` with `r_0 = 0`.
pub fn average_precision(curve: &PrCurve) -> f64 {
    let mut prev = 0.0;
    let mut ap = 0.0;
    for (&p, &r) in curve.precision.iter().zip(&curve.recall) {
        ap += (r - prev) * p;
        prev = r;
    }
    ap
}

/// Per-layer AP (absent where a layer has no positives), pooled AP and MSE.
#[derive(Debug, Clone, PartialEq)]
pub struct SogmReport {
    pub dt: f64,
    pub per_layer: Vec<Option<f64>>,
    pub ap_tot: Option<f64>,
    pub mse: f64,
}

impl SogmReport {
    /// AP of the layer closest to `time` seconds ahead.
    pub fn ap_at(&self, time: f64) -> Option<f64> {
        let k = (time / self.dt).round() as usize;
        self.per_layer.get(k).copied().flatten()
    }

    pub fn to_csv(&self) -> String {
        let fmt = |v: Option<f64>| v.map_or("NA".to_string(), |x| format!("{x:.6}"));
        let mut s = String::from("layer,time_s,ap\n");
        for (k, ap) in self.per_layer.iter().enumerate() {
            let _ = writeln!(s, "{k},{:.3},{}", k as f64 * self.dt, fmt(*ap));
        }
        let _ = writeln!(s, "ap_tot,mse\n{},{:.8}", fmt(self.ap_tot), self.mse);
        s
    }
}

pub fn pr_csv(curve: &PrCurve) -> String {
    let mut s = String::from("score,precision,recall\n");
    for i in 0..curve.thresholds.len() {
        let _ = writeln!(s, "{:.6},{:.6},{:.6}", curve.thresholds[i], curve.precision[i], curve.recall[i]);
    }
    s
}

/// Pools dynamic-channel scores over many samples.
#[derive(Debug, Clone, Default)]
pub struct EvalAccumulator {
    dt: f64,
    layers: Vec<Vec<(f32, bool)>>,
    sq_err: f64,
    count: usize,
}

impl EvalAccumulator {
    pub fn new() -> Self {
        EvalAccumulator::default()
    }

    pub fn add(&mut self, pred: &Sogm, gt: &Sogm) -> Result<()> {
        if pred.n_t != gt.n_t || pred.side() != gt.side() || pred.channels <= DYNAMIC_CHANNEL || gt.channels <= DYNAMIC_CHANNEL {
            return Err(Error::ShapeMismatch {
                expected: vec![gt.n_t, gt.channels, gt.side(), gt.side()],
                got: vec![pred.n_t, pred.channels, pred.side(), pred.side()],
            });
        }
        if self.layers.is_empty() {
            self.layers = vec![Vec::new(); gt.n_t];
            self.dt = gt.dt;
        } else if self.layers.len() != gt.n_t {
            return Err(Error::ShapeMismatch {
                expected: vec![self.layers.len()],
                got: vec![gt.n_t],
            });
        }
        for k in 0..gt.n_t {
            let p = pred.plane(k, DYNAMIC_CHANNEL);
            let y = gt.plane(k, DYNAMIC_CHANNEL);
            for (&pi, &yi) in p.iter().zip(y) {
                let d = pi as f64 - yi as f64;
                self.sq_err += d * d;
                self.layers[k].push((pi, yi > 0.5));
            }
            self.count += p.len();
        }
        Ok(())
    }

    pub fn finish(&self) -> Result<SogmReport> {
        if self.count == 0 {
            return Err(Error::invalid("nothing to evaluate"));
        }
        let ap = |pairs: &mut Vec<(f64, bool)>| -> Result<Option<f64>> {
            if !pairs.iter().any(|p| p.1) {
                return Ok(None);
            }
            sort_desc(pairs)?;
            Ok(Some(average_precision(&curve_from_sorted(pairs)?)))
        };
        let mut per_layer = Vec::with_capacity(self.layers.len());
        let mut all = Vec::new();
        for layer in &self.layers {
            let mut pairs: Vec<(f64, bool)> = layer.iter().map(|&(s, y)| (s as f64, y)).collect();
            all.extend_from_slice(&pairs);
            per_layer.push(ap(&mut pairs)?);
        }
        Ok(SogmReport {
            dt: self.dt,
            per_layer,
            ap_tot: ap(&mut all)?,
            mse: self.sq_err / self.count as f64,
        })
    }

    /// PR curve over all layers pooled.
    pub fn pooled_curve(&self) -> Result<PrCurve> {
        let mut all: Vec<(f64, bool)> = self.layers.iter().flatten().map(|&(s, y)| (s as f64, y)).collect();
        sort_desc(&mut all)?;
        curve_from_sorted(&all)
    }
}

/// Metrics of one predicted grid against its ground truth.
pub fn evaluate_sogm(pred: &Sogm, gt: &Sogm) -> Result<SogmReport> {
    let mut acc = EvalAccumulator::new();
    acc.add(pred, gt)?;
    acc.finish()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sogm::GridGeometry;
    use crate::Vec2;

    #[test]
    fn hand_example() {
        let c = pr_curve(&[0.9, 0.8, 0.7], &[true, false, true]).unwrap();
        assert_eq!(c.precision, vec![1.0, 0.5, 2.0 / 3.0]);
        assert_eq!(c.recall, vec![0.5, 0.5, 1.0]);
        assert!((average_precision(&c) - 5.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn perfect_and_tied_scores() {
        let c = pr_curve(&[0.9, 0.8, 0.1, 0.2], &[true, true, false, false]).unwrap();
        assert_eq!(c.precision[..2], [1.0, 1.0]);
        assert_eq!(average_precision(&c), 1.0);
        let c = pr_curve(&[0.4; 5], &[true, false, false, true, false]).unwrap();
        assert_eq!(c.thresholds.len(), 1);
        assert_eq!(c.precision[0], 0.4);
    }

    #[test]
    fn no_positives_is_undefined() {
        assert!(matches!(pr_curve(&[0.1, 0.2], &[false, false]), Err(Error::UndefinedRecall)));
    }

    fn grid(n_t: usize, side: usize, dyn_values: impl Fn(usize, usize) -> f32) -> Sogm {
        let mut s = Sogm::zeros(n_t, 3, GridGeometry::centered(Vec2::ZERO, side, 0.12), 0.1, 0.0);
        for k in 0..n_t {
            for i in 0..side * side {
                let j = s.index(k, DYNAMIC_CHANNEL, 0, 0) + i;
                s.data[j] = dyn_values(k, i);
            }
        }
        s
    }

    #[test]
    fn identical_prediction_is_perfect() {
        let gt = grid(3, 4, |k, i| ((i + k) % 5 == 0) as u8 as f32);
        let r = evaluate_sogm(&gt, &gt).unwrap();
        assert_eq!(r.ap_tot, Some(1.0));
        assert_eq!(r.mse, 0.0);
    }

    #[test]
    fn uniform_half_has_quarter_mse() {
        let gt = grid(2, 5, |k, i| ((i * 7 + k) % 3 == 0) as u8 as f32);
        let pred = grid(2, 5, |_, _| 0.5);
        assert_eq!(evaluate_sogm(&pred, &gt).unwrap().mse, 0.25);
    }

    #[test]
    fn empty_layer_is_absent() {
        let gt = grid(2, 3, |k, i| (k == 1 && i == 4) as u8 as f32);
        let r = evaluate_sogm(&gt, &gt).unwrap();
        assert_eq!(r.per_layer, vec![None, Some(1.0)]);
        let csv = r.to_csv();
        assert!(csv.starts_with("layer,time_s,ap\n0,0.000,NA\n1,0.100,1.000000\nap_tot,mse\n"));
    }
}
