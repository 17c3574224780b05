//! Road IoU, mean/best-of-N curves and the evaluation report.

use serde::{Deserialize, Serialize};

use crate::bevgrid::StateTensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::synthworld::LayoutKind;
use crate::worldmodel::{predict, HvaeModel};

fn road_bits<T: Scalar>(s: &StateTensor<T>) -> Vec<bool> {
    s.road().iter().map(|&v| v >= T::lit(0.5)).collect()
}

/// `(|A ∩ B|, |A ∪ B|)` of the binarized road channels inside `region`.
pub fn overlap<T: Scalar>(pred: &StateTensor<T>, target: &StateTensor<T>, region: &[bool]) -> Result<(usize, usize)> {
    if pred.size() != target.size() || region.len() != pred.cells() {
        return Err(Error::domain(format!(
            "iou: prediction {0}x{0}, target {1}x{1}, region of {2} cells",
            pred.size(),
            target.size(),
            region.len()
        )));
    }
    if !region.iter().any(|&r| r) {
        return Err(Error::domain("iou over an empty region"));
    }
    let (a, b) = (road_bits(pred), road_bits(target));
    let (mut inter, mut union) = (0, 0);
    for k in (0..region.len()).filter(|&k| region[k]) {
        inter += usize::from(a[k] && b[k]);
        union += usize::from(a[k] || b[k]);
    }
    Ok((inter, union))
}

/// Road IoU inside `region`, binarizing at 0.5; an empty union counts as 1.
pub fn iou<T: Scalar>(pred: &StateTensor<T>, target: &StateTensor<T>, region: &[bool]) -> Result<f64> {
    let (i, u) = overlap(pred, target, region)?;
    Ok(if u == 0 { 1.0 } else { i as f64 / u as f64 })
}

/// Cells observed in `x_full`.
pub fn region_all<T: Scalar>(x_full: &StateTensor<T>) -> Vec<bool> {
    (0..x_full.cells()).map(|k| x_full.observed(k)).collect()
}

/// Cells observed in `x_full` but not in `x_past`.
pub fn region_unobserved<T: Scalar>(x_past: &StateTensor<T>, x_full: &StateTensor<T>) -> Vec<bool> {
    (0..x_full.cells())
        .map(|k| x_full.observed(k) && !x_past.observed(k))
        .collect()
}

/// Mean and best IoU of the first `n` predictions of the `(seed, i)` stream.
pub fn best_of_n<T: Scalar>(
    model: &HvaeModel<T>,
    x_past: &StateTensor<T>,
    target: &StateTensor<T>,
    region: &[bool],
    n: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    let preds = predict(model, x_past, n, seed)?;
    let ious = preds
        .iter()
        .map(|p| iou(p, target, region))
        .collect::<Result<Vec<f64>>>()?;
    Ok(mean_best(&ious, n))
}

/// Mean and max of the first `n` values.
pub fn mean_best(values: &[f64], n: usize) -> (f64, f64) {
    let head = &values[..n.min(values.len())];
    let mean = head.iter().sum::<f64>() / head.len() as f64;
    let best = head.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (mean, best)
}

/// `(best_N − best_1) / (1 − best_1)`, zero when best-of-1 is already perfect.
pub fn gap_closing(best_1: f64, best_n: f64) -> f64 {
    if best_1 >= 1.0 {
        0.0
    } else {
        (best_n - best_1) / (1.0 - best_1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub n: usize,
    pub mean: f64,
    pub best: f64,
    pub gap_closing: f64,
}

/// Curves over one region: averages of per-world IoUs and corpus-pooled IoUs
/// (intersections and unions summed over worlds before dividing).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionReport {
    pub worlds: usize,
    pub per_sample: Vec<CurvePoint>,
    pub pooled: Vec<CurvePoint>,
}

/// Per-world record; IoU lists hold one value per prediction sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldRecord {
    pub seed: u64,
    pub layout: LayoutKind,
    pub iou_all: Vec<f64>,
    /// Absent when the future revealed no new cells.
    pub iou_unobserved: Option<Vec<f64>>,
    /// Realized branch outcome and the outcome read off each sample.
    pub branch_truth: Option<bool>,
    pub branch_samples: Option<Vec<bool>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SetReport {
    pub worlds: usize,
    pub all: RegionReport,
    pub unobserved: RegionReport,
    /// Fraction of branch worlds whose samples contain both outcomes.
    pub both_outcomes_fraction: Option<f64>,
    pub records: Vec<WorldRecord>,
}

/// Overlap counts of every sample of one world in one region.
#[derive(Debug, Clone)]
pub struct Overlaps(pub Vec<(usize, usize)>);

impl Overlaps {
    pub fn ious(&self) -> Vec<f64> {
        self.0
            .iter()
            .map(|&(i, u)| if u == 0 { 1.0 } else { i as f64 / u as f64 })
            .collect()
    }
}

pub fn region_report(worlds: &[Overlaps], n_values: &[usize]) -> RegionReport {
    let points = |pooled: bool| -> Vec<CurvePoint> {
        let mut raw: Vec<(usize, f64, f64)> = Vec::new();
        for &n in n_values {
            let (mean, best) = if pooled {
                let (mut mi, mut mu, mut bi, mut bu) = (0usize, 0usize, 0usize, 0usize);
                for w in worlds {
                    let head = &w.0[..n.min(w.0.len())];
                    for &(i, u) in head {
                        mi += i;
                        mu += u;
                    }
                    let ious = w.ious();
                    let best_k = (0..head.len()).fold(0, |b, k| if ious[k] > ious[b] { k } else { b });
                    bi += head[best_k].0;
                    bu += head[best_k].1;
                }
                let r = |i: usize, u: usize| if u == 0 { 1.0 } else { i as f64 / u as f64 };
                (r(mi, mu), r(bi, bu))
            } else {
                let (mut ms, mut bs) = (0.0, 0.0);
                for w in worlds {
                    let (m, b) = mean_best(&w.ious(), n);
                    ms += m;
                    bs += b;
                }
                let c = worlds.len().max(1) as f64;
                (ms / c, bs / c)
            };
            raw.push((n, mean, best));
        }
        let best_1 = raw.first().map_or(0.0, |r| r.2);
        raw.into_iter()
            .map(|(n, mean, best)| CurvePoint {
                n,
                mean,
                best,
                gap_closing: gap_closing(best_1, best),
            })
            .collect()
    };
    RegionReport {
        worlds: worlds.len(),
        per_sample: points(false),
        pooled: points(true),
    }
}
