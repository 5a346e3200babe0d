//! Segmentation losses and metrics (forward only).

use crate::error::{Axis, Error, Result};
use crate::tensor::{Element, Tensor4};

/// Label value excluded from losses and metrics.
pub const IGNORE_INDEX: u8 = 255;

/// Weight of the auxiliary head loss.
pub const AUX_WEIGHT: f64 = 0.4;

pub const OHEM_THRESHOLD: f64 = 0.7;

/// Per-pixel class indices, `(n, h, w)` row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<u8>,
}

impl LabelMap {
    pub fn new(n: usize, h: usize, w: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != n * h * w {
            return Err(Error::dim("LabelMap", Axis::Length, n * h * w, data.len()));
        }
        Ok(LabelMap { n, h, w, data })
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Checks every value is a class index below `num_classes` or the
    /// ignore label.
    pub fn validate(&self, num_classes: usize) -> Result<()> {
        match self.data.iter().find(|&&v| v != IGNORE_INDEX && v as usize >= num_classes) {
            Some(v) => Err(Error::Contract(format!("label {v} outside 0..{num_classes}"))),
            None => Ok(()),
        }
    }

    fn check_logits<T: Element>(&self, logits: &Tensor4<T>) -> Result<()> {
        let d = logits.dims();
        for (axis, e, a) in [(Axis::Batch, d.n, self.n), (Axis::Height, d.h, self.h), (Axis::Width, d.w, self.w)] {
            if e != a {
                return Err(Error::dim("labels vs logits", axis, e, a));
            }
        }
        self.validate(d.c)
    }
}

/// Class with the highest logit per pixel; ties go to the lower index.
pub fn argmax<T: Element>(logits: &Tensor4<T>) -> LabelMap {
    let d = logits.dims();
    let hw = d.h * d.w;
    let mut data = Vec::with_capacity(d.n * hw);
    for n in 0..d.n {
        for p in 0..hw {
            let mut best = 0;
            for c in 1..d.c {
                if logits.plane(n, c)[p] > logits.plane(n, best)[p] {
                    best = c;
                }
            }
            data.push(best as u8);
        }
    }
    LabelMap { n: d.n, h: d.h, w: d.w, data }
}

/// Rows are ground truth, columns predictions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        ConfusionMatrix { classes, counts: vec![0; classes * classes] }
    }

    pub fn from_counts(classes: usize, counts: Vec<u64>) -> Result<Self> {
        if counts.len() != classes * classes {
            return Err(Error::dim("ConfusionMatrix", Axis::Length, classes * classes, counts.len()));
        }
        Ok(ConfusionMatrix { classes, counts })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.classes + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Counts every pixel whose label is not ignored.
    pub fn accumulate(&mut self, pred: &LabelMap, truth: &LabelMap) -> Result<()> {
        if pred.len() != truth.len() {
            return Err(Error::dim("confusion accumulate", Axis::Length, truth.len(), pred.len()));
        }
        truth.validate(self.classes)?;
        for (&p, &t) in pred.data.iter().zip(&truth.data) {
            if t == IGNORE_INDEX {
                continue;
            }
            if p as usize >= self.classes {
                return Err(Error::Contract(format!("prediction {p} outside 0..{}", self.classes)));
            }
            self.counts[t as usize * self.classes + p as usize] += 1;
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.classes != self.classes {
            return Err(Error::dim("confusion merge", Axis::Channel, self.classes, other.classes));
        }
        self.counts.iter_mut().zip(&other.counts).for_each(|(a, b)| *a += b);
        Ok(())
    }

    /// `TP / (TP + FP + FN)` per class; `None` when the class never occurs
    /// in either labels or predictions.
    pub fn class_iou(&self) -> Vec<Option<f64>> {
        (0..self.classes)
            .map(|c| {
                let tp = self.get(c, c);
                let fn_: u64 = (0..self.classes).map(|p| self.get(c, p)).sum::<u64>() - tp;
                let fp: u64 = (0..self.classes).map(|t| self.get(t, c)).sum::<u64>() - tp;
                let denom = tp + fp + fn_;
                (denom > 0).then(|| tp as f64 / denom as f64)
            })
            .collect()
    }

    /// Mean IoU over classes with non-zero support.
    pub fn miou(&self) -> Result<f64> {
        let ious: Vec<f64> = self.class_iou().into_iter().flatten().collect();
        if ious.is_empty() {
            return Err(Error::EmptyConfusion);
        }
        Ok(ious.iter().sum::<f64>() / ious.len() as f64)
    }

    pub fn pixel_accuracy(&self) -> Result<f64> {
        let total = self.total();
        if total == 0 {
            return Err(Error::EmptyConfusion);
        }
        let trace: u64 = (0..self.classes).map(|c| self.get(c, c)).sum();
        Ok(trace as f64 / total as f64)
    }
}

/// Result of an OHEM loss evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OhemLoss {
    pub loss: f64,
    /// Number of pixels averaged.
    pub kept: usize,
    /// Set when every pixel carried the ignore label; `loss` is then 0.
    pub all_ignored: bool,
}

/// Default `min_kept`: one sixteenth of all pixels, at least 1.
pub fn default_min_kept(labels: &LabelMap) -> usize {
    (labels.len() / 16).max(1)
}

/// Softmax cross-entropy of every non-ignored pixel, in pixel order.
pub fn pixel_ce<T: Element>(logits: &Tensor4<T>, labels: &LabelMap) -> Result<Vec<f64>> {
    labels.check_logits(logits)?;
    let d = logits.dims();
    let hw = d.h * d.w;
    let mut out = Vec::new();
    for n in 0..d.n {
        for p in 0..hw {
            let t = labels.data[n * hw + p];
            if t == IGNORE_INDEX {
                continue;
            }
            let z: Vec<f64> = (0..d.c).map(|c| logits.plane(n, c)[p].as_f64()).collect();
            let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            out.push(lse - z[t as usize]);
        }
    }
    Ok(out)
}

/// Online hard example mining cross-entropy.
///
/// Keeps pixels whose true-class probability is below `threshold`; if
/// fewer than `min_kept` qualify, the highest-loss pixels are added until
/// `min(min_kept, valid)` are kept. Returns the mean loss of kept pixels.
pub fn ohem_ce<T: Element>(logits: &Tensor4<T>, labels: &LabelMap, threshold: f64, min_kept: usize) -> Result<OhemLoss> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(Error::Contract(format!("OHEM threshold must lie in (0, 1], got {threshold}")));
    }
    if min_kept == 0 {
        return Err(Error::Contract("OHEM min_kept must be at least 1".into()));
    }
    let mut losses = pixel_ce(logits, labels)?;
    if losses.is_empty() {
        return Ok(OhemLoss { loss: 0.0, kept: 0, all_ignored: true });
    }
    let hard = losses.iter().filter(|&&l| (-l).exp() < threshold).count();
    let kept = hard.max(min_kept.min(losses.len()));
    losses.sort_by(|a, b| b.total_cmp(a));
    let loss = losses[..kept].iter().sum::<f64>() / kept as f64;
    Ok(OhemLoss { loss, kept, all_ignored: false })
}

/// `l_normal + alpha * l_aux`.
pub fn total_loss(l_normal: f64, l_aux: f64, alpha: f64) -> f64 {
    l_normal + alpha * l_aux
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Dims;

    #[test]
    fn two_class_cm_example() {
        let cm = ConfusionMatrix::from_counts(2, vec![3, 1, 1, 3]).unwrap();
        assert_eq!(cm.miou().unwrap(), 0.6);
        assert_eq!(cm.pixel_accuracy().unwrap(), 0.75);
        assert!(matches!(ConfusionMatrix::new(3).miou(), Err(Error::EmptyConfusion)));
    }

    #[test]
    fn ohem_top_up_example() {
        // p(true) = 0.9 everywhere for two classes.
        let z = (9.0f64).ln();
        let logits = Tensor4::from_fn(Dims::new(1, 2, 2, 2), |_, c, _, _| if c == 0 { z } else { 0.0 });
        let labels = LabelMap::new(1, 2, 2, vec![0; 4]).unwrap();
        let r = ohem_ce(&logits, &labels, 0.7, 1).unwrap();
        assert!((r.loss + 0.9f64.ln()).abs() < 1e-12);
        assert_eq!(r.kept, 1);
    }

    #[test]
    fn all_ignored_is_flagged() {
        let logits = Tensor4::<f32>::zeros(Dims::new(1, 3, 1, 2));
        let labels = LabelMap::new(1, 1, 2, vec![IGNORE_INDEX; 2]).unwrap();
        let r = ohem_ce(&logits, &labels, 0.7, 1).unwrap();
        assert!(r.all_ignored && r.loss == 0.0);
    }

    #[test]
    fn eq6_weighting() {
        assert!((total_loss(1.0, 0.5, AUX_WEIGHT) - 1.2).abs() < 1e-15);
        assert_eq!(total_loss(0.7, 3.0, 0.0), 0.7);
    }
}
