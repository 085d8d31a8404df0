//! Scene-completion and semantic-completion scores.
//!
//! SC counts binary occupancy over OCCLUDED voxels; SSC counts per-class
//! overlap over VISIBLE and OCCLUDED voxels. Voxels whose ground truth is
//! IGNORE are never scored. Dataset scores sum counts before dividing.

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Result, SscError};
use crate::tensor::Tensor;
use crate::voxel_data::{EvalMask, LabelGrid, VoxelState, EMPTY, IGNORE};

/// Per-voxel argmax over the channel axis of a `[K, X, Y, Z]` score volume;
/// exact ties go to the lowest class index.
pub fn argmax_labels(scores: &Tensor) -> Result<LabelGrid> {
    let s = scores.shape();
    if s.len() != 4 || s[0] == 0 || s[0] > 255 {
        return Err(shape_err(format!("expected [K,X,Y,Z] scores, got {s:?}")));
    }
    let (k, n) = scores.channels();
    let d = scores.data();
    let labels = (0..n)
        .map(|p| {
            let mut best = 0;
            for c in 1..k {
                if d[c * n + p] > d[best * n + p] {
                    best = c;
                }
            }
            best as u8
        })
        .collect();
    LabelGrid::new([s[1], s[2], s[3]], labels)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub occluded: u64,
    pub inter: Vec<u64>,
    pub union: Vec<u64>,
    pub support: Vec<u64>,
}

impl EvalCounts {
    pub fn new(num_classes: usize) -> Self {
        EvalCounts {
            inter: vec![0; num_classes],
            union: vec![0; num_classes],
            support: vec![0; num_classes],
            ..Default::default()
        }
    }

    pub fn num_classes(&self) -> usize {
        self.inter.len()
    }

    /// Adds one scene's counts.
    pub fn accumulate(&mut self, pred: &LabelGrid, gt: &LabelGrid, mask: &EvalMask) -> Result<()> {
        if pred.dims != gt.dims || mask.dims != gt.dims {
            return Err(shape_err(format!("pred {:?}, gt {:?}, mask {:?}", pred.dims, gt.dims, mask.dims)));
        }
        let c = self.num_classes();
        for ((&p, &g), &st) in pred.labels.iter().zip(&gt.labels).zip(&mask.states) {
            if g == IGNORE || st == VoxelState::Outside {
                continue;
            }
            if p as usize > c && p != IGNORE {
                return Err(SscError::InvalidInput(format!("predicted label {p} exceeds class count {c}")));
            }
            if st == VoxelState::Occluded {
                self.occluded += 1;
                match (p != EMPTY, g != EMPTY) {
                    (true, true) => self.tp += 1,
                    (true, false) => self.fp += 1,
                    (false, true) => self.fn_ += 1,
                    _ => {}
                }
            }
            if g != EMPTY && (g as usize) <= c {
                self.support[g as usize - 1] += 1;
            } else if g != EMPTY {
                return Err(SscError::InvalidInput(format!("ground-truth label {g} exceeds class count {c}")));
            }
            if p == g {
                if g != EMPTY {
                    self.inter[g as usize - 1] += 1;
                    self.union[g as usize - 1] += 1;
                }
            } else {
                if p != EMPTY && p != IGNORE {
                    self.union[p as usize - 1] += 1;
                }
                if g != EMPTY {
                    self.union[g as usize - 1] += 1;
                }
            }
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &EvalCounts) -> Result<()> {
        if other.num_classes() != self.num_classes() {
            return Err(shape_err("class counts differ"));
        }
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
        self.occluded += other.occluded;
        for i in 0..self.num_classes() {
            self.inter[i] += other.inter[i];
            self.union[i] += other.union[i];
            self.support[i] += other.support[i];
        }
        Ok(())
    }

    /// `(precision, recall, iou)`; errors when nothing was OCCLUDED.
    pub fn sc(&self) -> Result<(f64, f64, f64)> {
        if self.occluded == 0 {
            return Err(SscError::EmptySelection("no occluded voxels".into()));
        }
        let ratio = |num: u64, den: u64, both_empty: bool| {
            if den == 0 {
                if both_empty { 1.0 } else { 0.0 }
            } else {
                num as f64 / den as f64
            }
        };
        let both_empty = self.tp + self.fp == 0 && self.tp + self.fn_ == 0;
        Ok((
            ratio(self.tp, self.tp + self.fp, both_empty),
            ratio(self.tp, self.tp + self.fn_, both_empty),
            ratio(self.tp, self.tp + self.fp + self.fn_, both_empty),
        ))
    }

    /// Per-class IoU (`None` where the union is empty) and their mean over
    /// the remaining classes; the mean is 1 if every union is empty.
    pub fn ssc(&self) -> (Vec<Option<f64>>, f64) {
        let per: Vec<Option<f64>> = self
            .inter
            .iter()
            .zip(&self.union)
            .map(|(&i, &u)| (u > 0).then(|| i as f64 / u as f64))
            .collect();
        let scored: Vec<f64> = per.iter().flatten().copied().collect();
        let miou = if scored.is_empty() { 1.0 } else { scored.iter().sum::<f64>() / scored.len() as f64 };
        (per, miou)
    }

    pub fn report(&self) -> Result<MetricsReport> {
        let (p, r, iou) = self.sc()?;
        let (per, miou) = self.ssc();
        Ok(MetricsReport {
            sc_precision: p,
            sc_recall: r,
            sc_iou: iou,
            per_class_iou: per,
            ssc_miou: miou,
            supports: self.support.clone(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub sc_precision: f64,
    pub sc_recall: f64,
    pub sc_iou: f64,
    /// `null` for classes absent from both prediction and ground truth.
    pub per_class_iou: Vec<Option<f64>>,
    pub ssc_miou: f64,
    pub supports: Vec<u64>,
}

pub fn sc_metrics(pred: &LabelGrid, gt: &LabelGrid, mask: &EvalMask) -> Result<(f64, f64, f64)> {
    let mut c = EvalCounts::new(255);
    c.accumulate(pred, gt, mask)?;
    c.sc()
}

pub fn ssc_miou(pred: &LabelGrid, gt: &LabelGrid, mask: &EvalMask, num_classes: usize) -> Result<(Vec<Option<f64>>, f64)> {
    let mut c = EvalCounts::new(num_classes);
    c.accumulate(pred, gt, mask)?;
    Ok(c.ssc())
}
