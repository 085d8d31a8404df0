//! Segmentation and adversarial losses.

use std::sync::Arc;

use crate::autodiff::{CeTargets, Graph, PROB_CLAMP};
use crate::error::{shape_err, Result, SscError};
use crate::tensor::Tensor;
use crate::voxel_data::{
    CameraIntrinsics, DepthImage, EvalMask, GridSpec, LabelGrid, VoxelState, IGNORE, SURFACE_NUDGE,
};

/// Cross-entropy targets for every non-IGNORE voxel, restricted to voxels
/// not OUTSIDE the mask when one is given.
pub fn targets_3d(gt: &LabelGrid, mask: Option<&EvalMask>) -> CeTargets {
    Arc::new(
        gt.labels
            .iter()
            .enumerate()
            .filter(|&(i, &l)| l != IGNORE && mask.is_none_or(|m| m.states[i] != VoxelState::Outside))
            .map(|(i, &l)| (i, l))
            .collect(),
    )
}

/// Ground-truth label of the voxel holding each pixel's surface point,
/// row-major `v * W + u`; IGNORE for pixels without a return or whose point
/// falls outside the grid.
pub fn backproject_labels_2d(y: &LabelGrid, depth: &DepthImage, intr: &CameraIntrinsics, grid: &GridSpec) -> Result<Vec<u8>> {
    depth.check_against(intr)?;
    if y.dims != grid.dims {
        return Err(shape_err(format!("labels {:?} vs grid {:?}", y.dims, grid.dims)));
    }
    let mut out = vec![IGNORE; depth.width * depth.height];
    for v in 0..depth.height {
        for u in 0..depth.width {
            let d = depth.get(u, v);
            if d > 0.0 {
                if let Some([i, j, k]) = grid.voxel_of(intr.unproject(u, v, d * (1.0 + SURFACE_NUDGE))) {
                    out[v * depth.width + u] = y.labels[grid.index(i, j, k)];
                }
            }
        }
    }
    Ok(out)
}

/// Targets on a `downscale`-times smaller map: pixel `(u, v)` scores cell
/// `(v / downscale, u / downscale)`. IGNORE pixels are dropped.
pub fn targets_2d(labels: &[u8], width: usize, height: usize, downscale: usize) -> Result<CeTargets> {
    if labels.len() != width * height || width % downscale != 0 || height % downscale != 0 {
        return Err(shape_err("2D labels do not match the image size"));
    }
    let fw = width / downscale;
    Ok(Arc::new(
        labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l != IGNORE)
            .map(|(p, &l)| ((p / width / downscale) * fw + (p % width) / downscale, l))
            .collect(),
    ))
}

fn ce_value(logits: &Tensor, targets: CeTargets, eps: f64) -> Result<f64> {
    let mut g = Graph::new();
    let l = g.constant(logits.clone());
    let y = g.smooth_ce(l, targets, eps)?;
    Ok(g.value(y).item())
}

/// Mean smoothed cross entropy of `[C+1, X, Y, Z]` logits against `target`
/// over non-IGNORE voxels (and, with a mask, voxels not OUTSIDE).
pub fn smooth_ce(logits: &Tensor, target: &LabelGrid, eps: f64, mask: Option<&EvalMask>) -> Result<f64> {
    let s = logits.shape();
    if s.len() != 4 || s[1..] != target.dims {
        return Err(shape_err(format!("logits {s:?} vs labels {:?}", target.dims)));
    }
    if mask.is_some_and(|m| m.dims != target.dims) {
        return Err(shape_err("mask dims differ from labels"));
    }
    ce_value(logits, targets_3d(target, mask), eps)
}

/// `SCE(3D) + lambda * SCE(2D)`. `logits2d` is `[C+1, 1, H', W']` and
/// `labels2d` is a full-resolution `width x height` label image.
pub fn ssc_loss(
    logits: &Tensor,
    gt: &LabelGrid,
    logits2d: &Tensor,
    labels2d: &[u8],
    width: usize,
    lambda: f64,
    eps: f64,
) -> Result<f64> {
    if lambda < 0.0 {
        return Err(SscError::Config(format!("lambda must be non-negative, got {lambda}")));
    }
    let l3 = smooth_ce(logits, gt, eps, None)?;
    if lambda == 0.0 {
        return Ok(l3);
    }
    let height = labels2d.len() / width.max(1);
    let down = width / logits2d.shape()[3];
    let l2 = ce_value(logits2d, targets_2d(labels2d, width, height, down)?, eps)?;
    Ok(l3 + lambda * l2)
}

/// Discriminator probabilities for one sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdvScores {
    pub real: f64,
    pub generated: f64,
    pub geometric: f64,
    pub semantic: f64,
}

fn neg_log(p: f64) -> f64 {
    -p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP).ln()
}

/// `(L_D, L_G_adv)` averaged over the batch, with
/// `L_D = -[log D(Y) + log(1-D(Yhat)) + log(1-D(Y_G)) + log(1-D(Y_S))]` and
/// `L_G_adv = -log D(Yhat)`. Probabilities are clamped before the logs.
pub fn adv_losses(batch: &[AdvScores]) -> Result<(f64, f64)> {
    if batch.is_empty() {
        return Err(SscError::EmptySelection("empty batch".into()));
    }
    let n = batch.len() as f64;
    let mut ld = 0.0;
    let mut lg = 0.0;
    for s in batch {
        ld += neg_log(s.real) + neg_log(1.0 - s.generated) + neg_log(1.0 - s.geometric) + neg_log(1.0 - s.semantic);
        lg += neg_log(s.generated);
    }
    Ok((ld / n, lg / n))
}
