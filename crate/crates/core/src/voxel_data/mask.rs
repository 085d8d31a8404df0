use serde::{Deserialize, Serialize};

use super::projection::surface_voxels;
use super::{CameraIntrinsics, DepthImage, EvalMask, GridSpec, VoxelState};
use crate::error::Result;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskCounts {
    pub visible: usize,
    pub occluded: usize,
    pub outside: usize,
}

impl MaskCounts {
    pub fn total(&self) -> usize {
        self.visible + self.occluded + self.outside
    }
}

/// VISIBLE: voxels holding an unprojected surface point. OCCLUDED: voxels
/// whose center projects into the image onto a pixel with a return and lies
/// strictly behind that surface. Everything else is OUTSIDE.
pub fn compute_eval_mask(depth: &DepthImage, intr: &CameraIntrinsics, grid: &GridSpec) -> Result<EvalMask> {
    depth.check_against(intr)?;
    let mut states = vec![VoxelState::Outside; grid.len()];
    for [i, j, k] in surface_voxels(depth, intr, grid)? {
        states[grid.index(i, j, k)] = VoxelState::Visible;
    }
    let [gx, gy, gz] = grid.dims;
    for i in 0..gx {
        for j in 0..gy {
            for k in 0..gz {
                let idx = grid.index(i, j, k);
                if states[idx] == VoxelState::Visible {
                    continue;
                }
                let c = grid.center(i, j, k);
                let Some((u, v)) = intr.pixel_of(c) else { continue };
                let d = depth.get(u, v);
                if d > 0.0 && c[2] > d {
                    states[idx] = VoxelState::Occluded;
                }
            }
        }
    }
    Ok(EvalMask { dims: grid.dims, states })
}
