use super::{CameraIntrinsics, DepthImage, GridSpec, TsdfGrid};
use crate::error::{Result, SscError};

/// Projective TSDF: for each voxel center, the signed distance along its
/// camera ray to the observed surface, in units of `trunc`, clamped to
/// `[-1, 1]`. Positive in front of the surface, negative behind it; +1 where
/// the ray has no depth return.
pub fn tsdf_from_depth(
    depth: &DepthImage,
    intr: &CameraIntrinsics,
    grid: &GridSpec,
    trunc: f64,
) -> Result<TsdfGrid> {
    depth.check_against(intr)?;
    grid.validate()?;
    if !(trunc > 0.0) {
        return Err(SscError::Config(format!("truncation must be positive, got {trunc}")));
    }
    let [gx, gy, gz] = grid.dims;
    let mut values = vec![1.0f32; grid.len()];
    for i in 0..gx {
        for j in 0..gy {
            for k in 0..gz {
                let c = grid.center(i, j, k);
                let Some((u, v)) = intr.pixel_of(c) else { continue };
                let d = depth.get(u, v);
                if d <= 0.0 {
                    continue;
                }
                let len = (c[0] * c[0] + c[1] * c[1] + c[2] * c[2]).sqrt();
                let sd = len * (d / c[2] - 1.0);
                values[grid.index(i, j, k)] = (sd / trunc).clamp(-1.0, 1.0) as f32;
            }
        }
    }
    Ok(TsdfGrid { dims: grid.dims, values })
}
