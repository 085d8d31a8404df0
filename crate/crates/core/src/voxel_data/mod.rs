//! Scene geometry: voxel grids, camera model, TSDF, the 2D→3D feature
//! projection, evaluation masks, synthetic scenes and the grid file format.
//!
//! Coordinates are camera coordinates throughout: x right, y down, z along
//! the optical axis. Voxel `(i, j, k)` spans
//! `origin + [i, i+1) * voxel_size` on x (likewise y, z). Flat indices are
//! `(i * G_y + j) * G_z + k`.

mod io;
mod mask;
mod projection;
mod synth;
mod tsdf;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SscError};

pub use io::{
    decode_grid, encode_grid, read_grid, read_scene, write_grid, write_scene, GridPayload,
    GRID_HEADER_LEN,
};
pub use mask::{compute_eval_mask, MaskCounts};
pub use projection::{build_projection_map, project_2d_to_3d, surface_voxels};
pub use synth::{gen_synthetic_scene, palette, SceneSpec};
pub use tsdf::tsdf_from_depth;

/// Label value for voxels that are never scored or supervised.
pub const IGNORE: u8 = 255;
/// Label value of free space.
pub const EMPTY: u8 = 0;

/// Rendered surface points sit exactly on voxel faces; scaling the point by
/// this factor along its ray assigns it to the voxel behind the face.
pub const SURFACE_NUDGE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub dims: [usize; 3],
    pub voxel_size: f64,
    pub origin: [f64; 3],
}

impl GridSpec {
    pub fn new(dims: [usize; 3], voxel_size: f64, origin: [f64; 3]) -> Result<Self> {
        let g = GridSpec { dims, voxel_size, origin };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.iter().any(|&d| d < 4) {
            return Err(SscError::Config(format!("grid dims {:?} must all be >= 4", self.dims)));
        }
        if !(self.voxel_size > 0.0 && self.voxel_size.is_finite()) {
            return Err(SscError::Config("voxel size must be positive".into()));
        }
        Ok(())
    }

    /// 20×12×20 voxels of 0.2 units; the camera sits 1.2 units above the
    /// floor plane, 0.6 units in front of the volume.
    pub fn desk() -> Self {
        GridSpec { dims: [20, 12, 20], voxel_size: 0.2, origin: [-2.0, -1.2, 0.6] }
    }

    /// 60×36×60 voxels covering the same room at 0.08 units per voxel.
    pub fn paper_scale() -> Self {
        GridSpec { dims: [60, 36, 60], voxel_size: 0.08, origin: [-2.4, -1.44, 0.6] }
    }

    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.dims[1] + j) * self.dims[2] + k
    }

    pub fn coords(&self, idx: usize) -> [usize; 3] {
        let k = idx % self.dims[2];
        let j = (idx / self.dims[2]) % self.dims[1];
        let i = idx / (self.dims[1] * self.dims[2]);
        [i, j, k]
    }

    pub fn center(&self, i: usize, j: usize, k: usize) -> [f64; 3] {
        let s = self.voxel_size;
        [
            self.origin[0] + (i as f64 + 0.5) * s,
            self.origin[1] + (j as f64 + 0.5) * s,
            self.origin[2] + (k as f64 + 0.5) * s,
        ]
    }

    /// Voxel containing `p`, if inside the grid.
    pub fn voxel_of(&self, p: [f64; 3]) -> Option<[usize; 3]> {
        let mut out = [0; 3];
        for a in 0..3 {
            let f = ((p[a] - self.origin[a]) / self.voxel_size).floor();
            if !(f >= 0.0 && f < self.dims[a] as f64) {
                return None;
            }
            out[a] = f as usize;
        }
        Some(out)
    }

    pub fn bounds(&self) -> ([f64; 3], [f64; 3]) {
        let mut hi = self.origin;
        for (a, h) in hi.iter_mut().enumerate() {
            *h += self.dims[a] as f64 * self.voxel_size;
        }
        (self.origin, hi)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        let c = CameraIntrinsics { fx, fy, cx, cy, width, height };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(SscError::Config("focal lengths must be positive".into()));
        }
        if !(self.cx >= 0.0 && self.cx < self.width as f64 && self.cy >= 0.0 && self.cy < self.height as f64) {
            return Err(SscError::Config("principal point outside the image".into()));
        }
        Ok(())
    }

    /// 90° horizontal field of view.
    pub fn with_size(width: usize, height: usize) -> Self {
        CameraIntrinsics {
            fx: width as f64 / 2.0,
            fy: width as f64 / 2.0,
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
            width,
            height,
        }
    }

    pub fn desk() -> Self {
        Self::with_size(64, 48)
    }

    /// Direction (with unit z) of the ray through the center of pixel `(u, v)`.
    pub fn ray(&self, u: usize, v: usize) -> [f64; 3] {
        [
            (u as f64 + 0.5 - self.cx) / self.fx,
            (v as f64 + 0.5 - self.cy) / self.fy,
            1.0,
        ]
    }

    /// Pixel containing the projection of `p`, if `p` is in front of the
    /// camera and inside the image.
    pub fn pixel_of(&self, p: [f64; 3]) -> Option<(usize, usize)> {
        if p[2] <= 0.0 {
            return None;
        }
        let u = (self.fx * p[0] / p[2] + self.cx).floor();
        let v = (self.fy * p[1] / p[2] + self.cy).floor();
        if u >= 0.0 && v >= 0.0 && u < self.width as f64 && v < self.height as f64 {
            Some((u as usize, v as usize))
        } else {
            None
        }
    }

    /// Camera-space point seen at pixel `(u, v)` with z-depth `d`.
    pub fn unproject(&self, u: usize, v: usize, d: f64) -> [f64; 3] {
        let r = self.ray(u, v);
        [r[0] * d, r[1] * d, d]
    }
}

/// Row-major z-depth image; 0 means no return.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthImage {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f32>,
}

impl DepthImage {
    pub fn new(width: usize, height: usize, values: Vec<f32>) -> Result<Self> {
        if values.len() != width * height {
            return Err(SscError::Shape("depth image size".into()));
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(SscError::InvalidInput("depth values must be finite and non-negative".into()));
        }
        Ok(DepthImage { width, height, values })
    }

    pub fn empty(width: usize, height: usize) -> Self {
        DepthImage { width, height, values: vec![0.0; width * height] }
    }

    pub fn get(&self, u: usize, v: usize) -> f64 {
        self.values[v * self.width + u] as f64
    }

    pub(crate) fn check_against(&self, intr: &CameraIntrinsics) -> Result<()> {
        if self.width != intr.width || self.height != intr.height {
            return Err(SscError::Shape(format!(
                "depth {}x{} vs camera {}x{}",
                self.width, self.height, intr.width, intr.height
            )));
        }
        Ok(())
    }

    /// Mirrors the image left-right.
    pub fn flipped(&self) -> Self {
        let mut out = self.clone();
        for v in 0..self.height {
            for u in 0..self.width {
                out.values[v * self.width + u] = self.values[v * self.width + self.width - 1 - u];
            }
        }
        out
    }
}

/// Row-major RGB image, channels interleaved, values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f32>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, values: Vec<f32>) -> Result<Self> {
        if values.len() != width * height * 3 {
            return Err(SscError::Shape("rgb image size".into()));
        }
        Ok(RgbImage { width, height, values: values.into_iter().map(|v| v.clamp(0.0, 1.0)).collect() })
    }

    pub fn flipped(&self) -> Self {
        let mut out = self.clone();
        for v in 0..self.height {
            for u in 0..self.width {
                for c in 0..3 {
                    out.values[(v * self.width + u) * 3 + c] =
                        self.values[(v * self.width + self.width - 1 - u) * 3 + c];
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelGrid {
    pub dims: [usize; 3],
    pub labels: Vec<u8>,
}

impl LabelGrid {
    pub fn new(dims: [usize; 3], labels: Vec<u8>) -> Result<Self> {
        if labels.len() != dims.iter().product::<usize>() {
            return Err(SscError::Shape("label grid size".into()));
        }
        Ok(LabelGrid { dims, labels })
    }

    pub fn empty(dims: [usize; 3]) -> Self {
        LabelGrid { dims, labels: vec![EMPTY; dims.iter().product()] }
    }

    /// Checks that every label is `IGNORE` or at most `num_classes`.
    pub fn validate(&self, num_classes: usize) -> Result<()> {
        match self.labels.iter().find(|&&l| l != IGNORE && l as usize > num_classes) {
            Some(l) => Err(SscError::InvalidInput(format!("label {l} exceeds class count {num_classes}"))),
            None => Ok(()),
        }
    }

    /// Distinct non-empty, non-ignored classes in ascending order.
    pub fn present_classes(&self) -> Vec<u8> {
        let mut seen = [false; 256];
        for &l in &self.labels {
            seen[l as usize] = true;
        }
        (1..255u8).filter(|&c| seen[c as usize]).collect()
    }

    pub fn occupied_count(&self) -> usize {
        self.labels.iter().filter(|&&l| l != EMPTY && l != IGNORE).count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TsdfGrid {
    pub dims: [usize; 3],
    pub values: Vec<f32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum VoxelState {
    Visible,
    Occluded,
    Outside,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvalMask {
    pub dims: [usize; 3],
    pub states: Vec<VoxelState>,
}

impl EvalMask {
    pub fn all(dims: [usize; 3], state: VoxelState) -> Self {
        EvalMask { dims, states: vec![state; dims.iter().product()] }
    }

    pub fn counts(&self) -> MaskCounts {
        let mut c = MaskCounts::default();
        for s in &self.states {
            match s {
                VoxelState::Visible => c.visible += 1,
                VoxelState::Occluded => c.occluded += 1,
                VoxelState::Outside => c.outside += 1,
            }
        }
        c
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub seed: u64,
    pub num_classes: usize,
    pub trunc: f64,
    pub rgb: RgbImage,
    pub depth: DepthImage,
    pub intrinsics: CameraIntrinsics,
    pub gt: LabelGrid,
    pub tsdf: TsdfGrid,
    pub mask: EvalMask,
    pub grid: GridSpec,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_rejects_tiny_dims_and_bad_voxel_size() {
        assert!(GridSpec::new([3, 8, 8], 0.1, [0.0; 3]).is_err());
        assert!(GridSpec::new([8, 8, 8], 0.0, [0.0; 3]).is_err());
        assert!(GridSpec::new([4, 4, 4], 0.1, [0.0; 3]).is_ok());
    }

    #[test]
    fn index_and_coords_are_inverse() {
        let g = GridSpec::desk();
        for idx in [0, 1, 19, 20, 239, 240, 4799] {
            let [i, j, k] = g.coords(idx);
            assert_eq!(g.index(i, j, k), idx);
        }
    }

    #[test]
    fn intrinsics_validation() {
        assert!(CameraIntrinsics::new(0.0, 1.0, 1.0, 1.0, 4, 4).is_err());
        assert!(CameraIntrinsics::new(1.0, 1.0, 4.0, 1.0, 4, 4).is_err());
        assert!(CameraIntrinsics::desk().validate().is_ok());
    }

    #[test]
    fn project_unproject_round_trip() {
        let c = CameraIntrinsics::desk();
        let p = c.unproject(10, 7, 2.5);
        assert_eq!(c.pixel_of(p), Some((10, 7)));
        assert_eq!(c.pixel_of([0.0, 0.0, -1.0]), None);
    }

    #[test]
    fn depth_rejects_negative_values() {
        assert!(DepthImage::new(2, 1, vec![0.0, -1.0]).is_err());
        assert!(DepthImage::new(2, 1, vec![0.0, f32::NAN]).is_err());
    }
}
