use std::collections::BTreeMap;

use super::{CameraIntrinsics, DepthImage, GridSpec, SURFACE_NUDGE};
use crate::autodiff::SparseMap;
use crate::error::{shape_err, Result};
use crate::tensor::Tensor;

fn surface_point(intr: &CameraIntrinsics, u: usize, v: usize, d: f64) -> [f64; 3] {
    intr.unproject(u, v, d * (1.0 + SURFACE_NUDGE))
}

/// Voxels that contain at least one unprojected depth return, sorted.
pub fn surface_voxels(depth: &DepthImage, intr: &CameraIntrinsics, grid: &GridSpec) -> Result<Vec<[usize; 3]>> {
    depth.check_against(intr)?;
    let mut set = std::collections::BTreeSet::new();
    for v in 0..depth.height {
        for u in 0..depth.width {
            let d = depth.get(u, v);
            if d > 0.0 {
                if let Some(vox) = grid.voxel_of(surface_point(intr, u, v, d)) {
                    set.insert(vox);
                }
            }
        }
    }
    Ok(set.into_iter().collect())
}

/// Map from a feature map of `downscale`-times smaller resolution to the
/// voxel grid. Each pixel with a return contributes the feature cell
/// `(v / downscale, u / downscale)` to the voxel holding its surface point;
/// a voxel hit by several pixels averages their cells.
pub fn build_projection_map(
    depth: &DepthImage,
    intr: &CameraIntrinsics,
    grid: &GridSpec,
    downscale: usize,
) -> Result<SparseMap> {
    depth.check_against(intr)?;
    if downscale == 0 || depth.width % downscale != 0 || depth.height % downscale != 0 {
        return Err(shape_err(format!(
            "image {}x{} not divisible by {downscale}",
            depth.width, depth.height
        )));
    }
    let fw = depth.width / downscale;
    let mut counts: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    let mut totals: BTreeMap<usize, usize> = BTreeMap::new();
    for v in 0..depth.height {
        for u in 0..depth.width {
            let d = depth.get(u, v);
            if d <= 0.0 {
                continue;
            }
            let Some([i, j, k]) = grid.voxel_of(surface_point(intr, u, v, d)) else { continue };
            let vox = grid.index(i, j, k);
            let cell = (v / downscale) * fw + u / downscale;
            *counts.entry((vox, cell)).or_default() += 1;
            *totals.entry(vox).or_default() += 1;
        }
    }
    let triplets = counts
        .into_iter()
        .map(|((vox, cell), n)| (vox, cell, n as f64 / totals[&vox] as f64))
        .collect();
    Ok(SparseMap {
        in_len: (depth.height / downscale) * fw,
        out_len: grid.len(),
        triplets,
    })
}

/// Lifts a `[D, H', W', 1]` feature map onto the voxel grid, giving a
/// `[D, G_x, G_y, G_z]` volume that is zero away from observed surfaces.
/// `H'` and `W'` must divide the depth image size by the same integer.
pub fn project_2d_to_3d(
    feat2d: &Tensor,
    depth: &DepthImage,
    intr: &CameraIntrinsics,
    grid: &GridSpec,
) -> Result<Tensor> {
    let s = feat2d.shape();
    if s.len() != 4 || s[1] == 0 || s[2] == 0 || s[3] != 1 {
        return Err(shape_err(format!("feature map must be [D,H,W,1], got {s:?}")));
    }
    let scale = depth.height / s[1];
    if scale == 0 || s[1] * scale != depth.height || s[2] * scale != depth.width {
        return Err(shape_err(format!(
            "feature map {}x{} is not an integer downscale of {}x{}",
            s[1], s[2], depth.height, depth.width
        )));
    }
    let map = build_projection_map(depth, intr, grid, scale)?;
    map.apply(feat2d, &[s[0], grid.dims[0], grid.dims[1], grid.dims[2]])
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn setup() -> (CameraIntrinsics, GridSpec) {
        (
            CameraIntrinsics::with_size(16, 16),
            GridSpec::new([8, 8, 8], 0.25, [-1.0, -1.0, 0.5]).unwrap(),
        )
    }

    #[test]
    fn zero_features_give_zero_volume() {
        let (intr, grid) = setup();
        let depth = DepthImage::new(16, 16, vec![1.3; 256]).unwrap();
        let f = Tensor::zeros(&[3, 4, 4, 1]);
        let vol = project_2d_to_3d(&f, &depth, &intr, &grid).unwrap();
        assert_eq!(vol.shape(), &[3, 8, 8, 8]);
        assert!(vol.data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn single_pixel_scatter() {
        let (intr, grid) = setup();
        let mut depth = DepthImage::empty(16, 16);
        depth.values[5 * 16 + 9] = 1.3;
        let mut f = Tensor::zeros(&[1, 16, 16, 1]);
        f.data_mut()[5 * 16 + 9] = 2.5;
        let vol = project_2d_to_3d(&f, &depth, &intr, &grid).unwrap();
        let [i, j, k] = grid.voxel_of(intr.unproject(9, 5, 1.3)).unwrap();
        let target = grid.index(i, j, k);
        for (idx, &x) in vol.data().iter().enumerate() {
            assert_eq!(x, if idx == target { 2.5 } else { 0.0 });
        }
    }

    #[test]
    fn colliding_pixels_average() {
        let (intr, grid) = setup();
        // two neighbouring pixels far away land in the same voxel
        let d = 1.0;
        let u = (0..15)
            .find(|&u| grid.voxel_of(intr.unproject(u, 8, d)).is_some()
                && grid.voxel_of(intr.unproject(u, 8, d)) == grid.voxel_of(intr.unproject(u + 1, 8, d)))
            .unwrap();
        let mut depth = DepthImage::empty(16, 16);
        depth.values[8 * 16 + u] = d as f32;
        depth.values[8 * 16 + u + 1] = d as f32;
        let mut f = Tensor::zeros(&[1, 16, 16, 1]);
        f.data_mut()[8 * 16 + u] = 1.0;
        f.data_mut()[8 * 16 + u + 1] = 3.0;
        let a = grid.voxel_of(intr.unproject(u, 8, d)).unwrap();
        let vol = project_2d_to_3d(&f, &depth, &intr, &grid).unwrap();
        assert_eq!(vol.data()[grid.index(a[0], a[1], a[2])], 2.0);
    }

    #[test]
    fn nonzero_voxels_match_unprojection_loop() {
        let (intr, grid) = setup();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let vals: Vec<f32> = (0..256)
            .map(|_| if rng.gen_bool(0.2) { 0.0 } else { rng.gen_range(0.6..2.4) })
            .collect();
        let depth = DepthImage::new(16, 16, vals).unwrap();
        let f = Tensor::full(&[2, 4, 4, 1], 1.0);
        let vol = project_2d_to_3d(&f, &depth, &intr, &grid).unwrap();
        let nonzero = (0..grid.len()).filter(|&v| vol.data()[v] != 0.0).count();
        let mut oracle = std::collections::HashSet::new();
        for v in 0..16 {
            for u in 0..16 {
                let d = depth.get(u, v);
                if d > 0.0 {
                    let r = intr.ray(u, v);
                    let p = [r[0] * d * (1.0 + 1e-6), r[1] * d * (1.0 + 1e-6), d * (1.0 + 1e-6)];
                    if let Some(vx) = grid.voxel_of(p) {
                        oracle.insert(vx);
                    }
                }
            }
        }
        assert_eq!(nonzero, oracle.len());
    }

    #[test]
    fn scatter_and_gather_are_adjoint() {
        let (intr, grid) = setup();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let vals: Vec<f32> = (0..256).map(|_| rng.gen_range(0.0..2.5)).collect();
        let depth = DepthImage::new(16, 16, vals).unwrap();
        let map = build_projection_map(&depth, &intr, &grid, 4).unwrap();
        let f = Tensor::from_vec(&[3, 4, 4, 1], (0..48).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let g = Tensor::from_vec(&[3, 8, 8, 8], (0..1536).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
        let fwd = map.apply(&f, &[3, 8, 8, 8]).unwrap();
        let back = map.apply_transpose(&g, &[3, 4, 4, 1]);
        let (a, b) = (fwd.dot(&g), f.dot(&back));
        assert!((a - b).abs() <= 1e-6 * a.abs().max(b.abs()));
    }

    #[test]
    fn rejects_non_integer_downscale() {
        let (intr, grid) = setup();
        let depth = DepthImage::empty(16, 16);
        assert!(project_2d_to_3d(&Tensor::zeros(&[1, 5, 5, 1]), &depth, &intr, &grid).is_err());
        assert!(project_2d_to_3d(&Tensor::zeros(&[1, 4, 8, 1]), &depth, &intr, &grid).is_err());
    }
}
