//! Procedural indoor scenes: a floor, one or two walls and a handful of
//! axis-aligned furniture boxes, rendered into depth and color by casting one
//! ray per pixel through the label volume.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    compute_eval_mask, tsdf_from_depth, CameraIntrinsics, DepthImage, GridSpec, LabelGrid, RgbImage, Scene,
    EMPTY,
};
use crate::error::{Result, SscError};

pub const FLOOR: u8 = 1;
pub const WALL: u8 = 2;

/// Everything besides the seed that determines a synthetic scene.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub grid: GridSpec,
    pub intrinsics: CameraIntrinsics,
    pub num_classes: usize,
    /// TSDF truncation distance in scene units.
    pub trunc: f64,
}

impl SceneSpec {
    pub fn desk(num_classes: usize) -> Self {
        let grid = GridSpec::desk();
        SceneSpec {
            grid,
            intrinsics: CameraIntrinsics::desk(),
            num_classes,
            trunc: 3.0 * grid.voxel_size,
        }
    }

    pub fn paper_scale(num_classes: usize) -> Self {
        let grid = GridSpec::paper_scale();
        SceneSpec {
            grid,
            intrinsics: CameraIntrinsics::with_size(160, 120),
            num_classes,
            trunc: 3.0 * grid.voxel_size,
        }
    }
}

/// Base color per class; class 0 (and anything unknown) is black.
pub fn palette(class: u8) -> [f32; 3] {
    if class == EMPTY {
        return [0.0; 3];
    }
    // golden-angle hue walk gives well separated colors for small indices
    let h = (class as f64 * 0.618_033_988_75).fract() * 6.0;
    let x = 1.0 - (h % 2.0 - 1.0).abs();
    let (r, g, b) = match h as u32 {
        0 => (1.0, x, 0.0),
        1 => (x, 1.0, 0.0),
        2 => (0.0, 1.0, x),
        3 => (0.0, x, 1.0),
        4 => (x, 0.0, 1.0),
        _ => (1.0, 0.0, x),
    };
    let (s, v) = (0.6, 0.85);
    let f = |c: f64| (v * (1.0 - s + s * c)) as f32;
    [f(r), f(g), f(b)]
}

/// Footprint (x, z) and height ranges of a furniture class, in voxels of the
/// 20-wide desk grid.
fn furniture_shape(class: u8) -> ([usize; 2], [usize; 2], [usize; 2]) {
    match class.saturating_sub(3) % 4 {
        0 => ([3, 6], [3, 5], [1, 2]), // low and wide
        1 => ([2, 3], [2, 3], [3, 6]), // tall and narrow
        2 => ([2, 2], [2, 2], [2, 3]), // small
        _ => ([4, 6], [2, 3], [2, 2]), // long
    }
}

/// Deterministic scene for `seed`.
pub fn gen_synthetic_scene(seed: u64, spec: &SceneSpec) -> Result<Scene> {
    let grid = spec.grid;
    grid.validate()?;
    spec.intrinsics.validate()?;
    if spec.num_classes < 2 || spec.num_classes > 254 {
        return Err(SscError::Config(format!("class count {} outside 2..=254", spec.num_classes)));
    }
    let [gx, gy, gz] = grid.dims;
    if gx < 4 || gy < 4 || gz < 4 {
        return Err(SscError::Config("grid too small for floor and walls".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut gt = LabelGrid::empty(grid.dims);

    let floor_j = gy - 1;
    for i in 0..gx {
        for k in 0..gz {
            gt.labels[grid.index(i, floor_j, k)] = FLOOR;
        }
    }
    for i in 0..gx {
        for j in 0..floor_j {
            gt.labels[grid.index(i, j, gz - 1)] = WALL;
        }
    }
    let side_wall = match rng.gen_range(0..3) {
        0 => Some(0),
        1 => Some(gx - 1),
        _ => None,
    };
    if let Some(i) = side_wall {
        for j in 0..floor_j {
            for k in 0..gz {
                gt.labels[grid.index(i, j, k)] = WALL;
            }
        }
    }

    let scale = gx as f64 / 20.0;
    let scaled = |r: [usize; 2]| -> [usize; 2] {
        let lo = ((r[0] as f64 * scale).round() as usize).max(1);
        let hi = ((r[1] as f64 * scale).round() as usize).max(lo);
        [lo, hi]
    };
    let (x_lo, x_hi) = (1, gx - 1);
    let (z_lo, z_hi) = (gz / 4, gz - 1);
    let n_boxes = rng.gen_range(2..=6);
    let classes: Vec<u8> = if spec.num_classes >= 3 {
        (3..=spec.num_classes as u8).collect()
    } else {
        vec![WALL]
    };
    let mut placed: Vec<([usize; 3], [usize; 3])> = Vec::new();
    for _ in 0..n_boxes {
        let class = classes[rng.gen_range(0..classes.len())];
        let (fx, fz, fh) = furniture_shape(class);
        let (fx, fz) = (scaled(fx), scaled(fz));
        let fh = [
            ((fh[0] as f64 * gy as f64 / 12.0).round() as usize).max(1),
            ((fh[1] as f64 * gy as f64 / 12.0).round() as usize).max(1),
        ];
        for _attempt in 0..20 {
            let mut w = rng.gen_range(fx[0]..=fx[1]);
            let mut d = rng.gen_range(fz[0]..=fz[1]);
            if rng.gen_bool(0.5) {
                std::mem::swap(&mut w, &mut d);
            }
            let h = rng.gen_range(fh[0]..=fh[1]).min(floor_j - 1);
            if w >= x_hi - x_lo || d >= z_hi - z_lo {
                continue;
            }
            let i0 = rng.gen_range(x_lo..=x_hi - w);
            let k0 = rng.gen_range(z_lo..=z_hi - d);
            let lo = [i0, floor_j - h, k0];
            let hi = [i0 + w, floor_j, k0 + d];
            let overlaps = placed
                .iter()
                .any(|(a, b)| (0..3).all(|ax| lo[ax] < b[ax] + 1 && a[ax] < hi[ax] + 1));
            if overlaps {
                continue;
            }
            for i in lo[0]..hi[0] {
                for j in lo[1]..hi[1] {
                    for k in lo[2]..hi[2] {
                        gt.labels[grid.index(i, j, k)] = class;
                    }
                }
            }
            placed.push((lo, hi));
            break;
        }
    }

    let intr = spec.intrinsics;
    let (w, h) = (intr.width, intr.height);
    let mut depth = vec![0.0f32; w * h];
    let mut rgb = vec![0.0f32; w * h * 3];
    for v in 0..h {
        for u in 0..w {
            let Some(hit) = cast_ray(&gt, &grid, intr.ray(u, v)) else { continue };
            depth[v * w + u] = hit.depth as f32;
            let base = palette(hit.label);
            let shade = [0.8f32, 1.0, 0.9][hit.axis];
            for c in 0..3 {
                let noise: f32 = rng.gen_range(-0.05..0.05);
                rgb[(v * w + u) * 3 + c] = (base[c] * shade + noise).clamp(0.0, 1.0);
            }
        }
    }
    let depth = DepthImage::new(w, h, depth)?;
    let rgb = RgbImage::new(w, h, rgb)?;
    let tsdf = tsdf_from_depth(&depth, &intr, &grid, spec.trunc)?;
    let mask = compute_eval_mask(&depth, &intr, &grid)?;
    Ok(Scene {
        seed,
        num_classes: spec.num_classes,
        trunc: spec.trunc,
        rgb,
        depth,
        intrinsics: intr,
        gt,
        tsdf,
        mask,
        grid,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct RayHit {
    /// Ray parameter at entry into the hit voxel; equals z-depth because the
    /// ray direction has unit z.
    pub depth: f64,
    pub label: u8,
    /// Axis of the face the ray entered through.
    pub axis: usize,
}

/// Voxel traversal from the camera center along `dir` (unit z component);
/// returns the first non-empty voxel.
pub(crate) fn cast_ray(gt: &LabelGrid, grid: &GridSpec, dir: [f64; 3]) -> Option<RayHit> {
    let (lo, hi) = grid.bounds();
    let mut t_enter = 0.0f64;
    let mut t_exit = f64::INFINITY;
    let mut enter_axis = 2;
    for a in 0..3 {
        if dir[a] == 0.0 {
            if 0.0 < lo[a] || 0.0 >= hi[a] {
                return None;
            }
            continue;
        }
        let (t0, t1) = {
            let ta = lo[a] / dir[a];
            let tb = hi[a] / dir[a];
            if ta < tb { (ta, tb) } else { (tb, ta) }
        };
        if t0 > t_enter {
            t_enter = t0;
            enter_axis = a;
        }
        t_exit = t_exit.min(t1);
    }
    if t_enter >= t_exit {
        return None;
    }
    let s = grid.voxel_size;
    let mut idx = [0isize; 3];
    let mut step = [0isize; 3];
    let mut t_max = [f64::INFINITY; 3];
    let mut t_delta = [f64::INFINITY; 3];
    let t_mid = t_enter + 1e-9 * (1.0 + t_enter);
    for a in 0..3 {
        let p = dir[a] * t_mid;
        let cell = ((p - grid.origin[a]) / s).floor() as isize;
        idx[a] = cell.clamp(0, grid.dims[a] as isize - 1);
        if dir[a] > 0.0 {
            step[a] = 1;
            t_max[a] = (grid.origin[a] + (idx[a] + 1) as f64 * s) / dir[a];
            t_delta[a] = s / dir[a];
        } else if dir[a] < 0.0 {
            step[a] = -1;
            t_max[a] = (grid.origin[a] + idx[a] as f64 * s) / dir[a];
            t_delta[a] = -s / dir[a];
        }
    }
    let mut t = t_enter;
    let mut axis = enter_axis;
    loop {
        let label = gt.labels[grid.index(idx[0] as usize, idx[1] as usize, idx[2] as usize)];
        if label != EMPTY {
            return Some(RayHit { depth: t, label, axis });
        }
        let a = (0..3).min_by(|&x, &y| t_max[x].total_cmp(&t_max[y])).unwrap();
        t = t_max[a];
        axis = a;
        idx[a] += step[a];
        if idx[a] < 0 || idx[a] >= grid.dims[a] as isize {
            return None;
        }
        t_max[a] += t_delta[a];
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_scene() {
        let spec = SceneSpec::desk(11);
        let a = gen_synthetic_scene(42, &spec).unwrap();
        let b = gen_synthetic_scene(42, &spec).unwrap();
        assert_eq!(a, b);
        let c = gen_synthetic_scene(43, &spec).unwrap();
        assert_ne!(a.gt, c.gt);
    }

    #[test]
    fn seed_zero_has_empty_and_two_classes() {
        let s = gen_synthetic_scene(0, &SceneSpec::desk(11)).unwrap();
        assert_eq!(s.gt.dims, [20, 12, 20]);
        assert!(s.gt.labels.contains(&0));
        let present = s.gt.present_classes();
        assert!(present.len() >= 2 && present.iter().all(|&c| (1..=11).contains(&c)));
    }

    #[test]
    fn rejects_degenerate_class_count() {
        assert!(gen_synthetic_scene(0, &SceneSpec::desk(1)).is_err());
        assert!(gen_synthetic_scene(0, &SceneSpec::desk(2)).is_ok());
    }

    /// Brute force: slab-intersect the ray with every occupied voxel's box and
    /// keep the nearest entry.
    fn oracle_depth(gt: &LabelGrid, grid: &GridSpec, dir: [f64; 3]) -> Option<f64> {
        let mut best: Option<f64> = None;
        for idx in 0..grid.len() {
            if gt.labels[idx] == EMPTY {
                continue;
            }
            let [i, j, k] = grid.coords(idx);
            let lo = [
                grid.origin[0] + i as f64 * grid.voxel_size,
                grid.origin[1] + j as f64 * grid.voxel_size,
                grid.origin[2] + k as f64 * grid.voxel_size,
            ];
            let (mut t0, mut t1) = (0.0f64, f64::INFINITY);
            let mut ok = true;
            for a in 0..3 {
                let hi = lo[a] + grid.voxel_size;
                if dir[a] == 0.0 {
                    ok &= 0.0 >= lo[a] && 0.0 < hi;
                    continue;
                }
                let (ta, tb) = (lo[a] / dir[a], hi / dir[a]);
                t0 = t0.max(ta.min(tb));
                t1 = t1.min(ta.max(tb));
            }
            if ok && t0 < t1 {
                best = Some(best.map_or(t0, |b: f64| b.min(t0)));
            }
        }
        best
    }

    #[test]
    fn rendered_depth_matches_brute_force_ray_cast() {
        for seed in [0u64, 1, 2] {
            let s = gen_synthetic_scene(seed, &SceneSpec::desk(11)).unwrap();
            let intr = s.intrinsics;
            let mut hits = 0;
            for v in 0..intr.height {
                for u in 0..intr.width {
                    let want = oracle_depth(&s.gt, &s.grid, intr.ray(u, v));
                    let got = s.depth.get(u, v);
                    match want {
                        Some(d) => {
                            hits += 1;
                            assert!((got - d).abs() < 1e-5, "seed {seed} pixel ({u},{v}): {got} vs {d}");
                        }
                        None => assert_eq!(got, 0.0),
                    }
                }
            }
            assert!(hits > intr.width * intr.height / 4, "seed {seed}: {hits} hits");
        }
    }

    #[test]
    fn surface_points_land_on_labelled_voxels() {
        let s = gen_synthetic_scene(5, &SceneSpec::desk(11)).unwrap();
        for v in 0..s.intrinsics.height {
            for u in 0..s.intrinsics.width {
                let d = s.depth.get(u, v);
                if d > 0.0 {
                    let p = s.intrinsics.unproject(u, v, d * (1.0 + super::super::SURFACE_NUDGE));
                    let [i, j, k] = s.grid.voxel_of(p).unwrap();
                    assert_ne!(s.gt.labels[s.grid.index(i, j, k)], EMPTY);
                }
            }
        }
    }

    #[test]
    fn colors_are_in_unit_range() {
        let s = gen_synthetic_scene(9, &SceneSpec::desk(11)).unwrap();
        assert!(s.rgb.values.iter().all(|v| (0.0..=1.0).contains(v)));
    }
}
