//! Training samples, dataset splits and data augmentation.

use std::path::Path;
use std::sync::Arc;

use rand::{Rng, RngCore};

use super::losses::backproject_labels_2d;
use crate::autodiff::SparseMap;
use crate::error::{Result, SscError};
use crate::generator::GenInputs;
use crate::parallel;
use crate::rng::{indexed, Stream};
use crate::tensor::Tensor;
use crate::voxel_data::{gen_synthetic_scene, read_scene, write_scene, EvalMask, LabelGrid, Scene, SceneSpec};

pub const SPLITS: [&str; 3] = ["train", "val", "test"];

/// A scene converted to network inputs and targets.
#[derive(Debug, Clone)]
pub struct Sample {
    pub seed: u64,
    pub inputs: GenInputs,
    pub gt: LabelGrid,
    pub mask: EvalMask,
    /// Full-resolution 2D labels, row-major `v * width + u`.
    pub labels2d: Vec<u8>,
    pub width: usize,
}

impl Sample {
    pub fn from_scene(scene: &Scene) -> Result<Self> {
        Ok(Sample {
            seed: scene.seed,
            inputs: GenInputs::from_scene(scene)?,
            gt: scene.gt.clone(),
            mask: scene.mask.clone(),
            labels2d: backproject_labels_2d(&scene.gt, &scene.depth, &scene.intrinsics, &scene.grid)?,
            width: scene.depth.width,
        })
    }
}

/// Seeds for `counts` train/val/test scenes; all distinct.
pub fn scene_seeds(seed: u64, counts: [usize; 3]) -> [Vec<u64>; 3] {
    let mut next = 0u64;
    let mut take = |n: usize| -> Vec<u64> {
        (0..n)
            .map(|_| {
                next += 1;
                indexed(seed, Stream::Data, next).next_u64()
            })
            .collect()
    };
    [take(counts[0]), take(counts[1]), take(counts[2])]
}

pub fn generate_scenes(seed: u64, counts: [usize; 3], spec: &SceneSpec) -> Result<[Vec<Scene>; 3]> {
    let seeds = scene_seeds(seed, counts);
    let gen = |s: &Vec<u64>| -> Result<Vec<Scene>> { parallel::map(s, |&x| gen_synthetic_scene(x, spec)).into_iter().collect() };
    Ok([gen(&seeds[0])?, gen(&seeds[1])?, gen(&seeds[2])?])
}

/// Writes `dir/<split>/<index>/` scene bundles.
pub fn write_dataset(dir: &Path, scenes: &[Vec<Scene>; 3]) -> Result<()> {
    for (name, split) in SPLITS.iter().zip(scenes) {
        for (i, s) in split.iter().enumerate() {
            write_scene(dir.join(name).join(format!("{i:04}")), s)?;
        }
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub num_classes: usize,
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
    pub test: Vec<Sample>,
}

impl Dataset {
    pub fn from_scenes(scenes: &[Vec<Scene>; 3]) -> Result<Self> {
        let num_classes = scenes
            .iter()
            .flatten()
            .map(|s| s.num_classes)
            .max()
            .ok_or_else(|| SscError::InvalidInput("dataset is empty".into()))?;
        if scenes.iter().flatten().any(|s| s.num_classes != num_classes) {
            return Err(SscError::InvalidInput("scenes disagree on the class count".into()));
        }
        let conv = |v: &Vec<Scene>| -> Result<Vec<Sample>> { parallel::map(v, Sample::from_scene).into_iter().collect() };
        let ds = Dataset { num_classes, train: conv(&scenes[0])?, val: conv(&scenes[1])?, test: conv(&scenes[2])? };
        ds.check_disjoint()?;
        Ok(ds)
    }

    pub fn generate(seed: u64, counts: [usize; 3], spec: &SceneSpec) -> Result<Self> {
        Self::from_scenes(&generate_scenes(seed, counts, spec)?)
    }

    /// Loads `dir/<split>/*` bundles in name order.
    pub fn load(dir: &Path) -> Result<Self> {
        let mut scenes: [Vec<Scene>; 3] = Default::default();
        for (name, out) in SPLITS.iter().zip(scenes.iter_mut()) {
            let sd = dir.join(name);
            if !sd.is_dir() {
                continue;
            }
            let mut entries: Vec<_> = std::fs::read_dir(&sd)?.filter_map(|e| e.ok()).map(|e| e.path()).filter(|p| p.is_dir()).collect();
            entries.sort();
            for p in entries {
                out.push(read_scene(&p)?);
            }
        }
        Self::from_scenes(&scenes)
    }

    pub fn split(&self, name: &str) -> Result<&[Sample]> {
        match name {
            "train" => Ok(&self.train),
            "val" => Ok(&self.val),
            "test" => Ok(&self.test),
            other => Err(SscError::InvalidInput(format!("unknown split {other}"))),
        }
    }

    fn check_disjoint(&self) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        for s in self.train.iter().chain(&self.val).chain(&self.test) {
            if !seen.insert(s.seed) {
                return Err(SscError::InvalidInput(format!("scene seed {} appears in more than one place", s.seed)));
            }
        }
        Ok(())
    }
}

/// Random flips of the x and z axes, an x-z swap of the volumes, and a
/// horizontal flip of the image. Volumes, labels and the 2D-to-3D mapping
/// are transformed together so they stay aligned.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Augment {
    pub flip_x: bool,
    pub flip_z: bool,
    pub swap_xz: bool,
    pub flip_2d: bool,
}

impl Augment {
    pub fn sample<R: Rng>(rng: &mut R, dims: [usize; 3], aug3d: bool, aug2d: bool) -> Self {
        let mut a = Augment::default();
        if aug3d {
            a.flip_x = rng.gen();
            a.flip_z = rng.gen();
            let swap: bool = rng.gen();
            a.swap_xz = swap && dims[0] == dims[2];
        }
        if aug2d {
            a.flip_2d = rng.gen();
        }
        a
    }

    pub fn is_identity(&self) -> bool {
        *self == Augment::default()
    }

    /// New flat index of voxel `idx`.
    pub fn map_voxel(&self, dims: [usize; 3], idx: usize) -> usize {
        let [x, y, z] = dims;
        let (mut i, j, mut k) = (idx / (y * z), (idx / z) % y, idx % z);
        if self.flip_x {
            i = x - 1 - i;
        }
        if self.flip_z {
            k = z - 1 - k;
        }
        if self.swap_xz {
            (k * y + j) * x + i
        } else {
            (i * y + j) * z + k
        }
    }

    fn out_dims(&self, [x, y, z]: [usize; 3]) -> [usize; 3] {
        if self.swap_xz {
            [z, y, x]
        } else {
            [x, y, z]
        }
    }

    pub fn apply_labels(&self, g: &LabelGrid) -> LabelGrid {
        let mut out = g.labels.clone();
        for (i, &l) in g.labels.iter().enumerate() {
            out[self.map_voxel(g.dims, i)] = l;
        }
        LabelGrid { dims: self.out_dims(g.dims), labels: out }
    }

    pub fn apply(&self, s: &Sample) -> Result<Sample> {
        if self.is_identity() {
            return Ok(s.clone());
        }
        let dims = s.gt.dims;
        let od = self.out_dims(dims);
        let mut tsdf = s.inputs.tsdf.data().to_vec();
        let mut states = s.mask.states.clone();
        for i in 0..tsdf.len() {
            let j = self.map_voxel(dims, i);
            tsdf[j] = s.inputs.tsdf.data()[i];
            states[j] = s.mask.states[i];
        }
        let rs = s.inputs.rgb.shape().to_vec();
        let (h, w) = (rs[2], rs[3]);
        let fw = w / 4;
        let mut rgb = s.inputs.rgb.data().to_vec();
        let mut labels2d = s.labels2d.clone();
        if self.flip_2d {
            for c in 0..3 {
                for v in 0..h {
                    for u in 0..w {
                        rgb[(c * h + v) * w + u] = s.inputs.rgb.data()[(c * h + v) * w + (w - 1 - u)];
                    }
                }
            }
            for v in 0..h {
                for u in 0..w {
                    labels2d[v * w + u] = s.labels2d[v * w + (w - 1 - u)];
                }
            }
        }
        let flip_cell = |c: usize| if self.flip_2d { (c / fw) * fw + (fw - 1 - c % fw) } else { c };
        let proj = SparseMap {
            in_len: s.inputs.proj.in_len,
            out_len: s.inputs.proj.out_len,
            triplets: s.inputs.proj.triplets.iter().map(|&(o, i, wt)| (self.map_voxel(dims, o), flip_cell(i), wt)).collect(),
        };
        Ok(Sample {
            seed: s.seed,
            inputs: GenInputs {
                rgb: Tensor::from_vec(&rs, rgb)?,
                tsdf: Tensor::from_vec(&[1, od[0], od[1], od[2]], tsdf)?,
                proj: Arc::new(proj),
            },
            gt: self.apply_labels(&s.gt),
            mask: EvalMask { dims: od, states },
            labels2d,
            width: s.width,
        })
    }
}
