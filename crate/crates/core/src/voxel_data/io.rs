//! `AMMV` grid files and scene bundle directories.
//!
//! Layout (little-endian): magic `AMMV`, version byte (1), dtype byte
//! (0 = u8 labels, 1 = f32), two zero bytes, three u32 dims, then the payload
//! in flat `(x * G_y + y) * G_z + z` order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{compute_eval_mask, CameraIntrinsics, DepthImage, GridSpec, LabelGrid, RgbImage, Scene, TsdfGrid};
use crate::error::{FormatError, Result, SscError};

pub const GRID_HEADER_LEN: usize = 20;
const MAGIC: &[u8; 4] = b"AMMV";
const VERSION: u8 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum GridPayload {
    Labels { dims: [usize; 3], data: Vec<u8> },
    Floats { dims: [usize; 3], data: Vec<f32> },
}

impl GridPayload {
    pub fn dims(&self) -> [usize; 3] {
        match self {
            GridPayload::Labels { dims, .. } | GridPayload::Floats { dims, .. } => *dims,
        }
    }
}

impl From<&LabelGrid> for GridPayload {
    fn from(g: &LabelGrid) -> Self {
        GridPayload::Labels { dims: g.dims, data: g.labels.clone() }
    }
}

impl From<&TsdfGrid> for GridPayload {
    fn from(g: &TsdfGrid) -> Self {
        GridPayload::Floats { dims: g.dims, data: g.values.clone() }
    }
}

pub fn encode_grid(payload: &GridPayload) -> Result<Vec<u8>> {
    let dims = payload.dims();
    let n: usize = dims.iter().product();
    let (dtype, width) = match payload {
        GridPayload::Labels { data, .. } => {
            if data.len() != n {
                return Err(SscError::Shape("label payload length".into()));
            }
            (0u8, 1)
        }
        GridPayload::Floats { data, .. } => {
            if data.len() != n {
                return Err(SscError::Shape("float payload length".into()));
            }
            (1u8, 4)
        }
    };
    let mut out = Vec::with_capacity(GRID_HEADER_LEN + n * width);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&[VERSION, dtype, 0, 0]);
    for d in dims {
        let d = u32::try_from(d).map_err(|_| SscError::Shape("dimension exceeds u32".into()))?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    match payload {
        GridPayload::Labels { data, .. } => out.extend_from_slice(data),
        GridPayload::Floats { data, .. } => {
            for v in data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    Ok(out)
}

pub fn decode_grid(bytes: &[u8]) -> Result<GridPayload, FormatError> {
    if bytes.len() < GRID_HEADER_LEN {
        if bytes.len() >= 4 && &bytes[..4] != MAGIC {
            return Err(FormatError::BadMagic);
        }
        return Err(FormatError::Truncated { expected: GRID_HEADER_LEN, found: bytes.len() });
    }
    if &bytes[..4] != MAGIC {
        return Err(FormatError::BadMagic);
    }
    if bytes[4] != VERSION {
        return Err(FormatError::BadVersion(bytes[4]));
    }
    let dtype = bytes[5];
    let width = match dtype {
        0 => 1,
        1 => 4,
        other => return Err(FormatError::BadDtype(other)),
    };
    if bytes[6] != 0 || bytes[7] != 0 {
        return Err(FormatError::BadHeader);
    }
    let mut dims = [0usize; 3];
    for (a, d) in dims.iter_mut().enumerate() {
        let o = 8 + 4 * a;
        *d = u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
    }
    let n = dims.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d)).ok_or(FormatError::BadHeader)?;
    let expected = n.checked_mul(width).and_then(|p| p.checked_add(GRID_HEADER_LEN)).ok_or(FormatError::BadHeader)?;
    if bytes.len() != expected {
        return Err(FormatError::Truncated { expected, found: bytes.len() });
    }
    let body = &bytes[GRID_HEADER_LEN..];
    Ok(if dtype == 0 {
        GridPayload::Labels { dims, data: body.to_vec() }
    } else {
        GridPayload::Floats {
            dims,
            data: body.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect(),
        }
    })
}

pub fn write_grid(path: impl AsRef<Path>, payload: &GridPayload) -> Result<()> {
    fs::write(path, encode_grid(payload)?)?;
    Ok(())
}

pub fn read_grid(path: impl AsRef<Path>) -> Result<GridPayload> {
    Ok(decode_grid(&fs::read(path)?)?)
}

#[derive(Debug, Serialize, Deserialize)]
struct SceneMeta {
    seed: u64,
    num_classes: usize,
    trunc: f64,
    intrinsics: CameraIntrinsics,
    grid: GridSpec,
}

/// Writes `gt.ammv`, `tsdf.ammv`, `depth.ammv` (dims `(W, H, 1)`),
/// `rgb.ammv` (dims `(W, H, 3)`) and `meta.json` into `dir`.
pub fn write_scene(dir: impl AsRef<Path>, scene: &Scene) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    write_grid(dir.join("gt.ammv"), &GridPayload::from(&scene.gt))?;
    write_grid(dir.join("tsdf.ammv"), &GridPayload::from(&scene.tsdf))?;
    let (w, h) = (scene.depth.width, scene.depth.height);
    let mut depth = vec![0.0f32; w * h];
    let mut rgb = vec![0.0f32; w * h * 3];
    for u in 0..w {
        for v in 0..h {
            depth[u * h + v] = scene.depth.values[v * w + u];
            for c in 0..3 {
                rgb[(u * h + v) * 3 + c] = scene.rgb.values[(v * w + u) * 3 + c];
            }
        }
    }
    write_grid(dir.join("depth.ammv"), &GridPayload::Floats { dims: [w, h, 1], data: depth })?;
    write_grid(dir.join("rgb.ammv"), &GridPayload::Floats { dims: [w, h, 3], data: rgb })?;
    let meta = SceneMeta {
        seed: scene.seed,
        num_classes: scene.num_classes,
        trunc: scene.trunc,
        intrinsics: scene.intrinsics,
        grid: scene.grid,
    };
    fs::write(dir.join("meta.json"), serde_json::to_string_pretty(&meta)?)?;
    Ok(())
}

fn floats(p: GridPayload, what: &str) -> Result<([usize; 3], Vec<f32>)> {
    match p {
        GridPayload::Floats { dims, data } => Ok((dims, data)),
        _ => Err(SscError::InvalidInput(format!("{what} must hold f32 values"))),
    }
}

/// Reads a bundle written by [`write_scene`]; the evaluation mask is
/// recomputed from depth.
pub fn read_scene(dir: impl AsRef<Path>) -> Result<Scene> {
    let dir = dir.as_ref();
    let meta: SceneMeta = serde_json::from_str(&fs::read_to_string(dir.join("meta.json"))?)?;
    meta.grid.validate()?;
    meta.intrinsics.validate()?;
    let gt = match read_grid(dir.join("gt.ammv"))? {
        GridPayload::Labels { dims, data } => LabelGrid::new(dims, data)?,
        _ => return Err(SscError::InvalidInput("gt.ammv must hold u8 labels".into())),
    };
    gt.validate(meta.num_classes)?;
    let (tdims, tvals) = floats(read_grid(dir.join("tsdf.ammv"))?, "tsdf.ammv")?;
    let (w, h) = (meta.intrinsics.width, meta.intrinsics.height);
    let (ddims, dvals) = floats(read_grid(dir.join("depth.ammv"))?, "depth.ammv")?;
    let (rdims, rvals) = floats(read_grid(dir.join("rgb.ammv"))?, "rgb.ammv")?;
    if gt.dims != meta.grid.dims || tdims != meta.grid.dims || ddims != [w, h, 1] || rdims != [w, h, 3] {
        return Err(SscError::Shape("scene bundle members disagree on dims".into()));
    }
    let mut depth = vec![0.0f32; w * h];
    let mut rgb = vec![0.0f32; w * h * 3];
    for u in 0..w {
        for v in 0..h {
            depth[v * w + u] = dvals[u * h + v];
            for c in 0..3 {
                rgb[(v * w + u) * 3 + c] = rvals[(u * h + v) * 3 + c];
            }
        }
    }
    let depth = DepthImage::new(w, h, depth)?;
    let rgb = RgbImage::new(w, h, rgb)?;
    let mask = compute_eval_mask(&depth, &meta.intrinsics, &meta.grid)?;
    Ok(Scene {
        seed: meta.seed,
        num_classes: meta.num_classes,
        trunc: meta.trunc,
        rgb,
        depth,
        intrinsics: meta.intrinsics,
        gt,
        tsdf: TsdfGrid { dims: tdims, values: tvals },
        mask,
        grid: meta.grid,
    })
}
