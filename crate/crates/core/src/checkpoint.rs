//! `AMMC` checkpoint files.
//!
//! Layout: magic `AMMC`, version byte (1), three zero bytes, u64 LE manifest
//! length, the JSON manifest, then every tensor as f32 LE. Offsets in the
//! manifest count bytes from the start of the payload.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{FormatError, Result, SscError};
use crate::nn::ParamStore;
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"AMMC";
const VERSION: u8 = 1;
const HEADER_LEN: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Entry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub entries: Vec<Entry>,
    #[serde(default)]
    pub meta: serde_json::Value,
}

pub fn encode_checkpoint(store: &ParamStore, meta: &serde_json::Value) -> Result<Vec<u8>> {
    let mut entries = Vec::new();
    let mut payload = Vec::new();
    for (name, p) in store.iter() {
        entries.push(Entry {
            name: name.clone(),
            shape: p.value.shape().to_vec(),
            offset: payload.len(),
            len: p.value.len(),
        });
        for &v in p.value.data() {
            payload.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    let manifest = serde_json::to_vec(&Manifest { entries, meta: meta.clone() })?;
    let mut out = Vec::with_capacity(HEADER_LEN + manifest.len() + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&[VERSION, 0, 0, 0]);
    out.extend_from_slice(&(manifest.len() as u64).to_le_bytes());
    out.extend_from_slice(&manifest);
    out.extend_from_slice(&payload);
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<(ParamStore, serde_json::Value)> {
    if bytes.len() >= 4 && &bytes[..4] != MAGIC {
        return Err(FormatError::BadMagic.into());
    }
    if bytes.len() < HEADER_LEN {
        return Err(FormatError::Truncated { expected: HEADER_LEN, found: bytes.len() }.into());
    }
    if bytes[4] != VERSION {
        return Err(FormatError::BadVersion(bytes[4]).into());
    }
    if bytes[5..8] != [0, 0, 0] {
        return Err(FormatError::BadHeader.into());
    }
    let mlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let body = HEADER_LEN.checked_add(mlen).ok_or(FormatError::BadHeader)?;
    if bytes.len() < body {
        return Err(FormatError::Truncated { expected: body, found: bytes.len() }.into());
    }
    let manifest: Manifest = serde_json::from_slice(&bytes[HEADER_LEN..body]).map_err(|_| FormatError::BadHeader)?;
    let payload = &bytes[body..];
    let mut store = ParamStore::new();
    let mut expected = 0;
    for e in &manifest.entries {
        if e.shape.iter().product::<usize>() != e.len {
            return Err(SscError::Shape(format!("entry {}: shape {:?} vs len {}", e.name, e.shape, e.len)));
        }
        let end = e.offset + 4 * e.len;
        expected = expected.max(end);
        if end > payload.len() {
            return Err(FormatError::Truncated { expected: body + end, found: bytes.len() }.into());
        }
        let data =
            payload[e.offset..end].chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64).collect();
        store.insert(e.name.clone(), Tensor::from_vec(&e.shape, data)?);
    }
    if expected != payload.len() {
        return Err(FormatError::BadHeader.into());
    }
    Ok((store, manifest.meta))
}

pub fn save_checkpoint(path: impl AsRef<Path>, store: &ParamStore, meta: &serde_json::Value) -> Result<()> {
    fs::write(path, encode_checkpoint(store, meta)?)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(ParamStore, serde_json::Value)> {
    decode_checkpoint(&fs::read(path)?)
}

/// Rounds every parameter through f32, matching what a checkpoint stores.
pub fn round_to_f32(store: &mut ParamStore) {
    let names: Vec<String> = store.names().cloned().collect();
    for n in names {
        for v in store.get_mut(&n).unwrap().data_mut() {
            *v = *v as f32 as f64;
        }
    }
}
