//! Checkpoint container.
//!
//! ```text
//! "FWCK"  u32 version  u32 config_len  config JSON
//! u32 tensor_count
//! repeated: u32 name_len  name (UTF-8)  FWF1 matrix
//! ```
//! Integers are little-endian. Tensors appear in parameter registration
//! order, so a fixed model always serializes to the same bytes.

use std::path::Path;

use super::{FusionConfig, FusionModel};
use crate::dataio::format::{decode_matrix, encode_matrix};
use crate::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"FWCK";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn write_checkpoint(model: &FusionModel<f32>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    let config = serde_json::to_vec(model.config()).expect("config serializes");
    out.extend_from_slice(&(config.len() as u32).to_le_bytes());
    out.extend_from_slice(&config);
    out.extend_from_slice(&(model.params().len() as u32).to_le_bytes());
    for (name, value) in model.params().iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        encode_matrix(value, &mut out);
    }
    out
}

/// Parses a checkpoint. `path` only labels errors.
pub fn read_checkpoint(bytes: &[u8], path: &Path) -> Result<FusionModel<f32>> {
    let fail = |message: String| Error::Checkpoint {
        path: path.to_path_buf(),
        message,
    };
    let mut pos = 0usize;
    let take = |n: usize, pos: &mut usize| -> Result<&[u8]> {
        if bytes.len() < *pos + n {
            return Err(fail(format!("unexpected end of file at byte {pos}")));
        }
        let s = &bytes[*pos..*pos + n];
        *pos += n;
        Ok(s)
    };
    let u32_at = |s: &[u8]| u32::from_le_bytes(s.try_into().expect("4 bytes"));

    if take(4, &mut pos)? != CHECKPOINT_MAGIC {
        return Err(fail("bad magic, expected FWCK".into()));
    }
    let version = u32_at(take(4, &mut pos)?);
    if version != CHECKPOINT_VERSION {
        return Err(fail(format!("unsupported checkpoint version {version}")));
    }
    let config_len = u32_at(take(4, &mut pos)?) as usize;
    let config: FusionConfig =
        serde_json::from_slice(take(config_len, &mut pos)?).map_err(|e| fail(format!("config record: {e}")))?;
    let mut model = FusionModel::<f32>::new(config, 0)?;

    let count = u32_at(take(4, &mut pos)?) as usize;
    if count != model.params().len() {
        return Err(fail(format!("{count} tensors stored, model has {}", model.params().len())));
    }
    let mut seen = vec![false; count];
    for _ in 0..count {
        let name_len = u32_at(take(4, &mut pos)?) as usize;
        let name = std::str::from_utf8(take(name_len, &mut pos)?)
            .map_err(|_| fail("tensor name is not UTF-8".into()))?
            .to_string();
        let value = decode_matrix(bytes, &mut pos, path)?;
        let id = model
            .params()
            .find(&name)
            .ok_or_else(|| fail(format!("unknown tensor {name}")))?;
        let slot = model.params_mut().get_mut(id);
        if slot.shape() != value.shape() {
            return Err(fail(format!(
                "tensor {name}: stored {:?}, expected {:?}",
                value.shape(),
                slot.shape()
            )));
        }
        *slot = value;
        seen[id.index()] = true;
    }
    if pos != bytes.len() {
        return Err(fail(format!("{} trailing bytes", bytes.len() - pos)));
    }
    if let Some(missing) = seen.iter().position(|s| !s) {
        return Err(fail(format!("tensor {} missing", model.params().names()[missing])));
    }
    Ok(model)
}

pub fn save_checkpoint(path: &Path, model: &FusionModel<f32>) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, write_checkpoint(model))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<FusionModel<f32>> {
    let bytes = std::fs::read(path)?;
    read_checkpoint(&bytes, path)
}
