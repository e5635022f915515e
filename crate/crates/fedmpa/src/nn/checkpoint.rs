//! Binary parameter checkpoints.
//!
//! Layout: 4-byte magic `MLPC`, u32 format version, u32 number of layer
//! widths, the widths as u64, then every parameter as a little-endian f64 in
//! flatten order (per layer: weight row-major, then bias).

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::mlp::MlpParams;

const MAGIC: &[u8; 4] = b"MLPC";
const VERSION: u32 = 1;

pub fn save_checkpoint(path: &Path, params: &MlpParams) -> Result<()> {
    let dims = params.layer_dims();
    let flat = params.flatten();
    let mut buf = Vec::with_capacity(12 + dims.len() * 8 + flat.len() * 8);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(dims.len() as u32).to_le_bytes());
    for &d in dims {
        buf.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for x in flat {
        buf.extend_from_slice(&x.to_le_bytes());
    }
    fs::write(path, buf)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<MlpParams> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let buf = fs::read(path)?;
    let take = |at: usize, n: usize| -> Result<&[u8]> {
        buf.get(at..at + n)
            .ok_or_else(|| Error::Data(format!("checkpoint {} truncated at byte {}", path.display(), at)))
    };

    if take(0, 4)? != MAGIC {
        return Err(Error::Data(format!("{} is not a parameter checkpoint", path.display())));
    }
    let version = u32::from_le_bytes(take(4, 4)?.try_into().unwrap());
    if version != VERSION {
        return Err(Error::Data(format!(
            "checkpoint version {} unsupported (expected {})",
            version, VERSION
        )));
    }
    let n_dims = u32::from_le_bytes(take(8, 4)?.try_into().unwrap()) as usize;
    let mut at = 12;
    let mut dims = Vec::with_capacity(n_dims);
    for _ in 0..n_dims {
        dims.push(u64::from_le_bytes(take(at, 8)?.try_into().unwrap()) as usize);
        at += 8;
    }
    let n_params = MlpParams::param_count(&dims);
    let mut flat = Vec::with_capacity(n_params);
    for _ in 0..n_params {
        flat.push(f64::from_le_bytes(take(at, 8)?.try_into().unwrap()));
        at += 8;
    }
    if at != buf.len() {
        return Err(Error::Data(format!(
            "checkpoint {} has {} trailing bytes",
            path.display(),
            buf.len() - at
        )));
    }
    MlpParams::unflatten(&dims, &flat)
}
