//! `SARv1` checkpoints.
//!
//! ```text
//! "SARv1"
//! u32 line count, then u32-length-prefixed UTF-8 "key=value" lines
//!     (model config fields, then "setup.*" metadata)
//! u32 tensor count, then (u32-length-prefixed name, T4v1 record) pairs
//! ```
//!
//! Parameters come first in registration order, then buffers.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use super::{Model, ModelConfig};
use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::io::{expect_magic, read_str, read_tensor, read_u32, write_str, write_tensor};

pub const CHECKPOINT_MAGIC: &[u8; 5] = b"SARv1";
const SETUP_PREFIX: &str = "setup.";

/// Writes the model plus free-form setup metadata.
pub fn save_checkpoint<T: Real, W: Write>(w: &mut W, model: &Model<T>, setup: &BTreeMap<String, String>) -> Result<()> {
    let mut lines: Vec<String> = model
        .config()
        .to_pairs()
        .into_iter()
        .map(|(k, v)| format!("{k}={v}"))
        .collect();
    for (k, v) in setup {
        if k.contains('=') || v.contains('\n') {
            return Err(Error::Format(format!("setup entry {k:?} cannot be stored")));
        }
        lines.push(format!("{SETUP_PREFIX}{k}={v}"));
    }
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&(lines.len() as u32).to_le_bytes())?;
    for l in &lines {
        write_str(w, l)?;
    }
    let tensors: Vec<_> = model.store.named_tensors().collect();
    w.write_all(&(tensors.len() as u32).to_le_bytes())?;
    for (name, t) in tensors {
        write_str(w, name)?;
        write_tensor(w, t)?;
    }
    Ok(())
}

/// Reads a checkpoint written by [`save_checkpoint`]. The reader is left
/// just past the tensor records, so trailing sections can follow.
pub fn load_checkpoint<T: Real, R: Read>(r: &mut R) -> Result<(Model<T>, BTreeMap<String, String>)> {
    expect_magic(r, CHECKPOINT_MAGIC)?;
    let n_lines = read_u32(r)?;
    let mut config = BTreeMap::new();
    let mut setup = BTreeMap::new();
    for _ in 0..n_lines {
        let line = read_str(r)?;
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Format(format!("config line {line:?} lacks '='")))?;
        match k.strip_prefix(SETUP_PREFIX) {
            Some(k) => setup.insert(k.to_string(), v.to_string()),
            None => config.insert(k.to_string(), v.to_string()),
        };
    }
    let config = ModelConfig::from_pairs(&config)?;
    let mut model = Model::<T>::build(config, 0)?;
    let expected = model.store.params().len() + model.store.buffers().len();
    let n = read_u32(r)? as usize;
    if n != expected {
        return Err(Error::Format(format!(
            "checkpoint holds {n} tensors, the configured model has {expected}"
        )));
    }
    let mut seen = std::collections::HashSet::new();
    for _ in 0..n {
        let name = read_str(r)?;
        let t = read_tensor::<T, _>(r)?;
        if !seen.insert(name.clone()) {
            return Err(Error::Format(format!("tensor {name} appears twice")));
        }
        model.store.set_by_name(&name, t).map_err(|e| match e {
            Error::Dimension { detail, .. } => Error::Format(detail),
            e => e,
        })?;
    }
    Ok((model, setup))
}
