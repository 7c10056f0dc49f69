//! Model checkpoints: a flat little-endian parameter file plus a JSON sidecar
//! holding the [`Architecture`].
//!
//! Binary layout: `u64` parameter count, then that many `f64`, all
//! little-endian, in parameter ordinal order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use super::{Architecture, Model};
use crate::error::{Error, Result};

fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

/// Writes `path` (parameters) and `path.json` (architecture).
pub fn save_checkpoint(model: &Model, path: &Path) -> Result<()> {
    let params = model.params();
    let mut w = BufWriter::new(File::create(path)?);
    w.write_u64::<LittleEndian>(params.len() as u64)?;
    for &v in params.data() {
        w.write_f64::<LittleEndian>(v)?;
    }
    w.flush()?;
    let sidecar = serde_json::to_string_pretty(model.architecture())?;
    std::fs::write(sidecar_path(path), sidecar)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Model> {
    let arch: Architecture = serde_json::from_slice(&std::fs::read(sidecar_path(path))?)?;
    let mut model = Model::build(&arch, 0)?;
    let mut r = BufReader::new(File::open(path)?);
    let count = r.read_u64::<LittleEndian>()? as usize;
    if count != model.param_count() {
        return Err(Error::shape("checkpoint parameter count", &[model.param_count()], &[count]));
    }
    let mut params = vec![0.0; count];
    r.read_f64_into::<LittleEndian>(&mut params)?;
    let mut rest = Vec::new();
    r.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(Error::State(format!("checkpoint has {} trailing bytes", rest.len())));
    }
    model.set_params_slice(&params)?;
    Ok(model)
}
