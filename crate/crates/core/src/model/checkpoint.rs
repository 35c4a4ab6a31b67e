//! Checkpoint layout: magic, config text, name table, then every tensor in
//! parameter order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{Model, ModelSpec};
use crate::error::{Error, Result};
use crate::nn::ParamStore;
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"RBCK";

fn write_u64(w: &mut impl Write, v: u64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)
        .map_err(|e| Error::Format(format!("truncated checkpoint: {e}")))?;
    Ok(u64::from_le_bytes(b))
}

fn read_string(r: &mut impl Read, what: &str) -> Result<String> {
    let len = read_u64(r)? as usize;
    if len > 1 << 24 {
        return Err(Error::Format(format!("{what} length {len} is implausible")));
    }
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)
        .map_err(|e| Error::Format(format!("truncated {what}: {e}")))?;
    String::from_utf8(buf).map_err(|_| Error::Format(format!("{what} is not UTF-8")))
}

pub fn write_checkpoint(w: &mut impl Write, model: &Model, store: &ParamStore<f32>) -> Result<()> {
    w.write_all(CHECKPOINT_MAGIC)?;
    let config = model.spec.to_config();
    write_u64(w, config.len() as u64)?;
    w.write_all(config.as_bytes())?;
    write_u64(w, store.len() as u64)?;
    for id in store.ids() {
        let name = store.name(id);
        write_u64(w, name.len() as u64)?;
        w.write_all(name.as_bytes())?;
    }
    for id in store.ids() {
        store.get(id).write_to(w)?;
    }
    Ok(())
}

pub fn read_checkpoint(r: &mut impl Read) -> Result<(Model, ParamStore<f32>)> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|e| Error::Format(format!("truncated checkpoint: {e}")))?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Format("not a checkpoint (bad magic)".into()));
    }
    let spec: ModelSpec = read_string(r, "config")?.parse()?;
    let model = Model::build(&spec)?;
    let mut store = model.init_params::<f32>(0);
    let count = read_u64(r)? as usize;
    if count != store.len() {
        return Err(Error::Format(format!(
            "checkpoint has {count} tensors, model expects {}",
            store.len()
        )));
    }
    let ids: Vec<_> = store.ids().collect();
    for &id in &ids {
        let name = read_string(r, "parameter name")?;
        if name != store.name(id) {
            return Err(Error::Format(format!(
                "parameter `{name}` where `{}` was expected",
                store.name(id)
            )));
        }
    }
    for &id in &ids {
        let t = Tensor::<f32>::read_from(r)?;
        store.set(id, t).map_err(|e| Error::Format(e.to_string()))?;
    }
    Ok((model, store))
}

pub fn save(path: &Path, model: &Model, store: &ParamStore<f32>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_checkpoint(&mut w, model, store)?;
    w.flush()?;
    Ok(())
}

pub fn load(path: &Path) -> Result<(Model, ParamStore<f32>)> {
    read_checkpoint(&mut BufReader::new(File::open(path)?))
}
