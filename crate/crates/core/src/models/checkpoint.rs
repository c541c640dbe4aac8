//! Binary checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "CTLNET1"                       7 bytes
//! config_len: u32, config JSON    ModelConfig
//! param_count: u32
//! per parameter:
//!     name_len: u32, name bytes (UTF-8)
//!     ndim: u32, dims: u64 * ndim
//!     values: f64 * prod(dims)
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::autograd::Tensor;
use crate::error::{Error, Result};
use crate::layers::ParamStore;

use super::{Model, ModelConfig};

pub const MAGIC: &[u8; 7] = b"CTLNET1";

pub fn write_checkpoint<W: Write>(model: &Model, mut w: W) -> Result<()> {
    let io = |e: std::io::Error| Error::Checkpoint(e.to_string());
    w.write_all(MAGIC).map_err(io)?;
    let config = serde_json::to_vec(model.config())?;
    w.write_all(&(config.len() as u32).to_le_bytes()).map_err(io)?;
    w.write_all(&config).map_err(io)?;
    w.write_all(&(model.params().len() as u32).to_le_bytes()).map_err(io)?;
    for p in model.params().iter() {
        let name = p.name.as_bytes();
        w.write_all(&(name.len() as u32).to_le_bytes()).map_err(io)?;
        w.write_all(name).map_err(io)?;
        let shape = p.tensor.shape();
        w.write_all(&(shape.len() as u32).to_le_bytes()).map_err(io)?;
        for d in shape {
            w.write_all(&(*d as u64).to_le_bytes()).map_err(io)?;
        }
        for v in p.tensor.values() {
            w.write_all(&v.to_le_bytes()).map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Model> {
    let mut magic = [0u8; 7];
    read_exact(&mut r, &mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint("bad magic header".into()));
    }
    let config_len = read_u32(&mut r)? as usize;
    let mut config = vec![0u8; config_len];
    read_exact(&mut r, &mut config)?;
    let config: ModelConfig = serde_json::from_slice(&config)?;
    let mut model = Model::build(&config)?;

    let count = read_u32(&mut r)? as usize;
    let mut stored = ParamStore::new();
    for _ in 0..count {
        let name_len = read_u32(&mut r)? as usize;
        let mut name = vec![0u8; name_len];
        read_exact(&mut r, &mut name)?;
        let name = String::from_utf8(name)
            .map_err(|_| Error::Checkpoint("parameter name is not UTF-8".into()))?;
        let ndim = read_u32(&mut r)? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            let mut b = [0u8; 8];
            read_exact(&mut r, &mut b)?;
            shape.push(u64::from_le_bytes(b) as usize);
        }
        let n: usize = shape.iter().product();
        let mut values = Vec::with_capacity(n);
        for _ in 0..n {
            let mut b = [0u8; 8];
            read_exact(&mut r, &mut b)?;
            values.push(f64::from_le_bytes(b));
        }
        if stored.find(&name).is_some() {
            return Err(Error::Checkpoint(format!("duplicate parameter `{name}`")));
        }
        stored.add(name, Tensor::new(shape, values)?);
    }
    if stored.len() != model.params().len() {
        return Err(Error::Checkpoint(format!(
            "expected {} parameters, found {}",
            model.params().len(),
            stored.len()
        )));
    }
    model.params_mut().load_values(&stored)?;
    Ok(model)
}

pub fn save_checkpoint(model: &Model, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_checkpoint(model, BufWriter::new(file))
}

pub fn load_checkpoint(path: &Path) -> Result<Model> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(BufReader::new(file))
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf)
        .map_err(|e| Error::Checkpoint(format!("truncated checkpoint: {e}")))
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}
