//! Versioned binary checkpoint: magic "SFN1", a TOML echo of the full
//! configuration, then named float64 blobs for every parameter and
//! batch-norm buffer, all little-endian. Loading refuses a file whose
//! embedded configuration disagrees with the runtime configuration.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::diffcore::Tensor;
use crate::error::{Error, Result};
use crate::model::net::{SAFENetConfig, SafeNet};

const MAGIC: &[u8; 4] = b"SFN1";

fn write_blob(
    w: &mut impl Write,
    name: &str,
    shape: &[usize],
    values: &[f64],
) -> Result<()> {
    let len = u32::try_from(name.len())
        .map_err(|_| Error::Checkpoint(format!("blob name too long: {name}")))?;
    w.write_u32::<LittleEndian>(len)?;
    w.write_all(name.as_bytes())?;
    let rank = u32::try_from(shape.len())
        .map_err(|_| Error::Checkpoint("blob rank exceeds u32".into()))?;
    w.write_u32::<LittleEndian>(rank)?;
    for &dim in shape {
        let d = u32::try_from(dim)
            .map_err(|_| Error::Checkpoint("blob dimension exceeds u32".into()))?;
        w.write_u32::<LittleEndian>(d)?;
    }
    for &v in values {
        w.write_f64::<LittleEndian>(v)?;
    }
    Ok(())
}

fn read_blob(r: &mut impl Read) -> Result<(String, Vec<usize>, Vec<f64>)> {
    let name_len = r.read_u32::<LittleEndian>()? as usize;
    let mut name_bytes = vec![0u8; name_len];
    r.read_exact(&mut name_bytes)?;
    let name = String::from_utf8(name_bytes)
        .map_err(|_| Error::Checkpoint("blob name is not valid UTF-8".into()))?;
    let rank = r.read_u32::<LittleEndian>()? as usize;
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        shape.push(r.read_u32::<LittleEndian>()? as usize);
    }
    let numel: usize = shape.iter().product();
    let mut values = Vec::with_capacity(numel);
    for _ in 0..numel {
        values.push(r.read_f64::<LittleEndian>()?);
    }
    Ok((name, shape, values))
}

/// Writes the network's configuration, parameters, and running buffers
/// to any byte sink.
pub fn write_checkpoint(w: &mut impl Write, net: &SafeNet) -> Result<()> {
    w.write_all(MAGIC)?;
    let cfg_text = toml::to_string(&net.cfg)
        .map_err(|e| Error::Checkpoint(format!("cannot encode configuration: {e}")))?;
    let cfg_len = u32::try_from(cfg_text.len())
        .map_err(|_| Error::Checkpoint("configuration echo exceeds u32".into()))?;
    w.write_u32::<LittleEndian>(cfg_len)?;
    w.write_all(cfg_text.as_bytes())?;

    let params = net.named_params();
    let buffers = net.named_buffers();
    let count = u32::try_from(params.len() + buffers.len())
        .map_err(|_| Error::Checkpoint("blob count exceeds u32".into()))?;
    w.write_u32::<LittleEndian>(count)?;
    for (name, t) in &params {
        write_blob(w, name, t.shape(), t.values())?;
    }
    for (name, vals) in &buffers {
        write_blob(w, name, &[vals.len()], vals)?;
    }
    Ok(())
}

/// Writes the network's checkpoint to a file.
pub fn save_checkpoint(path: &Path, net: &SafeNet) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_checkpoint(&mut w, net)?;
    w.flush()?;
    Ok(())
}

/// The network serialized in checkpoint form, as an in-memory buffer
/// (used for size accounting without touching the filesystem).
pub fn checkpoint_bytes(net: &SafeNet) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    write_checkpoint(&mut buf, net)?;
    Ok(buf)
}

/// Reads only the configuration echo of a checkpoint.
pub fn read_config(path: &Path) -> Result<SAFENetConfig> {
    let mut r = BufReader::new(File::open(path)?);
    read_header(&mut r)
}

fn read_header(r: &mut impl Read) -> Result<SAFENetConfig> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint(format!(
            "bad magic {:?}, expected \"SFN1\"",
            magic
        )));
    }
    let cfg_len = r.read_u32::<LittleEndian>()? as usize;
    let mut cfg_bytes = vec![0u8; cfg_len];
    r.read_exact(&mut cfg_bytes)?;
    let cfg_text = String::from_utf8(cfg_bytes)
        .map_err(|_| Error::Checkpoint("configuration echo is not valid UTF-8".into()))?;
    toml::from_str(&cfg_text)
        .map_err(|e| Error::Checkpoint(format!("cannot parse configuration echo: {e}")))
}

/// Restores a network. The checkpoint's embedded configuration must
/// equal `cfg` exactly; every parameter and buffer must be present with
/// its expected shape, and no extra blobs are tolerated.
pub fn load_checkpoint(path: &Path, cfg: &SAFENetConfig) -> Result<SafeNet> {
    let mut r = BufReader::new(File::open(path)?);
    let echoed = read_header(&mut r)?;
    if echoed != *cfg {
        return Err(Error::Checkpoint(
            "configuration echo does not match the runtime configuration".into(),
        ));
    }
    let count = r.read_u32::<LittleEndian>()? as usize;
    let mut blobs: BTreeMap<String, (Vec<usize>, Vec<f64>)> = BTreeMap::new();
    for _ in 0..count {
        let (name, shape, values) = read_blob(&mut r)?;
        if blobs.insert(name.clone(), (shape, values)).is_some() {
            return Err(Error::Checkpoint(format!("duplicate blob {name}")));
        }
    }

    let mut net = SafeNet::init(cfg, &mut ChaCha8Rng::seed_from_u64(0))?;
    for (name, slot) in net.params_mut() {
        let (shape, values) = blobs
            .remove(&name)
            .ok_or_else(|| Error::Checkpoint(format!("missing parameter {name}")))?;
        if shape != slot.shape() {
            return Err(Error::Checkpoint(format!(
                "parameter {name} has shape {:?}, expected {:?}",
                shape,
                slot.shape()
            )));
        }
        *slot = Tensor::param(values, &shape)?;
    }
    for (name, slot) in net.buffers_mut() {
        let (shape, values) = blobs
            .remove(&name)
            .ok_or_else(|| Error::Checkpoint(format!("missing buffer {name}")))?;
        if shape != [slot.len()] {
            return Err(Error::Checkpoint(format!(
                "buffer {name} has shape {:?}, expected [{}]",
                shape,
                slot.len()
            )));
        }
        *slot = values;
    }
    if let Some(name) = blobs.keys().next() {
        return Err(Error::Checkpoint(format!("unknown blob {name}")));
    }
    Ok(net)
}
