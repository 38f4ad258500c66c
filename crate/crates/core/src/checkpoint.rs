//! Model checkpoint container.
//!
//! Layout: 8-byte magic `SPMCKPT1`, config echo (embed dim, hidden dim,
//! source vocab, target vocab, layer count as little-endian u64), a manifest
//! of (name, shape, byte offset) entries, then one raw little-endian f64
//! payload per named tensor. Loading validates the magic, the config, and
//! the complete name/shape inventory before any value is accepted.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::{ModelConfig, ModelParams};

pub const MAGIC: &[u8; 8] = b"SPMCKPT1";

fn write_u64(w: &mut impl Write, v: u64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)
        .map_err(|_| Error::format("checkpoint truncated"))?;
    Ok(u64::from_le_bytes(buf))
}

/// Serialize parameters (with their config echo) to `path`.
pub fn save(params: &ModelParams, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    let cfg = params.cfg;
    for dim in [
        cfg.dim_embed,
        cfg.dim_hidden,
        cfg.vocab_src,
        cfg.vocab_tgt,
        cfg.layers,
    ] {
        write_u64(&mut w, dim as u64)?;
    }

    let named = params.named();
    write_u64(&mut w, named.len() as u64)?;
    let mut offset = 0u64;
    for (name, tensor) in &named {
        let bytes = name.as_bytes();
        write_u64(&mut w, bytes.len() as u64)?;
        w.write_all(bytes)?;
        write_u64(&mut w, tensor.shape().len() as u64)?;
        for &d in tensor.shape() {
            write_u64(&mut w, d as u64)?;
        }
        write_u64(&mut w, offset)?;
        offset += (tensor.numel() * 8) as u64;
    }
    for (_, tensor) in &named {
        tensor.with_data(|d| -> Result<()> {
            for v in d {
                w.write_all(&v.to_le_bytes())?;
            }
            Ok(())
        })?;
    }
    w.flush()?;
    Ok(())
}

/// Deserialize a checkpoint into fresh parameters.
pub fn load(path: &Path) -> Result<ModelParams> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)
        .map_err(|_| Error::format("checkpoint truncated"))?;
    if &magic != MAGIC {
        return Err(Error::format(format!(
            "not a checkpoint: bad magic {:?}",
            String::from_utf8_lossy(&magic)
        )));
    }
    let dim_embed = read_u64(&mut r)? as usize;
    let dim_hidden = read_u64(&mut r)? as usize;
    let vocab_src = read_u64(&mut r)? as usize;
    let vocab_tgt = read_u64(&mut r)? as usize;
    let layers = read_u64(&mut r)? as usize;
    let cfg = ModelConfig {
        dim_embed,
        dim_hidden,
        vocab_src,
        vocab_tgt,
        layers,
    };
    cfg.validate()
        .map_err(|e| Error::format(format!("checkpoint config echo invalid: {e}")))?;

    let count = read_u64(&mut r)? as usize;
    let mut manifest = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = read_u64(&mut r)? as usize;
        if name_len > 4096 {
            return Err(Error::format("checkpoint manifest name too long"));
        }
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name)
            .map_err(|_| Error::format("checkpoint truncated"))?;
        let name = String::from_utf8(name)
            .map_err(|_| Error::format("checkpoint manifest name not UTF-8"))?;
        let ndim = read_u64(&mut r)? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(read_u64(&mut r)? as usize);
        }
        let offset = read_u64(&mut r)?;
        manifest.push((name, shape, offset));
    }

    // instantiate the architecture the echo describes, then fill values
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let params = ModelParams::init(cfg, &mut rng)?;
    let named = params.named();
    if named.len() != manifest.len() {
        return Err(Error::format(format!(
            "checkpoint holds {} tensors, architecture needs {}",
            manifest.len(),
            named.len()
        )));
    }

    let mut expected_offset = 0u64;
    for ((name, tensor), (m_name, m_shape, m_offset)) in named.iter().zip(&manifest) {
        if name != m_name {
            return Err(Error::format(format!(
                "checkpoint tensor {m_name:?} where {name:?} expected"
            )));
        }
        if tensor.shape() != m_shape.as_slice() {
            return Err(Error::format(format!(
                "checkpoint tensor {name:?} has shape {m_shape:?}, expected {:?}",
                tensor.shape()
            )));
        }
        if *m_offset != expected_offset {
            return Err(Error::format(format!(
                "checkpoint tensor {name:?} at offset {m_offset}, expected {expected_offset}"
            )));
        }
        expected_offset += (tensor.numel() * 8) as u64;
    }

    for (name, tensor) in &named {
        let mut values = vec![0.0f64; tensor.numel()];
        let mut buf = [0u8; 8];
        for v in values.iter_mut() {
            r.read_exact(&mut buf).map_err(|_| {
                Error::format(format!("checkpoint truncated in payload of {name:?}"))
            })?;
            *v = f64::from_le_bytes(buf);
        }
        tensor.set_value(&values);
    }
    let mut extra = [0u8; 1];
    if r.read(&mut extra)? != 0 {
        return Err(Error::format("checkpoint has trailing bytes"));
    }
    Ok(params)
}
