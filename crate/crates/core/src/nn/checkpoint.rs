//! Binary checkpoints.
//!
//! Little-endian layout:
//!
//! ```text
//! magic        4 bytes  "HGCK"
//! version      u32
//! config_hash  u64
//! num_tensors  u32
//! per tensor:
//!   name_len   u32
//!   name       name_len bytes, UTF-8
//!   rows       u64
//!   cols       u64
//!   data       rows*cols f64
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::params::ModelParams;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"HGCK";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn write_checkpoint<W: Write>(mut w: W, params: &ModelParams, config_hash: u64) -> Result<()> {
    let tensors = params.named_tensors();
    w.write_all(MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    w.write_all(&config_hash.to_le_bytes())?;
    w.write_all(&(tensors.len() as u32).to_le_bytes())?;
    for (name, t) in tensors {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(t.rows as u64).to_le_bytes())?;
        w.write_all(&(t.cols as u64).to_le_bytes())?;
        for v in &t.data {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

/// Loads tensors into `params`, which fixes the expected layout. Returns the
/// stored config hash; a mismatch against `expected_hash` is an error.
pub fn read_checkpoint<R: Read>(mut r: R, params: &mut ModelParams, expected_hash: Option<u64>) -> Result<u64> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Format("not a checkpoint file".into()));
    }
    let version = read_u32(&mut r)?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let hash = read_u64(&mut r)?;
    if let Some(h) = expected_hash {
        if h != hash {
            return Err(Error::Format(format!(
                "checkpoint config hash {hash:#018x} does not match {h:#018x}"
            )));
        }
    }
    let count = read_u32(&mut r)? as usize;
    let expected: Vec<(String, usize, usize)> = params
        .named_tensors()
        .into_iter()
        .map(|(n, t)| (n, t.rows, t.cols))
        .collect();
    if count != expected.len() {
        return Err(Error::Format(format!(
            "checkpoint has {count} tensors, model has {}",
            expected.len()
        )));
    }
    let mut loaded = Vec::with_capacity(count);
    for (name, rows, cols) in &expected {
        let len = read_u32(&mut r)? as usize;
        let mut buf = vec![0u8; len];
        r.read_exact(&mut buf)?;
        let stored = String::from_utf8(buf).map_err(|_| Error::Format("tensor name is not UTF-8".into()))?;
        let (sr, sc) = (read_u64(&mut r)? as usize, read_u64(&mut r)? as usize);
        if &stored != name || (sr, sc) != (*rows, *cols) {
            return Err(Error::Format(format!(
                "tensor `{stored}` ({sr}x{sc}) does not match `{name}` ({rows}x{cols})"
            )));
        }
        let mut data = Vec::with_capacity(sr * sc);
        for _ in 0..sr * sc {
            let mut b = [0u8; 8];
            r.read_exact(&mut b)?;
            data.push(f64::from_le_bytes(b));
        }
        loaded.push(data);
    }
    let mut it = loaded.into_iter();
    params.for_each_tensor_mut(|_, t| t.data = it.next().expect("tensor count checked"));
    Ok(hash)
}

pub fn save_checkpoint(path: impl AsRef<Path>, params: &ModelParams, config_hash: u64) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_checkpoint(&mut w, params, config_hash)?;
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>, params: &mut ModelParams, expected_hash: Option<u64>) -> Result<u64> {
    read_checkpoint(BufReader::new(File::open(path)?), params, expected_hash)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::params::ModelLayout;

    fn layout() -> ModelLayout {
        ModelLayout {
            node_in: 3,
            edge_in: 7,
            out: 3,
            hidden: 4,
            mp_layers: 2,
            mlp_hidden_layers: 1,
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let p = ModelParams::init(layout(), 9);
        let mut bytes = Vec::new();
        write_checkpoint(&mut bytes, &p, 0xdead_beef).unwrap();
        let mut q = p.zeros_like();
        let h = read_checkpoint(bytes.as_slice(), &mut q, Some(0xdead_beef)).unwrap();
        assert_eq!(h, 0xdead_beef);
        let (a, b) = (p.flatten(), q.flatten());
        assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn wrong_hash_or_layout_rejected() {
        let p = ModelParams::init(layout(), 9);
        let mut bytes = Vec::new();
        write_checkpoint(&mut bytes, &p, 1).unwrap();
        let mut q = p.zeros_like();
        assert!(read_checkpoint(bytes.as_slice(), &mut q, Some(2)).is_err());
        let mut other = ModelParams::zeros(ModelLayout { hidden: 5, ..layout() });
        assert!(read_checkpoint(bytes.as_slice(), &mut other, None).is_err());
        assert!(read_checkpoint(&b"nope"[..], &mut q, None).is_err());
    }
}
