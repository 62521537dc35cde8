//! Binary checkpoint format.
//!
//! Layout: magic string, u32 format version, then per-tensor records:
//! name length (u64 LE) + name bytes, rank (u64 LE), shape dims (u64 LE each),
//! raw f32 LE data. Round trips are bit-exact.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

const MAGIC: &[u8] = b"PRUNEBENCH-CKPT";
const VERSION: u32 = 1;

pub fn write_tensors<W: Write>(mut w: W, tensors: &BTreeMap<String, Tensor>) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    for (name, t) in tensors {
        w.write_all(&(name.len() as u64).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(t.shape().len() as u64).to_le_bytes())?;
        for d in t.shape() {
            w.write_all(&(*d as u64).to_le_bytes())?;
        }
        for v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_tensors<R: Read>(mut r: R) -> Result<BTreeMap<String, Tensor>> {
    let mut magic = vec![0u8; MAGIC.len()];
    r.read_exact(&mut magic)
        .map_err(|_| Error::Checkpoint("file too short for magic".into()))?;
    if magic != MAGIC {
        return Err(Error::Checkpoint("bad magic string".into()));
    }
    let mut ver = [0u8; 4];
    r.read_exact(&mut ver)?;
    if u32::from_le_bytes(ver) != VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported version {}",
            u32::from_le_bytes(ver)
        )));
    }
    let mut tensors = BTreeMap::new();
    loop {
        let mut len8 = [0u8; 8];
        match r.read_exact(&mut len8) {
            Ok(()) => {}
            Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => break,
            Err(e) => return Err(e.into()),
        }
        let name_len = u64::from_le_bytes(len8) as usize;
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name)
            .map_err(|_| Error::Checkpoint("tensor name is not utf-8".into()))?;
        r.read_exact(&mut len8)?;
        let rank = u64::from_le_bytes(len8) as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            r.read_exact(&mut len8)?;
            shape.push(u64::from_le_bytes(len8) as usize);
        }
        let n: usize = shape.iter().product();
        let mut data = vec![0f32; n];
        let mut buf = [0u8; 4];
        for v in &mut data {
            r.read_exact(&mut buf)?;
            *v = f32::from_le_bytes(buf);
        }
        tensors.insert(name, Tensor::new(shape, data));
    }
    Ok(tensors)
}

pub fn save(path: &Path, tensors: &BTreeMap<String, Tensor>) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_tensors(std::io::BufWriter::new(file), tensors)
}

pub fn load(path: &Path) -> Result<BTreeMap<String, Tensor>> {
    let file = std::fs::File::open(path)?;
    read_tensors(std::io::BufReader::new(file))
}

/// Content hash of the serialized tensor set (hex sha256).
pub fn content_hash(tensors: &BTreeMap<String, Tensor>) -> String {
    let mut bytes = Vec::new();
    write_tensors(&mut bytes, tensors).expect("in-memory write cannot fail");
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    format!("{:x}", hasher.finalize())
}
