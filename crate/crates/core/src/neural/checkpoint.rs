//! Binary checkpoint: magic, JSON header, then named little-endian f64
//! blocks.
//!
//! ```text
//! "CNSLCKPT" | u32 version | u64 header_len | header JSON
//! u32 block_count
//! per block: u32 name_len | name | u32 ndim | u64 dims[ndim] | f64 data[prod(dims)]
//! ```

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"CNSLCKPT";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

pub fn encode(header: &serde_json::Value, blocks: &[Block]) -> Result<Vec<u8>> {
    let header = serde_json::to_vec(header)?;
    let mut out = Vec::with_capacity(header.len() + 64 + blocks.iter().map(|b| b.data.len() * 8 + 64).sum::<usize>());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&(blocks.len() as u32).to_le_bytes());
    for b in blocks {
        if b.shape.iter().product::<usize>() != b.data.len() {
            return Err(Error::Checkpoint(format!("block {} has shape {:?} but {} values", b.name, b.shape, b.data.len())));
        }
        out.extend_from_slice(&(b.name.len() as u32).to_le_bytes());
        out.extend_from_slice(b.name.as_bytes());
        out.extend_from_slice(&(b.shape.len() as u32).to_le_bytes());
        for &d in &b.shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &x in &b.data {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| Error::Checkpoint("truncated file".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn decode(bytes: &[u8]) -> Result<(serde_json::Value, Vec<Block>)> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let hlen = r.u64()? as usize;
    let header: serde_json::Value = serde_json::from_slice(r.take(hlen)?)?;
    let count = r.u32()?;
    let mut blocks = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let nlen = r.u32()? as usize;
        let name = String::from_utf8(r.take(nlen)?.to_vec()).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let ndim = r.u32()? as usize;
        let shape = (0..ndim).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let len: usize = shape.iter().product();
        let raw = r.take(len * 8)?;
        let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        blocks.push(Block { name, shape, data });
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint("trailing bytes".into()));
    }
    Ok((header, blocks))
}

pub fn save(path: &Path, header: &serde_json::Value, blocks: &[Block]) -> Result<()> {
    fs::write(path, encode(header, blocks)?).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<(serde_json::Value, Vec<Block>)> {
    decode(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_and_corruption() {
        let header = serde_json::json!({"k1": 16, "arch": "test"});
        let blocks = vec![
            Block { name: "a.weight".into(), shape: vec![2, 3], data: vec![0.5, -1.0, 1e-300, 3.0, f64::MIN_POSITIVE, 7.25] },
            Block { name: "a.bias".into(), shape: vec![2], data: vec![0.0, -0.0] },
        ];
        let bytes = encode(&header, &blocks).unwrap();
        let (h, b) = decode(&bytes).unwrap();
        assert_eq!(h, header);
        assert_eq!(b, blocks);
        assert!(decode(&bytes[..bytes.len() - 3]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode(&bad).is_err());
    }
}
