//! Portable policy checkpoints.
//!
//! All integers and floats are little-endian:
//!
//! ```text
//! magic     8 bytes  "MAVCAPCK"
//! version   u32      1
//! hidden    u32      hidden-layer width
//! blocks    u32      number of shape-table entries
//! per block: name_len u8, name (UTF-8), rows u32, cols u32
//! count     u64      number of parameters
//! params    f64 × count, block by block, each block row-major
//! crc       u32      CRC-32 of every preceding byte
//! ```

use std::fs;
use std::path::Path;

use anyhow::{bail, ensure, Context, Result};
use mavcap_core::ppo::{Layout, PolicyNet};

pub const MAGIC: &[u8; 8] = b"MAVCAPCK";
pub const VERSION: u32 = 1;

pub fn encode(net: &PolicyNet) -> Vec<u8> {
    let layout = net.layout();
    let shapes = layout.shapes();
    let mut out = Vec::with_capacity(64 + 8 * net.params().len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(layout.hidden as u32).to_le_bytes());
    out.extend_from_slice(&(shapes.len() as u32).to_le_bytes());
    for (name, rows, cols) in shapes {
        out.push(name.len() as u8);
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(rows as u32).to_le_bytes());
        out.extend_from_slice(&(cols as u32).to_le_bytes());
    }
    out.extend_from_slice(&(net.params().len() as u64).to_le_bytes());
    for p in net.params() {
        out.extend_from_slice(&p.to_le_bytes());
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        ensure!(self.pos + n <= self.buf.len(), "checkpoint truncated at byte {}", self.pos);
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into()?))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into()?))
    }
}

pub fn decode(bytes: &[u8]) -> Result<PolicyNet> {
    ensure!(bytes.len() >= MAGIC.len() + 4, "checkpoint too short ({} bytes)", bytes.len());
    ensure!(&bytes[..8] == MAGIC, "not a mavcap checkpoint (bad magic)");
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into()?);
    let mut r = Reader { buf: body, pos: 8 };
    let version = r.u32()?;
    ensure!(version == VERSION, "unsupported checkpoint version {version} (expected {VERSION})");
    ensure!(crc32fast::hash(body) == stored, "checkpoint checksum mismatch: file is corrupt");

    let hidden = r.u32()? as usize;
    ensure!(hidden > 0, "checkpoint declares zero hidden width");
    let expected = Layout::new(hidden).shapes();
    let blocks = r.u32()? as usize;
    ensure!(blocks == expected.len(), "shape table has {blocks} blocks, expected {}", expected.len());
    for (name, rows, cols) in expected {
        let len = r.take(1)?[0] as usize;
        let got = std::str::from_utf8(r.take(len)?).context("block name is not UTF-8")?;
        let (gr, gc) = (r.u32()? as usize, r.u32()? as usize);
        ensure!(
            got == name && gr == rows && gc == cols,
            "shape table entry {got} {gr}x{gc} does not match {name} {rows}x{cols}"
        );
    }
    let count = r.u64()? as usize;
    ensure!(count == Layout::new(hidden).len, "parameter count {count} does not match the shape table");
    let params = r
        .take(8 * count)?
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    if r.pos != body.len() {
        bail!("{} trailing bytes after the parameters", body.len() - r.pos);
    }
    Ok(PolicyNet::from_params(hidden, params)?)
}

pub fn save(net: &PolicyNet, path: &Path) -> Result<()> {
    fs::write(path, encode(net)).with_context(|| format!("cannot write checkpoint {}", path.display()))
}

pub fn load(path: &Path) -> Result<PolicyNet> {
    let bytes = fs::read(path).with_context(|| format!("cannot read checkpoint {}", path.display()))?;
    decode(&bytes).with_context(|| format!("invalid checkpoint {}", path.display()))
}
