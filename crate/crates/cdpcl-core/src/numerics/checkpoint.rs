//! Named-tensor checkpoint codec.
//!
//! Layout, all little-endian: magic "CDPT", format version u32, tensor count
//! u32, then per tensor: name length u32 + UTF-8 name, rank u32, dims u32
//! each, raw f64 values.

use std::io::{Read, Write};
use std::path::Path;

use super::tensor::Tensor;
use crate::error::{CdpclError, Result};

const MAGIC: &[u8; 4] = b"CDPT";
pub const FORMAT_VERSION: u32 = 1;

pub fn write_checkpoint(path: &Path, tensors: &[(String, Tensor)]) -> Result<()> {
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, t) in tensors {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut f = std::fs::File::create(path).map_err(|e| CdpclError::io(path, e))?;
    f.write_all(&buf).map_err(|e| CdpclError::io(path, e))?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<Vec<(String, Tensor)>> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| CdpclError::io(path, e))?;
    let mut r = Reader { path, bytes: &bytes, pos: 0 };

    let magic = r.take(4)?;
    if magic != MAGIC {
        return r.fail("bad magic, expected \"CDPT\"", 0);
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return r.fail(&format!("unsupported format version {}", version), r.pos as u64 - 4);
    }
    let count = r.u32()? as usize;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = r.u32()? as usize;
        let name_bytes = r.take(name_len)?.to_vec();
        let name = String::from_utf8(name_bytes)
            .map_err(|_| r.err("tensor name is not UTF-8", r.pos as u64))?;
        let rank = r.u32()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32()? as usize);
        }
        let numel: usize = shape.iter().product();
        let mut data = Vec::with_capacity(numel);
        for _ in 0..numel {
            data.push(f64::from_le_bytes(r.take(8)?.try_into().unwrap()));
        }
        out.push((name, Tensor::new(shape, data)?));
    }
    Ok(out)
}

struct Reader<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(self.err(
                &format!("unexpected end of file, wanted {} more bytes", n),
                self.pos as u64,
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn err(&self, detail: &str, offset: u64) -> CdpclError {
        CdpclError::Format { path: self.path.to_path_buf(), offset, detail: detail.to_string() }
    }

    fn fail<T>(&self, detail: &str, offset: u64) -> Result<T> {
        Err(self.err(detail, offset))
    }
}
