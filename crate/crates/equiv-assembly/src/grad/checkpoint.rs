//! Binary checkpoint container.
//!
//! Layout: magic `EQAS`, version u32 LE, then for each named tensor:
//! name length (u32) + name bytes + rank (u32) + dims (u32 each) + raw
//! little-endian f32 payload. Entries run until end of file.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

use super::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"EQAS";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad magic at byte 0: expected \"EQAS\", found {found:?}")]
    BadMagic { found: [u8; 4] },
    #[error("unsupported checkpoint version {0}")]
    BadVersion(u32),
    #[error("truncated checkpoint at byte {offset}: {context}")]
    Truncated { offset: u64, context: &'static str },
    #[error("invalid utf-8 parameter name at byte {offset}")]
    BadName { offset: u64 },
}

pub fn save<P: AsRef<Path>>(
    path: P,
    entries: &[(String, Tensor)],
) -> Result<(), CheckpointError> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    for (name, tensor) in entries {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(tensor.shape().len() as u32).to_le_bytes())?;
        for &d in tensor.shape() {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        for &v in tensor.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load<P: AsRef<Path>>(path: P) -> Result<Vec<(String, Tensor)>, CheckpointError> {
    let mut r = Tracked {
        inner: BufReader::new(File::open(path)?),
        offset: 0,
    };
    let mut magic = [0u8; 4];
    r.read_exact_ctx(&mut magic, "magic")?;
    if &magic != MAGIC {
        return Err(CheckpointError::BadMagic { found: magic });
    }
    let version = r.read_u32("version")?;
    if version != VERSION {
        return Err(CheckpointError::BadVersion(version));
    }
    let mut entries = Vec::new();
    loop {
        let mut len_buf = [0u8; 4];
        match r.inner.read(&mut len_buf)? {
            0 => break, // clean EOF between entries
            4 => r.offset += 4,
            n => {
                r.offset += n as u64;
                // keep pulling in case of a short read mid-field
                r.read_exact_ctx(&mut len_buf[n..], "name length")?;
            }
        }
        let name_len = u32::from_le_bytes(len_buf) as usize;
        let mut name_bytes = vec![0u8; name_len];
        let name_offset = r.offset;
        r.read_exact_ctx(&mut name_bytes, "name")?;
        let name = String::from_utf8(name_bytes)
            .map_err(|_| CheckpointError::BadName { offset: name_offset })?;
        let rank = r.read_u32("rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.read_u32("dim")? as usize);
        }
        let numel: usize = shape.iter().product();
        let mut data = Vec::with_capacity(numel);
        for _ in 0..numel {
            let mut b = [0u8; 4];
            r.read_exact_ctx(&mut b, "payload")?;
            data.push(f32::from_le_bytes(b));
        }
        entries.push((name, Tensor::from_vec(shape, data)));
    }
    Ok(entries)
}

struct Tracked<R> {
    inner: R,
    offset: u64,
}

impl<R: Read> Tracked<R> {
    fn read_exact_ctx(
        &mut self,
        buf: &mut [u8],
        context: &'static str,
    ) -> Result<(), CheckpointError> {
        self.inner
            .read_exact(buf)
            .map_err(|_| CheckpointError::Truncated {
                offset: self.offset,
                context,
            })?;
        self.offset += buf.len() as u64;
        Ok(())
    }

    fn read_u32(&mut self, context: &'static str) -> Result<u32, CheckpointError> {
        let mut b = [0u8; 4];
        self.read_exact_ctx(&mut b, context)?;
        Ok(u32::from_le_bytes(b))
    }
}
