//! `.eick` named-tensor container.
//!
//! Layout (little-endian): `b"EICK"`, version `u16`, entry count `u32`, then
//! per entry a `u16` name length, the UTF-8 name, a `u8` rank, `rank` × `u32`
//! dims and `f32` values; finally the CRC32 of every byte between the header
//! and the CRC itself.

use crate::error::{EicError, Result};
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"EICK";
pub const CHECKPOINT_VERSION: u16 = 1;
const HEADER_LEN: usize = 4 + 2 + 4;

pub fn encode_entries<'a>(
    entries: impl IntoIterator<Item = (&'a str, &'a Tensor)>,
) -> Result<Vec<u8>> {
    let mut body = Vec::new();
    let mut count: u32 = 0;
    for (name, t) in entries {
        let nb = name.as_bytes();
        let len = u16::try_from(nb.len())
            .map_err(|_| EicError::Contract(format!("entry name too long: {name}")))?;
        let rank = u8::try_from(t.shape().len())
            .map_err(|_| EicError::Contract(format!("rank too large for {name}")))?;
        body.extend_from_slice(&len.to_le_bytes());
        body.extend_from_slice(nb);
        body.push(rank);
        for &d in t.shape() {
            let d = u32::try_from(d)
                .map_err(|_| EicError::Contract(format!("dimension too large in {name}")))?;
            body.extend_from_slice(&d.to_le_bytes());
        }
        for &v in t.data() {
            body.extend_from_slice(&(v as f32).to_le_bytes());
        }
        count += 1;
    }
    let mut out = Vec::with_capacity(HEADER_LEN + body.len() + 4);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&count.to_le_bytes());
    let crc = crc32fast::hash(&body);
    out.extend_from_slice(&body);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(EicError::format(
                self.pos as u64,
                format!(
                    "truncated {what}: need {n} bytes, {} left",
                    self.bytes.len() - self.pos
                ),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4, what)?.try_into().expect("4 bytes"),
        ))
    }
}

/// Decodes every entry. Magic, version and CRC are verified before any
/// entry is parsed, so a corrupted file yields no entries at all.
pub fn decode_entries(bytes: &[u8]) -> Result<Vec<(String, Tensor)>> {
    if bytes.len() < HEADER_LEN + 4 {
        return Err(EicError::format(
            bytes.len() as u64,
            "file shorter than header + CRC",
        ));
    }
    if &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(EicError::format(0, format!("bad magic {:?}", &bytes[..4])));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != CHECKPOINT_VERSION {
        return Err(EicError::format(
            4,
            format!("unsupported version {version}"),
        ));
    }
    let count = u32::from_le_bytes(bytes[6..10].try_into().expect("4 bytes"));
    let crc_at = bytes.len() - 4;
    let stored = u32::from_le_bytes(bytes[crc_at..].try_into().expect("4 bytes"));
    let actual = crc32fast::hash(&bytes[HEADER_LEN..crc_at]);
    if stored != actual {
        return Err(EicError::format(
            crc_at as u64,
            format!("CRC mismatch: stored {stored:08x}, computed {actual:08x}"),
        ));
    }
    let mut cur = Cursor {
        bytes: &bytes[..crc_at],
        pos: HEADER_LEN,
    };
    let mut entries = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let at = cur.pos;
        let len =
            u16::from_le_bytes(cur.take(2, "name length")?.try_into().expect("2 bytes")) as usize;
        let name = std::str::from_utf8(cur.take(len, "name")?)
            .map_err(|_| EicError::format(at as u64 + 2, "entry name is not UTF-8"))?
            .to_string();
        let rank = cur.take(1, "rank")?[0] as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(cur.u32("dimension")? as usize);
        }
        let n: usize = shape.iter().product();
        let raw = cur.take(n * 4, "payload")?;
        let data = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")) as f64)
            .collect();
        let t = Tensor::new(shape, data)
            .map_err(|e| EicError::format(at as u64, format!("entry {name}: {e}")))?;
        entries.push((name, t));
    }
    if cur.pos != crc_at {
        return Err(EicError::format(
            cur.pos as u64,
            format!("{} trailing bytes after {count} entries", crc_at - cur.pos),
        ));
    }
    Ok(entries)
}
