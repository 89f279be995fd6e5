use std::fs;
use std::io::Read;
use std::path::Path;

use flate2::read::GzDecoder;

use crate::{Error, Result};

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IdxKind {
    Images,
    Labels,
}

/// Raw unsigned-byte IDX payload.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxTensor {
    pub kind: IdxKind,
    pub dims: Vec<usize>,
    pub data: Vec<u8>,
}

impl IdxTensor {
    pub fn len(&self) -> usize {
        self.dims.first().copied().unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Bytes per item (product of the trailing dimensions).
    pub fn item_size(&self) -> usize {
        self.dims[1..].iter().product()
    }
}

/// Reads an IDX file, transparently inflating it when it starts with the
/// gzip magic `1f 8b`.
pub fn load_idx(path: impl AsRef<Path>) -> Result<IdxTensor> {
    let path = path.as_ref();
    let raw = fs::read(path).map_err(|e| Error::io(path, e))?;
    let bytes = if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(|e| Error::Format(format!("{}: bad gzip stream: {e}", path.display())))?;
        out
    } else {
        raw
    };
    parse_idx(&bytes)
}

/// Parses an uncompressed big-endian IDX buffer.
pub fn parse_idx(bytes: &[u8]) -> Result<IdxTensor> {
    let word = |at: usize| -> Result<u32> {
        bytes
            .get(at..at + 4)
            .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
            .ok_or(Error::Truncated {
                expected: at + 4,
                actual: bytes.len(),
            })
    };
    let magic = word(0)?;
    let (kind, rank) = match magic {
        IMAGE_MAGIC => (IdxKind::Images, 3),
        LABEL_MAGIC => (IdxKind::Labels, 1),
        other => {
            return Err(Error::Format(format!(
                "unexpected IDX magic 0x{other:08x} (expected 0x{IMAGE_MAGIC:08x} or 0x{LABEL_MAGIC:08x})"
            )))
        }
    };
    let dims = (0..rank)
        .map(|d| word(4 + 4 * d).map(|v| v as usize))
        .collect::<Result<Vec<_>>>()?;
    let header = 4 + 4 * rank;
    let payload = dims.iter().product::<usize>();
    let expected = header + payload;
    if bytes.len() < expected {
        return Err(Error::Truncated {
            expected,
            actual: bytes.len(),
        });
    }
    if bytes.len() > expected {
        return Err(Error::Format(format!(
            "{} trailing bytes after a payload of {payload} bytes",
            bytes.len() - expected
        )));
    }
    Ok(IdxTensor {
        kind,
        dims,
        data: bytes[header..].to_vec(),
    })
}
