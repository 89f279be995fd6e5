//! Binary container for trained networks.
//!
//! Layout, all integers and reals little-endian:
//!
//! ```text
//! magic      8 bytes   "SASNET\0\x01" (network) or "SASEFF\0\x01" (effective)
//! order      1 byte    0x01 = little-endian payload
//! seed       8 bytes   effective networks only: the sampling seed
//! depth      u32       number of layer widths L
//! widths     L x u32
//! payload    per block: pi, m, xi (network) or w (effective), row-major f64
//! checksum   u32       CRC-32 of every preceding byte
//! ```

use std::fs;
use std::path::Path;

use ndarray::Array2;

use crate::sas::{EffectiveNetwork, Network, SaSLayer};
use crate::{Error, Result};

const NETWORK_MAGIC: &[u8; 8] = b"SASNET\0\x01";
const EFFECTIVE_MAGIC: &[u8; 8] = b"SASEFF\0\x01";
const LITTLE_ENDIAN: u8 = 0x01;

fn put_matrix(out: &mut Vec<u8>, m: &Array2<f64>) {
    for v in m.iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn put_widths(out: &mut Vec<u8>, widths: &[usize]) {
    out.extend_from_slice(&(widths.len() as u32).to_le_bytes());
    for &w in widths {
        out.extend_from_slice(&(w as u32).to_le_bytes());
    }
}

fn seal(mut out: Vec<u8>) -> Vec<u8> {
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

pub fn encode_network(net: &Network) -> Vec<u8> {
    let mut out = NETWORK_MAGIC.to_vec();
    out.push(LITTLE_ENDIAN);
    put_widths(&mut out, net.widths());
    for layer in net.layers() {
        put_matrix(&mut out, layer.pi());
        put_matrix(&mut out, layer.m());
        put_matrix(&mut out, layer.xi());
    }
    seal(out)
}

pub fn encode_effective(net: &EffectiveNetwork) -> Vec<u8> {
    let mut out = EFFECTIVE_MAGIC.to_vec();
    out.push(LITTLE_ENDIAN);
    out.extend_from_slice(&net.source_seed.to_le_bytes());
    put_widths(&mut out, &net.widths());
    for w in &net.weights {
        put_matrix(&mut out, w);
    }
    seal(out)
}

/// Cursor over a checksum-verified body.
struct Reader<'a> {
    body: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn open(bytes: &'a [u8], magic: &[u8; 8]) -> Result<Self> {
        if bytes.len() < magic.len() + 1 + 4 {
            return Err(Error::Corruption(format!("file too short ({} bytes)", bytes.len())));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes([tail[0], tail[1], tail[2], tail[3]]);
        let actual = crc32fast::hash(body);
        if stored != actual {
            return Err(Error::Corruption(format!(
                "checksum mismatch: stored {stored:08x}, computed {actual:08x}"
            )));
        }
        if &body[..8] != magic {
            return Err(Error::Corruption("unrecognized file magic".into()));
        }
        if body[8] != LITTLE_ENDIAN {
            return Err(Error::Corruption(format!("unsupported byte order tag {}", body[8])));
        }
        Ok(Self { body, at: 9 })
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.body.len()).ok_or_else(|| {
            Error::Corruption(format!(
                "payload ends at byte {} but {n} more bytes were expected",
                self.body.len()
            ))
        })?;
        let s = &self.body[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn u64(&mut self) -> Result<u64> {
        let mut a = [0u8; 8];
        a.copy_from_slice(self.take(8)?);
        Ok(u64::from_le_bytes(a))
    }

    fn widths(&mut self) -> Result<Vec<usize>> {
        let depth = self.u32()? as usize;
        if !(2..=1024).contains(&depth) {
            return Err(Error::Corruption(format!("implausible depth {depth}")));
        }
        (0..depth).map(|_| self.u32().map(|w| w as usize)).collect()
    }

    fn matrix(&mut self, rows: usize, cols: usize) -> Result<Array2<f64>> {
        let n = rows
            .checked_mul(cols)
            .and_then(|n| n.checked_mul(8))
            .ok_or_else(|| Error::Corruption("block size overflows".into()))?;
        let raw = self.take(n)?;
        let vals = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Array2::from_shape_vec((rows, cols), vals).unwrap())
    }

    fn finish(self) -> Result<()> {
        if self.at != self.body.len() {
            return Err(Error::Corruption(format!(
                "{} unexpected bytes after the payload",
                self.body.len() - self.at
            )));
        }
        Ok(())
    }
}

pub fn decode_network(bytes: &[u8]) -> Result<Network> {
    let mut r = Reader::open(bytes, NETWORK_MAGIC)?;
    let widths = r.widths()?;
    let mut layers = Vec::with_capacity(widths.len() - 1);
    for w in widths.windows(2) {
        let pi = r.matrix(w[0], w[1])?;
        let m = r.matrix(w[0], w[1])?;
        let xi = r.matrix(w[0], w[1])?;
        layers.push(SaSLayer::from_params(pi, m, xi).map_err(|e| Error::Corruption(e.to_string()))?);
    }
    r.finish()?;
    Network::from_layers(layers).map_err(|e| Error::Corruption(e.to_string()))
}

pub fn decode_effective(bytes: &[u8]) -> Result<EffectiveNetwork> {
    let mut r = Reader::open(bytes, EFFECTIVE_MAGIC)?;
    let source_seed = r.u64()?;
    let widths = r.widths()?;
    let weights = widths
        .windows(2)
        .map(|w| r.matrix(w[0], w[1]))
        .collect::<Result<Vec<_>>>()?;
    r.finish()?;
    Ok(EffectiveNetwork {
        weights,
        source_seed,
    })
}

pub fn save_network(net: &Network, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_network(net)).map_err(|e| Error::io(path, e))
}

pub fn load_network(path: impl AsRef<Path>) -> Result<Network> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_network(&bytes)
}

/// Loads a network and checks its architecture.
pub fn load_network_expecting(path: impl AsRef<Path>, widths: &[usize]) -> Result<Network> {
    let net = load_network(path)?;
    if net.widths() != widths {
        return Err(Error::Shape {
            expected: widths.to_vec(),
            actual: net.widths().to_vec(),
        });
    }
    Ok(net)
}

pub fn save_effective(net: &EffectiveNetwork, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_effective(net)).map_err(|e| Error::io(path, e))
}

pub fn load_effective(path: impl AsRef<Path>) -> Result<EffectiveNetwork> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_effective(&bytes)
}
