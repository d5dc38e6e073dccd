//! Binary dataset files.
//!
//! Layout, all integers little-endian:
//!
//! | field        | encoding                                   |
//! |--------------|--------------------------------------------|
//! | magic        | `b"FCLDATA\0"`                             |
//! | version      | `u32`, currently 1                         |
//! | task id      | `u32` byte length + UTF-8                  |
//! | shape        | `N`, `T`, `C` as three `u64`               |
//! | inputs       | `N*T*C` row-major `f64`                    |
//! | labels       | `N` × `u8`                                 |
//! | meta         | `u32` byte length + UTF-8 JSON             |
//! | checksum     | CRC-32 (IEEE) of every preceding byte, `u32` |

use std::path::Path;

use crate::data::{DatasetMeta, TaskDataset};
use crate::engine::Tensor3;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"FCLDATA\0";
pub const FORMAT_VERSION: u32 = 1;

pub fn encode_dataset(ds: &TaskDataset) -> Result<Vec<u8>> {
    let meta = serde_json::to_vec(&ds.meta).map_err(|e| Error::Data(e.to_string()))?;
    let [n, t, c] = ds.inputs.shape();
    let mut out = Vec::with_capacity(64 + n * t * c * 8 + n + meta.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(ds.task_id.len() as u32).to_le_bytes());
    out.extend_from_slice(ds.task_id.as_bytes());
    for d in [n, t, c] {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for v in ds.inputs.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&ds.labels);
    out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
    out.extend_from_slice(&meta);
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len().saturating_sub(self.pos) < n {
            return Err(Error::Data(format!(
                "dataset file truncated while reading {what} at byte offset {}",
                self.pos
            )));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

pub fn decode_dataset(bytes: &[u8]) -> Result<TaskDataset> {
    if bytes.len() < MAGIC.len() + 8 {
        return Err(Error::Data("dataset file truncated".into()));
    }
    if &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::Data("not a dataset file (bad magic)".into()));
    }
    let (body, trailer) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(trailer.try_into().unwrap());
    let mut r = Reader {
        bytes: body,
        pos: MAGIC.len(),
    };
    let version = r.u32("version")?;
    if version != FORMAT_VERSION {
        return Err(Error::Data(format!(
            "unsupported dataset format version {version} (expected {FORMAT_VERSION})"
        )));
    }
    if crc32fast::hash(body) != stored {
        return Err(Error::Data("dataset checksum mismatch".into()));
    }
    let id_len = r.u32("task id length")? as usize;
    let task_id = String::from_utf8(r.take(id_len, "task id")?.to_vec())
        .map_err(|_| Error::Data("task id is not UTF-8".into()))?;
    let n = r.u64("N")? as usize;
    let t = r.u64("T")? as usize;
    let c = r.u64("C")? as usize;
    let count = n
        .checked_mul(t)
        .and_then(|v| v.checked_mul(c))
        .ok_or_else(|| Error::Data("dataset shape overflows".into()))?;
    let raw = r.take(count * 8, "inputs")?;
    let data = raw
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
        .collect();
    let labels = r.take(n, "labels")?.to_vec();
    let meta_len = r.u32("meta length")? as usize;
    let meta: DatasetMeta = serde_json::from_slice(r.take(meta_len, "meta")?)
        .map_err(|e| Error::Data(format!("bad dataset meta: {e}")))?;
    if r.pos != body.len() {
        return Err(Error::Data(format!(
            "{} unexpected bytes before checksum",
            body.len() - r.pos
        )));
    }
    TaskDataset::new(task_id, Tensor3::new([n, t, c], data)?, labels, meta)
}

pub fn save_dataset(ds: &TaskDataset, path: &Path) -> Result<()> {
    let bytes = encode_dataset(ds)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_dataset(path: &Path) -> Result<TaskDataset> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_dataset(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_press_task, PressGenConfig};

    fn sample() -> TaskDataset {
        let cfg = PressGenConfig {
            window_len: 12,
            samples_per_class: 3,
            ..PressGenConfig::default()
        };
        generate_press_task(&cfg, 21).unwrap()
    }

    #[test]
    fn round_trip_through_file() {
        let ds = sample();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("task.fcl");
        save_dataset(&ds, &path).unwrap();
        let back = load_dataset(&path).unwrap();
        assert_eq!(back, ds);
        let bits = |d: &TaskDataset| d.inputs.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back), bits(&ds));
    }

    #[test]
    fn header_declares_version_and_shape() {
        let ds = sample();
        let bytes = encode_dataset(&ds).unwrap();
        assert_eq!(&bytes[..8], MAGIC);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 1);
        let id_len = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
        let shape_at = 16 + id_len;
        let dims: Vec<u64> = (0..3)
            .map(|i| {
                u64::from_le_bytes(bytes[shape_at + 8 * i..shape_at + 8 * i + 8].try_into().unwrap())
            })
            .collect();
        assert_eq!(dims, vec![6, 12, 8]);
    }

    #[test]
    fn corruption_is_detected() {
        let bytes = encode_dataset(&sample()).unwrap();
        let mut flipped = bytes.clone();
        let last = flipped.len() - 1;
        flipped[last] ^= 0x01;
        let err = decode_dataset(&flipped).unwrap_err().to_string();
        assert!(err.contains("checksum"), "{err}");

        let mut inner = bytes.clone();
        inner[100] ^= 0x40;
        assert!(decode_dataset(&inner).unwrap_err().to_string().contains("checksum"));

        assert!(decode_dataset(&bytes[..bytes.len() - 10]).is_err());

        let mut version = bytes.clone();
        version[8] = 2;
        let err = decode_dataset(&version).unwrap_err().to_string();
        assert!(err.contains("version"), "{err}");
    }
}
