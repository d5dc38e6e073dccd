//! Reader for the big-endian idx format used by MNIST-style image sets.

use std::path::Path;

use crate::error::{Error, Result};

const UNSIGNED_BYTE: u8 = 0x08;

/// Decoded idx images: `count` images of `rows x cols` bytes each.
#[derive(Debug, Clone, PartialEq)]
pub struct IdxImages {
    pub count: usize,
    pub rows: usize,
    pub cols: usize,
    pub pixels: Vec<u8>,
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Data(format!(
                "idx: truncated {what} at byte offset {} (need {n} bytes, {} left)",
                self.pos,
                self.bytes.len() - self.pos
            )));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32_be(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }
}

fn parse_header(bytes: &[u8], dims: u8) -> Result<(Vec<usize>, Cursor<'_>)> {
    let mut cur = Cursor { bytes, pos: 0 };
    let magic = cur.take(4, "magic")?;
    if magic[0] != 0 || magic[1] != 0 {
        return Err(Error::Data("idx: bad magic at byte offset 0".into()));
    }
    if magic[2] != UNSIGNED_BYTE {
        return Err(Error::Data(format!(
            "idx: unsupported element type 0x{:02x} at byte offset 2",
            magic[2]
        )));
    }
    if magic[3] != dims {
        return Err(Error::Data(format!(
            "idx: expected {dims} dimensions, found {} at byte offset 3",
            magic[3]
        )));
    }
    let mut shape = Vec::with_capacity(dims as usize);
    for d in 0..dims {
        shape.push(cur.u32_be(&format!("dimension {d}"))? as usize);
    }
    Ok((shape, cur))
}

pub fn parse_images(bytes: &[u8]) -> Result<IdxImages> {
    let (shape, mut cur) = parse_header(bytes, 3)?;
    let total = shape[0] * shape[1] * shape[2];
    let pixels = cur.take(total, "pixel data")?.to_vec();
    if cur.pos != bytes.len() {
        return Err(Error::Data(format!(
            "idx: {} trailing bytes after offset {}",
            bytes.len() - cur.pos,
            cur.pos
        )));
    }
    Ok(IdxImages {
        count: shape[0],
        rows: shape[1],
        cols: shape[2],
        pixels,
    })
}

pub fn parse_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    let (shape, mut cur) = parse_header(bytes, 1)?;
    let labels = cur.take(shape[0], "label data")?.to_vec();
    if cur.pos != bytes.len() {
        return Err(Error::Data(format!(
            "idx: {} trailing bytes after offset {}",
            bytes.len() - cur.pos,
            cur.pos
        )));
    }
    Ok(labels)
}

pub fn read_images(path: &Path) -> Result<IdxImages> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_images(&bytes)
}

pub fn read_labels(path: &Path) -> Result<Vec<u8>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_labels(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn encode_images(count: u32, rows: u32, cols: u32) -> Vec<u8> {
        let mut b = vec![0, 0, 8, 3];
        for v in [count, rows, cols] {
            b.extend_from_slice(&v.to_be_bytes());
        }
        b.extend((0..count * rows * cols).map(|i| (i % 251) as u8));
        b
    }

    #[test]
    fn parses_images_and_labels() {
        let img = parse_images(&encode_images(2, 3, 4)).unwrap();
        assert_eq!((img.count, img.rows, img.cols), (2, 3, 4));
        assert_eq!(img.pixels.len(), 24);
        let mut labels = vec![0, 0, 8, 1, 0, 0, 0, 3];
        labels.extend([7, 1, 9]);
        assert_eq!(parse_labels(&labels).unwrap(), vec![7, 1, 9]);
    }

    #[test]
    fn reports_offsets() {
        let mut bytes = encode_images(2, 3, 4);
        bytes.truncate(bytes.len() - 5);
        let err = parse_images(&bytes).unwrap_err().to_string();
        assert!(err.contains("byte offset 16"), "{err}");

        let mut wrong = encode_images(1, 1, 1);
        wrong[3] = 1;
        let err = parse_images(&wrong).unwrap_err().to_string();
        assert!(err.contains("byte offset 3"), "{err}");
    }
}
