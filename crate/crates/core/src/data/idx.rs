//! IDX files as distributed with MNIST.

use std::fs;
use std::path::Path;

use super::dataset::ImageSample;
use super::synth::{IMAGE_SIDE, NUM_IDENTITIES};
use crate::error::{Error, Result};

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IdxImages {
    pub rows: usize,
    pub cols: usize,
    /// `count × rows × cols` raw bytes.
    pub bytes: Vec<u8>,
}

impl IdxImages {
    pub fn count(&self) -> usize {
        self.bytes.len() / (self.rows * self.cols)
    }

    /// Image `i` scaled to `[0, 1]`.
    pub fn pixels(&self, i: usize) -> Vec<f64> {
        let n = self.rows * self.cols;
        self.bytes[i * n..(i + 1) * n].iter().map(|&b| b as f64 / 255.0).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum IdxData {
    Images(IdxImages),
    Labels(Vec<u8>),
}

fn be_u32(bytes: &[u8], at: usize) -> Result<u32> {
    let s = bytes.get(at..at + 4).ok_or(Error::IdxTruncated {
        expected: at + 4,
        found: bytes.len(),
    })?;
    Ok(u32::from_be_bytes([s[0], s[1], s[2], s[3]]))
}

fn payload(bytes: &[u8], header: usize, len: usize) -> Result<&[u8]> {
    let expected = header + len;
    if bytes.len() < expected {
        return Err(Error::IdxTruncated {
            expected,
            found: bytes.len(),
        });
    }
    if bytes.len() > expected {
        return Err(Error::IdxDimension(format!(
            "header declares {expected} bytes but file has {}",
            bytes.len()
        )));
    }
    Ok(&bytes[header..])
}

pub fn parse_idx(bytes: &[u8]) -> Result<IdxData> {
    match be_u32(bytes, 0)? {
        IMAGES_MAGIC => {
            let count = be_u32(bytes, 4)? as usize;
            let rows = be_u32(bytes, 8)? as usize;
            let cols = be_u32(bytes, 12)? as usize;
            if rows == 0 || cols == 0 {
                return Err(Error::IdxDimension(format!("image size {rows}x{cols}")));
            }
            let data = payload(bytes, 16, count * rows * cols)?;
            Ok(IdxData::Images(IdxImages {
                rows,
                cols,
                bytes: data.to_vec(),
            }))
        }
        LABELS_MAGIC => {
            let count = be_u32(bytes, 4)? as usize;
            let data = payload(bytes, 8, count)?;
            if let Some(&bad) = data.iter().find(|&&l| l as usize >= NUM_IDENTITIES) {
                return Err(Error::IdxLabelRange(bad));
            }
            Ok(IdxData::Labels(data.to_vec()))
        }
        other => Err(Error::IdxMagic(other)),
    }
}

pub fn read_idx(path: &Path) -> Result<IdxData> {
    parse_idx(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

pub fn encode_idx(data: &IdxData) -> Vec<u8> {
    let mut out = Vec::new();
    match data {
        IdxData::Images(img) => {
            for v in [IMAGES_MAGIC, img.count() as u32, img.rows as u32, img.cols as u32] {
                out.extend_from_slice(&v.to_be_bytes());
            }
            out.extend_from_slice(&img.bytes);
        }
        IdxData::Labels(labels) => {
            for v in [LABELS_MAGIC, labels.len() as u32] {
                out.extend_from_slice(&v.to_be_bytes());
            }
            out.extend_from_slice(labels);
        }
    }
    out
}

/// Joins an image file and a label file into 28×28 samples without style
/// metadata.
pub fn load_digits(images: &Path, labels: &Path) -> Result<Vec<ImageSample>> {
    let IdxData::Images(img) = read_idx(images)? else {
        return Err(Error::IdxDimension(format!("{} holds labels, not images", images.display())));
    };
    let IdxData::Labels(lab) = read_idx(labels)? else {
        return Err(Error::IdxDimension(format!("{} holds images, not labels", labels.display())));
    };
    if img.rows != IMAGE_SIDE || img.cols != IMAGE_SIDE {
        return Err(Error::IdxDimension(format!(
            "images are {}x{}, expected {IMAGE_SIDE}x{IMAGE_SIDE}",
            img.rows, img.cols
        )));
    }
    if img.count() != lab.len() {
        return Err(Error::IdxDimension(format!("{} images but {} labels", img.count(), lab.len())));
    }
    Ok(lab
        .iter()
        .enumerate()
        .map(|(i, &identity)| ImageSample {
            identity,
            style: None,
            pixels: img.pixels(i),
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture() -> Vec<u8> {
        let mut b = vec![0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 28, 0, 0, 0, 28];
        b.extend((0..2 * 784).map(|i| (i * 7 % 256) as u8));
        b
    }

    #[test]
    fn images_round_trip() {
        let bytes = fixture();
        let data = parse_idx(&bytes).unwrap();
        let IdxData::Images(img) = &data else { panic!() };
        assert_eq!((img.count(), img.rows, img.cols), (2, 28, 28));
        assert_eq!(img.pixels(0)[1], 7.0 / 255.0);
        assert_eq!(encode_idx(&data), bytes);
    }

    #[test]
    fn distinct_errors() {
        let mut bad = fixture();
        bad[3] = 0x04;
        assert!(matches!(parse_idx(&bad), Err(Error::IdxMagic(0x0804))));
        let short = &fixture()[..100];
        assert!(matches!(parse_idx(short), Err(Error::IdxTruncated { .. })));
        let mut long = fixture();
        long.push(0);
        assert!(matches!(parse_idx(&long), Err(Error::IdxDimension(_))));
        let labels = [0, 0, 8, 1, 0, 0, 0, 3, 1, 10, 2];
        assert!(matches!(parse_idx(&labels), Err(Error::IdxLabelRange(10))));
        let ok = [0, 0, 8, 1, 0, 0, 0, 2, 1, 9];
        assert_eq!(parse_idx(&ok).unwrap(), IdxData::Labels(vec![1, 9]));
    }
}
