//! IDX array files (the MNIST distribution format), plain or gzip-compressed.
//!
//! Layout: two zero bytes, a type code, the rank, then `rank` big-endian
//! `u32` dimensions followed by the big-endian payload.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use flate2::read::GzDecoder;

use super::DataError;

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Clone, PartialEq)]
pub enum IdxData {
    U8(Vec<u8>),
    I8(Vec<i8>),
    I16(Vec<i16>),
    I32(Vec<i32>),
    F32(Vec<f32>),
    F64(Vec<f64>),
}

impl IdxData {
    pub fn type_code(&self) -> u8 {
        match self {
            IdxData::U8(_) => 0x08,
            IdxData::I8(_) => 0x09,
            IdxData::I16(_) => 0x0B,
            IdxData::I32(_) => 0x0C,
            IdxData::F32(_) => 0x0D,
            IdxData::F64(_) => 0x0E,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            IdxData::U8(v) => v.len(),
            IdxData::I8(v) => v.len(),
            IdxData::I16(v) => v.len(),
            IdxData::I32(v) => v.len(),
            IdxData::F32(v) => v.len(),
            IdxData::F64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Every element widened to `f64`.
    pub fn to_f64(&self) -> Vec<f64> {
        match self {
            IdxData::U8(v) => v.iter().map(|&x| x as f64).collect(),
            IdxData::I8(v) => v.iter().map(|&x| x as f64).collect(),
            IdxData::I16(v) => v.iter().map(|&x| x as f64).collect(),
            IdxData::I32(v) => v.iter().map(|&x| x as f64).collect(),
            IdxData::F32(v) => v.iter().map(|&x| x as f64).collect(),
            IdxData::F64(v) => v.clone(),
        }
    }
}

fn element_size(code: u8) -> Option<usize> {
    match code {
        0x08 | 0x09 => Some(1),
        0x0B => Some(2),
        0x0C | 0x0D => Some(4),
        0x0E => Some(8),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IdxArray {
    pub dims: Vec<usize>,
    pub data: IdxData,
}

impl IdxArray {
    pub fn new(dims: Vec<usize>, data: IdxData) -> Result<Self, DataError> {
        let n: usize = dims.iter().product();
        if n != data.len() || dims.len() > 255 {
            return Err(DataError::Invalid(format!(
                "IDX dims {dims:?} do not describe {} elements",
                data.len()
            )));
        }
        Ok(Self { dims, data })
    }

    pub fn magic(&self) -> u32 {
        ((self.data.type_code() as u32) << 8) | self.dims.len() as u32
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(4 + 4 * self.dims.len() + self.data.len() * 8);
        out.extend_from_slice(&self.magic().to_be_bytes());
        for &d in &self.dims {
            out.extend_from_slice(&(d as u32).to_be_bytes());
        }
        match &self.data {
            IdxData::U8(v) => out.extend_from_slice(v),
            IdxData::I8(v) => out.extend(v.iter().map(|&x| x as u8)),
            IdxData::I16(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_be_bytes())),
            IdxData::I32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_be_bytes())),
            IdxData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_be_bytes())),
            IdxData::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_be_bytes())),
        }
        out
    }

    /// Parses an uncompressed IDX buffer; `origin` only labels errors.
    pub fn decode(bytes: &[u8], origin: &str) -> Result<Self, DataError> {
        let truncated = |expected: usize| DataError::Truncated {
            path: origin.to_string(),
            expected,
            found: bytes.len(),
        };
        if bytes.len() < 4 {
            return Err(truncated(4));
        }
        let magic = u32::from_be_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]);
        let code = bytes[2];
        let rank = bytes[3] as usize;
        let size = match element_size(code) {
            Some(s) if bytes[0] == 0 && bytes[1] == 0 => s,
            _ => {
                return Err(DataError::BadMagic {
                    path: origin.to_string(),
                    expected: None,
                    found: magic,
                })
            }
        };
        let header = 4 + 4 * rank;
        if bytes.len() < header {
            return Err(truncated(header));
        }
        let dims: Vec<usize> = bytes[4..header]
            .chunks_exact(4)
            .map(|c| u32::from_be_bytes([c[0], c[1], c[2], c[3]]) as usize)
            .collect();
        let n: usize = dims.iter().product();
        let expected = header + n * size;
        if bytes.len() < expected {
            return Err(truncated(expected));
        }
        if bytes.len() > expected {
            return Err(DataError::Invalid(format!(
                "{origin}: {} trailing bytes after the IDX payload",
                bytes.len() - expected
            )));
        }
        let p = &bytes[header..];
        let data = match code {
            0x08 => IdxData::U8(p.to_vec()),
            0x09 => IdxData::I8(p.iter().map(|&b| b as i8).collect()),
            0x0B => IdxData::I16(p.chunks_exact(2).map(|c| i16::from_be_bytes([c[0], c[1]])).collect()),
            0x0C => IdxData::I32(
                p.chunks_exact(4)
                    .map(|c| i32::from_be_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
            0x0D => IdxData::F32(
                p.chunks_exact(4)
                    .map(|c| f32::from_be_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
            _ => IdxData::F64(
                p.chunks_exact(8)
                    .map(|c| f64::from_be_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
        };
        Ok(Self { dims, data })
    }
}

/// Reads a whole file, transparently inflating gzip content.
pub fn read_bytes(path: &Path) -> Result<Vec<u8>, DataError> {
    let raw = fs::read(path).map_err(|e| DataError::io(path, e))?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(&raw[..])
            .read_to_end(&mut out)
            .map_err(|e| DataError::io(path, e))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

pub fn read_idx(path: &Path) -> Result<IdxArray, DataError> {
    IdxArray::decode(&read_bytes(path)?, &path.display().to_string())
}

pub fn write_idx(path: &Path, arr: &IdxArray) -> Result<(), DataError> {
    let mut f = fs::File::create(path).map_err(|e| DataError::io(path, e))?;
    f.write_all(&arr.encode()).map_err(|e| DataError::io(path, e))
}

/// Grayscale images with one integer label each.
#[derive(Debug, Clone, PartialEq)]
pub struct RawImageCorpus {
    pub images: Vec<u8>,
    pub labels: Vec<u8>,
    pub height: usize,
    pub width: usize,
}

impl RawImageCorpus {
    pub fn new(images: Vec<u8>, labels: Vec<u8>, height: usize, width: usize) -> Result<Self, DataError> {
        let px = height * width;
        if px == 0 || images.len() != labels.len() * px {
            return Err(DataError::CountMismatch {
                images: if px == 0 { 0 } else { images.len() / px },
                labels: labels.len(),
            });
        }
        Ok(Self {
            images,
            labels,
            height,
            width,
        })
    }

    pub fn count(&self) -> usize {
        self.labels.len()
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn image(&self, i: usize) -> &[u8] {
        let px = self.pixels();
        &self.images[i * px..(i + 1) * px]
    }

    /// Keeps the images at `idx`, in that order.
    pub fn select(&self, idx: &[usize]) -> Self {
        let mut images = Vec::with_capacity(idx.len() * self.pixels());
        for &i in idx {
            images.extend_from_slice(self.image(i));
        }
        Self {
            images,
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            height: self.height,
            width: self.width,
        }
    }

    /// Keeps only images whose label is in `classes`.
    pub fn filter_classes(&self, classes: &[u8]) -> Self {
        let idx: Vec<usize> = (0..self.count())
            .filter(|&i| classes.contains(&self.labels[i]))
            .collect();
        self.select(&idx)
    }

    pub fn to_idx(&self) -> (IdxArray, IdxArray) {
        (
            IdxArray {
                dims: vec![self.count(), self.height, self.width],
                data: IdxData::U8(self.images.clone()),
            },
            IdxArray {
                dims: vec![self.count()],
                data: IdxData::U8(self.labels.clone()),
            },
        )
    }
}

/// Loads an image file (magic `0x803`) and its label file (magic `0x801`).
pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<RawImageCorpus, DataError> {
    let images = read_idx(images_path)?;
    let labels = read_idx(labels_path)?;
    for (arr, expected, path) in [
        (&images, IMAGES_MAGIC, images_path),
        (&labels, LABELS_MAGIC, labels_path),
    ] {
        if arr.magic() != expected {
            return Err(DataError::BadMagic {
                path: path.display().to_string(),
                expected: Some(expected),
                found: arr.magic(),
            });
        }
    }
    let (IdxData::U8(px), IdxData::U8(lb)) = (images.data, labels.data) else {
        unreachable!("magic numbers pin the element type to u8")
    };
    if images.dims[0] != labels.dims[0] {
        return Err(DataError::CountMismatch {
            images: images.dims[0],
            labels: labels.dims[0],
        });
    }
    RawImageCorpus::new(px, lb, images.dims[1], images.dims[2])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, arr: &IdxArray) -> std::path::PathBuf {
        let p = dir.join(name);
        write_idx(&p, arr).unwrap();
        p
    }

    #[test]
    fn two_image_fixture_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let pixels: Vec<u8> = (0..2 * 3 * 3).map(|i| (i * 13 % 256) as u8).collect();
        let corpus = RawImageCorpus::new(pixels.clone(), vec![7, 2], 3, 3).unwrap();
        let (im, lb) = corpus.to_idx();
        let ip = write(dir.path(), "img", &im);
        let lp = write(dir.path(), "lbl", &lb);

        let bytes = std::fs::read(&ip).unwrap();
        assert_eq!(&bytes[..4], &[0, 0, 8, 3]);
        assert_eq!(&bytes[4..8], &2u32.to_be_bytes());

        let back = load_idx(&ip, &lp).unwrap();
        assert_eq!(back, corpus);
        assert_eq!(back.image(1), &pixels[9..]);
    }

    #[test]
    fn gzip_is_transparent() {
        use flate2::{write::GzEncoder, Compression};
        let dir = tempfile::tempdir().unwrap();
        let arr = IdxArray::new(vec![4], IdxData::U8(vec![1, 2, 3, 4])).unwrap();
        let mut enc = GzEncoder::new(Vec::new(), Compression::default());
        enc.write_all(&arr.encode()).unwrap();
        let p = dir.path().join("a.gz");
        std::fs::write(&p, enc.finish().unwrap()).unwrap();
        assert_eq!(read_idx(&p).unwrap(), arr);
    }

    #[test]
    fn label_count_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let im = IdxArray::new(vec![3, 2, 2], IdxData::U8(vec![0; 12])).unwrap();
        let lb = IdxArray::new(vec![2], IdxData::U8(vec![0; 2])).unwrap();
        let ip = write(dir.path(), "i", &im);
        let lp = write(dir.path(), "l", &lb);
        assert!(matches!(
            load_idx(&ip, &lp).unwrap_err(),
            DataError::CountMismatch { images: 3, labels: 2 }
        ));
    }

    #[test]
    fn bad_magic_and_truncation_are_distinct() {
        let dir = tempfile::tempdir().unwrap();
        let im = IdxArray::new(vec![1, 2, 2], IdxData::U8(vec![0; 4])).unwrap();
        let lb = IdxArray::new(vec![1], IdxData::U8(vec![0])).unwrap();
        let ip = write(dir.path(), "i", &im);
        let lp = write(dir.path(), "l", &lb);

        // swapped files: each has the other's magic
        assert!(matches!(
            load_idx(&lp, &ip).unwrap_err(),
            DataError::BadMagic {
                expected: Some(IMAGES_MAGIC),
                found: LABELS_MAGIC,
                ..
            }
        ));

        let mut bytes = im.encode();
        bytes.pop();
        let tp = dir.path().join("t");
        std::fs::write(&tp, &bytes).unwrap();
        assert!(matches!(
            load_idx(&tp, &lp).unwrap_err(),
            DataError::Truncated {
                expected: 20,
                found: 19,
                ..
            }
        ));

        std::fs::write(&tp, [1u8, 0, 8, 1, 0]).unwrap();
        assert!(matches!(read_idx(&tp).unwrap_err(), DataError::BadMagic { .. }));
    }

    #[test]
    fn wide_types_round_trip() {
        for data in [
            IdxData::I32(vec![-5, 7, 1 << 20]),
            IdxData::F64(vec![-1.0, 0.25, 1e-9]),
            IdxData::F32(vec![0.5, -2.0, 3.0]),
            IdxData::I16(vec![-300, 2, 9]),
        ] {
            let arr = IdxArray::new(vec![3], data).unwrap();
            assert_eq!(IdxArray::decode(&arr.encode(), "mem").unwrap(), arr);
        }
    }
}
