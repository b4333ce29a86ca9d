//! Binary PGM (P5) images for inspecting generated samples.

use std::fs;
use std::path::Path;

use crate::data::unit_to_byte;
use crate::error::{Error, Result};

/// An 8-bit grayscale image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Gray {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl Gray {
    /// Maps values in `[-1, 1]` to bytes, row-major.
    pub fn from_unit(values: &[f64], height: usize, width: usize) -> Result<Self> {
        if values.len() != height * width {
            return Err(Error::Config(format!(
                "{} values cannot fill a {height}×{width} image",
                values.len()
            )));
        }
        Ok(Self {
            width,
            height,
            pixels: values.iter().map(|&v| unit_to_byte(v)).collect(),
        })
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }

    pub fn decode(bytes: &[u8], origin: &Path) -> Result<Self> {
        let bad = |msg: &str| Error::format(origin, msg.to_string());
        let mut fields = Vec::with_capacity(4);
        let mut pos = 0;
        while fields.len() < 4 {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(bad("truncated PGM header"));
            }
            fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("non-ASCII PGM header"))?);
        }
        if fields[0] != "P5" {
            return Err(bad("not a binary PGM (P5)"));
        }
        let num = |s: &str| s.parse::<usize>().map_err(|_| bad("malformed PGM header"));
        let (width, height, maxval) = (num(fields[1])?, num(fields[2])?, num(fields[3])?);
        if maxval != 255 {
            return Err(bad("only 8-bit PGM is supported"));
        }
        pos += 1;
        let pixels = bytes
            .get(pos..pos + width * height)
            .ok_or_else(|| bad("truncated PGM pixel data"))?
            .to_vec();
        Ok(Self { width, height, pixels })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes, path)
    }
}

/// Tiles images into `cols` columns. Every cell is as large as the largest
/// image; images sit at a cell's top-left and cells are separated by a
/// one-pixel black line, which also frames the sheet.
pub fn grid(images: &[Gray], cols: usize) -> Result<Gray> {
    if images.is_empty() {
        return Err(Error::Config("grid needs at least one image".into()));
    }
    let h = images.iter().map(|g| g.height).max().unwrap_or(0);
    let w = images.iter().map(|g| g.width).max().unwrap_or(0);
    let cols = cols.clamp(1, images.len());
    let rows = images.len().div_ceil(cols);
    let (gw, gh) = (cols * (w + 1) + 1, rows * (h + 1) + 1);
    let mut pixels = vec![0u8; gw * gh];
    for (k, img) in images.iter().enumerate() {
        let (oy, ox) = (1 + (k / cols) * (h + 1), 1 + (k % cols) * (w + 1));
        for r in 0..img.height {
            let at = (oy + r) * gw + ox;
            pixels[at..at + img.width].copy_from_slice(&img.pixels[r * img.width..(r + 1) * img.width]);
        }
    }
    Ok(Gray {
        width: gw,
        height: gh,
        pixels,
    })
}
