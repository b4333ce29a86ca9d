//! Pixel-grid transforms: quarter-turn rotation and desk-scale downsampling.

use super::{byte_to_unit, DataError, RawImageCorpus};

/// Side length of the desk-scale images.
pub const DESK_SIZE: usize = 16;

/// Counter-clockwise quarter turn of a square `n × n` grid:
/// `out[n-1-c][r] = in[r][c]`.
pub fn rotate90_square<T: Copy>(img: &[T], n: usize) -> Vec<T> {
    debug_assert_eq!(img.len(), n * n);
    let mut out = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            out.push(img[j * n + (n - 1 - i)]);
        }
    }
    out
}

/// Rotates every image of a square corpus by 90° counter-clockwise.
pub fn rotate90(corpus: &RawImageCorpus) -> Result<RawImageCorpus, DataError> {
    let (h, w) = (corpus.height, corpus.width);
    if h != w {
        return Err(DataError::NotSquare { height: h, width: w });
    }
    let mut images = Vec::with_capacity(corpus.images.len());
    for i in 0..corpus.count() {
        images.extend(rotate90_square(corpus.image(i), h));
    }
    RawImageCorpus::new(images, corpus.labels.clone(), h, w)
}

/// Zero-pads by `pad` on every side, then averages `factor × factor` blocks.
pub fn pad_and_pool(img: &[u8], h: usize, w: usize, pad: usize, factor: usize) -> Vec<f64> {
    let (ph, pw) = (h + 2 * pad, w + 2 * pad);
    let (oh, ow) = (ph / factor, pw / factor);
    let at = |r: usize, c: usize| -> f64 {
        if r < pad || c < pad || r >= h + pad || c >= w + pad {
            0.0
        } else {
            img[(r - pad) * w + (c - pad)] as f64
        }
    };
    let norm = (factor * factor) as f64;
    let mut out = Vec::with_capacity(oh * ow);
    for r in 0..oh {
        for c in 0..ow {
            let mut s = 0.0;
            for dr in 0..factor {
                for dc in 0..factor {
                    s += at(r * factor + dr, c * factor + dc);
                }
            }
            out.push(s / norm);
        }
    }
    out
}

/// Average-pools a real-valued `h × w` grid by `factor` (which must divide both).
pub fn pool(grid: &[f64], h: usize, w: usize, factor: usize) -> Result<Vec<f64>, DataError> {
    if factor == 0 || !h.is_multiple_of(factor) || !w.is_multiple_of(factor) {
        return Err(DataError::Invalid(format!(
            "pool factor {factor} does not divide {h}×{w}"
        )));
    }
    let (oh, ow) = (h / factor, w / factor);
    let norm = (factor * factor) as f64;
    let mut out = vec![0.0; oh * ow];
    for r in 0..h {
        for c in 0..w {
            out[(r / factor) * ow + c / factor] += grid[r * w + c];
        }
    }
    out.iter_mut().for_each(|v| *v /= norm);
    Ok(out)
}

/// Converts one byte image to `[-1, 1]` at the requested side length.
///
/// `size == h` keeps the native grid. A 28×28 MNIST digit goes to 16×16 by
/// padding two background pixels per side (32×32) and 2×2 average pooling.
pub fn prepare_image(img: &[u8], h: usize, w: usize, size: usize) -> Result<Vec<f64>, DataError> {
    if size == h && size == w {
        return Ok(img.iter().map(|&b| byte_to_unit(b as f64)).collect());
    }
    if h == w && (h + 4).is_multiple_of(2) && (h + 4) / 2 == size {
        return Ok(pad_and_pool(img, h, w, 2, 2).into_iter().map(byte_to_unit).collect());
    }
    Err(DataError::Invalid(format!(
        "cannot resize {h}×{w} images to {size}×{size}"
    )))
}
