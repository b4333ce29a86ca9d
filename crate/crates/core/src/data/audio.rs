//! Waveform-to-raster rendering for the audio modality.
//!
//! A 512-sample clip is decimated to 128 values, peak-normalized, and drawn
//! as a 64×128 trace: column `t` holds `+1` at the row encoding `X(t)` and
//! `-1` everywhere else.

use super::image::pool;
use super::DataError;
use crate::tensor::Tensor;

pub const CLIP_LEN: usize = 512;
pub const DECIMATION: usize = 4;
pub const RASTER_ROWS: usize = 64;
pub const RASTER_COLS: usize = CLIP_LEN / DECIMATION;

/// Row of the raster that encodes a value in `[-1, 1]`; halves round up.
pub fn raster_row(x: f64) -> usize {
    let pos = (x + 1.0) / 2.0 * (RASTER_ROWS - 1) as f64;
    ((pos + 0.5).floor() as usize).min(RASTER_ROWS - 1)
}

/// Stride-4 decimation of the first 512 samples, scaled by the peak
/// magnitude. An all-zero clip stays all zero.
pub fn decimate(wave: &[f64]) -> Result<Vec<f64>, DataError> {
    if wave.len() < CLIP_LEN {
        return Err(DataError::WaveTooShort {
            len: wave.len(),
            min: CLIP_LEN,
        });
    }
    let x: Vec<f64> = wave[..CLIP_LEN].iter().step_by(DECIMATION).copied().collect();
    let peak = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    Ok(if peak > 0.0 {
        x.iter().map(|v| v / peak).collect()
    } else {
        x
    })
}

/// Renders the first 512 samples of `wave` as a `[64 × 128]` raster.
pub fn audio_to_2d(wave: &[f64]) -> Result<Tensor, DataError> {
    let x = decimate(wave)?;
    let mut grid = vec![-1.0; RASTER_ROWS * RASTER_COLS];
    for (t, v) in x.iter().enumerate() {
        grid[raster_row(*v) * RASTER_COLS + t] = 1.0;
    }
    Ok(Tensor::new(vec![RASTER_ROWS, RASTER_COLS], grid)?)
}

/// Shrinks a raster by averaging `factor × factor` blocks; `1` is a no-op.
pub fn pool_raster(raster: &Tensor, factor: usize) -> Result<Tensor, DataError> {
    let (h, w) = (raster.shape()[0], raster.shape()[1]);
    let data = pool(raster.data(), h, w, factor)?;
    Ok(Tensor::new(vec![h / factor, w / factor], data)?)
}
