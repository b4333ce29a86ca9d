//! A synthetic five-kind image/audio corpus standing in for instrument data.
//!
//! Kind `k` is drawn as one fixed 16×16 glyph and sounds as a sine at
//! `FREQUENCIES[k]`; both carry independent noise. The tone's phase only
//! jitters slightly: a dense classifier cannot learn phase-invariant
//! frequency features from a thousand traces.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::audio::{audio_to_2d, pool_raster, CLIP_LEN, RASTER_COLS, RASTER_ROWS};
use super::paired::{semi_mask, PairedDataset};
use super::DataError;
use crate::tensor::Tensor;

pub const KINDS: usize = 5;
pub const SAMPLE_RATE: f64 = 8000.0;
pub const WAVE_LEN: usize = CLIP_LEN;
pub const GLYPH_SIZE: usize = 16;
/// Tone of each kind, a geometric ladder with ratio 1.5. Low enough that a
/// 4×4-pooled raster still resolves every period.
pub const FREQUENCIES: [f64; KINDS] = [20.0, 30.0, 45.0, 67.5, 101.25];
/// Half-width in radians of the uniform phase offset.
pub const PHASE_JITTER: f64 = 0.3;
pub const PIXEL_NOISE: f64 = 0.3;
/// Largest translation, in pixels, applied to a glyph along each axis.
pub const MAX_SHIFT: i32 = 2;
pub const WAVE_NOISE: f64 = 0.05;

/// Noise-free glyph of `kind`, `+1` on the stroke and `-1` elsewhere.
pub fn glyph(kind: usize) -> Vec<f64> {
    let n = GLYPH_SIZE;
    let on = |r: usize, c: usize| -> bool {
        let (fr, fc) = (r as f64 - 7.5, c as f64 - 7.5);
        match kind {
            0 => (6..10).contains(&r) && (2..14).contains(&c),
            1 => (6..10).contains(&c) && (2..14).contains(&r),
            2 => {
                let inside = |lo, hi| (lo..hi).contains(&r) && (lo..hi).contains(&c);
                inside(2, 14) && !inside(5, 11)
            }
            3 => {
                let box_ = (2..14).contains(&r) && (2..14).contains(&c);
                box_ && (r.abs_diff(c) <= 1 || (14..=16).contains(&(r + c)))
            }
            _ => fr * fr + fc * fc <= 30.0,
        }
    };
    (0..n * n).map(|i| if on(i / n, i % n) { 1.0 } else { -1.0 }).collect()
}

/// One synchronous (image, waveform) pair of the given kind. The glyph is
/// shifted by up to `MAX_SHIFT` pixels per axis.
pub fn synth_instrument_surrogate<R: Rng + ?Sized>(kind: usize, rng: &mut R) -> Result<(Tensor, Vec<f64>), DataError> {
    if kind >= KINDS {
        return Err(DataError::Invalid(format!(
            "instrument kind {kind} is not in 0..{KINDS}"
        )));
    }
    let pixel = Normal::new(0.0, PIXEL_NOISE).expect("valid sigma");
    let g = glyph(kind);
    let n = GLYPH_SIZE as isize;
    let dr = rng.random_range(-MAX_SHIFT..=MAX_SHIFT) as isize;
    let dc = rng.random_range(-MAX_SHIFT..=MAX_SHIFT) as isize;
    let image: Vec<f64> = (0..n * n)
        .map(|i| {
            let (r, c) = (i / n - dr, i % n - dc);
            let v = if (0..n).contains(&r) && (0..n).contains(&c) {
                g[(r * n + c) as usize]
            } else {
                -1.0
            };
            (v + pixel.sample(rng)).clamp(-1.0, 1.0)
        })
        .collect();

    let amp = rng.random_range(0.5..1.0);
    let phase = rng.random_range(-PHASE_JITTER..=PHASE_JITTER);
    let w = std::f64::consts::TAU * FREQUENCIES[kind] / SAMPLE_RATE;
    let hiss = Normal::new(0.0, WAVE_NOISE).expect("valid sigma");
    let wave = (0..WAVE_LEN)
        .map(|t| amp * (w * t as f64 + phase).sin() + hiss.sample(rng))
        .collect();
    Ok((Tensor::new(vec![GLYPH_SIZE, GLYPH_SIZE], image)?, wave))
}

/// Renders a waveform the way the dataset does: the raster of its first
/// 512 samples, pooled by `audio_pool`.
pub fn render_wave(wave: &[f64], audio_pool: usize) -> Result<Tensor, DataError> {
    pool_raster(&audio_to_2d(wave)?, audio_pool)
}

/// `per_kind` pairs of each kind in shuffled order. Modality 1 is the glyph
/// image, modality 2 the rendered audio.
pub fn build_instrument_dataset<R: Rng + ?Sized>(
    per_kind: usize,
    semi_rate: f64,
    audio_pool: usize,
    rng: &mut R,
) -> Result<PairedDataset, DataError> {
    let mut kinds: Vec<usize> = (0..KINDS).flat_map(|k| std::iter::repeat_n(k, per_kind)).collect();
    kinds.shuffle(rng);
    let mut d1 = Vec::new();
    let mut d2 = Vec::new();
    for &k in &kinds {
        let (img, wave) = synth_instrument_surrogate(k, rng)?;
        d1.extend_from_slice(img.data());
        d2.extend(render_wave(&wave, audio_pool)?.into_data());
    }
    let n = kinds.len();
    let audio_shape = [RASTER_ROWS / audio_pool, RASTER_COLS / audio_pool];
    let mask = semi_mask(n, semi_rate, rng)?;
    PairedDataset::new(
        Tensor::new(vec![n, GLYPH_SIZE * GLYPH_SIZE], d1)?,
        Tensor::new(vec![n, audio_shape[0] * audio_shape[1]], d2)?,
        Some(kinds),
        mask,
        [[GLYPH_SIZE, GLYPH_SIZE], audio_shape],
    )
}
