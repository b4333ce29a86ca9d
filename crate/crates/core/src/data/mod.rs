//! Corpus ingestion, pair construction, domain synthesis and audio rendering.

pub mod audio;
pub mod idx;
pub mod image;
pub mod paired;
pub mod surrogate;

use std::io;
use std::path::Path;

use thiserror::Error;

use crate::tensor::TensorError;

pub use audio::audio_to_2d;
pub use idx::{load_idx, read_idx, write_idx, IdxArray, IdxData, RawImageCorpus};
pub use image::{prepare_image, rotate90};
pub use paired::{build_paired_dataset, build_rotated_dataset, sample_async_real_pairs, ClassMap, PairedDataset};
pub use surrogate::{build_instrument_dataset, synth_instrument_surrogate};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("{path}: bad IDX magic {found:#010x}{}", expected.map(|e| format!(" (expected {e:#010x})")).unwrap_or_default())]
    BadMagic {
        path: String,
        expected: Option<u32>,
        found: u32,
    },
    #[error("{path}: truncated, need {expected} bytes but found {found}")]
    Truncated {
        path: String,
        expected: usize,
        found: usize,
    },
    #[error("image count {images} does not match label count {labels}")]
    CountMismatch { images: usize, labels: usize },
    #[error("class {class} has no items in corpus {corpus}")]
    EmptyClass { class: usize, corpus: usize },
    #[error("class {class} needs {needed} items but only {available} are available")]
    InsufficientSupply {
        class: usize,
        needed: usize,
        available: usize,
    },
    #[error("rotation needs square images, got {height}×{width}")]
    NotSquare { height: usize, width: usize },
    #[error("waveform has {len} samples, at least {min} are required")]
    WaveTooShort { len: usize, min: usize },
    #[error("only {available} paired entries, at least 2 are required")]
    TooFewPaired { available: usize },
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("manifest: {0}")]
    Json(#[from] serde_json::Error),
}

impl DataError {
    pub(crate) fn io(path: &Path, source: io::Error) -> Self {
        DataError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

/// Maps a byte `0..=255` to `[-1, 1]`.
pub fn byte_to_unit(b: f64) -> f64 {
    b / 127.5 - 1.0
}

/// Inverse of [`byte_to_unit`], rounded and clamped to a byte.
pub fn unit_to_byte(x: f64) -> u8 {
    ((x + 1.0) * 127.5).round().clamp(0.0, 255.0) as u8
}
