//! Binary training snapshots.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "SYGN" | version u32 | config length u32 | config JSON
//! then until EOF: name length u32 | name | dtype u8 | rank u32 | dims u32 × rank | payload
//! ```
//!
//! `dtype` is 1 for `f64` and 2 for `u64`.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::adam::AdamState;
use crate::error::{Error, Result};
use crate::model::SyncGanModel;
use crate::trainer::{seeded_rng, Net, TrainConfig, Trainer, STREAM_INIT};

pub const MAGIC: &[u8; 4] = b"SYGN";
pub const VERSION: u32 = 1;

/// Well-formed records whose content does not describe a trainer.
fn corrupt(msg: impl Into<String>) -> Error {
    Error::Format {
        path: "checkpoint".into(),
        msg: msg.into(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ArrayData {
    F64(Vec<f64>),
    U64(Vec<u64>),
}

impl ArrayData {
    fn tag(&self) -> u8 {
        match self {
            ArrayData::F64(_) => 1,
            ArrayData::U64(_) => 2,
        }
    }

    fn len(&self) -> usize {
        match self {
            ArrayData::F64(v) => v.len(),
            ArrayData::U64(v) => v.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedArray {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: ArrayData,
}

impl NamedArray {
    fn f64(name: String, dims: Vec<usize>, data: Vec<f64>) -> Self {
        Self {
            name,
            dims,
            data: ArrayData::F64(data),
        }
    }

    fn u64(name: String, data: Vec<u64>) -> Self {
        Self {
            name,
            dims: vec![data.len()],
            data: ArrayData::U64(data),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    /// The configuration exactly as serialized at capture time.
    pub config_json: String,
    pub arrays: Vec<NamedArray>,
}

impl Checkpoint {
    /// Snapshots parameters, optimizer moments, the iteration counter and
    /// the sampling RNG position.
    pub fn capture(trainer: &Trainer) -> Self {
        let config_json = serde_json::to_string_pretty(trainer.config()).expect("config serializes");
        let mut arrays: Vec<NamedArray> = trainer
            .model
            .named_params()
            .into_iter()
            .map(|(name, t)| NamedArray::f64(name, t.shape().to_vec(), t.data().to_vec()))
            .collect();
        for net in Net::UPDATE_ORDER {
            let opt = trainer.optimizer(net);
            let n = net.name();
            arrays.push(NamedArray::u64(format!("opt.{n}.step"), vec![opt.step_count()]));
            for (k, (m, v)) in opt.first_moments().iter().zip(opt.second_moments()).enumerate() {
                arrays.push(NamedArray::f64(format!("opt.{n}.m.{k}"), vec![m.len()], m.clone()));
                arrays.push(NamedArray::f64(format!("opt.{n}.v.{k}"), vec![v.len()], v.clone()));
            }
        }
        arrays.push(NamedArray::u64("train.iteration".into(), vec![trainer.iteration()]));
        let rng = trainer.rng();
        let seed = rng.get_seed();
        let mut state: Vec<u64> = seed
            .chunks_exact(8)
            .map(|c| u64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let pos = rng.get_word_pos();
        state.extend([rng.get_stream(), pos as u64, (pos >> 64) as u64]);
        arrays.push(NamedArray::u64("train.rng".into(), state));
        let dims = trainer.model.data_dims();
        arrays.push(NamedArray::u64(
            "model.data_dims".into(),
            dims.map(|d| d as u64).to_vec(),
        ));
        for (m, s) in trainer.data_shapes().iter().enumerate() {
            arrays.push(NamedArray::u64(
                format!("data.shape{}", m + 1),
                s.map(|d| d as u64).to_vec(),
            ));
        }
        Self { config_json, arrays }
    }

    pub fn config(&self) -> Result<TrainConfig> {
        serde_json::from_str(&self.config_json).map_err(|e| corrupt(format!("checkpoint config: {e}")))
    }

    pub fn get(&self, name: &str) -> Option<&NamedArray> {
        self.arrays.iter().find(|a| a.name == name)
    }

    fn u64s(&self, name: &str) -> Result<&[u64]> {
        match self.get(name).map(|a| &a.data) {
            Some(ArrayData::U64(v)) => Ok(v),
            _ => Err(corrupt(format!("checkpoint lacks u64 record {name}"))),
        }
    }

    fn f64s(&self, name: &str) -> Option<&[f64]> {
        match self.get(name).map(|a| &a.data) {
            Some(ArrayData::F64(v)) => Some(v),
            _ => None,
        }
    }

    fn u64(&self, name: &str) -> Result<u64> {
        match self.u64s(name)? {
            [v] => Ok(*v),
            _ => Err(corrupt(format!("u64 record {name} must hold one value"))),
        }
    }

    pub fn data_shapes(&self) -> Result<[[usize; 2]; 2]> {
        let mut out = [[0; 2]; 2];
        for (m, slot) in out.iter_mut().enumerate() {
            let v = self.u64s(&format!("data.shape{}", m + 1))?;
            if v.len() != 2 {
                return Err(corrupt(format!("data.shape{} must have 2 entries", m + 1)));
            }
            *slot = [v[0] as usize, v[1] as usize];
        }
        Ok(out)
    }

    /// The networks alone.
    pub fn model(&self) -> Result<SyncGanModel> {
        let cfg = self.config()?;
        let dims = self.u64s("model.data_dims")?;
        if dims.len() != 2 {
            return Err(corrupt("model.data_dims must have 2 entries"));
        }
        let mut model = SyncGanModel::new(
            cfg.latent_dim,
            [dims[0] as usize, dims[1] as usize],
            cfg.synchronizer_variant,
            &cfg.architecture,
            &mut seeded_rng(cfg.seed, STREAM_INIT),
        )?;
        for (name, t) in model.named_params_mut() {
            let a = self
                .get(&name)
                .ok_or_else(|| corrupt(format!("checkpoint lacks parameter {name}")))?;
            match &a.data {
                ArrayData::F64(v) if a.dims == t.shape() => t.data_mut().copy_from_slice(v),
                _ => {
                    return Err(corrupt(format!(
                        "parameter {name}: checkpoint has {:?}, model expects {:?}",
                        a.dims,
                        t.shape()
                    )))
                }
            }
        }
        Ok(model)
    }

    /// A trainer that continues exactly where the captured one stopped.
    pub fn restore(&self) -> Result<Trainer> {
        let cfg = self.config()?;
        let model = self.model()?;
        let adam = cfg.adam();
        let mut opts = Vec::with_capacity(5);
        for net in Net::UPDATE_ORDER {
            let n = net.name();
            let step = self.u64(&format!("opt.{n}.step"))?;
            let (mut first, mut second) = (Vec::new(), Vec::new());
            for k in 0.. {
                match (
                    self.f64s(&format!("opt.{n}.m.{k}")),
                    self.f64s(&format!("opt.{n}.v.{k}")),
                ) {
                    (Some(m), Some(v)) => {
                        first.push(m.to_vec());
                        second.push(v.to_vec());
                    }
                    _ => break,
                }
            }
            opts.push(AdamState::from_parts(adam, step, first, second)?);
        }
        let opts: [AdamState; 5] = opts.try_into().expect("five optimizers");

        let state = self.u64s("train.rng")?;
        if state.len() != 7 {
            return Err(corrupt("train.rng must have 7 entries"));
        }
        let mut seed = [0u8; 32];
        for (chunk, w) in seed.chunks_exact_mut(8).zip(&state[..4]) {
            chunk.copy_from_slice(&w.to_le_bytes());
        }
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(state[4]);
        rng.set_word_pos(state[5] as u128 | (state[6] as u128) << 64);
        let iteration = self.u64("train.iteration")?;
        Trainer::from_parts(model, cfg, Some(opts), rng, iteration, self.data_shapes()?)
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.config_json.len() as u32).to_le_bytes());
        out.extend_from_slice(self.config_json.as_bytes());
        for a in &self.arrays {
            out.extend_from_slice(&(a.name.len() as u32).to_le_bytes());
            out.extend_from_slice(a.name.as_bytes());
            out.push(a.data.tag());
            out.extend_from_slice(&(a.dims.len() as u32).to_le_bytes());
            for &d in &a.dims {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            match &a.data {
                ArrayData::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
                ArrayData::U64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            }
        }
        out
    }

    pub fn decode(bytes: &[u8], origin: &Path) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0, origin };
        if r.take(4)? != MAGIC {
            return Err(Error::format(origin, "not a checkpoint (bad magic)"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::format(
                origin,
                format!("unsupported checkpoint version {version}"),
            ));
        }
        let n = r.u32()? as usize;
        let config_json =
            String::from_utf8(r.take(n)?.to_vec()).map_err(|_| Error::format(origin, "config is not UTF-8"))?;
        let mut arrays = Vec::new();
        while r.pos < bytes.len() {
            let n = r.u32()? as usize;
            let name = String::from_utf8(r.take(n)?.to_vec())
                .map_err(|_| Error::format(origin, "record name is not UTF-8"))?;
            let tag = r.take(1)?[0];
            let rank = r.u32()? as usize;
            let dims = (0..rank)
                .map(|_| r.u32().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let count: usize = dims.iter().product();
            let payload = r.take(
                count
                    .checked_mul(8)
                    .ok_or_else(|| Error::format(origin, "record too large"))?,
            )?;
            let words = payload.chunks_exact(8).map(|c| c.try_into().expect("8 bytes"));
            let data = match tag {
                1 => ArrayData::F64(words.map(f64::from_le_bytes).collect()),
                2 => ArrayData::U64(words.map(u64::from_le_bytes).collect()),
                t => return Err(Error::format(origin, format!("record {name}: unknown dtype {t}"))),
            };
            debug_assert_eq!(data.len(), count);
            arrays.push(NamedArray { name, dims, data });
        }
        Ok(Self { config_json, arrays })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes, path)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    origin: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| {
                Error::format(
                    self.origin,
                    format!(
                        "truncated: need {n} bytes at offset {}, file has {}",
                        self.pos,
                        self.bytes.len()
                    ),
                )
            })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Architecture;

    fn tiny_trainer() -> Trainer {
        let cfg = TrainConfig {
            batch_size: 4,
            latent_dim: 3,
            architecture: Architecture {
                generator_hidden: vec![5],
                discriminator_hidden: vec![5],
                sync_feature_dim: 2,
                sync_extractor_hidden: vec![3],
                sync_fusion_hidden: vec![3],
                style_sync_hidden: vec![4],
                minibatch_feature: false,
            },
            ..TrainConfig::default()
        };
        Trainer::new(cfg, [4, 6], [[2, 2], [2, 3]]).unwrap()
    }

    #[test]
    fn encode_decode_encode_is_stable() {
        let t = tiny_trainer();
        let ck = Checkpoint::capture(&t);
        let bytes = ck.encode();
        let back = Checkpoint::decode(&bytes, Path::new("mem")).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.encode(), bytes);
        let restored = back.restore().unwrap();
        assert_eq!(restored.model, t.model);
        assert_eq!(Checkpoint::capture(&restored).encode(), bytes);
    }

    #[test]
    fn bad_magic_and_truncation() {
        let bytes = Checkpoint::capture(&tiny_trainer()).encode();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(
            Checkpoint::decode(&bad, Path::new("x")),
            Err(Error::Format { .. })
        ));
        assert!(matches!(
            Checkpoint::decode(&bytes[..bytes.len() - 3], Path::new("x")),
            Err(Error::Format { .. })
        ));
    }
}
