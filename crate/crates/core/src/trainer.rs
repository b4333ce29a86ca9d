//! The training loop: a data-distribution phase on unpaired batches, a
//! synchronous phase on paired batches, and five optimizer updates per
//! iteration.

use std::fs::{self, File, OpenOptions};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::adam::{AdamConfig, AdamState};
use crate::checkpoint::Checkpoint;
use crate::data::paired::{sample_sync_real_pairs, sample_unpaired};
use crate::data::{sample_async_real_pairs, PairedDataset};
use crate::error::{Error, Result};
use crate::losses::{
    discriminator_loss, generator_adv_loss, generator_sync_loss, mean_log, synchronizer_loss, LossValue, Phase,
};
use crate::model::{Architecture, Modality, SyncGanModel, SynchronizerVariant};
use crate::tape::Tape;
use crate::tensor::Tensor;

/// RNG stream used for parameter initialization.
pub const STREAM_INIT: u64 = 0;
/// RNG stream used for batch and latent sampling.
pub const STREAM_TRAIN: u64 = 1;
/// RNG stream used to draw the paired mask.
pub const STREAM_MASK: u64 = 2;

pub fn seeded_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub latent_dim: usize,
    pub sync_pair_ratio: f64,
    pub semi_rate: f64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub iterations: u64,
    pub seed: u64,
    pub synchronizer_variant: SynchronizerVariant,
    pub image_size: usize,
    /// Write a numbered checkpoint every this many iterations; 0 only writes the final one.
    pub checkpoint_every: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dataset: Option<PathBuf>,
    pub architecture: Architecture,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 128,
            latent_dim: 64,
            sync_pair_ratio: 0.5,
            semi_rate: 1.0,
            learning_rate: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            epsilon: 1e-8,
            iterations: 3000,
            seed: 0,
            synchronizer_variant: SynchronizerVariant::StyleTransfer,
            image_size: 16,
            checkpoint_every: 0,
            dataset: None,
            architecture: Architecture::default(),
        }
    }
}

fn check_split(batch: usize, ratio: f64) -> Result<usize> {
    let k = batch as f64 * ratio;
    if (k - k.round()).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "batch {batch} × sync_pair_ratio {ratio} = {k} is not a whole number of rows"
        )));
    }
    Ok(k.round() as usize)
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.batch_size < 2 || !self.batch_size.is_multiple_of(2) {
            return bad(format!(
                "batch_size must be even and at least 2, got {}",
                self.batch_size
            ));
        }
        if self.latent_dim == 0 {
            return bad("latent_dim must be positive".into());
        }
        if !(self.sync_pair_ratio > 0.0 && self.sync_pair_ratio < 1.0) {
            return bad(format!(
                "sync_pair_ratio must lie strictly between 0 and 1, got {}",
                self.sync_pair_ratio
            ));
        }
        check_split(self.batch_size, self.sync_pair_ratio)?;
        if !(0.0..=1.0).contains(&self.semi_rate) {
            return bad(format!("semi_rate must lie in [0, 1], got {}", self.semi_rate));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return bad(format!("{name} must lie in [0, 1), got {b}"));
            }
        }
        if !(self.epsilon > 0.0) {
            return bad(format!("epsilon must be positive, got {}", self.epsilon));
        }
        if self.image_size == 0 {
            return bad("image_size must be positive".into());
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
        }
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

/// Latent batches for the synchronous phase. The first `round(ratio · batch)`
/// rows of `z2` copy `z1` (flag `true`); the rest are drawn independently.
pub fn sample_latent_pairs<R: rand::Rng + ?Sized>(
    batch: usize,
    latent_dim: usize,
    ratio: f64,
    rng: &mut R,
) -> Result<(Tensor, Tensor, Vec<bool>)> {
    if !(0.0..=1.0).contains(&ratio) {
        return Err(Error::Config(format!("pair ratio {ratio} outside [0, 1]")));
    }
    let k = check_split(batch, ratio)?;
    let z1 = Tensor::randn(vec![batch, latent_dim], rng);
    let fresh = Tensor::randn(vec![batch - k, latent_dim], rng);
    let mut data = Vec::with_capacity(batch * latent_dim);
    data.extend_from_slice(&z1.data()[..k * latent_dim]);
    data.extend_from_slice(fresh.data());
    let z2 = Tensor::new(vec![batch, latent_dim], data)?;
    let flags = (0..batch).map(|i| i < k).collect();
    Ok((z1, z2, flags))
}

/// Redraws the dataset's paired mask from `cfg.semi_rate` on the mask stream.
pub fn apply_semi_rate(ds: &mut PairedDataset, cfg: &TrainConfig) -> Result<()> {
    ds.apply_semi_rate(cfg.semi_rate, &mut seeded_rng(cfg.seed, STREAM_MASK))?;
    Ok(())
}

/// One of the five independently optimized networks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Net {
    S,
    D1,
    D2,
    G1,
    G2,
}

impl Net {
    /// The order in which an iteration applies its updates.
    pub const UPDATE_ORDER: [Net; 5] = [Net::S, Net::D1, Net::D2, Net::G1, Net::G2];

    pub fn name(self) -> &'static str {
        match self {
            Net::S => "s",
            Net::D1 => "d1",
            Net::D2 => "d2",
            Net::G1 => "g1",
            Net::G2 => "g2",
        }
    }

    fn slot(self) -> usize {
        self as usize
    }
}

pub const METRICS_HEADER: [&str; 8] = [
    "iter", "L_D1", "L_D2", "L_G1_dis", "L_G2_dis", "L_S", "L_G_sync", "wall_ms",
];

/// Loss values of one iteration, in their maximize form. The synchronous
/// entries are `None` when the paired pool had fewer than two entries.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationMetrics {
    pub iteration: u64,
    pub l_d1: f64,
    pub l_d2: f64,
    pub l_g1_dis: f64,
    pub l_g2_dis: f64,
    pub l_s: Option<f64>,
    pub l_g_sync: Option<f64>,
    pub wall_ms: f64,
}

impl IterationMetrics {
    pub fn sync_skipped(&self) -> bool {
        self.l_s.is_none()
    }

    pub fn csv_record(&self) -> [String; 8] {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        [
            self.iteration.to_string(),
            self.l_d1.to_string(),
            self.l_d2.to_string(),
            self.l_g1_dis.to_string(),
            self.l_g2_dis.to_string(),
            opt(self.l_s),
            opt(self.l_g_sync),
            format!("{:.3}", self.wall_ms),
        ]
    }
}

pub struct Trainer {
    pub model: SyncGanModel,
    config: TrainConfig,
    optimizers: [AdamState; 5],
    rng: ChaCha8Rng,
    iteration: u64,
    sync_pair_ratio: f64,
    data_shapes: [[usize; 2]; 2],
    pending: [bool; 5],
}

impl Trainer {
    /// Fresh networks for data of the given dims and grid layouts.
    pub fn new(config: TrainConfig, data_dims: [usize; 2], data_shapes: [[usize; 2]; 2]) -> Result<Self> {
        config.validate()?;
        let mut init = seeded_rng(config.seed, STREAM_INIT);
        let model = SyncGanModel::new(
            config.latent_dim,
            data_dims,
            config.synchronizer_variant,
            &config.architecture,
            &mut init,
        )?;
        let rng = seeded_rng(config.seed, STREAM_TRAIN);
        Self::from_parts(model, config, Default::default(), rng, 0, data_shapes)
    }

    pub fn for_dataset(config: TrainConfig, ds: &PairedDataset) -> Result<Self> {
        Self::new(config, ds.dims(), ds.shapes)
    }

    /// Reassembles a trainer from saved state. `optimizers` default to fresh
    /// states when `None`.
    pub fn from_parts(
        model: SyncGanModel,
        config: TrainConfig,
        optimizers: Option<[AdamState; 5]>,
        rng: ChaCha8Rng,
        iteration: u64,
        data_shapes: [[usize; 2]; 2],
    ) -> Result<Self> {
        config.validate()?;
        let adam = config.adam();
        let optimizers = optimizers.unwrap_or_else(|| std::array::from_fn(|_| AdamState::new(adam)));
        Ok(Self {
            model,
            sync_pair_ratio: config.sync_pair_ratio,
            config,
            optimizers,
            rng,
            iteration,
            data_shapes,
            pending: [false; 5],
        })
    }

    /// Changes the iteration budget and checkpoint cadence, the only settings
    /// a resumed run may alter.
    pub fn set_budget(&mut self, iterations: u64, checkpoint_every: u64) {
        self.config.iterations = iterations;
        self.config.checkpoint_every = checkpoint_every;
    }

    /// Records a new dataset location for a resumed run.
    pub fn set_dataset(&mut self, path: PathBuf) {
        self.config.dataset = Some(path);
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    pub fn rng(&self) -> &ChaCha8Rng {
        &self.rng
    }

    pub fn data_shapes(&self) -> [[usize; 2]; 2] {
        self.data_shapes
    }

    pub fn optimizer(&self, net: Net) -> &AdamState {
        &self.optimizers[net.slot()]
    }

    pub fn optimizers(&self) -> &[AdamState; 5] {
        &self.optimizers
    }

    pub fn sync_pair_ratio(&self) -> f64 {
        self.sync_pair_ratio
    }

    /// Sets the identical-z fraction without the `< 1` guard, so the
    /// degenerate all-identical regime can be studied. Not persisted.
    pub fn override_sync_pair_ratio(&mut self, ratio: f64) -> Result<()> {
        if !(ratio > 0.0 && ratio <= 1.0) {
            return Err(Error::Config(format!("pair ratio {ratio} outside (0, 1]")));
        }
        check_split(self.config.batch_size, ratio)?;
        self.sync_pair_ratio = ratio;
        Ok(())
    }

    fn params_mut(&mut self, net: Net) -> Vec<&mut Tensor> {
        match net {
            Net::S => self.model.sync.params_mut(),
            Net::D1 => self.model.d1.params_mut(),
            Net::D2 => self.model.d2.params_mut(),
            Net::G1 => self.model.g1.params_mut(),
            Net::G2 => self.model.g2.params_mut(),
        }
    }

    fn check(&self, v: &LossValue, tape: &Tape) -> Result<f64> {
        let x = v.value(tape);
        if !x.is_finite() {
            return Err(Error::NonFinite {
                phase: v.phase.to_string(),
                iteration: self.iteration + 1,
            });
        }
        Ok(x)
    }

    /// Draws both phases' batches, evaluates all six objectives at the
    /// current parameters and leaves each network's gradient in its
    /// parameters. Nothing is updated.
    pub fn compute_gradients(&mut self, ds: &PairedDataset) -> Result<IterationMetrics> {
        if ds.dims() != self.model.data_dims() {
            return Err(Error::Config(format!(
                "dataset dims {:?} do not match the model's {:?}",
                ds.dims(),
                self.model.data_dims()
            )));
        }
        if ds.is_empty() {
            return Err(Error::Config("dataset is empty".into()));
        }
        let start = Instant::now();
        let b = self.config.batch_size;
        let ld = self.config.latent_dim;
        self.model.zero_grad();
        self.pending = [false; 5];

        // data-distribution phase
        let z1 = Tensor::randn(vec![b, ld], &mut self.rng);
        let z2 = Tensor::randn(vec![b, ld], &mut self.rng);
        let (x1, x2) = sample_unpaired(ds, b, &mut self.rng);

        // synchronous phase
        let sync_active = ds.paired_indices().len() >= 2;
        let sync_batches = if sync_active {
            let latent = sample_latent_pairs(b, ld, self.sync_pair_ratio, &mut self.rng)?;
            let pos = sample_sync_real_pairs(ds, b / 2, &mut self.rng)?;
            let (n1, n2, _) = sample_async_real_pairs(ds, b - b / 2, &mut self.rng)?;
            Some((latent, pos, (n1, n2)))
        } else {
            None
        };

        // generators, against frozen discriminators and synchronizer
        let m = &self.model;
        let mut tape = Tape::new();
        let bg1 = m.g1.bind(&mut tape, true);
        let bg2 = m.g2.bind(&mut tape, true);
        let bd1 = m.d1.bind(&mut tape, false);
        let bd2 = m.d2.bind(&mut tape, false);
        let vz1 = tape.constant(&z1);
        let vz2 = tape.constant(&z2);
        let f1 = m.g1.forward(&mut tape, &bg1, vz1)?;
        let f2 = m.g2.forward(&mut tape, &bg2, vz2)?;
        let fake1 = tape.to_tensor(f1);
        let fake2 = tape.to_tensor(f2);
        let s1 = m.discriminator_forward(&mut tape, Modality::First, &bd1, f1)?;
        let s2 = m.discriminator_forward(&mut tape, Modality::Second, &bd2, f2)?;
        let lg1 = generator_adv_loss(&mut tape, s1, Phase::Gen1Adv)?;
        let lg2 = generator_adv_loss(&mut tape, s2, Phase::Gen2Adv)?;
        let mut total = tape.add(lg1.var, lg2.var)?;
        let mut lgs = None;
        if let Some(((zs1, zs2, flags), _, _)) = &sync_batches {
            let bs = m.sync.bind(&mut tape, false);
            let a = tape.constant(zs1);
            let c = tape.constant(zs2);
            let g1 = m.g1.forward(&mut tape, &bg1, a)?;
            let g2 = m.g2.forward(&mut tape, &bg2, c)?;
            let s = m.sync.forward(&mut tape, &bs, g1, g2)?;
            let k = flags.iter().filter(|&&f| f).count();
            let same = tape.slice_rows(s, 0, k)?;
            let l = if k == b {
                LossValue {
                    var: mean_log(&mut tape, same)?,
                    phase: Phase::GenSync,
                }
            } else {
                let diff = tape.slice_rows(s, k, b - k)?;
                generator_sync_loss(&mut tape, same, diff)?
            };
            total = tape.add(total, l.var)?;
            lgs = Some(l);
        }
        let l_g1_dis = self.check(&lg1, &tape)?;
        let l_g2_dis = self.check(&lg2, &tape)?;
        let l_g_sync = lgs.as_ref().map(|l| self.check(l, &tape)).transpose()?;
        let neg = tape.scale(total, -1.0);
        let grads = tape.backward(neg)?;
        self.model.g1.accumulate_grads(&grads, &bg1)?;
        self.model.g2.accumulate_grads(&grads, &bg2)?;

        // discriminators
        let m = &self.model;
        let mut tape = Tape::new();
        let bd1 = m.d1.bind(&mut tape, true);
        let bd2 = m.d2.bind(&mut tape, true);
        let disc = |tape: &mut Tape, modality, bound, real: &Tensor, fake: &Tensor, phase| {
            let r = tape.constant(real);
            let f = tape.constant(fake);
            let dr = m.discriminator_forward(tape, modality, bound, r)?;
            let df = m.discriminator_forward(tape, modality, bound, f)?;
            discriminator_loss(tape, dr, df, phase)
        };
        let ld1 = disc(&mut tape, Modality::First, &bd1, &x1, &fake1, Phase::Disc1)?;
        let ld2 = disc(&mut tape, Modality::Second, &bd2, &x2, &fake2, Phase::Disc2)?;
        let l_d1 = self.check(&ld1, &tape)?;
        let l_d2 = self.check(&ld2, &tape)?;
        let total = tape.add(ld1.var, ld2.var)?;
        let neg = tape.scale(total, -1.0);
        let grads = tape.backward(neg)?;
        self.model.d1.accumulate_grads(&grads, &bd1)?;
        self.model.d2.accumulate_grads(&grads, &bd2)?;

        // synchronizer, on real pairs only
        let mut l_s = None;
        if let Some((_, (p1, p2), (n1, n2))) = &sync_batches {
            let m = &self.model;
            let mut tape = Tape::new();
            let bs = m.sync.bind(&mut tape, true);
            let vars: Vec<_> = [p1, p2, n1, n2].iter().map(|t| tape.constant(t)).collect();
            let pos = m.sync.forward(&mut tape, &bs, vars[0], vars[1])?;
            let neg = m.sync.forward(&mut tape, &bs, vars[2], vars[3])?;
            let ls = synchronizer_loss(&mut tape, pos, neg)?;
            l_s = Some(self.check(&ls, &tape)?);
            let obj = tape.scale(ls.var, -1.0);
            let grads = tape.backward(obj)?;
            self.model.sync.accumulate_grads(&grads, &bs)?;
        }

        self.pending = [sync_active, true, true, true, true];
        Ok(IterationMetrics {
            iteration: self.iteration + 1,
            l_d1,
            l_d2,
            l_g1_dis,
            l_g2_dis,
            l_s,
            l_g_sync,
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
        })
    }

    /// Applies one network's pending Adam step and clears its gradients.
    /// A network without pending gradients is left untouched.
    pub fn apply_update(&mut self, net: Net) -> Result<()> {
        if !self.pending[net.slot()] {
            return Ok(());
        }
        let mut opt = std::mem::replace(&mut self.optimizers[net.slot()], AdamState::new(self.config.adam()));
        let res = {
            let mut params = self.params_mut(net);
            let r = opt.step(&mut params);
            params.into_iter().for_each(Tensor::zero_grad);
            r
        };
        self.optimizers[net.slot()] = opt;
        self.pending[net.slot()] = false;
        Ok(res?)
    }

    /// One full iteration: gradients for all networks at the current
    /// parameters, then the S, D1, D2, G1, G2 updates.
    pub fn train_iteration(&mut self, ds: &PairedDataset) -> Result<IterationMetrics> {
        let start = Instant::now();
        let mut metrics = self.compute_gradients(ds)?;
        for net in Net::UPDATE_ORDER {
            self.apply_update(net)?;
        }
        self.iteration += 1;
        metrics.wall_ms = start.elapsed().as_secs_f64() * 1e3;
        Ok(metrics)
    }
}

/// Where [`train`] wrote its outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub metrics_csv: PathBuf,
    pub final_checkpoint: PathBuf,
    pub checkpoints: Vec<PathBuf>,
    pub iterations_run: u64,
}

pub const METRICS_FILE: &str = "metrics.csv";
pub const FINAL_CHECKPOINT: &str = "final.sygn";

pub fn checkpoint_name(iteration: u64) -> String {
    format!("ckpt_{iteration:07}.sygn")
}

/// Runs `trainer` up to `config.iterations`, appending one CSV row per
/// iteration to `out_dir/metrics.csv` and writing checkpoints.
pub fn train(trainer: &mut Trainer, ds: &PairedDataset, out_dir: &Path) -> Result<TrainOutcome> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let metrics_csv = out_dir.join(METRICS_FILE);
    let fresh = trainer.iteration() == 0 || !metrics_csv.exists();
    let file = if fresh {
        File::create(&metrics_csv)
    } else {
        OpenOptions::new().append(true).open(&metrics_csv)
    }
    .map_err(|e| Error::io(&metrics_csv, e))?;
    let mut csv = csv::WriterBuilder::new().has_headers(false).from_writer(file);
    if fresh {
        csv.write_record(METRICS_HEADER)?;
    }

    let target = trainer.config().iterations;
    let every = trainer.config().checkpoint_every;
    let mut checkpoints = Vec::new();
    let first = trainer.iteration();
    while trainer.iteration() < target {
        let metrics = trainer.train_iteration(ds)?;
        csv.write_record(metrics.csv_record())?;
        if every > 0 && trainer.iteration().is_multiple_of(every) {
            csv.flush().map_err(|e| Error::io(&metrics_csv, e))?;
            let p = out_dir.join(checkpoint_name(trainer.iteration()));
            Checkpoint::capture(trainer).save(&p)?;
            checkpoints.push(p);
        }
    }
    csv.flush().map_err(|e| Error::io(&metrics_csv, e))?;
    let final_checkpoint = out_dir.join(FINAL_CHECKPOINT);
    Checkpoint::capture(trainer).save(&final_checkpoint)?;
    Ok(TrainOutcome {
        metrics_csv,
        final_checkpoint,
        checkpoints,
        iterations_run: trainer.iteration() - first,
    })
}
