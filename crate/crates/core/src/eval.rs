//! Concept classifiers, the synchronous rate, and related diagnostics.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::adam::{AdamConfig, AdamState};
use crate::data::PairedDataset;
use crate::error::{Error, Result};
use crate::model::{Modality, SyncGanModel};
use crate::nn::{Activation, Mlp};
use crate::tape::Tape;
use crate::tensor::Tensor;
use crate::trainer::{apply_semi_rate, seeded_rng, TrainConfig, Trainer};

/// RNG stream used for evaluation draws.
pub const STREAM_EVAL: u64 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassifierConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub hidden: usize,
    pub heldout_fraction: f64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 64,
            learning_rate: 1e-3,
            hidden: 256,
            heldout_fraction: 0.2,
        }
    }
}

/// A dense softmax classifier and the accuracy it reached on its held-out split.
#[derive(Debug, Clone, PartialEq)]
pub struct Classifier {
    pub net: Mlp,
    pub n_classes: usize,
    pub heldout_accuracy: f64,
}

impl Classifier {
    pub fn predict(&self, x: &Tensor) -> Result<Vec<usize>> {
        let logits = self.net.predict(x)?;
        Ok((0..logits.rows()).map(|i| argmax(logits.row(i))).collect())
    }

    pub fn accuracy(&self, x: &Tensor, labels: &[usize]) -> Result<f64> {
        let pred = self.predict(x)?;
        let hits = pred.iter().zip(labels).filter(|(p, l)| p == l).count();
        Ok(hits as f64 / labels.len().max(1) as f64)
    }
}

fn argmax(v: &[f64]) -> usize {
    v.iter()
        .enumerate()
        .fold(
            (0, f64::NEG_INFINITY),
            |best, (i, &x)| if x > best.1 { (i, x) } else { best },
        )
        .0
}

/// Trains `in → hidden → n_classes` with softmax cross-entropy on a random
/// split, reporting accuracy on the held-out part.
pub fn train_classifier<R: Rng + ?Sized>(
    x: &Tensor,
    labels: &[usize],
    cfg: &ClassifierConfig,
    rng: &mut R,
) -> Result<Classifier> {
    if x.shape().len() != 2 || x.rows() != labels.len() {
        return Err(Error::Config(format!(
            "classifier data {:?} does not match {} labels",
            x.shape(),
            labels.len()
        )));
    }
    let n_classes = labels.iter().max().map_or(0, |m| m + 1);
    let distinct = {
        let mut seen = vec![false; n_classes];
        labels.iter().for_each(|&l| seen[l] = true);
        seen.iter().filter(|&&s| s).count()
    };
    if distinct < 2 {
        return Err(Error::Config("a classifier needs at least two classes".into()));
    }
    let mut net = Mlp::build(
        &[x.cols(), cfg.hidden, n_classes],
        Activation::LeakyRelu,
        Activation::Identity,
        rng,
    )?;

    let mut order: Vec<usize> = (0..labels.len()).collect();
    order.shuffle(rng);
    let n_held = ((labels.len() as f64) * cfg.heldout_fraction).round() as usize;
    let (held, train) = order.split_at(n_held);
    let mut train = train.to_vec();

    let mut adam = AdamState::new(AdamConfig {
        learning_rate: cfg.learning_rate,
        ..AdamConfig::default()
    });
    for _ in 0..cfg.epochs {
        train.shuffle(rng);
        for chunk in train.chunks(cfg.batch_size.max(1)) {
            let xb = x.select_rows(chunk);
            let mut onehot = vec![0.0; chunk.len() * n_classes];
            for (r, &i) in chunk.iter().enumerate() {
                onehot[r * n_classes + labels[i]] = 1.0;
            }
            let mut tape = Tape::new();
            let bound = net.bind(&mut tape, true);
            let xv = tape.constant(&xb);
            let logits = net.forward(&mut tape, &bound, xv)?;
            let logp = tape.log_softmax(logits)?;
            let y = tape.input(vec![chunk.len(), n_classes], onehot)?;
            let picked = tape.mul(logp, y)?;
            let total = tape.sum(picked);
            let loss = tape.scale(total, -1.0 / chunk.len() as f64);
            let grads = tape.backward(loss)?;
            net.zero_grad();
            net.accumulate_grads(&grads, &bound)?;
            adam.step(&mut net.params_mut())?;
        }
    }
    net.zero_grad();
    let mut clf = Classifier {
        net,
        n_classes,
        heldout_accuracy: f64::NAN,
    };
    if !held.is_empty() {
        let hl: Vec<usize> = held.iter().map(|&i| labels[i]).collect();
        clf.heldout_accuracy = clf.accuracy(&x.select_rows(held), &hl)?;
    }
    Ok(clf)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyncRateReport {
    pub n_pairs: usize,
    pub n_agree: usize,
    pub sync_rate: f64,
    /// `confusion[a][b]` counts pairs labelled `a` in modality 1 and `b` in modality 2.
    pub confusion: Vec<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub semi_rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl SyncRateReport {
    /// Tallies label agreement between two aligned label lists.
    pub fn from_labels(l1: &[usize], l2: &[usize], n_classes: usize) -> Result<Self> {
        if l1.is_empty() || l1.len() != l2.len() {
            return Err(Error::Config(format!(
                "need equally many labels on both sides, got {} and {}",
                l1.len(),
                l2.len()
            )));
        }
        let mut confusion = vec![vec![0; n_classes]; n_classes];
        for (&a, &b) in l1.iter().zip(l2) {
            if a >= n_classes || b >= n_classes {
                return Err(Error::Config(format!("label {} out of range", a.max(b))));
            }
            confusion[a][b] += 1;
        }
        let n_agree = (0..n_classes).map(|c| confusion[c][c]).sum();
        Ok(Self {
            n_pairs: l1.len(),
            n_agree,
            sync_rate: n_agree as f64 / l1.len() as f64,
            confusion,
            semi_rate: None,
            batch_size: None,
            seed: None,
        })
    }

    pub fn with_config(mut self, cfg: &TrainConfig) -> Self {
        self.semi_rate = Some(cfg.semi_rate);
        self.batch_size = Some(cfg.batch_size);
        self.seed = Some(cfg.seed);
        self
    }
}

/// Fraction of generated pairs `(G1(z), G2(z))` on which the two
/// classifiers agree.
pub fn sync_rate<R: Rng + ?Sized>(
    model: &SyncGanModel,
    clf1: &Classifier,
    clf2: &Classifier,
    n_pairs: usize,
    rng: &mut R,
) -> Result<SyncRateReport> {
    if n_pairs == 0 {
        return Err(Error::Config("sync rate needs at least one pair".into()));
    }
    if clf1.n_classes != clf2.n_classes {
        return Err(Error::Config(format!(
            "classifiers disagree on the class count: {} vs {}",
            clf1.n_classes, clf2.n_classes
        )));
    }
    let z = Tensor::randn(vec![n_pairs, model.latent_dim()], rng);
    let l1 = clf1.predict(&model.generate(&z, Modality::First)?)?;
    let l2 = clf2.predict(&model.generate(&z, Modality::Second)?)?;
    SyncRateReport::from_labels(&l1, &l2, clf1.n_classes)
}

/// Thresholded synchronizer accuracy: pairs with `S ≥ 0.5` are called synchronous.
pub fn synchronizer_accuracy(model: &SyncGanModel, x1: &Tensor, x2: &Tensor, synchronous: &[bool]) -> Result<f64> {
    let s = model.sync_score(x1, x2)?;
    let hits = s
        .data()
        .iter()
        .zip(synchronous)
        .filter(|(&p, &y)| (p >= 0.5) == y)
        .count();
    Ok(hits as f64 / synchronous.len().max(1) as f64)
}

/// Mean Euclidean distance over all unordered row pairs.
pub fn mean_pairwise_distance(samples: &Tensor) -> f64 {
    let n = samples.rows();
    let mut total = 0.0;
    let mut count = 0usize;
    for i in 0..n {
        for j in i + 1..n {
            let d: f64 = samples
                .row(i)
                .iter()
                .zip(samples.row(j))
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            total += d.sqrt();
            count += 1;
        }
    }
    if count == 0 {
        0.0
    } else {
        total / count as f64
    }
}

/// One sweep cell; a failed cell keeps its error message.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepCell {
    pub rate: f64,
    pub outcome: std::result::Result<SyncRateReport, String>,
}

/// Trains one model per semi-supervised rate with a shared seed and budget
/// and measures each model's synchronous rate.
pub fn semi_supervised_sweep(
    rates: &[f64],
    cfg: &TrainConfig,
    ds: &PairedDataset,
    clf1: &Classifier,
    clf2: &Classifier,
    n_pairs: usize,
) -> Vec<SweepCell> {
    rates
        .iter()
        .map(|&rate| {
            let run = || -> Result<SyncRateReport> {
                if !(rate > 0.0 && rate <= 1.0) {
                    return Err(Error::Config(format!("sweep rate {rate} outside (0, 1]")));
                }
                let cell_cfg = TrainConfig {
                    semi_rate: rate,
                    ..cfg.clone()
                };
                let mut cell_ds = ds.clone();
                apply_semi_rate(&mut cell_ds, &cell_cfg)?;
                let mut trainer = Trainer::for_dataset(cell_cfg.clone(), &cell_ds)?;
                while trainer.iteration() < cell_cfg.iterations {
                    trainer.train_iteration(&cell_ds)?;
                }
                let mut rng = seeded_rng(cell_cfg.seed, STREAM_EVAL);
                Ok(sync_rate(&trainer.model, clf1, clf2, n_pairs, &mut rng)?.with_config(&cell_cfg))
            };
            SweepCell {
                rate,
                outcome: run().map_err(|e| e.to_string()),
            }
        })
        .collect()
}

pub fn write_sweep_csv(path: &Path, cells: &[SweepCell]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["semi_rate", "sync_rate", "n_agree", "n_pairs", "error"])?;
    for c in cells {
        match &c.outcome {
            Ok(r) => w.write_record([
                c.rate.to_string(),
                r.sync_rate.to_string(),
                r.n_agree.to_string(),
                r.n_pairs.to_string(),
                String::new(),
            ])?,
            Err(e) => w.write_record([
                c.rate.to_string(),
                String::new(),
                String::new(),
                String::new(),
                e.clone(),
            ])?,
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}
