//! The five SyncGAN networks: two generators, two discriminators and the
//! synchronizer that judges whether a cross-modal pair shows one concept.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::nn::{Activation, BoundMlp, Mlp};
use crate::tape::{Gradients, Tape, Var};
use crate::tensor::{Result, Tensor, TensorError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Modality {
    First,
    Second,
}

impl Modality {
    pub fn index(self) -> usize {
        match self {
            Modality::First => 0,
            Modality::Second => 1,
        }
    }

    pub fn other(self) -> Modality {
        match self {
            Modality::First => Modality::Second,
            Modality::Second => Modality::First,
        }
    }
}

impl TryFrom<u8> for Modality {
    type Error = TensorError;

    fn try_from(v: u8) -> Result<Self> {
        match v {
            1 => Ok(Modality::First),
            2 => Ok(Modality::Second),
            _ => Err(TensorError::InvalidArgument {
                op: "modality",
                msg: format!("expected 1 or 2, got {v}"),
            }),
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.index() + 1)
    }
}

/// Synchronizer topology. Cross-modal pairs get per-modality feature
/// extractors; same-structure domains are concatenated directly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SynchronizerVariant {
    CrossModal,
    StyleTransfer,
}

/// Layer widths. The defaults are the desk-scale dense networks.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Architecture {
    pub generator_hidden: Vec<usize>,
    pub discriminator_hidden: Vec<usize>,
    pub sync_feature_dim: usize,
    pub sync_extractor_hidden: Vec<usize>,
    pub sync_fusion_hidden: Vec<usize>,
    pub style_sync_hidden: Vec<usize>,
    /// Feed each discriminator the batch's mean per-feature variance as one
    /// extra input, so that a collapsed fake batch is visible to it.
    pub minibatch_feature: bool,
}

impl Default for Architecture {
    fn default() -> Self {
        Self {
            generator_hidden: vec![256, 512],
            discriminator_hidden: vec![512, 256],
            sync_feature_dim: 128,
            sync_extractor_hidden: vec![256],
            sync_fusion_hidden: vec![256],
            style_sync_hidden: vec![512, 256],
            minibatch_feature: false,
        }
    }
}

fn dims(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
    let mut d = Vec::with_capacity(hidden.len() + 2);
    d.push(input);
    d.extend_from_slice(hidden);
    d.push(output);
    d
}

#[derive(Debug, Clone, PartialEq)]
pub enum Synchronizer {
    CrossModal { n1: Mlp, n2: Mlp, nf: Mlp },
    StyleTransfer { net: Mlp },
}

#[derive(Debug, Clone)]
pub enum BoundSynchronizer {
    CrossModal { n1: BoundMlp, n2: BoundMlp, nf: BoundMlp },
    StyleTransfer { net: BoundMlp },
}

impl Synchronizer {
    pub fn new<R: Rng + ?Sized>(
        variant: SynchronizerVariant,
        data_dims: [usize; 2],
        arch: &Architecture,
        rng: &mut R,
    ) -> Result<Self> {
        use Activation::{LeakyRelu, Sigmoid};
        Ok(match variant {
            SynchronizerVariant::CrossModal => {
                let f = arch.sync_feature_dim;
                let n1 = Mlp::build(
                    &dims(data_dims[0], &arch.sync_extractor_hidden, f),
                    LeakyRelu,
                    LeakyRelu,
                    rng,
                )?;
                let n2 = Mlp::build(
                    &dims(data_dims[1], &arch.sync_extractor_hidden, f),
                    LeakyRelu,
                    LeakyRelu,
                    rng,
                )?;
                let nf = Mlp::build(&dims(2 * f, &arch.sync_fusion_hidden, 1), LeakyRelu, Sigmoid, rng)?;
                Synchronizer::CrossModal { n1, n2, nf }
            }
            SynchronizerVariant::StyleTransfer => {
                let net = Mlp::build(
                    &dims(data_dims[0] + data_dims[1], &arch.style_sync_hidden, 1),
                    LeakyRelu,
                    Sigmoid,
                    rng,
                )?;
                Synchronizer::StyleTransfer { net }
            }
        })
    }

    pub fn variant(&self) -> SynchronizerVariant {
        match self {
            Synchronizer::CrossModal { .. } => SynchronizerVariant::CrossModal,
            Synchronizer::StyleTransfer { .. } => SynchronizerVariant::StyleTransfer,
        }
    }

    fn nets(&self) -> Vec<(&'static str, &Mlp)> {
        match self {
            Synchronizer::CrossModal { n1, n2, nf } => vec![("n1", n1), ("n2", n2), ("nf", nf)],
            Synchronizer::StyleTransfer { net } => vec![("net", net)],
        }
    }

    fn nets_mut(&mut self) -> Vec<(&'static str, &mut Mlp)> {
        match self {
            Synchronizer::CrossModal { n1, n2, nf } => {
                vec![("n1", n1), ("n2", n2), ("nf", nf)]
            }
            Synchronizer::StyleTransfer { net } => vec![("net", net)],
        }
    }

    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> BoundSynchronizer {
        match self {
            Synchronizer::CrossModal { n1, n2, nf } => BoundSynchronizer::CrossModal {
                n1: n1.bind(tape, trainable),
                n2: n2.bind(tape, trainable),
                nf: nf.bind(tape, trainable),
            },
            Synchronizer::StyleTransfer { net } => BoundSynchronizer::StyleTransfer {
                net: net.bind(tape, trainable),
            },
        }
    }

    /// Synchronous probability per row, `[batch × 1]`.
    pub fn forward(&self, tape: &mut Tape, bound: &BoundSynchronizer, x1: Var, x2: Var) -> Result<Var> {
        let (b1, b2) = (tape.shape(x1)[0], tape.shape(x2)[0]);
        if b1 != b2 {
            return Err(TensorError::ShapeMismatch {
                op: "sync_score",
                lhs: tape.shape(x1).to_vec(),
                rhs: tape.shape(x2).to_vec(),
            });
        }
        match (self, bound) {
            (Synchronizer::CrossModal { n1, n2, nf }, BoundSynchronizer::CrossModal { n1: b1, n2: b2, nf: bf }) => {
                let f1 = n1.forward(tape, b1, x1)?;
                let f2 = n2.forward(tape, b2, x2)?;
                let joint = tape.concat(&[f1, f2], 1)?;
                nf.forward(tape, bf, joint)
            }
            (Synchronizer::StyleTransfer { net }, BoundSynchronizer::StyleTransfer { net: bn }) => {
                let (d1, d2) = (tape.shape(x1)[1], tape.shape(x2)[1]);
                if d1 + d2 != net.in_dim() {
                    return Err(TensorError::ShapeMismatch {
                        op: "sync_score",
                        lhs: vec![d1, d2],
                        rhs: vec![net.in_dim()],
                    });
                }
                let joint = tape.concat(&[x1, x2], 1)?;
                net.forward(tape, bn, joint)
            }
            _ => Err(TensorError::InvalidArgument {
                op: "sync_score",
                msg: "binding does not match the synchronizer variant".into(),
            }),
        }
    }

    pub fn accumulate_grads(&mut self, grads: &Gradients, bound: &BoundSynchronizer) -> Result<()> {
        match (self, bound) {
            (Synchronizer::CrossModal { n1, n2, nf }, BoundSynchronizer::CrossModal { n1: b1, n2: b2, nf: bf }) => {
                n1.accumulate_grads(grads, b1)?;
                n2.accumulate_grads(grads, b2)?;
                nf.accumulate_grads(grads, bf)
            }
            (Synchronizer::StyleTransfer { net }, BoundSynchronizer::StyleTransfer { net: bn }) => {
                net.accumulate_grads(grads, bn)
            }
            _ => Err(TensorError::InvalidArgument {
                op: "sync_score",
                msg: "binding does not match the synchronizer variant".into(),
            }),
        }
    }

    pub fn named_params(&self, prefix: &str) -> Vec<(String, &Tensor)> {
        self.nets()
            .into_iter()
            .flat_map(|(n, m)| m.named_params(&format!("{prefix}.{n}")))
            .collect()
    }

    pub fn named_params_mut(&mut self, prefix: &str) -> Vec<(String, &mut Tensor)> {
        self.nets_mut()
            .into_iter()
            .flat_map(|(n, m)| m.named_params_mut(&format!("{prefix}.{n}")))
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.nets_mut().into_iter().flat_map(|(_, m)| m.params_mut()).collect()
    }

    pub fn zero_grad(&mut self) {
        for (_, m) in self.nets_mut() {
            m.zero_grad();
        }
    }
}

/// Appends one column holding the batch's mean per-feature variance to `x` `[B × d]`.
pub fn append_batch_variance(tape: &mut Tape, x: Var) -> Result<Var> {
    let shape = tape.shape(x).to_vec();
    if shape.len() != 2 || shape[0] == 0 {
        return Err(TensorError::InvalidArgument {
            op: "batch_variance",
            msg: format!("expected a non-empty [B × d] batch, got {shape:?}"),
        });
    }
    let b = shape[0];
    let avg = tape.input(vec![1, b], vec![1.0 / b as f64; b])?;
    let ones = tape.input(vec![b, 1], vec![1.0; b])?;
    let mu = tape.matmul(avg, x)?;
    let mu_rows = tape.matmul(ones, mu)?;
    let diff = tape.sub(x, mu_rows)?;
    let sq = tape.mul(diff, diff)?;
    let var = tape.matmul(avg, sq)?;
    let v = tape.mean(var)?;
    let v = tape.reshape(v, vec![1, 1])?;
    let col = tape.matmul(ones, v)?;
    tape.concat(&[x, col], 1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyncGanModel {
    pub g1: Mlp,
    pub g2: Mlp,
    pub d1: Mlp,
    pub d2: Mlp,
    pub sync: Synchronizer,
    latent_dim: usize,
    data_dims: [usize; 2],
    minibatch_feature: bool,
}

impl SyncGanModel {
    pub fn new<R: Rng + ?Sized>(
        latent_dim: usize,
        data_dims: [usize; 2],
        variant: SynchronizerVariant,
        arch: &Architecture,
        rng: &mut R,
    ) -> Result<Self> {
        use Activation::{LeakyRelu, Sigmoid, Tanh};
        let g1 = Mlp::build(
            &dims(latent_dim, &arch.generator_hidden, data_dims[0]),
            LeakyRelu,
            Tanh,
            rng,
        )?;
        let g2 = Mlp::build(
            &dims(latent_dim, &arch.generator_hidden, data_dims[1]),
            LeakyRelu,
            Tanh,
            rng,
        )?;
        let extra = usize::from(arch.minibatch_feature);
        let d1 = Mlp::build(
            &dims(data_dims[0] + extra, &arch.discriminator_hidden, 1),
            LeakyRelu,
            Sigmoid,
            rng,
        )?;
        let d2 = Mlp::build(
            &dims(data_dims[1] + extra, &arch.discriminator_hidden, 1),
            LeakyRelu,
            Sigmoid,
            rng,
        )?;
        let sync = Synchronizer::new(variant, data_dims, arch, rng)?;
        Ok(Self {
            g1,
            g2,
            d1,
            d2,
            sync,
            latent_dim,
            data_dims,
            minibatch_feature: arch.minibatch_feature,
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    pub fn data_dims(&self) -> [usize; 2] {
        self.data_dims
    }

    pub fn generator(&self, m: Modality) -> &Mlp {
        match m {
            Modality::First => &self.g1,
            Modality::Second => &self.g2,
        }
    }

    pub fn discriminator(&self, m: Modality) -> &Mlp {
        match m {
            Modality::First => &self.d1,
            Modality::Second => &self.d2,
        }
    }

    /// `G_m(z)` for a `[batch × latent_dim]` batch; values lie in (−1, 1).
    pub fn generate(&self, z: &Tensor, m: Modality) -> Result<Tensor> {
        self.generator(m).predict(z)
    }

    pub fn minibatch_feature(&self) -> bool {
        self.minibatch_feature
    }

    /// Runs discriminator `m` on a batch already on the tape.
    pub fn discriminator_forward(&self, tape: &mut Tape, m: Modality, bound: &BoundMlp, x: Var) -> Result<Var> {
        let input = if self.minibatch_feature {
            append_batch_variance(tape, x)?
        } else {
            x
        };
        self.discriminator(m).forward(tape, bound, input)
    }

    /// `D_m(x)`, the probability that each row is real data of modality `m`.
    /// With the minibatch feature enabled the score depends on the whole batch.
    pub fn discriminate(&self, x: &Tensor, m: Modality) -> Result<Tensor> {
        let mut tape = Tape::new();
        let bound = self.discriminator(m).bind(&mut tape, false);
        let xv = tape.constant(x);
        let d = self.discriminator_forward(&mut tape, m, &bound, xv)?;
        Ok(tape.to_tensor(d))
    }

    /// `S(x1, x2)`, the probability that each row pair is synchronous.
    pub fn sync_score(&self, x1: &Tensor, x2: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let bound = self.sync.bind(&mut tape, false);
        let a = tape.constant(x1);
        let b = tape.constant(x2);
        let s = self.sync.forward(&mut tape, &bound, a, b)?;
        Ok(tape.to_tensor(s))
    }

    /// Every parameter, keyed by network (`g1`, `g2`, `d1`, `d2`, `s`).
    pub fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (name, net) in [("g1", &self.g1), ("g2", &self.g2), ("d1", &self.d1), ("d2", &self.d2)] {
            out.extend(net.named_params(name));
        }
        out.extend(self.sync.named_params("s"));
        out
    }

    pub fn named_params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = Vec::new();
        out.extend(self.g1.named_params_mut("g1"));
        out.extend(self.g2.named_params_mut("g2"));
        out.extend(self.d1.named_params_mut("d1"));
        out.extend(self.d2.named_params_mut("d2"));
        out.extend(self.sync.named_params_mut("s"));
        out
    }

    pub fn zero_grad(&mut self) {
        self.g1.zero_grad();
        self.g2.zero_grad();
        self.d1.zero_grad();
        self.d2.zero_grad();
        self.sync.zero_grad();
    }
}
