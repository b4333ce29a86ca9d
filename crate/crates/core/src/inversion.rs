//! Latent recovery by gradient descent and cross-modal transfer through it.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Modality, SyncGanModel};
use crate::nn::Mlp;
use crate::tape::Tape;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InversionConfig {
    pub eta: f64,
    pub max_steps: usize,
    pub restarts: usize,
    /// Stop a restart once its reconstruction MSE drops below this.
    pub tol: f64,
}

impl Default for InversionConfig {
    fn default() -> Self {
        Self {
            eta: 0.1,
            max_steps: 500,
            restarts: 3,
            tol: 1e-3,
        }
    }
}

impl InversionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0 && self.eta.is_finite()) || self.max_steps == 0 || self.restarts == 0 {
            return Err(Error::Config(format!(
                "inversion needs eta > 0, max_steps ≥ 1 and restarts ≥ 1, got {self:?}"
            )));
        }
        Ok(())
    }
}

/// Result of inverting a batch of targets row by row.
#[derive(Debug, Clone, PartialEq)]
pub struct Inversion {
    /// Best latent per target row, `[n × latent_dim]`.
    pub z_hat: Tensor,
    /// Reconstruction MSE of each row's best restart.
    pub mse: Vec<f64>,
    /// `restart_mse[row][r]`; a restart aborted by a non-finite gradient keeps
    /// the MSE of its last finite iterate.
    pub restart_mse: Vec<Vec<f64>>,
    /// `aborted[row][r]` is set when restart `r` hit a non-finite gradient.
    pub aborted: Vec<Vec<bool>>,
}

impl Inversion {
    pub fn all_restarts_aborted(&self, row: usize) -> bool {
        self.aborted[row].iter().all(|&a| a)
    }
}

/// Per-row reconstruction: squared error sums and their gradient w.r.t. `z`.
fn objective(generator: &Mlp, z: &Tensor, x: &Tensor) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut tape = Tape::new();
    let bound = generator.bind(&mut tape, false);
    let mut zp = z.clone();
    zp.set_requires_grad(true);
    let zv = tape.leaf(&zp);
    let xv = tape.constant(x);
    let g = generator.forward(&mut tape, &bound, zv)?;
    let diff = tape.sub(g, xv)?;
    let sq = tape.mul(diff, diff)?;
    let d = x.cols();
    let per_row: Vec<f64> = tape.value(sq).chunks(d.max(1)).map(|r| r.iter().sum()).collect();
    let total = tape.sum(sq);
    let grads = tape.backward(total)?;
    let grad = grads.get(zv).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; z.len()]);
    Ok((per_row, grad))
}

/// Descends `‖x − G(z)‖²` for every row from the given starting point.
///
/// Each row keeps its own step size; a step that would increase the row's
/// error is rejected and halves that row's step size for good. Returns the
/// final latents, per-row MSEs and per-row abort flags.
pub fn invert_from(
    generator: &Mlp,
    x_target: &Tensor,
    z0: &Tensor,
    cfg: &InversionConfig,
) -> Result<(Tensor, Vec<f64>, Vec<bool>)> {
    cfg.validate()?;
    let (n, d, ld) = (x_target.rows(), x_target.cols(), generator.in_dim());
    if x_target.shape().len() != 2 || d != generator.out_dim() {
        return Err(Error::Config(format!(
            "target {:?} does not match generator output dim {}",
            x_target.shape(),
            generator.out_dim()
        )));
    }
    if z0.shape() != [n, ld] {
        return Err(Error::Config(format!(
            "initial latent {:?}, expected [{n}, {ld}]",
            z0.shape()
        )));
    }
    let mut z = z0.clone();
    let (mut loss, mut grad) = objective(generator, &z, x_target)?;
    let mut eta = vec![cfg.eta; n];
    let mut active: Vec<bool> = (0..n).map(|i| loss[i] / d as f64 >= cfg.tol).collect();
    let mut aborted = vec![false; n];
    for i in 0..n {
        if !grad[i * ld..(i + 1) * ld].iter().all(|g| g.is_finite()) || !loss[i].is_finite() {
            aborted[i] = true;
            active[i] = false;
        }
    }

    for _ in 0..cfg.max_steps {
        if !active.iter().any(|&a| a) {
            break;
        }
        let mut cand = z.clone();
        for i in (0..n).filter(|&i| active[i]) {
            for k in i * ld..(i + 1) * ld {
                cand.data_mut()[k] -= eta[i] * grad[k];
            }
        }
        let (c_loss, c_grad) = objective(generator, &cand, x_target)?;
        let live: Vec<usize> = (0..n).filter(|&i| active[i]).collect();
        for i in live {
            let row = i * ld..(i + 1) * ld;
            if !c_loss[i].is_finite() || !c_grad[row.clone()].iter().all(|g| g.is_finite()) {
                aborted[i] = true;
                active[i] = false;
                continue;
            }
            if c_loss[i] > loss[i] {
                eta[i] *= 0.5;
                continue;
            }
            z.data_mut()[row.clone()].copy_from_slice(&cand.data()[row.clone()]);
            grad[row.clone()].copy_from_slice(&c_grad[row]);
            loss[i] = c_loss[i];
            if loss[i] / (d as f64) < cfg.tol {
                active[i] = false;
            }
        }
    }
    let mse = loss.iter().map(|l| l / d as f64).collect();
    Ok((z, mse, aborted))
}

/// Recovers latents for each row of `x_target` with `cfg.restarts` random
/// starts, keeping the restart with the lowest reconstruction MSE.
pub fn invert_latent<R: Rng + ?Sized>(
    generator: &Mlp,
    x_target: &Tensor,
    cfg: &InversionConfig,
    rng: &mut R,
) -> Result<Inversion> {
    cfg.validate()?;
    let (n, ld) = (x_target.rows(), generator.in_dim());
    let mut best = Tensor::zeros(vec![n, ld]);
    let mut best_mse = vec![f64::INFINITY; n];
    let mut restart_mse = vec![Vec::with_capacity(cfg.restarts); n];
    let mut aborted = vec![Vec::with_capacity(cfg.restarts); n];
    for _ in 0..cfg.restarts {
        let z0 = Tensor::randn(vec![n, ld], rng);
        let (z, mse, ab) = invert_from(generator, x_target, &z0, cfg)?;
        for i in 0..n {
            restart_mse[i].push(mse[i]);
            aborted[i].push(ab[i]);
            if mse[i] < best_mse[i] {
                best_mse[i] = mse[i];
                best.data_mut()[i * ld..(i + 1) * ld].copy_from_slice(&z.data()[i * ld..(i + 1) * ld]);
            }
        }
    }
    Ok(Inversion {
        z_hat: best,
        mse: best_mse,
        restart_mse,
        aborted,
    })
}

/// `G_to(ẑ)` where `ẑ` inverts `x` through `G_from`.
pub fn transfer<R: Rng + ?Sized>(
    model: &SyncGanModel,
    x: &Tensor,
    from: Modality,
    to: Modality,
    cfg: &InversionConfig,
    rng: &mut R,
) -> Result<(Tensor, Inversion)> {
    if from == to {
        return Err(Error::Config(format!(
            "transfer needs two different modalities, got {from} twice"
        )));
    }
    let inv = invert_latent(model.generator(from), x, cfg, rng)?;
    let out = model.generate(&inv.z_hat, to)?;
    Ok((out, inv))
}
