//! The four SyncGAN objectives.
//!
//! Each function returns the objective in its natural "maximize" form: a
//! sum of mean log-probabilities, bounded above by zero. Training descends
//! the negation. Scores are clamped to `[SCORE_EPS, 1 - SCORE_EPS]` before
//! any log so that saturated networks never produce `-inf`.

use std::fmt;

use crate::tape::{Tape, Var};
use crate::tensor::{Result, TensorError};

pub const SCORE_EPS: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Phase {
    Disc1,
    Disc2,
    Sync,
    Gen1Adv,
    Gen2Adv,
    GenSync,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::Disc1 => "L_D1",
            Phase::Disc2 => "L_D2",
            Phase::Sync => "L_S",
            Phase::Gen1Adv => "L_G1_dis",
            Phase::Gen2Adv => "L_G2_dis",
            Phase::GenSync => "L_G_sync",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossValue {
    pub var: Var,
    pub phase: Phase,
}

impl LossValue {
    pub fn value(&self, tape: &Tape) -> f64 {
        tape.scalar(self.var)
    }
}

fn non_empty(tape: &Tape, v: Var, what: &str) -> Result<()> {
    if tape.value(v).is_empty() {
        return Err(TensorError::InvalidArgument {
            op: "loss",
            msg: format!("{what} batch is empty"),
        });
    }
    Ok(())
}

/// `mean(log p)` over clamped scores.
pub fn mean_log(tape: &mut Tape, scores: Var) -> Result<Var> {
    let c = tape.clamp(scores, SCORE_EPS, 1.0 - SCORE_EPS);
    let l = tape.log(c)?;
    tape.mean(l)
}

/// `mean(log(1 - p))` over clamped scores.
pub fn mean_log_complement(tape: &mut Tape, scores: Var) -> Result<Var> {
    let c = tape.clamp(scores, SCORE_EPS, 1.0 - SCORE_EPS);
    let q = tape.rsub_scalar(1.0, c);
    let l = tape.log(q)?;
    tape.mean(l)
}

fn two_sided(tape: &mut Tape, positive: Var, negative: Var, phase: Phase) -> Result<LossValue> {
    non_empty(tape, positive, "positive")?;
    non_empty(tape, negative, "negative")?;
    let a = mean_log(tape, positive)?;
    let b = mean_log_complement(tape, negative)?;
    Ok(LossValue {
        var: tape.add(a, b)?,
        phase,
    })
}

/// `mean(log D(x)) + mean(log(1 - D(G(z))))`.
pub fn discriminator_loss(tape: &mut Tape, d_real: Var, d_fake: Var, phase: Phase) -> Result<LossValue> {
    two_sided(tape, d_real, d_fake, phase)
}

/// `mean(log D(G(z)))`, the non-saturating generator objective.
pub fn generator_adv_loss(tape: &mut Tape, d_fake: Var, phase: Phase) -> Result<LossValue> {
    non_empty(tape, d_fake, "fake")?;
    Ok(LossValue {
        var: mean_log(tape, d_fake)?,
        phase,
    })
}

/// `mean(log S(x1^i, x2^i)) + mean(log(1 - S(x1^i, x2^j)))`, `i ≠ j`.
pub fn synchronizer_loss(tape: &mut Tape, s_sync: Var, s_async: Var) -> Result<LossValue> {
    two_sided(tape, s_sync, s_async, Phase::Sync)
}

/// `mean(log S(G1(z), G2(z))) + mean(log(1 - S(G1(z), G2(z̃))))`, `z ≠ z̃`.
pub fn generator_sync_loss(tape: &mut Tape, s_same_z: Var, s_diff_z: Var) -> Result<LossValue> {
    two_sided(tape, s_same_z, s_diff_z, Phase::GenSync)
}
