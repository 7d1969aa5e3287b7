//! Variational bridge between the hybrid (relation, attribute, graph)
//! feature and a pseudo-visual feature, and the stage-2 objectives.

use rand::Rng;
use serde::{Deserialize, Serialize};
use umaea_numcore::{NumResult, ParamStore, Tape, Tensor, Var};

use crate::encoders::Linear;
use crate::fusion::alignment_log_probs;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReconLoss {
    Mae,
    Mse,
}

#[derive(Debug, Clone)]
pub struct CmmiParams {
    /// `3d → 2d`; the first `d` outputs are μ, the rest log σ².
    pub encoder: Linear,
    /// `d → 3d`.
    pub decoder: Linear,
    pub dim: usize,
}

impl CmmiParams {
    pub fn register<R: Rng>(store: &mut ParamStore, prefix: &str, dim: usize, rng: &mut R) -> Self {
        Self {
            encoder: Linear::register(
                store,
                &format!("{prefix}.encoder"),
                3 * dim,
                2 * dim,
                true,
                rng,
            ),
            decoder: Linear::register(store, &format!("{prefix}.decoder"), dim, 3 * dim, true, rng),
            dim,
        }
    }
}

/// `[h_r ⊕ h_a ⊕ h_g]`.
pub fn hybrid_feature(tape: &mut Tape, h_r: Var, h_a: Var, h_g: Var) -> NumResult<Var> {
    tape.hconcat(&[h_r, h_a, h_g])
}

/// Returns `(μ, log σ²)`.
pub fn cmmi_encode(
    tape: &mut Tape,
    store: &ParamStore,
    h_hyb: Var,
    params: &CmmiParams,
) -> NumResult<(Var, Var)> {
    let out = params.encoder.forward(tape, store, h_hyb)?;
    let d = tape.value(out).cols() / 2;
    Ok((tape.slice_cols(out, 0, d)?, tape.slice_cols(out, d, d)?))
}

/// `z ⊙ exp(log σ² / 2) + μ`.
pub fn reparameterize(tape: &mut Tape, mu: Var, log_var: Var, z: Var) -> NumResult<Var> {
    let half = tape.scale(log_var, 0.5)?;
    let sigma = tape.exp(half)?;
    let noise = tape.mul(z, sigma)?;
    tape.add(noise, mu)
}

pub fn cmmi_decode(
    tape: &mut Tape,
    store: &ParamStore,
    h_bar_v: Var,
    params: &CmmiParams,
) -> NumResult<Var> {
    params.decoder.forward(tape, store, h_bar_v)
}

fn zero(tape: &mut Tape) -> NumResult<Var> {
    tape.constant(Tensor::scalar(0.0))
}

/// Mean over the rows in `rows` of `Σ_dims (μ² + σ² − log σ² − 1) / 2`.
pub fn kl_loss(tape: &mut Tape, mu: Var, log_var: Var, rows: &[usize]) -> NumResult<Var> {
    if rows.is_empty() {
        return zero(tape);
    }
    let mu = tape.gather_rows(mu, rows)?;
    let lv = tape.gather_rows(log_var, rows)?;
    let mu2 = tape.mul(mu, mu)?;
    let var = tape.exp(lv)?;
    let a = tape.add(mu2, var)?;
    let b = tape.sub(a, lv)?;
    let c = tape.add_const(b, -1.0)?;
    let total = tape.sum(c)?;
    tape.scale(total, 0.5 / rows.len() as f64)
}

/// Mean absolute (or squared) error over the rows in `rows` and all columns.
pub fn reconstruction_loss(
    tape: &mut Tape,
    target: Var,
    recon: Var,
    rows: &[usize],
    kind: ReconLoss,
) -> NumResult<Var> {
    if rows.is_empty() {
        return zero(tape);
    }
    let t = tape.gather_rows(target, rows)?;
    let r = tape.gather_rows(recon, rows)?;
    let diff = tape.sub(t, r)?;
    let err = match kind {
        ReconLoss::Mae => tape.abs(diff)?,
        ReconLoss::Mse => tape.mul(diff, diff)?,
    };
    tape.mean(err)
}

/// Mean over the batch rows in `rows` of `KL(p_hyb ‖ p̄_v)`, where each `p` is
/// the in-batch alignment distribution of that entity.
pub fn sim_distill_loss(
    tape: &mut Tape,
    h_hyb: Var,
    h_bar_v: Var,
    rows: &[usize],
    tau: f64,
) -> NumResult<Var> {
    if rows.is_empty() {
        return zero(tape);
    }
    let lp = alignment_log_probs(tape, h_hyb, tau)?;
    let lq = alignment_log_probs(tape, h_bar_v, tau)?;
    let lp = tape.gather_rows(lp, rows)?;
    let lq = tape.gather_rows(lq, rows)?;
    let p = tape.exp(lp)?;
    let gap = tape.sub(lp, lq)?;
    let terms = tape.mul(p, gap)?;
    let total = tape.sum(terms)?;
    tape.scale(total, 1.0 / rows.len() as f64)
}

/// Stage-2 loss components on one batch.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Stage2Breakdown {
    pub l_kl: f64,
    pub l_re_vis: f64,
    pub l_re_hyb: f64,
    pub l_sim: f64,
    pub l_total: f64,
}

impl Stage2Breakdown {
    pub fn from_components(l_kl: f64, l_re_vis: f64, l_re_hyb: f64, l_sim: f64) -> Self {
        Self {
            l_kl,
            l_re_vis,
            l_re_hyb,
            l_sim,
            l_total: l_kl + l_re_vis + l_re_hyb + l_sim,
        }
    }
}
