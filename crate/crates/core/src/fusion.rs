//! Modality fusion and the stage-1 objectives: weighted concatenation,
//! in-batch contrastive alignment, cross-modal attention, entity-level
//! confidences, and the confidence-scaled and refined variants of the
//! contrastive loss.
//!
//! Batch tensors hold `2B` rows: rows `0..B` are the KG1 sides of the batch
//! pairs, rows `B..2B` the KG2 sides in the same order.

use rand::Rng;
use serde::{Deserialize, Serialize};
use umaea_numcore::{NumResult, ParamId, ParamStore, Tape, Tensor, Var};

use crate::encoders::Linear;

/// Modality order used for every concatenation.
pub const MODALITIES: [&str; 4] = ["g", "r", "a", "v"];
pub const NUM_MODALITIES: usize = MODALITIES.len();

/// Softmax of the global modality logits.
pub fn modality_weights(logits: &Tensor) -> Vec<f64> {
    let row = logits.row_slice(0);
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// `[w_g·h_g ⊕ w_r·h_r ⊕ w_a·h_a ⊕ w_v·h_v]` with `w = softmax(logits)`.
pub fn gmi_embed(tape: &mut Tape, hs: &[Var], logits: Var) -> NumResult<Var> {
    let w = tape.row_softmax(logits)?;
    let scaled = hs
        .iter()
        .enumerate()
        .map(|(m, &h)| tape.scale_by(h, w, m))
        .collect::<NumResult<Vec<_>>>()?;
    tape.hconcat(&scaled)
}

/// Log alignment probabilities between every pair of batch entities. Row
/// `i` is a distribution over all other `2B − 1` batch entities, built from
/// `exp(cos/τ)`; the diagonal is excluded and reads 0.
pub fn alignment_log_probs(tape: &mut Tape, h: Var, tau: f64) -> NumResult<Var> {
    let n = tape.value(h).rows();
    let z = tape.l2_normalize_rows(h)?;
    let sim = tape.matmul_nt(z, z)?;
    let logits = tape.scale(sim, 1.0 / tau)?;
    let mut diag = vec![false; n * n];
    for i in 0..n {
        diag[i * n + i] = true;
    }
    tape.masked_log_softmax(logits, &diag)
}

/// Per-pair `log((p(e1→e2) + p(e2→e1)) / 2)` as a `B×1` column.
pub fn pair_log_terms(tape: &mut Tape, h: Var, tau: f64) -> NumResult<Var> {
    let b = tape.value(h).rows() / 2;
    let lp = alignment_log_probs(tape, h, tau)?;
    let partner: Vec<usize> = (0..2 * b)
        .map(|r| if r < b { r + b } else { r - b })
        .collect();
    let picked = tape.pick(lp, &partner)?;
    let p = tape.exp(picked)?;
    let fwd = tape.gather_rows(p, &(0..b).collect::<Vec<_>>())?;
    let bwd = tape.gather_rows(p, &(b..2 * b).collect::<Vec<_>>())?;
    let both = tape.add(fwd, bwd)?;
    let mean = tape.scale(both, 0.5)?;
    tape.log(mean)
}

/// Bi-directional contrastive loss `−E_i log[(p(e1,e2) + p(e2,e1)) / 2]`.
pub fn contrastive_loss(tape: &mut Tape, h: Var, tau: f64) -> NumResult<Var> {
    let terms = pair_log_terms(tape, h, tau)?;
    let m = tape.mean(terms)?;
    tape.scale(m, -1.0)
}

/// Contrastive loss with each pair's probability scaled by
/// `φ = min(w̃(e1), w̃(e2))`, summed over modalities. `conf` is the `2B×|M|`
/// confidence matrix of the batch; with `detach_phi` φ is treated as a
/// constant.
pub fn ecia_loss(
    tape: &mut Tape,
    hs: &[Var],
    conf: Var,
    tau: f64,
    detach_phi: bool,
) -> NumResult<Var> {
    let b = tape.value(conf).rows() / 2;
    let conf = if detach_phi {
        let v = tape.value(conf).clone();
        tape.constant(v)?
    } else {
        conf
    };
    let left = tape.gather_rows(conf, &(0..b).collect::<Vec<_>>())?;
    let right = tape.gather_rows(conf, &(b..2 * b).collect::<Vec<_>>())?;
    let phi = tape.min(left, right)?;
    let log_phi = tape.log(phi)?;
    let mut total: Option<Var> = None;
    for (m, &h) in hs.iter().enumerate() {
        let terms = pair_log_terms(tape, h, tau)?;
        let lp = tape.slice_cols(log_phi, m, 1)?;
        let scaled = tape.add(terms, lp)?;
        let mean = tape.mean(scaled)?;
        let loss = tape.scale(mean, -1.0)?;
        total = Some(match total {
            Some(t) => tape.add(t, loss)?,
            None => loss,
        });
    }
    Ok(total.expect("at least one modality"))
}

/// Sum of contrastive losses over the refined modality states.
pub fn iir_loss(tape: &mut Tape, hidden: &[Var], tau: f64) -> NumResult<Var> {
    let mut total: Option<Var> = None;
    for &h in hidden {
        let l = contrastive_loss(tape, h, tau)?;
        total = Some(match total {
            Some(t) => tape.add(t, l)?,
            None => l,
        });
    }
    Ok(total.expect("at least one modality"))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MhcaConfig {
    pub dim: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    pub ln_eps: f64,
}

impl MhcaConfig {
    pub fn new(dim: usize, heads: usize) -> Self {
        Self {
            dim,
            heads,
            ffn_dim: 4 * dim,
            ln_eps: 1e-5,
        }
    }
}

#[derive(Debug, Clone)]
pub struct MhcaParams {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    pub ln1_gamma: ParamId,
    pub ln1_beta: ParamId,
    pub ffn_in: Linear,
    pub ffn_out: Linear,
    pub ln2_gamma: ParamId,
    pub ln2_beta: ParamId,
}

impl MhcaParams {
    pub fn register<R: Rng>(
        store: &mut ParamStore,
        prefix: &str,
        cfg: &MhcaConfig,
        rng: &mut R,
    ) -> Self {
        let d = cfg.dim;
        Self {
            query: Linear::register(store, &format!("{prefix}.query"), d, d, false, rng),
            key: Linear::register(store, &format!("{prefix}.key"), d, d, false, rng),
            value: Linear::register(store, &format!("{prefix}.value"), d, d, false, rng),
            output: Linear::register(store, &format!("{prefix}.output"), d, d, false, rng),
            ln1_gamma: store.add(format!("{prefix}.ln1.gamma"), Tensor::filled(1, d, 1.0)),
            ln1_beta: store.add(format!("{prefix}.ln1.beta"), Tensor::zeros(1, d)),
            ffn_in: Linear::register(
                store,
                &format!("{prefix}.ffn_in"),
                d,
                cfg.ffn_dim,
                true,
                rng,
            ),
            ffn_out: Linear::register(
                store,
                &format!("{prefix}.ffn_out"),
                cfg.ffn_dim,
                d,
                true,
                rng,
            ),
            ln2_gamma: store.add(format!("{prefix}.ln2.gamma"), Tensor::filled(1, d, 1.0)),
            ln2_beta: store.add(format!("{prefix}.ln2.beta"), Tensor::zeros(1, d)),
        }
    }
}

pub struct MhcaOutput {
    /// Refined state per modality, each `n×d`.
    pub hidden: Vec<Var>,
    /// Attention per head, `(n·|M|)×|M|`; row `b·|M| + m` is entity `b`'s
    /// modality `m` attending over its own modalities.
    pub beta: Vec<Var>,
}

/// One transformer block in which each entity's modality vectors attend to
/// each other: shared projections, scaled dot-product attention, output
/// map, add & norm, ReLU feed-forward, add & norm.
pub fn mhca_layer(
    tape: &mut Tape,
    store: &ParamStore,
    hs: &[Var],
    params: &MhcaParams,
    cfg: &MhcaConfig,
) -> NumResult<MhcaOutput> {
    let k = hs.len();
    let n = tape.value(hs[0]).rows();
    let d = cfg.dim;
    let dh = d / cfg.heads;
    let wide = tape.hconcat(hs)?;
    let x = tape.reshape(wide, n * k, d)?;
    let q = params.query.forward(tape, store, x)?;
    let kk = params.key.forward(tape, store, x)?;
    let v = params.value.forward(tape, store, x)?;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut beta = Vec::with_capacity(cfg.heads);
    let mut ctx = Vec::with_capacity(cfg.heads);
    for head in 0..cfg.heads {
        let (qh, kh, vh) = if cfg.heads == 1 {
            (q, kk, v)
        } else {
            (
                tape.slice_cols(q, head * dh, dh)?,
                tape.slice_cols(kk, head * dh, dh)?,
                tape.slice_cols(v, head * dh, dh)?,
            )
        };
        let scores = tape.group_scores(qh, kh, k, scale)?;
        let b = tape.row_softmax(scores)?;
        ctx.push(tape.group_mix(b, vh, k)?);
        beta.push(b);
    }
    let ctx = if ctx.len() == 1 {
        ctx[0]
    } else {
        tape.hconcat(&ctx)?
    };
    let attn = params.output.forward(tape, store, ctx)?;
    let res1 = tape.add(attn, x)?;
    let g1 = tape.param(store, params.ln1_gamma)?;
    let b1 = tape.param(store, params.ln1_beta)?;
    let x1 = tape.layer_norm(res1, g1, b1, cfg.ln_eps)?;
    let f = params.ffn_in.forward(tape, store, x1)?;
    let f = tape.relu(f)?;
    let f = params.ffn_out.forward(tape, store, f)?;
    let res2 = tape.add(f, x1)?;
    let g2 = tape.param(store, params.ln2_gamma)?;
    let b2 = tape.param(store, params.ln2_beta)?;
    let x2 = tape.layer_norm(res2, g2, b2, cfg.ln_eps)?;
    let wide = tape.reshape(x2, n, k * d)?;
    let hidden = (0..k)
        .map(|m| tape.slice_cols(wide, m * d, d))
        .collect::<NumResult<Vec<_>>>()?;
    Ok(MhcaOutput { hidden, beta })
}

/// Entity-level confidences `n×|M|`: for each entity, the attention mass
/// each modality receives, summed over querying modalities and heads,
/// divided by `√(|M|·N_h)` and normalized with a softmax over modalities.
pub fn entity_confidence(tape: &mut Tape, beta: &[Var], modalities: usize) -> NumResult<Var> {
    let k = modalities;
    let n = tape.value(beta[0]).rows() / k;
    let mut received: Option<Var> = None;
    for &b in beta {
        let per_entity = tape.reshape(b, n, k * k)?;
        for m in 0..k {
            let row = tape.slice_cols(per_entity, m * k, k)?;
            received = Some(match received {
                Some(acc) => tape.add(acc, row)?,
                None => row,
            });
        }
    }
    let scaled = tape.scale(
        received.expect("at least one head"),
        1.0 / ((k * beta.len()) as f64).sqrt(),
    )?;
    tape.row_softmax(scaled)
}

/// Stage-1 loss components on one batch.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_gmi: f64,
    pub l_ecia: f64,
    pub l_iir: f64,
    pub l_total: f64,
}

impl LossBreakdown {
    pub fn from_components(l_gmi: f64, l_ecia: f64, l_iir: f64) -> Self {
        Self {
            l_gmi,
            l_ecia,
            l_iir,
            l_total: l_gmi + l_ecia + l_iir,
        }
    }
}
