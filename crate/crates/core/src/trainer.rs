//! Staged optimization: stage 1 on the alignment objectives, stage 2-1 on
//! the imagination module alone, stage 2-2 on the main model alone; plus
//! the learning-rate schedule, AdamW, early stopping and the probation
//! buffer that grows the training seeds during stage 1.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use umaea_numcore::{matmul_nt, NumError, ParamStore, Tape, Tensor};

use crate::encoders::AdjacencyStructure;
use crate::error::{Error, Result};
use crate::eval::{evaluate, rank_of, MetricsReport, RunMeta};
use crate::kgdata::{AlignmentSeedSet, FeatureBank, Mmkg};
use crate::model::{EmbedMode, Model, ModelConfig, VisualSlot, CMMI_PREFIX, MAIN_PREFIX};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs_stage1: usize,
    pub epochs_stage2_1: usize,
    pub epochs_stage2_2: usize,
    pub batch_size: usize,
    /// Gradient-accumulation chunk size; 0 processes each batch at once.
    pub micro_batch: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub warmup_fraction: f64,
    pub iterative: bool,
    /// Epochs between probation rounds and between early-stopping checks.
    pub k_e: usize,
    /// Consecutive proposals needed for promotion; `None` never promotes.
    pub k_s: Option<usize>,
    pub early_stopping: bool,
    pub holdout_fraction: f64,
    /// Early-stopping checks without improvement before stopping.
    pub patience: usize,
    pub use_cmmi: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs_stage1: 250,
            epochs_stage2_1: 50,
            epochs_stage2_2: 100,
            batch_size: 3500,
            micro_batch: 0,
            learning_rate: 5e-4,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            warmup_fraction: 0.15,
            iterative: false,
            k_e: 5,
            k_s: Some(10),
            early_stopping: true,
            holdout_fraction: 0.05,
            patience: 10,
            use_cmmi: true,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Invalid(m.to_string()));
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.learning_rate > 0.0) {
            return bad("learning_rate must be positive");
        }
        if !(self.weight_decay >= 0.0) {
            return bad("weight_decay must be non-negative");
        }
        if !(self.warmup_fraction > 0.0 && self.warmup_fraction < 1.0) {
            return bad("warmup_fraction must lie in (0, 1)");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("AdamW betas must lie in [0, 1)");
        }
        if !(self.adam_eps > 0.0) {
            return bad("adam_eps must be positive");
        }
        if self.k_e == 0 {
            return bad("k_e must be positive");
        }
        if self.k_s == Some(0) {
            return bad("k_s must be positive");
        }
        if !(0.0..1.0).contains(&self.holdout_fraction) {
            return bad("holdout_fraction must lie in [0, 1)");
        }
        Ok(())
    }
}

/// Linear warm-up from 0 to `peak` over the first `warmup` fraction of
/// training, then cosine decay to 0. `progress` is in `[0, 1]`.
pub fn learning_rate_at(progress: f64, peak: f64, warmup: f64) -> f64 {
    let t = progress.clamp(0.0, 1.0);
    if t < warmup {
        peak * t / warmup
    } else {
        let u = (t - warmup) / (1.0 - warmup);
        peak * 0.5 * (1.0 + (std::f64::consts::PI * u).cos())
    }
}

/// AdamW with decoupled weight decay over the trainable parameters.
#[derive(Debug, Clone)]
pub struct AdamW {
    beta1: f64,
    beta2: f64,
    eps: f64,
    weight_decay: f64,
    step: i32,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl AdamW {
    pub fn new(store: &ParamStore, cfg: &TrainConfig) -> Self {
        let zeros = || {
            store
                .iter()
                .map(|p| Tensor::zeros(p.value.rows(), p.value.cols()))
                .collect::<Vec<_>>()
        };
        Self {
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.adam_eps,
            weight_decay: cfg.weight_decay,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn step(&mut self, store: &mut ParamStore, lr: f64) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step);
        let bc2 = 1.0 - self.beta2.powi(self.step);
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let p = store.get_mut(id);
            if !p.trainable {
                continue;
            }
            let k = id.index();
            let m = self.m[k].data_mut();
            let v = self.v[k].data_mut();
            let g = p.grad.data();
            let w = p.value.data_mut();
            for i in 0..w.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let update = (m[i] / bc1) / ((v[i] / bc2).sqrt() + self.eps);
                w[i] -= lr * (update + self.weight_decay * w[i]);
            }
        }
    }
}

/// Everything a training run needs besides the model.
#[derive(Debug, Clone)]
pub struct AlignmentTask {
    pub name: String,
    pub n1: usize,
    pub n2: usize,
    pub bank: FeatureBank,
    pub adj: AdjacencyStructure,
    pub seeds: AlignmentSeedSet,
    pub r_img: f64,
}

impl AlignmentTask {
    /// Builds features for both graphs under the active `image_mask`
    /// (KG1 entities first) and the joint adjacency.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        name: &str,
        kg1: &Mmkg,
        kg2: &Mmkg,
        visual1: &Tensor,
        visual2: &Tensor,
        image_mask: Vec<bool>,
        seeds: AlignmentSeedSet,
        d_r: usize,
        d_a: usize,
        impute_seed: u64,
    ) -> Result<Self> {
        let n = kg1.num_entities + kg2.num_entities;
        let r_img = image_mask.iter().filter(|&&m| m).count() as f64 / n as f64;
        let bank = FeatureBank::build(
            kg1,
            kg2,
            visual1,
            visual2,
            image_mask,
            d_r,
            d_a,
            impute_seed,
        )?;
        let adj = AdjacencyStructure::from_kg_pair(kg1, kg2, true);
        for &(a, b) in seeds.train.iter().chain(&seeds.test) {
            if a >= kg1.num_entities || b >= kg2.num_entities {
                return Err(Error::Invalid(format!(
                    "seed pair ({a}, {b}) is outside the graphs"
                )));
            }
        }
        Ok(Self {
            name: name.to_string(),
            n1: kg1.num_entities,
            n2: kg2.num_entities,
            bank,
            adj,
            seeds,
            r_img,
        })
    }

    pub fn mask1(&self) -> &[bool] {
        &self.bank.image_mask[..self.n1]
    }

    pub fn mask2(&self) -> &[bool] {
        &self.bank.image_mask[self.n1..]
    }

    /// Splits joint embeddings into KG1 and KG2 blocks.
    pub fn split_embeddings(&self, emb: &Tensor) -> (Tensor, Tensor) {
        let r1: Vec<usize> = (0..self.n1).collect();
        let r2: Vec<usize> = (self.n1..self.n1 + self.n2).collect();
        (emb.select_rows(&r1), emb.select_rows(&r2))
    }

    /// Metrics on the original test pairs with evaluation-mode embeddings.
    pub fn evaluate(&self, model: &Model, stage: &str, seed: u64) -> Result<MetricsReport> {
        let emb = model.embed_all(&self.bank, &self.adj, &EmbedMode::Eval)?;
        let (e1, e2) = self.split_embeddings(&emb);
        evaluate(
            &e1,
            &e2,
            &self.seeds.test,
            self.mask1(),
            self.mask2(),
            RunMeta {
                dataset: self.name.clone(),
                r_img: self.r_img,
                stage: stage.to_string(),
                seed,
            },
        )
    }
}

/// Final representations of every entity under a substitution mode; see
/// [`EmbedMode`].
pub fn entity_representation(
    model: &Model,
    task: &AlignmentTask,
    mode: &EmbedMode,
) -> Result<Tensor> {
    model.embed_all(&task.bank, &task.adj, mode)
}

/// A mutual-nearest-neighbor pair between two test pools.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Proposal {
    pub e1: usize,
    pub e2: usize,
    pub similarity: f64,
}

fn argmax_lowest(row: &[f64]) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = j;
        }
    }
    best
}

/// Pairs `(a, b)` from `pool1 × pool2` where `b` is `a`'s most cosine-similar
/// candidate in `pool2` and vice versa (ties to the lower pool position).
/// `emb1`/`emb2` hold one row per KG1/KG2 entity.
pub fn propose_mutual_nn(
    emb1: &Tensor,
    emb2: &Tensor,
    pool1: &[usize],
    pool2: &[usize],
) -> Result<Vec<Proposal>> {
    if pool1.is_empty() || pool2.is_empty() {
        return Ok(Vec::new());
    }
    let a = emb1.select_rows(pool1).l2_normalized_rows();
    let b = emb2.select_rows(pool2).l2_normalized_rows();
    let sims = matmul_nt(&a, &b)?;
    let best12: Vec<usize> = (0..pool1.len())
        .into_par_iter()
        .map(|i| argmax_lowest(sims.row_slice(i)))
        .collect();
    let simt = sims.transpose();
    let best21: Vec<usize> = (0..pool2.len())
        .into_par_iter()
        .map(|j| argmax_lowest(simt.row_slice(j)))
        .collect();
    Ok(best12
        .iter()
        .enumerate()
        .filter(|&(i, &j)| best21[j] == i)
        .map(|(i, &j)| Proposal {
            e1: pool1[i],
            e2: pool2[j],
            similarity: sims.get(i, j),
        })
        .collect())
}

/// Candidate pairs with their consecutive-proposal counts.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ProbationBuffer {
    pub candidates: BTreeMap<(usize, usize), usize>,
    pub promoted: Vec<(usize, usize)>,
}

impl ProbationBuffer {
    /// Advances one proposal round. Proposed pairs gain a count, all others
    /// leave the buffer, and pairs reaching `k_s` are returned (and removed).
    pub fn update(&mut self, proposed: &[Proposal], k_s: Option<usize>) -> Vec<Proposal> {
        let mut next = BTreeMap::new();
        for p in proposed {
            let count = self.candidates.get(&(p.e1, p.e2)).copied().unwrap_or(0) + 1;
            next.insert((p.e1, p.e2), count);
        }
        self.candidates = next;
        let Some(k_s) = k_s else {
            return Vec::new();
        };
        let ready: Vec<Proposal> = proposed
            .iter()
            .filter(|p| self.candidates[&(p.e1, p.e2)] >= k_s)
            .copied()
            .collect();
        for p in &ready {
            self.candidates.remove(&(p.e1, p.e2));
        }
        ready
    }

    pub fn record_promoted(&mut self, pairs: &[(usize, usize)]) {
        self.promoted.extend_from_slice(pairs);
    }
}

/// Keeps promotions one-to-one: pairs touching an entity already in
/// `existing` are dropped, then conflicts among promotions are resolved by
/// keeping the most similar pair (earlier pair on ties).
pub fn alignment_edit(promotions: &[Proposal], existing: &[(usize, usize)]) -> Vec<(usize, usize)> {
    let mut used1: HashSet<usize> = existing.iter().map(|p| p.0).collect();
    let mut used2: HashSet<usize> = existing.iter().map(|p| p.1).collect();
    let mut order: Vec<usize> = (0..promotions.len()).collect();
    order.sort_by(|&a, &b| {
        promotions[b]
            .similarity
            .total_cmp(&promotions[a].similarity)
            .then(a.cmp(&b))
    });
    let mut kept = Vec::new();
    for i in order {
        let p = promotions[i];
        if used1.contains(&p.e1) || used2.contains(&p.e2) {
            continue;
        }
        used1.insert(p.e1);
        used2.insert(p.e2);
        kept.push((p.e1, p.e2));
    }
    kept
}

/// One record of the epoch log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub stage: String,
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
    pub l_gmi: f64,
    pub l_ecia: f64,
    pub l_iir: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub l_stage2: Option<f64>,
    pub train_pairs: usize,
    pub buffer_size: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub holdout_hits1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub holdout_mrr: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageOutcome {
    pub stage: String,
    pub epochs_run: usize,
    pub stopped_early: bool,
    pub history: Vec<EpochLog>,
}

impl StageOutcome {
    pub fn final_loss(&self) -> Option<f64> {
        self.history.last().map(|h| h.loss)
    }
}

/// Mutable state carried across stages.
#[derive(Debug, Clone)]
pub struct TrainingState {
    pub train_pairs: Vec<(usize, usize)>,
    pub holdout: Vec<(usize, usize)>,
    pub buffer: ProbationBuffer,
    /// Unresolved test-side entities that may still be proposed.
    pub pool1: Vec<usize>,
    pub pool2: Vec<usize>,
    rng: ChaCha8Rng,
}

impl TrainingState {
    /// Holds out the last `round(holdout_fraction·|S|)` seeds when early
    /// stopping is on.
    pub fn new(task: &AlignmentTask, cfg: &TrainConfig) -> Self {
        let mut train_pairs = task.seeds.train.clone();
        let n_hold = if cfg.early_stopping {
            (cfg.holdout_fraction * train_pairs.len() as f64).round() as usize
        } else {
            0
        };
        let n_hold = n_hold.min(train_pairs.len().saturating_sub(1));
        let holdout = train_pairs.split_off(train_pairs.len() - n_hold);
        Self {
            train_pairs,
            holdout,
            buffer: ProbationBuffer::default(),
            pool1: task.seeds.test.iter().map(|p| p.0).collect(),
            pool2: task.seeds.test.iter().map(|p| p.1).collect(),
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
        }
    }
}

fn wrap_num(e: NumError, stage: &str, epoch: usize) -> Error {
    match e {
        NumError::NonFinite { op } => Error::NonFiniteLoss {
            component: format!("forward op `{op}`"),
            stage: stage.to_string(),
            epoch,
        },
        other => Error::Num(other),
    }
}

struct StepLosses {
    total: f64,
    gmi: f64,
    ecia: f64,
    iir: f64,
    stage2: Option<f64>,
}

/// One optimizer step over `batch` with optional gradient accumulation.
#[allow(clippy::too_many_arguments)]
fn train_step(
    model: &mut Model,
    task: &AlignmentTask,
    batch: &[(usize, usize)],
    imagine: bool,
    cfg: &TrainConfig,
    opt: &mut AdamW,
    lr: f64,
    rng: &mut ChaCha8Rng,
    stage: &str,
    epoch: usize,
) -> Result<StepLosses> {
    model.store.zero_grad();
    let chunk = if cfg.micro_batch == 0 {
        batch.len()
    } else {
        cfg.micro_batch
    };
    let mut acc = StepLosses {
        total: 0.0,
        gmi: 0.0,
        ecia: 0.0,
        iir: 0.0,
        stage2: imagine.then_some(0.0),
    };
    for micro in batch.chunks(chunk) {
        let pairs: Vec<(usize, usize)> = micro.iter().map(|&(a, b)| (a, task.n1 + b)).collect();
        let visual = if imagine {
            let n = 2 * pairs.len() * model.cfg().dim;
            let z: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut *rng)).collect();
            VisualSlot::Imagined(Tensor::from_vec(2 * pairs.len(), model.cfg().dim, z)?)
        } else {
            VisualSlot::Projected
        };
        let mut tape = Tape::new();
        let fwd = model
            .batch_forward(&mut tape, &task.bank, &task.adj, &pairs, &visual)
            .map_err(|e| wrap_num(e, stage, epoch))?;
        let s1 = fwd.stage1_breakdown(&tape);
        let s2 = fwd.stage2_breakdown(&tape);
        let named = [
            ("L_GMI", s1.l_gmi),
            ("L_ECIA", s1.l_ecia),
            ("L_IIR", s1.l_iir),
        ];
        let extra = s2.map(|b| {
            [
                ("L_KL", b.l_kl),
                ("L_Re_vis", b.l_re_vis),
                ("L_Re_hyb", b.l_re_hyb),
                ("L_Sim", b.l_sim),
            ]
        });
        for (name, v) in named.iter().chain(extra.iter().flatten()) {
            if !v.is_finite() {
                return Err(Error::NonFiniteLoss {
                    component: name.to_string(),
                    stage: stage.to_string(),
                    epoch,
                });
            }
        }
        let weight = micro.len() as f64 / batch.len() as f64;
        let scaled = tape
            .scale(fwd.total, weight)
            .map_err(|e| wrap_num(e, stage, epoch))?;
        tape.backward(scaled, &mut model.store)
            .map_err(|e| wrap_num(e, stage, epoch))?;
        acc.total += weight * tape.scalar(fwd.total);
        acc.gmi += weight * s1.l_gmi;
        acc.ecia += weight * s1.l_ecia;
        acc.iir += weight * s1.l_iir;
        if let (Some(a), Some(b)) = (acc.stage2.as_mut(), s2) {
            *a += weight * b.l_total;
        }
    }
    opt.step(&mut model.store, lr);
    Ok(acc)
}

/// Hits@1 and MRR of held-out seeds against every KG2 entity outside the
/// training seeds.
fn holdout_score(model: &Model, task: &AlignmentTask, state: &TrainingState) -> Result<(f64, f64)> {
    let emb = model.embed_all(&task.bank, &task.adj, &EmbedMode::Eval)?;
    let (e1, e2) = task.split_embeddings(&emb);
    let taken: HashSet<usize> = state.train_pairs.iter().map(|p| p.1).collect();
    let cands: Vec<usize> = (0..task.n2).filter(|c| !taken.contains(c)).collect();
    let pos: BTreeMap<usize, usize> = cands.iter().enumerate().map(|(i, &c)| (c, i)).collect();
    let src: Vec<usize> = state.holdout.iter().map(|p| p.0).collect();
    let q = e1.select_rows(&src).l2_normalized_rows();
    let c = e2.select_rows(&cands).l2_normalized_rows();
    let sims = matmul_nt(&q, &c)?;
    let ranks: Vec<usize> = state
        .holdout
        .iter()
        .enumerate()
        .map(|(i, p)| rank_of(sims.row_slice(i), pos[&p.1]))
        .collect();
    let n = ranks.len() as f64;
    let h1 = ranks.iter().filter(|&&r| r == 1).count() as f64 / n;
    let mrr = ranks.iter().map(|&r| 1.0 / r as f64).sum::<f64>() / n;
    Ok((h1, mrr))
}

fn probation_round(
    model: &Model,
    task: &AlignmentTask,
    cfg: &TrainConfig,
    state: &mut TrainingState,
) -> Result<()> {
    let emb = model.embed_all(&task.bank, &task.adj, &EmbedMode::Projected)?;
    let (e1, e2) = task.split_embeddings(&emb);
    let proposals = propose_mutual_nn(&e1, &e2, &state.pool1, &state.pool2)?;
    let ready = state.buffer.update(&proposals, cfg.k_s);
    let mut existing = state.train_pairs.clone();
    existing.extend_from_slice(&state.holdout);
    let kept = alignment_edit(&ready, &existing);
    if kept.is_empty() {
        return Ok(());
    }
    let gone1: HashSet<usize> = kept.iter().map(|p| p.0).collect();
    let gone2: HashSet<usize> = kept.iter().map(|p| p.1).collect();
    state.pool1.retain(|e| !gone1.contains(e));
    state.pool2.retain(|e| !gone2.contains(e));
    state.train_pairs.extend_from_slice(&kept);
    state.buffer.record_promoted(&kept);
    Ok(())
}

/// Shared epoch loop. `imagine` switches on the pseudo-visual substitution
/// and the stage-2 losses; `stage1` enables probation and early stopping.
fn run_epochs(
    model: &mut Model,
    task: &AlignmentTask,
    cfg: &TrainConfig,
    state: &mut TrainingState,
    stage: &str,
    epochs: usize,
    imagine: bool,
    stage1: bool,
    log: &mut dyn FnMut(&EpochLog) -> Result<()>,
) -> Result<StageOutcome> {
    let mut opt = AdamW::new(&model.store, cfg);
    let mut outcome = StageOutcome {
        stage: stage.to_string(),
        ..StageOutcome::default()
    };
    let mut best: Option<(f64, f64)> = None;
    let mut stale = 0usize;
    for epoch in 0..epochs {
        let mut order = state.train_pairs.clone();
        order.shuffle(&mut state.rng);
        let batches: Vec<&[(usize, usize)]> = order.chunks(cfg.batch_size).collect();
        let nb = batches.len().max(1);
        let mut sums = StepLosses {
            total: 0.0,
            gmi: 0.0,
            ecia: 0.0,
            iir: 0.0,
            stage2: imagine.then_some(0.0),
        };
        let mut lr = 0.0;
        for (bi, batch) in batches.iter().enumerate() {
            let progress = (epoch as f64 + bi as f64 / nb as f64) / epochs as f64;
            lr = learning_rate_at(progress, cfg.learning_rate, cfg.warmup_fraction);
            let s = train_step(
                model,
                task,
                batch,
                imagine,
                cfg,
                &mut opt,
                lr,
                &mut state.rng,
                stage,
                epoch,
            )?;
            sums.total += s.total / nb as f64;
            sums.gmi += s.gmi / nb as f64;
            sums.ecia += s.ecia / nb as f64;
            sums.iir += s.iir / nb as f64;
            if let (Some(a), Some(b)) = (sums.stage2.as_mut(), s.stage2) {
                *a += b / nb as f64;
            }
        }
        let round_due = (epoch + 1) % cfg.k_e == 0;
        if stage1 && cfg.iterative && round_due {
            probation_round(model, task, cfg, state)?;
        }
        let mut entry = EpochLog {
            stage: stage.to_string(),
            epoch,
            lr,
            loss: sums.total,
            l_gmi: sums.gmi,
            l_ecia: sums.ecia,
            l_iir: sums.iir,
            l_stage2: sums.stage2,
            train_pairs: state.train_pairs.len(),
            buffer_size: state.buffer.candidates.len(),
            holdout_hits1: None,
            holdout_mrr: None,
        };
        outcome.epochs_run = epoch + 1;
        let mut stop = false;
        if stage1 && cfg.early_stopping && !state.holdout.is_empty() && round_due {
            let score = holdout_score(model, task, state)?;
            entry.holdout_hits1 = Some(score.0);
            entry.holdout_mrr = Some(score.1);
            let improved =
                best.map_or(true, |b| score.0 > b.0 || (score.0 == b.0 && score.1 > b.1));
            if improved {
                best = Some(score);
                stale = 0;
            } else {
                stale += 1;
                stop = stale >= cfg.patience;
            }
        }
        log(&entry)?;
        outcome.history.push(entry);
        if stop {
            outcome.stopped_early = true;
            break;
        }
    }
    Ok(outcome)
}

/// Stage 1: the main model on `L_GMI + L_ECIA + L_IIR`; the imagination
/// module is frozen.
pub fn run_stage1(
    model: &mut Model,
    task: &AlignmentTask,
    cfg: &TrainConfig,
    state: &mut TrainingState,
    log: &mut dyn FnMut(&EpochLog) -> Result<()>,
) -> Result<StageOutcome> {
    cfg.validate()?;
    model.check(&task.bank, &task.adj)?;
    model.store.set_trainable_prefix(MAIN_PREFIX, true);
    model.store.set_trainable_prefix(CMMI_PREFIX, false);
    let out = run_epochs(
        model,
        task,
        cfg,
        state,
        "stage1",
        cfg.epochs_stage1,
        false,
        true,
        log,
    )?;
    model.stage1_done = true;
    Ok(out)
}

/// Stage 2-1: only the imagination module trains, on stage-1 plus stage-2
/// losses.
pub fn run_stage2_1(
    model: &mut Model,
    task: &AlignmentTask,
    cfg: &TrainConfig,
    state: &mut TrainingState,
    log: &mut dyn FnMut(&EpochLog) -> Result<()>,
) -> Result<StageOutcome> {
    if !model.stage1_done {
        return Err(Error::MissingStage1("2-1".into()));
    }
    cfg.validate()?;
    model.check(&task.bank, &task.adj)?;
    model.store.set_trainable_prefix(MAIN_PREFIX, false);
    model.store.set_trainable_prefix(CMMI_PREFIX, true);
    let out = run_epochs(
        model,
        task,
        cfg,
        state,
        "stage2_1",
        cfg.epochs_stage2_1,
        true,
        false,
        log,
    )?;
    model.cmmi_trained = true;
    Ok(out)
}

/// Stage 2-2: the imagination module is frozen and the main model refines.
pub fn run_stage2_2(
    model: &mut Model,
    task: &AlignmentTask,
    cfg: &TrainConfig,
    state: &mut TrainingState,
    log: &mut dyn FnMut(&EpochLog) -> Result<()>,
) -> Result<StageOutcome> {
    if !model.stage1_done {
        return Err(Error::MissingStage1("2-2".into()));
    }
    cfg.validate()?;
    model.check(&task.bank, &task.adj)?;
    model.store.set_trainable_prefix(MAIN_PREFIX, true);
    model.store.set_trainable_prefix(CMMI_PREFIX, false);
    run_epochs(
        model,
        task,
        cfg,
        state,
        "stage2_2",
        cfg.epochs_stage2_2,
        true,
        false,
        log,
    )
}

/// Which stages a pipeline run executes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StageSelection {
    One,
    Two,
    All,
}

/// Contents of `manifest.json` in each stage directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageManifest {
    pub stage: String,
    pub dataset: String,
    #[serde(rename = "R_img")]
    pub r_img: f64,
    pub train: TrainConfig,
    pub model: ModelConfig,
    pub num_entities: usize,
    pub epochs_run: usize,
    pub stopped_early: bool,
    pub train_pairs: usize,
    pub promoted: Vec<(usize, usize)>,
    pub cmmi_trained: bool,
    pub history: Vec<EpochLog>,
}

pub const STAGE_DIRS: [&str; 3] = ["stage1", "stage2_1", "stage2_2"];
pub const PARAMS_FILE: &str = "params.ckpt";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const LOG_FILE: &str = "train_log.jsonl";

fn write_stage(
    dir: &Path,
    model: &Model,
    task: &AlignmentTask,
    cfg: &TrainConfig,
    state: &TrainingState,
    out: &StageOutcome,
) -> Result<()> {
    let stage_dir = dir.join(&out.stage);
    fs::create_dir_all(&stage_dir).map_err(|e| Error::io(&stage_dir, e))?;
    model
        .store
        .save_checkpoint(&stage_dir.join(PARAMS_FILE), "")?;
    let manifest = StageManifest {
        stage: out.stage.clone(),
        dataset: task.name.clone(),
        r_img: task.r_img,
        train: cfg.clone(),
        model: model.cfg().clone(),
        num_entities: model.num_entities,
        epochs_run: out.epochs_run,
        stopped_early: out.stopped_early,
        train_pairs: state.train_pairs.len(),
        promoted: state.buffer.promoted.clone(),
        cmmi_trained: model.cmmi_trained,
        history: out.history.clone(),
    };
    let path = stage_dir.join(MANIFEST_FILE);
    fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&path, e))
}

/// Restores a model and its promoted seeds from a stage directory.
pub fn load_stage(stage_dir: &Path, model: &mut Model) -> Result<StageManifest> {
    let path = stage_dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: StageManifest = serde_json::from_str(&text)?;
    model.store.load_checkpoint(&stage_dir.join(PARAMS_FILE))?;
    model.stage1_done = true;
    model.cmmi_trained = manifest.cmmi_trained;
    Ok(manifest)
}

#[derive(Debug, Clone, Default)]
pub struct PipelineOutcome {
    pub stages: Vec<StageOutcome>,
    pub promoted: Vec<(usize, usize)>,
}

/// Runs the selected stages, writing checkpoints, manifests and a JSONL log
/// under `out_dir` when given. Stage 2 alone requires `model` to hold a
/// completed stage-1 state (see [`load_stage`]) and continues from the
/// seeds recorded there.
pub fn run_pipeline(
    model: &mut Model,
    task: &AlignmentTask,
    cfg: &TrainConfig,
    stages: StageSelection,
    out_dir: Option<&Path>,
    promoted: &[(usize, usize)],
) -> Result<PipelineOutcome> {
    cfg.validate()?;
    if stages == StageSelection::Two && !model.stage1_done {
        return Err(Error::MissingStage1("2".into()));
    }
    let mut state = TrainingState::new(task, cfg);
    let extra = alignment_edit(
        &promoted
            .iter()
            .map(|&(e1, e2)| Proposal {
                e1,
                e2,
                similarity: 0.0,
            })
            .collect::<Vec<_>>(),
        &state.train_pairs,
    );
    state.train_pairs.extend_from_slice(&extra);
    state.buffer.record_promoted(&extra);

    let mut log_file = match out_dir {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let path: PathBuf = dir.join(LOG_FILE);
            let f = fs::OpenOptions::new()
                .create(true)
                .append(true)
                .open(&path)
                .map_err(|e| Error::io(&path, e))?;
            Some((path, f))
        }
        None => None,
    };
    let mut log = |entry: &EpochLog| -> Result<()> {
        if let Some((path, f)) = log_file.as_mut() {
            let line = serde_json::to_string(entry)?;
            writeln!(f, "{line}").map_err(|e| Error::io(&*path, e))?;
        }
        Ok(())
    };

    let mut outcome = PipelineOutcome::default();
    if matches!(stages, StageSelection::One | StageSelection::All) {
        let o = run_stage1(model, task, cfg, &mut state, &mut log)?;
        if let Some(dir) = out_dir {
            write_stage(dir, model, task, cfg, &state, &o)?;
        }
        outcome.stages.push(o);
    }
    if matches!(stages, StageSelection::Two | StageSelection::All) && cfg.use_cmmi {
        for run in [run_stage2_1, run_stage2_2] {
            let o = run(model, task, cfg, &mut state, &mut log)?;
            if let Some(dir) = out_dir {
                write_stage(dir, model, task, cfg, &state, &o)?;
            }
            outcome.stages.push(o);
        }
    }
    outcome.promoted = state.buffer.promoted.clone();
    Ok(outcome)
}
