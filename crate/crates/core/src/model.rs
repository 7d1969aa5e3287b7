//! Parameter layout of the full model and its batch / whole-graph forward
//! passes.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use umaea_numcore::{NumResult, ParamId, ParamStore, Tape, Tensor, Var};

use crate::cmmi::{
    cmmi_decode, cmmi_encode, hybrid_feature, kl_loss, reconstruction_loss, reparameterize,
    sim_distill_loss, CmmiParams, ReconLoss, Stage2Breakdown,
};
use crate::encoders::{
    gat_forward, modality_projection, AdjacencyStructure, GatConfig, GatParams, Linear,
};
use crate::error::{Error, Result};
use crate::fusion::{
    contrastive_loss, ecia_loss, entity_confidence, gmi_embed, iir_loss, mhca_layer, LossBreakdown,
    MhcaConfig, MhcaParams, NUM_MODALITIES,
};
use crate::init::normal;
use crate::kgdata::FeatureBank;

/// Name prefix of main-model parameters.
pub const MAIN_PREFIX: &str = "main.";
/// Name prefix of the imagination module's parameters.
pub const CMMI_PREFIX: &str = "cmmi.";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub dim: usize,
    pub d_r: usize,
    pub d_a: usize,
    pub d_v: usize,
    pub gat: GatConfig,
    pub mhca_heads: usize,
    pub tau: f64,
    pub detach_phi: bool,
    pub recon_loss: ReconLoss,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            dim: 300,
            d_r: 1000,
            d_a: 1000,
            d_v: 0,
            gat: GatConfig::default(),
            mhca_heads: 1,
            tau: 0.1,
            detach_phi: false,
            recon_loss: ReconLoss::Mae,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.d_r == 0 || self.d_a == 0 || self.d_v == 0 {
            return Err(Error::Invalid("model dimensions must be positive".into()));
        }
        if self.gat.dim != self.dim {
            return Err(Error::Invalid(format!(
                "GAT dim {} differs from model dim {}",
                self.gat.dim, self.dim
            )));
        }
        self.gat.validate()?;
        if self.mhca_heads == 0 || self.dim % self.mhca_heads != 0 {
            return Err(Error::Invalid(format!(
                "dim {} is not divisible by {} attention heads",
                self.dim, self.mhca_heads
            )));
        }
        if !(self.tau > 0.0) {
            return Err(Error::Invalid(format!(
                "temperature must be positive, got {}",
                self.tau
            )));
        }
        Ok(())
    }

    pub fn mhca(&self) -> MhcaConfig {
        MhcaConfig::new(self.dim, self.mhca_heads)
    }
}

#[derive(Debug, Clone)]
pub struct MainParams {
    /// `|E|×d` learnable graph-embedding inputs.
    pub x_g: ParamId,
    pub gat: GatParams,
    pub proj_r: Linear,
    pub proj_a: Linear,
    pub proj_v: Linear,
    /// `1×|M|` global modality logits.
    pub gmi_logits: ParamId,
    pub mhca: MhcaParams,
}

/// How the visual slot of entities without an image is filled.
#[derive(Debug, Clone)]
pub enum VisualSlot {
    /// Projection of the (imputed) visual input.
    Projected,
    /// Pseudo-visual `z ⊙ σ + μ` from the imagination module; `z` holds one
    /// row per batch row.
    Imagined(Tensor),
}

/// Which visual representation `embed_all` uses for entities without an image.
#[derive(Debug, Clone, PartialEq)]
pub enum EmbedMode {
    Projected,
    /// `μ` when the imagination module has been trained, else `Projected`.
    Eval,
    /// Pseudo-visual `z ⊙ σ + μ` with one `z` row per entity, as seen in
    /// stage-2 training.
    Imagined(Tensor),
}

pub struct BatchForward {
    pub total: Var,
    pub l_gmi: Var,
    pub l_ecia: Var,
    pub l_iir: Var,
    /// `(kl, re_vis, re_hyb, sim)` when the imagination module is active.
    pub stage2: Option<[Var; 4]>,
    /// `2B×|M|` entity-level confidences.
    pub confidence: Var,
}

impl BatchForward {
    pub fn stage1_breakdown(&self, tape: &Tape) -> LossBreakdown {
        LossBreakdown::from_components(
            tape.scalar(self.l_gmi),
            tape.scalar(self.l_ecia),
            tape.scalar(self.l_iir),
        )
    }

    pub fn stage2_breakdown(&self, tape: &Tape) -> Option<Stage2Breakdown> {
        self.stage2.map(|[a, b, c, d]| {
            Stage2Breakdown::from_components(
                tape.scalar(a),
                tape.scalar(b),
                tape.scalar(c),
                tape.scalar(d),
            )
        })
    }
}

/// Parameter ids and configuration; the forward passes read values from an
/// explicit [`ParamStore`] so they can be re-run against perturbed copies.
#[derive(Debug, Clone)]
pub struct ModelLayout {
    pub cfg: ModelConfig,
    pub main: MainParams,
    pub cmmi: CmmiParams,
}

#[derive(Debug, Clone)]
pub struct Model {
    pub layout: ModelLayout,
    pub num_entities: usize,
    pub store: ParamStore,
    /// Set once the imagination module has been optimized.
    pub cmmi_trained: bool,
    /// Set once stage 1 has completed (or was restored from a checkpoint).
    pub stage1_done: bool,
}

impl Model {
    pub fn new(cfg: ModelConfig, num_entities: usize, init_seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(init_seed);
        let mut store = ParamStore::new();
        let d = cfg.dim;
        let x_g = store.add(
            "main.x_g",
            normal(num_entities, d, 1.0 / (d as f64).sqrt(), &mut rng),
        );
        let gat = GatParams::register(&mut store, "main.gat", &cfg.gat, &mut rng);
        let proj_r = Linear::register(&mut store, "main.proj_r", cfg.d_r, d, true, &mut rng);
        let proj_a = Linear::register(&mut store, "main.proj_a", cfg.d_a, d, true, &mut rng);
        let proj_v = Linear::register(&mut store, "main.proj_v", cfg.d_v, d, true, &mut rng);
        let gmi_logits = store.add("main.gmi_logits", Tensor::zeros(1, NUM_MODALITIES));
        let mhca = MhcaParams::register(&mut store, "main.mhca", &cfg.mhca(), &mut rng);
        let cmmi = CmmiParams::register(&mut store, "cmmi", d, &mut rng);
        Ok(Self {
            layout: ModelLayout {
                cfg,
                main: MainParams {
                    x_g,
                    gat,
                    proj_r,
                    proj_a,
                    proj_v,
                    gmi_logits,
                    mhca,
                },
                cmmi,
            },
            num_entities,
            store,
            cmmi_trained: false,
            stage1_done: false,
        })
    }

    pub fn cfg(&self) -> &ModelConfig {
        &self.layout.cfg
    }

    pub fn batch_forward(
        &self,
        tape: &mut Tape,
        bank: &FeatureBank,
        adj: &AdjacencyStructure,
        pairs: &[(usize, usize)],
        visual: &VisualSlot,
    ) -> NumResult<BatchForward> {
        self.layout
            .batch_forward(tape, &self.store, bank, adj, pairs, visual)
    }

    /// Checks that features and adjacency match the model's sizes.
    pub fn check(&self, bank: &FeatureBank, adj: &AdjacencyStructure) -> Result<()> {
        let n = self.num_entities;
        if bank.num_entities() != n || adj.num_nodes() != n {
            return Err(Error::Invalid(format!(
                "model has {n} entities; features cover {}, adjacency {}",
                bank.num_entities(),
                adj.num_nodes()
            )));
        }
        let cfg = &self.layout.cfg;
        if bank.x_r.cols() != cfg.d_r || bank.x_a.cols() != cfg.d_a || bank.x_v.cols() != cfg.d_v {
            return Err(Error::Invalid(format!(
                "feature widths ({}, {}, {}) differ from model config ({}, {}, {})",
                bank.x_r.cols(),
                bank.x_a.cols(),
                bank.x_v.cols(),
                cfg.d_r,
                cfg.d_a,
                cfg.d_v
            )));
        }
        Ok(())
    }

    /// Final `|E|×(|M|·d)` representations of every entity.
    pub fn embed_all(
        &self,
        bank: &FeatureBank,
        adj: &AdjacencyStructure,
        mode: &EmbedMode,
    ) -> Result<Tensor> {
        self.check(bank, adj)?;
        let rows: Vec<usize> = (0..self.num_entities).collect();
        let mut tape = Tape::new();
        let [h_g, h_r, h_a, h_v] =
            self.layout
                .modality_embeddings(&mut tape, &self.store, bank, adj, &rows)?;
        let h_v = match mode {
            EmbedMode::Projected => h_v,
            EmbedMode::Eval if !self.cmmi_trained => h_v,
            EmbedMode::Eval => {
                let h_hyb = hybrid_feature(&mut tape, h_r, h_a, h_g)?;
                let (mu, _) = cmmi_encode(&mut tape, &self.store, h_hyb, &self.layout.cmmi)?;
                tape.where_rows(&bank.image_mask, h_v, mu)?
            }
            EmbedMode::Imagined(z) => {
                if z.shape() != [self.num_entities, self.layout.cfg.dim] {
                    return Err(Error::Invalid("imagination noise must be |E|×d".into()));
                }
                let h_hyb = hybrid_feature(&mut tape, h_r, h_a, h_g)?;
                let (mu, log_var) = cmmi_encode(&mut tape, &self.store, h_hyb, &self.layout.cmmi)?;
                let z = tape.constant(z.clone())?;
                let h_bar_v = reparameterize(&mut tape, mu, log_var, z)?;
                tape.where_rows(&bank.image_mask, h_v, h_bar_v)?
            }
        };
        let logits = tape.param(&self.store, self.layout.main.gmi_logits)?;
        let h = gmi_embed(&mut tape, &[h_g, h_r, h_a, h_v], logits)?;
        Ok(tape.value(h).clone())
    }
}

impl ModelLayout {
    /// `[h_g, h_r, h_a, h_v]` for the given joint entity rows, with the
    /// visual slot holding the plain projection.
    pub fn modality_embeddings(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        bank: &FeatureBank,
        adj: &AdjacencyStructure,
        rows: &[usize],
    ) -> NumResult<[Var; 4]> {
        let x_g = tape.param(store, self.main.x_g)?;
        let (g_all, _) = gat_forward(tape, store, x_g, adj, &self.main.gat, &self.cfg.gat)?;
        let h_g = tape.gather_rows(g_all, rows)?;
        let x_r = tape.constant(bank.x_r.select_rows(rows))?;
        let x_a = tape.constant(bank.x_a.select_rows(rows))?;
        let x_v = tape.constant(bank.x_v.select_rows(rows))?;
        let h_r = modality_projection(tape, store, x_r, &self.main.proj_r)?;
        let h_a = modality_projection(tape, store, x_a, &self.main.proj_a)?;
        let h_v = modality_projection(tape, store, x_v, &self.main.proj_v)?;
        Ok([h_g, h_r, h_a, h_v])
    }

    /// Loss for a batch of `(KG1 row, joint KG2 row)` pairs. With
    /// [`VisualSlot::Imagined`], entities lacking an image use the
    /// pseudo-visual feature everywhere and the stage-2 losses are added.
    pub fn batch_forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        bank: &FeatureBank,
        adj: &AdjacencyStructure,
        pairs: &[(usize, usize)],
        visual: &VisualSlot,
    ) -> NumResult<BatchForward> {
        let rows: Vec<usize> = pairs
            .iter()
            .map(|p| p.0)
            .chain(pairs.iter().map(|p| p.1))
            .collect();
        let [h_g, h_r, h_a, h_v] = self.modality_embeddings(tape, store, bank, adj, &rows)?;
        let has_image: Vec<bool> = rows.iter().map(|&r| bank.image_mask[r]).collect();
        let tau = self.cfg.tau;

        let (h_v_used, stage2) = match visual {
            VisualSlot::Projected => (h_v, None),
            VisualSlot::Imagined(z) => {
                let h_hyb = hybrid_feature(tape, h_r, h_a, h_g)?;
                let (mu, log_var) = cmmi_encode(tape, store, h_hyb, &self.cmmi)?;
                let z = tape.constant(z.clone())?;
                let h_bar_v = reparameterize(tape, mu, log_var, z)?;
                let h_bar_hyb = cmmi_decode(tape, store, h_bar_v, &self.cmmi)?;
                let complete: Vec<usize> = (0..rows.len()).filter(|&i| has_image[i]).collect();
                let kl = kl_loss(tape, mu, log_var, &complete)?;
                let re_vis =
                    reconstruction_loss(tape, h_v, h_bar_v, &complete, self.cfg.recon_loss)?;
                let re_hyb =
                    reconstruction_loss(tape, h_hyb, h_bar_hyb, &complete, self.cfg.recon_loss)?;
                let sim = sim_distill_loss(tape, h_hyb, h_bar_v, &complete, tau)?;
                let h_v_used = tape.where_rows(&has_image, h_v, h_bar_v)?;
                (h_v_used, Some([kl, re_vis, re_hyb, sim]))
            }
        };
        let hs = [h_g, h_r, h_a, h_v_used];

        let logits = tape.param(store, self.main.gmi_logits)?;
        let h_gmi = gmi_embed(tape, &hs, logits)?;
        let l_gmi = contrastive_loss(tape, h_gmi, tau)?;
        let mhca = mhca_layer(tape, store, &hs, &self.main.mhca, &self.cfg.mhca())?;
        let confidence = entity_confidence(tape, &mhca.beta, NUM_MODALITIES)?;
        let l_ecia = ecia_loss(tape, &hs, confidence, tau, self.cfg.detach_phi)?;
        let l_iir = iir_loss(tape, &mhca.hidden, tau)?;
        let mut total = tape.add(l_gmi, l_ecia)?;
        total = tape.add(total, l_iir)?;
        if let Some(parts) = stage2 {
            for p in parts {
                total = tape.add(total, p)?;
            }
        }
        Ok(BatchForward {
            total,
            l_gmi,
            l_ecia,
            l_iir,
            stage2,
            confidence,
        })
    }
}
