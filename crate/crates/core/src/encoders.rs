//! Per-modality encoders: a graph attention network over the joint entity
//! graph and affine projections for relation, attribute and visual inputs.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};
use umaea_numcore::{NeighborLists, NumResult, ParamId, ParamStore, Tape, Tensor, Var};

use crate::error::{Error, Result};
use crate::init::{uniform, xavier};
use crate::kgdata::Mmkg;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GatConfig {
    pub layers: usize,
    pub heads: usize,
    pub dim: usize,
    pub leaky_relu_slope: f64,
    pub self_loops: bool,
}

impl Default for GatConfig {
    fn default() -> Self {
        Self {
            layers: 2,
            heads: 2,
            dim: 300,
            leaky_relu_slope: 0.2,
            self_loops: true,
        }
    }
}

impl GatConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.heads == 0 || self.dim == 0 {
            return Err(Error::Invalid(
                "GAT layers, heads and dim must be positive".into(),
            ));
        }
        if self.dim % self.heads != 0 {
            return Err(Error::Invalid(format!(
                "GAT dim {} is not divisible by {} heads",
                self.dim, self.heads
            )));
        }
        Ok(())
    }
}

/// Undirected neighbor lists over the joint entity space, sorted and
/// de-duplicated, optionally with self-loops.
#[derive(Debug, Clone)]
pub struct AdjacencyStructure {
    lists: Arc<NeighborLists>,
}

impl AdjacencyStructure {
    pub fn from_edges(n: usize, edges: &[(usize, usize)], self_loops: bool) -> Self {
        let mut lists = vec![Vec::new(); n];
        for &(a, b) in edges {
            lists[a].push(b);
            lists[b].push(a);
        }
        for (i, l) in lists.iter_mut().enumerate() {
            if self_loops {
                l.push(i);
            }
            l.sort_unstable();
            l.dedup();
        }
        Self::from_lists(&lists)
    }

    /// Neighbor lists used verbatim, in the given order.
    pub fn from_lists(lists: &[Vec<usize>]) -> Self {
        Self {
            lists: Arc::new(NeighborLists::from_lists(lists)),
        }
    }

    /// Block-diagonal structure of both graphs; KG2 indices are offset by
    /// KG1's entity count.
    pub fn from_kg_pair(kg1: &Mmkg, kg2: &Mmkg, self_loops: bool) -> Self {
        let off = kg1.num_entities;
        let edges: Vec<(usize, usize)> = kg1
            .triples
            .iter()
            .map(|t| (t.head, t.tail))
            .chain(kg2.triples.iter().map(|t| (t.head + off, t.tail + off)))
            .collect();
        Self::from_edges(off + kg2.num_entities, &edges, self_loops)
    }

    pub fn num_nodes(&self) -> usize {
        self.lists.num_nodes()
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        self.lists.neighbors(i)
    }

    pub fn lists(&self) -> &Arc<NeighborLists> {
        &self.lists
    }
}

#[derive(Debug, Clone)]
pub struct GatLayerParams {
    /// `d_in × d`; head `h` owns columns `h·d/heads ..`.
    pub weight: ParamId,
    /// Per head, the `d/heads × 1` source and target scoring vectors.
    pub attn_src: Vec<ParamId>,
    pub attn_dst: Vec<ParamId>,
}

#[derive(Debug, Clone)]
pub struct GatParams {
    pub layers: Vec<GatLayerParams>,
    /// `1 × d` diagonal output transform.
    pub diag: ParamId,
}

impl GatParams {
    pub fn register<R: Rng>(
        store: &mut ParamStore,
        prefix: &str,
        cfg: &GatConfig,
        rng: &mut R,
    ) -> Self {
        let d = cfg.dim;
        let dh = d / cfg.heads;
        let layers = (0..cfg.layers)
            .map(|l| GatLayerParams {
                weight: store.add(format!("{prefix}.layer{l}.weight"), xavier(d, d, rng)),
                attn_src: (0..cfg.heads)
                    .map(|h| {
                        store.add(format!("{prefix}.layer{l}.head{h}.src"), xavier(dh, 1, rng))
                    })
                    .collect(),
                attn_dst: (0..cfg.heads)
                    .map(|h| {
                        store.add(format!("{prefix}.layer{l}.head{h}.dst"), xavier(dh, 1, rng))
                    })
                    .collect(),
            })
            .collect();
        let diag = store.add(format!("{prefix}.diag"), Tensor::filled(1, d, 1.0));
        Self { layers, diag }
    }
}

/// Multi-head graph attention. Heads are concatenated at every layer; an ELU
/// separates layers and the final output is scaled by the diagonal transform.
/// Returns the output and the last layer's attention nodes (one per head).
pub fn gat_forward(
    tape: &mut Tape,
    store: &ParamStore,
    x_g: Var,
    adj: &AdjacencyStructure,
    params: &GatParams,
    cfg: &GatConfig,
) -> NumResult<(Var, Vec<Var>)> {
    let dh = cfg.dim / cfg.heads;
    let mut h = x_g;
    let mut attention = Vec::new();
    for (l, layer) in params.layers.iter().enumerate() {
        let w = tape.param(store, layer.weight)?;
        let z = tape.matmul(h, w)?;
        attention.clear();
        let mut heads = Vec::with_capacity(cfg.heads);
        for k in 0..cfg.heads {
            let zk = tape.slice_cols(z, k * dh, dh)?;
            let a_src = tape.param(store, layer.attn_src[k])?;
            let a_dst = tape.param(store, layer.attn_dst[k])?;
            let src = tape.matmul(zk, a_src)?;
            let dst = tape.matmul(zk, a_dst)?;
            let out = tape.graph_attention(zk, src, dst, adj.lists(), cfg.leaky_relu_slope)?;
            attention.push(out);
            heads.push(out);
        }
        h = if heads.len() == 1 {
            heads[0]
        } else {
            tape.hconcat(&heads)?
        };
        if l + 1 < params.layers.len() {
            h = tape.elu(h)?;
        }
    }
    let diag = tape.param(store, params.diag)?;
    Ok((tape.mul_row(h, diag)?, attention))
}

/// Affine map `x·W + b`.
#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Linear {
    pub fn register<R: Rng>(
        store: &mut ParamStore,
        name: &str,
        d_in: usize,
        d_out: usize,
        bias: bool,
        rng: &mut R,
    ) -> Self {
        let weight = store.add(format!("{name}.weight"), xavier(d_in, d_out, rng));
        // a zero bias would leave featureless entities at the zero vector,
        // where row normalization has no gradient
        let bound = 1.0 / (d_in as f64).sqrt();
        let bias = bias.then(|| store.add(format!("{name}.bias"), uniform(1, d_out, bound, rng)));
        Self { weight, bias }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> NumResult<Var> {
        let w = tape.param(store, self.weight)?;
        let y = tape.matmul(x, w)?;
        match self.bias {
            Some(b) => {
                let b = tape.param(store, b)?;
                tape.add_row(y, b)
            }
            None => Ok(y),
        }
    }
}

/// Projects one modality's raw features into the shared space.
pub fn modality_projection(
    tape: &mut Tape,
    store: &ParamStore,
    x_m: Var,
    proj: &Linear,
) -> NumResult<Var> {
    proj.forward(tape, store, x_m)
}
