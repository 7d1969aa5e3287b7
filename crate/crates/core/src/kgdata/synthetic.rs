//! Random paired graphs with a known ground-truth alignment.

use rand::distr::weighted::WeightedIndex;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use umaea_numcore::Tensor;

use super::{Mmkg, Triple};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub n_entities: usize,
    pub n_relations: usize,
    pub n_attrs: usize,
    pub d_v: usize,
    /// Fraction of KG2 triples rewired, fraction of KG2 attributes replaced,
    /// and the std of the Gaussian noise added to KG2 visual features.
    pub noise: f64,
    pub seed: u64,
    /// Each entity heads this many KG1 triples.
    pub triples_per_entity: usize,
    /// Each entity holds between 1 and this many attributes.
    pub attrs_max: usize,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n_entities: 200,
            n_relations: 20,
            n_attrs: 50,
            d_v: 16,
            noise: 0.1,
            seed: 0,
            triples_per_entity: 3,
            attrs_max: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticPair {
    pub kg1: Mmkg,
    pub kg2: Mmkg,
    /// `(i, permutation[i])` for every KG1 entity `i`.
    pub pairs: Vec<(usize, usize)>,
    /// KG2 index of each KG1 entity.
    pub permutation: Vec<usize>,
    pub visual1: Tensor,
    pub visual2: Tensor,
}

fn zipf(n: usize) -> WeightedIndex<f64> {
    WeightedIndex::new((0..n).map(|r| 1.0 / (r as f64 + 1.0))).expect("n >= 1")
}

/// KG1 is a random sparse multigraph with Zipf-distributed relation and
/// attribute ids. KG2 relabels entities by a random permutation, rewires the
/// tail of a `noise` fraction of triples, replaces attributes with
/// probability `noise`, and perturbs visual features by `noise`·N(0, 1).
/// Every entity on both sides has an image.
pub fn generate_synthetic_pair(cfg: &SyntheticConfig) -> Result<SyntheticPair> {
    if cfg.n_entities < 2 {
        return Err(Error::Invalid(
            "synthetic graphs need at least 2 entities".into(),
        ));
    }
    if cfg.n_relations == 0 || cfg.n_attrs == 0 || cfg.d_v == 0 || cfg.attrs_max == 0 {
        return Err(Error::Invalid(
            "relation, attribute and visual dimensions must be positive".into(),
        ));
    }
    if !(0.0..=1.0).contains(&cfg.noise) {
        return Err(Error::Invalid(format!(
            "noise must lie in [0, 1], got {}",
            cfg.noise
        )));
    }
    let n = cfg.n_entities;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let rel_dist = zipf(cfg.n_relations);
    let attr_dist = zipf(cfg.n_attrs);

    let random_tail = |rng: &mut ChaCha8Rng, head: usize| {
        let t = rng.random_range(0..n - 1);
        if t >= head {
            t + 1
        } else {
            t
        }
    };

    let mut triples1 = Vec::with_capacity(n * cfg.triples_per_entity);
    for head in 0..n {
        for _ in 0..cfg.triples_per_entity {
            let relation = rel_dist.sample(&mut rng);
            let tail = random_tail(&mut rng, head);
            triples1.push(Triple {
                head,
                relation,
                tail,
            });
        }
    }
    let attrs1: Vec<Vec<usize>> = (0..n)
        .map(|_| {
            let k = rng.random_range(1..=cfg.attrs_max);
            (0..k).map(|_| attr_dist.sample(&mut rng)).collect()
        })
        .collect();
    let visual1 = Tensor::from_vec(
        n,
        cfg.d_v,
        (0..n * cfg.d_v)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect(),
    )?;

    let mut permutation: Vec<usize> = (0..n).collect();
    permutation.shuffle(&mut rng);

    let kg1 = Mmkg::new(1, n, cfg.n_relations, triples1, attrs1, vec![true; n])?;

    let mut triples2 = Vec::with_capacity(kg1.triples.len());
    for t in &kg1.triples {
        let head = permutation[t.head];
        let tail = if rng.random::<f64>() < cfg.noise {
            random_tail(&mut rng, head)
        } else {
            permutation[t.tail]
        };
        triples2.push(Triple {
            head,
            relation: t.relation,
            tail,
        });
    }
    let mut attrs2 = vec![Vec::new(); n];
    for (e, attrs) in kg1.entity_attrs.iter().enumerate() {
        attrs2[permutation[e]] = attrs
            .iter()
            .map(|&a| {
                if rng.random::<f64>() < cfg.noise {
                    rng.random_range(0..cfg.n_attrs)
                } else {
                    a
                }
            })
            .collect();
    }
    let mut visual2 = Tensor::zeros(n, cfg.d_v);
    for e in 0..n {
        let src = visual1.row_slice(e);
        for (dst, &v) in visual2.row_slice_mut(permutation[e]).iter_mut().zip(src) {
            let eps: f64 = StandardNormal.sample(&mut rng);
            *dst = v + cfg.noise * eps;
        }
    }
    let kg2 = Mmkg::new(2, n, cfg.n_relations, triples2, attrs2, vec![true; n])?;
    let pairs = permutation
        .iter()
        .enumerate()
        .map(|(i, &j)| (i, j))
        .collect();
    Ok(SyntheticPair {
        kg1,
        kg2,
        pairs,
        permutation,
        visual1,
        visual2,
    })
}
