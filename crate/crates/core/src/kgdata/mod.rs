//! Paired multi-modal knowledge graphs: loading, seed splits, bag-of-words
//! relation/attribute features, visual features with imputation, and a
//! synthetic pair generator for desk-scale experiments.

mod bow;
mod io;
mod synthetic;
mod visual;

pub use bow::{build_bow_attribute_features, build_bow_relation_features, frequency_ranking};
pub use io::{
    format_attrs, format_features, format_mask, format_pairs, format_triples, load_kg_pair,
    load_pairs, load_visual_features, parse_attrs, parse_features, parse_mask, parse_pairs,
    parse_triples, KgFiles,
};
pub use synthetic::{generate_synthetic_pair, SyntheticConfig, SyntheticPair};
pub use visual::impute_missing_visual;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use umaea_numcore::Tensor;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Triple {
    pub head: usize,
    pub relation: usize,
    pub tail: usize,
}

/// One side of an alignment task.
#[derive(Debug, Clone, PartialEq)]
pub struct Mmkg {
    pub kg_id: u8,
    pub num_entities: usize,
    pub num_relations: usize,
    pub triples: Vec<Triple>,
    /// Sorted, de-duplicated attribute ids per entity.
    pub entity_attrs: Vec<Vec<usize>>,
    /// `true` when the entity has an image feature.
    pub image_mask: Vec<bool>,
}

impl Mmkg {
    /// Builds a graph, de-duplicating triples (first occurrence wins) and
    /// attribute lists, and checking every index against `num_entities`.
    pub fn new(
        kg_id: u8,
        num_entities: usize,
        num_relations: usize,
        triples: Vec<Triple>,
        entity_attrs: Vec<Vec<usize>>,
        image_mask: Vec<bool>,
    ) -> Result<Self> {
        if !(kg_id == 1 || kg_id == 2) {
            return Err(Error::Invalid(format!("kg_id must be 1 or 2, got {kg_id}")));
        }
        if image_mask.len() != num_entities || entity_attrs.len() != num_entities {
            return Err(Error::Invalid(format!(
                "KG{kg_id}: mask/attribute tables must have {num_entities} rows"
            )));
        }
        let mut seen = std::collections::HashSet::with_capacity(triples.len());
        let mut unique = Vec::with_capacity(triples.len());
        for t in triples {
            if t.head >= num_entities || t.tail >= num_entities {
                return Err(Error::Invalid(format!(
                    "KG{kg_id}: triple {t:?} references an entity >= {num_entities}"
                )));
            }
            if t.relation >= num_relations {
                return Err(Error::Invalid(format!(
                    "KG{kg_id}: triple {t:?} uses a relation >= {num_relations}"
                )));
            }
            if seen.insert(t) {
                unique.push(t);
            }
        }
        let entity_attrs = entity_attrs
            .into_iter()
            .map(|mut a| {
                a.sort_unstable();
                a.dedup();
                a
            })
            .collect();
        Ok(Self {
            kg_id,
            num_entities,
            num_relations,
            triples: unique,
            entity_attrs,
            image_mask,
        })
    }

    pub fn num_images(&self) -> usize {
        self.image_mask.iter().filter(|&&m| m).count()
    }
}

/// Train/test alignment pairs as `(KG1 entity, KG2 entity)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentSeedSet {
    pub train: Vec<(usize, usize)>,
    pub test: Vec<(usize, usize)>,
    pub seed_ratio: f64,
}

/// Shuffles `all_pairs` under `seed` and takes the first `round(r_sa·N)` as
/// training seeds.
pub fn split_seeds(all_pairs: &[(usize, usize)], r_sa: f64, seed: u64) -> Result<AlignmentSeedSet> {
    if all_pairs.is_empty() {
        return Err(Error::Invalid("no alignment pairs to split".into()));
    }
    if !(r_sa > 0.0 && r_sa < 1.0) {
        return Err(Error::Invalid(format!(
            "seed ratio must lie in (0, 1), got {r_sa}"
        )));
    }
    let mut left = std::collections::HashSet::new();
    let mut right = std::collections::HashSet::new();
    for &(a, b) in all_pairs {
        if !left.insert(a) || !right.insert(b) {
            return Err(Error::Invalid(format!(
                "pair ({a}, {b}) reuses an entity already aligned on the same side"
            )));
        }
    }
    let mut pairs = all_pairs.to_vec();
    pairs.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = (r_sa * pairs.len() as f64).round() as usize;
    let test = pairs.split_off(n_train);
    Ok(AlignmentSeedSet {
        train: pairs,
        test,
        seed_ratio: r_sa,
    })
}

/// Dense per-entity inputs over the joint entity space (KG1 rows first, then
/// KG2 rows).
#[derive(Debug, Clone)]
pub struct FeatureBank {
    pub x_r: Tensor,
    pub x_a: Tensor,
    pub x_v: Tensor,
    pub image_mask: Vec<bool>,
}

impl FeatureBank {
    /// Stacks both graphs' features. `image_mask` is the active availability
    /// (after any image dropping); visual rows outside it are re-imputed.
    pub fn build(
        kg1: &Mmkg,
        kg2: &Mmkg,
        visual1: &Tensor,
        visual2: &Tensor,
        image_mask: Vec<bool>,
        d_r: usize,
        d_a: usize,
        impute_seed: u64,
    ) -> Result<Self> {
        let n = kg1.num_entities + kg2.num_entities;
        if image_mask.len() != n {
            return Err(Error::Invalid(format!(
                "image mask has {} entries for {n} entities",
                image_mask.len()
            )));
        }
        if visual1.cols() != visual2.cols()
            || visual1.rows() != kg1.num_entities
            || visual2.rows() != kg2.num_entities
        {
            return Err(Error::Invalid(
                "visual feature matrices do not match the graphs".into(),
            ));
        }
        let (r1, r2) = build_bow_relation_features(kg1, kg2, d_r);
        let (a1, a2) = build_bow_attribute_features(kg1, kg2, d_a);
        let stack = |a: &Tensor, b: &Tensor| {
            let mut data = a.data().to_vec();
            data.extend_from_slice(b.data());
            Tensor::from_vec(a.rows() + b.rows(), a.cols(), data)
        };
        let mut x_v = stack(visual1, visual2)?;
        for (r, &has) in image_mask.iter().enumerate() {
            if !has {
                x_v.row_slice_mut(r).fill(0.0);
            }
        }
        let x_v = impute_missing_visual(&x_v, &image_mask, impute_seed)?;
        Ok(Self {
            x_r: stack(&r1, &r2)?,
            x_a: stack(&a1, &a2)?,
            x_v,
            image_mask,
        })
    }

    pub fn num_entities(&self) -> usize {
        self.image_mask.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pairs(n: usize) -> Vec<(usize, usize)> {
        (0..n).map(|i| (i, (i * 7) % n)).collect()
    }

    #[test]
    fn split_counts() {
        let s = split_seeds(&pairs(10), 0.3, 7).unwrap();
        assert_eq!((s.train.len(), s.test.len()), (3, 7));
        let s = split_seeds(&pairs(15000), 0.3, 1).unwrap();
        assert_eq!(s.train.len(), 4500);
    }

    #[test]
    fn split_is_deterministic_and_disjoint() {
        let a = split_seeds(&pairs(50), 0.3, 7).unwrap();
        let b = split_seeds(&pairs(50), 0.3, 7).unwrap();
        assert_eq!(a, b);
        let c = split_seeds(&pairs(50), 0.3, 8).unwrap();
        assert_ne!(a.train, c.train);
        for p in &a.train {
            assert!(!a.test.contains(p));
        }
    }

    #[test]
    fn split_rejects_bad_ratio() {
        assert!(split_seeds(&pairs(10), 0.0, 1).is_err());
        assert!(split_seeds(&pairs(10), 1.0, 1).is_err());
        assert!(split_seeds(&[], 0.5, 1).is_err());
        assert!(split_seeds(&[(0, 1), (0, 2)], 0.5, 1).is_err());
    }

    #[test]
    fn mmkg_deduplicates_triples() {
        let t = Triple {
            head: 0,
            relation: 1,
            tail: 2,
        };
        let kg = Mmkg::new(1, 3, 2, vec![t, t], vec![vec![]; 3], vec![true; 3]).unwrap();
        assert_eq!(kg.triples.len(), 1);
        assert!(Mmkg::new(1, 2, 2, vec![t], vec![vec![]; 2], vec![true; 2]).is_err());
    }
}
