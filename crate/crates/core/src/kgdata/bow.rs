//! Bag-of-words relation and attribute features with a frequency ranking
//! shared by both graphs, so column `k` means the same id on either side.

use std::collections::HashMap;

use umaea_numcore::Tensor;

use super::Mmkg;

/// Maps ids to column positions: descending count, ties by ascending id,
/// truncated to `width`.
pub fn frequency_ranking(counts: &HashMap<usize, usize>, width: usize) -> HashMap<usize, usize> {
    let mut ids: Vec<(usize, usize)> = counts.iter().map(|(&id, &c)| (id, c)).collect();
    ids.sort_unstable_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    ids.into_iter()
        .take(width)
        .enumerate()
        .map(|(pos, (id, _))| (id, pos))
        .collect()
}

fn relation_counts(kgs: [&Mmkg; 2]) -> HashMap<usize, usize> {
    let mut counts = HashMap::new();
    for kg in kgs {
        for t in &kg.triples {
            *counts.entry(t.relation).or_insert(0) += 2;
        }
    }
    counts
}

fn attribute_counts(kgs: [&Mmkg; 2]) -> HashMap<usize, usize> {
    let mut counts = HashMap::new();
    for kg in kgs {
        for attrs in &kg.entity_attrs {
            for &a in attrs {
                *counts.entry(a).or_insert(0) += 1;
            }
        }
    }
    counts
}

fn relation_matrix(kg: &Mmkg, rank: &HashMap<usize, usize>, d_r: usize) -> Tensor {
    let mut x = Tensor::zeros(kg.num_entities, d_r);
    for t in &kg.triples {
        if let Some(&pos) = rank.get(&t.relation) {
            for e in [t.head, t.tail] {
                let v = x.get(e, pos);
                x.set(e, pos, v + 1.0);
            }
        }
    }
    x
}

fn attribute_matrix(kg: &Mmkg, rank: &HashMap<usize, usize>, d_a: usize) -> Tensor {
    let mut x = Tensor::zeros(kg.num_entities, d_a);
    for (e, attrs) in kg.entity_attrs.iter().enumerate() {
        for a in attrs {
            if let Some(&pos) = rank.get(a) {
                x.set(e, pos, 1.0);
            }
        }
    }
    x
}

/// Each triple adds 1 to the head's and the tail's column for its relation
/// (a self-loop triple adds 2 to the same entity).
pub fn build_bow_relation_features(kg1: &Mmkg, kg2: &Mmkg, d_r: usize) -> (Tensor, Tensor) {
    let rank = frequency_ranking(&relation_counts([kg1, kg2]), d_r);
    (
        relation_matrix(kg1, &rank, d_r),
        relation_matrix(kg2, &rank, d_r),
    )
}

/// Binary attribute presence; attribute frequency is the number of entities
/// holding it.
pub fn build_bow_attribute_features(kg1: &Mmkg, kg2: &Mmkg, d_a: usize) -> (Tensor, Tensor) {
    let rank = frequency_ranking(&attribute_counts([kg1, kg2]), d_a);
    (
        attribute_matrix(kg1, &rank, d_a),
        attribute_matrix(kg2, &rank, d_a),
    )
}
