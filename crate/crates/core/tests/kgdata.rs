use std::collections::{HashMap, HashSet};

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use umaea_core::kgdata::{
    build_bow_attribute_features, build_bow_relation_features, generate_synthetic_pair,
    impute_missing_visual, load_kg_pair, load_pairs, load_visual_features, KgFiles, Mmkg,
    SyntheticConfig, Triple,
};
use umaea_numcore::Tensor;

fn graph(id: u8, n: usize, r: usize, triples: Vec<Triple>, attrs: Vec<Vec<usize>>) -> Mmkg {
    Mmkg::new(id, n, r, triples, attrs, vec![true; n]).unwrap()
}

fn random_graph(id: u8, n: usize, r: usize, m: usize, rng: &mut ChaCha8Rng) -> Mmkg {
    let triples = (0..m)
        .map(|_| Triple {
            head: rng.random_range(0..n),
            relation: rng.random_range(0..r),
            tail: rng.random_range(0..n),
        })
        .collect();
    graph(id, n, r, triples, vec![vec![]; n])
}

#[test]
fn two_triples_of_rank_five_relation() {
    // relations 0..=4 get 3 triples each; relation 9 gets 2 and ranks sixth
    // (index 5)
    let mut triples = Vec::new();
    for r in 0..5 {
        for k in 0..3 {
            triples.push(Triple {
                head: 1 + k,
                relation: r,
                tail: 4 + k,
            });
        }
    }
    triples.push(Triple {
        head: 0,
        relation: 9,
        tail: 8,
    });
    triples.push(Triple {
        head: 0,
        relation: 9,
        tail: 9,
    });
    let kg1 = graph(1, 10, 10, triples, vec![vec![]; 10]);
    let kg2 = graph(2, 3, 10, vec![], vec![vec![]; 3]);
    let (x1, _) = build_bow_relation_features(&kg1, &kg2, 8);
    let mut expect = vec![0.0; 8];
    expect[5] = 2.0;
    assert_eq!(x1.row_slice(0), expect.as_slice());
}

#[test]
fn rarest_attributes_never_set() {
    // attribute a is held by (1200 - a) entities spread over both graphs
    let n = 1200;
    let mut attrs1 = vec![Vec::new(); n];
    let mut attrs2 = vec![Vec::new(); n];
    for a in 0..1200usize {
        for h in 0..(1200 - a) {
            if h % 2 == 0 {
                attrs1[h / 2].push(a);
            } else {
                attrs2[h / 2].push(a);
            }
        }
    }
    let kg1 = graph(1, n, 1, vec![], attrs1);
    let kg2 = graph(2, n, 1, vec![], attrs2);
    let (x1, x2) = build_bow_attribute_features(&kg1, &kg2, 1000);
    // frequency oracle: attribute a sits at column a; a >= 1000 is dropped
    for (kg, x) in [(&kg1, &x1), (&kg2, &x2)] {
        for e in 0..n {
            let expected: usize = kg.entity_attrs[e].iter().filter(|&&a| a < 1000).count();
            let got: f64 = x.row_slice(e).iter().sum();
            assert_eq!(got as usize, expected);
            for &a in kg.entity_attrs[e].iter().filter(|&&a| a < 1000) {
                assert_eq!(x.get(e, a), 1.0);
            }
        }
    }
}

fn brute_force_top(kgs: [&Mmkg; 2], k: usize) -> Vec<usize> {
    let mut counts = vec![0usize; 64];
    for kg in kgs {
        for t in &kg.triples {
            counts[t.relation] += 1;
        }
    }
    let mut ids: Vec<usize> = (0..64).filter(|&r| counts[r] > 0).collect();
    // stable sort on count keeps ascending id for ties
    ids.sort_by(|a, b| counts[*b].cmp(&counts[*a]));
    ids.truncate(k);
    ids
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn relation_ranking_and_conservation(seed in 0u64..1000, r in 1usize..50, k in 1usize..60) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let kg1 = random_graph(1, 30, r, 80, &mut rng);
        let kg2 = random_graph(2, 25, r, 60, &mut rng);
        let (x1, x2) = build_bow_relation_features(&kg1, &kg2, k);
        let top = brute_force_top([&kg1, &kg2], k);
        for (kg, x) in [(&kg1, &x1), (&kg2, &x2)] {
            for (pos, rel) in top.iter().enumerate() {
                let participation = 2 * kg.triples.iter().filter(|t| t.relation == *rel).count();
                let col: f64 = (0..kg.num_entities).map(|e| x.get(e, pos)).sum();
                prop_assert_eq!(col as usize, participation);
            }
            for pos in top.len()..k {
                prop_assert!((0..kg.num_entities).all(|e| x.get(e, pos) == 0.0));
            }
        }
    }

    #[test]
    fn imputation_keeps_available_rows(seed in 0u64..1000, rows in 2usize..20) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Tensor::from_vec(rows, 5, (0..rows * 5).map(|_| rng.random::<f64>()).collect()).unwrap();
        let mut mask: Vec<bool> = (0..rows).map(|_| rng.random::<bool>()).collect();
        mask[0] = true;
        let y = impute_missing_visual(&x, &mask, seed).unwrap();
        for r in 0..rows {
            if mask[r] {
                prop_assert_eq!(y.row_slice(r), x.row_slice(r));
            }
            prop_assert!(y.row_slice(r).iter().all(|v| v.is_finite()));
        }
    }
}

#[test]
fn imputation_matches_population_statistics() {
    let avail = 1000;
    let missing = 10_000;
    let d = 4;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let normal = Normal::new(3.0, 2.0).unwrap();
    let mut data = Vec::with_capacity((avail + missing) * d);
    for _ in 0..avail * d {
        data.push(normal.sample(&mut rng));
    }
    data.resize((avail + missing) * d, 0.0);
    let x = Tensor::from_vec(avail + missing, d, data).unwrap();
    let mask: Vec<bool> = (0..avail + missing).map(|r| r < avail).collect();
    let y = impute_missing_visual(&x, &mask, 5).unwrap();
    for j in 0..d {
        let mean: f64 = (avail..avail + missing).map(|r| y.get(r, j)).sum::<f64>() / missing as f64;
        assert!((mean - 3.0).abs() < 0.3, "dim {j} mean {mean}");
    }
}

fn tail_overlap(kg1: &Mmkg, kg2: &Mmkg, perm: &[usize]) -> f64 {
    let set: HashSet<Triple> = kg2.triples.iter().copied().collect();
    let hits = kg1
        .triples
        .iter()
        .filter(|t| {
            set.contains(&Triple {
                head: perm[t.head],
                relation: t.relation,
                tail: perm[t.tail],
            })
        })
        .count();
    hits as f64 / kg1.triples.len() as f64
}

#[test]
fn synthetic_noise_free_is_isomorphic() {
    let cfg = SyntheticConfig {
        noise: 0.0,
        seed: 3,
        ..SyntheticConfig::default()
    };
    let s = generate_synthetic_pair(&cfg).unwrap();
    assert_eq!(s.kg1.triples.len(), s.kg2.triples.len());
    assert_eq!(tail_overlap(&s.kg1, &s.kg2, &s.permutation), 1.0);
    for &(i, j) in &s.pairs {
        assert_eq!(s.kg1.entity_attrs[i], s.kg2.entity_attrs[j]);
        assert_eq!(s.visual1.row_slice(i), s.visual2.row_slice(j));
    }
}

#[test]
fn synthetic_is_deterministic() {
    let cfg = SyntheticConfig {
        n_entities: 200,
        noise: 0.1,
        seed: 17,
        ..SyntheticConfig::default()
    };
    assert_eq!(
        generate_synthetic_pair(&cfg).unwrap(),
        generate_synthetic_pair(&cfg).unwrap()
    );
}

#[test]
fn full_noise_overlap_is_chance_level() {
    let cfg = SyntheticConfig {
        n_entities: 400,
        noise: 1.0,
        seed: 2,
        ..SyntheticConfig::default()
    };
    let s = generate_synthetic_pair(&cfg).unwrap();
    // counting oracle: a uniformly rewired tail (never the head) hits an
    // existing KG1 tail for the same (head, relation) with probability
    // |tails(h, r)| / (n - 1)
    let mut tails: HashMap<(usize, usize), usize> = HashMap::new();
    for t in &s.kg1.triples {
        *tails.entry((t.head, t.relation)).or_insert(0) += 1;
    }
    let n = cfg.n_entities as f64;
    let expected: f64 = s
        .kg1
        .triples
        .iter()
        .map(|t| tails[&(t.head, t.relation)] as f64 / (n - 1.0))
        .sum::<f64>()
        / s.kg1.triples.len() as f64;
    let observed = tail_overlap(&s.kg1, &s.kg2, &s.permutation);
    assert!(expected < 0.02);
    assert!(
        observed <= expected + 0.01,
        "observed {observed} expected {expected}"
    );
}

#[test]
fn loads_files_from_disk() {
    let dir = tempfile::tempdir().unwrap();
    let w = |name: &str, body: &str| {
        let p = dir.path().join(name);
        std::fs::write(&p, body).unwrap();
        p
    };
    let kg1 = KgFiles {
        triples: w("t1", "#entities 3 #relations 2\n0\t1\t2\n0\t1\t2\n"),
        attrs: w("a1", "0\t1,1\n"),
        mask: w("m1", "0\n2\n"),
    };
    let kg2 = KgFiles {
        triples: w("t2", "#entities 2 #relations 2\n"),
        attrs: w("a2", ""),
        mask: w("m2", "0\n1\n"),
    };
    let (a, b) = load_kg_pair(&kg1, &kg2).unwrap();
    assert_eq!(a.triples.len(), 1);
    assert_eq!(a.entity_attrs[0], vec![1]);
    assert_eq!(a.image_mask, vec![true, false, true]);
    assert_eq!(b.num_entities, 2);
    assert!(b.triples.is_empty());

    let pairs = load_pairs(&w("p", "0\t1\n2\t0\n"), &a, &b).unwrap();
    assert_eq!(pairs, vec![(0, 1), (2, 0)]);
    assert!(load_pairs(&w("q", "3\t0\n"), &a, &b).is_err());

    let x = load_visual_features(&w("v1", "3 2\n1 2\n3 4\n5 6\n"), &a).unwrap();
    assert_eq!(x.row_slice(1), &[0.0, 0.0]);
    assert_eq!(x.row_slice(2), &[5.0, 6.0]);

    let missing = KgFiles {
        triples: dir.path().join("nope"),
        ..kg2.clone()
    };
    assert!(load_kg_pair(&kg1, &missing).is_err());
}
