//! Ranking metrics and the image-availability breakdown of test pairs.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use umaea_numcore::{matmul_nt, Tensor};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    #[serde(rename = "1->2")]
    Forward,
    #[serde(rename = "2->1")]
    Backward,
}

impl Direction {
    pub fn label(self) -> &'static str {
        match self {
            Direction::Forward => "1->2",
            Direction::Backward => "2->1",
        }
    }
}

/// 1-based rank of the true counterpart given its similarity row:
/// candidates scoring higher, or equal with a lower index, come first.
pub fn rank_of(sims: &[f64], target: usize) -> usize {
    let t = sims[target];
    1 + sims
        .iter()
        .enumerate()
        .filter(|&(j, &s)| s > t || (s == t && j < target))
        .count()
}

/// Ranks each test pair's counterpart among all test-side targets by cosine
/// similarity. `emb1`/`emb2` hold one row per entity of KG1/KG2.
pub fn rank_alignments(
    emb1: &Tensor,
    emb2: &Tensor,
    test_pairs: &[(usize, usize)],
    direction: Direction,
) -> Result<Vec<usize>> {
    if emb1.cols() != emb2.cols() {
        return Err(Error::Invalid("embedding widths differ".into()));
    }
    let (src_emb, dst_emb) = match direction {
        Direction::Forward => (emb1, emb2),
        Direction::Backward => (emb2, emb1),
    };
    let (src, dst): (Vec<usize>, Vec<usize>) = test_pairs
        .iter()
        .map(|&(a, b)| match direction {
            Direction::Forward => (a, b),
            Direction::Backward => (b, a),
        })
        .unzip();
    for (&s, &d) in src.iter().zip(&dst) {
        if s >= src_emb.rows() || d >= dst_emb.rows() {
            return Err(Error::Invalid(format!(
                "test pair entity ({s}, {d}) has no embedding"
            )));
        }
    }
    let q = src_emb.select_rows(&src).l2_normalized_rows();
    let c = dst_emb.select_rows(&dst).l2_normalized_rows();
    let sims = matmul_nt(&q, &c)?;
    Ok((0..src.len())
        .into_par_iter()
        .map(|i| rank_of(sims.row_slice(i), i))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub hits1: f64,
    pub hits10: f64,
    pub mrr: f64,
    pub mr: f64,
    pub count: usize,
}

pub fn compute_metrics(ranks: &[usize]) -> Result<Metrics> {
    if ranks.is_empty() {
        return Err(Error::Invalid(
            "cannot compute metrics of an empty rank list".into(),
        ));
    }
    if ranks.contains(&0) {
        return Err(Error::Invalid("ranks are 1-based".into()));
    }
    let n = ranks.len() as f64;
    let frac = |k: usize| ranks.iter().filter(|&&r| r <= k).count() as f64 / n;
    Ok(Metrics {
        hits1: frac(1),
        hits10: frac(10),
        mrr: ranks.iter().map(|&r| 1.0 / r as f64).sum::<f64>() / n,
        mr: ranks.iter().map(|&r| r as f64).sum::<f64>() / n,
        count: ranks.len(),
    })
}

/// Test-pair indices grouped by how many members have an image.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TsPartition {
    /// Both members have an image.
    pub ts1: Vec<usize>,
    /// At least one has (`ts1 ∪ ts3`).
    pub ts2: Vec<usize>,
    /// Exactly one has.
    pub ts3: Vec<usize>,
    /// At least one lacks (`ts3 ∪ ts5`).
    pub ts4: Vec<usize>,
    /// Neither has.
    pub ts5: Vec<usize>,
}

impl TsPartition {
    pub fn get(&self, name: &str) -> Option<&[usize]> {
        match name {
            "TS1" => Some(&self.ts1),
            "TS2" => Some(&self.ts2),
            "TS3" => Some(&self.ts3),
            "TS4" => Some(&self.ts4),
            "TS5" => Some(&self.ts5),
            _ => None,
        }
    }
}

pub const PARTITIONS: [&str; 6] = ["ALL", "TS1", "TS2", "TS3", "TS4", "TS5"];

pub fn ts_partition(test_pairs: &[(usize, usize)], mask1: &[bool], mask2: &[bool]) -> TsPartition {
    let mut p = TsPartition {
        ts1: Vec::new(),
        ts2: Vec::new(),
        ts3: Vec::new(),
        ts4: Vec::new(),
        ts5: Vec::new(),
    };
    for (i, &(a, b)) in test_pairs.iter().enumerate() {
        match (mask1[a], mask2[b]) {
            (true, true) => {
                p.ts1.push(i);
                p.ts2.push(i);
            }
            (false, false) => {
                p.ts4.push(i);
                p.ts5.push(i);
            }
            _ => {
                p.ts2.push(i);
                p.ts3.push(i);
                p.ts4.push(i);
            }
        }
    }
    p
}

/// Metrics for both directions and their mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DirectionalMetrics {
    #[serde(rename = "1->2")]
    pub forward: Metrics,
    #[serde(rename = "2->1")]
    pub backward: Metrics,
    pub mean: Metrics,
}

impl DirectionalMetrics {
    pub fn from_ranks(forward: &[usize], backward: &[usize]) -> Result<Self> {
        let f = compute_metrics(forward)?;
        let b = compute_metrics(backward)?;
        Ok(Self {
            forward: f,
            backward: b,
            mean: Metrics {
                hits1: (f.hits1 + b.hits1) / 2.0,
                hits10: (f.hits10 + b.hits10) / 2.0,
                mrr: (f.mrr + b.mrr) / 2.0,
                mr: (f.mr + b.mr) / 2.0,
                count: f.count,
            },
        })
    }

    pub fn direction(&self, d: Direction) -> &Metrics {
        match d {
            Direction::Forward => &self.forward,
            Direction::Backward => &self.backward,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RunMeta {
    pub dataset: String,
    #[serde(rename = "R_img")]
    pub r_img: f64,
    pub stage: String,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub meta: RunMeta,
    pub overall: DirectionalMetrics,
    /// `None` for empty partitions.
    pub partitions: BTreeMap<String, Option<DirectionalMetrics>>,
    pub partition_sizes: BTreeMap<String, usize>,
}

impl MetricsReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn partition(&self, name: &str) -> Option<&DirectionalMetrics> {
        if name == "ALL" {
            Some(&self.overall)
        } else {
            self.partitions.get(name).and_then(Option::as_ref)
        }
    }
}

/// Ranks both directions and reports overall and per-partition metrics.
/// `mask1`/`mask2` are the active image masks of the two graphs.
pub fn evaluate(
    emb1: &Tensor,
    emb2: &Tensor,
    test_pairs: &[(usize, usize)],
    mask1: &[bool],
    mask2: &[bool],
    meta: RunMeta,
) -> Result<MetricsReport> {
    let fwd = rank_alignments(emb1, emb2, test_pairs, Direction::Forward)?;
    let bwd = rank_alignments(emb1, emb2, test_pairs, Direction::Backward)?;
    let overall = DirectionalMetrics::from_ranks(&fwd, &bwd)?;
    let parts = ts_partition(test_pairs, mask1, mask2);
    let mut partitions = BTreeMap::new();
    let mut partition_sizes = BTreeMap::new();
    for name in &PARTITIONS[1..] {
        let idx = parts.get(name).expect("known partition");
        partition_sizes.insert(name.to_string(), idx.len());
        let m = if idx.is_empty() {
            None
        } else {
            let f: Vec<usize> = idx.iter().map(|&i| fwd[i]).collect();
            let b: Vec<usize> = idx.iter().map(|&i| bwd[i]).collect();
            Some(DirectionalMetrics::from_ranks(&f, &b)?)
        };
        partitions.insert(name.to_string(), m);
    }
    Ok(MetricsReport {
        meta,
        overall,
        partitions,
        partition_sizes,
    })
}

/// One CSV row per (R_img, stage, direction, partition).
pub fn reports_to_csv(reports: &[MetricsReport]) -> String {
    let mut out =
        String::from("dataset,R_img,stage,seed,direction,partition,count,hits1,hits10,mrr,mr\n");
    for r in reports {
        for dir in [Direction::Forward, Direction::Backward] {
            for name in PARTITIONS {
                let count = if name == "ALL" {
                    r.overall.forward.count
                } else {
                    r.partition_sizes.get(name).copied().unwrap_or(0)
                };
                let _ = write!(
                    out,
                    "{},{},{},{},{},{},{}",
                    r.meta.dataset,
                    r.meta.r_img,
                    r.meta.stage,
                    r.meta.seed,
                    dir.label(),
                    name,
                    count
                );
                match r.partition(name) {
                    Some(m) => {
                        let m = m.direction(dir);
                        let _ = writeln!(out, ",{},{},{},{}", m.hits1, m.hits10, m.mrr, m.mr);
                    }
                    None => out.push_str(",,,,\n"),
                }
            }
        }
    }
    out
}
