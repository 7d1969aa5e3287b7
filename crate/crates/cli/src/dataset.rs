//! Raw and prepared dataset directories.
//!
//! A raw directory holds `kg1/` and `kg2/` (each with `triples.txt`,
//! `attrs.txt`, `mask.txt`, `features.txt`) plus `pairs.txt`. A prepared
//! directory holds the same graph files in canonical form, the seed split
//! as `train_pairs.txt`/`test_pairs.txt`, and `manifest.json`.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use umaea_core::kgdata::{
    format_attrs, format_features, format_mask, format_pairs, format_triples, load_kg_pair,
    load_pairs, load_visual_features, split_seeds, AlignmentSeedSet, KgFiles, Mmkg, SyntheticPair,
};
use umaea_core::trainer::AlignmentTask;
use umaea_core::umvm::SplitManifest;
use umaea_numcore::Tensor;

use crate::config::RunConfig;

pub const MANIFEST: &str = "manifest.json";
const TRAIN_PAIRS: &str = "train_pairs.txt";
const TEST_PAIRS: &str = "test_pairs.txt";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub name: String,
    pub num_entities_kg1: usize,
    pub num_entities_kg2: usize,
    pub num_entities: usize,
    pub num_triples_kg1: usize,
    pub num_triples_kg2: usize,
    pub num_triples: usize,
    pub d_v: usize,
    /// Fraction of all entities holding an image in the raw data.
    pub raw_r_img: f64,
    #[serde(rename = "R_sa")]
    pub r_sa: f64,
    pub seed: u64,
    pub num_train_pairs: usize,
    pub num_test_pairs: usize,
    /// SHA-256 over the canonical data files.
    pub content_hash: String,
}

fn kg_files(dir: &Path) -> KgFiles {
    KgFiles {
        triples: dir.join("triples.txt"),
        attrs: dir.join("attrs.txt"),
        mask: dir.join("mask.txt"),
    }
}

fn graph_texts(kg: &Mmkg, visual: &Tensor) -> [(&'static str, String); 4] {
    [
        ("triples.txt", format_triples(kg)),
        ("attrs.txt", format_attrs(kg)),
        ("mask.txt", format_mask(&kg.image_mask)),
        ("features.txt", format_features(visual)),
    ]
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Writes a raw directory for a synthetic pair.
pub fn write_raw(dir: &Path, syn: &SyntheticPair) -> Result<()> {
    for (side, kg, v) in [
        ("kg1", &syn.kg1, &syn.visual1),
        ("kg2", &syn.kg2, &syn.visual2),
    ] {
        for (name, text) in graph_texts(kg, v) {
            write(&dir.join(side).join(name), &text)?;
        }
    }
    write(&dir.join("pairs.txt"), &format_pairs(&syn.pairs))
}

/// Loads both graphs with their visual features from `kg1`/`kg2` directories.
pub fn load_graphs(kg1: &Path, kg2: &Path) -> Result<(Mmkg, Mmkg, Tensor, Tensor)> {
    let (g1, g2) = load_kg_pair(&kg_files(kg1), &kg_files(kg2))?;
    let v1 = load_visual_features(&kg1.join("features.txt"), &g1)?;
    let v2 = load_visual_features(&kg2.join("features.txt"), &g2)?;
    if v1.cols() != v2.cols() {
        bail!(
            "visual feature widths differ: {} vs {}",
            v1.cols(),
            v2.cols()
        );
    }
    Ok((g1, g2, v1, v2))
}

/// Validates raw inputs, splits the seeds and writes a prepared directory.
pub fn prepare(
    kg1: &Path,
    kg2: &Path,
    pairs: &Path,
    r_sa: f64,
    seed: u64,
    name: &str,
    out: &Path,
) -> Result<DatasetManifest> {
    let (g1, g2, v1, v2) = load_graphs(kg1, kg2)?;
    let all = load_pairs(pairs, &g1, &g2)?;
    let seeds = split_seeds(&all, r_sa, seed.wrapping_add(1))?;

    let mut files: Vec<(PathBuf, String)> = Vec::new();
    for (side, kg, v) in [("kg1", &g1, &v1), ("kg2", &g2, &v2)] {
        for (file, text) in graph_texts(kg, v) {
            files.push((PathBuf::from(side).join(file), text));
        }
    }
    files.push((PathBuf::from(TRAIN_PAIRS), format_pairs(&seeds.train)));
    files.push((PathBuf::from(TEST_PAIRS), format_pairs(&seeds.test)));

    let mut hasher = Sha256::new();
    for (rel, text) in &files {
        hasher.update(rel.to_string_lossy().as_bytes());
        hasher.update([0u8]);
        hasher.update(text.as_bytes());
        hasher.update([0u8]);
        write(&out.join(rel), text)?;
    }
    let total = g1.num_entities + g2.num_entities;
    let manifest = DatasetManifest {
        name: name.to_string(),
        num_entities_kg1: g1.num_entities,
        num_entities_kg2: g2.num_entities,
        num_entities: total,
        num_triples_kg1: g1.triples.len(),
        num_triples_kg2: g2.triples.len(),
        num_triples: g1.triples.len() + g2.triples.len(),
        d_v: v1.cols(),
        raw_r_img: (g1.num_images() + g2.num_images()) as f64 / total as f64,
        r_sa,
        seed,
        num_train_pairs: seeds.train.len(),
        num_test_pairs: seeds.test.len(),
        content_hash: format!("{:x}", hasher.finalize()),
    };
    write(
        &out.join(MANIFEST),
        &serde_json::to_string_pretty(&manifest)?,
    )?;
    Ok(manifest)
}

pub struct PreparedData {
    pub manifest: DatasetManifest,
    pub kg1: Mmkg,
    pub kg2: Mmkg,
    pub visual1: Tensor,
    pub visual2: Tensor,
    pub seeds: AlignmentSeedSet,
}

impl PreparedData {
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST);
        let text = fs::read_to_string(&path)
            .with_context(|| format!("{} is not a prepared dataset", dir.display()))?;
        let manifest: DatasetManifest =
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        let (kg1, kg2, visual1, visual2) = load_graphs(&dir.join("kg1"), &dir.join("kg2"))?;
        let train = load_pairs(&dir.join(TRAIN_PAIRS), &kg1, &kg2)?;
        let test = load_pairs(&dir.join(TEST_PAIRS), &kg1, &kg2)?;
        Ok(Self {
            seeds: AlignmentSeedSet {
                train,
                test,
                seed_ratio: manifest.r_sa,
            },
            manifest,
            kg1,
            kg2,
            visual1,
            visual2,
        })
    }

    /// Active image mask over both graphs: the split's kept entities, or the
    /// raw masks when no split is given.
    pub fn image_mask(&self, split: Option<&SplitManifest>) -> Result<Vec<bool>> {
        let (n1, n2) = (self.kg1.num_entities, self.kg2.num_entities);
        match split {
            Some(s) => {
                let mask = s.joint_mask(n1, n2)?;
                let raw = self.kg1.image_mask.iter().chain(&self.kg2.image_mask);
                if mask.iter().zip(raw).any(|(&m, &r)| m && !r) {
                    bail!("split keeps images for entities that have none");
                }
                Ok(mask)
            }
            None => Ok(self
                .kg1
                .image_mask
                .iter()
                .chain(&self.kg2.image_mask)
                .copied()
                .collect()),
        }
    }

    pub fn task(&self, cfg: &RunConfig, split: Option<&SplitManifest>) -> Result<AlignmentTask> {
        let mask = self.image_mask(split)?;
        let name = split.map_or(self.manifest.name.as_str(), |s| s.dataset_name.as_str());
        Ok(AlignmentTask::new(
            name,
            &self.kg1,
            &self.kg2,
            &self.visual1,
            &self.visual2,
            mask,
            self.seeds.clone(),
            cfg.model.d_r,
            cfg.model.d_a,
            cfg.impute_seed(),
        )?)
    }
}

pub fn load_split(path: &Path) -> Result<SplitManifest> {
    let text =
        fs::read_to_string(path).with_context(|| format!("reading split {}", path.display()))?;
    SplitManifest::from_json(&text).with_context(|| format!("parsing split {}", path.display()))
}
