//! Benchmark variants with a controlled share of entities holding images.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const BASE_GRID: [f64; 10] = [0.05, 0.1, 0.15, 0.2, 0.3, 0.4, 0.45, 0.5, 0.55, 0.6];

/// Names accepted by [`standard_grid`], in table order.
pub const STANDARD_DATASETS: [&str; 7] = [
    "DBP15K_ZH-EN",
    "DBP15K_JA-EN",
    "DBP15K_FR-EN",
    "OpenEA_EN-FR",
    "OpenEA_EN-DE",
    "OpenEA_D-W-V1",
    "OpenEA_D-W-V2",
];

/// Which entities keep their image in one benchmark variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub dataset_name: String,
    #[serde(rename = "R_img")]
    pub r_img: f64,
    pub rng_seed: u64,
    pub kept_entities_kg1: Vec<usize>,
    pub kept_entities_kg2: Vec<usize>,
    pub realized_ratio: f64,
}

impl SplitManifest {
    /// Joint availability mask (KG1 entities first).
    pub fn joint_mask(&self, n1: usize, n2: usize) -> Result<Vec<bool>> {
        let mut mask = vec![false; n1 + n2];
        for &e in &self.kept_entities_kg1 {
            if e >= n1 {
                return Err(Error::Invalid(format!(
                    "manifest keeps KG1 entity {e} >= {n1}"
                )));
            }
            mask[e] = true;
        }
        for &e in &self.kept_entities_kg2 {
            if e >= n2 {
                return Err(Error::Invalid(format!(
                    "manifest keeps KG2 entity {e} >= {n2}"
                )));
            }
            mask[n1 + e] = true;
        }
        Ok(mask)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Raw image availability of a published dataset, when known.
pub fn dataset_std(name: &str) -> Option<f64> {
    match name {
        "DBP15K_ZH-EN" => Some(0.7829),
        "DBP15K_JA-EN" => Some(0.7032),
        "DBP15K_FR-EN" => Some(0.6758),
        "OpenEA_EN-FR" | "OpenEA_EN-DE" | "OpenEA_D-W-V1" | "OpenEA_D-W-V2" => Some(1.0),
        _ => None,
    }
}

/// The R_img values evaluated for `name`, ending at its raw availability.
pub fn standard_grid(name: &str) -> Result<Vec<f64>> {
    let tail: &[f64] = match name {
        "DBP15K_ZH-EN" => &[0.7, 0.75, 0.7829],
        "DBP15K_JA-EN" => &[0.7, 0.7032],
        "DBP15K_FR-EN" => &[0.6758],
        "OpenEA_EN-FR" | "OpenEA_EN-DE" | "OpenEA_D-W-V1" | "OpenEA_D-W-V2" => {
            &[0.7, 0.8, 0.9, 0.95, 1.0]
        }
        _ => return Err(Error::UnknownDataset(name.to_string())),
    };
    Ok(BASE_GRID.iter().chain(tail).copied().collect())
}

/// Keeps images for exactly `floor(r_img · total)` entities, drawn uniformly
/// without replacement from the current holders across both graphs.
pub fn generate_umvm_split(
    dataset_name: &str,
    raw_mask1: &[bool],
    raw_mask2: &[bool],
    r_img: f64,
    rng_seed: u64,
) -> Result<SplitManifest> {
    let total = raw_mask1.len() + raw_mask2.len();
    if total == 0 {
        return Err(Error::Invalid("no entities to split".into()));
    }
    if !(r_img >= 0.0 && r_img.is_finite()) {
        return Err(Error::Invalid(format!(
            "R_img must be non-negative, got {r_img}"
        )));
    }
    let holders: Vec<usize> = raw_mask1
        .iter()
        .chain(raw_mask2)
        .enumerate()
        .filter_map(|(i, &m)| m.then_some(i))
        .collect();
    let raw_ratio = holders.len() as f64 / total as f64;
    let max = dataset_std(dataset_name).map_or(raw_ratio, |s| s.min(raw_ratio));
    if r_img > max + 1e-9 {
        return Err(Error::RateAboveAvailability {
            requested: r_img,
            max: dataset_std(dataset_name).unwrap_or(raw_ratio),
            dataset: dataset_name.to_string(),
        });
    }
    let keep = ((r_img * total as f64 + 1e-9).floor() as usize).min(holders.len());
    let mut chosen = holders;
    chosen.shuffle(&mut ChaCha8Rng::seed_from_u64(rng_seed));
    chosen.truncate(keep);
    chosen.sort_unstable();
    let n1 = raw_mask1.len();
    let (kg1, kg2): (Vec<usize>, Vec<usize>) = chosen.iter().partition(|&&i| i < n1);
    Ok(SplitManifest {
        dataset_name: dataset_name.to_string(),
        r_img,
        rng_seed,
        kept_entities_kg1: kg1,
        kept_entities_kg2: kg2.into_iter().map(|i| i - n1).collect(),
        realized_ratio: keep as f64 / total as f64,
    })
}
