use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use umaea_core::eval::{reports_to_csv, MetricsReport};
use umaea_core::kgdata::{generate_synthetic_pair, SyntheticConfig};
use umaea_core::model::{Model, ModelConfig};
use umaea_core::trainer::{
    load_stage, run_pipeline, AlignmentTask, StageSelection, LOG_FILE, MANIFEST_FILE, STAGE_DIRS,
};
use umaea_core::umvm::{generate_umvm_split, standard_grid, SplitManifest};

use crate::config::RunConfig;
use crate::dataset::{self, load_split, PreparedData};

/// Resolved config echoed into every training output directory.
pub const RUN_CONFIG: &str = "run.conf";
pub const METRICS: &str = "metrics.json";

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn synth(cfg: &SyntheticConfig, out: &Path) -> Result<()> {
    let syn = generate_synthetic_pair(cfg)?;
    dataset::write_raw(out, &syn)?;
    println!(
        "wrote {} aligned entity pairs to {}",
        syn.pairs.len(),
        out.display()
    );
    Ok(())
}

pub fn prepare(
    kg1: &Path,
    kg2: &Path,
    pairs: &Path,
    r_sa: f64,
    seed: u64,
    name: Option<&str>,
    out: &Path,
) -> Result<()> {
    let name = name.map(str::to_string).unwrap_or_else(|| {
        out.file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "dataset".into())
    });
    let m = dataset::prepare(kg1, kg2, pairs, r_sa, seed, &name, out)?;
    println!(
        "{}: {} entities, {} triples, d_v {}, raw R_img {:.4}, {} train / {} test pairs, hash {}",
        m.name,
        m.num_entities,
        m.num_triples,
        m.d_v,
        m.raw_r_img,
        m.num_train_pairs,
        m.num_test_pairs,
        m.content_hash
    );
    Ok(())
}

pub fn split_file_name(dataset: &str, r_img: f64) -> String {
    format!("{dataset}_rimg_{r_img}.json")
}

/// Writes one split manifest per rate and returns their paths.
pub fn gen_umvm(
    data: &Path,
    dataset: Option<&str>,
    rates: &[f64],
    seed: u64,
    out: &Path,
) -> Result<Vec<PathBuf>> {
    let prepared = PreparedData::load(data)?;
    let name = dataset.unwrap_or(&prepared.manifest.name);
    let mut written = Vec::new();
    for &r in rates {
        let split = generate_umvm_split(
            name,
            &prepared.kg1.image_mask,
            &prepared.kg2.image_mask,
            r,
            seed.wrapping_add(1),
        )?;
        let path = out.join(split_file_name(name, r));
        write(&path, &split.to_json()?)?;
        println!(
            "R_img {r}: kept {} entities (realized {:.6}) -> {}",
            split.kept_entities_kg1.len() + split.kept_entities_kg2.len(),
            split.realized_ratio,
            path.display()
        );
        written.push(path);
    }
    Ok(written)
}

pub fn grid_rates(dataset: &str) -> Result<Vec<f64>> {
    Ok(standard_grid(dataset)?)
}

fn model_config(cfg: &RunConfig, prepared: &PreparedData) -> ModelConfig {
    ModelConfig {
        d_v: prepared.manifest.d_v,
        ..cfg.model.clone()
    }
}

fn load_inputs(cfg: &RunConfig) -> Result<(PreparedData, Option<SplitManifest>, AlignmentTask)> {
    let prepared = PreparedData::load(&cfg.data)?;
    let split = cfg.split.as_deref().map(load_split).transpose()?;
    let task = prepared.task(cfg, split.as_ref())?;
    Ok((prepared, split, task))
}

fn stage_complete(dir: &Path) -> bool {
    dir.join(MANIFEST_FILE).is_file()
}

fn write_metrics(out: &Path, report: &MetricsReport, file: &str) -> Result<()> {
    write(&out.join(file), &report.to_json()?)
}

/// Runs the requested stages and writes checkpoints, logs and one metrics
/// report per completed stage (`metrics_<stage>.json`, the last one also as
/// `metrics.json`).
pub fn train(cfg: &RunConfig, stages: StageSelection, resume: bool) -> Result<MetricsReport> {
    let (prepared, _, task) = load_inputs(cfg)?;
    let train_cfg = cfg.train_config();
    let mut model = Model::new(
        model_config(cfg, &prepared),
        task.n1 + task.n2,
        cfg.init_seed(),
    )?;
    let out = &cfg.out;
    let stage1_dir = out.join(STAGE_DIRS[0]);

    if resume && stage_complete(&out.join(STAGE_DIRS[2])) && stages != StageSelection::One {
        let m = load_stage(&out.join(STAGE_DIRS[2]), &mut model)?;
        println!("{} already complete", m.stage);
        return task
            .evaluate(&model, &m.stage, cfg.seed)
            .map_err(Into::into);
    }

    let mut run = stages;
    let mut promoted = Vec::new();
    if stages == StageSelection::Two || (resume && stages == StageSelection::All) {
        if stage_complete(&stage1_dir) {
            let m = load_stage(&stage1_dir, &mut model)?;
            promoted = m.promoted;
            run = StageSelection::Two;
        } else if stages == StageSelection::Two {
            bail!(
                "stage 2 needs a completed stage-1 checkpoint in {}",
                stage1_dir.display()
            );
        }
    }
    if !resume && run != StageSelection::Two {
        let log = out.join(LOG_FILE);
        if log.exists() {
            fs::remove_file(&log).with_context(|| format!("removing {}", log.display()))?;
        }
    }
    write(&out.join(RUN_CONFIG), &cfg.to_text())?;

    let outcome = run_pipeline(&mut model, &task, &train_cfg, run, Some(out), &promoted)?;
    let Some(last) = outcome.stages.last() else {
        bail!("no stage ran");
    };
    for s in &outcome.stages {
        println!(
            "{}: {} epochs{}, final loss {:.6}",
            s.stage,
            s.epochs_run,
            if s.stopped_early { " (early stop)" } else { "" },
            s.final_loss().unwrap_or(f64::NAN)
        );
    }
    // stage reports are taken from the checkpoints so intermediate stages
    // reflect their own parameters
    let mut report = None;
    for s in &outcome.stages {
        let mut m = Model::new(model_config(cfg, &prepared), task.n1 + task.n2, 0)?;
        load_stage(&out.join(&s.stage), &mut m)?;
        let r = task.evaluate(&m, &s.stage, cfg.seed)?;
        write_metrics(out, &r, &format!("metrics_{}.json", s.stage))?;
        if s.stage == last.stage {
            write_metrics(out, &r, METRICS)?;
            report = Some(r);
        }
    }
    let report = report.expect("last stage evaluated");
    print_summary(&report);
    Ok(report)
}

fn print_summary(r: &MetricsReport) {
    let m = &r.overall.mean;
    println!(
        "{} R_img {:.4} {}: Hits@1 {:.4} Hits@10 {:.4} MRR {:.4} MR {:.2}",
        r.meta.dataset, r.meta.r_img, r.meta.stage, m.hits1, m.hits10, m.mrr, m.mr
    );
}

/// Evaluates a stage checkpoint. The run config defaults to the one echoed
/// next to the checkpoint.
pub fn eval(
    checkpoint: &Path,
    config: Option<&Path>,
    split: Option<&Path>,
    out: &Path,
) -> Result<MetricsReport> {
    if !stage_complete(checkpoint) {
        bail!("{} is not a stage checkpoint", checkpoint.display());
    }
    let config = match config {
        Some(c) => c.to_path_buf(),
        None => checkpoint
            .parent()
            .map(|p| p.join(RUN_CONFIG))
            .context("checkpoint has no parent directory")?,
    };
    let mut cfg = RunConfig::load(&config)?;
    if let Some(s) = split {
        cfg.split = Some(s.to_path_buf());
    }
    let (prepared, _, task) = load_inputs(&cfg)?;
    let mut model = Model::new(model_config(&cfg, &prepared), task.n1 + task.n2, 0)?;
    let manifest = load_stage(checkpoint, &mut model)?;
    let report = task.evaluate(&model, &manifest.stage, cfg.seed)?;
    write(out, &report.to_json()?)?;
    print_summary(&report);
    Ok(report)
}

/// Trains and evaluates one run per (rate, seed) and writes a CSV summary.
pub fn sweep(
    cfg: &RunConfig,
    dataset: Option<&str>,
    rates: &[f64],
    seeds: &[u64],
    out: &Path,
) -> Result<()> {
    let mut reports = Vec::new();
    for &seed in seeds {
        let split_paths = gen_umvm(
            &cfg.data,
            dataset,
            rates,
            seed,
            &out.join("splits").join(format!("seed{seed}")),
        )?;
        for (&r, split) in rates.iter().zip(split_paths) {
            let run = RunConfig {
                split: Some(split),
                out: out.join("runs").join(format!("rimg{r}_seed{seed}")),
                seed,
                ..cfg.clone()
            };
            train(&run, StageSelection::All, false)?;
            for stage in STAGE_DIRS {
                let path = run.out.join(format!("metrics_{stage}.json"));
                if path.is_file() {
                    reports.push(read_report(&path)?);
                }
            }
        }
    }
    let csv = out.join("summary.csv");
    write(&csv, &reports_to_csv(&reports))?;
    println!("{} reports -> {}", reports.len(), csv.display());
    Ok(())
}

fn read_report(path: &Path) -> Result<MetricsReport> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    MetricsReport::from_json(&text).with_context(|| format!("parsing {}", path.display()))
}

fn collect_reports(path: &Path, found: &mut Vec<PathBuf>) -> Result<()> {
    if path.is_dir() {
        let mut entries: Vec<PathBuf> = fs::read_dir(path)
            .with_context(|| format!("listing {}", path.display()))?
            .map(|e| e.map(|e| e.path()))
            .collect::<std::io::Result<_>>()?;
        entries.sort();
        for e in entries {
            if e.is_dir() {
                collect_reports(&e, found)?;
            } else if e
                .file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("metrics_") && n.ends_with(".json"))
            {
                found.push(e);
            }
        }
    } else if path.is_file() {
        found.push(path.to_path_buf());
    } else {
        bail!("{} does not exist", path.display());
    }
    Ok(())
}

/// Merges report files (directories are searched for `metrics_*.json`) into
/// one CSV.
pub fn report(runs: &[PathBuf], csv: &Path) -> Result<usize> {
    let mut files = Vec::new();
    for r in runs {
        collect_reports(r, &mut files)?;
    }
    if files.is_empty() {
        bail!("no metrics reports found");
    }
    let reports = files
        .iter()
        .map(|p| read_report(p))
        .collect::<Result<Vec<_>>>()?;
    write(csv, &reports_to_csv(&reports))?;
    println!("{} reports -> {}", reports.len(), csv.display());
    Ok(reports.len())
}
