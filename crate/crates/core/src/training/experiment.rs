//! The repetition-grid experiment: a (block kind × preprocessing) matrix of
//! independently seeded training runs, summarized as CSV + JSON.
//!
//! Configs are flat `key = value` text with `#` comments. Every run's seed
//! derives from (base seed, grid cell, repetition), so results are identical
//! no matter how many worker threads execute the grid.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde_json::json;

use crate::audio::Normalize;
use crate::datasets::{
    load_esc10, load_urbansound8k, make_split, synthetic_dataset, DatasetKind, DatasetSpec,
};
use crate::error::{Error, Result};
use crate::fsio::atomic_write;
use crate::layers::Rank;
use crate::model::{ArchPlan, Network, StagePlan};
use crate::resblocks::BlockKind;
use crate::rng::Rng;

use super::{prepare_split_data, train, Hyper, Preproc, SplitData};

/// Architecture overrides for desk-scale runs. Absent fields fall back to
/// the full-scale plans. Pool entries of 0 mean "no pool"; 2D stems pool
/// only the time axis while 2D stages pool both axes.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ArchOverrides {
    pub stage_widths: Option<Vec<usize>>,
    pub stage_depths: Option<Vec<usize>>,
    pub stage_pools: Option<Vec<usize>>,
    pub stem_filters: Option<usize>,
    pub stem_kernel: Option<usize>,
    pub stem_stride: Option<usize>,
    pub stem_pool: Option<usize>,
}

impl ArchOverrides {
    pub fn is_empty(&self) -> bool {
        *self == ArchOverrides::default()
    }
}

/// Parameters for generating a synthetic corpus in place of a real dataset.
#[derive(Debug, Clone)]
pub struct SynthParams {
    pub classes: usize,
    pub clips_per_class: usize,
    pub folds: u32,
}

impl Default for SynthParams {
    fn default() -> Self {
        SynthParams { classes: 10, clips_per_class: 10, folds: 5 }
    }
}

/// A fully resolved experiment description.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub dataset: DatasetKind,
    pub root: PathBuf,
    pub rb_kinds: Vec<BlockKind>,
    pub preprocs: Vec<Preproc>,
    pub repetitions: usize,
    pub seed: u64,
    pub strict_holdout: bool,
    pub clip_seconds: Option<f64>,
    pub hyper: Hyper,
    pub arch: ArchOverrides,
    pub synth: SynthParams,
}

impl ExperimentConfig {
    /// Parses flat `key = value` config text. `#` starts a comment, blank
    /// lines are skipped, unknown or repeated keys are errors.
    pub fn parse(text: &str) -> Result<ExperimentConfig> {
        let mut seen = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected key = value, got '{line}'", lineno + 1))
            })?;
            let key = key.trim().to_string();
            let value = value.trim().to_string();
            if seen.insert(key.clone(), value).is_some() {
                return Err(Error::Config(format!("line {}: duplicate key '{key}'", lineno + 1)));
            }
        }
        Self::from_pairs(&seen)
    }

    pub fn from_file(path: &Path) -> Result<ExperimentConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    fn from_pairs(pairs: &BTreeMap<String, String>) -> Result<ExperimentConfig> {
        let get = |key: &str| pairs.get(key).map(String::as_str);
        let bad = |key: &str, value: &str, what: &str| {
            Error::Config(format!("key '{key}': cannot parse '{value}' as {what}"))
        };

        let known = [
            "dataset", "root", "rb_kinds", "preprocessing", "repetitions", "seed", "epochs",
            "batch_size", "lr", "lambda", "l2_all", "min_delta", "patience_lr", "patience_stop",
            "strict_holdout", "clip_seconds", "stage_widths", "stage_depths", "stage_pools",
            "stem_filters", "stem_kernel", "stem_stride", "stem_pool", "synth_classes",
            "synth_clips_per_class", "synth_folds",
        ];
        for key in pairs.keys() {
            if !known.contains(&key.as_str()) {
                return Err(Error::Config(format!("unknown key '{key}'")));
            }
        }

        let dataset = match get("dataset") {
            Some("synthetic") => DatasetKind::Synthetic,
            Some("urbansound8k") => DatasetKind::UrbanSound8k,
            Some("esc10") => DatasetKind::Esc10,
            Some(other) => return Err(Error::Config(format!("unknown dataset '{other}'"))),
            None => return Err(Error::Config("missing required key 'dataset'".into())),
        };
        let root = PathBuf::from(
            get("root").ok_or_else(|| Error::Config("missing required key 'root'".into()))?,
        );

        let parse_usize = |key: &str, default: usize| -> Result<usize> {
            match get(key) {
                Some(v) => v.parse().map_err(|_| bad(key, v, "an integer")),
                None => Ok(default),
            }
        };
        let parse_f64 = |key: &str, default: f64| -> Result<f64> {
            match get(key) {
                Some(v) => v.parse().map_err(|_| bad(key, v, "a number")),
                None => Ok(default),
            }
        };
        let parse_bool = |key: &str, default: bool| -> Result<bool> {
            match get(key) {
                Some("true") => Ok(true),
                Some("false") => Ok(false),
                Some(v) => Err(bad(key, v, "true or false")),
                None => Ok(default),
            }
        };
        let parse_list = |key: &str| -> Result<Option<Vec<usize>>> {
            match get(key) {
                Some(v) => v
                    .split(',')
                    .map(|p| p.trim().parse::<usize>().map_err(|_| bad(key, v, "integers")))
                    .collect::<Result<Vec<_>>>()
                    .map(Some),
                None => Ok(None),
            }
        };

        let rb_kinds = match get("rb_kinds") {
            Some(v) => v
                .split(',')
                .map(|p| p.trim().parse::<BlockKind>())
                .collect::<Result<Vec<_>>>()?,
            None => BlockKind::all().to_vec(),
        };
        let preprocs = match get("preprocessing") {
            Some(v) => v
                .split(',')
                .map(|p| p.trim().parse::<Preproc>())
                .collect::<Result<Vec<_>>>()?,
            None => vec![Preproc::Raw(Normalize::None)],
        };
        if rb_kinds.is_empty() || preprocs.is_empty() {
            return Err(Error::Config("rb_kinds and preprocessing must be non-empty".into()));
        }

        let hyper = Hyper {
            lr: parse_f64("lr", 1e-3)?,
            batch_size: parse_usize("batch_size", 128)?,
            max_epochs: parse_usize("epochs", 400)?,
            lambda: parse_f64("lambda", 1e-4)?,
            l2_all: parse_bool("l2_all", false)?,
            min_delta: parse_f64("min_delta", 1e-4)?,
            patience_lr: parse_usize("patience_lr", 15)?,
            patience_stop: parse_usize("patience_stop", 50)?,
        };

        let single = |key: &str| -> Result<Option<usize>> {
            Ok(parse_list(key)?.map(|mut v| if v.len() == 1 { v.remove(0) } else { usize::MAX }))
        };
        for key in ["stem_filters", "stem_kernel", "stem_stride", "stem_pool"] {
            if single(key)? == Some(usize::MAX) {
                return Err(Error::Config(format!("key '{key}' takes a single integer")));
            }
        }
        let arch = ArchOverrides {
            stage_widths: parse_list("stage_widths")?,
            stage_depths: parse_list("stage_depths")?,
            stage_pools: parse_list("stage_pools")?,
            stem_filters: single("stem_filters")?,
            stem_kernel: single("stem_kernel")?,
            stem_stride: single("stem_stride")?,
            stem_pool: single("stem_pool")?,
        };

        Ok(ExperimentConfig {
            dataset,
            root,
            rb_kinds,
            preprocs,
            repetitions: parse_usize("repetitions", 10)?,
            seed: parse_usize("seed", 1234)? as u64,
            strict_holdout: parse_bool("strict_holdout", false)?,
            clip_seconds: match get("clip_seconds") {
                Some(v) => Some(v.parse().map_err(|_| bad("clip_seconds", v, "a number"))?),
                None => None,
            },
            hyper,
            arch,
            synth: SynthParams {
                classes: parse_usize("synth_classes", 10)?,
                clips_per_class: parse_usize("synth_clips_per_class", 10)?,
                folds: parse_usize("synth_folds", 5)? as u32,
            },
        })
    }

    /// Canonical `key = value` rendering of every effective setting; the
    /// config hash is computed over this text, so two configs that resolve
    /// identically hash identically.
    pub fn canonical(&self) -> String {
        let mut lines = vec![
            format!("dataset = {}", self.dataset),
            format!("root = {}", self.root.display()),
            format!(
                "rb_kinds = {}",
                self.rb_kinds.iter().map(|k| k.to_string()).collect::<Vec<_>>().join(",")
            ),
            format!(
                "preprocessing = {}",
                self.preprocs.iter().map(|p| p.to_string()).collect::<Vec<_>>().join(",")
            ),
            format!("repetitions = {}", self.repetitions),
            format!("seed = {}", self.seed),
            format!("strict_holdout = {}", self.strict_holdout),
            format!("clip_seconds = {}", self.effective_clip_seconds()),
            format!("lr = {}", self.hyper.lr),
            format!("batch_size = {}", self.hyper.batch_size),
            format!("epochs = {}", self.hyper.max_epochs),
            format!("lambda = {}", self.hyper.lambda),
            format!("l2_all = {}", self.hyper.l2_all),
            format!("min_delta = {}", self.hyper.min_delta),
            format!("patience_lr = {}", self.hyper.patience_lr),
            format!("patience_stop = {}", self.hyper.patience_stop),
        ];
        let fmt_list = |v: &Vec<usize>| {
            v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
        };
        if let Some(v) = &self.arch.stage_widths {
            lines.push(format!("stage_widths = {}", fmt_list(v)));
        }
        if let Some(v) = &self.arch.stage_depths {
            lines.push(format!("stage_depths = {}", fmt_list(v)));
        }
        if let Some(v) = &self.arch.stage_pools {
            lines.push(format!("stage_pools = {}", fmt_list(v)));
        }
        for (key, v) in [
            ("stem_filters", self.arch.stem_filters),
            ("stem_kernel", self.arch.stem_kernel),
            ("stem_stride", self.arch.stem_stride),
            ("stem_pool", self.arch.stem_pool),
        ] {
            if let Some(v) = v {
                lines.push(format!("{key} = {v}"));
            }
        }
        if self.dataset == DatasetKind::Synthetic {
            lines.push(format!("synth_classes = {}", self.synth.classes));
            lines.push(format!("synth_clips_per_class = {}", self.synth.clips_per_class));
            lines.push(format!("synth_folds = {}", self.synth.folds));
        }
        lines.join("\n") + "\n"
    }

    fn effective_clip_seconds(&self) -> f64 {
        self.clip_seconds.unwrap_or(match self.dataset {
            DatasetKind::Esc10 => 5.0,
            _ => 4.0,
        })
    }

    /// Loads (or, for the synthetic kind, generates) the dataset.
    pub fn load_dataset(&self) -> Result<DatasetSpec> {
        match self.dataset {
            DatasetKind::Synthetic => {
                let mut spec = synthetic_dataset(
                    &self.root,
                    self.seed,
                    self.synth.classes,
                    self.synth.clips_per_class,
                    self.effective_clip_seconds(),
                    self.synth.folds,
                )?;
                spec.clip_seconds = self.effective_clip_seconds();
                Ok(spec)
            }
            DatasetKind::UrbanSound8k => {
                let meta_dir = self.root.join("metadata");
                let mut csvs: Vec<PathBuf> = std::fs::read_dir(&meta_dir)
                    .map_err(|_| {
                        Error::Dataset(format!(
                            "dataset root not usable: {} has no metadata directory",
                            self.root.display()
                        ))
                    })?
                    .filter_map(|e| e.ok().map(|e| e.path()))
                    .filter(|p| p.extension().is_some_and(|x| x == "csv"))
                    .collect();
                csvs.sort();
                let csv = csvs.first().ok_or_else(|| {
                    Error::Dataset(format!("no metadata CSV under {}", meta_dir.display()))
                })?;
                let mut spec = load_urbansound8k(csv)?;
                if let Some(s) = self.clip_seconds {
                    spec.clip_seconds = s;
                }
                Ok(spec)
            }
            DatasetKind::Esc10 => {
                let audio_dir = self.root.join("audio");
                let dir = if audio_dir.is_dir() { audio_dir } else { self.root.clone() };
                if !dir.is_dir() {
                    return Err(Error::Dataset(format!(
                        "dataset root not usable: {} is not a directory",
                        dir.display()
                    )));
                }
                let mut spec = load_esc10(&dir)?;
                if let Some(s) = self.clip_seconds {
                    spec.clip_seconds = s;
                }
                Ok(spec)
            }
        }
    }

    /// Builds the architecture plan for one preprocessing mode: the
    /// full-scale plan unless overrides are present.
    pub fn plan(&self, preproc: Preproc, n_classes: usize) -> Result<ArchPlan> {
        let input_length = (self.effective_clip_seconds() * 8000.0).round() as usize;
        let frames = 1 + input_length / 160;
        if self.arch.is_empty() {
            return match preproc.rank() {
                Rank::One => ArchPlan::m34(input_length, n_classes),
                Rank::Two => ArchPlan::slim2d(64, frames, n_classes),
            };
        }

        let widths = self.arch.stage_widths.clone().unwrap_or(vec![48, 96, 192, 384]);
        let depths = match preproc.rank() {
            Rank::One => vec![3, 4, 6, 3],
            Rank::Two => vec![1, 2, 3, 1],
        };
        let depths = self.arch.stage_depths.clone().unwrap_or(depths);
        if widths.len() != depths.len() {
            return Err(Error::Config(format!(
                "stage_widths has {} entries but stage_depths has {}",
                widths.len(),
                depths.len()
            )));
        }
        let pools = match &self.arch.stage_pools {
            Some(p) => {
                if p.len() != widths.len() {
                    return Err(Error::Config(format!(
                        "stage_pools has {} entries but stage_widths has {}",
                        p.len(),
                        widths.len()
                    )));
                }
                p.clone()
            }
            None => match preproc.rank() {
                Rank::One => {
                    let mut p = vec![4; widths.len()];
                    if let Some(last) = p.last_mut() {
                        *last = 0;
                    }
                    p
                }
                Rank::Two => vec![4; widths.len()],
            },
        };

        let stem_kernel = self.arch.stem_kernel.unwrap_or(80);
        let stem_stride = self.arch.stem_stride.unwrap_or(4);
        let stem_pool = self.arch.stem_pool.unwrap_or(4);
        let stem_filters = self.arch.stem_filters.unwrap_or(widths[0]);

        let (input_extent, stem_kernel, stem_stride, stem_pool) = match preproc.rank() {
            Rank::One => (
                vec![input_length],
                vec![stem_kernel],
                vec![stem_stride],
                (stem_pool > 0).then(|| vec![stem_pool]),
            ),
            Rank::Two => (
                vec![64, frames],
                vec![1, stem_kernel],
                vec![1, stem_stride],
                (stem_pool > 0).then(|| vec![1, stem_pool]),
            ),
        };
        let stages = widths
            .iter()
            .zip(&depths)
            .zip(&pools)
            .map(|((&width, &depth), &pool)| StagePlan {
                width,
                depth,
                pool: (pool > 0).then(|| match preproc.rank() {
                    Rank::One => vec![pool],
                    Rank::Two => vec![pool, pool],
                }),
            })
            .collect();

        let plan = ArchPlan {
            rank: preproc.rank(),
            input_extent,
            in_channels: 1,
            stem_filters,
            stem_kernel,
            stem_stride,
            stem_pool,
            stages,
            n_classes,
        };
        plan.validate()?;
        Ok(plan)
    }
}

/// FNV-1a hash of the canonical config text, as 16 hex digits.
pub fn config_hash(cfg: &ExperimentConfig) -> String {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for byte in cfg.canonical().bytes() {
        h ^= byte as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    format!("{h:016x}")
}

/// One grid entry's result: `accuracy` is `None` when that repetition
/// failed, with the failure preserved in `error`.
#[derive(Debug, Clone)]
pub struct RunRecord {
    pub rb: BlockKind,
    pub preproc: Preproc,
    pub repetition: usize,
    pub accuracy: Option<f64>,
    pub epochs: usize,
    pub error: Option<String>,
}

/// Per-cell aggregate over successful repetitions. Cells with fewer than
/// two successes are flagged unusable for significance analysis.
#[derive(Debug, Clone)]
pub struct CellSummary {
    pub rb: BlockKind,
    pub preproc: Preproc,
    pub successes: usize,
    pub mean: Option<f64>,
    pub std: Option<f64>,
    pub usable: bool,
}

/// Everything an experiment produced, already persisted under the output
/// directory as `results.csv` and `summary.json`.
#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub records: Vec<RunRecord>,
    pub cells: Vec<CellSummary>,
    pub config_hash: String,
    pub deviations: Vec<String>,
}

/// Runs the full grid with up to `jobs` worker threads and writes
/// `results.csv` + `summary.json` into `out_dir`. Results are byte-stable
/// across reruns and worker counts for a fixed config.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    out_dir: &Path,
    jobs: usize,
) -> Result<ExperimentOutput> {
    let spec = cfg.load_dataset()?;
    let split = make_split(&spec, cfg.strict_holdout)?;

    // Frontend work is shared across every cell of a preprocessing mode.
    let mut prepared: Vec<SplitData> = Vec::new();
    for &preproc in &cfg.preprocs {
        prepared.push(prepare_split_data(&spec, &split, preproc)?);
    }

    struct Task {
        rb_idx: usize,
        preproc_idx: usize,
        repetition: usize,
    }
    let mut tasks = Vec::new();
    for (preproc_idx, _) in cfg.preprocs.iter().enumerate() {
        for (rb_idx, _) in cfg.rb_kinds.iter().enumerate() {
            for repetition in 0..cfg.repetitions {
                tasks.push(Task { rb_idx, preproc_idx, repetition });
            }
        }
    }

    let queue = Mutex::new(tasks);
    let results: Mutex<Vec<RunRecord>> = Mutex::new(Vec::new());
    let n_classes = spec.n_classes;
    let workers = jobs.max(1);
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let task = match queue.lock().unwrap().pop() {
                    Some(t) => t,
                    None => break,
                };
                let rb = cfg.rb_kinds[task.rb_idx];
                let preproc = cfg.preprocs[task.preproc_idx];
                let run_seed = Rng::new(cfg.seed)
                    .derive(&[2, task.rb_idx as u64, task.preproc_idx as u64, task.repetition as u64])
                    .next_u64();
                let outcome = cfg.plan(preproc, n_classes).and_then(|plan| {
                    let mut net =
                        Network::build(plan, rb, &mut Rng::new(run_seed).derive(&[0]))?;
                    train(&mut net, &prepared[task.preproc_idx], &cfg.hyper, run_seed)
                });
                let record = match outcome {
                    Ok(out) => RunRecord {
                        rb,
                        preproc,
                        repetition: task.repetition,
                        accuracy: Some(out.test_accuracy),
                        epochs: out.epochs,
                        error: None,
                    },
                    Err(e) => RunRecord {
                        rb,
                        preproc,
                        repetition: task.repetition,
                        accuracy: None,
                        epochs: 0,
                        error: Some(e.to_string()),
                    },
                };
                results.lock().unwrap().push(record);
            });
        }
    });

    let mut records = results.into_inner().unwrap();
    records.sort_by_key(|r| {
        let preproc_idx = cfg.preprocs.iter().position(|&p| p == r.preproc).unwrap();
        let rb_idx = cfg.rb_kinds.iter().position(|&k| k == r.rb).unwrap();
        (preproc_idx, rb_idx, r.repetition)
    });

    let mut cells = Vec::new();
    for &preproc in &cfg.preprocs {
        for &rb in &cfg.rb_kinds {
            let accs: Vec<f64> = records
                .iter()
                .filter(|r| r.rb == rb && r.preproc == preproc)
                .filter_map(|r| r.accuracy)
                .collect();
            let n = accs.len();
            let mean = (n > 0).then(|| accs.iter().sum::<f64>() / n as f64);
            let std = (n > 1).then(|| {
                let m = mean.unwrap();
                (accs.iter().map(|a| (a - m) * (a - m)).sum::<f64>() / (n - 1) as f64).sqrt()
            });
            cells.push(CellSummary { rb, preproc, successes: n, mean, std, usable: n >= 2 });
        }
    }

    let hash = config_hash(cfg);
    std::fs::create_dir_all(out_dir)?;
    atomic_write(&out_dir.join("results.csv"), render_results_csv(&records).as_bytes())?;
    let summary = render_summary_json(cfg, &hash, &spec.deviations, &cells, &records)?;
    atomic_write(&out_dir.join("summary.json"), summary.as_bytes())?;

    Ok(ExperimentOutput { records, cells, config_hash: hash, deviations: spec.deviations })
}

/// CSV schema: `rb,preproc,rep,accuracy,epochs`, accuracies as fractions;
/// failed repetitions leave the accuracy field empty.
pub fn render_results_csv(records: &[RunRecord]) -> String {
    let mut out = String::from("rb,preproc,rep,accuracy,epochs\n");
    for r in records {
        let acc = r.accuracy.map(|a| a.to_string()).unwrap_or_default();
        out.push_str(&format!("{},{},{},{},{}\n", r.rb, r.preproc, r.repetition, acc, r.epochs));
    }
    out
}

fn render_summary_json(
    cfg: &ExperimentConfig,
    hash: &str,
    deviations: &[String],
    cells: &[CellSummary],
    records: &[RunRecord],
) -> Result<String> {
    let cell_values: Vec<serde_json::Value> = cells
        .iter()
        .map(|c| {
            json!({
                "rb": c.rb.to_string(),
                "preproc": c.preproc.to_string(),
                "successes": c.successes,
                "mean_pct": c.mean.map(|m| m * 100.0),
                "std_pct": c.std.map(|s| s * 100.0),
                "usable_for_stats": c.usable,
            })
        })
        .collect();
    let failures: Vec<serde_json::Value> = records
        .iter()
        .filter_map(|r| {
            r.error.as_ref().map(|e| {
                json!({
                    "rb": r.rb.to_string(),
                    "preproc": r.preproc.to_string(),
                    "rep": r.repetition,
                    "error": e,
                })
            })
        })
        .collect();
    let value = json!({
        "config": cfg.canonical(),
        "config_hash": hash,
        "dataset_deviations": deviations,
        "cells": cell_values,
        "failures": failures,
    });
    serde_json::to_string_pretty(&value)
        .map_err(|e| Error::Config(format!("summary serialization: {e}")))
}
