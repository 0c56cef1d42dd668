//! `rawres` — the command-line surface: parameter ledgers, feature dumps,
//! single training runs, checkpoint evaluation, the repetition-grid
//! experiment, significance analysis, and synthetic corpus generation.
//!
//! Exit codes: 0 success, 2 usage or configuration error, 3 environment or
//! data error (missing files, undecodable audio, malformed CSV), 4
//! numerical failure (non-finite values, aborted runs, unusable statistics
//! input). The `RAWRES_THREADS` environment variable caps `--jobs`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use rawres_core::audio::{fit_length, load_wav, log_mel, normalize, resample};
use rawres_core::error::{Error, Result};
use rawres_core::fsio::atomic_write;
use rawres_core::model::{load_checkpoint, save_checkpoint, ArchPlan, Network};
use rawres_core::resblocks::BlockKind;
use rawres_core::rng::Rng;
use rawres_core::stats::{
    matching_matrix, render_matching_csv, render_matching_text, render_matrix_csv,
    render_text_grid, tukey_kramer, SignificanceMatrix,
};
use rawres_core::datasets::make_split;
use rawres_core::training::{
    config_hash, evaluate, prepare_split_data, run_experiment, train_with_hook,
    ExperimentConfig, Preproc, TrainOutcome,
};

#[derive(Parser)]
#[command(
    name = "rawres",
    version,
    about = "Residual-block raw-audio classification workbench"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the per-layer parameter ledger for an architecture.
    #[command(name = "param-count")]
    ParamCount(ParamCountArgs),
    /// Decode a WAV clip and dump the preprocessed network input.
    Features(FeaturesArgs),
    /// Train one network on the dataset described by a config file.
    Train(TrainArgs),
    /// Evaluate a saved checkpoint on a dataset's test fold.
    Evaluate(EvaluateArgs),
    /// Run the (block kind x preprocessing x repetition) grid.
    Experiment(ExperimentArgs),
    /// ANOVA + all-pairs significance analysis over a results CSV.
    Stats(StatsArgs),
    /// Generate a labeled synthetic tone corpus.
    Synth(SynthArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Arch {
    M34res,
    Slim2d,
}

#[derive(Args)]
struct ParamCountArgs {
    /// Network family.
    #[arg(long, value_enum)]
    arch: Arch,
    /// Residual block kind, RB1 through RB6.
    #[arg(long)]
    rb: String,
    /// Number of output classes.
    #[arg(long, default_value_t = 10)]
    classes: usize,
    /// Nominal clip length in seconds at 8 kHz (totals do not depend on it).
    #[arg(long, default_value_t = 4.0)]
    seconds: f64,
    /// Also write the ledger as CSV here.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Accepted for interface uniformity; this command uses no randomness.
    #[arg(long = "seed", default_value_t = 1234)]
    _seed: u64,
}

#[derive(Args)]
struct FeaturesArgs {
    /// Input WAV file.
    #[arg(long)]
    input: PathBuf,
    /// Preprocessing mode: none, scale_max, standardize, or logmel.
    #[arg(long, default_value = "logmel")]
    preproc: String,
    /// Clip length in seconds after resampling to 8 kHz.
    #[arg(long, default_value_t = 4.0)]
    seconds: f64,
    /// Write the features as CSV here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Accepted for interface uniformity; this command uses no randomness.
    #[arg(long = "seed", default_value_t = 1234)]
    _seed: u64,
}

#[derive(Args)]
struct TrainArgs {
    /// Experiment config file (flat key = value lines).
    #[arg(long)]
    config: PathBuf,
    /// Residual block kind to train.
    #[arg(long)]
    rb: String,
    /// Preprocessing mode.
    #[arg(long, default_value = "none")]
    preproc: String,
    /// Output directory for checkpoints and the epoch trace.
    #[arg(long, default_value = "train-out")]
    out: PathBuf,
    /// Overrides the config's base seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Checkpoint written by `train`.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Experiment config naming the dataset.
    #[arg(long)]
    config: PathBuf,
    /// Preprocessing mode; must match the training run.
    #[arg(long, default_value = "none")]
    preproc: String,
    /// Also write `accuracy,<fraction>` here.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the config's base seed (affects synthetic corpora).
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct ExperimentArgs {
    /// Experiment config file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory for results.csv and summary.json.
    #[arg(long, default_value = "experiment-out")]
    out: PathBuf,
    /// Worker threads for grid cells (capped by RAWRES_THREADS).
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Overrides the config's base seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct StatsArgs {
    /// Results CSV written by `experiment`.
    #[arg(long)]
    results: PathBuf,
    /// Second results CSV; adds the cross-run matching classification.
    #[arg(long)]
    results2: Option<PathBuf>,
    /// Significance level for the all-pairs comparison.
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Directory for the machine-readable CSVs (grids print to stdout).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Accepted for interface uniformity; the analysis is deterministic.
    #[arg(long = "seed", default_value_t = 1234)]
    _seed: u64,
}

#[derive(Args)]
struct SynthArgs {
    /// Corpus root; audio/ and metadata/ are created inside.
    #[arg(long)]
    out: PathBuf,
    /// Generator seed; the corpus is byte-deterministic in it.
    #[arg(long, default_value_t = 1234)]
    seed: u64,
    /// Number of classes.
    #[arg(long, default_value_t = 10)]
    classes: usize,
    /// Clips per class.
    #[arg(long = "clips-per-class", default_value_t = 10)]
    clips_per_class: usize,
    /// Clip length in seconds.
    #[arg(long, default_value_t = 4.0)]
    seconds: f64,
    /// Number of folds the clips cycle through.
    #[arg(long, default_value_t = 5)]
    folds: u32,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::InvalidArg(_) | Error::Config(_) | Error::Shape(_) | Error::Layer(_) => 2,
        Error::Io(_)
        | Error::Audio(_)
        | Error::Dataset(_)
        | Error::Csv(_)
        | Error::Checkpoint { .. } => 3,
        Error::NonFinite(_) | Error::Training(_) | Error::Stats(_) => 4,
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::ParamCount(args) => cmd_param_count(args),
        Command::Features(args) => cmd_features(args),
        Command::Train(args) => cmd_train(args),
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::Experiment(args) => cmd_experiment(args),
        Command::Stats(args) => cmd_stats(args),
        Command::Synth(args) => cmd_synth(args),
    }
}

fn cmd_param_count(args: ParamCountArgs) -> Result<()> {
    let rb: BlockKind = args.rb.parse()?;
    let samples = (args.seconds * 8000.0).round() as usize;
    let plan = match args.arch {
        Arch::M34res => ArchPlan::m34(samples, args.classes)?,
        Arch::Slim2d => ArchPlan::slim2d(64, 1 + samples / 160, args.classes)?,
    };
    let ledger = plan.ledger(rb)?;

    let name_w = ledger.rows.iter().map(|r| r.name.len()).max().unwrap_or(5).max(5);
    println!("{:<name_w$}  {:>10}  {:>13}", "layer", "trainable", "non-trainable");
    for row in &ledger.rows {
        println!("{:<name_w$}  {:>10}  {:>13}", row.name, row.trainable, row.non_trainable);
    }
    println!("{:<name_w$}  {:>10}  {:>13}", "total", ledger.trainable(), ledger.non_trainable());
    println!("total parameters: {}", ledger.total());

    if let Some(out) = &args.out {
        atomic_write(out, ledger.to_csv().as_bytes())?;
    }
    Ok(())
}

fn cmd_features(args: FeaturesArgs) -> Result<()> {
    let preproc: Preproc = args.preproc.parse()?;
    let clip = load_wav(&args.input)?;
    let clip = resample(&clip, 8000)?;
    let clip = fit_length(&clip, args.seconds);

    let csv = match preproc {
        Preproc::LogMel => {
            let spec = log_mel(&clip)?;
            eprintln!("log-mel features: {} x {}", spec.n_mels(), spec.frames());
            let frames = spec.frames();
            let data = spec.values.data();
            let mut out = String::new();
            for m in 0..spec.n_mels() {
                let row: Vec<String> =
                    (0..frames).map(|t| data[m * frames + t].to_string()).collect();
                out.push_str(&row.join(","));
                out.push('\n');
            }
            out
        }
        Preproc::Raw(mode) => {
            let mut samples = clip.samples;
            if normalize(&mut samples, mode) {
                eprintln!("note: degenerate clip (all-zero or constant); emitted as zeros");
            }
            eprintln!("raw samples: {}", samples.len());
            let mut out = String::new();
            for v in &samples {
                out.push_str(&v.to_string());
                out.push('\n');
            }
            out
        }
    };
    match &args.out {
        Some(path) => atomic_write(path, csv.as_bytes())?,
        None => print!("{csv}"),
    }
    Ok(())
}

fn load_config(path: &Path, seed_override: Option<u64>) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::from_file(path)?;
    if let Some(seed) = seed_override {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let cfg = load_config(&args.config, args.seed)?;
    let rb: BlockKind = args.rb.parse()?;
    let preproc: Preproc = args.preproc.parse()?;

    let spec = cfg.load_dataset()?;
    for note in &spec.deviations {
        eprintln!("note: {note}");
    }
    let split = make_split(&spec, cfg.strict_holdout)?;
    let data = prepare_split_data(&spec, &split, preproc)?;
    let plan = cfg.plan(preproc, spec.n_classes)?;
    let mut net = Network::build(plan, rb, &mut Rng::new(cfg.seed).derive(&[0]))?;
    println!(
        "training {rb} / {preproc} on {} ({} train / {} val / {} test clips), seed {}",
        spec.kind,
        data.train.examples.len(),
        data.validation.examples.len(),
        data.test.examples.len(),
        cfg.seed
    );

    std::fs::create_dir_all(&args.out)?;
    let last_good = args.out.join("last_good.ckpt");
    let mut saved_epochs = 0usize;
    let outcome = train_with_hook(
        &mut net,
        &data,
        &cfg.hyper,
        cfg.seed,
        Some(&mut |net: &mut Network, so_far: &TrainOutcome| {
            save_checkpoint(net, &last_good)?;
            saved_epochs = so_far.epochs;
            Ok(())
        }),
    )
    .map_err(|e| match e {
        Error::Training(msg) if saved_epochs > 0 => Error::Training(format!(
            "{msg}; last good checkpoint: {} (epoch {saved_epochs})",
            last_good.display()
        )),
        Error::Training(msg) => {
            Error::Training(format!("{msg}; no epoch completed, no checkpoint saved"))
        }
        other => other,
    })?;

    let final_path = args.out.join("model.ckpt");
    save_checkpoint(&mut net, &final_path)?;
    let mut trace = String::from("epoch,loss,train_accuracy,val_accuracy,lr\n");
    for i in 0..outcome.epochs {
        trace.push_str(&format!(
            "{},{},{},{},{}\n",
            i, outcome.loss_trace[i], outcome.train_trace[i], outcome.val_trace[i],
            outcome.lr_trace[i]
        ));
    }
    atomic_write(&args.out.join("trace.csv"), trace.as_bytes())?;

    println!("trained {} epochs; test accuracy {}", outcome.epochs, outcome.test_accuracy);
    println!("checkpoint: {}", final_path.display());
    Ok(())
}

fn cmd_evaluate(args: EvaluateArgs) -> Result<()> {
    let cfg = load_config(&args.config, args.seed)?;
    let preproc: Preproc = args.preproc.parse()?;
    let spec = cfg.load_dataset()?;
    let split = make_split(&spec, cfg.strict_holdout)?;
    let data = prepare_split_data(&spec, &split, preproc)?;
    let mut net = load_checkpoint(&args.checkpoint)?;
    if net.n_classes() != spec.n_classes {
        return Err(Error::invalid(format!(
            "checkpoint has {} classes but the dataset has {}",
            net.n_classes(),
            spec.n_classes
        )));
    }
    let accuracy = evaluate(&mut net, &data.test, cfg.hyper.batch_size)?;
    println!("test accuracy {accuracy}");
    if let Some(out) = &args.out {
        atomic_write(out, format!("accuracy,{accuracy}\n").as_bytes())?;
    }
    Ok(())
}

fn cmd_experiment(args: ExperimentArgs) -> Result<()> {
    let cfg = load_config(&args.config, args.seed)?;
    let jobs = cap_jobs(args.jobs);
    println!("config hash {}", config_hash(&cfg));

    let output = run_experiment(&cfg, &args.out, jobs)?;
    for note in &output.deviations {
        eprintln!("note: {note}");
    }
    for cell in &output.cells {
        match (cell.mean, cell.std) {
            (Some(mean), Some(std)) => println!(
                "{} / {}: {:.2}% +- {:.2}% over {} runs",
                cell.rb,
                cell.preproc,
                mean * 100.0,
                std * 100.0,
                cell.successes
            ),
            _ => println!(
                "{} / {}: unusable ({} successful runs)",
                cell.rb, cell.preproc, cell.successes
            ),
        }
    }
    println!("results: {}", args.out.join("results.csv").display());
    println!("summary: {}", args.out.join("summary.json").display());
    Ok(())
}

fn cap_jobs(requested: usize) -> usize {
    let mut jobs = requested.max(1);
    if let Ok(value) = std::env::var("RAWRES_THREADS") {
        if let Ok(cap) = value.trim().parse::<usize>() {
            jobs = jobs.min(cap.max(1));
        }
    }
    jobs
}

/// Per-preprocessing accuracy groups from a results CSV, keyed by the
/// preprocessing tag; groups with fewer than two successful repetitions
/// are excluded (noted on stderr).
type GroupedResults = BTreeMap<String, (Vec<String>, Vec<Vec<f64>>)>;

fn read_results_tables(path: &Path) -> Result<GroupedResults> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::Dataset(format!("{}: empty results file", path.display())))?;
    if header.trim() != "rb,preproc,rep,accuracy,epochs" {
        return Err(Error::Dataset(format!(
            "{} line 1: unexpected header '{header}'",
            path.display()
        )));
    }

    let mut grouped: BTreeMap<String, BTreeMap<String, Vec<f64>>> = BTreeMap::new();
    for (idx, line) in lines {
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(Error::Dataset(format!(
                "{} line {lineno}: expected 5 fields, got {}",
                path.display(),
                fields.len()
            )));
        }
        let bad = |what: &str, got: &str| {
            Error::Dataset(format!(
                "{} line {lineno}: {what} '{got}' is not a number",
                path.display()
            ))
        };
        let _rep: usize = fields[2].trim().parse().map_err(|_| bad("repetition", fields[2]))?;
        let _epochs: usize = fields[4].trim().parse().map_err(|_| bad("epochs", fields[4]))?;
        let accuracy = fields[3].trim();
        if accuracy.is_empty() {
            continue; // failed repetition, recorded without an accuracy
        }
        let accuracy: f64 = accuracy.parse().map_err(|_| bad("accuracy", accuracy))?;
        grouped
            .entry(fields[1].trim().to_string())
            .or_default()
            .entry(fields[0].trim().to_string())
            .or_default()
            .push(accuracy);
    }

    let mut tables = GroupedResults::new();
    for (preproc, by_rb) in grouped {
        let mut labels = Vec::new();
        let mut groups = Vec::new();
        for (rb, accs) in by_rb {
            if accs.len() < 2 {
                eprintln!(
                    "note: {preproc}/{rb} has {} successful repetitions; excluded",
                    accs.len()
                );
                continue;
            }
            labels.push(rb);
            groups.push(accs);
        }
        if labels.len() >= 2 {
            tables.insert(preproc, (labels, groups));
        } else {
            eprintln!("note: preprocessing '{preproc}' has fewer than two usable groups; skipped");
        }
    }
    if tables.is_empty() {
        return Err(Error::Stats(format!(
            "{}: no preprocessing block has two groups with two successful repetitions",
            path.display()
        )));
    }
    Ok(tables)
}

fn analyze_tables(
    tables: &GroupedResults,
    alpha: f64,
) -> Result<BTreeMap<String, SignificanceMatrix>> {
    let mut matrices = BTreeMap::new();
    for (preproc, (labels, groups)) in tables {
        matrices.insert(preproc.clone(), tukey_kramer(labels, groups, alpha)?);
    }
    Ok(matrices)
}

fn cmd_stats(args: StatsArgs) -> Result<()> {
    if let Some(out) = &args.out {
        std::fs::create_dir_all(out)?;
    }
    let matrices = analyze_tables(&read_results_tables(&args.results)?, args.alpha)?;
    for (preproc, matrix) in &matrices {
        println!("== preprocessing: {preproc} ==");
        print!("{}", render_text_grid(matrix));
        println!();
        if let Some(out) = &args.out {
            atomic_write(
                &out.join(format!("significance_{preproc}.csv")),
                render_matrix_csv(matrix).as_bytes(),
            )?;
        }
    }

    let Some(second) = &args.results2 else {
        return Ok(());
    };
    let other = analyze_tables(&read_results_tables(second)?, args.alpha)?;
    for (preproc, matrix) in &matrices {
        let Some(counterpart) = other.get(preproc) else {
            eprintln!("note: preprocessing '{preproc}' missing from {}", second.display());
            continue;
        };
        let cells = matching_matrix(matrix, counterpart)?;
        println!("== matching: {preproc} (both runs) ==");
        print!("{}", render_matching_text(&matrix.labels, &cells));
        println!();
        if let Some(out) = &args.out {
            atomic_write(
                &out.join(format!("matching_{preproc}.csv")),
                render_matching_csv(&matrix.labels, &cells).as_bytes(),
            )?;
        }
    }
    for preproc in other.keys() {
        if !matrices.contains_key(preproc) {
            eprintln!(
                "note: preprocessing '{preproc}' missing from {}",
                args.results.display()
            );
        }
    }
    Ok(())
}

fn cmd_synth(args: SynthArgs) -> Result<()> {
    let spec = rawres_core::datasets::synthetic_dataset(
        &args.out,
        args.seed,
        args.classes,
        args.clips_per_class,
        args.seconds,
        args.folds,
    )?;
    for note in &spec.deviations {
        eprintln!("note: {note}");
    }
    println!(
        "synthetic corpus: {} clips, {} classes, {} folds at {}",
        spec.clips.len(),
        spec.n_classes,
        args.folds,
        args.out.display()
    );
    Ok(())
}
