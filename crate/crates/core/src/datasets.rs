//! Dataset metadata ingestion, fold-based splits, and a synthetic corpus
//! generator for desk-scale experiments.
//!
//! Two on-disk layouts are understood: the UrbanSound8k distribution
//! (a metadata CSV naming `audio/fold<N>/<file>` clips) and the ESC
//! convention of encoding fold and class directly in each filename. The
//! synthetic generator emits the UrbanSound8k layout, so everything
//! downstream treats the three sources identically.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::audio::write_wav_mono16;
use crate::error::{Error, Result};
use crate::fsio::atomic_write;
use crate::rng::Rng;

/// Which corpus a [`DatasetSpec`] describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetKind {
    UrbanSound8k,
    Esc10,
    Synthetic,
}

impl std::fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            DatasetKind::UrbanSound8k => "urbansound8k",
            DatasetKind::Esc10 => "esc10",
            DatasetKind::Synthetic => "synthetic",
        };
        f.write_str(name)
    }
}

/// One audio clip: resolved path, class label, and fold assignment.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClipEntry {
    pub file: PathBuf,
    pub label: usize,
    pub fold: u32,
}

/// A loaded corpus: clip inventory plus the protocol constants that depend
/// on it (class count, nominal clip length). `deviations` records every way
/// the on-disk data departed from the published corpus (wrong clip count,
/// missing files) — loading continues, but the deviations travel with the
/// results.
#[derive(Debug, Clone)]
pub struct DatasetSpec {
    pub kind: DatasetKind,
    pub root: PathBuf,
    pub clips: Vec<ClipEntry>,
    pub n_classes: usize,
    pub clip_seconds: f64,
    pub deviations: Vec<String>,
}

/// Train/validation/test partition as clip indices into
/// [`DatasetSpec::clips`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

#[derive(Deserialize)]
struct MetaRow {
    slice_file_name: String,
    fold: u32,
    #[serde(rename = "classID")]
    class_id: usize,
}

/// Published UrbanSound8k clip count.
const UBS8K_CLIPS: usize = 8732;
/// Published ESC-10 clip count (40 per class).
const ESC10_CLIPS: usize = 400;

/// Loads an UrbanSound8k-style corpus from its metadata CSV. The audio root
/// is taken to be the CSV's grandparent directory (the distribution keeps
/// the CSV under `metadata/`), with clips at `audio/fold<N>/<name>`.
///
/// A clip count other than 8732 and individually missing audio files are
/// recorded as deviations, not errors.
pub fn load_urbansound8k(metadata_csv: &Path) -> Result<DatasetSpec> {
    let csv_dir = metadata_csv.parent().unwrap_or_else(|| Path::new("."));
    let root = csv_dir.parent().unwrap_or(csv_dir).to_path_buf();

    let mut reader = csv::Reader::from_path(metadata_csv)?;
    let mut clips = Vec::new();
    let mut deviations = Vec::new();
    let mut rows = 0usize;
    for row in reader.deserialize::<MetaRow>() {
        let row = row?;
        rows += 1;
        if row.class_id >= 10 {
            return Err(Error::dataset(format!(
                "{}: classID {} out of range 0..10",
                row.slice_file_name, row.class_id
            )));
        }
        if row.fold == 0 || row.fold > 10 {
            return Err(Error::dataset(format!(
                "{}: fold {} out of range 1..=10",
                row.slice_file_name, row.fold
            )));
        }
        let file = root.join("audio").join(format!("fold{}", row.fold)).join(&row.slice_file_name);
        if file.is_file() {
            clips.push(ClipEntry { file, label: row.class_id, fold: row.fold });
        } else {
            deviations.push(format!("missing audio file excluded: {}", file.display()));
        }
    }
    if rows == 0 {
        return Err(Error::dataset(format!("{}: no clip rows", metadata_csv.display())));
    }
    if rows != UBS8K_CLIPS {
        deviations.push(format!("clip count {rows} differs from the published {UBS8K_CLIPS}"));
    }
    Ok(DatasetSpec {
        kind: DatasetKind::UrbanSound8k,
        root,
        clips,
        n_classes: 10,
        clip_seconds: 4.0,
        deviations,
    })
}

/// Parses an ESC-style filename, `<fold>-<source>-<take>-<class>.wav`.
pub fn parse_esc_name(name: &str) -> Result<(u32, usize)> {
    let bad = || Error::dataset(format!("cannot parse ESC filename '{name}'"));
    let stem = name.strip_suffix(".wav").ok_or_else(bad)?;
    let parts: Vec<&str> = stem.split('-').collect();
    if parts.len() != 4 {
        return Err(bad());
    }
    let fold: u32 = parts[0].parse().map_err(|_| bad())?;
    let class: usize = parts[3].parse().map_err(|_| bad())?;
    Ok((fold, class))
}

/// Loads an ESC-10 corpus from a directory of WAV files named by the ESC
/// convention. Counts other than 400 clips / 40 per class are recorded as
/// deviations; unparseable or duplicate filenames are errors.
pub fn load_esc10(root: &Path) -> Result<DatasetSpec> {
    let mut names: Vec<String> = Vec::new();
    for entry in std::fs::read_dir(root)? {
        let entry = entry?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if name.ends_with(".wav") && entry.path().is_file() {
            names.push(name);
        }
    }
    if names.is_empty() {
        return Err(Error::dataset(format!("{}: no .wav files", root.display())));
    }
    names.sort();
    for pair in names.windows(2) {
        if pair[0] == pair[1] {
            return Err(Error::dataset(format!("duplicate filename '{}'", pair[0])));
        }
    }

    let mut clips = Vec::new();
    let mut per_class: BTreeMap<usize, usize> = BTreeMap::new();
    for name in &names {
        let (fold, label) = parse_esc_name(name)?;
        if label >= 10 {
            return Err(Error::dataset(format!("{name}: class {label} out of range 0..10")));
        }
        if fold == 0 || fold > 5 {
            return Err(Error::dataset(format!("{name}: fold {fold} out of range 1..=5")));
        }
        *per_class.entry(label).or_insert(0) += 1;
        clips.push(ClipEntry { file: root.join(name), label, fold });
    }

    let mut deviations = Vec::new();
    if clips.len() != ESC10_CLIPS {
        deviations
            .push(format!("clip count {} differs from the published {ESC10_CLIPS}", clips.len()));
    }
    for (class, count) in &per_class {
        if *count != ESC10_CLIPS / 10 {
            deviations.push(format!("class {class} has {count} clips, expected 40"));
        }
    }
    Ok(DatasetSpec {
        kind: DatasetKind::Esc10,
        root: root.to_path_buf(),
        clips,
        n_classes: 10,
        clip_seconds: 5.0,
        deviations,
    })
}

/// Builds the fixed fold split: the highest fold is the test fold, every
/// other fold trains, and validation *aliases* the test fold — the
/// published protocol's clip arithmetic leaves no third partition.
/// `strict_holdout` instead carves the second-highest fold out of training
/// for validation, giving leak-free numbers at the cost of protocol parity.
pub fn make_split(spec: &DatasetSpec, strict_holdout: bool) -> Result<Split> {
    let test_fold =
        spec.clips.iter().map(|c| c.fold).max().ok_or_else(|| Error::dataset("no clips"))?;
    let val_fold = if strict_holdout {
        let folds: std::collections::BTreeSet<u32> = spec.clips.iter().map(|c| c.fold).collect();
        *folds
            .iter()
            .rev()
            .nth(1)
            .ok_or_else(|| Error::dataset("strict holdout needs at least two folds"))?
    } else {
        test_fold
    };

    let mut split = Split { train: Vec::new(), validation: Vec::new(), test: Vec::new() };
    for (i, clip) in spec.clips.iter().enumerate() {
        if clip.fold == test_fold {
            split.test.push(i);
        } else if clip.fold == val_fold {
            split.validation.push(i);
        } else {
            split.train.push(i);
        }
    }
    if !strict_holdout {
        split.validation = split.test.clone();
    }
    if split.train.is_empty() {
        return Err(Error::dataset("split leaves no training clips"));
    }
    Ok(split)
}

/// Generates a synthetic corpus under `root` in the UrbanSound8k layout:
/// WAVs at `audio/fold<N>/` plus `metadata/metadata.csv`. Class `c` is a
/// sinusoid at `200 + 150*c` Hz with random phase and amplitude, buried in
/// Gaussian noise at 10 dB SNR. Folds go round-robin over clips in class
/// order. Every byte is a pure function of `seed`.
pub fn synthetic_dataset(
    root: &Path,
    seed: u64,
    n_classes: usize,
    clips_per_class: usize,
    clip_seconds: f64,
    folds: u32,
) -> Result<DatasetSpec> {
    if n_classes == 0 || clips_per_class == 0 || folds == 0 {
        return Err(Error::invalid("class, clip and fold counts must be positive"));
    }
    if clip_seconds <= 0.0 {
        return Err(Error::invalid("clip length must be positive"));
    }
    let sample_rate = 8000u32;
    let n_samples = (clip_seconds * sample_rate as f64).round() as usize;
    let base = Rng::new(seed);

    let mut csv_bytes = Vec::new();
    {
        let mut writer = csv::Writer::from_writer(&mut csv_bytes);
        writer.write_record(["slice_file_name", "fold", "classID"]).map_err(Error::from)?;

        let mut clip_index = 0u32;
        for class in 0..n_classes {
            let freq = 200.0 + 150.0 * class as f64;
            for take in 0..clips_per_class {
                let fold = (clip_index % folds) + 1;
                clip_index += 1;

                let mut rng = base.derive(&[class as u64, take as u64]);
                let amp = rng.uniform(0.3, 0.6);
                let phase = rng.uniform(0.0, 2.0 * std::f64::consts::PI);
                // 10 dB SNR: noise power is a tenth of the sine's amp^2/2.
                let noise_std = amp / 20f64.sqrt();
                let samples: Vec<f64> = (0..n_samples)
                    .map(|i| {
                        let t = i as f64 / sample_rate as f64;
                        amp * (2.0 * std::f64::consts::PI * freq * t + phase).sin()
                            + noise_std * rng.next_gaussian()
                    })
                    .collect();

                let name = format!("synth-{class}-{take}.wav");
                let dir = root.join("audio").join(format!("fold{fold}"));
                std::fs::create_dir_all(&dir)?;
                write_wav_mono16(&dir.join(&name), &samples, sample_rate)?;
                writer
                    .write_record([&name, &fold.to_string(), &class.to_string()])
                    .map_err(Error::from)?;
            }
        }
        writer.flush()?;
    }
    let meta_dir = root.join("metadata");
    std::fs::create_dir_all(&meta_dir)?;
    atomic_write(&meta_dir.join("metadata.csv"), &csv_bytes)?;

    let mut spec = load_urbansound8k(&meta_dir.join("metadata.csv"))?;
    spec.kind = DatasetKind::Synthetic;
    spec.n_classes = n_classes;
    spec.clip_seconds = clip_seconds;
    // The published-count deviation is meaningless for a synthetic corpus.
    spec.deviations.retain(|d| !d.contains("published"));
    Ok(spec)
}
