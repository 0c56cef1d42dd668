//! Audio frontend: WAV decoding, band-limited resampling, length fitting,
//! per-clip normalization, and the log-mel feature pipeline.
//!
//! Every function here is a pure transformation over [`Clip`] values, so the
//! frontend is trivially parallel across files and byte-for-byte
//! deterministic: identical input samples always produce identical tensors.

mod mel;
mod resample;
mod wav;

pub use mel::{channel_standardize, fit_channel_stats, log_mel, ChannelStats, MelSpec, N_MELS};
pub use resample::resample;
pub use wav::{load_wav, write_wav_mono16};

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// A mono audio clip: samples nominally in `[-1, 1]` plus their rate.
#[derive(Debug, Clone, PartialEq)]
pub struct Clip {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl Clip {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::invalid("sample rate must be positive"));
        }
        if let Some(v) = samples.iter().find(|v| !v.is_finite()) {
            return Err(Error::audio(format!("non-finite sample {v}")));
        }
        Ok(Clip { samples, sample_rate })
    }

    /// Clip duration in seconds.
    pub fn seconds(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

/// Pads or truncates a clip to exactly `round(target_seconds * rate)`
/// samples. Short clips gain trailing zeros; long clips keep their first
/// `target_seconds` and drop the rest.
pub fn fit_length(clip: &Clip, target_seconds: f64) -> Clip {
    let target = (target_seconds * clip.sample_rate as f64).round() as usize;
    let mut samples = clip.samples.clone();
    samples.resize(target, 0.0);
    Clip { samples, sample_rate: clip.sample_rate }
}

/// Per-clip input normalization for the 1D network.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Normalize {
    /// Leave samples untouched.
    None,
    /// Divide by the largest absolute sample.
    ScaleMax,
    /// Subtract the clip mean and divide by the population standard
    /// deviation.
    Standardize,
}

impl fmt::Display for Normalize {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Normalize::None => "none",
            Normalize::ScaleMax => "scale_max",
            Normalize::Standardize => "standardize",
        };
        f.write_str(name)
    }
}

impl FromStr for Normalize {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "none" => Ok(Normalize::None),
            "scale_max" => Ok(Normalize::ScaleMax),
            "standardize" => Ok(Normalize::Standardize),
            other => Err(Error::invalid(format!(
                "unknown normalization '{other}' (expected none, scale_max or standardize)"
            ))),
        }
    }
}

/// Normalizes samples in place. Returns `true` when the clip was degenerate
/// for the requested mode (all-zero under `ScaleMax`, constant under
/// `Standardize`); the samples are then set to all zeros rather than
/// dividing by zero.
pub fn normalize(samples: &mut [f64], mode: Normalize) -> bool {
    match mode {
        Normalize::None => false,
        Normalize::ScaleMax => {
            let peak = samples.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if peak == 0.0 {
                return true;
            }
            for v in samples.iter_mut() {
                *v /= peak;
            }
            false
        }
        Normalize::Standardize => {
            let n = samples.len() as f64;
            let mean = samples.iter().sum::<f64>() / n;
            let var = samples.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let std = var.sqrt();
            if std == 0.0 {
                samples.iter_mut().for_each(|v| *v = 0.0);
                return true;
            }
            for v in samples.iter_mut() {
                *v = (*v - mean) / std;
            }
            false
        }
    }
}
