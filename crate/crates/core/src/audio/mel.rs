//! Log-mel spectrogram extraction for the 2D network.
//!
//! Pipeline: 40 ms periodic Hann window (320 samples at 8 kHz) with 50%
//! overlap (hop 160), frames centered by reflect-padding the signal, each
//! window zero-padded into a 512-point FFT, magnitude-squared spectrum
//! projected onto 64 area-normalized triangular mel filters spanning
//! 0–4000 Hz, then `log10` with a 1e-10 power floor.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::Clip;

/// Sample rate the feature pipeline is defined at.
pub const SAMPLE_RATE: u32 = 8000;
/// Number of mel channels.
pub const N_MELS: usize = 64;

const WIN_LEN: usize = 320;
const HOP: usize = 160;
const N_FFT: usize = 512;
const N_BINS: usize = N_FFT / 2 + 1;
const F_MAX: f64 = 4000.0;
const POWER_FLOOR: f64 = 1e-10;

/// A 64-row log-mel spectrogram; `values` has shape `[64, frames]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MelSpec {
    pub values: Tensor,
}

impl MelSpec {
    pub fn n_mels(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn frames(&self) -> usize {
        self.values.shape()[1]
    }
}

/// Computes the log-mel spectrogram of an 8 kHz clip. The frame count is
/// `1 + floor(n / 160)`; centering means even a one-sample clip yields a
/// frame.
pub fn log_mel(clip: &Clip) -> Result<MelSpec> {
    if clip.sample_rate != SAMPLE_RATE {
        return Err(Error::invalid(format!(
            "log-mel features are defined at {SAMPLE_RATE} Hz, got {} Hz (resample first)",
            clip.sample_rate
        )));
    }
    let n = clip.samples.len();
    if n == 0 {
        return Err(Error::invalid("cannot extract features from an empty clip"));
    }

    let frames = 1 + n / HOP;
    let window = padded_hann();
    let bank = mel_bank();
    let fft = FftPlanner::new().plan_fft_forward(N_FFT);

    let pad = N_FFT as isize / 2;
    let mut buf = vec![Complex::new(0.0, 0.0); N_FFT];
    let mut power = [0.0f64; N_BINS];
    let mut values = Tensor::zeros(&[N_MELS, frames]);
    for t in 0..frames {
        let start = (t * HOP) as isize - pad;
        for (i, slot) in buf.iter_mut().enumerate() {
            let sample = clip.samples[reflect_index(start + i as isize, n)];
            *slot = Complex::new(sample * window[i], 0.0);
        }
        fft.process(&mut buf);
        for (k, p) in power.iter_mut().enumerate() {
            *p = buf[k].norm_sqr();
        }
        for (m, (first_bin, weights)) in bank.iter().enumerate() {
            let energy: f64 = weights
                .iter()
                .zip(&power[*first_bin..])
                .map(|(w, p)| w * p)
                .sum();
            values.data_mut()[m * frames + t] = energy.max(POWER_FLOOR).log10();
        }
    }
    Ok(MelSpec { values })
}

/// Periodic Hann window of `WIN_LEN`, centered inside an `N_FFT` buffer.
fn padded_hann() -> Vec<f64> {
    let mut w = vec![0.0; N_FFT];
    let offset = (N_FFT - WIN_LEN) / 2;
    for i in 0..WIN_LEN {
        let phase = 2.0 * std::f64::consts::PI * i as f64 / WIN_LEN as f64;
        w[offset + i] = 0.5 - 0.5 * phase.cos();
    }
    w
}

/// Maps a possibly out-of-range index into `[0, n)` by reflecting around the
/// signal edges without repeating the edge samples, folding as many times as
/// needed.
fn reflect_index(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let mut idx = i.rem_euclid(period);
    if idx > n as isize - 1 {
        idx = period - idx;
    }
    idx as usize
}

/// Frequency (Hz) to mel: linear below 1000 Hz, logarithmic above.
fn hz_to_mel(f: f64) -> f64 {
    if f < 1000.0 {
        f / (200.0 / 3.0)
    } else {
        15.0 + (f / 1000.0).ln() / (6.4f64.ln() / 27.0)
    }
}

fn mel_to_hz(m: f64) -> f64 {
    if m < 15.0 {
        m * (200.0 / 3.0)
    } else {
        1000.0 * ((m - 15.0) * (6.4f64.ln() / 27.0)).exp()
    }
}

/// The 66 triangle corner frequencies: 64 filters need 64 + 2 mel-spaced
/// points between 0 Hz and `F_MAX`.
fn corner_freqs() -> Vec<f64> {
    let top = hz_to_mel(F_MAX);
    (0..N_MELS + 2)
        .map(|i| mel_to_hz(top * i as f64 / (N_MELS + 1) as f64))
        .collect()
}

/// Builds the sparse filterbank: per row, the first FFT bin with nonzero
/// weight and the weights from there on. Each triangle spans
/// `corners[m]..corners[m+2]` and is scaled by `2 / (corners[m+2] -
/// corners[m])` so every filter integrates to the same area.
fn mel_bank() -> Vec<(usize, Vec<f64>)> {
    let corners = corner_freqs();
    let bin_hz = SAMPLE_RATE as f64 / N_FFT as f64;
    (0..N_MELS)
        .map(|m| {
            let (lo, mid, hi) = (corners[m], corners[m + 1], corners[m + 2]);
            let norm = 2.0 / (hi - lo);
            let mut first_bin = None;
            let mut weights = Vec::new();
            for k in 0..N_BINS {
                let f = k as f64 * bin_hz;
                let rise = (f - lo) / (mid - lo);
                let fall = (hi - f) / (hi - mid);
                let w = rise.min(fall).max(0.0) * norm;
                if w > 0.0 {
                    first_bin.get_or_insert(k);
                    weights.push(w);
                } else if first_bin.is_some() {
                    break;
                }
            }
            (first_bin.unwrap_or(0), weights)
        })
        .collect()
}

/// Per-channel mean and population standard deviation, fit on training-fold
/// spectrograms only.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Fits per-channel statistics over every frame of every given spectrogram.
pub fn fit_channel_stats(specs: &[MelSpec]) -> Result<ChannelStats> {
    let n_mels = specs
        .first()
        .ok_or_else(|| Error::invalid("cannot fit channel statistics on an empty set"))?
        .n_mels();
    let mut sum = vec![0.0; n_mels];
    let mut count = 0usize;
    for spec in specs {
        if spec.n_mels() != n_mels {
            return Err(Error::shape(format!(
                "channel count mismatch: {} vs {}",
                spec.n_mels(),
                n_mels
            )));
        }
        let frames = spec.frames();
        for (m, s) in sum.iter_mut().enumerate() {
            *s += spec.values.data()[m * frames..(m + 1) * frames].iter().sum::<f64>();
        }
        count += frames;
    }
    let mean: Vec<f64> = sum.iter().map(|s| s / count as f64).collect();

    let mut sq = vec![0.0; n_mels];
    for spec in specs {
        let frames = spec.frames();
        for (m, s) in sq.iter_mut().enumerate() {
            *s += spec.values.data()[m * frames..(m + 1) * frames]
                .iter()
                .map(|v| (v - mean[m]) * (v - mean[m]))
                .sum::<f64>();
        }
    }
    let std = sq.iter().map(|s| (s / count as f64).sqrt()).collect();
    Ok(ChannelStats { mean, std })
}

/// Applies training-fold channel statistics: each row becomes
/// `(row - mean) / std`. Channels whose fitted deviation is (numerically)
/// zero map to all zeros instead of blowing up.
pub fn channel_standardize(spec: &MelSpec, stats: &ChannelStats) -> Result<MelSpec> {
    if stats.mean.len() != spec.n_mels() {
        return Err(Error::shape(format!(
            "statistics cover {} channels but the spectrogram has {}",
            stats.mean.len(),
            spec.n_mels()
        )));
    }
    let frames = spec.frames();
    let mut out = spec.values.clone();
    for m in 0..spec.n_mels() {
        let row = &mut out.data_mut()[m * frames..(m + 1) * frames];
        if stats.std[m] < 1e-12 {
            row.iter_mut().for_each(|v| *v = 0.0);
        } else {
            row.iter_mut().for_each(|v| *v = (*v - stats.mean[m]) / stats.std[m]);
        }
    }
    Ok(MelSpec { values: out })
}
