//! Sliding Hann-window power spectra on the epoch grid.

use serde::{Deserialize, Serialize};

use super::{EegEpoch, EPOCH_LEN, PRE_STIMULUS};
use crate::{Error, Result};

/// 500 ms at 250 Hz.
pub const WINDOW_LEN: usize = 125;
pub const N_FREQS: usize = 20;
pub const N_TIMES: usize = 15;
const LOG_FLOOR: f64 = 1e-12;

/// 2, 4, ..., 40 Hz.
pub fn frequencies() -> Vec<f64> {
    (1..=N_FREQS).map(|i| 2.0 * i as f64).collect()
}

/// 50, 100, ..., 750 ms after stimulus onset.
pub fn time_centers_ms() -> Vec<f64> {
    (1..=N_TIMES).map(|i| 50.0 * i as f64).collect()
}

/// Epoch sample index of each window centre.
///
/// A centre at `t` ms lies at `50 + t * fs / 1000` samples; half-sample
/// positions are rounded down, which yields alternating 13/12-sample hops.
pub fn center_samples(fs: f64) -> Vec<usize> {
    time_centers_ms()
        .iter()
        .map(|t| {
            let pos = PRE_STIMULUS as f64 + t * fs / 1000.0;
            (pos - 0.5).ceil() as usize
        })
        .collect()
}

/// Hann taper with non-zero end points, `0.5 (1 - cos(2 pi (n + 1) / (N + 1)))`.
pub fn hann(len: usize) -> Vec<f64> {
    (0..len)
        .map(|n| 0.5 * (1.0 - (2.0 * std::f64::consts::PI * (n + 1) as f64 / (len + 1) as f64).cos()))
        .collect()
}

/// Power per channel, frequency and time bin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TfrMap {
    pub n_channels: usize,
    /// `[channel][freq][time]`, row-major.
    pub power: Vec<f64>,
    pub freqs_hz: Vec<f64>,
    pub times_ms: Vec<f64>,
    /// How `power` relates to the windowed DFT.
    pub normalization: String,
}

impl TfrMap {
    pub fn get(&self, ch: usize, f: usize, t: usize) -> f64 {
        self.power[(ch * N_FREQS + f) * N_TIMES + t]
    }
}

pub const POWER_NORMALIZATION: &str = "|sum_n w[n] x[n] exp(-2 pi i f n / fs)|^2 / sum_n w[n]^2";

/// Hann-tapered sliding-window power.
///
/// Windows are `WINDOW_LEN` samples whose middle sample sits on each centre of
/// [`center_samples`]; power follows [`POWER_NORMALIZATION`].
pub fn tfr_hanning(epoch: &EegEpoch, fs: f64) -> Result<TfrMap> {
    if (fs - 250.0).abs() > 1e-9 {
        return Err(Error::Domain(format!("TFR grid is defined for 250 Hz, got {fs}")));
    }
    let taper = hann(WINDOW_LEN);
    let energy: f64 = taper.iter().map(|w| w * w).sum();
    let freqs = frequencies();
    // Tapered complex exponentials, [freq][n].
    let kernels: Vec<Vec<(f64, f64)>> = freqs
        .iter()
        .map(|f| {
            taper
                .iter()
                .enumerate()
                .map(|(n, w)| {
                    let ph = 2.0 * std::f64::consts::PI * f * n as f64 / fs;
                    (w * ph.cos(), -w * ph.sin())
                })
                .collect()
        })
        .collect();
    let half = WINDOW_LEN / 2;
    let centers = center_samples(fs);
    let n_ch = epoch.samples.len();
    let mut power = vec![0.0; n_ch * N_FREQS * N_TIMES];
    for (ch, x) in epoch.samples.iter().enumerate() {
        if x.len() != EPOCH_LEN {
            return Err(Error::Shape {
                expected: format!("{EPOCH_LEN} samples per channel"),
                got: x.len().to_string(),
            });
        }
        for (ti, &c) in centers.iter().enumerate() {
            let seg = &x[c - half..c - half + WINDOW_LEN];
            for (fi, k) in kernels.iter().enumerate() {
                let (mut re, mut im) = (0.0, 0.0);
                for (v, (kr, ki)) in seg.iter().zip(k) {
                    re += v * kr;
                    im += v * ki;
                }
                power[(ch * N_FREQS + fi) * N_TIMES + ti] = (re * re + im * im) / energy;
            }
        }
    }
    Ok(TfrMap {
        n_channels: n_ch,
        power,
        freqs_hz: freqs,
        times_ms: time_centers_ms(),
        normalization: POWER_NORMALIZATION.into(),
    })
}

/// `log10(power + 1e-12)`, z-scored over every cell of the map.
///
/// A constant map becomes all zeros. The layout is unchanged.
pub fn tfr_to_image(map: &TfrMap) -> Vec<f64> {
    let logp: Vec<f64> = map.power.iter().map(|p| (p + LOG_FLOOR).log10()).collect();
    let n = logp.len() as f64;
    let mean = logp.iter().sum::<f64>() / n;
    let sd = (logp.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    if !(sd > 1e-12 * mean.abs().max(1.0)) {
        return vec![0.0; logp.len()];
    }
    logp.iter().map(|v| (v - mean) / sd).collect()
}
