//! Raw recordings to classifier-ready time-frequency images: band-pass, ICA,
//! epoching, baseline correction, amplitude rejection and Hann-window TFR.

pub mod filter;
pub mod ica;
pub mod tfr;

use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use ica::{fastica, IcaDecomposition};
pub use tfr::{tfr_hanning, tfr_to_image, TfrMap};

use crate::binio::{read_f32_le, read_json, write_f32_le, write_json};
use crate::{Error, HazardType, PerformanceLevel, Result};

pub const PRE_STIMULUS: usize = 50;
pub const POST_STIMULUS: usize = 250;
pub const EPOCH_LEN: usize = PRE_STIMULUS + POST_STIMULUS;
/// Rejection bound in microvolts; only values strictly beyond it reject.
pub const REJECT_UV: f64 = 100.0;
pub const BUTTERWORTH_ORDER: usize = 4;

/// Stimulus onset and the trial it belongs to.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Marker {
    pub sample: usize,
    pub hazard_type: HazardType,
    pub label: PerformanceLevel,
    pub trial_id: String,
}

/// Continuous multichannel signal in microvolts.
#[derive(Debug, Clone, PartialEq)]
pub struct Recording {
    /// `[channel][sample]`.
    pub samples: Vec<Vec<f64>>,
    pub fs: f64,
    pub labels: Vec<String>,
    pub markers: Vec<Marker>,
}

impl Recording {
    pub fn new(samples: Vec<Vec<f64>>, fs: f64, labels: Vec<String>, markers: Vec<Marker>) -> Result<Self> {
        if !(fs > 0.0) {
            return Err(Error::Domain(format!("sampling rate must be positive, got {fs}")));
        }
        if labels.len() != samples.len() {
            return Err(Error::Shape {
                expected: format!("{} channel labels", samples.len()),
                got: labels.len().to_string(),
            });
        }
        let n = samples.first().map_or(0, Vec::len);
        if samples.iter().any(|c| c.len() != n) {
            return Err(Error::Domain("channels differ in length".into()));
        }
        if let Some(m) = markers.iter().find(|m| m.sample >= n) {
            return Err(Error::Domain(format!("marker at {} beyond {n} samples", m.sample)));
        }
        Ok(Self {
            samples,
            fs,
            labels,
            markers,
        })
    }

    pub fn n_channels(&self) -> usize {
        self.samples.len()
    }

    pub fn n_samples(&self) -> usize {
        self.samples.first().map_or(0, Vec::len)
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.n_channels(), self.n_samples(), |c, i| self.samples[c][i])
    }

    /// Same metadata, new channel data.
    pub fn with_matrix(&self, x: &DMatrix<f64>) -> Self {
        Self {
            samples: x.row_iter().map(|r| r.iter().copied().collect()).collect(),
            ..self.clone()
        }
    }
}

/// Stimulus-locked segment, `PRE_STIMULUS` samples before onset and
/// `POST_STIMULUS` from onset on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EegEpoch {
    /// `[channel][EPOCH_LEN]`.
    pub samples: Vec<Vec<f64>>,
    pub hazard_type: HazardType,
    pub label: PerformanceLevel,
    pub trial_id: String,
    pub baseline_corrected: bool,
}

impl EegEpoch {
    /// Milliseconds relative to onset for each sample: -200, -196, ..., 996 at 250 Hz.
    pub fn time_axis_ms(fs: f64) -> Vec<f64> {
        (0..EPOCH_LEN)
            .map(|i| (i as f64 - PRE_STIMULUS as f64) * 1000.0 / fs)
            .collect()
    }
}

/// Zero-phase Butterworth band-pass of every channel.
pub fn bandpass_filter(rec: &Recording, low: f64, high: f64) -> Result<Recording> {
    let sos = filter::butterworth_bandpass(BUTTERWORTH_ORDER, low, high, rec.fs)?;
    let samples = rec
        .samples
        .par_iter()
        .map(|x| filter::sosfiltfilt(&sos, x))
        .collect::<Result<_>>()?;
    Ok(Recording {
        samples,
        ..rec.clone()
    })
}

/// Subtracts the back-projection of the listed components from `rec`.
///
/// Anything the decomposition did not model (directions dropped by a reduced
/// whitening) stays in the output untouched.
pub fn remove_components(rec: &Recording, decomposition: &IcaDecomposition, remove: &[usize]) -> Result<Recording> {
    let (n_ch, n) = (rec.n_channels(), rec.n_samples());
    if decomposition.mixing.nrows() != n_ch || decomposition.sources.ncols() != n {
        return Err(Error::Shape {
            expected: format!("{n_ch}x{n}"),
            got: format!("{}x{}", decomposition.mixing.nrows(), decomposition.sources.ncols()),
        });
    }
    let artifact = decomposition.artifact_projection(remove)?;
    Ok(rec.with_matrix(&(rec.to_matrix() - artifact)))
}

/// Cuts `[marker - 50, marker + 250)` around every marker, skipping (with a
/// warning) markers too close to either edge.
pub fn epoch_segment(rec: &Recording) -> Vec<EegEpoch> {
    let n = rec.n_samples();
    rec.markers
        .iter()
        .filter_map(|m| {
            if m.sample < PRE_STIMULUS || m.sample + POST_STIMULUS > n {
                log::warn!("trial {} at sample {} is too close to the edge; skipped", m.trial_id, m.sample);
                return None;
            }
            let lo = m.sample - PRE_STIMULUS;
            Some(EegEpoch {
                samples: rec.samples.iter().map(|c| c[lo..lo + EPOCH_LEN].to_vec()).collect(),
                hazard_type: m.hazard_type,
                label: m.label,
                trial_id: m.trial_id.clone(),
                baseline_corrected: false,
            })
        })
        .collect()
}

/// Subtracts each channel's pre-stimulus mean.
pub fn baseline_correct(epoch: &EegEpoch) -> EegEpoch {
    let samples = epoch
        .samples
        .iter()
        .map(|c| {
            let m = c[..PRE_STIMULUS].iter().sum::<f64>() / PRE_STIMULUS as f64;
            c.iter().map(|v| v - m).collect()
        })
        .collect();
    EegEpoch {
        samples,
        baseline_corrected: true,
        ..epoch.clone()
    }
}

/// Splits epochs into (kept, rejected); an epoch is rejected iff some sample
/// has magnitude strictly above [`REJECT_UV`].
pub fn reject_artifacts(epochs: Vec<EegEpoch>) -> (Vec<EegEpoch>, Vec<EegEpoch>) {
    epochs
        .into_iter()
        .partition(|e| e.samples.iter().flatten().all(|v| v.abs() <= REJECT_UV))
}

/// Epochs to TFR images in input order.
pub fn epochs_to_images(epochs: &[EegEpoch], fs: f64) -> Result<Vec<Vec<f64>>> {
    epochs
        .par_iter()
        .map(|e| tfr_hanning(e, fs).map(|m| tfr_to_image(&m)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordingHeader {
    pub fs: f64,
    pub n_channels: usize,
    pub n_samples: usize,
    pub labels: Vec<String>,
    pub markers: Vec<Marker>,
}

fn sidecars(stem: &Path) -> (PathBuf, PathBuf) {
    (stem.with_extension("f32"), stem.with_extension("json"))
}

/// `<stem>.f32` (channel-major little-endian f32) and `<stem>.json`.
pub fn write_recording(stem: &Path, rec: &Recording) -> Result<()> {
    let (bin, json) = sidecars(stem);
    let flat: Vec<f64> = rec.samples.concat();
    write_f32_le(&bin, &flat)?;
    write_json(
        &json,
        &RecordingHeader {
            fs: rec.fs,
            n_channels: rec.n_channels(),
            n_samples: rec.n_samples(),
            labels: rec.labels.clone(),
            markers: rec.markers.clone(),
        },
    )
}

pub fn read_recording(stem: &Path) -> Result<Recording> {
    let (bin, json) = sidecars(stem);
    let h: RecordingHeader = read_json(&json)?;
    let flat = read_f32_le(&bin)?;
    if flat.len() != h.n_channels * h.n_samples {
        return Err(Error::Shape {
            expected: format!("{}x{} samples", h.n_channels, h.n_samples),
            got: flat.len().to_string(),
        });
    }
    let samples = if h.n_samples == 0 {
        vec![Vec::new(); h.n_channels]
    } else {
        flat.chunks(h.n_samples).map(<[f64]>::to_vec).collect()
    };
    Recording::new(samples, h.fs, h.labels, h.markers)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMeta {
    pub hazard_type: HazardType,
    pub label: PerformanceLevel,
    pub trial_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochSetHeader {
    pub fs: f64,
    pub n_channels: usize,
    pub epoch_len: usize,
    pub pre_stimulus: usize,
    pub baseline_corrected: bool,
    pub labels: Vec<String>,
    pub epochs: Vec<EpochMeta>,
}

/// `[epoch][channel][sample]` as little-endian f32 plus a JSON header.
pub fn write_epochs(stem: &Path, epochs: &[EegEpoch], fs: f64, labels: &[String]) -> Result<()> {
    let (bin, json) = sidecars(stem);
    let n_channels = labels.len();
    if let Some(e) = epochs.iter().find(|e| e.samples.len() != n_channels) {
        return Err(Error::Shape {
            expected: format!("{n_channels} channels"),
            got: format!("{} in trial {}", e.samples.len(), e.trial_id),
        });
    }
    let flat: Vec<f64> = epochs.iter().flat_map(|e| e.samples.concat()).collect();
    write_f32_le(&bin, &flat)?;
    write_json(
        &json,
        &EpochSetHeader {
            fs,
            n_channels,
            epoch_len: EPOCH_LEN,
            pre_stimulus: PRE_STIMULUS,
            baseline_corrected: epochs.iter().all(|e| e.baseline_corrected),
            labels: labels.to_vec(),
            epochs: epochs
                .iter()
                .map(|e| EpochMeta {
                    hazard_type: e.hazard_type,
                    label: e.label,
                    trial_id: e.trial_id.clone(),
                })
                .collect(),
        },
    )
}

pub fn read_epochs(stem: &Path) -> Result<(Vec<EegEpoch>, EpochSetHeader)> {
    let (bin, json) = sidecars(stem);
    let h: EpochSetHeader = read_json(&json)?;
    let flat = read_f32_le(&bin)?;
    let per = h.n_channels * h.epoch_len;
    if flat.len() != per * h.epochs.len() {
        return Err(Error::Shape {
            expected: format!("{} epochs of {per} samples", h.epochs.len()),
            got: flat.len().to_string(),
        });
    }
    let epochs = h
        .epochs
        .iter()
        .enumerate()
        .map(|(i, m)| EegEpoch {
            samples: flat[i * per..(i + 1) * per]
                .chunks(h.epoch_len)
                .map(<[f64]>::to_vec)
                .collect(),
            hazard_type: m.hazard_type,
            label: m.label,
            trial_id: m.trial_id.clone(),
            baseline_corrected: h.baseline_corrected,
        })
        .collect();
    Ok((epochs, h))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TfrSetHeader {
    /// `[image, channel, freq, time]`.
    pub dims: [usize; 4],
    pub freqs_hz: Vec<f64>,
    pub times_ms: Vec<f64>,
    pub power_normalization: String,
    pub image_normalization: String,
    pub epochs: Vec<EpochMeta>,
}

pub const IMAGE_NORMALIZATION: &str = "log10(power + 1e-12), z-scored over all cells per trial";

pub fn write_images(stem: &Path, images: &[Vec<f64>], meta: &[EpochMeta], n_channels: usize) -> Result<()> {
    let (bin, json) = sidecars(stem);
    let per = n_channels * tfr::N_FREQS * tfr::N_TIMES;
    if images.len() != meta.len() || images.iter().any(|im| im.len() != per) {
        return Err(Error::Shape {
            expected: format!("{} images of {per} cells", meta.len()),
            got: format!("{} images", images.len()),
        });
    }
    write_f32_le(&bin, &images.concat())?;
    write_json(
        &json,
        &TfrSetHeader {
            dims: [images.len(), n_channels, tfr::N_FREQS, tfr::N_TIMES],
            freqs_hz: tfr::frequencies(),
            times_ms: tfr::time_centers_ms(),
            power_normalization: tfr::POWER_NORMALIZATION.into(),
            image_normalization: IMAGE_NORMALIZATION.into(),
            epochs: meta.to_vec(),
        },
    )
}

pub fn read_images(stem: &Path) -> Result<(Vec<Vec<f64>>, TfrSetHeader)> {
    let (bin, json) = sidecars(stem);
    let h: TfrSetHeader = read_json(&json)?;
    let flat = read_f32_le(&bin)?;
    let per = h.dims[1] * h.dims[2] * h.dims[3];
    if flat.len() != per * h.dims[0] || h.epochs.len() != h.dims[0] {
        return Err(Error::Shape {
            expected: format!("{:?}", h.dims),
            got: flat.len().to_string(),
        });
    }
    let images = if per == 0 { vec![] } else { flat.chunks(per).map(<[f64]>::to_vec).collect() };
    Ok((images, h))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn epoch_with(value_at: Option<(usize, usize, f64)>) -> EegEpoch {
        let mut samples = vec![vec![0.0; EPOCH_LEN]; 2];
        if let Some((c, i, v)) = value_at {
            samples[c][i] = v;
        }
        EegEpoch {
            samples,
            hazard_type: HazardType::SI,
            label: PerformanceLevel::Low,
            trial_id: "t".into(),
            baseline_corrected: false,
        }
    }

    #[test]
    fn rejection_boundary() {
        let (kept, rejected) = reject_artifacts(vec![
            epoch_with(None),
            epoch_with(Some((1, 10, 100.0))),
            epoch_with(Some((0, 200, -100.0))),
            epoch_with(Some((1, 299, 101.0))),
        ]);
        assert_eq!(kept.len(), 3);
        assert_eq!(rejected.len(), 1);
        assert_eq!(rejected[0].samples[1][299], 101.0);
    }

    #[test]
    fn baseline_removes_pre_stimulus_mean() {
        let mut e = epoch_with(None);
        e.samples[0] = (0..EPOCH_LEN).map(|i| 3.0 + (i as f64 * 0.1).sin()).collect();
        e.samples[1] = vec![7.5; EPOCH_LEN];
        let b = baseline_correct(&e);
        let m: f64 = b.samples[0][..PRE_STIMULUS].iter().sum::<f64>() / PRE_STIMULUS as f64;
        assert!(m.abs() < 1e-10);
        assert!(b.samples[1].iter().all(|&v| v == 0.0));
        let shift = e.samples[0][0] - b.samples[0][0];
        for i in 0..EPOCH_LEN {
            assert!((e.samples[0][i] - b.samples[0][i] - shift).abs() < 1e-12);
        }
    }

    #[test]
    fn time_axis_spans_minus_200_to_996() {
        let t = EegEpoch::time_axis_ms(250.0);
        assert_eq!(t[0], -200.0);
        assert_eq!(t[PRE_STIMULUS], 0.0);
        assert_eq!(*t.last().unwrap(), 996.0);
    }
}
