//! Ground-truth generators: race-model trials, profile-structured accuracy
//! matrices and class/task-structured EEG.
//!
//! Every generator draws from its own ChaCha8 stream of the spec seed, so
//! changing one part of a spec never perturbs the others.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::binio::write_json;
use crate::eeg::{EegEpoch, Marker, Recording, EPOCH_LEN, PRE_STIMULUS, POST_STIMULUS};
use crate::lba::{self, LbaParams, Trial};
use crate::lpa::BehaviorMatrix;
use crate::{Error, HazardType, PerformanceLevel, Result};

const STREAM_LBA: u64 = 100;
const STREAM_BEHAVIOR: u64 = 200;
const STREAM_EPOCHS: u64 = 300;
const STREAM_RECORDING: u64 = 400;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Mixture of accuracy profiles with a shared per-column sd.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BehaviorSpec {
    pub n_participants: usize,
    pub profile_means: Vec<[f64; 3]>,
    pub weights: Vec<f64>,
    pub sd: [f64; 3],
}

impl Default for BehaviorSpec {
    fn default() -> Self {
        Self::three_profiles()
    }
}

impl BehaviorSpec {
    /// Three well-separated profiles (0.85 / 0.65 / 0.45, sd 0.05), equal weights.
    pub fn three_profiles() -> Self {
        Self {
            n_participants: 70,
            profile_means: vec![[0.85; 3], [0.65; 3], [0.45; 3]],
            weights: vec![1.0; 3],
            sd: [0.05; 3],
        }
    }

    /// One population with the reported per-hazard accuracy moments
    /// (EL, LEP, SI columns).
    pub fn reported_moments() -> Self {
        Self {
            n_participants: 70,
            profile_means: vec![[0.6605, 0.6436, 0.5853]],
            weights: vec![1.0],
            sd: [0.0987, 0.0892, 0.1218],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_participants == 0 || self.profile_means.is_empty() {
            return Err(Error::Config("behavior spec needs participants and profiles".into()));
        }
        if self.weights.len() != self.profile_means.len() || self.weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::Config("one nonnegative weight per profile required".into()));
        }
        if self.sd.iter().any(|s| !(*s >= 0.0)) {
            return Err(Error::Config("profile sd must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Oscillatory class signatures embedded in background noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EegSynthSpec {
    pub n_channels: usize,
    pub fs: f64,
    /// Band centre per class, indexed High, Medium, Low.
    pub class_bands_hz: [f64; 3],
    pub amplitudes_uv: [f64; 3],
    pub task_offsets_hz: BTreeMap<HazardType, f64>,
    /// Stationary sd of the AR(1) background.
    pub noise_sd_uv: f64,
    pub noise_ar: f64,
    /// Per-trial uniform jitter half-widths.
    pub freq_jitter_hz: f64,
    pub amplitude_jitter: f64,
    /// Continuous recordings only: blink peak amplitude at the most frontal
    /// channel and the mean blink rate.
    pub blink_amplitude_uv: f64,
    pub blink_rate_hz: f64,
    /// Continuous recordings only: per-channel DC offsets drawn from ±this.
    pub dc_offset_uv: f64,
    /// Samples between consecutive markers in a continuous recording.
    pub trial_spacing: usize,
    pub n_per_class_per_task: usize,
}

impl Default for EegSynthSpec {
    fn default() -> Self {
        Self {
            n_channels: 32,
            fs: 250.0,
            class_bands_hz: [10.0, 18.0, 26.0],
            amplitudes_uv: [3.0; 3],
            task_offsets_hz: BTreeMap::from([(HazardType::EL, 0.0), (HazardType::LEP, 2.0), (HazardType::SI, 4.0)]),
            noise_sd_uv: 5.0,
            noise_ar: 0.9,
            freq_jitter_hz: 0.5,
            amplitude_jitter: 0.25,
            blink_amplitude_uv: 150.0,
            blink_rate_hz: 0.25,
            dc_offset_uv: 30.0,
            trial_spacing: 400,
            n_per_class_per_task: 100,
        }
    }
}

impl EegSynthSpec {
    pub fn class_frequency(&self, task: HazardType, class: PerformanceLevel) -> f64 {
        self.class_bands_hz[class.index()] + self.task_offsets_hz.get(&task).copied().unwrap_or(0.0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_channels == 0 || !(self.fs > 0.0) {
            return Err(Error::Config("EEG spec needs channels and a positive rate".into()));
        }
        if self.trial_spacing < EPOCH_LEN {
            return Err(Error::Config(format!("trial spacing must be at least {EPOCH_LEN} samples")));
        }
        if !(0.0..1.0).contains(&self.noise_ar) || !(self.noise_sd_uv >= 0.0) {
            return Err(Error::Config("noise needs 0 <= ar < 1 and sd >= 0".into()));
        }
        if self.amplitudes_uv.iter().any(|a| !(*a >= 0.0)) || !(self.blink_amplitude_uv >= 0.0) {
            return Err(Error::Config("amplitudes must be nonnegative".into()));
        }
        if !(self.amplitude_jitter >= 0.0 && self.amplitude_jitter < 1.0) || !(self.freq_jitter_hz >= 0.0) {
            return Err(Error::Config("jitter must be nonnegative (amplitude jitter below 1)".into()));
        }
        if !(self.blink_rate_hz >= 0.0) || !(self.dc_offset_uv >= 0.0) {
            return Err(Error::Config("blink rate and DC range must be nonnegative".into()));
        }
        if self.task_offsets_hz.is_empty() {
            return Err(Error::Config("at least one task offset is required".into()));
        }
        let mut cells = Vec::new();
        for &task in self.task_offsets_hz.keys() {
            for class in PerformanceLevel::ALL {
                let f = self.class_frequency(task, class);
                if !(2.0..=40.0).contains(&f) {
                    return Err(Error::Config(format!("{task}/{class} band {f} Hz outside 2-40 Hz")));
                }
                cells.push((task, class, f));
            }
        }
        for (i, a) in cells.iter().enumerate() {
            for b in &cells[i + 1..] {
                if a.1 != b.1 && (a.2 - b.2).abs() <= 2.0 {
                    return Err(Error::Config(format!(
                        "{}/{} at {} Hz and {}/{} at {} Hz are within 2 Hz",
                        a.0, a.1, a.2, b.0, b.1, b.2
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Everything the generators need, with all ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub lba: BTreeMap<HazardType, LbaParams>,
    /// Correct-response trials per hazard type.
    pub trial_counts: BTreeMap<HazardType, usize>,
    pub behavior: BehaviorSpec,
    pub eeg: EegSynthSpec,
    pub seed: u64,
}

/// Race parameters used for the three hazard types by default.
pub fn default_lba_params() -> BTreeMap<HazardType, LbaParams> {
    let p = |vc, ve, a, k, psi| LbaParams::new(vc, ve, a, k, psi).expect("valid defaults");
    BTreeMap::from([
        (HazardType::EL, p(3.0, 1.0, 0.5, 0.4, 0.30)),
        (HazardType::LEP, p(3.2, 1.2, 0.6, 0.5, 0.35)),
        (HazardType::SI, p(2.6, 0.8, 0.4, 0.6, 0.25)),
    ])
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            lba: default_lba_params(),
            trial_counts: BTreeMap::from([(HazardType::EL, 640), (HazardType::LEP, 781), (HazardType::SI, 293)]),
            behavior: BehaviorSpec::three_profiles(),
            eeg: EegSynthSpec::default(),
            seed: 2024,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        for (h, n) in &self.trial_counts {
            if *n == 0 {
                return Err(Error::Config(format!("trial count for {h} must be positive")));
            }
            let p = self
                .lba
                .get(h)
                .ok_or_else(|| Error::Config(format!("no LBA parameters for {h}")))?;
            p.validate()?;
        }
        self.behavior.validate()?;
        self.eeg.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HazardTruth {
    pub hazard_type: HazardType,
    pub params: LbaParams,
    pub n_correct: usize,
    pub n_total: usize,
    pub choice_probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LbaProvenance {
    pub seed: u64,
    pub hazards: Vec<HazardTruth>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LbaDataset {
    pub trials: Vec<Trial>,
    pub provenance: LbaProvenance,
}

/// Simulates each hazard until it has its requested number of correct
/// trials; the error trials met on the way are kept.
pub fn gen_lba_dataset(spec: &SynthSpec) -> Result<LbaDataset> {
    spec.validate()?;
    let n_ids = spec.behavior.n_participants.max(1);
    let mut trials = Vec::new();
    let mut hazards = Vec::new();
    for (&h, &n) in &spec.trial_counts {
        let params = spec.lba[&h];
        let mut rng = stream(spec.seed, STREAM_LBA + h.index() as u64);
        let (mut n_correct, mut n_total) = (0, 0);
        while n_correct < n {
            let id = format!("P{:03}", n_total % n_ids + 1);
            let t = lba::simulate_trial(&params, h, &id, &mut rng);
            n_correct += usize::from(t.correct);
            n_total += 1;
            trials.push(t);
        }
        hazards.push(HazardTruth {
            hazard_type: h,
            params,
            n_correct,
            n_total,
            choice_probability: lba::choice_probability(&params),
        });
    }
    Ok(LbaDataset {
        trials,
        provenance: LbaProvenance { seed: spec.seed, hazards },
    })
}

/// `trials.csv` plus `lba_truth.json` in `dir`.
pub fn write_lba_dataset(dir: &Path, data: &LbaDataset) -> Result<()> {
    lba::write_trials_csv(&dir.join("trials.csv"), &data.trials)?;
    write_json(&dir.join("lba_truth.json"), &data.provenance)
}

/// Participants drawn from the profile mixture; entries clipped to `[0, 1]`.
/// Returns the matrix and each participant's generating profile.
pub fn gen_behavior_matrix(spec: &BehaviorSpec, seed: u64) -> Result<(BehaviorMatrix, Vec<usize>)> {
    spec.validate()?;
    let mut rng = stream(seed, STREAM_BEHAVIOR);
    let pick = WeightedIndex::new(&spec.weights).map_err(|e| Error::Config(format!("profile weights: {e}")))?;
    let mut rows = Vec::with_capacity(spec.n_participants);
    let mut truth = Vec::with_capacity(spec.n_participants);
    for _ in 0..spec.n_participants {
        let k = pick.sample(&mut rng);
        let means = spec.profile_means[k];
        let mut row = [0.0; 3];
        for c in 0..3 {
            let z: f64 = StandardNormal.sample(&mut rng);
            row[c] = (means[c] + spec.sd[c] * z).clamp(0.0, 1.0);
        }
        rows.push(row);
        truth.push(k);
    }
    let ids = (1..=spec.n_participants).map(|i| format!("P{i:03}")).collect();
    Ok((BehaviorMatrix::new(ids, rows)?, truth))
}

/// Independent normal groups without clipping, e.g. per-participant mean RTs.
pub fn gen_group_columns(means: &[f64], sds: &[f64], n: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    if means.len() != sds.len() || sds.iter().any(|s| !(*s >= 0.0)) {
        return Err(Error::Config("one nonnegative sd per group mean required".into()));
    }
    let mut rng = stream(seed, STREAM_BEHAVIOR + 1);
    Ok(means
        .iter()
        .zip(sds)
        .map(|(m, s)| {
            (0..n)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    m + s * z
                })
                .collect()
        })
        .collect())
}

/// Like [`gen_group_columns`], but each group is affinely rescaled so its
/// sample mean and sd (n − 1 denominator) equal the targets exactly; only the
/// shape of each sample varies with the seed. With `clip` the result is then
/// clamped to `[0, 1]`, which can perturb the moments when the tails reach the
/// bounds.
pub fn gen_matched_columns(means: &[f64], sds: &[f64], n: usize, seed: u64, clip: bool) -> Result<Vec<Vec<f64>>> {
    if n < 2 {
        return Err(Error::Config("moment matching needs at least two values per group".into()));
    }
    let raw = gen_group_columns(&vec![0.0; means.len()], &vec![1.0; sds.len()], n, seed)?;
    Ok(raw
        .into_iter()
        .zip(means.iter().zip(sds))
        .map(|(z, (m, s))| {
            let zm = z.iter().sum::<f64>() / n as f64;
            let zs = (z.iter().map(|v| (v - zm).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
            z.iter()
                .map(|v| {
                    let x = m + s * (v - zm) / zs;
                    if clip { x.clamp(0.0, 1.0) } else { x }
                })
                .collect()
        })
        .collect())
}

/// Channel weight of the task oscillation: rises from front to back.
pub fn signal_gains(n_channels: usize) -> Vec<f64> {
    let span = (n_channels.max(2) - 1) as f64;
    (0..n_channels).map(|c| 0.4 + 0.6 * c as f64 / span).collect()
}

/// Channel weight of the blink source: decays from the most frontal channel.
pub fn blink_gains(n_channels: usize) -> Vec<f64> {
    (0..n_channels).map(|c| (-(c as f64) / 4.0).exp()).collect()
}

fn ar1_noise(rng: &mut ChaCha8Rng, n: usize, sd: f64, ar: f64) -> Vec<f64> {
    let innov = sd * (1.0 - ar * ar).sqrt();
    let z = |rng: &mut ChaCha8Rng| -> f64 { StandardNormal.sample(rng) };
    let mut x = sd * z(rng);
    (0..n)
        .map(|_| {
            let v = x;
            x = ar * x + innov * z(rng);
            v
        })
        .collect()
}

/// Post-stimulus oscillation with 100 ms raised-cosine ramps at either end.
fn oscillation(spec: &EegSynthSpec, freq: f64, amplitude: f64, phase: f64) -> Vec<f64> {
    let ramp = (0.1 * spec.fs).round() as usize;
    (0..POST_STIMULUS)
        .map(|j| {
            let edge = j.min(POST_STIMULUS - 1 - j);
            let env = if edge < ramp {
                0.5 * (1.0 - (PI * edge as f64 / ramp as f64).cos())
            } else {
                1.0
            };
            amplitude * env * (2.0 * PI * freq * j as f64 / spec.fs + phase).sin()
        })
        .collect()
}

fn draw_oscillation(spec: &EegSynthSpec, task: HazardType, class: PerformanceLevel, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let f = spec.class_frequency(task, class) + spec.freq_jitter_hz * rng.random_range(-1.0..=1.0);
    let a = spec.amplitudes_uv[class.index()] * (1.0 + spec.amplitude_jitter * rng.random_range(-1.0..=1.0));
    let phase = rng.random_range(0.0..2.0 * PI);
    oscillation(spec, f, a, phase)
}

/// Balanced, shuffled class sequence for one task.
fn class_sequence(n_per_class: usize, rng: &mut ChaCha8Rng) -> Vec<PerformanceLevel> {
    let mut seq: Vec<PerformanceLevel> = (0..n_per_class).flat_map(|_| PerformanceLevel::ALL).collect();
    seq.shuffle(rng);
    seq
}

fn task_epochs(spec: &EegSynthSpec, task: HazardType, n_per_class: usize, seed: u64) -> Vec<EegEpoch> {
    let mut rng = stream(seed, STREAM_EPOCHS + task.index() as u64);
    let gains = signal_gains(spec.n_channels);
    class_sequence(n_per_class, &mut rng)
        .into_iter()
        .enumerate()
        .map(|(i, class)| {
            let osc = draw_oscillation(spec, task, class, &mut rng);
            let samples = gains
                .iter()
                .map(|g| {
                    let mut x = ar1_noise(&mut rng, EPOCH_LEN, spec.noise_sd_uv, spec.noise_ar);
                    for (v, o) in x[PRE_STIMULUS..].iter_mut().zip(&osc) {
                        *v += g * o;
                    }
                    x
                })
                .collect();
            EegEpoch {
                samples,
                hazard_type: task,
                label: class,
                trial_id: format!("{task}-{i:04}"),
                baseline_corrected: false,
            }
        })
        .collect()
}

/// Stimulus-locked epochs for every task in the spec, classes balanced and
/// shuffled within each task. No blinks or DC offsets are added.
pub fn gen_synthetic_epochs(
    spec: &EegSynthSpec,
    n_per_class_per_task: usize,
    seed: u64,
) -> Result<BTreeMap<HazardType, Vec<EegEpoch>>> {
    spec.validate()?;
    let tasks: Vec<HazardType> = spec.task_offsets_hz.keys().copied().collect();
    let sets: Vec<Vec<EegEpoch>> = tasks
        .par_iter()
        .map(|&t| task_epochs(spec, t, n_per_class_per_task, seed))
        .collect();
    Ok(tasks.into_iter().zip(sets).collect())
}

/// Channel labels `Ch01`, `Ch02`, ...
pub fn channel_labels(n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("Ch{i:02}")).collect()
}

/// One continuous recording for `task`: background noise, DC offsets, blinks
/// at Poisson times and one marked oscillation per trial. Values are rounded
/// to 32-bit floats so the recording survives the on-disk format unchanged.
pub fn gen_synthetic_recording(spec: &EegSynthSpec, task: HazardType, n_per_class: usize, seed: u64) -> Result<Recording> {
    spec.validate()?;
    let mut rng = stream(seed, STREAM_RECORDING + task.index() as u64);
    let classes = class_sequence(n_per_class, &mut rng);
    let lead = 2 * PRE_STIMULUS;
    let n = lead + classes.len() * spec.trial_spacing + EPOCH_LEN;
    let mut x: Vec<Vec<f64>> = (0..spec.n_channels)
        .map(|_| {
            let dc = spec.dc_offset_uv * rng.random_range(-1.0..=1.0);
            ar1_noise(&mut rng, n, spec.noise_sd_uv, spec.noise_ar)
                .into_iter()
                .map(|v| v + dc)
                .collect()
        })
        .collect();

    let gains = signal_gains(spec.n_channels);
    let mut markers = Vec::with_capacity(classes.len());
    for (i, &class) in classes.iter().enumerate() {
        let onset = lead + i * spec.trial_spacing;
        let osc = draw_oscillation(spec, task, class, &mut rng);
        for (ch, g) in x.iter_mut().zip(&gains) {
            for (v, o) in ch[onset..onset + POST_STIMULUS].iter_mut().zip(&osc) {
                *v += g * o;
            }
        }
        markers.push(Marker {
            sample: onset,
            hazard_type: task,
            label: class,
            trial_id: format!("{task}-{i:04}"),
        });
    }

    // Blinks: 400 ms raised-cosine bumps.
    let width = (0.4 * spec.fs).round() as usize;
    let bgains = blink_gains(spec.n_channels);
    let gap = Normal::new(1.0, 0.1).expect("positive sd");
    let mut t = 0.0;
    if spec.blink_rate_hz > 0.0 && spec.blink_amplitude_uv > 0.0 {
        loop {
            let u: f64 = rng.random_range(f64::EPSILON..1.0);
            t += -u.ln() / spec.blink_rate_hz;
            let start = (t * spec.fs) as usize;
            if start + width >= n {
                break;
            }
            let jitter: f64 = gap.sample(&mut rng);
            let amp = spec.blink_amplitude_uv * jitter.max(0.5);
            for j in 0..width {
                let b = amp * 0.5 * (1.0 - (2.0 * PI * j as f64 / width as f64).cos());
                for (ch, g) in x.iter_mut().zip(&bgains) {
                    ch[start + j] += g * b;
                }
            }
        }
    }
    for ch in &mut x {
        for v in ch.iter_mut() {
            *v = *v as f32 as f64;
        }
    }
    Recording::new(x, spec.fs, channel_labels(spec.n_channels), markers)
}
