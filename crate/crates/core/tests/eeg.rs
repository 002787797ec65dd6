//! Band-pass, FastICA, epoching, rejection, TFR and file formats against
//! analytic or constructed oracles.

use std::f64::consts::PI;

use hazalert::eeg::{
    self, baseline_correct, bandpass_filter, epoch_segment, fastica, reject_artifacts, remove_components,
    tfr::{self, N_FREQS, N_TIMES},
    tfr_hanning, tfr_to_image, EegEpoch, Marker, Recording, EPOCH_LEN, PRE_STIMULUS,
};
use hazalert::{HazardType, PerformanceLevel};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

const FS: f64 = 250.0;

fn single_channel(x: Vec<f64>) -> Recording {
    Recording::new(vec![x], FS, vec!["Ch1".into()], vec![]).unwrap()
}

fn rms(x: &[f64]) -> f64 {
    (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
}

fn interior(x: &[f64]) -> &[f64] {
    let edge = FS as usize;
    &x[edge..x.len() - edge]
}

fn sine(freq: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| (2.0 * PI * freq * i as f64 / FS).sin()).collect()
}

fn noise(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

#[test]
fn dc_is_attenuated_by_at_least_40_db() {
    let out = bandpass_filter(&single_channel(vec![1.0; 20 * FS as usize]), 0.1, 40.0).unwrap();
    let r = rms(interior(&out.samples[0]));
    assert!(r < 0.01, "residual DC rms {r}");
}

#[test]
fn ten_hz_passes_with_unit_gain() {
    let n = 20 * FS as usize;
    let out = bandpass_filter(&single_channel(sine(10.0, n)), 0.1, 40.0).unwrap();
    let amp = rms(interior(&out.samples[0])) * 2f64.sqrt();
    assert!((amp - 1.0).abs() < 0.05, "10 Hz amplitude {amp}");
}

#[test]
fn zero_stays_zero() {
    let out = bandpass_filter(&single_channel(vec![0.0; 2000]), 0.1, 40.0).unwrap();
    assert!(out.samples[0].iter().all(|&v| v == 0.0));
}

#[test]
fn filter_is_linear() {
    let n = 3000;
    let (x, y) = (noise(n, 1), noise(n, 2));
    let (a, b) = (2.5, -0.75);
    let combo: Vec<f64> = x.iter().zip(&y).map(|(u, v)| a * u + b * v).collect();
    let f = |s: Vec<f64>| bandpass_filter(&single_channel(s), 0.1, 40.0).unwrap().samples.remove(0);
    let (fx, fy, fc) = (f(x), f(y), f(combo));
    let err = fc
        .iter()
        .zip(fx.iter().zip(&fy))
        .map(|(c, (u, v))| (c - (a * u + b * v)).abs())
        .fold(0.0, f64::max);
    assert!(err < 1e-8, "linearity error {err}");
}

#[test]
fn band_above_nyquist_is_rejected() {
    assert!(bandpass_filter(&single_channel(vec![0.0; 2000]), 0.1, 130.0).is_err());
}

fn corr(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    sab / (saa * sbb).sqrt()
}

#[test]
fn fastica_recovers_two_planted_sources() {
    let n = 5000;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let s1: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let s2: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mixing = [[1.0, 0.6], [0.4, 1.0]];
    let x = DMatrix::from_fn(2, n, |c, i| mixing[c][0] * s1[i] + mixing[c][1] * s2[i]);
    let ica = fastica(&x, 2, 0).unwrap();
    assert!(ica.converged);
    for truth in [&s1, &s2] {
        let best = (0..2)
            .map(|k| corr(truth, ica.sources.row(k).iter().copied().collect::<Vec<_>>().as_slice()).abs())
            .fold(0.0, f64::max);
        assert!(best > 0.95, "best |corr| {best}");
    }
    let w = &ica.rotation;
    let dev = (w * w.transpose() - DMatrix::identity(2, 2)).abs().max();
    assert!(dev < 1e-6);
    let recon = ica.reconstruct_without(&[]).unwrap();
    assert!((&recon - &x).norm() / x.norm() < 1e-6);
}

fn marker(sample: usize, i: usize) -> Marker {
    Marker {
        sample,
        hazard_type: HazardType::EL,
        label: PerformanceLevel::High,
        trial_id: format!("t{i}"),
    }
}

/// 8 channels: a 10 Hz task rhythm, a sparse blink train with frontal gain,
/// and independent background sources.
fn blink_mixture() -> (Recording, Vec<f64>) {
    let (n_ch, n) = (8, 60 * FS as usize);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let task: Vec<f64> = sine(10.0, n).iter().map(|v| 8.0 * v).collect();
    let mut blink = vec![0.0; n];
    let width = (0.4 * FS) as usize;
    let mut t = 50;
    while t + width < n {
        for j in 0..width {
            blink[t + j] += 120.0 * 0.5 * (1.0 - (2.0 * PI * j as f64 / width as f64).cos());
        }
        t += rng.random_range(600..1400);
    }
    let background: Vec<Vec<f64>> = (0..n_ch - 2)
        .map(|_| (0..n).map(|_| 3.0 * rng.random_range(-1.0f64..1.0)).collect())
        .collect();
    let mut samples = vec![vec![0.0; n]; n_ch];
    for (c, row) in samples.iter_mut().enumerate() {
        let blink_gain = (-(c as f64) / 2.0).exp();
        let task_gain = 0.4 + 0.6 * c as f64 / (n_ch - 1) as f64;
        let mix: Vec<f64> = (0..n_ch - 2).map(|_| rng.random_range(-0.5..0.5)).collect();
        for i in 0..n {
            row[i] = blink_gain * blink[i]
                + task_gain * task[i]
                + mix.iter().zip(&background).map(|(g, b)| g * b[i]).sum::<f64>();
        }
    }
    let labels = (1..=n_ch).map(|c| format!("Ch{c}")).collect();
    (Recording::new(samples, FS, labels, vec![]).unwrap(), blink)
}

fn band_rms(rec: &Recording, lo: f64, hi: f64) -> f64 {
    let f = bandpass_filter(rec, lo, hi).unwrap();
    let all: Vec<f64> = f.samples.iter().flat_map(|c| interior(c).to_vec()).collect();
    rms(&all)
}

#[test]
fn removing_the_blink_component_clears_the_blink_band_only() {
    let (rec, blink) = blink_mixture();
    let ica = fastica(&rec.to_matrix(), 8, 1).unwrap();
    let k = (0..ica.n_components())
        .max_by(|&a, &b| {
            let ca = corr(&blink, &ica.sources.row(a).iter().copied().collect::<Vec<_>>()).abs();
            let cb = corr(&blink, &ica.sources.row(b).iter().copied().collect::<Vec<_>>()).abs();
            ca.total_cmp(&cb)
        })
        .unwrap();
    let clean = remove_components(&rec, &ica, &[k]).unwrap();
    let (b0, b1) = (band_rms(&rec, 0.5, 4.0), band_rms(&clean, 0.5, 4.0));
    let (t0, t1) = (band_rms(&rec, 8.0, 12.0), band_rms(&clean, 8.0, 12.0));
    assert!(b1 <= 0.2 * b0, "blink band {b0} -> {b1}");
    assert!((t1 - t0).abs() <= 0.1 * t0, "task band {t0} -> {t1}");
    // The variance helper singles out the same component here.
    assert_eq!(ica.components_above_variance(0.5), vec![k]);
}

#[test]
fn removing_nothing_or_everything() {
    let (rec, _) = blink_mixture();
    let ica = fastica(&rec.to_matrix(), 8, 1).unwrap();
    let same = remove_components(&rec, &ica, &[]).unwrap();
    let x = rec.to_matrix();
    assert!((same.to_matrix() - &x).norm() / x.norm() < 1e-6);
    let all: Vec<usize> = (0..ica.n_components()).collect();
    let residual = remove_components(&rec, &ica, &all).unwrap();
    for (c, row) in residual.samples.iter().enumerate() {
        let m = row.iter().sum::<f64>() / row.len() as f64;
        let spread = row.iter().map(|v| (v - m).abs()).fold(0.0, f64::max);
        assert!(spread < 1e-6 * rms(&rec.samples[c]), "channel {c} residual spread {spread}");
    }
}

#[test]
fn epochs_are_raw_slices_around_markers() {
    let n = 4000;
    let x: Vec<f64> = (0..n).map(|i| i as f64).collect();
    let markers = vec![marker(1000, 0), marker(2000, 1), marker(10, 2), marker(3900, 3)];
    let rec = Recording::new(vec![x.clone(), x], FS, vec!["A".into(), "B".into()], markers).unwrap();
    let epochs = epoch_segment(&rec);
    assert_eq!(epochs.len(), 2, "edge markers are skipped");
    assert_eq!(epochs[0].samples[0], rec.samples[0][950..1250].to_vec());
    assert_eq!(epochs[0].samples[0].len(), EPOCH_LEN);
    assert!(!epochs[0].baseline_corrected);
    assert_eq!(epochs[1].trial_id, "t1");
}

fn epoch_from(samples: Vec<Vec<f64>>) -> EegEpoch {
    EegEpoch {
        samples,
        hazard_type: HazardType::SI,
        label: PerformanceLevel::Low,
        trial_id: "x".into(),
        baseline_corrected: false,
    }
}

#[test]
fn baseline_correction_zeroes_the_prestimulus_mean() {
    let shape = noise(EPOCH_LEN, 4);
    let e = epoch_from(vec![vec![7.0; EPOCH_LEN], shape.iter().map(|v| v + 3.0).collect()]);
    let b = baseline_correct(&e);
    assert!(b.baseline_corrected);
    assert!(b.samples[0].iter().all(|&v| v.abs() < 1e-12));
    let m: f64 = b.samples[1][..PRE_STIMULUS].iter().sum::<f64>() / PRE_STIMULUS as f64;
    assert!(m.abs() < 1e-10);
    let offset = shape[0] + 3.0 - b.samples[1][0];
    for (raw, c) in shape.iter().zip(&b.samples[1]) {
        assert!((raw + 3.0 - c - offset).abs() < 1e-12);
    }
}

#[test]
fn rejection_keeps_the_boundary() {
    let spike = |v: f64| {
        let mut s = vec![vec![0.0; EPOCH_LEN]; 2];
        s[1][120] = v;
        epoch_from(s)
    };
    let (kept, rejected) = reject_artifacts(vec![spike(0.0), spike(100.0), spike(-101.0), spike(101.0)]);
    assert_eq!(kept.len(), 2);
    assert_eq!(rejected.len(), 2);
}

fn sine_epoch(freq: f64, amp: f64) -> EegEpoch {
    epoch_from(vec![sine(freq, EPOCH_LEN).iter().map(|v| amp * v).collect()])
}

#[test]
fn ten_hz_sinusoid_peaks_at_ten_hz_in_every_time_bin() {
    let map = tfr_hanning(&sine_epoch(10.0, 1.0), FS).unwrap();
    let f10 = map.freqs_hz.iter().position(|&f| f == 10.0).unwrap();
    for t in 0..N_TIMES {
        let peak = (0..N_FREQS).max_by(|&a, &b| map.get(0, a, t).total_cmp(&map.get(0, b, t))).unwrap();
        assert_eq!(peak, f10, "time bin {t}");
    }
}

#[test]
fn tfr_axes_and_trivial_maps() {
    assert_eq!(tfr::frequencies(), (1..=20).map(|k| 2.0 * k as f64).collect::<Vec<_>>());
    assert_eq!(tfr::time_centers_ms(), (1..=15).map(|k| 50.0 * k as f64).collect::<Vec<_>>());
    let zero = tfr_hanning(&epoch_from(vec![vec![0.0; EPOCH_LEN]; 3]), FS).unwrap();
    assert_eq!(zero.power.len(), 3 * N_FREQS * N_TIMES);
    assert!(zero.power.iter().all(|&p| p == 0.0));

    let x = noise(EPOCH_LEN, 9);
    let a = tfr_hanning(&epoch_from(vec![x.clone()]), FS).unwrap();
    let b = tfr_hanning(&epoch_from(vec![x.iter().map(|v| -v).collect()]), FS).unwrap();
    assert_eq!(a.power, b.power);
    assert!(a.power.iter().all(|&p| p >= 0.0));
}

#[test]
fn white_noise_power_scales_with_variance() {
    let total = |sd: f64| -> f64 {
        (0..40)
            .map(|s| {
                let x: Vec<f64> = noise(EPOCH_LEN, 100 + s).iter().map(|v| sd * v).collect();
                tfr_hanning(&epoch_from(vec![x]), FS).unwrap().power.iter().sum::<f64>()
            })
            .sum()
    };
    // Same noise draws, so the ratio is exact up to rounding; the mean level
    // follows the taper-energy normalisation.
    let (p1, p4) = (total(1.0), total(2.0));
    assert!((p4 / p1 / 4.0 - 1.0).abs() < 0.05);
    let per_cell = p1 / (40 * N_FREQS * N_TIMES) as f64;
    assert!((per_cell - 1.0).abs() < 0.2, "mean cell power {per_cell}");
}

#[test]
fn image_is_standardised_and_scale_free() {
    let mut map = tfr_hanning(&epoch_from(vec![noise(EPOCH_LEN, 5), noise(EPOCH_LEN, 6)]), FS).unwrap();
    let img = tfr_to_image(&map);
    let n = img.len() as f64;
    let mean = img.iter().sum::<f64>() / n;
    let sd = (img.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    assert!(mean.abs() < 1e-6 && (sd - 1.0).abs() < 1e-6);
    for p in map.power.iter_mut() {
        *p *= 37.0;
    }
    let scaled = tfr_to_image(&map);
    let diff = img.iter().zip(&scaled).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(diff < 1e-6);
    map.power.iter_mut().for_each(|p| *p = 4.0);
    assert!(tfr_to_image(&map).iter().all(|&v| v == 0.0));
}

#[test]
fn files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let q = |v: f64| v as f32 as f64;
    let x: Vec<f64> = noise(2000, 8).iter().map(|v| q(20.0 * v)).collect();
    let rec = Recording::new(vec![x.clone(), x.iter().map(|v| -v).collect()], FS, vec!["A".into(), "B".into()], vec![
        marker(500, 0),
        marker(1200, 1),
    ])
    .unwrap();
    let stem = dir.path().join("rec");
    eeg::write_recording(&stem, &rec).unwrap();
    assert_eq!(eeg::read_recording(&stem).unwrap(), rec);

    let epochs: Vec<EegEpoch> = epoch_segment(&rec).iter().map(baseline_correct).collect();
    let quantised: Vec<EegEpoch> = epochs
        .iter()
        .map(|e| EegEpoch {
            samples: e.samples.iter().map(|c| c.iter().map(|&v| q(v)).collect()).collect(),
            ..e.clone()
        })
        .collect();
    let stem = dir.path().join("ep");
    eeg::write_epochs(&stem, &quantised, FS, &rec.labels).unwrap();
    let (back, header) = eeg::read_epochs(&stem).unwrap();
    assert_eq!(back, quantised);
    assert_eq!(header.n_channels, 2);

    let images = eeg::epochs_to_images(&back, FS).unwrap();
    let images: Vec<Vec<f64>> = images.iter().map(|i| i.iter().map(|&v| q(v)).collect()).collect();
    let stem = dir.path().join("img");
    eeg::write_images(&stem, &images, &header.epochs, 2).unwrap();
    let (img_back, th) = eeg::read_images(&stem).unwrap();
    assert_eq!(img_back, images);
    assert_eq!(th.dims, [2, 2, N_FREQS, N_TIMES]);
    assert!(eeg::read_recording(&dir.path().join("missing")).is_err());
}
