use std::collections::BTreeMap;

use hazalert::eeg::{
    baseline_correct, epochs_to_images, read_epochs, read_recording, write_epochs, write_recording, EegEpoch,
    POST_STIMULUS, PRE_STIMULUS,
};
use hazalert::lba::{choice_probability, read_trials_csv};
use hazalert::synth::{
    channel_labels, gen_behavior_matrix, gen_lba_dataset, gen_matched_columns, gen_synthetic_epochs,
    gen_synthetic_recording, write_lba_dataset, BehaviorSpec, EegSynthSpec, SynthSpec,
};
use hazalert::{HazardType, PerformanceLevel};

#[test]
fn lba_counts_are_exact() {
    let spec = SynthSpec::default();
    let data = gen_lba_dataset(&spec).unwrap();
    for h in &data.provenance.hazards {
        let trials: Vec<_> = data.trials.iter().filter(|t| t.hazard_type == h.hazard_type).collect();
        assert_eq!(trials.iter().filter(|t| t.correct).count(), spec.trial_counts[&h.hazard_type]);
        assert_eq!(h.n_correct, spec.trial_counts[&h.hazard_type]);
        assert_eq!(trials.len(), h.n_total);
        // The last simulated trial is the one that completed the quota.
        assert!(trials.last().unwrap().correct);
    }
}

#[test]
fn simulated_accuracy_matches_choice_probability() {
    let spec = SynthSpec {
        trial_counts: BTreeMap::from([(HazardType::EL, 6000), (HazardType::SI, 6000)]),
        ..SynthSpec::default()
    };
    let data = gen_lba_dataset(&spec).unwrap();
    for h in &data.provenance.hazards {
        let acc = h.n_correct as f64 / h.n_total as f64;
        let p = choice_probability(&spec.lba[&h.hazard_type]);
        assert!((acc - p).abs() < 0.02, "{}: {acc} vs {p}", h.hazard_type);
        assert_eq!(h.choice_probability, p);
    }
}

#[test]
fn outputs_are_byte_deterministic_and_readable() {
    let spec = SynthSpec::default();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    write_lba_dataset(a.path(), &gen_lba_dataset(&spec).unwrap()).unwrap();
    write_lba_dataset(b.path(), &gen_lba_dataset(&spec).unwrap()).unwrap();
    for f in ["trials.csv", "lba_truth.json"] {
        assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap(), "{f}");
    }
    let back = read_trials_csv(&a.path().join("trials.csv")).unwrap();
    assert_eq!(back.len(), gen_lba_dataset(&spec).unwrap().trials.len());

    let other = gen_lba_dataset(&SynthSpec { seed: 1, ..spec }).unwrap();
    assert_ne!(other.trials, gen_lba_dataset(&SynthSpec::default()).unwrap().trials);
}

fn small_eeg() -> EegSynthSpec {
    EegSynthSpec {
        n_channels: 4,
        ..EegSynthSpec::default()
    }
}

#[test]
fn recording_and_epochs_survive_the_file_formats() {
    let spec = small_eeg();
    let rec = gen_synthetic_recording(&spec, HazardType::LEP, 3, 5).unwrap();
    assert_eq!(rec.markers.len(), 9);
    assert_eq!(rec.labels, channel_labels(4));
    let dir = tempfile::tempdir().unwrap();
    write_recording(&dir.path().join("rec"), &rec).unwrap();
    assert_eq!(read_recording(&dir.path().join("rec")).unwrap(), rec);

    let epochs = &gen_synthetic_epochs(&spec, 2, 5).unwrap()[&HazardType::EL];
    write_epochs(&dir.path().join("ep"), epochs, spec.fs, &channel_labels(4)).unwrap();
    let (back, header) = read_epochs(&dir.path().join("ep")).unwrap();
    assert_eq!(header.fs, spec.fs);
    assert_eq!(back.len(), epochs.len());
    for (x, y) in back.iter().zip(epochs) {
        assert_eq!((x.label, x.hazard_type, &x.trial_id), (y.label, y.hazard_type, &y.trial_id));
        for (cx, cy) in x.samples.iter().zip(&y.samples) {
            for (u, v) in cx.iter().zip(cy) {
                assert!((u - v).abs() <= 1e-6 * v.abs().max(1.0));
            }
        }
    }
}

#[test]
fn classes_are_balanced_per_task() {
    let sets = gen_synthetic_epochs(&small_eeg(), 7, 3).unwrap();
    assert_eq!(sets.len(), 3);
    for epochs in sets.values() {
        for c in PerformanceLevel::ALL {
            assert_eq!(epochs.iter().filter(|e| e.label == c).count(), 7);
        }
    }
}

#[test]
fn silence_in_silence_out() {
    let spec = EegSynthSpec {
        noise_sd_uv: 0.0,
        amplitudes_uv: [0.0; 3],
        blink_amplitude_uv: 0.0,
        dc_offset_uv: 0.0,
        ..small_eeg()
    };
    let rec = gen_synthetic_recording(&spec, HazardType::SI, 2, 1).unwrap();
    assert!(rec.samples.iter().flatten().all(|&v| v == 0.0));
    for e in gen_synthetic_epochs(&spec, 2, 1).unwrap().values().flatten() {
        assert!(e.samples.iter().all(|c| c[PRE_STIMULUS..].iter().all(|&v| v == 0.0)));
        assert_eq!(e.samples[0].len(), PRE_STIMULUS + POST_STIMULUS);
    }
}

fn images(epochs: &[EegEpoch], fs: f64) -> Vec<Vec<f64>> {
    let corrected: Vec<EegEpoch> = epochs.iter().map(baseline_correct).collect();
    epochs_to_images(&corrected, fs).unwrap()
}

struct Centroids(Vec<Vec<f64>>);

impl Centroids {
    fn fit(xs: &[Vec<f64>], ys: &[usize]) -> Self {
        let d = xs[0].len();
        let mut c = vec![vec![0.0; d]; 3];
        let mut n = [0.0; 3];
        for (x, &y) in xs.iter().zip(ys) {
            n[y] += 1.0;
            for (a, b) in c[y].iter_mut().zip(x) {
                *a += b;
            }
        }
        for (row, k) in c.iter_mut().zip(n) {
            row.iter_mut().for_each(|v| *v /= k);
        }
        Self(c)
    }

    fn accuracy(&self, xs: &[Vec<f64>], ys: &[usize]) -> f64 {
        let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>();
        let hits = xs
            .iter()
            .zip(ys)
            .filter(|(x, &y)| {
                let best = (0..3).min_by(|&i, &j| dist(x, &self.0[i]).total_cmp(&dist(x, &self.0[j]))).unwrap();
                best == y
            })
            .count();
        hits as f64 / xs.len() as f64
    }
}

#[test]
fn tfr_images_carry_the_class_and_the_task_shift() {
    let spec = EegSynthSpec {
        n_channels: 8,
        ..EegSynthSpec::default()
    };
    let sets = gen_synthetic_epochs(&spec, 40, 7).unwrap();
    let prep = |t: HazardType| {
        let e = &sets[&t];
        let ys: Vec<usize> = e.iter().map(|e| e.label.index()).collect();
        (images(e, spec.fs), ys)
    };
    let (el_x, el_y) = prep(HazardType::EL);
    let (si_x, si_y) = prep(HazardType::SI);
    let half = el_x.len() / 2;
    let model = Centroids::fit(&el_x[..half], &el_y[..half]);
    let within = model.accuracy(&el_x[half..], &el_y[half..]);
    let cross = model.accuracy(&si_x[half..], &si_y[half..]);
    assert!(within >= 0.9, "within-task accuracy {within}");
    assert!(within - cross >= 0.15, "within {within}, cross {cross}");
}

#[test]
fn behavior_rows_are_clipped_to_unit_interval() {
    let spec = BehaviorSpec {
        sd: [0.4; 3],
        ..BehaviorSpec::three_profiles()
    };
    let (m, truth) = gen_behavior_matrix(&spec, 2024).unwrap();
    assert_eq!(m.len(), 70);
    assert_eq!(truth.len(), 70);
    let flat: Vec<f64> = m.rows.iter().flatten().copied().collect();
    assert!(flat.iter().all(|v| (0.0..=1.0).contains(v)));
    assert!(flat.iter().any(|&v| v == 0.0 || v == 1.0), "wide sd should hit a bound");
    assert_eq!(m.participant_ids[0], "P001");
}

#[test]
fn matched_columns_hit_the_moments() {
    let means = [0.6605, 0.6436, 0.5853];
    let sds = [0.0987, 0.0892, 0.1218];
    let cols = gen_matched_columns(&means, &sds, 70, 3, false).unwrap();
    for ((c, m), s) in cols.iter().zip(means).zip(sds) {
        let n = c.len() as f64;
        let mu = c.iter().sum::<f64>() / n;
        let sd = (c.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        assert!((mu - m).abs() < 1e-12 && (sd - s).abs() < 1e-12);
    }
    assert_ne!(cols, gen_matched_columns(&means, &sds, 70, 4, false).unwrap());
    assert!(gen_matched_columns(&means, &sds, 1, 3, false).is_err());
}

#[test]
fn colliding_bands_are_a_config_error() {
    let mut spec = EegSynthSpec::default();
    spec.task_offsets_hz.insert(HazardType::LEP, 7.0);
    assert!(matches!(spec.validate(), Err(hazalert::Error::Config(_))));
    assert!(gen_synthetic_epochs(&spec, 1, 1).is_err());
}
