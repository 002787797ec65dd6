use std::fs;
use std::path::Path;

use hazalert::pipeline::{
    anova_pass_rate, run_stage, PipelineConfig, Preset, Regeneration, Stage, NEAR_EQUAL_RT_MEANS,
    NEAR_EQUAL_RT_SDS, REPORTED_ACCURACY_MEANS, REPORTED_ACCURACY_SDS,
};
use hazalert::policy::write_predictions_csv;
use hazalert::{Error, HazardType, PerformanceLevel};

#[test]
fn stage_names_round_trip() {
    for s in Stage::ALL {
        assert_eq!(s.as_str().parse::<Stage>().unwrap(), s);
        assert_eq!(s.to_string(), s.as_str());
    }
    assert!(matches!("fit_lba".parse::<Stage>(), Err(Error::Parse(_))));
    assert_eq!(Stage::FULL_RUN.len(), Stage::ALL.len());
}

#[test]
fn partial_config_keeps_defaults_and_rejects_unknown_fields() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("c.json");
    fs::write(&p, r#"{"seed": 5, "lpa_profiles": 2, "train": {"max_epochs": 4}}"#).unwrap();
    let cfg = PipelineConfig::load(&p).unwrap();
    assert_eq!(cfg.seed, 5);
    assert_eq!(cfg.lpa_profiles, 2);
    assert_eq!(cfg.train.max_epochs, 4);
    assert_eq!(cfg.chains, PipelineConfig::default().chains);

    fs::write(&p, r#"{"sed": 5}"#).unwrap();
    assert!(PipelineConfig::load(&p).is_err());
}

#[test]
fn master_seed_rederives_every_stage_seed() {
    let a = PipelineConfig::default().with_seed(100);
    let b = PipelineConfig::default().with_seed(101);
    assert_eq!(a.synth.seed, 100);
    assert_ne!(a.chains.seed, b.chains.seed);
    assert_ne!(a.lpa_seed, b.lpa_seed);
    assert_ne!(a.continual.seeds, b.continual.seeds);
    assert_eq!(a.continual.seeds.len(), 3);
    let paper = a.clone().with_preset(Preset::Paper);
    assert_eq!(paper.chains.seed, a.chains.seed);
    assert!(paper.chains.n_warmup > a.chains.n_warmup);
}

#[test]
fn missing_explicit_input_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = PipelineConfig {
        out_dir: dir.path().join("out"),
        ..PipelineConfig::default()
    };
    cfg.inputs.behavior_csv = Some(dir.path().join("nope.csv"));
    assert!(matches!(run_stage(&cfg, Stage::FitLpa), Err(Error::MissingInput(_))));
    // Without a synth stage the implicit input is missing too.
    cfg.inputs.behavior_csv = None;
    assert!(run_stage(&cfg, Stage::FitLpa).is_err());
}

fn fast_run(out: &Path, predictions: &Path) -> PipelineConfig {
    let mut cfg = PipelineConfig {
        out_dir: out.to_path_buf(),
        anova_seeds: 20,
        ..PipelineConfig::default()
    };
    cfg.inputs.predictions_csv = Some(predictions.to_path_buf());
    for s in [Stage::Synth, Stage::FitLpa, Stage::Stats, Stage::Policy] {
        run_stage(&cfg, s).unwrap();
    }
    cfg
}

fn files(dir: &Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    for e in fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(files(&p));
        } else {
            out.push(p);
        }
    }
    out.sort();
    out
}

#[test]
fn fast_stages_are_byte_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let pred = dir.path().join("pred.csv");
    let mut stream = vec![(HazardType::EL, PerformanceLevel::High); 4];
    stream.extend([(HazardType::SI, PerformanceLevel::Low); 4]);
    write_predictions_csv(&pred, &stream).unwrap();
    let a = fast_run(&dir.path().join("a"), &pred);
    let b = fast_run(&dir.path().join("b"), &pred);

    let fa = files(&a.out_dir);
    let fb = files(&b.out_dir);
    assert_eq!(fa.len(), fb.len());
    assert!(fa.iter().any(|p| p.ends_with("fit-lpa/assignments.csv")));
    for (x, y) in fa.iter().zip(&fb) {
        assert_eq!(x.strip_prefix(&a.out_dir).unwrap(), y.strip_prefix(&b.out_dir).unwrap());
        if x.file_name().unwrap() == "timing.json" {
            continue;
        }
        assert!(fs::read(x).unwrap() == fs::read(y).unwrap(), "{} differs", x.display());
    }

    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(a.stage_dir(Stage::Policy).join("report.json")).unwrap()).unwrap();
    assert_eq!(report["metrics"]["level_changes"], 1.0);
    let lpa: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(a.stage_dir(Stage::FitLpa).join("report.json")).unwrap()).unwrap();
    assert!(lpa["metrics"]["assignment_accuracy"].as_f64().unwrap() >= 0.95);
}

#[test]
fn regenerated_samples_separate_accuracy_but_not_rt() {
    let reject = anova_pass_rate(
        &REPORTED_ACCURACY_MEANS,
        &REPORTED_ACCURACY_SDS,
        70,
        40,
        Regeneration::Matched { clip: true },
        |p| p < 0.01,
    )
    .unwrap();
    assert!(reject >= 0.95, "{reject}");
    let retain = anova_pass_rate(
        &NEAR_EQUAL_RT_MEANS,
        &NEAR_EQUAL_RT_SDS,
        70,
        40,
        Regeneration::Matched { clip: false },
        |p| p > 0.05,
    )
    .unwrap();
    assert!(retain >= 0.90, "{retain}");
}
