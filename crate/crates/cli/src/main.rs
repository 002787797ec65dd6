use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, ValueEnum};
use hazalert::pipeline::{self, PipelineConfig, Preset, Stage};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum StageArg {
    Synth,
    FitLba,
    FitLpa,
    Stats,
    Preprocess,
    Tfr,
    Train,
    Continual,
    Policy,
    /// Every stage in pipeline order, plus report.md and report.csv.
    All,
}

impl StageArg {
    fn stage(self) -> Option<Stage> {
        Some(match self {
            StageArg::Synth => Stage::Synth,
            StageArg::FitLba => Stage::FitLba,
            StageArg::FitLpa => Stage::FitLpa,
            StageArg::Stats => Stage::Stats,
            StageArg::Preprocess => Stage::Preprocess,
            StageArg::Tfr => Stage::Tfr,
            StageArg::Train => Stage::Train,
            StageArg::Continual => Stage::Continual,
            StageArg::Policy => Stage::Policy,
            StageArg::All => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum PresetArg {
    Desk,
    Paper,
}

/// Hazard-alert analysis pipeline: synthetic data, LBA and profile fits,
/// EEG classification, continual learning and the alert policy.
#[derive(Debug, Parser)]
#[command(name = "hazalert", version)]
struct Cli {
    /// JSON configuration; omitted fields keep their defaults.
    #[arg(long)]
    config: Option<PathBuf>,

    #[arg(long, value_enum, default_value = "all")]
    stage: StageArg,

    /// Master seed; rederives every stage seed.
    #[arg(long)]
    seed: Option<u64>,

    /// Sampler budget.
    #[arg(long, value_enum)]
    preset: Option<PresetArg>,

    /// Output directory (overrides the config).
    #[arg(long)]
    out: Option<PathBuf>,

    /// Print the resolved configuration as JSON and exit.
    #[arg(long)]
    print_config: bool,
}

fn resolve_config(cli: &Cli) -> anyhow::Result<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg = cfg.with_seed(s);
    }
    if let Some(p) = cli.preset {
        cfg = cfg.with_preset(match p {
            PresetArg::Desk => Preset::Desk,
            PresetArg::Paper => Preset::Paper,
        });
    }
    if let Some(o) = &cli.out {
        cfg.out_dir = o.clone();
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> anyhow::Result<()> {
    let cfg = resolve_config(cli)?;
    if cli.print_config {
        println!("{}", serde_json::to_string_pretty(&cfg)?);
        return Ok(());
    }
    match cli.stage.stage() {
        Some(stage) => {
            let report = pipeline::run_stage(&cfg, stage)?;
            for (k, v) in &report.metrics {
                println!("{stage}\t{k}\t{v}");
            }
            for n in &report.notes {
                eprintln!("note: {n}");
            }
            if stage == Stage::FitLba {
                print_summary(&cfg.stage_dir(stage).join("summary.csv"))?;
            }
        }
        None => {
            pipeline::run_all(&cfg)?;
            println!("{}", cfg.out_dir.join("report.md").display());
        }
    }
    Ok(())
}

/// Posterior summary as an aligned table on stderr, so stdout stays
/// machine-readable.
fn print_summary(path: &Path) -> anyhow::Result<()> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let rows: Vec<Vec<String>> = text
        .lines()
        .map(|l| {
            l.split(',')
                .map(|c| c.parse::<f64>().map_or_else(|_| c.to_string(), |v| format!("{v:.3}")))
                .collect()
        })
        .collect();
    let n_cols = rows.first().map_or(0, Vec::len);
    let widths: Vec<usize> = (0..n_cols)
        .map(|c| rows.iter().map(|r| r.get(c).map_or(0, |s| s.len())).max().unwrap_or(0))
        .collect();
    for r in &rows {
        let cells: Vec<String> = r.iter().zip(&widths).map(|(s, w)| format!("{s:>w$}")).collect();
        eprintln!("{}", cells.join("  "));
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    // clap exits with status 2 on usage errors.
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
