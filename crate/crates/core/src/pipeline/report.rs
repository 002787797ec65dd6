//! Human-readable roll-up of a full run.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{PipelineConfig, Stage, StageReport};
use crate::continual::RunManifest;
use crate::binio::read_json;
use crate::Result;

fn fmt_value(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e12 {
        format!("{v:.0}")
    } else if v != 0.0 && v.abs() < 1e-3 {
        format!("{v:.4e}")
    } else {
        format!("{v:.4}")
    }
}

/// `stage,metric,value` rows in stage order.
pub fn write_metrics_csv(path: &Path, reports: &[StageReport]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["stage", "metric", "value"])?;
    for r in reports {
        for (k, v) in &r.metrics {
            w.write_record([r.stage.as_str(), k, &fmt_value(*v)])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_markdown_report(path: &Path, cfg: &PipelineConfig, reports: &[StageReport]) -> Result<()> {
    let mut s = String::new();
    let _ = writeln!(s, "# Pipeline report\n");
    let _ = writeln!(s, "Master seed {}, preset `{:?}`.\n", cfg.seed, cfg.preset);

    let manifest = cfg.stage_dir(Stage::Continual).join("manifest.json");
    if manifest.exists() {
        let m: RunManifest = read_json(&manifest)?;
        let m = m.matrix;
        let pairs: Vec<String> = m
            .sequential
            .values()
            .next()
            .map(|c| c.iter().map(|p| p.label()).collect())
            .unwrap_or_default();
        let _ = writeln!(s, "## Continual learning\n");
        let _ = writeln!(
            s,
            "Mean test accuracy over {} runs; sequential cells are accuracy on the second task.\n",
            cfg.continual.seeds.len()
        );
        let mut header = vec!["".to_string()];
        header.extend(m.tasks.iter().map(|t| t.to_string()));
        header.extend(pairs.iter().cloned());
        let _ = writeln!(s, "| {} |", header.join(" | "));
        let _ = writeln!(s, "|{}", "---|".repeat(header.len()));
        let mut row = vec!["per-task".to_string()];
        row.extend(m.tasks.iter().map(|t| format!("{:.3}", m.per_task[t].mean)));
        row.extend(pairs.iter().map(|_| String::new()));
        let _ = writeln!(s, "| {} |", row.join(" | "));
        for (strategy, cells) in &m.sequential {
            let mut row = vec![strategy.to_string()];
            row.extend(m.tasks.iter().map(|_| String::new()));
            row.extend(cells.iter().map(|c| format!("{:.3}", c.on_second.mean)));
            let _ = writeln!(s, "| {} |", row.join(" | "));
        }
        let _ = writeln!(s);
    }

    for r in reports {
        let _ = writeln!(s, "## {}\n", r.stage);
        if !r.seeds.is_empty() {
            let seeds: Vec<String> = r.seeds.iter().map(|(k, v)| format!("{k}={v}")).collect();
            let _ = writeln!(s, "Seeds: {}.\n", seeds.join(", "));
        }
        if !r.metrics.is_empty() {
            let _ = writeln!(s, "| metric | value |\n|---|---|");
            for (k, v) in &r.metrics {
                let _ = writeln!(s, "| {k} | {} |", fmt_value(*v));
            }
            let _ = writeln!(s);
        }
        for n in &r.notes {
            let _ = writeln!(s, "- {n}");
        }
        if !r.notes.is_empty() {
            let _ = writeln!(s);
        }
    }
    fs::write(path, s)?;
    Ok(())
}
