//! Alert-threshold policy: (hazard type, predicted operator performance) to an
//! ordinal detector sensitivity, with a debounced online resolver.
//!
//! Level 1 is the most sensitive setting (most alarms). A table is only
//! accepted if, for every hazard, a worse predicted performance never gets a
//! less sensitive level.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::binio::{read_json, write_json};
use crate::{Error, HazardType, PerformanceLevel, Result};

pub const MIN_LEVEL: u8 = 1;
pub const MAX_LEVEL: u8 = 5;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlertPolicyTable {
    pub levels: BTreeMap<HazardType, BTreeMap<PerformanceLevel, u8>>,
    /// Consecutive identical predictions required before the level moves.
    pub smoothing_window: usize,
}

impl Default for AlertPolicyTable {
    /// Three levels. Structural hazards get the most sensitive detector and
    /// edge-protection hazards the least; within a hazard, lower predicted
    /// performance means a more sensitive detector.
    fn default() -> Self {
        use PerformanceLevel::{High, Low, Medium};
        let row = |low, med, high| BTreeMap::from([(Low, low), (Medium, med), (High, high)]);
        Self {
            levels: BTreeMap::from([
                (HazardType::SI, row(1, 1, 2)),
                (HazardType::EL, row(1, 2, 2)),
                (HazardType::LEP, row(2, 2, 3)),
            ]),
            smoothing_window: 3,
        }
    }
}

impl AlertPolicyTable {
    /// Every cell present and in range, and `Low <= Medium <= High` per hazard.
    pub fn validate(&self) -> Result<()> {
        if self.smoothing_window == 0 {
            return Err(Error::Config("smoothing window must be at least 1".into()));
        }
        for h in HazardType::ALL {
            let row = self
                .levels
                .get(&h)
                .ok_or_else(|| Error::Config(format!("policy table has no row for {h}")))?;
            let mut prev: Option<(PerformanceLevel, u8)> = None;
            for p in [PerformanceLevel::Low, PerformanceLevel::Medium, PerformanceLevel::High] {
                let l = *row
                    .get(&p)
                    .ok_or_else(|| Error::Config(format!("policy table has no cell for ({h}, {p})")))?;
                if !(MIN_LEVEL..=MAX_LEVEL).contains(&l) {
                    return Err(Error::Config(format!(
                        "level {l} for ({h}, {p}) outside {MIN_LEVEL}..={MAX_LEVEL}"
                    )));
                }
                if let Some((q, lq)) = prev {
                    if l < lq {
                        return Err(Error::Config(format!(
                            "{h}: level for {p} ({l}) is more sensitive than for {q} ({lq})"
                        )));
                    }
                }
                prev = Some((p, l));
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let t: Self = read_json(path)?;
        t.validate()?;
        Ok(t)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.validate()?;
        write_json(path, self)
    }
}

/// Pure lookup; the table must have passed [`AlertPolicyTable::validate`].
pub fn resolve_threshold(table: &AlertPolicyTable, hazard: HazardType, level: PerformanceLevel) -> Result<u8> {
    table
        .levels
        .get(&hazard)
        .and_then(|r| r.get(&level))
        .copied()
        .ok_or_else(|| Error::Domain(format!("no policy cell for ({hazard}, {level})")))
}

/// Debounced resolver state.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PolicyState {
    pub level: u8,
    last: Option<(HazardType, PerformanceLevel)>,
    run: usize,
}

impl PolicyState {
    /// Starts at the level the table assigns to `initial`, with no run
    /// history.
    pub fn new(table: &AlertPolicyTable, initial: (HazardType, PerformanceLevel)) -> Result<Self> {
        Ok(Self {
            level: resolve_threshold(table, initial.0, initial.1)?,
            last: None,
            run: 0,
        })
    }

    /// Feeds one prediction; the level moves to the table value only once the
    /// same (hazard, performance) pair has been seen `window` times in a row.
    pub fn observe(&mut self, table: &AlertPolicyTable, hazard: HazardType, level: PerformanceLevel) -> Result<u8> {
        let key = (hazard, level);
        if self.last == Some(key) {
            self.run += 1;
        } else {
            self.last = Some(key);
            self.run = 1;
        }
        if self.run >= table.smoothing_window {
            self.level = resolve_threshold(table, hazard, level)?;
        }
        Ok(self.level)
    }
}

/// Resolved level after each prediction in `stream`.
pub fn update_on_prediction(
    table: &AlertPolicyTable,
    state: &mut PolicyState,
    stream: &[(HazardType, PerformanceLevel)],
) -> Result<Vec<u8>> {
    stream.iter().map(|&(h, p)| state.observe(table, h, p)).collect()
}

pub const PREDICTIONS_HEADER: [&str; 2] = ["hazard_type", "predicted_level"];

pub fn read_predictions_csv(path: &Path) -> Result<Vec<(HazardType, PerformanceLevel)>> {
    if !path.exists() {
        return Err(Error::MissingInput(path.to_path_buf()));
    }
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != PREDICTIONS_HEADER {
        return Err(Error::Parse(format!(
            "{}: expected header {:?}, found {:?}",
            path.display(),
            PREDICTIONS_HEADER,
            header
        )));
    }
    r.records()
        .map(|rec| {
            let rec = rec?;
            Ok((rec[0].parse()?, rec[1].parse()?))
        })
        .collect()
}

pub fn write_predictions_csv(path: &Path, stream: &[(HazardType, PerformanceLevel)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(PREDICTIONS_HEADER)?;
    for (h, p) in stream {
        w.write_record([h.to_string(), p.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// `index,hazard_type,predicted_level,resolved_level,changed`.
pub fn write_resolved_csv(
    path: &Path,
    stream: &[(HazardType, PerformanceLevel)],
    resolved: &[u8],
    initial: u8,
) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["index", "hazard_type", "predicted_level", "resolved_level", "changed"])?;
    let mut prev = initial;
    for (i, ((h, p), &l)) in stream.iter().zip(resolved).enumerate() {
        w.write_record([
            i.to_string(),
            h.to_string(),
            p.to_string(),
            l.to_string(),
            u8::from(l != prev).to_string(),
        ])?;
        prev = l;
    }
    w.flush()?;
    Ok(())
}
