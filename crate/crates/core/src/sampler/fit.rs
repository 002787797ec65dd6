use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;

use super::{nuts_sample, posterior_summary, ChainConfig, LogDensity, ParamSummary, PosteriorDraws};
use crate::lba::{LbaPosterior, Trial, N_PARAMS, PARAM_NAMES};
use crate::{HazardType, Result};

/// LBA posterior over correct-response trials, exposed to the sampler.
#[derive(Debug, Clone)]
pub struct LbaTarget {
    pub posterior: LbaPosterior,
}

impl LbaTarget {
    pub fn new(trials: &[Trial]) -> Result<Self> {
        Ok(Self {
            posterior: LbaPosterior::new(trials)?,
        })
    }
}

impl LogDensity for LbaTarget {
    fn dim(&self) -> usize {
        N_PARAMS
    }

    fn log_density(&self, x: &[f64], grad: &mut [f64]) -> Option<f64> {
        self.posterior.log_posterior(x, grad).ok().filter(|v| v.is_finite())
    }

    fn initial_point(&self) -> Vec<f64> {
        self.posterior.prior_mode().to_vec()
    }

    fn constrain(&self, x: &[f64]) -> Vec<f64> {
        self.posterior.constrain(x).to_vec().to_vec()
    }

    fn param_names(&self) -> Vec<String> {
        PARAM_NAMES.iter().map(|s| s.to_string()).collect()
    }
}

/// Posterior fit for one hazard type.
#[derive(Debug, Clone)]
pub struct HazardFit {
    pub hazard_type: HazardType,
    pub n_trials: usize,
    pub rt_min: f64,
    pub draws: PosteriorDraws,
    pub r_hat: Vec<f64>,
    pub summary: Vec<ParamSummary>,
}

impl HazardFit {
    pub fn max_r_hat(&self) -> f64 {
        self.r_hat.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Fits each hazard type independently.
///
/// Error trials are dropped; a hazard type with no correct trials is skipped with
/// a warning. Every group uses the same `config` (and so the same seed), which
/// makes groups with identical data produce identical results.
pub fn fit_lba_by_hazard(
    trials: &[Trial],
    config: &ChainConfig,
) -> Result<BTreeMap<HazardType, HazardFit>> {
    config.validate()?;
    let mut out = BTreeMap::new();
    for hazard in HazardType::ALL {
        let group: Vec<Trial> = trials
            .iter()
            .filter(|t| t.hazard_type == hazard && t.correct)
            .cloned()
            .collect();
        if group.is_empty() {
            log::warn!("no correct trials for hazard type {hazard}; skipped");
            continue;
        }
        let target = LbaTarget::new(&group)?;
        log::info!("fitting {hazard}: {} correct trials", group.len());
        let draws = nuts_sample(&target, config)?;
        let r_hat = draws.r_hat();
        let summary = posterior_summary(&draws);
        out.insert(
            hazard,
            HazardFit {
                hazard_type: hazard,
                n_trials: group.len(),
                rt_min: target.posterior.rt_min(),
                draws,
                r_hat,
                summary,
            },
        );
    }
    Ok(out)
}

#[derive(Serialize)]
struct SummaryRow<'a> {
    hazard_type: &'a str,
    param: &'a str,
    median: f64,
    q025: f64,
    q10: f64,
    q90: f64,
    q975: f64,
    r_hat: f64,
}

/// One row per (hazard type, parameter): median, 80%/95% bounds and R-hat.
pub fn write_summary_csv(path: &Path, fits: &BTreeMap<HazardType, HazardFit>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for fit in fits.values() {
        for (s, r) in fit.summary.iter().zip(&fit.r_hat) {
            w.serialize(SummaryRow {
                hazard_type: fit.hazard_type.as_str(),
                param: &s.name,
                median: s.median,
                q025: s.interval_95.0,
                q10: s.interval_80.0,
                q90: s.interval_80.1,
                q975: s.interval_95.1,
                r_hat: *r,
            })?;
        }
    }
    w.flush()?;
    Ok(())
}
