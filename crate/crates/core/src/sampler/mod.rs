//! Gradient-based MCMC: leapfrog integration, the No-U-Turn sampler with
//! dual-averaging step-size warmup, split-chain R-hat and posterior summaries.

mod diagnostics;
mod fit;
mod io;
mod nuts;
mod summary;

pub use diagnostics::{gelman_rubin, gelman_rubin_with, RhatVariant};
pub use fit::{fit_lba_by_hazard, write_summary_csv, HazardFit, LbaTarget};
pub use io::{read_draws, write_draws, DrawsManifest};
pub use nuts::{leapfrog, nuts_sample, ChainDiagnostics, PhasePoint};
pub use summary::{posterior_summary, quantile_type7, ParamSummary, SUMMARY_PROBS};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// A differentiable log density on an unconstrained space.
pub trait LogDensity: Sync {
    fn dim(&self) -> usize;

    /// Writes the gradient into `grad` and returns the log density, or `None`
    /// when the density is not finite at `x`.
    fn log_density(&self, x: &[f64], grad: &mut [f64]) -> Option<f64>;

    /// Centre of the chain initialisation box.
    fn initial_point(&self) -> Vec<f64> {
        vec![0.0; self.dim()]
    }

    /// Maps an unconstrained point to the reported parameter scale.
    fn constrain(&self, x: &[f64]) -> Vec<f64> {
        x.to_vec()
    }

    fn param_names(&self) -> Vec<String> {
        (0..self.dim()).map(|i| format!("x{i}")).collect()
    }
}

/// Sampler settings shared by all chains.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChainConfig {
    /// Total iterations per chain, warmup included.
    pub n_iterations: usize,
    pub n_warmup: usize,
    pub thinning: usize,
    pub n_chains: usize,
    pub target_accept: f64,
    pub max_tree_depth: usize,
    /// Half-width of the uniform jitter around [`LogDensity::initial_point`].
    pub init_radius: f64,
    pub seed: u64,
}

impl ChainConfig {
    /// 4 chains x 1000 iterations with 500 warmup.
    pub fn desk() -> Self {
        Self {
            n_iterations: 1000,
            n_warmup: 500,
            thinning: 1,
            n_chains: 4,
            target_accept: 0.8,
            max_tree_depth: 10,
            init_radius: 1.0,
            seed: 1,
        }
    }

    /// 4 chains x 4000 iterations with 2000 warmup.
    pub fn paper() -> Self {
        Self {
            n_iterations: 4000,
            n_warmup: 2000,
            ..Self::desk()
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_warmup >= self.n_iterations {
            return Err(Error::Config(format!(
                "n_warmup ({}) must be below n_iterations ({})",
                self.n_warmup, self.n_iterations
            )));
        }
        if self.thinning == 0 {
            return Err(Error::Config("thinning must be at least 1".into()));
        }
        if self.n_chains < 2 {
            return Err(Error::Config("R-hat needs at least two chains".into()));
        }
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            return Err(Error::Config("target_accept must lie in (0, 1)".into()));
        }
        if self.max_tree_depth == 0 {
            return Err(Error::Config("max_tree_depth must be at least 1".into()));
        }
        Ok(())
    }

    /// Draws kept per chain after warmup and thinning.
    pub fn n_kept(&self) -> usize {
        (self.n_iterations - self.n_warmup).div_ceil(self.thinning)
    }
}

impl Default for ChainConfig {
    fn default() -> Self {
        Self::desk()
    }
}

/// Post-warmup draws on the constrained scale.
///
/// Layout is `[kept iteration][chain][parameter]`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorDraws {
    pub n_kept: usize,
    pub n_chains: usize,
    pub n_params: usize,
    pub param_names: Vec<String>,
    pub values: Vec<f64>,
    /// `[kept iteration][chain]` divergence flags.
    pub divergent: Vec<bool>,
    pub chains: Vec<ChainDiagnostics>,
}

impl PosteriorDraws {
    pub fn get(&self, iter: usize, chain: usize, param: usize) -> f64 {
        self.values[(iter * self.n_chains + chain) * self.n_params + param]
    }

    /// Per-chain series of one parameter.
    pub fn chain_series(&self, param: usize) -> Vec<Vec<f64>> {
        (0..self.n_chains)
            .map(|c| (0..self.n_kept).map(|i| self.get(i, c, param)).collect())
            .collect()
    }

    /// All draws of one parameter, chain by chain.
    pub fn pooled(&self, param: usize) -> Vec<f64> {
        self.chain_series(param).concat()
    }

    pub fn divergent_fraction(&self) -> f64 {
        if self.divergent.is_empty() {
            return 0.0;
        }
        self.divergent.iter().filter(|&&d| d).count() as f64 / self.divergent.len() as f64
    }

    /// More than 10% of post-warmup transitions diverged.
    pub fn failed(&self) -> bool {
        self.divergent_fraction() > 0.10
    }

    /// Split R-hat for every parameter.
    pub fn r_hat(&self) -> Vec<f64> {
        (0..self.n_params)
            .map(|p| gelman_rubin(&self.chain_series(p)).unwrap_or(f64::NAN))
            .collect()
    }
}
