use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{ChainConfig, ChainDiagnostics, PosteriorDraws};
use crate::binio::{read_f64_le, read_json, write_f64_le, write_json};
use crate::{Error, Result};

/// JSON sidecar describing a flat draws file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrawsManifest {
    /// `[kept iterations, chains, parameters]`; the `.f64` file is row-major in
    /// this order, little-endian.
    pub dims: [usize; 3],
    pub param_names: Vec<String>,
    pub config: ChainConfig,
    /// Stream index of each chain's ChaCha8 generator seeded with `config.seed`.
    pub chain_streams: Vec<u64>,
    pub divergent: Vec<bool>,
    pub chains: Vec<ChainDiagnostics>,
}

fn paths(stem: &Path) -> (PathBuf, PathBuf) {
    (stem.with_extension("f64"), stem.with_extension("json"))
}

/// Writes `<stem>.f64` and `<stem>.json`.
pub fn write_draws(stem: &Path, draws: &PosteriorDraws, config: &ChainConfig) -> Result<()> {
    let (bin, json) = paths(stem);
    write_f64_le(&bin, &draws.values)?;
    let manifest = DrawsManifest {
        dims: [draws.n_kept, draws.n_chains, draws.n_params],
        param_names: draws.param_names.clone(),
        config: config.clone(),
        chain_streams: (0..draws.n_chains as u64).collect(),
        divergent: draws.divergent.clone(),
        chains: draws.chains.clone(),
    };
    write_json(&json, &manifest)
}

pub fn read_draws(stem: &Path) -> Result<(PosteriorDraws, ChainConfig)> {
    let (bin, json) = paths(stem);
    let m: DrawsManifest = read_json(&json)?;
    let values = read_f64_le(&bin)?;
    let [n_kept, n_chains, n_params] = m.dims;
    if values.len() != n_kept * n_chains * n_params {
        return Err(Error::Shape {
            expected: format!("{n_kept}x{n_chains}x{n_params} draws"),
            got: values.len().to_string(),
        });
    }
    Ok((
        PosteriorDraws {
            n_kept,
            n_chains,
            n_params,
            param_names: m.param_names,
            values,
            divergent: m.divergent,
            chains: m.chains,
        },
        m.config,
    ))
}
