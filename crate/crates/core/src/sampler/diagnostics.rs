use crate::{Error, Result};

/// How chains are arranged before computing the potential scale reduction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RhatVariant {
    /// Each chain is halved, doubling the number of sequences.
    Split,
    /// Chains are used as given.
    Classic,
}

/// Split-chain potential scale reduction factor.
pub fn gelman_rubin(chains: &[Vec<f64>]) -> Result<f64> {
    gelman_rubin_with(chains, RhatVariant::Split)
}

/// Potential scale reduction `sqrt(1 + B / (n W))`.
///
/// `W` is the mean within-sequence variance and `B / n` the sample variance of
/// sequence means, so the statistic is at least 1 and exactly 1 when all
/// sequences share the same mean. Chains are trimmed to the shortest; with
/// `Split`, an odd middle draw is dropped.
///
/// Returns `NaN` (with a warning) when every sequence has zero variance.
pub fn gelman_rubin_with(chains: &[Vec<f64>], variant: RhatVariant) -> Result<f64> {
    if chains.len() < 2 {
        return Err(Error::Domain("R-hat needs at least two chains".into()));
    }
    let n = chains.iter().map(Vec::len).min().unwrap_or(0);
    if n < 4 {
        return Err(Error::Domain(format!("R-hat needs at least 4 draws per chain, got {n}")));
    }
    let seqs: Vec<&[f64]> = match variant {
        RhatVariant::Classic => chains.iter().map(|c| &c[..n]).collect(),
        RhatVariant::Split => {
            let half = n / 2;
            chains
                .iter()
                .flat_map(|c| [&c[..half], &c[n - half..n]])
                .collect()
        }
    };
    let len = seqs[0].len() as f64;
    let m = seqs.len() as f64;
    let means: Vec<f64> = seqs.iter().map(|s| s.iter().sum::<f64>() / len).collect();
    let vars: Vec<f64> = seqs
        .iter()
        .zip(&means)
        .map(|(s, mu)| s.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / (len - 1.0))
        .collect();
    let grand = means.iter().sum::<f64>() / m;
    let between_over_n = means.iter().map(|mu| (mu - grand).powi(2)).sum::<f64>() / (m - 1.0);
    let within = vars.iter().sum::<f64>() / m;
    if !(within > 0.0) {
        log::warn!("R-hat undefined: zero within-chain variance in every chain");
        return Ok(f64::NAN);
    }
    Ok((1.0 + between_over_n / within).sqrt())
}
