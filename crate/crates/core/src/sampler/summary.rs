use serde::Serialize;

use super::PosteriorDraws;

/// Quantile levels reported per parameter: 95% interval, 80% interval, median.
pub const SUMMARY_PROBS: [f64; 5] = [0.025, 0.1, 0.5, 0.9, 0.975];

/// Type-7 sample quantile of sorted data: with `h = (n - 1) p`,
/// `q = x[floor h] + (h - floor h) (x[floor h + 1] - x[floor h])`.
pub fn quantile_type7(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty sample");
    let h = (sorted.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParamSummary {
    pub name: String,
    pub median: f64,
    pub interval_80: (f64, f64),
    pub interval_95: (f64, f64),
    pub mean: f64,
    pub sd: f64,
}

impl ParamSummary {
    pub fn from_values(name: &str, values: &[f64]) -> Self {
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let q: Vec<f64> = SUMMARY_PROBS
            .iter()
            .map(|&p| quantile_type7(&sorted, p))
            .collect();
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let sd = if values.len() > 1 {
            (values.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Self {
            name: name.to_string(),
            median: q[2],
            interval_80: (q[1], q[3]),
            interval_95: (q[0], q[4]),
            mean,
            sd,
        }
    }

    pub fn covers_95(&self, value: f64) -> bool {
        self.interval_95.0 <= value && value <= self.interval_95.1
    }
}

/// Median and 80%/95% intervals of each parameter, pooled over chains.
pub fn posterior_summary(draws: &PosteriorDraws) -> Vec<ParamSummary> {
    (0..draws.n_params)
        .map(|p| ParamSummary::from_values(&draws.param_names[p], &draws.pooled(p)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_draws_collapse() {
        let s = ParamSummary::from_values("c", &[2.5; 40]);
        assert_eq!(s.median, 2.5);
        assert_eq!(s.interval_80, (2.5, 2.5));
        assert_eq!(s.interval_95, (2.5, 2.5));
    }

    #[test]
    fn one_to_hundred_quantiles() {
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        let s = ParamSummary::from_values("x", &v);
        assert!((s.median - 50.5).abs() < 1e-12);
        assert!((s.interval_95.0 - 3.475).abs() < 1e-12);
        assert!((s.interval_95.1 - 97.525).abs() < 1e-12);
        assert!((s.interval_80.0 - 10.9).abs() < 1e-12);
    }

    #[test]
    fn pooled_summary_ignores_chain_order() {
        let mk = |order: &[usize]| {
            let chains = [[1.0, 5.0, 2.0], [7.0, 3.0, 9.0]];
            let mut values = Vec::new();
            for i in 0..3 {
                for &c in order {
                    values.push(chains[c][i]);
                }
            }
            PosteriorDraws {
                n_kept: 3,
                n_chains: 2,
                n_params: 1,
                param_names: vec!["x".into()],
                values,
                divergent: vec![false; 6],
                chains: vec![],
            }
        };
        assert_eq!(posterior_summary(&mk(&[0, 1])), posterior_summary(&mk(&[1, 0])));
    }
}
