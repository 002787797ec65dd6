//! Classical tests: one-way ANOVA, Tukey HSD (Tukey–Kramer) and one-sample
//! Kolmogorov–Smirnov.
//!
//! Tail probabilities are computed by adaptive quadrature rather than table lookup:
//!
//! - F: `P(F > f) = I_x(d2/2, d1/2)` with `x = d2 / (d2 + d1 f)`, the regularised
//!   incomplete beta integral evaluated numerically.
//! - Studentized range: `P(Q <= q) = ∫ f_s(s) W(q s) ds`, where
//!   `W(w) = k ∫ phi(z) [Phi(z) - Phi(z - w)]^(k-1) dz` and `s` is the
//!   `chi_nu / sqrt(nu)` scale variable.
//! - KS: asymptotic Kolmogorov distribution of `sqrt(n) D`.

pub mod quad;

use serde::Serialize;
use statrs::function::erf::erfc_inv;
use statrs::function::gamma::ln_gamma;

use crate::lba::{std_normal_cdf, std_normal_pdf};
use crate::{Error, Result};

const QUAD_TOL: f64 = 1e-8;
const SERIES_TOL: f64 = 1e-10;

/// Labelled groups of real measurements.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupedSample {
    pub groups: Vec<(String, Vec<f64>)>,
}

impl GroupedSample {
    pub fn new(groups: Vec<(String, Vec<f64>)>) -> Result<Self> {
        if groups.len() < 2 {
            return Err(Error::Domain("need at least two groups".into()));
        }
        if let Some((label, _)) = groups.iter().find(|(_, v)| v.len() < 2) {
            return Err(Error::Domain(format!("group `{label}` has fewer than two values")));
        }
        if groups.iter().flat_map(|(_, v)| v).any(|x| !x.is_finite()) {
            return Err(Error::Domain("non-finite measurement".into()));
        }
        Ok(Self { groups })
    }

    fn n_total(&self) -> usize {
        self.groups.iter().map(|(_, v)| v.len()).sum()
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AnovaResult {
    pub f: f64,
    pub df_between: f64,
    pub df_within: f64,
    pub p: f64,
    /// Within-group mean square (pooled variance).
    pub ms_within: f64,
}

/// Between-subjects one-way ANOVA.
pub fn oneway_anova(sample: &GroupedSample) -> Result<AnovaResult> {
    let k = sample.groups.len();
    let n = sample.n_total();
    let grand = sample.groups.iter().flat_map(|(_, v)| v).sum::<f64>() / n as f64;
    let mut ss_between = 0.0;
    let mut ss_within = 0.0;
    for (_, v) in &sample.groups {
        let m = mean(v);
        ss_between += v.len() as f64 * (m - grand).powi(2);
        ss_within += v.iter().map(|x| (x - m).powi(2)).sum::<f64>();
    }
    let df_between = (k - 1) as f64;
    let df_within = (n - k) as f64;
    let ms_within = ss_within / df_within;
    if !(ms_within > 0.0) {
        return Err(Error::Domain("zero within-group variance".into()));
    }
    let f = (ss_between / df_between) / ms_within;
    Ok(AnovaResult {
        f,
        df_between,
        df_within,
        p: f_survival(f, df_between, df_within),
        ms_within,
    })
}

fn ln_beta(a: f64, b: f64) -> f64 {
    ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)
}

/// Regularised incomplete beta `I_x(a, b)` by quadrature of the beta density.
pub fn incomplete_beta(x: f64, a: f64, b: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let lb = ln_beta(a, b);
    let density = |t: f64| {
        if t <= 0.0 || t >= 1.0 {
            return 0.0;
        }
        ((a - 1.0) * t.ln() + (b - 1.0) * (-t).ln_1p() - lb).exp()
    };
    // Integrate over the shorter side of x to keep endpoint singularities at 0/1 off
    // the upper limit.
    let v = if x <= 0.5 {
        quad::integrate(density, 0.0, x, QUAD_TOL)
    } else {
        1.0 - quad::integrate(density, x, 1.0, QUAD_TOL)
    };
    v.clamp(0.0, 1.0)
}

/// Upper tail `P(F > f)` of the F distribution.
pub fn f_survival(f: f64, d1: f64, d2: f64) -> f64 {
    if !(f > 0.0) {
        return 1.0;
    }
    if f.is_infinite() {
        return 0.0;
    }
    incomplete_beta(d2 / (d2 + d1 * f), 0.5 * d2, 0.5 * d1)
}

/// `P(range of k iid standard normals <= w)`.
fn normal_range_cdf(w: f64, k: usize) -> f64 {
    if w <= 0.0 {
        return 0.0;
    }
    let km1 = (k - 1) as i32;
    let v = quad::integrate(
        |z| {
            let d = std_normal_cdf(z) - std_normal_cdf(z - w);
            std_normal_pdf(z) * d.max(0.0).powi(km1)
        },
        -9.0,
        9.0 + w,
        1e-11,
    );
    (k as f64 * v).clamp(0.0, 1.0)
}

/// CDF of the studentized range with `k` groups and `df` error degrees of freedom.
///
/// `df = f64::INFINITY` gives the normal-range limit.
pub fn studentized_range_cdf(q: f64, k: usize, df: f64) -> f64 {
    if q <= 0.0 {
        return 0.0;
    }
    if df.is_infinite() {
        return normal_range_cdf(q, k);
    }
    let half = 0.5 * df;
    let ln_norm = half * df.ln() - ln_gamma(half) - (half - 1.0) * std::f64::consts::LN_2;
    // The scale density is concentrated around 1 with sd ~ 1/sqrt(2 df).
    let sd = (0.5 / df).sqrt();
    let hi = 1.0 + 40.0 * sd + 5.0;
    let v = quad::integrate(
        |s| {
            if s <= 0.0 {
                return 0.0;
            }
            let ln_f = ln_norm + (df - 1.0) * s.ln() - half * s * s;
            ln_f.exp() * normal_range_cdf(q * s, k)
        },
        0.0,
        hi,
        QUAD_TOL,
    );
    v.clamp(0.0, 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairwiseComparison {
    pub group_a: String,
    pub group_b: String,
    /// `mean(a) - mean(b)`.
    pub mean_diff: f64,
    pub q: f64,
    pub p: f64,
    pub significant: bool,
}

/// Tukey HSD with the Tukey–Kramer standard error for unequal group sizes.
pub fn tukey_hsd(sample: &GroupedSample, alpha: f64) -> Result<Vec<PairwiseComparison>> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Config(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    let anova = oneway_anova(sample)?;
    let k = sample.groups.len();
    let means: Vec<f64> = sample.groups.iter().map(|(_, v)| mean(v)).collect();
    let mut out = Vec::with_capacity(k * (k - 1) / 2);
    for i in 0..k {
        for j in (i + 1)..k {
            let (na, nb) = (
                sample.groups[i].1.len() as f64,
                sample.groups[j].1.len() as f64,
            );
            let se = (0.5 * anova.ms_within * (1.0 / na + 1.0 / nb)).sqrt();
            let diff = means[i] - means[j];
            let q = diff.abs() / se;
            let p = (1.0 - studentized_range_cdf(q, k, anova.df_within)).clamp(0.0, 1.0);
            out.push(PairwiseComparison {
                group_a: sample.groups[i].0.clone(),
                group_b: sample.groups[j].0.clone(),
                mean_diff: diff,
                q,
                p,
                significant: p < alpha,
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KsResult {
    pub d: f64,
    pub p: f64,
}

/// Survival function of the Kolmogorov distribution, `P(K > lambda)`.
pub fn kolmogorov_survival(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    if lambda < 1.0 {
        // Small-lambda form converges quickly: CDF = sqrt(2 pi)/lambda * sum exp(-(2j-1)^2 pi^2 / (8 lambda^2)).
        let c = (2.0 * std::f64::consts::PI).sqrt() / lambda;
        let mut cdf = 0.0;
        for j in 1..200 {
            let m = (2 * j - 1) as f64;
            let term = (-(m * m) * std::f64::consts::PI.powi(2) / (8.0 * lambda * lambda)).exp();
            cdf += term;
            if term < SERIES_TOL * cdf.max(f64::MIN_POSITIVE) {
                break;
            }
        }
        (1.0 - c * cdf).clamp(0.0, 1.0)
    } else {
        let mut sum = 0.0;
        for j in 1..200 {
            let jf = j as f64;
            let term = (-2.0 * jf * jf * lambda * lambda).exp();
            sum += if j % 2 == 1 { term } else { -term };
            if term < SERIES_TOL {
                break;
            }
        }
        (2.0 * sum).clamp(0.0, 1.0)
    }
}

/// One-sample Kolmogorov–Smirnov test against a continuous reference CDF.
pub fn ks_test<F: Fn(f64) -> f64>(values: &[f64], reference_cdf: F) -> Result<KsResult> {
    if values.len() < 8 {
        return Err(Error::Domain(format!(
            "KS test needs at least 8 values, got {}",
            values.len()
        )));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in sorted.iter().enumerate() {
        let f = reference_cdf(x);
        let hi = (i + 1) as f64 / n - f;
        let lo = f - i as f64 / n;
        d = d.max(hi).max(lo);
    }
    let d = d.clamp(0.0, 1.0);
    Ok(KsResult {
        d,
        p: kolmogorov_survival(n.sqrt() * d),
    })
}

/// Standard-normal quantile.
pub fn normal_quantile(p: f64) -> f64 {
    -std::f64::consts::SQRT_2 * erfc_inv(2.0 * p)
}

/// One-sided Wilson score lower bound for a binomial proportion.
pub fn wilson_lower_bound(successes: usize, n: usize, confidence: f64) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let z = normal_quantile(confidence);
    let nf = n as f64;
    let phat = successes as f64 / nf;
    let z2 = z * z;
    let centre = phat + z2 / (2.0 * nf);
    let margin = z * (phat * (1.0 - phat) / nf + z2 / (4.0 * nf * nf)).sqrt();
    ((centre - margin) / (1.0 + z2 / nf)).max(0.0)
}
