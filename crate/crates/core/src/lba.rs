//! Two-accumulator Linear Ballistic Accumulator.
//!
//! Each accumulator starts at a point drawn from `U(0, A)` and rises linearly at a
//! rate drawn from `N(v, s)` until it reaches the threshold `b = A + k`. The first
//! accumulator to reach threshold determines the response; the observed response
//! time adds a non-decision time `psi`.
//!
//! Drift rates are truncated to positive values (negative draws are redrawn), so
//! every accumulator eventually finishes. The untruncated densities
//! [`node_pdf`]/[`node_cdf`] integrate to `Phi(v / s)`; their truncated
//! counterparts divide by that mass.
//!
//! Fitting uses correct-response trials only: the per-trial likelihood is the
//! defective density `f_correct(t) * (1 - F_error(t))` evaluated at the decision
//! time `t = rt - psi`.

use std::f64::consts::{FRAC_1_SQRT_2, PI};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::{Error, HazardType, Result};

/// Drift-rate standard deviation, fixed for identifiability.
pub const DRIFT_SD: f64 = 1.0;

/// Number of free parameters on the sampling scale.
pub const N_PARAMS: usize = 5;

/// Output labels of the free parameters, in vector order.
pub const PARAM_NAMES: [&str; N_PARAMS] = ["A", "k", "v_correct", "v_error", "psi"];

/// Prior means on the unconstrained scale; every prior sd is 1.
const PRIOR_MEAN: [f64; N_PARAMS] = [
    -std::f64::consts::LN_2,
    -std::f64::consts::LN_2,
    std::f64::consts::LN_2,
    std::f64::consts::LN_2,
    0.0,
];

#[inline]
pub(crate) fn std_normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * PI).sqrt()
}

#[inline]
pub(crate) fn std_normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z * FRAC_1_SQRT_2)
}

/// `Phi(hi) - Phi(lo)` for `hi >= lo`, evaluated on whichever tail keeps precision.
#[inline]
fn normal_cdf_diff(lo: f64, hi: f64) -> f64 {
    if lo > 0.0 {
        std_normal_cdf(-lo) - std_normal_cdf(-hi)
    } else {
        std_normal_cdf(hi) - std_normal_cdf(lo)
    }
}

/// `z * Phi(z) + phi(z)`, the antiderivative of `Phi`.
#[inline]
fn phi_integral(z: f64) -> f64 {
    z * std_normal_cdf(z) + std_normal_pdf(z)
}

fn check_finite(values: &[f64]) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Domain(format!("non-finite accumulator input {values:?}")))
    }
}

/// Single-accumulator first-passage density (untruncated drift).
///
/// Returns 0 for `t <= 0`.
pub fn node_pdf(t: f64, b: f64, a: f64, v: f64, s: f64) -> Result<f64> {
    check_finite(&[t, b, a, v, s])?;
    if t <= 0.0 {
        return Ok(0.0);
    }
    Ok(Node::new(t, b, a, v, s).pdf())
}

/// Single-accumulator first-passage CDF (untruncated drift).
///
/// `node_cdf(inf) = Phi(v / s)`, the probability that the sampled drift is positive.
pub fn node_cdf(t: f64, b: f64, a: f64, v: f64, s: f64) -> Result<f64> {
    check_finite(&[t, b, a, v, s])?;
    if t <= 0.0 {
        return Ok(0.0);
    }
    Ok(Node::new(t, b, a, v, s).cdf())
}

/// First-passage density with positive-truncated drift; integrates to 1.
pub fn truncated_node_pdf(t: f64, b: f64, a: f64, v: f64, s: f64) -> Result<f64> {
    Ok(node_pdf(t, b, a, v, s)? / std_normal_cdf(v / s))
}

/// First-passage CDF with positive-truncated drift; tends to 1.
pub fn truncated_node_cdf(t: f64, b: f64, a: f64, v: f64, s: f64) -> Result<f64> {
    Ok((node_cdf(t, b, a, v, s)? / std_normal_cdf(v / s)).min(1.0))
}

/// Intermediate quantities shared by the density, CDF and their derivatives.
struct Node {
    t: f64,
    b: f64,
    a: f64,
    v: f64,
    s: f64,
    z_lo: f64,
    z_hi: f64,
    pdf_lo: f64,
    pdf_hi: f64,
    cdf_lo: f64,
}

impl Node {
    fn new(t: f64, b: f64, a: f64, v: f64, s: f64) -> Self {
        let ts = t * s;
        let z_lo = (b - a - t * v) / ts;
        let z_hi = (b - t * v) / ts;
        Self {
            t,
            b,
            a,
            v,
            s,
            z_lo,
            z_hi,
            pdf_lo: std_normal_pdf(z_lo),
            pdf_hi: std_normal_pdf(z_hi),
            cdf_lo: std_normal_cdf(z_lo),
        }
    }

    fn pdf(&self) -> f64 {
        let f = (self.v * normal_cdf_diff(self.z_lo, self.z_hi)
            + self.s * (self.pdf_lo - self.pdf_hi))
            / self.a;
        f.max(0.0)
    }

    fn cdf(&self) -> f64 {
        let scale = self.t * self.s / self.a;
        let f = if self.z_lo > 0.0 {
            // psi(z) = z + psi(-z) removes the cancellation against 1.
            scale * (phi_integral(-self.z_lo) - phi_integral(-self.z_hi))
        } else {
            1.0 + scale * (phi_integral(self.z_lo) - phi_integral(self.z_hi))
        };
        f.clamp(0.0, 1.0)
    }

    /// Partial derivatives of the density: (d/db, d/dA with b fixed, d/dv, d/dt).
    fn pdf_partials(&self, f: f64) -> [f64; 4] {
        let (t, b, a, s) = (self.t, self.b, self.a, self.s);
        let c_lo = b - a;
        let d_b = (b * self.pdf_hi - c_lo * self.pdf_lo) / (a * t * t * s);
        let d_a = -f / a + c_lo * self.pdf_lo / (a * t * t * s);
        let d_v = (normal_cdf_diff(self.z_lo, self.z_hi) - b / (t * s) * self.pdf_hi
            + c_lo / (t * s) * self.pdf_lo)
            / a;
        let d_t = (c_lo * c_lo * self.pdf_lo - b * b * self.pdf_hi) / (a * t * t * t * s);
        [d_b, d_a, d_v, d_t]
    }

    /// Partial derivatives of the CDF: (d/db, d/dA with b fixed, d/dv, d/dt).
    fn cdf_partials(&self, cdf: f64, pdf: f64) -> [f64; 4] {
        let a = self.a;
        let diff = normal_cdf_diff(self.z_lo, self.z_hi);
        let d_b = -diff / a;
        let d_a = (1.0 - cdf) / a - self.cdf_lo / a;
        let d_v = self.t * diff / a;
        [d_b, d_a, d_v, pdf]
    }
}

/// Latent parameters of the two-accumulator race.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LbaParams {
    /// Mean drift of the accumulator matching the correct response.
    pub v_correct: f64,
    /// Mean drift of the competing accumulator.
    pub v_error: f64,
    /// Upper bound `A` of the uniform start-point distribution.
    pub start_max: f64,
    /// Relative threshold `k = b - A`.
    pub rel_threshold: f64,
    /// Non-decision time in seconds.
    pub non_decision: f64,
    /// Between-trial drift sd, fixed at [`DRIFT_SD`].
    pub drift_sd: f64,
}

impl LbaParams {
    pub fn new(
        v_correct: f64,
        v_error: f64,
        start_max: f64,
        rel_threshold: f64,
        non_decision: f64,
    ) -> Result<Self> {
        let p = Self {
            v_correct,
            v_error,
            start_max,
            rel_threshold,
            non_decision,
            drift_sd: DRIFT_SD,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        check_finite(&[
            self.v_correct,
            self.v_error,
            self.start_max,
            self.rel_threshold,
            self.non_decision,
            self.drift_sd,
        ])?;
        if self.start_max <= 0.0
            || self.rel_threshold <= 0.0
            || self.v_correct <= 0.0
            || self.v_error <= 0.0
            || self.non_decision < 0.0
            || self.drift_sd <= 0.0
        {
            return Err(Error::Domain(format!("invalid LBA parameters {self:?}")));
        }
        Ok(())
    }

    /// Response threshold `b = A + k`.
    pub fn threshold(&self) -> f64 {
        self.start_max + self.rel_threshold
    }

    /// Parameter vector in [`PARAM_NAMES`] order.
    pub fn to_vec(&self) -> [f64; N_PARAMS] {
        [
            self.start_max,
            self.rel_threshold,
            self.v_correct,
            self.v_error,
            self.non_decision,
        ]
    }

    pub fn from_slice(x: &[f64]) -> Result<Self> {
        if x.len() != N_PARAMS {
            return Err(Error::Shape {
                expected: format!("{N_PARAMS} LBA parameters"),
                got: x.len().to_string(),
            });
        }
        Self::new(x[2], x[3], x[0], x[1], x[4])
    }
}

/// Response category.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Response {
    Hazardous,
    Safe,
}

impl fmt::Display for Response {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Response::Hazardous => "hazardous",
            Response::Safe => "safe",
        })
    }
}

impl FromStr for Response {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "hazardous" => Ok(Response::Hazardous),
            "safe" => Ok(Response::Safe),
            other => Err(Error::Parse(format!("unknown response `{other}`"))),
        }
    }
}

/// One behavioral observation.
#[derive(Debug, Clone, PartialEq)]
pub struct Trial {
    /// Response time in seconds.
    pub rt: f64,
    pub response: Response,
    pub hazard_type: HazardType,
    pub correct: bool,
    pub participant_id: String,
}

/// Log-density of a correct response at `trial.rt`.
///
/// Returns `f64::NEG_INFINITY` when `rt <= psi` or the density underflows.
pub fn correct_trial_loglik(trial: &Trial, params: &LbaParams) -> f64 {
    decision_loglik(trial.rt - params.non_decision, params)
}

fn decision_loglik(t: f64, p: &LbaParams) -> f64 {
    if !(t > 0.0) {
        return f64::NEG_INFINITY;
    }
    let b = p.threshold();
    let s = p.drift_sd;
    let winner = Node::new(t, b, p.start_max, p.v_correct, s);
    let loser = Node::new(t, b, p.start_max, p.v_error, s);
    let f = winner.pdf();
    let survival = std_normal_cdf(p.v_error / s) - loser.cdf();
    if f <= 0.0 || survival <= 0.0 {
        return f64::NEG_INFINITY;
    }
    f.ln() - std_normal_cdf(p.v_correct / s).ln() + survival.ln()
        - std_normal_cdf(p.v_error / s).ln()
}

/// Marker returned when the log-density is not finite at the requested point.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Divergent;

impl fmt::Display for Divergent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("log-density is not finite")
    }
}

impl std::error::Error for Divergent {}

/// How the correct-only likelihood accounts for the discarded error trials.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Likelihood {
    /// Each trial contributes `f_c(t) S_e(t) / P(correct)`: the density of the
    /// observed RT given that the response was correct.
    Conditional,
    /// Each trial contributes the defective density `f_c(t) S_e(t)`
    /// ([`correct_trial_loglik`]); this rewards parameters with high accuracy
    /// regardless of the data and biases recovery.
    Defective,
}

/// Panels of the fixed rule for `P(correct)`.
const CHOICE_PANELS: usize = 24;

/// Log posterior of the pooled race model on the unconstrained scale.
///
/// Coordinates are `(ln A, ln k, ln v_correct, ln v_error, logit(psi / rt_min))`
/// where `rt_min` bounds `psi` from above. Each coordinate has an independent
/// unit-variance normal prior, equivalent to log-normal priors on `A`, `k`, the
/// drifts, and a logit-normal prior on `psi / rt_min` with their Jacobians.
#[derive(Debug, Clone)]
pub struct LbaPosterior {
    rts: Vec<f64>,
    rt_min: f64,
    likelihood: Likelihood,
    /// `(t, weight)` from mapping `u in (0, 1)` to `t = tau u / (1 - u)`.
    choice_rule: Vec<(f64, f64)>,
}

impl LbaPosterior {
    /// Builds the posterior from correct trials; `psi` is bounded by the smallest RT.
    pub fn new(trials: &[Trial]) -> Result<Self> {
        if trials.is_empty() {
            return Err(Error::Domain("no trials to fit".into()));
        }
        if let Some(t) = trials.iter().find(|t| !t.correct) {
            return Err(Error::Domain(format!(
                "error trial from participant {} passed to correct-trial likelihood",
                t.participant_id
            )));
        }
        let rts: Vec<f64> = trials.iter().map(|t| t.rt).collect();
        let rt_min = rts.iter().copied().fold(f64::INFINITY, f64::min);
        Self::with_psi_bound(rts, rt_min)
    }

    /// Builds the posterior from raw RTs with an explicit upper bound on `psi`.
    pub fn with_psi_bound(rts: Vec<f64>, rt_min: f64) -> Result<Self> {
        if !(rt_min > 0.0) || !rt_min.is_finite() {
            return Err(Error::Domain(format!("psi bound must be positive, got {rt_min}")));
        }
        if let Some(rt) = rts.iter().find(|&&rt| !(rt >= rt_min) || !rt.is_finite()) {
            return Err(Error::Domain(format!("rt {rt} below psi bound {rt_min}")));
        }
        // Decision times are on the scale of the RTs themselves; half the median
        // puts the bulk of the mass in the middle of the mapped interval.
        let mut sorted = rts.clone();
        sorted.sort_by(f64::total_cmp);
        let tau = 0.5 * sorted.get(sorted.len() / 2).copied().unwrap_or(rt_min);
        let choice_rule = crate::stats::quad::kronrod_rule(0.0, 1.0, CHOICE_PANELS)
            .into_iter()
            .map(|(u, w)| (tau * u / (1.0 - u), w * tau / (1.0 - u).powi(2)))
            .collect();
        Ok(Self {
            rts,
            rt_min,
            likelihood: Likelihood::Conditional,
            choice_rule,
        })
    }

    pub fn with_likelihood(mut self, likelihood: Likelihood) -> Self {
        self.likelihood = likelihood;
        self
    }

    pub fn likelihood(&self) -> Likelihood {
        self.likelihood
    }

    /// `ln P(correct)` and its partials in `(b, A, v_correct, v_error)`.
    ///
    /// The integral `∫ f_c S_e dt` is a fixed quadrature rule, so the returned
    /// gradient is the exact derivative of the returned value.
    fn log_choice_probability(&self, b: f64, a: f64, vc: f64, ve: f64, s: f64) -> Option<(f64, [f64; 4])> {
        let mass_c = std_normal_cdf(vc / s);
        let mass_e = std_normal_cdf(ve / s);
        let (mut h, mut hb, mut ha, mut hvc, mut hve) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for &(t, w) in &self.choice_rule {
            let win = Node::new(t, b, a, vc, s);
            let lose = Node::new(t, b, a, ve, s);
            let f = win.pdf();
            let fe = lose.pdf();
            let cdf_e = lose.cdf();
            let surv = (mass_e - cdf_e).max(0.0);
            let [fb, fa, fv, _] = win.pdf_partials(f);
            let [cb, ca, cv, _] = lose.cdf_partials(cdf_e, fe);
            h += w * f * surv;
            hb += w * (fb * surv - f * cb);
            ha += w * (fa * surv - f * ca);
            hvc += w * fv * surv;
            hve += w * f * (std_normal_pdf(ve / s) / s - cv);
        }
        if !(h > 0.0) {
            return None;
        }
        let lp = h.ln() - mass_c.ln() - mass_e.ln();
        Some((
            lp,
            [
                hb / h,
                ha / h,
                hvc / h - std_normal_pdf(vc / s) / (s * mass_c),
                hve / h - std_normal_pdf(ve / s) / (s * mass_e),
            ],
        ))
    }

    /// `P(correct)` under `params`, by the same rule the conditional likelihood uses.
    pub fn choice_probability(&self, params: &LbaParams) -> f64 {
        self.log_choice_probability(
            params.threshold(),
            params.start_max,
            params.v_correct,
            params.v_error,
            params.drift_sd,
        )
        .map_or(0.0, |(lp, _)| lp.exp())
    }

    pub fn rt_min(&self) -> f64 {
        self.rt_min
    }

    pub fn n_trials(&self) -> usize {
        self.rts.len()
    }

    /// Maps an unconstrained vector to parameters.
    pub fn constrain(&self, x: &[f64]) -> LbaParams {
        LbaParams {
            start_max: x[0].exp(),
            rel_threshold: x[1].exp(),
            v_correct: x[2].exp(),
            v_error: x[3].exp(),
            non_decision: self.rt_min * logistic(x[4]),
            drift_sd: DRIFT_SD,
        }
    }

    /// Inverse of [`constrain`](Self::constrain).
    pub fn unconstrain(&self, p: &LbaParams) -> [f64; N_PARAMS] {
        let u = p.non_decision / self.rt_min;
        [
            p.start_max.ln(),
            p.rel_threshold.ln(),
            p.v_correct.ln(),
            p.v_error.ln(),
            (u / (1.0 - u)).ln(),
        ]
    }

    /// Prior means (also the prior mode) on the unconstrained scale.
    pub fn prior_mode(&self) -> [f64; N_PARAMS] {
        PRIOR_MEAN
    }

    /// Log prior, without normalising constants, and its gradient.
    pub fn log_prior(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        let mut lp = 0.0;
        for i in 0..N_PARAMS {
            let d = x[i] - PRIOR_MEAN[i];
            lp -= 0.5 * d * d;
            grad[i] = -d;
        }
        lp
    }

    /// Log-likelihood of all trials and its gradient on the unconstrained scale.
    pub fn log_likelihood(&self, x: &[f64], grad: &mut [f64]) -> Result<f64, Divergent> {
        let p = self.constrain(x);
        let (a, k, vc, ve, psi, s) = (
            p.start_max,
            p.rel_threshold,
            p.v_correct,
            p.v_error,
            p.non_decision,
            p.drift_sd,
        );
        let b = a + k;
        let mass_c = std_normal_cdf(vc / s);
        let mass_e = std_normal_cdf(ve / s);

        // Accumulated derivatives w.r.t. (b, A|b, v_correct, v_error, t).
        let (mut g_b, mut g_a, mut g_vc, mut g_ve, mut g_t) = (0.0, 0.0, 0.0, 0.0, 0.0);
        let mut ll = 0.0;
        for &rt in &self.rts {
            let t = rt - psi;
            if !(t > 0.0) {
                return Err(Divergent);
            }
            let win = Node::new(t, b, a, vc, s);
            let lose = Node::new(t, b, a, ve, s);
            let f = win.pdf();
            let fe = lose.pdf();
            let cdf_e = lose.cdf();
            let surv = mass_e - cdf_e;
            if !(f > 0.0) || !(surv > 0.0) {
                return Err(Divergent);
            }
            ll += f.ln() + surv.ln();

            let [fb, fa, fv, ft] = win.pdf_partials(f);
            let [cb, ca, cv, ct] = lose.cdf_partials(cdf_e, fe);
            let inv_f = 1.0 / f;
            let inv_s = 1.0 / surv;
            g_b += fb * inv_f - cb * inv_s;
            g_a += fa * inv_f - ca * inv_s;
            g_vc += fv * inv_f;
            g_ve += (std_normal_pdf(ve / s) / s - cv) * inv_s;
            g_t += ft * inv_f - ct * inv_s;
        }
        let n = self.rts.len() as f64;
        ll -= n * (mass_c.ln() + mass_e.ln());
        g_vc -= n * std_normal_pdf(vc / s) / (s * mass_c);
        g_ve -= n * std_normal_pdf(ve / s) / (s * mass_e);
        if self.likelihood == Likelihood::Conditional {
            let (lp, [pb, pa, pvc, pve]) =
                self.log_choice_probability(b, a, vc, ve, s).ok_or(Divergent)?;
            ll -= n * lp;
            g_b -= n * pb;
            g_a -= n * pa;
            g_vc -= n * pvc;
            g_ve -= n * pve;
        }

        if !ll.is_finite() {
            return Err(Divergent);
        }
        // b = A + k, psi = rt_min * logistic(x4), t = rt - psi.
        let g_start = g_a + g_b;
        let g_k = g_b;
        let sig = logistic(x[4]);
        let g_psi = -g_t;
        grad[0] = g_start * a;
        grad[1] = g_k * k;
        grad[2] = g_vc * vc;
        grad[3] = g_ve * ve;
        grad[4] = g_psi * self.rt_min * sig * (1.0 - sig);
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Divergent);
        }
        Ok(ll)
    }

    /// Log posterior and its gradient on the unconstrained scale.
    pub fn log_posterior(&self, x: &[f64], grad: &mut [f64]) -> Result<f64, Divergent> {
        let mut g_prior = [0.0; N_PARAMS];
        let lp = self.log_prior(x, &mut g_prior);
        let ll = self.log_likelihood(x, grad)?;
        for (g, gp) in grad.iter_mut().zip(g_prior) {
            *g += gp;
        }
        Ok(ll + lp)
    }
}

/// Gradient of the total log posterior at an unconstrained point.
pub fn loglik_gradient(trials: &[Trial], x: &[f64]) -> Result<Vec<f64>> {
    let post = LbaPosterior::new(trials)?;
    if x.len() != N_PARAMS {
        return Err(Error::Shape {
            expected: format!("{N_PARAMS} unconstrained parameters"),
            got: x.len().to_string(),
        });
    }
    let mut g = vec![0.0; N_PARAMS];
    post.log_posterior(x, &mut g)
        .map_err(|_| Error::Domain("divergent: log posterior is not finite".into()))?;
    Ok(g)
}

#[inline]
fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn positive_drift<R: Rng + ?Sized>(rng: &mut R, dist: &Normal<f64>) -> f64 {
    loop {
        let d = dist.sample(rng);
        if d > 0.0 {
            return d;
        }
    }
}

/// Probability that the correct accumulator wins, by adaptive quadrature of
/// its defective density over decision time.
pub fn choice_probability(params: &LbaParams) -> f64 {
    let (b, a, s) = (params.threshold(), params.start_max, params.drift_sd);
    let defective = |t: f64| {
        if !(t > 0.0) {
            return 0.0;
        }
        let f = truncated_node_pdf(t, b, a, params.v_correct, s).unwrap_or(0.0);
        let surv = 1.0 - truncated_node_cdf(t, b, a, params.v_error, s).unwrap_or(1.0);
        f * surv.max(0.0)
    };
    crate::stats::quad::integrate_to_inf(defective, 0.0, 1e-10)
}

/// Outcome of one simulated race, before non-decision time is added.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Race {
    pub decision_time: f64,
    pub correct_won: bool,
}

/// Simulates the race between the correct and the error accumulator.
pub fn simulate_race<R: Rng + ?Sized>(params: &LbaParams, rng: &mut R) -> Race {
    let b = params.threshold();
    let start = Uniform::new(0.0, params.start_max).expect("start_max > 0");
    let drift_c = Normal::new(params.v_correct, params.drift_sd).expect("drift_sd > 0");
    let drift_e = Normal::new(params.v_error, params.drift_sd).expect("drift_sd > 0");
    let tc = (b - start.sample(rng)) / positive_drift(rng, &drift_c);
    let te = (b - start.sample(rng)) / positive_drift(rng, &drift_e);
    Race {
        decision_time: tc.min(te),
        correct_won: tc <= te,
    }
}

/// Draws one hazardous-stimulus trial; the correct response is `hazardous`.
pub fn simulate_trial<R: Rng + ?Sized>(
    params: &LbaParams,
    hazard_type: HazardType,
    participant_id: &str,
    rng: &mut R,
) -> Trial {
    let race = simulate_race(params, rng);
    Trial {
        rt: race.decision_time + params.non_decision,
        response: if race.correct_won {
            Response::Hazardous
        } else {
            Response::Safe
        },
        hazard_type,
        correct: race.correct_won,
        participant_id: participant_id.to_string(),
    }
}

/// CSV header used for trial files.
pub const TRIALS_HEADER: [&str; 5] = ["participant_id", "hazard_type", "response", "correct", "rt_s"];

pub fn write_trials_csv(path: &Path, trials: &[Trial]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(TRIALS_HEADER)?;
    for t in trials {
        w.write_record([
            t.participant_id.clone(),
            t.hazard_type.to_string(),
            t.response.to_string(),
            if t.correct { "1" } else { "0" }.to_string(),
            format!("{:.6}", t.rt),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_trials_csv(path: &Path) -> Result<Vec<Trial>> {
    if !path.exists() {
        return Err(Error::MissingInput(path.to_path_buf()));
    }
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != TRIALS_HEADER {
        return Err(Error::Parse(format!(
            "{}: expected header {:?}, found {:?}",
            path.display(),
            TRIALS_HEADER,
            header
        )));
    }
    let mut out = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let field = |i: usize| rec.get(i).unwrap_or("");
        let correct = match field(3).trim() {
            "1" | "true" | "TRUE" => true,
            "0" | "false" | "FALSE" => false,
            other => {
                return Err(Error::Parse(format!("row {}: bad correct flag `{other}`", line + 2)))
            }
        };
        let rt: f64 = field(4)
            .trim()
            .parse()
            .map_err(|e| Error::Parse(format!("row {}: rt_s: {e}", line + 2)))?;
        if !(rt > 0.0) {
            return Err(Error::Parse(format!("row {}: rt_s must be positive", line + 2)));
        }
        out.push(Trial {
            rt,
            response: field(2).parse()?,
            hazard_type: field(1).parse()?,
            correct,
            participant_id: field(0).to_string(),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn trial(rt: f64) -> Trial {
        Trial {
            rt,
            response: Response::Hazardous,
            hazard_type: HazardType::EL,
            correct: true,
            participant_id: "P01".into(),
        }
    }

    #[test]
    fn zero_time_has_zero_density_and_mass() {
        assert_eq!(node_pdf(0.0, 1.0, 0.5, 2.0, 1.0).unwrap(), 0.0);
        assert_eq!(node_cdf(0.0, 1.0, 0.5, 2.0, 1.0).unwrap(), 0.0);
        assert_eq!(node_pdf(-1.0, 1.0, 0.5, 2.0, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn non_finite_inputs_are_domain_errors() {
        assert!(node_pdf(f64::NAN, 1.0, 0.5, 2.0, 1.0).is_err());
        assert!(node_cdf(0.3, f64::INFINITY, 0.5, 2.0, 1.0).is_err());
    }

    #[test]
    fn truncated_cdf_reaches_one() {
        // Unfinished mass at time t is roughly P(0 < drift < b / t) ~ phi(2) b / t.
        let f = truncated_node_cdf(1e6, 1.0, 0.5, 2.0, 1.0).unwrap();
        assert!((f - 1.0).abs() < 1e-5, "{f}");
        let untrunc = node_cdf(1e6, 1.0, 0.5, 2.0, 1.0).unwrap();
        assert!((untrunc - std_normal_cdf(2.0)).abs() < 1e-5);
    }

    #[test]
    fn cdf_is_monotone_and_bounded() {
        let mut prev = 0.0;
        for i in 1..4000 {
            let t = i as f64 * 0.002;
            let f = node_cdf(t, 1.2, 0.6, 1.5, 1.0).unwrap();
            assert!((0.0..=1.0).contains(&f));
            assert!(f >= prev - 1e-15, "t={t} {f} < {prev}");
            prev = f;
        }
    }

    #[test]
    fn rt_at_psi_is_neg_infinity() {
        let p = LbaParams::new(2.0, 1.0, 0.5, 0.5, 0.3).unwrap();
        assert_eq!(correct_trial_loglik(&trial(0.3), &p), f64::NEG_INFINITY);
        assert!(correct_trial_loglik(&trial(0.8), &p).is_finite());
    }

    #[test]
    fn decision_time_is_distance_over_drift() {
        // start 0.3, b = 1.0, drift 1.4
        let dt: f64 = (1.0 - 0.3) / 1.4;
        assert!((dt - 0.5).abs() < 1e-12);
    }

    #[test]
    fn dominant_drift_gives_deterministic_rt() {
        let p = LbaParams {
            v_correct: 1e6,
            v_error: 1e-6,
            start_max: 0.5,
            rel_threshold: 0.5,
            non_decision: 0.3,
            drift_sd: 1e-3,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let t = simulate_trial(&p, HazardType::SI, "P", &mut rng);
            assert!(t.correct);
            assert!((t.rt - 0.3).abs() < 1e-5);
        }
    }

    #[test]
    fn zero_trial_gradient_is_prior_gradient() {
        let post = LbaPosterior::with_psi_bound(vec![], 0.4).unwrap();
        let mut g = [0.0; N_PARAMS];
        let x = post.prior_mode();
        post.log_posterior(&x, &mut g).unwrap();
        assert!(g.iter().all(|v| v.abs() < 1e-15), "{g:?}");
        let x2 = [0.1, 0.2, 0.3, 0.4, 0.5];
        post.log_posterior(&x2, &mut g).unwrap();
        let mut gp = [0.0; N_PARAMS];
        post.log_prior(&x2, &mut gp);
        assert_eq!(g, gp);
    }

    #[test]
    fn duplicating_trials_doubles_likelihood_gradient() {
        let p = LbaParams::new(2.5, 1.0, 0.5, 0.6, 0.2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let rts: Vec<f64> = (0..50)
            .map(|_| simulate_trial(&p, HazardType::EL, "P", &mut rng))
            .filter(|t| t.correct)
            .map(|t| t.rt)
            .collect();
        let rt_min = rts.iter().copied().fold(f64::INFINITY, f64::min);
        let once = LbaPosterior::with_psi_bound(rts.clone(), rt_min).unwrap();
        let twice =
            LbaPosterior::with_psi_bound([rts.clone(), rts].concat(), rt_min).unwrap();
        let x = once.unconstrain(&p);
        let (mut g1, mut g2) = ([0.0; N_PARAMS], [0.0; N_PARAMS]);
        let l1 = once.log_likelihood(&x, &mut g1).unwrap();
        let l2 = twice.log_likelihood(&x, &mut g2).unwrap();
        assert!((2.0 * l1 - l2).abs() < 1e-9 * l1.abs().max(1.0));
        for i in 0..N_PARAMS {
            assert!((2.0 * g1[i] - g2[i]).abs() <= 1e-9 * g1[i].abs().max(1.0));
        }
    }

    #[test]
    fn error_trials_are_rejected_by_posterior() {
        let mut t = trial(0.7);
        t.correct = false;
        assert!(LbaPosterior::new(&[t]).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trials.csv");
        let trials = vec![trial(0.512345), {
            let mut t = trial(1.25);
            t.hazard_type = HazardType::LEP;
            t.response = Response::Safe;
            t.correct = false;
            t
        }];
        write_trials_csv(&path, &trials).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("participant_id,hazard_type,response,correct,rt_s\n"));
        assert_eq!(read_trials_csv(&path).unwrap(), trials);
    }
}
