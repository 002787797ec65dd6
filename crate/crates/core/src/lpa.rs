//! Latent profile analysis: a Gaussian mixture over per-hazard accuracies with
//! one diagonal covariance shared by every profile.
//!
//! Each fit is the best of several EM runs seeded k-means++-style. Rows are put
//! in a canonical (lexicographic) order before fitting, so the result does not
//! depend on the order participants appear in the input.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::{Error, PerformanceLevel, Result};

pub const N_INDICATORS: usize = 3;
pub const N_RESTARTS: usize = 20;
pub const MAX_ITERATIONS: usize = 500;
pub const TOLERANCE: f64 = 1e-8;
const MIN_WEIGHT: f64 = 1e-6;

/// Participants x per-hazard accuracy (EL, LEP, SI), proportions in [0, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BehaviorMatrix {
    pub participant_ids: Vec<String>,
    pub rows: Vec<[f64; N_INDICATORS]>,
}

impl BehaviorMatrix {
    pub fn new(participant_ids: Vec<String>, rows: Vec<[f64; N_INDICATORS]>) -> Result<Self> {
        if participant_ids.len() != rows.len() {
            return Err(Error::Shape {
                expected: format!("{} participant ids", rows.len()),
                got: participant_ids.len().to_string(),
            });
        }
        if let Some(r) = rows.iter().find(|r| r.iter().any(|v| !(0.0..=1.0).contains(v))) {
            return Err(Error::Domain(format!("accuracy outside [0, 1]: {r:?}")));
        }
        Ok(Self {
            participant_ids,
            rows,
        })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn column_means(&self) -> [f64; N_INDICATORS] {
        let n = self.len() as f64;
        let mut m = [0.0; N_INDICATORS];
        for r in &self.rows {
            for j in 0..N_INDICATORS {
                m[j] += r[j] / n;
            }
        }
        m
    }

    /// Maximum-likelihood (divide-by-n) column variances.
    pub fn column_variances(&self) -> [f64; N_INDICATORS] {
        let m = self.column_means();
        let n = self.len() as f64;
        let mut v = [0.0; N_INDICATORS];
        for r in &self.rows {
            for j in 0..N_INDICATORS {
                v[j] += (r[j] - m[j]).powi(2) / n;
            }
        }
        v
    }
}

/// A fitted constrained mixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileModel {
    pub n_profiles: usize,
    pub means: Vec<[f64; N_INDICATORS]>,
    /// Shared across profiles; covariances are structurally zero.
    pub variances: [f64; N_INDICATORS],
    pub weights: Vec<f64>,
    /// `[participant][profile]`, in input row order.
    pub responsibilities: Vec<Vec<f64>>,
    pub log_likelihood: f64,
    /// Log-likelihood after every EM iteration of the selected restart.
    pub history: Vec<f64>,
    /// The corresponding trace for every restart, including discarded ones.
    pub restart_histories: Vec<Vec<f64>>,
    pub best_restart: usize,
}

impl ProfileModel {
    /// Free parameters: means, shared variances, mixing weights.
    pub fn n_free_params(&self) -> usize {
        self.n_profiles * N_INDICATORS + N_INDICATORS + self.n_profiles - 1
    }

    pub fn bic(&self) -> f64 {
        let n = self.responsibilities.len() as f64;
        -2.0 * self.log_likelihood + self.n_free_params() as f64 * n.ln()
    }
}

struct Params {
    means: Vec<[f64; N_INDICATORS]>,
    variances: [f64; N_INDICATORS],
    weights: Vec<f64>,
}

/// E-step: fills `resp` and returns the log-likelihood.
fn e_step(rows: &[[f64; N_INDICATORS]], p: &Params, resp: &mut [Vec<f64>]) -> f64 {
    let log_norm: f64 = p
        .variances
        .iter()
        .map(|v| -0.5 * (2.0 * std::f64::consts::PI * v).ln())
        .sum();
    let mut ll = 0.0;
    for (x, r) in rows.iter().zip(resp.iter_mut()) {
        for (k, rk) in r.iter_mut().enumerate() {
            let mut q = 0.0;
            for j in 0..N_INDICATORS {
                q += (x[j] - p.means[k][j]).powi(2) / p.variances[j];
            }
            *rk = p.weights[k].ln() + log_norm - 0.5 * q;
        }
        let max = r.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = r.iter().map(|l| (l - max).exp()).sum();
        let lse = max + sum.ln();
        for rk in r.iter_mut() {
            *rk = (*rk - lse).exp();
        }
        ll += lse;
    }
    ll
}

fn m_step(rows: &[[f64; N_INDICATORS]], resp: &[Vec<f64>], p: &mut Params) {
    let n = rows.len() as f64;
    let k = p.weights.len();
    for c in 0..k {
        let nk: f64 = resp.iter().map(|r| r[c]).sum();
        p.weights[c] = nk / n;
        let mut m = [0.0; N_INDICATORS];
        for (x, r) in rows.iter().zip(resp) {
            for j in 0..N_INDICATORS {
                m[j] += r[c] * x[j];
            }
        }
        if nk > 0.0 {
            for mj in &mut m {
                *mj /= nk;
            }
            p.means[c] = m;
        }
    }
    let mut v = [0.0; N_INDICATORS];
    for (x, r) in rows.iter().zip(resp) {
        for c in 0..k {
            for j in 0..N_INDICATORS {
                v[j] += r[c] * (x[j] - p.means[c][j]).powi(2);
            }
        }
    }
    for (vj, sj) in p.variances.iter_mut().zip(v) {
        *vj = (sj / n).max(f64::MIN_POSITIVE);
    }
}

/// k-means++ seeding of the profile means.
fn seed_means(rows: &[[f64; N_INDICATORS]], k: usize, rng: &mut ChaCha8Rng) -> Vec<[f64; N_INDICATORS]> {
    let dist2 = |a: &[f64; N_INDICATORS], b: &[f64; N_INDICATORS]| -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
    };
    let mut centers = vec![rows[rng.random_range(0..rows.len())]];
    while centers.len() < k {
        let d: Vec<f64> = rows
            .iter()
            .map(|r| centers.iter().map(|c| dist2(r, c)).fold(f64::INFINITY, f64::min))
            .collect();
        let total: f64 = d.iter().sum();
        let next = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut pick = rows.len() - 1;
            for (i, di) in d.iter().enumerate() {
                if u < *di {
                    pick = i;
                    break;
                }
                u -= di;
            }
            pick
        } else {
            rng.random_range(0..rows.len())
        };
        centers.push(rows[next]);
    }
    centers
}

struct RunOutcome {
    params: Params,
    resp: Vec<Vec<f64>>,
    history: Vec<f64>,
    degenerate: bool,
}

fn run_em(rows: &[[f64; N_INDICATORS]], k: usize, init_var: [f64; N_INDICATORS], rng: &mut ChaCha8Rng) -> RunOutcome {
    let mut params = Params {
        means: seed_means(rows, k, rng),
        variances: init_var,
        weights: vec![1.0 / k as f64; k],
    };
    let mut resp = vec![vec![0.0; k]; rows.len()];
    let mut history = Vec::new();
    // The initial E-step scores the seeded parameters; each later entry follows
    // one M-step plus E-step.
    let mut ll = e_step(rows, &params, &mut resp);
    history.push(ll);
    let mut degenerate = false;
    for _ in 0..MAX_ITERATIONS {
        m_step(rows, &resp, &mut params);
        if params.weights.iter().any(|&w| w < MIN_WEIGHT) {
            degenerate = true;
            break;
        }
        let next = e_step(rows, &params, &mut resp);
        history.push(next);
        let done = (next - ll).abs() < TOLERANCE;
        ll = next;
        if done {
            break;
        }
    }
    RunOutcome {
        params,
        resp,
        history,
        degenerate,
    }
}

/// EM for the equal-variance, zero-covariance mixture; best of [`N_RESTARTS`].
///
/// Restart `r` draws its seeding from ChaCha8 stream `r` of `seed`. The winner
/// has the highest final log-likelihood, ties going to the lower restart index.
pub fn fit_gmm_em(data: &BehaviorMatrix, n_profiles: usize, seed: u64) -> Result<ProfileModel> {
    let n = data.len();
    if n_profiles == 0 || n <= n_profiles {
        return Err(Error::Domain(format!(
            "need more participants ({n}) than profiles ({n_profiles})"
        )));
    }
    let init_var = data.column_variances();
    if init_var.iter().any(|&v| !(v > 0.0)) {
        return Err(Error::Degenerate("a column of the behavior matrix is constant".into()));
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        let (ra, rb) = (&data.rows[a], &data.rows[b]);
        ra.iter()
            .zip(rb)
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let rows: Vec<[f64; N_INDICATORS]> = order.iter().map(|&i| data.rows[i]).collect();

    let outcomes: Vec<RunOutcome> = (0..N_RESTARTS)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(r as u64);
            run_em(&rows, n_profiles, init_var, &mut rng)
        })
        .collect();

    let restart_histories: Vec<Vec<f64>> = outcomes.iter().map(|o| o.history.clone()).collect();
    let mut best: Option<usize> = None;
    for (r, o) in outcomes.iter().enumerate() {
        if o.degenerate {
            log::debug!("restart {r} collapsed a profile; discarded");
            continue;
        }
        let ll = *o.history.last().expect("history starts non-empty");
        if best.is_none_or(|b| ll > *outcomes[b].history.last().unwrap()) {
            best = Some(r);
        }
    }
    let best = best.ok_or_else(|| {
        Error::Degenerate(format!("all {N_RESTARTS} EM restarts collapsed a profile"))
    })?;
    let o = outcomes.into_iter().nth(best).unwrap();

    let mut responsibilities = vec![Vec::new(); n];
    for (sorted_pos, &orig) in order.iter().enumerate() {
        responsibilities[orig] = o.resp[sorted_pos].clone();
    }
    Ok(ProfileModel {
        n_profiles,
        means: o.params.means,
        variances: o.params.variances,
        weights: o.params.weights,
        responsibilities,
        log_likelihood: *o.history.last().unwrap(),
        history: o.history,
        restart_histories,
        best_restart: best,
    })
}

/// Most probable profile per participant; ties go to the lower profile index.
pub fn assign_profiles(model: &ProfileModel) -> Vec<usize> {
    model.responsibilities.iter().map(|r| argmax_first(r)).collect()
}

fn argmax_first(r: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in r.iter().enumerate() {
        if v > r[best] {
            best = i;
        }
    }
    best
}

/// Agreement between two labelings under the best relabeling of `assigned`.
pub fn permutation_accuracy(assigned: &[usize], truth: &[usize], n_profiles: usize) -> f64 {
    fn permutations(k: usize) -> Vec<Vec<usize>> {
        if k == 0 {
            return vec![Vec::new()];
        }
        let mut out = Vec::new();
        for p in permutations(k - 1) {
            for pos in 0..k {
                let mut q = p.clone();
                q.insert(pos, k - 1);
                out.push(q);
            }
        }
        out
    }
    if assigned.is_empty() {
        return f64::NAN;
    }
    permutations(n_profiles)
        .iter()
        .map(|perm| assigned.iter().zip(truth).filter(|(a, t)| perm[**a] == **t).count())
        .max()
        .unwrap_or(0) as f64
        / assigned.len() as f64
}

/// Performance name of each profile, ordered by the grand mean of its profile
/// means (highest = High). Exact ties keep index order and are logged.
pub fn name_profiles(model: &ProfileModel) -> Result<Vec<PerformanceLevel>> {
    if model.n_profiles != 3 {
        return Err(Error::Domain(format!(
            "profile naming needs 3 profiles, got {}",
            model.n_profiles
        )));
    }
    let grand: Vec<f64> = model
        .means
        .iter()
        .map(|m| m.iter().sum::<f64>() / N_INDICATORS as f64)
        .collect();
    let mut order: Vec<usize> = (0..3).collect();
    // Stable sort: equal grand means stay in profile index order.
    order.sort_by(|&a, &b| grand[b].total_cmp(&grand[a]));
    for w in order.windows(2) {
        if grand[w[0]] == grand[w[1]] {
            log::warn!("profiles {} and {} have equal grand means", w[0], w[1]);
        }
    }
    let mut names = vec![PerformanceLevel::High; 3];
    for (rank, &p) in order.iter().enumerate() {
        names[p] = PerformanceLevel::ALL[rank];
    }
    Ok(names)
}

/// Profile means after column centering and scaling, for display.
pub fn standardized_means(model: &ProfileModel, data: &BehaviorMatrix) -> Vec<[f64; N_INDICATORS]> {
    let mu = data.column_means();
    let sd = data.column_variances().map(f64::sqrt);
    model
        .means
        .iter()
        .map(|m| std::array::from_fn(|j| (m[j] - mu[j]) / sd[j]))
        .collect()
}

/// BIC of the best fit for each profile count in `counts`.
pub fn bic_table(data: &BehaviorMatrix, counts: &[usize], seed: u64) -> Vec<(usize, Result<f64>)> {
    counts
        .iter()
        .map(|&k| (k, fit_gmm_em(data, k, seed).map(|m| m.bic())))
        .collect()
}

pub const BEHAVIOR_HEADER: [&str; 4] = ["participant_id", "acc_EL", "acc_LEP", "acc_SI"];

pub fn write_behavior_csv(path: &Path, data: &BehaviorMatrix, labels: Option<&[PerformanceLevel]>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<&str> = BEHAVIOR_HEADER.to_vec();
    if labels.is_some() {
        header.push("profile");
    }
    w.write_record(&header)?;
    for (i, (id, r)) in data.participant_ids.iter().zip(&data.rows).enumerate() {
        let mut rec = vec![id.clone()];
        rec.extend(r.iter().map(|v| format!("{v}")));
        if let Some(l) = labels {
            rec.push(l[i].to_string());
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads the first four columns; a trailing `profile` column is ignored.
pub fn read_behavior_csv(path: &Path) -> Result<BehaviorMatrix> {
    if !path.exists() {
        return Err(Error::MissingInput(path.to_path_buf()));
    }
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header.len() < 4 || header[..4] != BEHAVIOR_HEADER {
        return Err(Error::Parse(format!("unexpected behavior header {header:?}")));
    }
    let mut ids = Vec::new();
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        ids.push(rec[0].to_string());
        let mut row = [0.0; N_INDICATORS];
        for j in 0..N_INDICATORS {
            row[j] = rec[j + 1]
                .trim()
                .parse()
                .map_err(|e| Error::Parse(format!("accuracy `{}`: {e}", &rec[j + 1])))?;
        }
        rows.push(row);
    }
    BehaviorMatrix::new(ids, rows)
}
