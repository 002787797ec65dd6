//! No-U-Turn sampler with multinomial trajectory sampling.
//!
//! Trajectories double in a random direction until the generalised U-turn
//! criterion (momentum sum against the edge momenta, plus the two sub-tree
//! cross checks) fires or `max_tree_depth` is reached. Within sub-trees the
//! proposal is drawn proportionally to `exp(-H)`; across doublings a biased
//! progressive draw favours the newer half. Unit mass matrix throughout.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{ChainConfig, LogDensity, PosteriorDraws};
use crate::Result;

/// Energy error beyond which a transition is flagged divergent.
const MAX_ENERGY_ERROR: f64 = 1000.0;

/// Position, momentum and cached gradient of the log density.
#[derive(Debug, Clone, PartialEq)]
pub struct PhasePoint {
    pub q: Vec<f64>,
    pub p: Vec<f64>,
    pub grad: Vec<f64>,
    pub log_density: f64,
}

impl PhasePoint {
    /// Evaluates the density at `q`; `None` if it is not finite.
    pub fn new<T: LogDensity + ?Sized>(target: &T, q: Vec<f64>, p: Vec<f64>) -> Option<Self> {
        let mut grad = vec![0.0; q.len()];
        let log_density = target.log_density(&q, &mut grad)?;
        if !log_density.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return None;
        }
        Some(Self {
            q,
            p,
            grad,
            log_density,
        })
    }

    /// Hamiltonian `-log p(q) + |p|^2 / 2`.
    pub fn energy(&self) -> f64 {
        -self.log_density + 0.5 * dot(&self.p, &self.p)
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// One leapfrog step of size `step_size` (negative integrates backwards).
///
/// Returns `None` when the density or its gradient is not finite at the new
/// position, which the sampler treats as a divergence.
pub fn leapfrog<T: LogDensity + ?Sized>(
    target: &T,
    state: &PhasePoint,
    step_size: f64,
) -> Option<PhasePoint> {
    let half = 0.5 * step_size;
    let mut p: Vec<f64> = state
        .p
        .iter()
        .zip(&state.grad)
        .map(|(p, g)| p + half * g)
        .collect();
    let q: Vec<f64> = state.q.iter().zip(&p).map(|(q, p)| q + step_size * p).collect();
    let mut grad = vec![0.0; q.len()];
    let log_density = target.log_density(&q, &mut grad)?;
    if !log_density.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return None;
    }
    for (pi, gi) in p.iter_mut().zip(&grad) {
        *pi += half * gi;
    }
    if p.iter().any(|v| !v.is_finite()) {
        return None;
    }
    Some(PhasePoint {
        q,
        p,
        grad,
        log_density,
    })
}

fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

fn turning(rho: &[f64], p_minus: &[f64], p_plus: &[f64]) -> bool {
    !(dot(rho, p_minus) > 0.0 && dot(rho, p_plus) > 0.0)
}

struct Tree {
    minus: PhasePoint,
    plus: PhasePoint,
    proposal: PhasePoint,
    log_weight: f64,
    rho: Vec<f64>,
    n_leapfrog: usize,
    sum_accept: f64,
    /// Set when the tree must be discarded (divergence or internal U-turn).
    stop: bool,
    divergent: bool,
}

/// Joins two adjacent trees; `left` is the one on the minus side.
fn merged_turning(left: &Tree, right: &Tree, rho: &[f64]) -> bool {
    if turning(rho, &left.minus.p, &right.plus.p) {
        return true;
    }
    let rho_l: Vec<f64> = left.rho.iter().zip(&right.minus.p).map(|(a, b)| a + b).collect();
    if turning(&rho_l, &left.minus.p, &right.minus.p) {
        return true;
    }
    let rho_r: Vec<f64> = right.rho.iter().zip(&left.plus.p).map(|(a, b)| a + b).collect();
    turning(&rho_r, &left.plus.p, &right.plus.p)
}

struct Builder<'a, T: ?Sized> {
    target: &'a T,
    step_size: f64,
    energy0: f64,
}

impl<T: LogDensity + ?Sized> Builder<'_, T> {
    fn leaf(&self, edge: &PhasePoint, dir: f64) -> std::result::Result<Tree, ()> {
        let next = leapfrog(self.target, edge, dir * self.step_size).ok_or(())?;
        let delta = next.energy() - self.energy0;
        if !delta.is_finite() || delta > MAX_ENERGY_ERROR {
            return Err(());
        }
        Ok(Tree {
            minus: next.clone(),
            plus: next.clone(),
            rho: next.p.clone(),
            proposal: next,
            log_weight: -delta,
            n_leapfrog: 1,
            sum_accept: (-delta).exp().min(1.0),
            stop: false,
            divergent: false,
        })
    }

    fn divergent_leaf(edge: &PhasePoint) -> Tree {
        Tree {
            minus: edge.clone(),
            plus: edge.clone(),
            proposal: edge.clone(),
            log_weight: f64::NEG_INFINITY,
            rho: vec![0.0; edge.q.len()],
            n_leapfrog: 1,
            sum_accept: 0.0,
            stop: true,
            divergent: true,
        }
    }

    fn build<R: Rng>(&self, edge: &PhasePoint, depth: usize, dir: f64, rng: &mut R) -> Tree {
        if depth == 0 {
            return self.leaf(edge, dir).unwrap_or_else(|_| Self::divergent_leaf(edge));
        }
        let inner = self.build(edge, depth - 1, dir, rng);
        if inner.stop {
            return inner;
        }
        let next_edge = if dir > 0.0 { &inner.plus } else { &inner.minus };
        let outer = self.build(next_edge, depth - 1, dir, rng);
        let n_leapfrog = inner.n_leapfrog + outer.n_leapfrog;
        let sum_accept = inner.sum_accept + outer.sum_accept;
        if outer.stop {
            return Tree {
                n_leapfrog,
                sum_accept,
                ..outer
            };
        }
        let log_weight = log_add_exp(inner.log_weight, outer.log_weight);
        let take_outer = rng.random::<f64>().ln() < outer.log_weight - log_weight;
        let rho: Vec<f64> = inner.rho.iter().zip(&outer.rho).map(|(a, b)| a + b).collect();
        let (left, right) = if dir > 0.0 {
            (&inner, &outer)
        } else {
            (&outer, &inner)
        };
        let stop = merged_turning(left, right, &rho);
        let (minus, plus) = (left.minus.clone(), right.plus.clone());
        let proposal = if take_outer {
            outer.proposal
        } else {
            inner.proposal
        };
        Tree {
            minus,
            plus,
            proposal,
            log_weight,
            rho,
            n_leapfrog,
            sum_accept,
            stop,
            divergent: false,
        }
    }
}

struct Transition {
    state: PhasePoint,
    accept_stat: f64,
    depth: usize,
    divergent: bool,
}

fn transition<T: LogDensity + ?Sized, R: Rng>(
    target: &T,
    current: &PhasePoint,
    step_size: f64,
    max_depth: usize,
    rng: &mut R,
) -> Transition {
    let p0: Vec<f64> = (0..current.q.len())
        .map(|_| StandardNormal.sample(rng))
        .collect();
    let start = PhasePoint {
        p: p0,
        ..current.clone()
    };
    let builder = Builder {
        target,
        step_size,
        energy0: start.energy(),
    };
    let mut tree = Tree {
        minus: start.clone(),
        plus: start.clone(),
        rho: start.p.clone(),
        proposal: start,
        log_weight: 0.0,
        n_leapfrog: 0,
        sum_accept: 0.0,
        stop: false,
        divergent: false,
    };
    let mut depth = 0;
    let mut divergent = false;
    while depth < max_depth {
        let dir = if rng.random::<bool>() { 1.0 } else { -1.0 };
        let edge = if dir > 0.0 {
            tree.plus.clone()
        } else {
            tree.minus.clone()
        };
        let sub = builder.build(&edge, depth, dir, rng);
        tree.n_leapfrog += sub.n_leapfrog;
        tree.sum_accept += sub.sum_accept;
        if sub.stop {
            divergent = sub.divergent;
            break;
        }
        depth += 1;
        // Biased progressive sampling toward the new half.
        let accept = sub.log_weight - tree.log_weight;
        if accept >= 0.0 || rng.random::<f64>().ln() < accept {
            tree.proposal = sub.proposal.clone();
        }
        tree.log_weight = log_add_exp(tree.log_weight, sub.log_weight);
        let rho: Vec<f64> = tree.rho.iter().zip(&sub.rho).map(|(a, b)| a + b).collect();
        let stop = if dir > 0.0 {
            merged_turning(&tree, &sub, &rho)
        } else {
            merged_turning(&sub, &tree, &rho)
        };
        if dir > 0.0 {
            tree.plus = sub.plus;
        } else {
            tree.minus = sub.minus;
        }
        tree.rho = rho;
        if stop {
            break;
        }
    }
    let accept_stat = if tree.n_leapfrog > 0 {
        tree.sum_accept / tree.n_leapfrog as f64
    } else {
        0.0
    };
    Transition {
        state: tree.proposal,
        accept_stat,
        depth,
        divergent,
    }
}

/// Dual averaging of the log step size toward a target acceptance statistic.
struct DualAveraging {
    mu: f64,
    target: f64,
    h_bar: f64,
    log_step: f64,
    log_step_bar: f64,
    count: f64,
}

impl DualAveraging {
    const GAMMA: f64 = 0.05;
    const T0: f64 = 10.0;
    const KAPPA: f64 = 0.75;

    fn new(step_size: f64, target: f64) -> Self {
        Self {
            mu: (10.0 * step_size).ln(),
            target,
            h_bar: 0.0,
            log_step: step_size.ln(),
            log_step_bar: 0.0,
            count: 0.0,
        }
    }

    fn update(&mut self, accept_stat: f64) -> f64 {
        self.count += 1.0;
        let m = self.count;
        let w = 1.0 / (m + Self::T0);
        self.h_bar = (1.0 - w) * self.h_bar + w * (self.target - accept_stat);
        self.log_step = self.mu - m.sqrt() / Self::GAMMA * self.h_bar;
        let eta = m.powf(-Self::KAPPA);
        self.log_step_bar = eta * self.log_step + (1.0 - eta) * self.log_step_bar;
        self.log_step.exp()
    }

    fn final_step(&self) -> f64 {
        self.log_step_bar.exp()
    }
}

/// Heuristic initial step size: double or halve until a single leapfrog step's
/// acceptance probability crosses 0.5.
fn initial_step_size<T: LogDensity + ?Sized, R: Rng>(
    target: &T,
    point: &PhasePoint,
    rng: &mut R,
) -> f64 {
    let mut step = 1.0;
    let p: Vec<f64> = (0..point.q.len())
        .map(|_| StandardNormal.sample(rng))
        .collect();
    let start = PhasePoint {
        p,
        ..point.clone()
    };
    let h0 = start.energy();
    let log_accept = |step: f64| match leapfrog(target, &start, step) {
        Some(next) => h0 - next.energy(),
        None => f64::NEG_INFINITY,
    };
    let mut la = log_accept(step);
    let direction = if la > (0.5f64).ln() { 1.0 } else { -1.0 };
    for _ in 0..60 {
        if direction * la <= direction * (0.5f64).ln() {
            break;
        }
        step *= 2f64.powf(direction);
        la = log_accept(step);
    }
    step.clamp(1e-8, 1e3)
}

/// Per-chain sampler diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainDiagnostics {
    pub chain: usize,
    pub step_size: f64,
    pub mean_accept_stat: f64,
    pub mean_tree_depth: f64,
    pub n_divergent: usize,
    pub init: Vec<f64>,
}

struct ChainOutput {
    draws: Vec<Vec<f64>>,
    divergent: Vec<bool>,
    diag: ChainDiagnostics,
}

fn run_chain<T: LogDensity + ?Sized>(
    target: &T,
    config: &ChainConfig,
    chain: usize,
) -> Result<ChainOutput> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(chain as u64);
    let centre = target.initial_point();
    let jitter = Uniform::new_inclusive(-config.init_radius, config.init_radius)
        .map_err(|e| crate::Error::Config(format!("init_radius: {e}")))?;
    let mut current = None;
    for _ in 0..100 {
        let q: Vec<f64> = centre.iter().map(|c| c + jitter.sample(&mut rng)).collect();
        if let Some(pt) = PhasePoint::new(target, q, vec![0.0; centre.len()]) {
            current = Some(pt);
            break;
        }
    }
    let mut current = current.ok_or_else(|| {
        crate::Error::Domain(format!("chain {chain}: no finite initial point in 100 attempts"))
    })?;
    let init = current.q.clone();

    let mut step = initial_step_size(target, &current, &mut rng);
    let mut adapt = DualAveraging::new(step, config.target_accept);
    let mut draws = Vec::with_capacity(config.n_kept());
    let mut divergent = Vec::with_capacity(config.n_kept());
    let (mut sum_accept, mut sum_depth, mut n_div, mut n_post) = (0.0, 0.0, 0usize, 0usize);
    for iter in 0..config.n_iterations {
        let tr = transition(target, &current, step, config.max_tree_depth, &mut rng);
        current = tr.state;
        if iter < config.n_warmup {
            step = adapt.update(tr.accept_stat);
            if iter + 1 == config.n_warmup {
                step = adapt.final_step();
            }
            continue;
        }
        n_post += 1;
        sum_accept += tr.accept_stat;
        sum_depth += tr.depth as f64;
        n_div += tr.divergent as usize;
        if (iter - config.n_warmup) % config.thinning == 0 {
            draws.push(target.constrain(&current.q));
            divergent.push(tr.divergent);
        }
    }
    Ok(ChainOutput {
        draws,
        divergent,
        diag: ChainDiagnostics {
            chain,
            step_size: step,
            mean_accept_stat: sum_accept / n_post as f64,
            mean_tree_depth: sum_depth / n_post as f64,
            n_divergent: n_div,
            init,
        },
    })
}

/// Runs `config.n_chains` independent NUTS chains.
///
/// Chain `c` draws from a ChaCha8 stream `c` seeded by `config.seed`, so results
/// are bit-identical for a fixed seed regardless of thread scheduling.
pub fn nuts_sample<T: LogDensity + ?Sized>(
    target: &T,
    config: &ChainConfig,
) -> Result<PosteriorDraws> {
    config.validate()?;
    let outputs: Vec<ChainOutput> = (0..config.n_chains)
        .into_par_iter()
        .map(|c| run_chain(target, config, c))
        .collect::<Result<_>>()?;
    let n_kept = outputs[0].draws.len();
    let n_params = outputs[0].draws.first().map_or(0, Vec::len);
    let mut values = Vec::with_capacity(n_kept * config.n_chains * n_params);
    let mut divergent = Vec::with_capacity(n_kept * config.n_chains);
    for i in 0..n_kept {
        for out in &outputs {
            values.extend_from_slice(&out.draws[i]);
            divergent.push(out.divergent[i]);
        }
    }
    let draws = PosteriorDraws {
        n_kept,
        n_chains: config.n_chains,
        n_params,
        param_names: target.param_names(),
        values,
        divergent,
        chains: outputs.into_iter().map(|o| o.diag).collect(),
    };
    if draws.failed() {
        log::warn!(
            "{:.1}% of post-warmup transitions diverged (step sizes {:?})",
            100.0 * draws.divergent_fraction(),
            draws.chains.iter().map(|c| c.step_size).collect::<Vec<_>>()
        );
    }
    Ok(draws)
}
