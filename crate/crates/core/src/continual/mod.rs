//! Domain-incremental learning across hazard-type tasks.
//!
//! Each ordered pair `X -> Y` trains on `X`, then continues on `Y` with one of
//! three strategies: plain fine-tuning, rehearsal of stored `X` examples, or an
//! EWC penalty anchored at the `X` optimum. Evaluation only ever sees inputs
//! and labels, never the task tag.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::binio::write_json;
use crate::nn::{
    evaluate, nll_loss_and_grad, train_with_hooks, Classifier, Examples, Head, NoHooks, TrainConfig, TrainingHooks,
};
use crate::{Error, HazardType, Result};

/// ChaCha8 stream ids derived from a run seed. Splits and shuffles use
/// streams 0 and 1 inside the trainer.
const STREAM_REHEARSAL: u64 = 2;
const STREAM_FISHER: u64 = 3;
const STREAM_BUFFER: u64 = 4;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// One task's data. Inputs are whatever the classifier consumes (cached stem
/// features for [`Head`]).
#[derive(Debug, Clone, PartialEq)]
pub struct TaskData {
    pub task: HazardType,
    pub train: Examples,
    pub test: Examples,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskSequence {
    tasks: Vec<TaskData>,
}

impl TaskSequence {
    pub fn new(tasks: Vec<TaskData>) -> Result<Self> {
        if tasks.len() < 2 {
            return Err(Error::Config("continual learning needs at least two tasks".into()));
        }
        for (i, t) in tasks.iter().enumerate() {
            if tasks[..i].iter().any(|u| u.task == t.task) {
                return Err(Error::Config(format!("task {} appears twice", t.task)));
            }
            if t.train.is_empty() || t.test.is_empty() {
                return Err(Error::Domain(format!("task {} has an empty train or test set", t.task)));
            }
        }
        Ok(Self { tasks })
    }

    pub fn tasks(&self) -> &[TaskData] {
        &self.tasks
    }

    /// All ordered pairs of distinct tasks, in task order: with (EL, LEP, SI)
    /// this is EL→LEP, EL→SI, LEP→EL, LEP→SI, SI→EL, SI→LEP.
    pub fn ordered_pairs(&self) -> Vec<(usize, usize)> {
        let n = self.tasks.len();
        (0..n).flat_map(|a| (0..n).filter(move |&b| b != a).map(move |b| (a, b))).collect()
    }
}

/// Diagonal empirical Fisher at `params`: the mean squared score of a label
/// sampled from the model's own predictive distribution for each input.
pub fn fisher_diag<C: Classifier + ?Sized>(model: &C, params: &[f64], inputs: &[Vec<f64>], seed: u64) -> Vec<f64> {
    let mut rng = stream(seed, STREAM_FISHER);
    let unit = Uniform::new(0.0, 1.0).expect("valid range");
    let mut fisher = vec![0.0; model.n_params()];
    if inputs.is_empty() {
        return fisher;
    }
    let mut g = vec![0.0; model.n_params()];
    for x in inputs {
        let probs: Vec<f64> = model.log_probs(params, x).iter().map(|l| l.exp()).collect();
        let u: f64 = unit.sample(&mut rng);
        let mut acc = 0.0;
        let mut label = probs.len() - 1;
        for (k, p) in probs.iter().enumerate() {
            acc += p;
            if u < acc {
                label = k;
                break;
            }
        }
        g.fill(0.0);
        model.accumulate_log_prob_grad(params, x, label, 1.0, &mut g);
        for (f, gi) in fisher.iter_mut().zip(&g) {
            *f += gi * gi;
        }
    }
    let n = inputs.len() as f64;
    fisher.iter_mut().for_each(|f| *f /= n);
    fisher
}

/// Quadratic anchor `(λ/2) Σ F_i (θ_i − θ*_i)²`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FisherAnchor {
    pub fisher: Vec<f64>,
    pub anchor: Vec<f64>,
    pub lambda: f64,
}

impl FisherAnchor {
    pub fn new(fisher: Vec<f64>, anchor: Vec<f64>, lambda: f64) -> Result<Self> {
        if fisher.len() != anchor.len() {
            return Err(Error::Shape {
                expected: format!("{} Fisher entries", anchor.len()),
                got: fisher.len().to_string(),
            });
        }
        if fisher.iter().any(|f| !(*f >= 0.0)) {
            return Err(Error::Domain("Fisher entries must be nonnegative".into()));
        }
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(Error::Config(format!("EWC lambda must be finite and >= 0, got {lambda}")));
        }
        Ok(Self { fisher, anchor, lambda })
    }

    /// Adds the penalty gradient `λ F ⊙ (θ − θ*)` into `grad`; returns the penalty.
    pub fn penalty(&self, params: &[f64], grad: &mut [f64]) -> f64 {
        if self.lambda == 0.0 {
            return 0.0;
        }
        let mut total = 0.0;
        for i in 0..params.len() {
            let d = params[i] - self.anchor[i];
            total += self.fisher[i] * d * d;
            grad[i] += self.lambda * self.fisher[i] * d;
        }
        0.5 * self.lambda * total
    }
}

/// Task-B NLL plus the anchor penalty, with its gradient.
pub fn ewc_loss<C: Classifier + ?Sized>(model: &C, batch: &Examples, params: &[f64], anchor: &FisherAnchor) -> (f64, Vec<f64>) {
    let (nll, mut grad) = nll_loss_and_grad(model, params, batch);
    let pen = anchor.penalty(params, &mut grad);
    (nll + pen, grad)
}

struct EwcHooks<'a>(&'a FisherAnchor);

impl TrainingHooks for EwcHooks<'_> {
    fn penalty(&self, params: &[f64], grad: &mut [f64]) -> f64 {
        self.0.penalty(params, grad)
    }
}

/// Stored examples from completed tasks.
#[derive(Debug, Clone, PartialEq)]
pub struct RehearsalBuffer {
    pub items: Examples,
    pub source_tasks: Vec<HazardType>,
    pub capacity: usize,
    /// How `items` were chosen.
    pub provenance: String,
}

impl RehearsalBuffer {
    pub fn empty(capacity: usize) -> Self {
        Self {
            items: Examples::default(),
            source_tasks: Vec::new(),
            capacity,
            provenance: "empty".into(),
        }
    }

    /// Uniform sample without replacement of `min(capacity, n)` examples.
    pub fn uniform_from(data: &Examples, task: HazardType, capacity: usize, seed: u64) -> Self {
        let mut rng = stream(seed, STREAM_BUFFER);
        let k = capacity.min(data.len());
        let mut idx = sample_indices(&mut rng, data.len(), k).into_vec();
        idx.sort_unstable();
        Self {
            items: data.subset(&idx),
            source_tasks: vec![task],
            capacity,
            provenance: format!("uniform without replacement, {k} of {} from {task}, seed {seed}", data.len()),
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

/// Appends `ceil(mix_ratio · |batch|)` buffer items drawn uniformly with
/// replacement.
pub fn rehearsal_batch<R: Rng + ?Sized>(buffer: &RehearsalBuffer, batch: &Examples, mix_ratio: f64, rng: &mut R) -> Examples {
    let k = (mix_ratio * batch.len() as f64).ceil() as usize;
    if k == 0 {
        return batch.clone();
    }
    if buffer.is_empty() {
        log::warn!("rehearsal buffer is empty; batch left unchanged");
        return batch.clone();
    }
    let idx: Vec<usize> = (0..k).map(|_| rng.random_range(0..buffer.len())).collect();
    batch.concat(&buffer.items.subset(&idx))
}

struct RehearsalHooks<'a> {
    buffer: &'a RehearsalBuffer,
    mix_ratio: f64,
    rng: ChaCha8Rng,
}

impl TrainingHooks for RehearsalHooks<'_> {
    fn extend_batch(&mut self, batch: &mut Examples) {
        if self.mix_ratio > 0.0 {
            *batch = rehearsal_batch(self.buffer, batch, self.mix_ratio, &mut self.rng);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Naive,
    Rehearsal,
    Ewc,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::Naive, Strategy::Rehearsal, Strategy::Ewc];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Naive => "naive",
            Strategy::Rehearsal => "rehearsal",
            Strategy::Ewc => "ewc",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "naive" => Ok(Strategy::Naive),
            "rehearsal" => Ok(Strategy::Rehearsal),
            "ewc" => Ok(Strategy::Ewc),
            other => Err(Error::Parse(format!("unknown strategy `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContinualConfig {
    pub strategies: Vec<Strategy>,
    pub ewc_lambda: Option<f64>,
    pub buffer_capacity: Option<usize>,
    pub mix_ratio: Option<f64>,
    /// One seed per run; the run count is `seeds.len()`.
    pub seeds: Vec<u64>,
    pub train: TrainConfig,
}

impl Default for ContinualConfig {
    fn default() -> Self {
        Self {
            strategies: Strategy::ALL.to_vec(),
            ewc_lambda: Some(100.0),
            buffer_capacity: Some(200),
            mix_ratio: Some(0.25),
            seeds: vec![11, 12, 13],
            train: TrainConfig::default(),
        }
    }
}

impl ContinualConfig {
    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one run seed is required".into()));
        }
        if self.strategies.is_empty() {
            return Err(Error::Config("no strategies selected".into()));
        }
        for s in &self.strategies {
            match s {
                Strategy::Naive => {}
                Strategy::Ewc => {
                    let l = self.ewc_lambda.ok_or_else(|| Error::Config("EWC selected without lambda".into()))?;
                    if !(l >= 0.0) || !l.is_finite() {
                        return Err(Error::Config(format!("EWC lambda must be finite and >= 0, got {l}")));
                    }
                }
                Strategy::Rehearsal => {
                    self.buffer_capacity
                        .ok_or_else(|| Error::Config("rehearsal selected without buffer capacity".into()))?;
                    let m = self
                        .mix_ratio
                        .ok_or_else(|| Error::Config("rehearsal selected without mix ratio".into()))?;
                    if !(m >= 0.0) || !m.is_finite() {
                        return Err(Error::Config(format!("mix ratio must be finite and >= 0, got {m}")));
                    }
                }
            }
        }
        self.train.validate()
    }
}

/// Mean of exactly `runs.len()` run accuracies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub mean: f64,
    pub runs: Vec<f64>,
}

impl Cell {
    fn from_runs(runs: Vec<f64>) -> Self {
        let mean = runs.iter().sum::<f64>() / runs.len() as f64;
        Self { mean, runs }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairCell {
    pub first: HazardType,
    pub second: HazardType,
    /// Accuracy on the second task's test set after sequential training.
    pub on_second: Cell,
    /// Accuracy on the first task's test set after sequential training.
    pub on_first: Cell,
}

impl PairCell {
    pub fn label(&self) -> String {
        format!("{}->{}", self.first, self.second)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyMatrix {
    pub tasks: Vec<HazardType>,
    /// Independently trained model per task, on that task's test set.
    pub per_task: BTreeMap<HazardType, Cell>,
    pub sequential: BTreeMap<Strategy, Vec<PairCell>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairMetrics {
    pub strategy: Strategy,
    pub first: HazardType,
    pub second: HazardType,
    /// `acc(first, alone) − acc(first, after second)`.
    pub forgetting: f64,
    /// `acc(second, after first) − acc(second, alone)`.
    pub transfer: f64,
}

/// Per-pair forgetting and transfer, from the matrix means alone.
pub fn forgetting_metrics(m: &AccuracyMatrix) -> Vec<PairMetrics> {
    m.sequential
        .iter()
        .flat_map(|(&strategy, pairs)| {
            pairs.iter().map(move |p| PairMetrics {
                strategy,
                first: p.first,
                second: p.second,
                forgetting: m.per_task[&p.first].mean - p.on_first.mean,
                transfer: p.on_second.mean - m.per_task[&p.second].mean,
            })
        })
        .collect()
}

/// Mean forgetting over all pairs of one strategy.
pub fn mean_forgetting(metrics: &[PairMetrics], strategy: Strategy) -> f64 {
    let v: Vec<f64> = metrics.iter().filter(|m| m.strategy == strategy).map(|m| m.forgetting).collect();
    v.iter().sum::<f64>() / v.len() as f64
}

/// Parameters after training on one task.
fn train_task(head: &Head, data: &Examples, init: Vec<f64>, cfg: &TrainConfig, hooks: &mut dyn TrainingHooks) -> Result<Vec<f64>> {
    Ok(train_with_hooks(head, data, init, cfg, hooks)?.0)
}

struct RunResult {
    per_task: Vec<f64>,
    /// `[strategy][pair] -> (on_second, on_first)`.
    pairs: Vec<Vec<(f64, f64)>>,
}

fn run_once(head: &Head, seq: &TaskSequence, cfg: &ContinualConfig, seed: u64) -> Result<RunResult> {
    let train_cfg = TrainConfig { seed, ..cfg.train.clone() };
    let init = head.init(seed);
    let tasks = seq.tasks();
    let solo: Vec<Vec<f64>> = tasks
        .iter()
        .map(|t| train_task(head, &t.train, init.clone(), &train_cfg, &mut NoHooks))
        .collect::<Result<_>>()?;
    let per_task = tasks.iter().zip(&solo).map(|(t, p)| evaluate(head, p, &t.test)).collect();

    let pairs = seq.ordered_pairs();
    let mut out = Vec::with_capacity(cfg.strategies.len());
    for &strategy in &cfg.strategies {
        let mut row = Vec::with_capacity(pairs.len());
        for &(a, b) in &pairs {
            let start = solo[a].clone();
            let params = match strategy {
                Strategy::Naive => train_task(head, &tasks[b].train, start, &train_cfg, &mut NoHooks)?,
                Strategy::Ewc => {
                    let fisher = fisher_diag(head, &start, &tasks[a].train.inputs, seed);
                    let anchor = FisherAnchor::new(fisher, start.clone(), cfg.ewc_lambda.unwrap_or(0.0))?;
                    train_task(head, &tasks[b].train, start, &train_cfg, &mut EwcHooks(&anchor))?
                }
                Strategy::Rehearsal => {
                    let buffer = RehearsalBuffer::uniform_from(
                        &tasks[a].train,
                        tasks[a].task,
                        cfg.buffer_capacity.unwrap_or(0),
                        seed,
                    );
                    let mut hooks = RehearsalHooks {
                        buffer: &buffer,
                        mix_ratio: cfg.mix_ratio.unwrap_or(0.0),
                        rng: stream(seed, STREAM_REHEARSAL),
                    };
                    train_task(head, &tasks[b].train, start, &train_cfg, &mut hooks)?
                }
            };
            row.push((evaluate(head, &params, &tasks[b].test), evaluate(head, &params, &tasks[a].test)));
        }
        out.push(row);
    }
    Ok(RunResult { per_task, pairs: out })
}

/// Per-task baselines and every ordered pair under every configured
/// strategy, each cell averaged over the configured run seeds.
pub fn run_sequential(head: &Head, seq: &TaskSequence, cfg: &ContinualConfig) -> Result<AccuracyMatrix> {
    cfg.validate()?;
    let runs: Vec<RunResult> = cfg
        .seeds
        .par_iter()
        .map(|&s| run_once(head, seq, cfg, s))
        .collect::<Result<_>>()?;
    let tasks: Vec<HazardType> = seq.tasks().iter().map(|t| t.task).collect();
    let per_task = tasks
        .iter()
        .enumerate()
        .map(|(i, &t)| (t, Cell::from_runs(runs.iter().map(|r| r.per_task[i]).collect())))
        .collect();
    let pairs = seq.ordered_pairs();
    let sequential = cfg
        .strategies
        .iter()
        .enumerate()
        .map(|(si, &s)| {
            let cells = pairs
                .iter()
                .enumerate()
                .map(|(pi, &(a, b))| PairCell {
                    first: tasks[a],
                    second: tasks[b],
                    on_second: Cell::from_runs(runs.iter().map(|r| r.pairs[si][pi].0).collect()),
                    on_first: Cell::from_runs(runs.iter().map(|r| r.pairs[si][pi].1).collect()),
                })
                .collect();
            (s, cells)
        })
        .collect();
    Ok(AccuracyMatrix {
        tasks,
        per_task,
        sequential,
    })
}

/// Table layout: a per-task row over the task columns, then one row per
/// strategy over the ordered-pair columns (accuracy on the second task).
pub fn write_matrix_csv(path: &Path, m: &AccuracyMatrix) -> Result<()> {
    let pair_labels: Vec<String> = m
        .sequential
        .values()
        .next()
        .map(|cells| cells.iter().map(PairCell::label).collect())
        .unwrap_or_default();
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["row".to_string()];
    header.extend(m.tasks.iter().map(|t| t.to_string()));
    header.extend(pair_labels.iter().cloned());
    w.write_record(&header)?;
    let blank = |n: usize| vec![String::new(); n];
    let mut row = vec!["per-task".to_string()];
    row.extend(m.tasks.iter().map(|t| format!("{:.4}", m.per_task[t].mean)));
    row.extend(blank(pair_labels.len()));
    w.write_record(&row)?;
    for (s, cells) in &m.sequential {
        let mut row = vec![s.to_string()];
        row.extend(blank(m.tasks.len()));
        row.extend(cells.iter().map(|c| format!("{:.4}", c.on_second.mean)));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_metrics_csv(path: &Path, metrics: &[PairMetrics]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["strategy", "first", "second", "forgetting", "transfer"])?;
    for m in metrics {
        w.write_record([
            m.strategy.to_string(),
            m.first.to_string(),
            m.second.to_string(),
            format!("{:.4}", m.forgetting),
            format!("{:.4}", m.transfer),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: ContinualConfig,
    pub stem_seed: u64,
    pub matrix: AccuracyMatrix,
}

pub fn write_manifest(path: &Path, manifest: &RunManifest) -> Result<()> {
    write_json(path, manifest)
}
