use hazalert::continual::{
    ewc_loss, fisher_diag, forgetting_metrics, mean_forgetting, rehearsal_batch, run_sequential, ContinualConfig,
    FisherAnchor, RehearsalBuffer, Strategy, TaskData, TaskSequence,
};
use hazalert::nn::{Classifier, Examples, Head, TrainConfig};
use hazalert::{Error, HazardType};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Binary logistic regression `p(1 | x) = σ(w x + b)`, params `[w, b]`.
struct Logistic;

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

impl Classifier for Logistic {
    fn n_params(&self) -> usize {
        2
    }

    fn log_probs(&self, p: &[f64], x: &[f64]) -> Vec<f64> {
        let q = sigmoid(p[0] * x[0] + p[1]);
        vec![(1.0 - q).ln(), q.ln()]
    }

    fn accumulate_log_prob_grad(&self, p: &[f64], x: &[f64], label: usize, scale: f64, grad: &mut [f64]) -> f64 {
        let q = sigmoid(p[0] * x[0] + p[1]);
        let r = label as f64 - q;
        grad[0] += scale * r * x[0];
        grad[1] += scale * r;
        if label == 1 { q.ln() } else { (1.0 - q).ln() }
    }
}

#[test]
fn fisher_matches_closed_form_on_logistic_toy() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let xs: Vec<Vec<f64>> = (0..10_000).map(|_| vec![rng.random_range(-2.0..2.0)]).collect();
    let params = [1.3, -0.4];
    // E_y[(y - q)^2] = q (1 - q).
    let mut exact = [0.0; 2];
    for x in &xs {
        let q = sigmoid(params[0] * x[0] + params[1]);
        exact[0] += q * (1.0 - q) * x[0] * x[0];
        exact[1] += q * (1.0 - q);
    }
    exact.iter_mut().for_each(|e| *e /= xs.len() as f64);
    let f = fisher_diag(&Logistic, &params, &xs, 17);
    for i in 0..2 {
        let rel = (f[i] - exact[i]).abs() / exact[i];
        assert!(rel < 0.02, "fisher[{i}] {} vs {} (rel {rel})", f[i], exact[i]);
    }
}

#[test]
fn fisher_is_deterministic_and_empty_safe() {
    let xs: Vec<Vec<f64>> = (0..50).map(|i| vec![i as f64 / 25.0 - 1.0]).collect();
    assert_eq!(fisher_diag(&Logistic, &[0.5, 0.1], &xs, 4), fisher_diag(&Logistic, &[0.5, 0.1], &xs, 4));
    assert_eq!(fisher_diag(&Logistic, &[0.5, 0.1], &[], 4), vec![0.0, 0.0]);
}

fn blobs(n: usize, shift: f64, seed: u64) -> Examples {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centres = [[2.0, 0.0, 0.0, 0.0], [0.0, 2.0, 0.0, 0.0], [0.0, 0.0, 2.0, 0.0]];
    let mut inputs = Vec::new();
    let mut labels = Vec::new();
    for i in 0..n {
        let c = i % 3;
        let x: Vec<f64> = (0..4)
            .map(|d| centres[c][d] + if d == 3 { shift } else { 0.0 } + rng.random_range(-0.6..0.6))
            .collect();
        inputs.push(x);
        labels.push(c);
    }
    Examples::new(inputs, labels).unwrap()
}

fn small_head() -> Head {
    Head {
        in_dim: 4,
        hidden: 8,
        n_classes: 3,
    }
}

#[test]
fn ewc_penalty_gradient_matches_finite_differences() {
    let head = small_head();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let n = head.n_params();
    let anchor: Vec<f64> = (0..n).map(|_| rng.random_range(-0.5..0.5)).collect();
    let fisher: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..2.0)).collect();
    let a = FisherAnchor::new(fisher, anchor.clone(), 7.5).unwrap();
    let batch = blobs(12, 0.0, 1);
    let theta: Vec<f64> = anchor.iter().map(|v| v + rng.random_range(-0.3..0.3)).collect();
    let (_, g) = ewc_loss(&head, &batch, &theta, &a);
    let h = 1e-5;
    for i in (0..n).step_by(3) {
        let mut up = theta.clone();
        let mut dn = theta.clone();
        up[i] += h;
        dn[i] -= h;
        let fd = (ewc_loss(&head, &batch, &up, &a).0 - ewc_loss(&head, &batch, &dn, &a).0) / (2.0 * h);
        assert!((fd - g[i]).abs() <= 1e-6 * fd.abs().max(1.0), "coord {i}: fd {fd} vs {}", g[i]);
    }
}

#[test]
fn penalty_is_zero_at_anchor_and_scales_with_lambda() {
    let anchor = vec![0.2, -1.0, 3.0];
    let a = FisherAnchor::new(vec![1.0, 0.5, 2.0], anchor.clone(), 10.0).unwrap();
    let mut g = vec![0.0; 3];
    assert_eq!(a.penalty(&anchor, &mut g), 0.0);
    assert!(g.iter().all(|v| *v == 0.0));
    let theta = [1.2, -1.0, 2.0];
    // (10/2) (1·1 + 0 + 2·1) = 15
    assert!((a.penalty(&theta, &mut g) - 15.0).abs() < 1e-12);
    let zero = FisherAnchor::new(vec![1.0, 0.5, 2.0], anchor, 0.0).unwrap();
    let mut g0 = vec![0.0; 3];
    assert_eq!(zero.penalty(&theta, &mut g0), 0.0);
    assert!(g0.iter().all(|v| *v == 0.0));
}

#[test]
fn rehearsal_draws_are_uniform_over_the_buffer() {
    let items = Examples::new((0..20).map(|i| vec![i as f64]).collect(), (0..20).map(|i| i % 3).collect()).unwrap();
    let buf = RehearsalBuffer::uniform_from(&items, HazardType::EL, 20, 1);
    let batch = Examples::new(vec![vec![-1.0]; 4], vec![0; 4]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut counts = [0usize; 20];
    let mut total = 0;
    while total < 10_000 {
        let mixed = rehearsal_batch(&buf, &batch, 0.25, &mut rng);
        assert_eq!(&mixed.inputs[..4], &batch.inputs[..]);
        for x in &mixed.inputs[4..] {
            counts[x[0] as usize] += 1;
            total += 1;
        }
    }
    let p = 1.0 / 20.0;
    let sd = (total as f64 * p * (1.0 - p)).sqrt();
    for (i, &c) in counts.iter().enumerate() {
        let z = (c as f64 - total as f64 * p) / sd;
        assert!(z.abs() < 3.0, "item {i}: {c} draws (z = {z:.2})");
    }
}

#[test]
fn buffer_sample_has_no_repeats() {
    let items = Examples::new((0..50).map(|i| vec![i as f64]).collect(), vec![0; 50]).unwrap();
    let buf = RehearsalBuffer::uniform_from(&items, HazardType::SI, 30, 9);
    let mut seen: Vec<i64> = buf.items.inputs.iter().map(|x| x[0] as i64).collect();
    seen.dedup();
    assert_eq!(seen.len(), 30);
    assert_eq!(buf.source_tasks, vec![HazardType::SI]);
}

fn quick_config(strategies: Vec<Strategy>) -> ContinualConfig {
    ContinualConfig {
        strategies,
        seeds: vec![1, 2],
        train: TrainConfig {
            max_epochs: 15,
            ..TrainConfig::default()
        },
        ..ContinualConfig::default()
    }
}

fn task(task: HazardType, shift: f64, seed: u64) -> TaskData {
    TaskData {
        task,
        train: blobs(150, shift, seed),
        test: blobs(60, shift, seed + 100),
    }
}

#[test]
fn disabled_regularisers_reproduce_naive_exactly() {
    let seq = TaskSequence::new(vec![task(HazardType::EL, 0.0, 1), task(HazardType::SI, 3.0, 2)]).unwrap();
    let cfg = ContinualConfig {
        ewc_lambda: Some(0.0),
        mix_ratio: Some(0.0),
        ..quick_config(Strategy::ALL.to_vec())
    };
    let m = run_sequential(&small_head(), &seq, &cfg).unwrap();
    let naive = &m.sequential[&Strategy::Naive];
    assert_eq!(&m.sequential[&Strategy::Ewc], naive);
    assert_eq!(&m.sequential[&Strategy::Rehearsal], naive);
}

#[test]
fn identical_tasks_barely_forget() {
    let a = task(HazardType::EL, 0.0, 4);
    let b = TaskData {
        task: HazardType::LEP,
        ..a.clone()
    };
    let seq = TaskSequence::new(vec![a, b]).unwrap();
    let m = run_sequential(&small_head(), &seq, &quick_config(vec![Strategy::Naive])).unwrap();
    for pm in forgetting_metrics(&m) {
        assert!(pm.forgetting <= 0.02, "{}->{} forgot {}", pm.first, pm.second, pm.forgetting);
    }
}

#[test]
fn metrics_recompute_from_matrix_cells() {
    let seq = TaskSequence::new(vec![
        task(HazardType::EL, 0.0, 1),
        task(HazardType::LEP, 1.5, 2),
        task(HazardType::SI, 3.0, 3),
    ])
    .unwrap();
    let m = run_sequential(&small_head(), &seq, &quick_config(vec![Strategy::Naive, Strategy::Ewc])).unwrap();
    assert_eq!(m.sequential[&Strategy::Naive].len(), 6);
    for cell in m.per_task.values() {
        assert_eq!(cell.runs.len(), 2);
        assert!((cell.mean - cell.runs.iter().sum::<f64>() / 2.0).abs() < 1e-15);
    }
    let pms = forgetting_metrics(&m);
    assert_eq!(pms.len(), 12);
    for pm in &pms {
        let cell = m.sequential[&pm.strategy]
            .iter()
            .find(|c| c.first == pm.first && c.second == pm.second)
            .unwrap();
        assert_eq!(pm.forgetting, m.per_task[&pm.first].mean - cell.on_first.mean);
        assert_eq!(pm.transfer, cell.on_second.mean - m.per_task[&pm.second].mean);
    }
    let naive: Vec<f64> = pms.iter().filter(|p| p.strategy == Strategy::Naive).map(|p| p.forgetting).collect();
    let expect = naive.iter().sum::<f64>() / naive.len() as f64;
    assert!((mean_forgetting(&pms, Strategy::Naive) - expect).abs() < 1e-15);
}

#[test]
fn run_is_deterministic() {
    let seq = TaskSequence::new(vec![task(HazardType::EL, 0.0, 1), task(HazardType::SI, 2.0, 2)]).unwrap();
    let cfg = quick_config(Strategy::ALL.to_vec());
    assert_eq!(
        run_sequential(&small_head(), &seq, &cfg).unwrap(),
        run_sequential(&small_head(), &seq, &cfg).unwrap()
    );
}

#[test]
fn config_errors() {
    let bad = |cfg: ContinualConfig| matches!(cfg.validate(), Err(Error::Config(_)));
    assert!(bad(ContinualConfig {
        seeds: vec![],
        ..ContinualConfig::default()
    }));
    assert!(bad(ContinualConfig {
        strategies: vec![],
        ..ContinualConfig::default()
    }));
    assert!(bad(ContinualConfig {
        ewc_lambda: Some(-1.0),
        ..ContinualConfig::default()
    }));
    assert!(bad(ContinualConfig {
        buffer_capacity: None,
        ..ContinualConfig::default()
    }));
    assert!(bad(ContinualConfig {
        mix_ratio: Some(f64::NAN),
        ..ContinualConfig::default()
    }));
    // A missing hyperparameter only matters for the strategy that needs it.
    assert!(ContinualConfig {
        ewc_lambda: None,
        strategies: vec![Strategy::Naive],
        ..ContinualConfig::default()
    }
    .validate()
    .is_ok());
    assert!(TaskSequence::new(vec![task(HazardType::EL, 0.0, 1)]).is_err());
}
