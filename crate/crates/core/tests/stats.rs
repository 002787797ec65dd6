use hazalert::stats::{
    f_survival, kolmogorov_survival, ks_test, normal_quantile, oneway_anova, studentized_range_cdf, tukey_hsd,
    wilson_lower_bound, GroupedSample,
};
use statrs::distribution::{ContinuousCDF, FisherSnedecor};

// Reference values below were computed with scipy.stats.

const A: [f64; 6] = [4.2, 5.1, 3.9, 4.8, 5.5, 4.4];
const B: [f64; 5] = [5.9, 6.3, 5.2, 6.8, 6.1];
const C: [f64; 7] = [4.0, 3.6, 4.9, 4.1, 3.8, 4.5, 4.2];

fn unbalanced() -> GroupedSample {
    GroupedSample::new(vec![("a".into(), A.to_vec()), ("b".into(), B.to_vec()), ("c".into(), C.to_vec())]).unwrap()
}

#[test]
fn anova_on_unbalanced_groups() {
    let r = oneway_anova(&unbalanced()).unwrap();
    assert!((r.f - 19.118510120377472).abs() < 1e-9, "F {}", r.f);
    assert_eq!((r.df_between, r.df_within), (2.0, 15.0));
    assert!((r.p - 7.483097396843219e-05).abs() / 7.48e-5 < 1e-4, "p {}", r.p);
}

#[test]
fn anova_is_invariant_to_group_order_and_affine_rescaling() {
    let base = oneway_anova(&unbalanced()).unwrap();
    let shuffled = GroupedSample::new(vec![
        ("c".into(), C.iter().rev().copied().collect()),
        ("a".into(), A.to_vec()),
        ("b".into(), B.to_vec()),
    ])
    .unwrap();
    let r = oneway_anova(&shuffled).unwrap();
    assert!((r.f - base.f).abs() < 1e-9);
    let scaled = GroupedSample::new(
        [A.as_slice(), B.as_slice(), C.as_slice()]
            .iter()
            .enumerate()
            .map(|(i, g)| (i.to_string(), g.iter().map(|x| 3.0 * x - 7.0).collect()))
            .collect(),
    )
    .unwrap();
    assert!((oneway_anova(&scaled).unwrap().f - base.f).abs() < 1e-8);
}

#[test]
fn f_survival_against_two_oracles() {
    for &(f, d1, d2, scipy) in &[
        (3.2, 2.0, 207.0, 0.04278670010754896),
        (9.5, 2.0, 15.0, 0.0021606905131606887),
        (0.2, 4.0, 30.0, 0.9363778368101445),
    ] {
        let ours = f_survival(f, d1, d2);
        let statrs = 1.0 - FisherSnedecor::new(d1, d2).unwrap().cdf(f);
        assert!((ours - scipy).abs() < 1e-8, "F({d1},{d2}) at {f}: {ours} vs {scipy}");
        assert!((ours - statrs).abs() < 1e-7);
    }
}

#[test]
fn tukey_kramer_pvalues() {
    let r = tukey_hsd(&unbalanced(), 0.05).unwrap();
    let expect = [("a", "b", 1.53599611e-03), ("a", "c", 2.53304003e-01), ("b", "c", 5.90680399e-05)];
    assert_eq!(r.len(), 3);
    for (cmp, (ga, gb, p)) in r.iter().zip(expect) {
        assert_eq!((cmp.group_a.as_str(), cmp.group_b.as_str()), (ga, gb));
        assert!((cmp.p - p).abs() < 1e-4 * p.max(1e-2), "{ga}-{gb}: {} vs {p}", cmp.p);
        assert_eq!(cmp.significant, p < 0.05);
    }
    assert!(r[0].mean_diff < 0.0 && r[2].mean_diff > 0.0);
}

#[test]
fn studentized_range_cdf_values() {
    for &(q, k, df, scipy) in &[
        (3.0, 3, 20.0, 0.8892432021469359),
        (2.5, 4, 10.0, 0.6580432997362361),
        (4.2, 3, 207.0, 0.9906988285661747),
        (1.0, 2, 5.0, 0.48891591956971947),
        (3.5, 5, 60.0, 0.889851744877155),
    ] {
        let c = studentized_range_cdf(q, k, df);
        assert!((c - scipy).abs() < 1e-6, "q={q} k={k} df={df}: {c} vs {scipy}");
    }
}

#[test]
fn studentized_range_cdf_is_monotone() {
    let mut prev = 0.0;
    for i in 1..60 {
        let c = studentized_range_cdf(i as f64 * 0.1, 3, 30.0);
        assert!(c >= prev - 1e-12);
        prev = c;
    }
    assert!(prev > 0.99);
}

#[test]
fn kolmogorov_survival_values() {
    for &(l, scipy) in &[
        (0.5, 0.9639452436648751),
        (0.8, 0.5441424115741981),
        (1.0, 0.26999967167735456),
        (1.36, 0.049485876755377876),
        (2.0, 0.0006709252557796953),
    ] {
        assert!((kolmogorov_survival(l) - scipy).abs() < 1e-9, "lambda {l}");
    }
}

fn std_normal_cdf(x: f64) -> f64 {
    0.5 * statrs::function::erf::erfc(-x / std::f64::consts::SQRT_2)
}

#[test]
fn ks_against_normal_and_uniform() {
    let x = [0.12, -0.53, 1.21, 0.33, -1.8, 0.77, -0.05, 0.45, 2.1, -0.9, 0.61, -0.22];
    let r = ks_test(&x, std_normal_cdf).unwrap();
    assert!((r.d - 0.16293557735178543).abs() < 1e-12);
    assert!((r.p - 0.9076030318142464).abs() < 1e-8);

    let u = [0.05, 0.11, 0.19, 0.24, 0.38, 0.41, 0.57, 0.66, 0.72, 0.8, 0.93, 0.97, 0.5, 0.31];
    let r = ks_test(&u, |v: f64| v.clamp(0.0, 1.0)).unwrap();
    assert!((r.d - 0.09).abs() < 1e-12);
    assert!((r.p - 0.9998597155045249).abs() < 1e-8);
}

#[test]
fn ks_rejects_a_shifted_sample() {
    let x: Vec<f64> = (0..200).map(|i| 3.0 + (i as f64 + 0.5) / 200.0).collect();
    let r = ks_test(&x, std_normal_cdf).unwrap();
    assert!(r.d > 0.99 && r.p < 1e-10);
}

#[test]
fn ks_needs_eight_values() {
    assert!(ks_test(&[0.0; 7], std_normal_cdf).is_err());
}

#[test]
fn wilson_bound_values() {
    assert!((wilson_lower_bound(20, 24, 0.99) - 0.6007738594564199).abs() < 1e-10);
    assert!((wilson_lower_bound(50, 100, 0.975) - 0.4038315303659957).abs() < 1e-10);
    assert_eq!(wilson_lower_bound(0, 10, 0.95), 0.0);
    assert!((normal_quantile(0.975) - 1.959963984540054).abs() < 1e-12);
}
