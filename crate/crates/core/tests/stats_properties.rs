use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use v2gsim::economics::{bootstrap_summary, BOOTSTRAP_RESAMPLES};
use v2gsim::stats::{
    mann_whitney_u, mann_whitney_u_with, ols_slope, wilcoxon_signed_rank, wilcoxon_signed_rank_with, Alternative,
    Method,
};

fn normal_sample(rng: &mut ChaCha8Rng, n: usize, mean: f64, sd: f64) -> Vec<f64> {
    let d = Normal::new(mean, sd).unwrap();
    (0..n).map(|_| d.sample(rng)).collect()
}

/// U for the first `n1` values of `pooled`; no ties, so plain ranks.
fn u_first(pooled: &[f64], n1: usize) -> f64 {
    let mut idx: Vec<usize> = (0..pooled.len()).collect();
    idx.sort_by(|&a, &b| pooled[a].total_cmp(&pooled[b]));
    let rank_sum: usize = idx.iter().enumerate().filter(|(_, &i)| i < n1).map(|(r, _)| r + 1).sum();
    rank_sum as f64 - (n1 * (n1 + 1)) as f64 / 2.0
}

#[test]
fn mann_whitney_approximation_matches_monte_carlo_at_fleet_sizes() {
    let mut rng = ChaCha8Rng::seed_from_u64(55_83);
    let a = normal_sample(&mut rng, 55, 0.35, 1.0);
    let b = normal_sample(&mut rng, 83, 0.0, 1.0);
    let res = mann_whitney_u(&a, &b, Alternative::TwoSided).unwrap();
    assert_eq!(res.method, Method::NormalApproximation);

    let mut pooled: Vec<f64> = a.iter().chain(&b).copied().collect();
    let center = 55.0 * 83.0 / 2.0;
    let observed = (u_first(&pooled, 55) - center).abs();
    assert!((res.statistic - u_first(&pooled, 55)).abs() < 1e-9);
    let reps = 200_000;
    let mut hits = 0usize;
    for _ in 0..reps {
        pooled.shuffle(&mut rng);
        if (u_first(&pooled, 55) - center).abs() >= observed - 1e-9 {
            hits += 1;
        }
    }
    let p_mc = hits as f64 / reps as f64;
    assert!((res.p_value - p_mc).abs() < 0.005, "normal {} vs Monte Carlo {p_mc}", res.p_value);
}

#[test]
fn exact_and_normal_paths_agree_at_the_cutoffs() {
    let mut rng = ChaCha8Rng::seed_from_u64(25);
    for alt in [Alternative::TwoSided, Alternative::Greater, Alternative::Less] {
        for shift in [0.0, 0.3, 0.6] {
            let w = normal_sample(&mut rng, 25, shift, 1.0);
            let exact = wilcoxon_signed_rank_with(&w, 0.0, alt, Some(Method::Exact)).unwrap();
            let approx = wilcoxon_signed_rank_with(&w, 0.0, alt, Some(Method::NormalApproximation)).unwrap();
            assert!((exact.p_value - approx.p_value).abs() < 0.01, "Wilcoxon {alt:?}: {exact:?} vs {approx:?}");

            let a = normal_sample(&mut rng, 6, shift, 1.0);
            let b = normal_sample(&mut rng, 6, 0.0, 1.0);
            let exact = mann_whitney_u_with(&a, &b, alt, Some(Method::Exact)).unwrap();
            let approx = mann_whitney_u_with(&a, &b, alt, Some(Method::NormalApproximation)).unwrap();
            assert!((exact.p_value - approx.p_value).abs() < 0.01, "MWU {alt:?}: {exact:?} vs {approx:?}");
        }
    }
}

#[test]
fn percentile_bootstrap_covers_the_true_mean() {
    let mut rng = ChaCha8Rng::seed_from_u64(1000);
    let reps = 1000;
    let covered = (0..reps)
        .filter(|&i| {
            let x = normal_sample(&mut rng, 100, 5.0, 2.0);
            let (lo, hi) = bootstrap_summary(&x, BOOTSTRAP_RESAMPLES, i).unwrap().ci.unwrap();
            lo <= 5.0 && 5.0 <= hi
        })
        .count();
    assert!(covered as f64 >= 0.93 * reps as f64, "covered {covered} of {reps}");
}

fn distinct(v: Vec<f64>) -> Vec<f64> {
    v.iter().enumerate().map(|(i, x)| x + i as f64 * 1e-7).collect()
}

proptest! {
    #[test]
    fn mann_whitney_statistics_sum_to_n1_n2(
        a in proptest::collection::vec(-5.0f64..5.0, 1..30),
        b in proptest::collection::vec(-5.0f64..5.0, 1..30),
    ) {
        let ab = mann_whitney_u(&a, &b, Alternative::TwoSided).unwrap();
        let ba = mann_whitney_u(&b, &a, Alternative::TwoSided).unwrap();
        prop_assert!((ab.statistic + ba.statistic - (a.len() * b.len()) as f64).abs() < 1e-9);
        prop_assert!((0.0..=1.0).contains(&ab.p_value));
    }

    #[test]
    fn one_sided_wilcoxon_never_exceeds_two_sided(
        x in proptest::collection::vec(-3.0f64..3.0, 5..40).prop_map(distinct),
    ) {
        let two = wilcoxon_signed_rank(&x, 0.0, Alternative::TwoSided).unwrap().p_value;
        let g = wilcoxon_signed_rank(&x, 0.0, Alternative::Greater).unwrap().p_value;
        let l = wilcoxon_signed_rank(&x, 0.0, Alternative::Less).unwrap().p_value;
        prop_assert!(g.min(l) <= two + 1e-12);
        prop_assert!((0.0..=1.0).contains(&two));
    }

    #[test]
    fn ols_is_scale_equivariant(
        pts in proptest::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 4..40),
        c in prop_oneof![0.01f64..0.5, 2.0f64..100.0],
    ) {
        let x: Vec<f64> = distinct(pts.iter().map(|p| p.0).collect());
        let y: Vec<f64> = pts.iter().map(|p| p.1 + 0.3 * p.0).collect();
        let base = ols_slope(&x, &y).unwrap();
        let xs: Vec<f64> = x.iter().map(|v| v * c).collect();
        let scaled = ols_slope(&xs, &y).unwrap();
        prop_assert!((scaled.slope * c - base.slope).abs() <= 1e-8 * (1.0 + base.slope.abs()));
        if base.t_statistic.is_finite() {
            prop_assert!((scaled.t_statistic - base.t_statistic).abs() <= 1e-6 * (1.0 + base.t_statistic.abs()));
            prop_assert!((scaled.p_value - base.p_value).abs() <= 1e-9);
        }
    }
}
