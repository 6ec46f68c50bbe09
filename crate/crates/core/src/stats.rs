//! Rank tests and slope inference: Wilcoxon signed-rank against a fixed
//! median, Mann-Whitney U, Kruskal-Wallis and OLS slope t-test.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal, StudentsT};
use thiserror::Error;

/// Largest Wilcoxon sample evaluated with the exact null distribution.
pub const WILCOXON_EXACT_MAX_N: usize = 25;
/// Largest combined Mann-Whitney sample evaluated exactly.
pub const MWU_EXACT_MAX_N: usize = 12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("degenerate sample: {0}")]
    Degenerate(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

/// Direction of the alternative, relative to the first sample (or to `mu0`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Alternative {
    TwoSided,
    Greater,
    Less,
}

impl Alternative {
    pub fn as_str(&self) -> &'static str {
        match self {
            Alternative::TwoSided => "two-sided",
            Alternative::Greater => "greater",
            Alternative::Less => "less",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Exact,
    NormalApproximation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub statistic: f64,
    pub p_value: f64,
    pub n1: usize,
    pub n2: usize,
    pub alternative: Alternative,
    pub method: Method,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionResult {
    pub slope: f64,
    pub intercept: f64,
    pub slope_se: f64,
    pub t_statistic: f64,
    pub p_value: f64,
    pub n: usize,
}

fn check_finite(values: &[f64], what: &str) -> Result<(), StatsError> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(StatsError::InvalidInput(format!("{what} contains non-finite values")))
    }
}

/// Midranks (1-based) and the sizes of tie groups with more than one member.
pub fn midranks(values: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut ties = Vec::new();
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && values[order[j]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j + 1) as f64 / 2.0;
        for &k in &order[i..j] {
            ranks[k] = rank;
        }
        if j - i > 1 {
            ties.push(j - i);
        }
        i = j;
    }
    (ranks, ties)
}

fn tie_sum(ties: &[usize]) -> f64 {
    ties.iter().map(|&t| (t * t * t - t) as f64).sum()
}

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("standard normal")
}

fn clamp_p(p: f64) -> f64 {
    p.clamp(0.0, 1.0)
}

/// Combines tail probabilities into the requested alternative.
fn sided(upper: f64, lower: f64, alternative: Alternative) -> f64 {
    clamp_p(match alternative {
        Alternative::Greater => upper,
        Alternative::Less => lower,
        Alternative::TwoSided => 2.0 * upper.min(lower),
    })
}

fn normal_p(stat: f64, mean: f64, sd: f64, continuity: bool, alternative: Alternative) -> f64 {
    let n = std_normal();
    let cc = if continuity { 0.5 } else { 0.0 };
    if sd == 0.0 {
        return 1.0;
    }
    let upper = n.sf((stat - mean - cc) / sd);
    let lower = n.cdf((stat - mean + cc) / sd);
    match alternative {
        Alternative::TwoSided => clamp_p(2.0 * n.sf(((stat - mean).abs() - cc).max(0.0) / sd)),
        _ => sided(upper, lower, alternative),
    }
}

/// Wilcoxon signed-rank test of `median(sample) = mu0`, choosing the exact
/// path for at most [`WILCOXON_EXACT_MAX_N`] nonzero differences.
pub fn wilcoxon_signed_rank(
    sample: &[f64],
    mu0: f64,
    alternative: Alternative,
) -> Result<TestResult, StatsError> {
    wilcoxon_signed_rank_with(sample, mu0, alternative, None)
}

/// As [`wilcoxon_signed_rank`] with the evaluation path forced.
pub fn wilcoxon_signed_rank_with(
    sample: &[f64],
    mu0: f64,
    alternative: Alternative,
    method: Option<Method>,
) -> Result<TestResult, StatsError> {
    check_finite(sample, "sample")?;
    let diffs: Vec<f64> = sample.iter().map(|x| x - mu0).filter(|d| *d != 0.0).collect();
    if diffs.is_empty() && !sample.is_empty() {
        return Err(StatsError::Degenerate("all differences are zero".into()));
    }
    let n = diffs.len();
    if n < 5 {
        return Err(StatsError::InsufficientData(format!(
            "need at least 5 nonzero differences, got {n}"
        )));
    }
    let abs: Vec<f64> = diffs.iter().map(|d| d.abs()).collect();
    let (ranks, ties) = midranks(&abs);
    let w_plus: f64 = diffs
        .iter()
        .zip(&ranks)
        .filter(|(d, _)| **d > 0.0)
        .map(|(_, r)| r)
        .sum();
    let method = method.unwrap_or(if n <= WILCOXON_EXACT_MAX_N {
        Method::Exact
    } else {
        Method::NormalApproximation
    });
    let p_value = match method {
        Method::Exact => {
            let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
            let dist = subset_sum_distribution(&doubled);
            let total: f64 = dist.iter().sum();
            let obs = (2.0 * w_plus).round() as usize;
            let upper: f64 = dist[obs..].iter().sum::<f64>() / total;
            let lower: f64 = dist[..=obs].iter().sum::<f64>() / total;
            sided(upper, lower, alternative)
        }
        Method::NormalApproximation => {
            let nf = n as f64;
            let mean = nf * (nf + 1.0) / 4.0;
            let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_sum(&ties) / 48.0;
            normal_p(w_plus, mean, var.max(0.0).sqrt(), true, alternative)
        }
    };
    Ok(TestResult {
        statistic: w_plus,
        p_value,
        n1: n,
        n2: 0,
        alternative,
        method,
    })
}

/// Number of subsets of `weights` achieving each total.
fn subset_sum_distribution(weights: &[usize]) -> Vec<f64> {
    let max: usize = weights.iter().sum();
    let mut dist = vec![0.0; max + 1];
    dist[0] = 1.0;
    let mut reach = 0;
    for &w in weights {
        reach += w;
        for s in (w..=reach).rev() {
            dist[s] += dist[s - w];
        }
    }
    dist
}

/// Mann-Whitney U test; `statistic` is U for sample `a`, and `Greater` means
/// `a` tends to exceed `b`.
pub fn mann_whitney_u(a: &[f64], b: &[f64], alternative: Alternative) -> Result<TestResult, StatsError> {
    mann_whitney_u_with(a, b, alternative, None)
}

/// As [`mann_whitney_u`] with the evaluation path forced.
pub fn mann_whitney_u_with(
    a: &[f64],
    b: &[f64],
    alternative: Alternative,
    method: Option<Method>,
) -> Result<TestResult, StatsError> {
    if a.is_empty() || b.is_empty() {
        return Err(StatsError::InsufficientData("both samples must be non-empty".into()));
    }
    check_finite(a, "first sample")?;
    check_finite(b, "second sample")?;
    let (n1, n2) = (a.len(), b.len());
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let (ranks, ties) = midranks(&pooled);
    let r1: f64 = ranks[..n1].iter().sum();
    let u1 = r1 - (n1 * (n1 + 1)) as f64 / 2.0;
    let method = method.unwrap_or(if n1 + n2 <= MWU_EXACT_MAX_N {
        Method::Exact
    } else {
        Method::NormalApproximation
    });
    let p_value = match method {
        Method::Exact => {
            let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
            let dist = rank_sum_distribution(&doubled, n1);
            let total: f64 = dist.iter().sum();
            let obs = (2.0 * r1).round() as usize;
            let upper = dist[obs..].iter().sum::<f64>() / total;
            let lower = dist[..=obs].iter().sum::<f64>() / total;
            sided(upper, lower, alternative)
        }
        Method::NormalApproximation => {
            let (mean, sd) = mwu_moments(n1, n2, &ties);
            normal_p(u1, mean, sd, true, alternative)
        }
    };
    Ok(TestResult {
        statistic: u1,
        p_value,
        n1,
        n2,
        alternative,
        method,
    })
}

fn mwu_moments(n1: usize, n2: usize, ties: &[usize]) -> (f64, f64) {
    let (f1, f2) = (n1 as f64, n2 as f64);
    let n = f1 + f2;
    let mean = f1 * f2 / 2.0;
    let var = f1 * f2 / 12.0 * ((n + 1.0) - tie_sum(ties) / (n * (n - 1.0)));
    (mean, var.max(0.0).sqrt())
}

/// Number of `k`-subsets of `weights` achieving each total.
fn rank_sum_distribution(weights: &[usize], k: usize) -> Vec<f64> {
    let max: usize = weights.iter().sum();
    let mut dp = vec![vec![0.0; max + 1]; k + 1];
    dp[0][0] = 1.0;
    for (seen, &w) in weights.iter().enumerate() {
        for j in (1..=k.min(seen + 1)).rev() {
            let (lo, hi) = dp.split_at_mut(j);
            let prev = &lo[j - 1];
            let cur = &mut hi[0];
            for s in (w..=max).rev() {
                cur[s] += prev[s - w];
            }
        }
    }
    dp.swap_remove(k)
}

/// Signed z of the Mann-Whitney normal approximation with tie correction.
pub fn mann_whitney_normal_z(a: &[f64], b: &[f64], continuity: bool) -> Result<f64, StatsError> {
    let r = mann_whitney_u_with(a, b, Alternative::TwoSided, Some(Method::NormalApproximation))?;
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let (_, ties) = midranks(&pooled);
    let (mean, sd) = mwu_moments(a.len(), b.len(), &ties);
    if sd == 0.0 {
        return Err(StatsError::Degenerate("all observations tied".into()));
    }
    let d = r.statistic - mean;
    let cc = if continuity { 0.5_f64.min(d.abs()) * d.signum() } else { 0.0 };
    Ok((d - cc) / sd)
}

/// Kruskal-Wallis H test with tie correction.
pub fn kruskal_wallis(groups: &[&[f64]]) -> Result<TestResult, StatsError> {
    if groups.len() < 2 {
        return Err(StatsError::InsufficientData("need at least 2 groups".into()));
    }
    if groups.iter().any(|g| g.is_empty()) {
        return Err(StatsError::InsufficientData("empty group".into()));
    }
    let pooled: Vec<f64> = groups.iter().flat_map(|g| g.iter().copied()).collect();
    check_finite(&pooled, "groups")?;
    let n = pooled.len();
    if n < 5 {
        return Err(StatsError::InsufficientData(format!("need at least 5 observations, got {n}")));
    }
    let (ranks, ties) = midranks(&pooled);
    let nf = n as f64;
    let mut offset = 0;
    let mut acc = 0.0;
    for g in groups {
        let r: f64 = ranks[offset..offset + g.len()].iter().sum();
        acc += r * r / g.len() as f64;
        offset += g.len();
    }
    let h_raw = 12.0 / (nf * (nf + 1.0)) * acc - 3.0 * (nf + 1.0);
    let correction = 1.0 - tie_sum(&ties) / (nf * nf * nf - nf);
    let df = (groups.len() - 1) as f64;
    let (h, p) = if correction <= 0.0 {
        (0.0, 1.0)
    } else {
        let h = (h_raw / correction).max(0.0);
        let chi = ChiSquared::new(df).expect("positive df");
        (h, clamp_p(chi.sf(h)))
    };
    Ok(TestResult {
        statistic: h,
        p_value: p,
        n1: n,
        n2: groups.len(),
        alternative: Alternative::TwoSided,
        method: Method::NormalApproximation,
    })
}

/// Least-squares line with a two-sided t-test on the slope.
pub fn ols_slope(x: &[f64], y: &[f64]) -> Result<RegressionResult, StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::InvalidInput(format!(
            "x has {} values, y has {}",
            x.len(),
            y.len()
        )));
    }
    let n = x.len();
    if n < 3 {
        return Err(StatsError::InsufficientData(format!("need at least 3 points, got {n}")));
    }
    check_finite(x, "x")?;
    check_finite(y, "y")?;
    let nf = n as f64;
    let mx = x.iter().sum::<f64>() / nf;
    let my = y.iter().sum::<f64>() / nf;
    let sxx: f64 = x.iter().map(|v| (v - mx) * (v - mx)).sum();
    if sxx == 0.0 {
        return Err(StatsError::Degenerate("x is constant".into()));
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = x
        .iter()
        .zip(y)
        .map(|(a, b)| {
            let r = b - intercept - slope * a;
            r * r
        })
        .sum();
    let df = nf - 2.0;
    let slope_se = (sse / df / sxx).sqrt();
    let (t_statistic, p_value) = if slope_se == 0.0 {
        if slope == 0.0 {
            (0.0, 1.0)
        } else {
            (f64::INFINITY.copysign(slope), 0.0)
        }
    } else {
        let t = slope / slope_se;
        let dist = StudentsT::new(0.0, 1.0, df).expect("positive df");
        (t, clamp_p(2.0 * dist.sf(t.abs())))
    };
    Ok(RegressionResult {
        slope,
        intercept,
        slope_se,
        t_statistic,
        p_value,
        n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn midranks_average_ties() {
        let (r, t) = midranks(&[3.0, 1.0, 3.0, 2.0]);
        assert_eq!(r, vec![3.5, 1.0, 3.5, 2.0]);
        assert_eq!(t, vec![2]);
    }

    #[test]
    fn wilcoxon_all_positive_six() {
        let r = wilcoxon_signed_rank(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0], 0.0, Alternative::TwoSided).unwrap();
        assert_eq!(r.method, Method::Exact);
        assert!((r.p_value - 0.03125).abs() < 1e-15);
        assert_eq!(r.statistic, 21.0);
    }

    #[test]
    fn wilcoxon_symmetric_is_near_one() {
        let e = 1e-3;
        let s = [0.4, 0.45, 0.55, 0.6, 0.5 - e, 0.5 + e];
        let r = wilcoxon_signed_rank(&s, 0.5, Alternative::TwoSided).unwrap();
        assert!(r.p_value > 0.99, "{}", r.p_value);
    }

    #[test]
    fn wilcoxon_errors() {
        assert!(matches!(
            wilcoxon_signed_rank(&[0.5; 8], 0.5, Alternative::TwoSided),
            Err(StatsError::Degenerate(_))
        ));
        assert!(matches!(
            wilcoxon_signed_rank(&[1.0, 2.0, 3.0, 4.0], 0.0, Alternative::TwoSided),
            Err(StatsError::InsufficientData(_))
        ));
    }

    #[test]
    fn mwu_textbook_example() {
        let r = mann_whitney_u(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0], Alternative::Less).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert!((r.p_value - 0.05).abs() < 1e-15);
        assert_eq!(r.method, Method::Exact);
    }

    #[test]
    fn mwu_identical_samples() {
        let a = [1.0, 2.0, 3.0, 4.0];
        let r = mann_whitney_u(&a, &a, Alternative::TwoSided).unwrap();
        assert_eq!(r.p_value, 1.0);
        assert!(mann_whitney_u(&[], &a, Alternative::TwoSided).is_err());
    }

    #[test]
    fn kruskal_wallis_hand_fixture() {
        let g1 = [1.0, 5.0, 9.0];
        let g2 = [2.0, 6.0, 7.0];
        let g3 = [3.0, 4.0, 8.0];
        // Rank sums 15, 15, 15 -> H = 12/(9*10) * 3 * 75 - 30 = 0.
        let r = kruskal_wallis(&[&g1, &g2, &g3]).unwrap();
        assert!(r.statistic.abs() < 1e-12);
        let h1 = [1.0, 2.0, 3.0];
        let h2 = [4.0, 5.0, 6.0];
        let h3 = [7.0, 8.0, 9.0];
        // Rank sums 6, 15, 24: 12/90 * (12 + 75 + 192) - 30 = 7.2.
        let r = kruskal_wallis(&[&h1, &h2, &h3]).unwrap();
        assert!((r.statistic - 7.2).abs() < 1e-12);
        assert!((r.p_value - (-3.6f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn kruskal_wallis_degenerate_cases() {
        let same = [2.0; 4];
        let r = kruskal_wallis(&[&same, &same]).unwrap();
        assert_eq!((r.statistic, r.p_value), (0.0, 1.0));
        assert!(kruskal_wallis(&[&same]).is_err());
    }

    #[test]
    fn ols_exact_line_and_orthogonal() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let y = [2.0, 4.0, 6.0, 8.0];
        let r = ols_slope(&x, &y).unwrap();
        assert!((r.slope - 2.0).abs() < 1e-12);
        assert!(r.intercept.abs() < 1e-12);
        assert_eq!(r.p_value, 0.0);
        // Symmetric V: slope exactly zero.
        let x = [-2.0, -1.0, 0.0, 1.0, 2.0];
        let y = [4.0, 1.0, 0.0, 1.0, 4.0];
        let r = ols_slope(&x, &y).unwrap();
        assert_eq!(r.slope, 0.0);
        assert!(r.p_value > 0.5);
        assert!(ols_slope(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]).is_err());
    }

    proptest! {
        #[test]
        fn mwu_u_complement(a in prop::collection::vec(-50i32..50, 1..15), b in prop::collection::vec(-50i32..50, 1..15)) {
            let a: Vec<f64> = a.into_iter().map(f64::from).collect();
            let b: Vec<f64> = b.into_iter().map(f64::from).collect();
            let r1 = mann_whitney_u(&a, &b, Alternative::TwoSided).unwrap();
            let r2 = mann_whitney_u(&b, &a, Alternative::TwoSided).unwrap();
            prop_assert!((r1.statistic + r2.statistic - (a.len() * b.len()) as f64).abs() < 1e-9);
            for alt in [Alternative::Greater, Alternative::Less, Alternative::TwoSided] {
                let r = mann_whitney_u(&a, &b, alt).unwrap();
                prop_assert!((0.0..=1.0).contains(&r.p_value));
            }
        }

        #[test]
        fn one_sided_not_above_two_sided(s in prop::collection::vec(-20i32..20, 5..40)) {
            let s: Vec<f64> = s.into_iter().map(|v| f64::from(v) + 0.5).collect();
            let two = wilcoxon_signed_rank(&s, 0.0, Alternative::TwoSided).unwrap().p_value;
            let g = wilcoxon_signed_rank(&s, 0.0, Alternative::Greater).unwrap().p_value;
            let l = wilcoxon_signed_rank(&s, 0.0, Alternative::Less).unwrap().p_value;
            prop_assert!(g.min(l) <= two + 1e-12);
            prop_assert!((0.0..=1.0).contains(&two));
        }

        #[test]
        fn ols_scale_equivariance(
            pts in prop::collection::vec((-100.0f64..100.0, -100.0f64..100.0), 4..30),
            c in 0.1f64..50.0,
        ) {
            let x: Vec<f64> = pts.iter().map(|p| p.0).collect();
            let y: Vec<f64> = pts.iter().map(|p| p.1).collect();
            let xs: Vec<f64> = x.iter().map(|v| v * c).collect();
            if let (Ok(a), Ok(b)) = (ols_slope(&x, &y), ols_slope(&xs, &y)) {
                prop_assert!((a.slope - b.slope * c).abs() <= 1e-9 * (1.0 + a.slope.abs()));
                if a.t_statistic.is_finite() {
                    prop_assert!((a.t_statistic - b.t_statistic).abs() <= 1e-6 * (1.0 + a.t_statistic.abs()));
                    prop_assert!((a.p_value - b.p_value).abs() <= 1e-9);
                }
            }
        }
    }
}
