//! Behavioral features per vehicle, correlation pruning, k-means with
//! k-means++ seeding, and elbow selection of the cluster count.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::LocalClock;
use crate::timeline::{ChargeEvent, ChargeKind, TripRecord, UsageTimeline, SECONDS_PER_HOUR};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProfilesError {
    #[error("empty usage window for {0}")]
    EmptyWindow(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("feature file line {line}: {message}")]
    Parse { line: usize, message: String },
}

/// Feature columns in the order used for correlation pruning.
pub const FEATURE_NAMES: [&str; 41] = [
    "driving_days",
    "total_trips",
    "cumulative_hours_in_use",
    "cumulative_hours_parked",
    "first_date",
    "last_date",
    "total_charging_sessions",
    "slow_charging_sessions",
    "dcfc_sessions",
    "avg_charging_power_kw",
    "home_charging_sessions",
    "avg_soc_before_charge_pct",
    "avg_soc_after_charge_pct",
    "tw_soc_consumed_driving_pct_h",
    "total_hours_in_use",
    "tw_soc_parked_pct_h",
    "total_hours_parked",
    "avg_soc_driving_pct",
    "total_soc_consumed_driving_pct",
    "total_energy_charged_kwh",
    "calendar_days_observed",
    "hours_in_use_per_day",
    "hours_parked_per_day",
    "soc_consumed_per_driving_day_pct",
    "soc_consumed_per_day_pct",
    "kwh_charged_per_driving_day",
    "kwh_charged_per_day",
    "tw_mean_soc_use_pct",
    "tw_mean_soc_parked_pct",
    "trips_per_driving_day",
    "charges_per_driving_day",
    "ac_charges_per_driving_day",
    "dcfc_per_driving_day",
    "total_trips_recorded",
    "overall_avg_soc_pct",
    "mean_c_rate_charging",
    "mean_c_rate_discharge",
    "efc_charging",
    "efc_driving",
    "driving_days_per_week",
    "charges_per_week",
];

pub fn feature_index(name: &str) -> Option<usize> {
    FEATURE_NAMES.iter().position(|n| *n == name)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub vehicle_id: String,
    /// One value per [`FEATURE_NAMES`] entry; `None` marks a missing value.
    pub values: Vec<Option<f64>>,
}

impl FeatureVector {
    pub fn get(&self, name: &str) -> Option<f64> {
        feature_index(name).and_then(|i| self.values[i])
    }
}

/// Computes every behavioral feature over the observation window.
pub fn extract_features(
    timeline: &UsageTimeline,
    events: &[ChargeEvent],
    trips: &[TripRecord],
    capacity_kwh: f64,
    clock: &LocalClock,
) -> Result<FeatureVector, ProfilesError> {
    let id = timeline.vehicle_id.clone();
    if trips.is_empty() || timeline.samples.len() < 2 {
        return Err(ProfilesError::EmptyWindow(id));
    }
    let first = trips[0].start_time as f64;
    let last = trips[trips.len() - 1].end_time as f64;
    let first_day = clock.day_index(first);
    let last_day = clock.day_index(last - 1e-9);
    let calendar_days = (last_day - first_day + 1) as f64;
    let weeks = calendar_days / 7.0;

    let driving_days = trips
        .iter()
        .map(|t| clock.day_index(t.start_time as f64))
        .collect::<BTreeSet<_>>()
        .len() as f64;
    let n_trips = trips.len() as f64;
    let use_h: f64 = trips.iter().map(TripRecord::duration_hours).sum();
    let window_h = (last - first) / SECONDS_PER_HOUR;
    let parked_h = (window_h - use_h).max(0.0);
    let consumed_pct: f64 = trips.iter().map(|t| (t.soc_start - t.soc_end) * 100.0).sum();
    let consumed_pct_h: f64 = trips
        .iter()
        .map(|t| (t.soc_start - t.soc_end) * 100.0 * t.duration_hours())
        .sum();
    let driving_soc_pct_h: f64 = trips
        .iter()
        .map(|t| 0.5 * (t.soc_start + t.soc_end) * 100.0 * t.duration_hours())
        .sum();
    let avg_soc_driving = trips
        .iter()
        .map(|t| 50.0 * (t.soc_start + t.soc_end))
        .sum::<f64>()
        / n_trips;

    // Integrals over the timeline inside the trip window.
    let mut soc_pct_h = 0.0;
    let mut total_h = 0.0;
    let mut charge_c_h = 0.0;
    let mut charge_h = 0.0;
    let mut dis_c_h = 0.0;
    let mut dis_h = 0.0;
    for (i, w) in timeline.samples.windows(2).enumerate() {
        let (a, b) = (&w[0], &w[1]);
        let lo = a.t.max(first);
        let hi = b.t.min(last);
        if hi <= lo {
            continue;
        }
        let h = (hi - lo) / SECONDS_PER_HOUR;
        let frac = |t: f64| (t - a.t) / (b.t - a.t);
        let s_lo = a.soc + (b.soc - a.soc) * frac(lo);
        let s_hi = a.soc + (b.soc - a.soc) * frac(hi);
        soc_pct_h += 50.0 * (s_lo + s_hi) * h;
        total_h += h;
        if timeline.is_seam(i) {
            continue;
        }
        if a.c_rate > 0.0 {
            charge_c_h += a.c_rate * h;
            charge_h += h;
        } else if a.c_rate < 0.0 {
            dis_c_h += -a.c_rate * h;
            dis_h += h;
        }
    }
    let parked_soc_pct_h = (soc_pct_h - driving_soc_pct_h).max(0.0);

    let n_events = events.len() as f64;
    let slow = events.iter().filter(|e| e.kind == ChargeKind::AcL2).count() as f64;
    let fast = n_events - slow;
    let home = events
        .iter()
        .filter(|e| {
            e.kind == ChargeKind::AcL2
                && clock.day_index(e.depart_time as f64) > clock.day_index(e.plugin_time as f64)
        })
        .count() as f64;
    let energy: f64 = events.iter().map(|e| e.energy_kwh(capacity_kwh)).sum();
    let mean_of = |f: &dyn Fn(&ChargeEvent) -> f64| -> Option<f64> {
        (!events.is_empty()).then(|| events.iter().map(f).sum::<f64>() / n_events)
    };
    let ratio = |num: f64, den: f64| if den > 0.0 { num / den } else { 0.0 };

    let values = vec![
        Some(driving_days),
        Some(n_trips),
        Some(use_h),
        Some(parked_h),
        Some(first_day as f64),
        Some(last_day as f64),
        Some(n_events),
        Some(slow),
        Some(fast),
        mean_of(&|e| e.avg_power_kw),
        Some(home),
        mean_of(&|e| e.soc_start * 100.0),
        mean_of(&|e| e.soc_target * 100.0),
        Some(consumed_pct_h),
        Some(use_h),
        Some(parked_soc_pct_h),
        Some(parked_h),
        Some(avg_soc_driving),
        Some(consumed_pct),
        Some(energy),
        Some(calendar_days),
        Some(use_h / calendar_days),
        Some(parked_h / calendar_days),
        Some(ratio(consumed_pct, driving_days)),
        Some(consumed_pct / calendar_days),
        Some(ratio(energy, driving_days)),
        Some(energy / calendar_days),
        Some(ratio(driving_soc_pct_h, use_h)),
        Some(ratio(parked_soc_pct_h, parked_h)),
        Some(ratio(n_trips, driving_days)),
        Some(ratio(n_events, driving_days)),
        Some(ratio(slow, driving_days)),
        Some(ratio(fast, driving_days)),
        Some(n_trips),
        Some(ratio(soc_pct_h, total_h)),
        Some(ratio(charge_c_h, charge_h)),
        Some(ratio(dis_c_h, dis_h)),
        Some(charge_c_h / 2.0),
        Some(dis_c_h / 2.0),
        Some(driving_days / weeks),
        Some(n_events / weeks),
    ];
    debug_assert_eq!(values.len(), FEATURE_NAMES.len());
    if values.iter().flatten().any(|v| !v.is_finite()) {
        return Err(ProfilesError::InvalidInput(format!("non-finite feature for {id}")));
    }
    Ok(FeatureVector { vehicle_id: id, values })
}

/// Rows of features with a header of [`FEATURE_NAMES`]; missing values are empty.
pub fn features_to_csv(rows: &[FeatureVector]) -> String {
    let mut out = String::from("vehicle_id,");
    out.push_str(&FEATURE_NAMES.join(","));
    out.push('\n');
    for r in rows {
        out.push_str(&r.vehicle_id);
        for v in &r.values {
            out.push(',');
            if let Some(v) = v {
                out.push_str(&format!("{v}"));
            }
        }
        out.push('\n');
    }
    out
}

pub fn features_from_csv(text: &str) -> Result<Vec<FeatureVector>, ProfilesError> {
    let mut lines = text.lines();
    let header = lines.next().ok_or(ProfilesError::Parse {
        line: 1,
        message: "empty file".into(),
    })?;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.first() != Some(&"vehicle_id") || cols[1..] != FEATURE_NAMES[..] {
        return Err(ProfilesError::Parse {
            line: 1,
            message: "unexpected header".into(),
        });
    }
    lines
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let fields: Vec<&str> = l.split(',').collect();
            if fields.len() != cols.len() {
                return Err(ProfilesError::Parse {
                    line: i + 2,
                    message: format!("expected {} fields", cols.len()),
                });
            }
            let values = fields[1..]
                .iter()
                .map(|f| {
                    if f.is_empty() {
                        Ok(None)
                    } else {
                        f.parse::<f64>().map(Some).map_err(|e| ProfilesError::Parse {
                            line: i + 2,
                            message: e.to_string(),
                        })
                    }
                })
                .collect::<Result<_, _>>()?;
            Ok(FeatureVector {
                vehicle_id: fields[0].to_string(),
                values,
            })
        })
        .collect()
}

fn median(mut v: Vec<f64>) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}

/// Fills missing values with column medians (0 when a column has none).
pub fn impute_medians(rows: &[FeatureVector]) -> Vec<Vec<f64>> {
    let ncol = FEATURE_NAMES.len();
    let medians: Vec<f64> = (0..ncol)
        .map(|j| median(rows.iter().filter_map(|r| r.values[j]).collect()).unwrap_or(0.0))
        .collect();
    rows.iter()
        .map(|r| {
            r.values
                .iter()
                .zip(&medians)
                .map(|(v, m)| v.unwrap_or(*m))
                .collect()
        })
        .collect()
}

fn column(matrix: &[Vec<f64>], j: usize) -> impl Iterator<Item = f64> + Clone + '_ {
    matrix.iter().map(move |r| r[j])
}

fn mean_sd(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return 0.0;
    }
    sxy / (sxx * syy).sqrt()
}

/// Greedy keep-first pruning in column order: zero-variance columns go first,
/// then any column whose |r| with an already kept column exceeds `threshold`.
pub fn prune_correlated(matrix: &[Vec<f64>], threshold: f64) -> Result<Vec<usize>, ProfilesError> {
    if matrix.len() < 2 {
        return Err(ProfilesError::InsufficientData(format!(
            "need at least 2 rows, got {}",
            matrix.len()
        )));
    }
    let ncol = matrix[0].len();
    let cols: Vec<Vec<f64>> = (0..ncol).map(|j| column(matrix, j).collect()).collect();
    let mut kept: Vec<usize> = Vec::new();
    for j in 0..ncol {
        let c = &cols[j];
        if c.iter().all(|v| *v == c[0]) {
            continue;
        }
        if kept.iter().all(|&k| pearson(&cols[k], c).abs() <= threshold) {
            kept.push(j);
        }
    }
    Ok(kept)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel {
    pub k: usize,
    pub centroids: Vec<Vec<f64>>,
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
    pub retained: Vec<String>,
    pub assignments: Vec<usize>,
    pub wcss: f64,
    /// WCSS after each Lloyd iteration of the winning restart.
    pub wcss_history: Vec<f64>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, c) in centroids.iter().enumerate() {
        let d = sq_dist(point, c);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

fn seed_plus_plus(data: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut centroids = vec![data[rng.random_range(0..data.len())].clone()];
    let mut d2: Vec<f64> = data.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut idx = data.len() - 1;
            for (i, d) in d2.iter().enumerate() {
                if u < *d {
                    idx = i;
                    break;
                }
                u -= d;
            }
            idx
        } else {
            rng.random_range(0..data.len())
        };
        centroids.push(data[pick].clone());
        for (p, d) in data.iter().zip(d2.iter_mut()) {
            *d = d.min(sq_dist(p, &centroids[centroids.len() - 1]));
        }
    }
    centroids
}

/// One Lloyd run; returns (assignments, centroids, wcss history).
fn lloyd(data: &[Vec<f64>], mut centroids: Vec<Vec<f64>>, max_iter: usize) -> (Vec<usize>, Vec<Vec<f64>>, Vec<f64>) {
    let k = centroids.len();
    let dim = data[0].len();
    let mut assign: Vec<usize> = data.iter().map(|p| nearest(p, &centroids).0).collect();
    let mut history = vec![data.iter().zip(&assign).map(|(p, &a)| sq_dist(p, &centroids[a])).sum()];
    for _ in 0..max_iter {
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &a) in data.iter().zip(&assign) {
            counts[a] += 1;
            for (s, v) in sums[a].iter_mut().zip(p) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                centroids[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            } else {
                // Re-seed an empty cluster at the point farthest from its centroid.
                let far = data
                    .iter()
                    .enumerate()
                    .map(|(i, p)| (i, sq_dist(p, &centroids[assign[i]])))
                    .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)))
                    .map(|(i, _)| i)
                    .unwrap_or(0);
                centroids[c] = data[far].clone();
            }
        }
        let next: Vec<usize> = data.iter().map(|p| nearest(p, &centroids).0).collect();
        history.push(data.iter().zip(&next).map(|(p, &a)| sq_dist(p, &centroids[a])).sum());
        if next == assign {
            break;
        }
        assign = next;
    }
    (assign, centroids, history)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusteringConfig {
    pub correlation_threshold: f64,
    pub standardize: bool,
    pub k_max: usize,
    /// Fixed cluster count; the elbow choice is used when absent.
    pub k: Option<usize>,
    pub restarts: usize,
    pub max_iter: usize,
    /// Features left out before pruning.
    pub exclude: Vec<String>,
}

impl Default for ClusteringConfig {
    fn default() -> Self {
        Self {
            correlation_threshold: 0.9,
            standardize: true,
            k_max: 10,
            k: None,
            restarts: 10,
            max_iter: 300,
            exclude: ["first_date", "last_date", "calendar_days_observed"]
                .map(String::from)
                .to_vec(),
        }
    }
}

fn standardize(data: &[Vec<f64>], on: bool) -> (Vec<Vec<f64>>, Vec<f64>, Vec<f64>) {
    let dim = data[0].len();
    let (means, stds): (Vec<f64>, Vec<f64>) = (0..dim)
        .map(|j| {
            if on {
                let (m, s) = mean_sd(column(data, j));
                (m, if s > 0.0 { s } else { 1.0 })
            } else {
                (0.0, 1.0)
            }
        })
        .unzip();
    let z = data
        .iter()
        .map(|r| r.iter().enumerate().map(|(j, v)| (v - means[j]) / stds[j]).collect())
        .collect();
    (z, means, stds)
}

/// k-means on `data` (rows × retained features) with k-means++ seeding and
/// `restarts` runs; the lowest-WCSS run is kept.
pub fn kmeans(
    data: &[Vec<f64>],
    k: usize,
    seed: u64,
    max_iter: usize,
    restarts: usize,
    standardize_features: bool,
) -> Result<ClusterModel, ProfilesError> {
    if k == 0 {
        return Err(ProfilesError::InvalidInput("k must be at least 1".into()));
    }
    if k > data.len() {
        return Err(ProfilesError::InvalidInput(format!(
            "k = {k} exceeds {} rows",
            data.len()
        )));
    }
    if data[0].is_empty() || data.iter().any(|r| r.len() != data[0].len()) {
        return Err(ProfilesError::InvalidInput("ragged or empty feature matrix".into()));
    }
    let (z, means, stds) = standardize(data, standardize_features);
    let mut best: Option<(Vec<usize>, Vec<Vec<f64>>, Vec<f64>)> = None;
    for r in 0..restarts.max(1) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(((k as u64) << 32) | r as u64);
        let init = seed_plus_plus(&z, k, &mut rng);
        let run = lloyd(&z, init, max_iter);
        let better = match &best {
            None => true,
            Some(b) => run.2.last() < b.2.last(),
        };
        if better {
            best = Some(run);
        }
    }
    let (assignments, centroids, history) = best.expect("at least one restart");
    Ok(ClusterModel {
        k,
        centroids,
        means,
        stds,
        retained: Vec::new(),
        assignments,
        wcss: *history.last().expect("non-empty history"),
        wcss_history: history,
    })
}

/// Knee of a WCSS curve for k = 1..: the point farthest from the chord
/// joining the first and last points. Returns a warning when the curve is
/// non-monotone or has no knee.
pub fn elbow(wcss: &[f64]) -> Result<(usize, Option<String>), ProfilesError> {
    if wcss.len() < 3 {
        return Err(ProfilesError::InsufficientData(format!(
            "elbow needs k_max >= 3, got {}",
            wcss.len()
        )));
    }
    let mut warning = None;
    if wcss.windows(2).any(|w| w[1] > w[0] + 1e-12 * w[0].abs().max(1.0)) {
        warning = Some("WCSS is not monotone in k".to_string());
    }
    let n = wcss.len();
    let (x1, y1) = (1.0, wcss[0]);
    let (x2, y2) = (n as f64, wcss[n - 1]);
    let len = ((x2 - x1).powi(2) + (y2 - y1).powi(2)).sqrt();
    let scale = wcss.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
    let mut best = (1, 0.0);
    for (i, &y) in wcss.iter().enumerate() {
        let x = (i + 1) as f64;
        let d = ((y2 - y1) * x - (x2 - x1) * y + x2 * y1 - y2 * x1).abs() / len;
        if d > best.1 {
            best = (i + 1, d);
        }
    }
    if best.1 <= 1e-9 * scale {
        return Ok((1, Some("WCSS curve has no knee; defaulting to k = 1".into())));
    }
    Ok((best.0, warning))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusteringOutcome {
    pub model: ClusterModel,
    pub wcss_by_k: Vec<f64>,
    pub warnings: Vec<String>,
}

/// Impute, prune, sweep k = 1..k_max, pick k, and fit the final model.
pub fn cluster_vehicles(
    rows: &[FeatureVector],
    config: &ClusteringConfig,
    seed: u64,
) -> Result<ClusteringOutcome, ProfilesError> {
    if rows.len() < 2 {
        return Err(ProfilesError::InsufficientData(format!(
            "need at least 2 vehicles, got {}",
            rows.len()
        )));
    }
    let mut candidates = Vec::new();
    for name in &config.exclude {
        if feature_index(name).is_none() {
            return Err(ProfilesError::InvalidInput(format!("unknown feature {name:?} in exclude")));
        }
    }
    for (j, name) in FEATURE_NAMES.iter().enumerate() {
        if !config.exclude.iter().any(|e| e == name) {
            candidates.push(j);
        }
    }
    let full = impute_medians(rows);
    let sub: Vec<Vec<f64>> = full
        .iter()
        .map(|r| candidates.iter().map(|&j| r[j]).collect())
        .collect();
    let retained: Vec<usize> = prune_correlated(&sub, config.correlation_threshold)?
        .into_iter()
        .map(|i| candidates[i])
        .collect();
    if retained.is_empty() {
        return Err(ProfilesError::InsufficientData("no feature varies across vehicles".into()));
    }
    let data: Vec<Vec<f64>> = full
        .iter()
        .map(|r| retained.iter().map(|&j| r[j]).collect())
        .collect();
    let k_max = config.k_max.min(data.len());
    let fit = |k: usize| kmeans(&data, k, seed, config.max_iter, config.restarts, config.standardize);
    let mut warnings = Vec::new();
    let wcss_by_k: Vec<f64> = (1..=k_max).map(|k| fit(k).map(|m| m.wcss)).collect::<Result<_, _>>()?;
    let k = match config.k {
        Some(k) => k,
        None => {
            let (k, w) = elbow(&wcss_by_k)?;
            warnings.extend(w);
            k
        }
    };
    let mut model = fit(k)?;
    model.retained = retained.iter().map(|&j| FEATURE_NAMES[j].to_string()).collect();
    for w in &warnings {
        log::warn!("{w}");
    }
    Ok(ClusteringOutcome {
        model,
        wcss_by_k,
        warnings,
    })
}

/// Share of vehicles whose cluster's majority label matches their own.
pub fn purity(assignments: &[usize], labels: &[&str]) -> f64 {
    use std::collections::BTreeMap;
    let mut tally: BTreeMap<usize, BTreeMap<&str, usize>> = BTreeMap::new();
    for (&a, &l) in assignments.iter().zip(labels) {
        *tally.entry(a).or_default().entry(l).or_default() += 1;
    }
    let hits: usize = tally.values().map(|m| m.values().copied().max().unwrap_or(0)).sum();
    hits as f64 / assignments.len().max(1) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{build_baseline_timeline, detect_charging_events, IngestConfig};

    #[test]
    fn pruning_examples() {
        let m: Vec<Vec<f64>> = (0..10)
            .map(|i| {
                let x = i as f64;
                vec![x, x, (x * 7.0) % 5.0]
            })
            .collect();
        assert_eq!(prune_correlated(&m, 0.9).unwrap(), vec![0, 2]);
        let orth = vec![vec![1.0, 1.0], vec![1.0, -1.0], vec![-1.0, 1.0], vec![-1.0, -1.0]];
        assert_eq!(prune_correlated(&orth, 0.9).unwrap(), vec![0, 1]);
        assert!(prune_correlated(&orth[..1], 0.9).is_err());
        let constant = vec![vec![1.0, 2.0], vec![1.0, 3.0]];
        assert_eq!(prune_correlated(&constant, 0.9).unwrap(), vec![1]);
    }

    #[test]
    fn kmeans_k1_and_two_blobs() {
        let data: Vec<Vec<f64>> = [0.0, 1.0, 2.0, 10.0, 11.0, 12.0].iter().map(|v| vec![*v]).collect();
        let m1 = kmeans(&data, 1, 1, 100, 3, false).unwrap();
        let mean = 6.0;
        let total: f64 = data.iter().map(|r| (r[0] - mean).powi(2)).sum();
        assert!((m1.wcss - total).abs() < 1e-9);
        let m2 = kmeans(&data, 2, 1, 100, 3, false).unwrap();
        assert_eq!(m2.assignments[0], m2.assignments[2]);
        assert_ne!(m2.assignments[0], m2.assignments[3]);
        assert!((m2.wcss - 4.0).abs() < 1e-9);
        assert!(kmeans(&data, 7, 1, 100, 3, false).is_err());
    }

    #[test]
    fn elbow_examples() {
        let knee = [100.0, 70.0, 40.0, 10.0, 9.0, 8.0, 7.0, 6.0];
        assert_eq!(elbow(&knee).unwrap().0, 4);
        let linear: Vec<f64> = (0..8).map(|i| 100.0 - 10.0 * i as f64).collect();
        let (k, w) = elbow(&linear).unwrap();
        assert_eq!(k, 1);
        assert!(w.is_some());
        assert!(elbow(&[1.0, 0.5]).is_err());
    }

    #[test]
    fn week_of_nightly_charging() {
        let day0 = 1_672_588_800; // local midnight
        let mut trips = Vec::new();
        for d in 0..7 {
            let s = day0 + d * 86_400 + 8 * 3600;
            trips.push(TripRecord {
                start_time: s,
                end_time: s + 3600,
                soc_start: 0.9,
                soc_end: 0.7,
                mean_temp: 293.0,
            });
        }
        // Trip 7 needs a prior charge too: add a final morning trip.
        let s = day0 + 7 * 86_400 + 8 * 3600;
        trips.push(TripRecord {
            start_time: s,
            end_time: s + 600,
            soc_start: 0.9,
            soc_end: 0.88,
            mean_temp: 293.0,
        });
        let cfg = IngestConfig::default();
        let det = detect_charging_events(&trips, &cfg).unwrap();
        assert_eq!(det.events.len(), 7);
        let tl = build_baseline_timeline("v", &trips, &det.events, &cfg).unwrap();
        let clock = LocalClock::default();
        let f = extract_features(&tl, &det.events, &trips, 71.4, &clock).unwrap();
        assert_eq!(f.get("driving_days"), Some(8.0));
        assert_eq!(f.get("total_charging_sessions"), Some(7.0));
        assert_eq!(f.get("home_charging_sessions"), Some(7.0));
        assert!((f.get("avg_soc_before_charge_pct").unwrap() - 70.0).abs() < 1e-9);
        assert_eq!(f.get("calendar_days_observed"), Some(8.0));
        assert_eq!(f.get("driving_days_per_week"), Some(7.0));
        assert_eq!(f.get("charges_per_week"), Some(49.0 / 8.0));
    }

    #[test]
    fn no_charges_and_constant_parked_soc() {
        let day0 = 1_672_588_800;
        let trips = vec![
            TripRecord {
                start_time: day0 + 8 * 3600,
                end_time: day0 + 9 * 3600,
                soc_start: 0.85,
                soc_end: 0.8,
                mean_temp: 293.0,
            },
            TripRecord {
                start_time: day0 + 86_400 + 8 * 3600,
                end_time: day0 + 86_400 + 9 * 3600,
                soc_start: 0.8,
                soc_end: 0.75,
                mean_temp: 293.0,
            },
        ];
        let cfg = IngestConfig::default();
        let tl = build_baseline_timeline("v", &trips, &[], &cfg).unwrap();
        let f = extract_features(&tl, &[], &trips, 71.4, &LocalClock::default()).unwrap();
        assert_eq!(f.get("total_charging_sessions"), Some(0.0));
        assert_eq!(f.get("total_energy_charged_kwh"), Some(0.0));
        assert_eq!(f.get("avg_soc_before_charge_pct"), None);
        assert_eq!(f.get("avg_soc_after_charge_pct"), None);
        assert!((f.get("tw_mean_soc_parked_pct").unwrap() - 80.0).abs() < 1e-9);
    }

    #[test]
    fn feature_csv_round_trip() {
        let mut values = vec![Some(1.5); FEATURE_NAMES.len()];
        values[11] = None;
        let rows = vec![FeatureVector {
            vehicle_id: "v1".into(),
            values,
        }];
        let back = features_from_csv(&features_to_csv(&rows)).unwrap();
        assert_eq!(back, rows);
    }

    #[test]
    fn purity_of_perfect_and_mixed() {
        assert_eq!(purity(&[0, 0, 1, 1], &["a", "a", "b", "b"]), 1.0);
        assert_eq!(purity(&[0, 0, 0, 0], &["a", "a", "b", "b"]), 0.5);
    }
}
