//! Dispatch accounting under a time-of-use tariff and bootstrap summaries.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const BOOTSTRAP_RESAMPLES: usize = 10_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EconomicsError {
    #[error("invalid tariff: {0}")]
    InvalidTariff(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

/// Hours are local wall-clock; a window whose end precedes its start wraps
/// past midnight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tariff {
    pub discharge_credit_per_kwh: f64,
    pub discharge_window: (f64, f64),
    pub offpeak_cost_per_kwh: f64,
    pub offpeak_window: (f64, f64),
    pub round_trip_efficiency: f64,
}

impl Default for Tariff {
    fn default() -> Self {
        Self {
            discharge_credit_per_kwh: 0.58,
            discharge_window: (18.0, 21.0),
            offpeak_cost_per_kwh: 0.257,
            offpeak_window: (21.0, 8.0),
            round_trip_efficiency: 1.0,
        }
    }
}

fn window_hours(w: (f64, f64)) -> Vec<(f64, f64)> {
    if w.0 <= w.1 {
        vec![w]
    } else {
        vec![(w.0, 24.0), (0.0, w.1)]
    }
}

impl Tariff {
    pub fn validate(&self) -> Result<(), EconomicsError> {
        let bad = |m: &str| Err(EconomicsError::InvalidTariff(m.to_string()));
        if !(self.discharge_credit_per_kwh >= 0.0 && self.offpeak_cost_per_kwh >= 0.0) {
            return bad("rates must be non-negative");
        }
        if !(self.round_trip_efficiency > 0.0 && self.round_trip_efficiency <= 1.0) {
            return bad("round_trip_efficiency must be in (0, 1]");
        }
        for (a, b) in [self.discharge_window, self.offpeak_window] {
            if !((0.0..=24.0).contains(&a) && (0.0..=24.0).contains(&b)) || a == b {
                return bad("window hours must be distinct values in [0, 24]");
            }
        }
        for (a0, a1) in window_hours(self.discharge_window) {
            for (b0, b1) in window_hours(self.offpeak_window) {
                if a0 < b1 && b0 < a1 {
                    return bad("discharge and off-peak windows overlap");
                }
            }
        }
        Ok(())
    }

    /// Margin per dispatched kWh after buying it back off-peak.
    pub fn margin_per_kwh(&self) -> f64 {
        self.discharge_credit_per_kwh - self.offpeak_cost_per_kwh / self.round_trip_efficiency
    }
}

/// Average dispatched energy per year.
pub fn annual_dispatch(total_kwh: f64, horizon_years: f64) -> Result<f64, EconomicsError> {
    if !(horizon_years > 0.0) {
        return Err(EconomicsError::InvalidInput(format!(
            "horizon must be positive, got {horizon_years}"
        )));
    }
    if !(total_kwh >= 0.0) {
        return Err(EconomicsError::InvalidInput(format!("negative dispatch {total_kwh}")));
    }
    Ok(total_kwh / horizon_years)
}

/// Net yearly revenue: dispatch credited at the peak rate, recharged off-peak.
pub fn net_revenue(dispatch_kwh_per_year: f64, tariff: &Tariff) -> Result<f64, EconomicsError> {
    if !(dispatch_kwh_per_year >= 0.0) {
        return Err(EconomicsError::InvalidInput(format!(
            "negative dispatch {dispatch_kwh_per_year}"
        )));
    }
    Ok(dispatch_kwh_per_year * tariff.margin_per_kwh())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub n: usize,
    pub mean: f64,
    /// `None` for singleton groups, where a resampling interval is undefined.
    pub ci: Option<(f64, f64)>,
}

/// Mean with a percentile-bootstrap 95% interval.
pub fn bootstrap_summary(values: &[f64], resamples: usize, seed: u64) -> Result<Summary, EconomicsError> {
    if values.is_empty() {
        return Err(EconomicsError::InvalidInput("no values".into()));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(EconomicsError::InvalidInput("non-finite value".into()));
    }
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 || resamples == 0 {
        return Ok(Summary { n, mean, ci: None });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut means: Vec<f64> = (0..resamples)
        .map(|_| (0..n).map(|_| values[rng.random_range(0..n)]).sum::<f64>() / n as f64)
        .collect();
    means.sort_by(f64::total_cmp);
    let lo_idx = ((0.025 * resamples as f64).floor() as usize).min(resamples - 1);
    let hi_idx = ((0.975 * resamples as f64).ceil() as usize).saturating_sub(1);
    Ok(Summary {
        n,
        mean,
        ci: Some((means[lo_idx], means[hi_idx])),
    })
}

/// Bootstrap summary per cluster; each cluster draws from its own stream
/// derived from `seed` and the cluster's position in key order.
pub fn cluster_summary(
    values_by_cluster: &BTreeMap<String, Vec<f64>>,
    seed: u64,
) -> Result<BTreeMap<String, Summary>, EconomicsError> {
    values_by_cluster
        .iter()
        .enumerate()
        .map(|(i, (k, v))| {
            let s = bootstrap_summary(v, BOOTSTRAP_RESAMPLES, seed.wrapping_add(i as u64))?;
            if s.ci.is_none() {
                log::warn!("cluster {k} has a single vehicle; interval undefined");
            }
            Ok((k.clone(), s))
        })
        .collect()
}
