//! Shared time-series data model: usage timelines, trips and charging events.
//!
//! Units inside the math core are fixed: time in seconds since the Unix epoch,
//! SOC as a fraction in `[0, 1]`, C-rate in `1/h` (positive while charging),
//! temperature in kelvin. File formats use percent and celsius and convert at
//! the boundary.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Tolerance for the SOC / C-rate consistency rule between adjacent samples.
pub const CONSISTENCY_TOL: f64 = 1e-9;

pub const SECONDS_PER_HOUR: f64 = 3600.0;
pub const SECONDS_PER_DAY: f64 = 86_400.0;
/// Simulation year: 365 days.
pub const SECONDS_PER_YEAR: f64 = 365.0 * SECONDS_PER_DAY;

/// Zero-celsius offset.
pub const KELVIN_OFFSET: f64 = 273.15;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TimelineError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("timeline failed validation: {} violation(s), first: {}", .0.len(), .0[0])]
    Invalid(Vec<Violation>),
}

/// One point of a usage timeline.
///
/// `c_rate` is the rate that applies on the segment *starting* at this sample,
/// i.e. on `[t_i, t_{i+1})`. The final sample's rate has no segment and is 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimelineSample {
    pub t: f64,
    pub soc: f64,
    pub c_rate: f64,
    pub temp: f64,
}

impl TimelineSample {
    pub fn new(t: f64, soc: f64, c_rate: f64, temp: f64) -> Self {
        Self {
            t,
            soc,
            c_rate,
            temp,
        }
    }
}

/// Time-ordered SOC / C-rate / temperature trace for one vehicle.
///
/// `seam_marks` holds indices `i` whose outgoing segment `[i, i+1)` is a
/// discontinuity: the SOC may jump there and no throughput is counted. Cyclic
/// extension seams are recorded here, as are telemetry gaps whose SOC rise
/// could not be explained by any feasible charge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UsageTimeline {
    pub vehicle_id: String,
    pub samples: Vec<TimelineSample>,
    pub seam_marks: Vec<usize>,
}

impl UsageTimeline {
    pub fn new(vehicle_id: impl Into<String>, samples: Vec<TimelineSample>) -> Self {
        Self {
            vehicle_id: vehicle_id.into(),
            samples,
            seam_marks: Vec::new(),
        }
    }

    pub fn start(&self) -> f64 {
        self.samples.first().map_or(0.0, |s| s.t)
    }

    pub fn end(&self) -> f64 {
        self.samples.last().map_or(0.0, |s| s.t)
    }

    /// Covered duration in seconds.
    pub fn span(&self) -> f64 {
        self.end() - self.start()
    }

    pub fn is_seam(&self, index: usize) -> bool {
        self.seam_marks.binary_search(&index).is_ok()
    }

    /// Index of the last sample with `t <= time`, if any.
    pub fn index_at_or_before(&self, time: f64) -> Option<usize> {
        let pos = self.samples.partition_point(|s| s.t <= time);
        pos.checked_sub(1)
    }

    /// Returns `Err(Invalid)` with every violation when any invariant fails.
    pub fn ensure_valid(&self) -> Result<(), TimelineError> {
        let violations = validate_timeline(self);
        if violations.is_empty() {
            Ok(())
        } else {
            Err(TimelineError::Invalid(violations))
        }
    }

    /// Renders the `t_s,soc,c_rate_per_h,temp_k` columnar export.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::with_capacity(self.samples.len() * 48 + 32);
        out.push_str("t_s,soc,c_rate_per_h,temp_k\n");
        for s in &self.samples {
            out.push_str(&format!("{},{},{},{}\n", s.t, s.soc, s.c_rate, s.temp));
        }
        out
    }
}

/// One driving episode between ignition on and ignition off.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TripRecord {
    /// Unix seconds.
    pub start_time: i64,
    pub end_time: i64,
    pub soc_start: f64,
    pub soc_end: f64,
    /// Kelvin.
    pub mean_temp: f64,
}

impl TripRecord {
    pub fn duration_hours(&self) -> f64 {
        (self.end_time - self.start_time) as f64 / SECONDS_PER_HOUR
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ChargeKind {
    #[serde(rename = "AC_L2")]
    AcL2,
    #[serde(rename = "DCFC")]
    Dcfc,
}

impl ChargeKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ChargeKind::AcL2 => "AC_L2",
            ChargeKind::Dcfc => "DCFC",
        }
    }
}

/// A charging session inferred from an SOC increase between two trips.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChargeEvent {
    /// End of the preceding trip (Unix seconds).
    pub plugin_time: i64,
    /// Start of the following trip.
    pub depart_time: i64,
    pub soc_start: f64,
    pub soc_target: f64,
    pub kind: ChargeKind,
    pub sim_power_kw: f64,
    /// Observed average power over the parked gap.
    pub avg_power_kw: f64,
}

impl ChargeEvent {
    pub fn energy_kwh(&self, capacity_kwh: f64) -> f64 {
        (self.soc_target - self.soc_start) * capacity_kwh
    }

    /// Charging duration at `sim_power_kw`, in seconds.
    pub fn charge_duration_s(&self, capacity_kwh: f64) -> f64 {
        self.energy_kwh(capacity_kwh) / self.sim_power_kw * SECONDS_PER_HOUR
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Rule {
    TooFewSamples,
    TimeOrder,
    SocRange,
    Temperature,
    Consistency,
    SeamRate,
    SeamIndex,
    NonFinite,
}

impl Rule {
    pub fn as_str(&self) -> &'static str {
        match self {
            Rule::TooFewSamples => "sample count",
            Rule::TimeOrder => "time order",
            Rule::SocRange => "soc range",
            Rule::Temperature => "temperature",
            Rule::Consistency => "soc/c-rate consistency",
            Rule::SeamRate => "seam c-rate",
            Rule::SeamIndex => "seam index",
            Rule::NonFinite => "non-finite value",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub index: usize,
    pub rule: Rule,
    pub detail: String,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "index {}: {} ({})", self.index, self.rule.as_str(), self.detail)
    }
}

/// Checks every [`UsageTimeline`] invariant and reports each violation.
pub fn validate_timeline(timeline: &UsageTimeline) -> Vec<Violation> {
    let mut out = Vec::new();
    let samples = &timeline.samples;
    if samples.len() < 2 {
        out.push(Violation {
            index: 0,
            rule: Rule::TooFewSamples,
            detail: format!("{} sample(s), need at least 2", samples.len()),
        });
    }
    for (i, s) in samples.iter().enumerate() {
        if !(s.t.is_finite() && s.soc.is_finite() && s.c_rate.is_finite() && s.temp.is_finite()) {
            out.push(Violation {
                index: i,
                rule: Rule::NonFinite,
                detail: format!("{s:?}"),
            });
            continue;
        }
        if !(0.0..=1.0).contains(&s.soc) {
            out.push(Violation {
                index: i,
                rule: Rule::SocRange,
                detail: format!("soc = {}", s.soc),
            });
        }
        if s.temp <= 0.0 {
            out.push(Violation {
                index: i,
                rule: Rule::Temperature,
                detail: format!("temp = {} K", s.temp),
            });
        }
    }
    for &m in &timeline.seam_marks {
        if m + 1 >= samples.len() {
            out.push(Violation {
                index: m,
                rule: Rule::SeamIndex,
                detail: "seam mark has no following sample".into(),
            });
        } else if samples[m].c_rate != 0.0 {
            out.push(Violation {
                index: m,
                rule: Rule::SeamRate,
                detail: format!("c_rate = {} at seam", samples[m].c_rate),
            });
        }
    }
    if timeline.seam_marks.windows(2).any(|w| w[0] >= w[1]) {
        out.push(Violation {
            index: 0,
            rule: Rule::SeamIndex,
            detail: "seam marks not strictly increasing".into(),
        });
    }
    for (i, pair) in samples.windows(2).enumerate() {
        let (a, b) = (pair[0], pair[1]);
        if b.t <= a.t {
            out.push(Violation {
                index: i + 1,
                rule: Rule::TimeOrder,
                detail: format!("t = {} after {}", b.t, a.t),
            });
            continue;
        }
        if timeline.is_seam(i) {
            continue;
        }
        let expected = a.c_rate * (b.t - a.t) / SECONDS_PER_HOUR;
        let got = b.soc - a.soc;
        if (got - expected).abs() > CONSISTENCY_TOL {
            out.push(Violation {
                index: i,
                rule: Rule::Consistency,
                detail: format!("delta soc {got} vs c_rate*dt {expected}"),
            });
        }
    }
    out
}

/// Trapezoidal time-weighted mean of an ordered `(t, value)` series:
/// `sum(0.5 * (v_i + v_{i+1}) * (t_{i+1} - t_i)) / (t_N - t_0)`.
pub fn time_weighted_mean(series: &[(f64, f64)]) -> Result<f64, TimelineError> {
    if series.len() < 2 {
        return Err(TimelineError::InvalidInput(format!(
            "time-weighted mean needs at least 2 points, got {}",
            series.len()
        )));
    }
    let mut acc = 0.0;
    for (i, w) in series.windows(2).enumerate() {
        let dt = w[1].0 - w[0].0;
        if !(dt > 0.0) {
            return Err(TimelineError::InvalidInput(format!(
                "time not strictly increasing at point {}",
                i + 1
            )));
        }
        acc += 0.5 * (w[0].1 + w[1].1) * dt;
    }
    let span = series[series.len() - 1].0 - series[0].0;
    Ok(acc / span)
}

/// Same trapezoid as [`time_weighted_mean`] applied to one field of a
/// timeline, without materialising the pair series.
pub(crate) fn timeline_mean(
    samples: &[TimelineSample],
    value: impl Fn(&TimelineSample) -> f64,
) -> Result<f64, TimelineError> {
    if samples.len() < 2 {
        return Err(TimelineError::InvalidInput(format!(
            "time-weighted mean needs at least 2 points, got {}",
            samples.len()
        )));
    }
    let mut acc = 0.0;
    for (i, w) in samples.windows(2).enumerate() {
        let dt = w[1].t - w[0].t;
        if !(dt > 0.0) {
            return Err(TimelineError::InvalidInput(format!(
                "time not strictly increasing at sample {}",
                i + 1
            )));
        }
        acc += 0.5 * (value(&w[0]) + value(&w[1])) * dt;
    }
    Ok(acc / (samples[samples.len() - 1].t - samples[0].t))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn two_sample() -> UsageTimeline {
        UsageTimeline::new(
            "v",
            vec![
                TimelineSample::new(0.0, 0.8, -0.1, 298.15),
                TimelineSample::new(3600.0, 0.7, 0.0, 298.15),
            ],
        )
    }

    #[test]
    fn mean_of_constant_series() {
        let m = time_weighted_mean(&[(0.0, 0.7), (5.0, 0.7), (123.0, 0.7)]).unwrap();
        assert!((m - 0.7).abs() < 1e-15);
    }

    #[test]
    fn mean_of_linear_ramp() {
        assert_eq!(time_weighted_mean(&[(0.0, 0.0), (1.0, 1.0)]).unwrap(), 0.5);
    }

    #[test]
    fn mean_of_ramp_then_plateau() {
        // (0.5 * 1 + 1 * 2) / 3
        let m = time_weighted_mean(&[(0.0, 0.0), (1.0, 1.0), (3.0, 1.0)]).unwrap();
        assert!((m - 2.5 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn mean_rejects_bad_input() {
        assert!(time_weighted_mean(&[(0.0, 1.0)]).is_err());
        assert!(time_weighted_mean(&[(0.0, 1.0), (0.0, 2.0)]).is_err());
        assert!(time_weighted_mean(&[(1.0, 1.0), (0.5, 2.0)]).is_err());
    }

    #[test]
    fn well_formed_timeline_has_no_violations() {
        assert!(validate_timeline(&two_sample()).is_empty());
    }

    #[test]
    fn soc_out_of_range_is_reported_at_its_index() {
        let samples = (0..5)
            .map(|i| {
                let soc = if i == 3 { 1.2 } else { 0.5 };
                TimelineSample::new(i as f64 * 60.0, soc, 0.0, 290.0)
            })
            .collect();
        let mut tl = UsageTimeline::new("v", samples);
        // Mark the jumps in and out of index 3 as seams so only the range rule fires.
        tl.seam_marks = vec![2, 3];
        let v = validate_timeline(&tl);
        assert_eq!(v.len(), 1, "{v:?}");
        assert_eq!(v[0].index, 3);
        assert_eq!(v[0].rule, Rule::SocRange);
        assert_eq!(v[0].rule.as_str(), "soc range");
    }

    #[test]
    fn inconsistent_rate_is_one_violation() {
        let mut tl = two_sample();
        tl.samples[0].c_rate = -0.2;
        let v = validate_timeline(&tl);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].rule, Rule::Consistency);
        assert_eq!(v[0].index, 0);
    }

    #[test]
    fn seam_requires_zero_rate_and_skips_consistency() {
        let mut tl = UsageTimeline::new(
            "v",
            vec![
                TimelineSample::new(0.0, 0.8, 0.0, 290.0),
                TimelineSample::new(60.0, 0.5, 0.0, 290.0),
            ],
        );
        assert_eq!(validate_timeline(&tl).len(), 1);
        tl.seam_marks = vec![0];
        assert!(validate_timeline(&tl).is_empty());
        tl.samples[0].c_rate = 0.1;
        let v = validate_timeline(&tl);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].rule, Rule::SeamRate);
    }

    #[test]
    fn non_positive_temperature_and_time_order() {
        let tl = UsageTimeline::new(
            "v",
            vec![
                TimelineSample::new(10.0, 0.5, 0.0, 0.0),
                TimelineSample::new(10.0, 0.5, 0.0, 290.0),
            ],
        );
        let rules: Vec<Rule> = validate_timeline(&tl).iter().map(|v| v.rule).collect();
        assert!(rules.contains(&Rule::Temperature));
        assert!(rules.contains(&Rule::TimeOrder));
    }

    #[test]
    fn single_sample_is_too_short() {
        let tl = UsageTimeline::new("v", vec![TimelineSample::new(0.0, 0.5, 0.0, 290.0)]);
        assert_eq!(validate_timeline(&tl)[0].rule, Rule::TooFewSamples);
    }

    proptest! {
        #[test]
        fn collinear_midpoint_does_not_change_mean(
            t1 in 1.0f64..1e6, v0 in -5.0f64..5.0, v1 in -5.0f64..5.0,
            frac in 0.01f64..0.99, tail in 1.0f64..1e6, v2 in -5.0f64..5.0,
        ) {
            let base = [(0.0, v0), (t1, v1), (t1 + tail, v2)];
            let tm = frac * t1;
            let vm = v0 + (v1 - v0) * frac;
            let refined = [(0.0, v0), (tm, vm), (t1, v1), (t1 + tail, v2)];
            let a = time_weighted_mean(&base).unwrap();
            let b = time_weighted_mean(&refined).unwrap();
            prop_assert!((a - b).abs() < 1e-12 * (1.0 + a.abs()));
        }

        #[test]
        fn mean_is_bounded_by_extremes(
            steps in prop::collection::vec((0.1f64..1e4, -10.0f64..10.0), 2..40)
        ) {
            let mut t = 0.0;
            let series: Vec<(f64, f64)> = steps.iter().map(|&(dt, v)| { t += dt; (t, v) }).collect();
            let m = time_weighted_mean(&series).unwrap();
            let lo = series.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
            let hi = series.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(m >= lo - 1e-12 && m <= hi + 1e-12);
        }
    }
}
