//! Trip-log ingestion, charging-event inference, timeline synthesis and
//! cyclic extension to multi-year horizons.

use std::collections::{BTreeMap, HashMap};
use std::io::Read;

use chrono::{DateTime, FixedOffset, TimeZone};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::timeline::{
    ChargeEvent, ChargeKind, TimelineSample, TripRecord, UsageTimeline, KELVIN_OFFSET,
    SECONDS_PER_HOUR, SECONDS_PER_YEAR,
};

pub const TRIP_LOG_HEADER: [&str; 6] = [
    "vehicle_id",
    "trip_start",
    "trip_end",
    "soc_start_pct",
    "soc_end_pct",
    "mean_temp_c",
];

/// Smallest SOC rise between trips that counts as a charging event.
pub const MIN_SOC_RISE: f64 = 1e-6;

/// Duration of the zero-throughput link between two cyclic tiles.
pub const SEAM_GAP_S: f64 = 60.0;

/// Plan segments must reach the next trip's SOC within this tolerance.
const PLAN_SOC_TOL: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("vehicle {vehicle}: trip at line {first_line} overlaps trip at line {second_line}")]
    Overlap {
        vehicle: String,
        first_line: u64,
        second_line: u64,
    },
    #[error("trips out of order: gap of {gap_s} s before trip {index}")]
    Ordering { index: usize, gap_s: i64 },
    #[error("infeasible plan for event plugged in at {plugin_time}: {reason}")]
    InfeasiblePlan { plugin_time: i64, reason: String },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestConfig {
    pub pack_capacity_kwh: f64,
    pub dcfc_threshold_kw: f64,
    pub dcfc_sim_power_kw: f64,
    pub ac_sim_power_kw: f64,
    pub horizon_years: f64,
    pub timeline_step_s: f64,
}

impl Default for IngestConfig {
    fn default() -> Self {
        Self {
            pack_capacity_kwh: 71.4,
            dcfc_threshold_kw: 19.2,
            dcfc_sim_power_kw: 100.0,
            ac_sim_power_kw: 9.6,
            horizon_years: 15.0,
            timeline_step_s: 60.0,
        }
    }
}

impl IngestConfig {
    pub fn validate(&self) -> Result<(), IngestError> {
        let powers = [
            self.pack_capacity_kwh,
            self.dcfc_threshold_kw,
            self.dcfc_sim_power_kw,
            self.ac_sim_power_kw,
            self.timeline_step_s,
            self.horizon_years,
        ];
        if powers.iter().any(|p| !(p.is_finite() && *p > 0.0)) {
            return Err(IngestError::InvalidInput(
                "capacity, powers, step and horizon must be positive".into(),
            ));
        }
        if !(self.dcfc_sim_power_kw > self.dcfc_threshold_kw
            && self.dcfc_threshold_kw > self.ac_sim_power_kw)
        {
            return Err(IngestError::InvalidInput(
                "need dcfc_sim_power_kw > dcfc_threshold_kw > ac_sim_power_kw".into(),
            ));
        }
        Ok(())
    }
}

// --- trip log -------------------------------------------------------------

fn parse_timestamp(raw: &str, line: u64, field: &str) -> Result<i64, IngestError> {
    DateTime::parse_from_rfc3339(raw.trim())
        .map(|dt| dt.timestamp())
        .map_err(|e| IngestError::Parse {
            line,
            message: format!("{field} {raw:?}: {e}"),
        })
}

fn parse_number(raw: &str, line: u64, field: &str) -> Result<f64, IngestError> {
    raw.trim()
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| IngestError::Parse {
            line,
            message: format!("{field} {raw:?} is not a number"),
        })
}

fn parse_pct(raw: &str, line: u64, field: &str) -> Result<f64, IngestError> {
    let pct = parse_number(raw, line, field)?;
    if !(0.0..=100.0).contains(&pct) {
        return Err(IngestError::Parse {
            line,
            message: format!("{field} {pct} outside [0, 100]"),
        });
    }
    Ok(pct / 100.0)
}

/// Parses a trip log into per-vehicle trip sequences ordered by start time.
///
/// Percent fields become fractions and celsius becomes kelvin.
pub fn parse_trip_log<R: Read>(reader: R) -> Result<BTreeMap<String, Vec<TripRecord>>, IngestError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers().map_err(|e| IngestError::Parse {
        line: 1,
        message: e.to_string(),
    })?;
    if headers.iter().collect::<Vec<_>>() != TRIP_LOG_HEADER {
        return Err(IngestError::Parse {
            line: 1,
            message: format!("expected header {}", TRIP_LOG_HEADER.join(",")),
        });
    }

    let mut rows: BTreeMap<String, Vec<(u64, TripRecord)>> = BTreeMap::new();
    for record in rdr.records() {
        let record = record.map_err(|e| IngestError::Parse {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != TRIP_LOG_HEADER.len() {
            return Err(IngestError::Parse {
                line,
                message: format!("expected 6 fields, found {}", record.len()),
            });
        }
        let vehicle = record[0].to_string();
        if vehicle.is_empty() {
            return Err(IngestError::Parse {
                line,
                message: "empty vehicle_id".into(),
            });
        }
        let start_time = parse_timestamp(&record[1], line, "trip_start")?;
        let end_time = parse_timestamp(&record[2], line, "trip_end")?;
        if end_time <= start_time {
            return Err(IngestError::Parse {
                line,
                message: "trip_end is not after trip_start".into(),
            });
        }
        let trip = TripRecord {
            start_time,
            end_time,
            soc_start: parse_pct(&record[3], line, "soc_start_pct")?,
            soc_end: parse_pct(&record[4], line, "soc_end_pct")?,
            mean_temp: parse_number(&record[5], line, "mean_temp_c")? + KELVIN_OFFSET,
        };
        if trip.mean_temp <= 0.0 {
            return Err(IngestError::Parse {
                line,
                message: "mean_temp_c below absolute zero".into(),
            });
        }
        if trip.soc_end > trip.soc_start + MIN_SOC_RISE {
            return Err(IngestError::Parse {
                line,
                message: "SOC rises during a trip (mid-trip charging is not supported)".into(),
            });
        }
        rows.entry(vehicle).or_default().push((line, trip));
    }

    let mut out = BTreeMap::new();
    for (vehicle, mut trips) in rows {
        trips.sort_by_key(|(line, t)| (t.start_time, *line));
        for w in trips.windows(2) {
            if w[1].1.start_time < w[0].1.end_time {
                return Err(IngestError::Overlap {
                    vehicle,
                    first_line: w[0].0,
                    second_line: w[1].0,
                });
            }
        }
        out.insert(vehicle, trips.into_iter().map(|(_, t)| t).collect());
    }
    Ok(out)
}

fn format_timestamp(t: i64, offset: &FixedOffset) -> String {
    offset
        .timestamp_opt(t, 0)
        .single()
        .map(|dt| dt.to_rfc3339())
        .unwrap_or_else(|| t.to_string())
}

/// Renders trips in the trip-log exchange format, timestamps at `utc_offset_minutes`.
pub fn write_trip_log<'a>(
    vehicles: impl IntoIterator<Item = (&'a str, &'a [TripRecord])>,
    utc_offset_minutes: i32,
) -> String {
    let offset = FixedOffset::east_opt(utc_offset_minutes * 60)
        .unwrap_or_else(|| FixedOffset::east_opt(0).expect("zero offset"));
    let mut out = TRIP_LOG_HEADER.join(",");
    out.push('\n');
    for (vehicle, trips) in vehicles {
        for t in trips {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                vehicle,
                format_timestamp(t.start_time, &offset),
                format_timestamp(t.end_time, &offset),
                round_to(t.soc_start * 100.0, 6),
                round_to(t.soc_end * 100.0, 6),
                round_to(t.mean_temp - KELVIN_OFFSET, 6),
            ));
        }
    }
    out
}

fn round_to(v: f64, decimals: i32) -> f64 {
    let f = 10f64.powi(decimals);
    (v * f).round() / f
}

// --- charging events -------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum IngestWarning {
    /// The observed SOC rise needs more than the DCFC simulation power.
    InfeasibleEvent {
        plugin_time: i64,
        depart_time: i64,
        required_kw: f64,
    },
}

impl std::fmt::Display for IngestWarning {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            IngestWarning::InfeasibleEvent {
                plugin_time,
                required_kw,
                ..
            } => write!(
                f,
                "event at {plugin_time} needs {required_kw:.1} kW, excluded"
            ),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Detection {
    pub events: Vec<ChargeEvent>,
    pub warnings: Vec<IngestWarning>,
}

/// Infers charging events from SOC increases between consecutive trips.
///
/// Events whose average power exceeds the DCFC threshold are fast charges
/// simulated at the DCFC power; others are AC charges simulated at
/// `max(ac_sim_power_kw, average power)`.
pub fn detect_charging_events(
    trips: &[TripRecord],
    config: &IngestConfig,
) -> Result<Detection, IngestError> {
    let mut det = Detection::default();
    for (i, w) in trips.windows(2).enumerate() {
        let (prev, next) = (&w[0], &w[1]);
        let gap_s = next.start_time - prev.end_time;
        if gap_s <= 0 {
            return Err(IngestError::Ordering {
                index: i + 1,
                gap_s,
            });
        }
        let rise = next.soc_start - prev.soc_end;
        if rise <= MIN_SOC_RISE {
            continue;
        }
        let gap_h = gap_s as f64 / SECONDS_PER_HOUR;
        let avg_power_kw = rise * config.pack_capacity_kwh / gap_h;
        if avg_power_kw > config.dcfc_sim_power_kw {
            log::warn!(
                "excluding infeasible charge at {}: {:.1} kW required",
                prev.end_time,
                avg_power_kw
            );
            det.warnings.push(IngestWarning::InfeasibleEvent {
                plugin_time: prev.end_time,
                depart_time: next.start_time,
                required_kw: avg_power_kw,
            });
            continue;
        }
        let (kind, sim_power_kw) = if avg_power_kw > config.dcfc_threshold_kw {
            (ChargeKind::Dcfc, config.dcfc_sim_power_kw)
        } else {
            (ChargeKind::AcL2, config.ac_sim_power_kw.max(avg_power_kw))
        };
        det.events.push(ChargeEvent {
            plugin_time: prev.end_time,
            depart_time: next.start_time,
            soc_start: prev.soc_end,
            soc_target: next.soc_start,
            kind,
            sim_power_kw,
            avg_power_kw,
        });
    }
    Ok(det)
}

// --- charge plans and timeline synthesis ------------------------------------

/// A constant-power interval inside a parked gap. Positive power charges,
/// negative discharges, zero rests.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlanSegment {
    pub start: f64,
    pub end: f64,
    pub power_kw: f64,
}

impl PlanSegment {
    pub fn duration_h(&self) -> f64 {
        (self.end - self.start) / SECONDS_PER_HOUR
    }

    pub fn energy_kwh(&self) -> f64 {
        self.power_kw * self.duration_h()
    }
}

/// Contiguous segments covering one event's `[plugin_time, depart_time]`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EventPlan {
    pub segments: Vec<PlanSegment>,
}

impl EventPlan {
    pub fn charged_kwh(&self) -> f64 {
        self.segments
            .iter()
            .filter(|s| s.power_kw > 0.0)
            .map(PlanSegment::energy_kwh)
            .sum()
    }

    pub fn discharged_kwh(&self) -> f64 {
        -self
            .segments
            .iter()
            .filter(|s| s.power_kw < 0.0)
            .map(PlanSegment::energy_kwh)
            .sum::<f64>()
    }
}

/// Conventional charging: start at plug-in, stop at the target SOC, then rest.
pub fn baseline_plan(event: &ChargeEvent, capacity_kwh: f64) -> EventPlan {
    let plugin = event.plugin_time as f64;
    let depart = event.depart_time as f64;
    let charge_end = (plugin + event.charge_duration_s(capacity_kwh)).min(depart);
    let mut segments = vec![PlanSegment {
        start: plugin,
        end: charge_end,
        power_kw: event.sim_power_kw,
    }];
    if charge_end < depart {
        segments.push(PlanSegment {
            start: charge_end,
            end: depart,
            power_kw: 0.0,
        });
    }
    EventPlan { segments }
}

struct Builder {
    samples: Vec<TimelineSample>,
    seams: Vec<usize>,
    step: f64,
}

impl Builder {
    /// Pushes the start sample and interior samples of a constant-rate segment.
    fn segment(&mut self, start: f64, end: f64, soc: f64, c_rate: f64, temp: f64) {
        self.samples.push(TimelineSample::new(start, soc, c_rate, temp));
        if c_rate == 0.0 {
            return;
        }
        let mut k = 1.0;
        loop {
            let t = start + k * self.step;
            if t >= end - 1e-6 {
                break;
            }
            let s = soc + c_rate * (t - start) / SECONDS_PER_HOUR;
            self.samples.push(TimelineSample::new(t, s, c_rate, temp));
            k += 1.0;
        }
    }

    fn seam(&mut self, at: f64, soc: f64, temp: f64) {
        self.seams.push(self.samples.len());
        self.samples.push(TimelineSample::new(at, soc, 0.0, temp));
    }
}

fn clamp_unit(soc: f64) -> Option<f64> {
    if (-1e-9..=1.0 + 1e-9).contains(&soc) {
        Some(soc.clamp(0.0, 1.0))
    } else {
        None
    }
}

/// Builds the piecewise usage timeline from trips and per-event charge plans.
///
/// `plans[i]` is the plan for `events[i]`. Gaps with no event are rests when
/// SOC is unchanged, a constant drift when SOC falls while parked, and a
/// zero-throughput discontinuity when SOC rose without a feasible event.
pub fn build_timeline(
    vehicle_id: &str,
    trips: &[TripRecord],
    events: &[ChargeEvent],
    plans: &[EventPlan],
    config: &IngestConfig,
) -> Result<UsageTimeline, IngestError> {
    if trips.is_empty() {
        return Err(IngestError::InvalidInput(format!(
            "vehicle {vehicle_id} has no trips"
        )));
    }
    if events.len() != plans.len() {
        return Err(IngestError::InvalidInput(format!(
            "{} events but {} plans",
            events.len(),
            plans.len()
        )));
    }
    let capacity = config.pack_capacity_kwh;
    let by_plugin: HashMap<i64, usize> = events
        .iter()
        .enumerate()
        .map(|(i, e)| (e.plugin_time, i))
        .collect();
    let mut used = 0usize;

    let mut b = Builder {
        samples: Vec::new(),
        seams: Vec::new(),
        step: config.timeline_step_s,
    };
    for (i, trip) in trips.iter().enumerate() {
        let dur_h = trip.duration_hours();
        if dur_h <= 0.0 {
            return Err(IngestError::InvalidInput(format!("trip {i} has no duration")));
        }
        let c = (trip.soc_end - trip.soc_start) / dur_h;
        b.segment(
            trip.start_time as f64,
            trip.end_time as f64,
            trip.soc_start,
            c,
            trip.mean_temp,
        );
        let Some(next) = trips.get(i + 1) else {
            b.samples.push(TimelineSample::new(
                trip.end_time as f64,
                trip.soc_end,
                0.0,
                trip.mean_temp,
            ));
            break;
        };
        let gap_start = trip.end_time as f64;
        let gap_end = next.start_time as f64;
        if gap_end <= gap_start {
            return Err(IngestError::Ordering {
                index: i + 1,
                gap_s: next.start_time - trip.end_time,
            });
        }
        let temp = trip.mean_temp;
        match by_plugin.get(&trip.end_time) {
            Some(&ei) => {
                let event = &events[ei];
                if event.depart_time != next.start_time {
                    return Err(IngestError::InvalidInput(format!(
                        "event at {} does not span the gap to the next trip",
                        event.plugin_time
                    )));
                }
                used += 1;
                fill_plan(&mut b, event, &plans[ei], trip.soc_end, next.soc_start, temp, capacity)?;
            }
            None => {
                let rise = next.soc_start - trip.soc_end;
                if rise.abs() <= MIN_SOC_RISE && rise <= 0.0 {
                    b.segment(gap_start, gap_end, trip.soc_end, 0.0, temp);
                    if rise != 0.0 {
                        // Sub-threshold wobble: treat as a discontinuity so the trace stays exact.
                        b.seams.push(b.samples.len() - 1);
                    }
                } else if rise < 0.0 {
                    let c = rise / ((gap_end - gap_start) / SECONDS_PER_HOUR);
                    b.segment(gap_start, gap_end, trip.soc_end, c, temp);
                } else {
                    b.seam(gap_start, trip.soc_end, temp);
                }
            }
        }
    }
    if used != events.len() {
        return Err(IngestError::InvalidInput(format!(
            "{} event(s) do not start at a trip end",
            events.len() - used
        )));
    }
    let tl = UsageTimeline {
        vehicle_id: vehicle_id.to_string(),
        samples: b.samples,
        seam_marks: b.seams,
    };
    Ok(tl)
}

fn fill_plan(
    b: &mut Builder,
    event: &ChargeEvent,
    plan: &EventPlan,
    soc_in: f64,
    soc_out: f64,
    temp: f64,
    capacity: f64,
) -> Result<(), IngestError> {
    let infeasible = |reason: String| IngestError::InfeasiblePlan {
        plugin_time: event.plugin_time,
        reason,
    };
    let plugin = event.plugin_time as f64;
    let depart = event.depart_time as f64;
    let Some(first) = plan.segments.first() else {
        return Err(infeasible("empty plan".into()));
    };
    if (first.start - plugin).abs() > 1e-6 {
        return Err(infeasible("plan does not start at plug-in".into()));
    }
    let mut cursor = plugin;
    let mut soc = soc_in;
    for seg in &plan.segments {
        if (seg.start - cursor).abs() > 1e-6 || seg.end < seg.start {
            return Err(infeasible(format!(
                "segment [{}, {}] is not contiguous",
                seg.start, seg.end
            )));
        }
        let end_soc = soc + seg.energy_kwh() / capacity;
        let end_soc = clamp_unit(end_soc)
            .ok_or_else(|| infeasible(format!("SOC would reach {end_soc:.6}")))?;
        if seg.end - seg.start > 1e-6 {
            b.segment(cursor, seg.end, soc, seg.power_kw / capacity, temp);
            cursor = seg.end;
        }
        soc = end_soc;
    }
    if (cursor - depart).abs() > 1e-6 {
        return Err(infeasible("plan does not end at departure".into()));
    }
    if (soc - soc_out).abs() > PLAN_SOC_TOL {
        return Err(infeasible(format!(
            "plan ends at SOC {soc:.6}, next trip starts at {soc_out:.6}"
        )));
    }
    Ok(())
}

/// Baseline plans for every event followed by [`build_timeline`].
pub fn build_baseline_timeline(
    vehicle_id: &str,
    trips: &[TripRecord],
    events: &[ChargeEvent],
    config: &IngestConfig,
) -> Result<UsageTimeline, IngestError> {
    let plans: Vec<EventPlan> = events
        .iter()
        .map(|e| baseline_plan(e, config.pack_capacity_kwh))
        .collect();
    build_timeline(vehicle_id, trips, events, &plans, config)
}

/// Number of tiles needed so that the tiled span covers `horizon_s`.
pub fn tiles_for_horizon(base_span_s: f64, horizon_s: f64) -> usize {
    let n = ((horizon_s + SEAM_GAP_S) / (base_span_s + SEAM_GAP_S)).ceil();
    (n as usize).max(1)
}

/// Tiles the timeline until it spans at least `horizon_years`.
///
/// Consecutive tiles are joined by a [`SEAM_GAP_S`] zero-throughput seam over
/// which SOC jumps from the base end value back to the base start value.
pub fn extend_cyclic(timeline: &UsageTimeline, horizon_years: f64) -> Result<UsageTimeline, IngestError> {
    if !(horizon_years.is_finite() && horizon_years > 0.0) {
        return Err(IngestError::InvalidInput(format!(
            "horizon must be positive, got {horizon_years}"
        )));
    }
    let base = &timeline.samples;
    if base.len() < 2 {
        return Err(IngestError::InvalidInput("timeline has fewer than 2 samples".into()));
    }
    let span = timeline.span();
    if span < 86_400.0 {
        return Err(IngestError::InvalidInput(format!(
            "base timeline spans {span} s, need at least one day"
        )));
    }
    let tiles = tiles_for_horizon(span, horizon_years * SECONDS_PER_YEAR);
    let period = span + SEAM_GAP_S;
    let len = base.len();
    let mut samples = Vec::with_capacity(len * tiles);
    let mut seams = Vec::with_capacity((timeline.seam_marks.len() + 1) * tiles);
    for k in 0..tiles {
        let shift = k as f64 * period;
        let offset = k * len;
        samples.extend(base.iter().map(|s| TimelineSample { t: s.t + shift, ..*s }));
        seams.extend(timeline.seam_marks.iter().map(|m| m + offset));
        let last = offset + len - 1;
        samples[last].c_rate = 0.0;
        if k + 1 < tiles {
            seams.push(last);
        }
    }
    Ok(UsageTimeline {
        vehicle_id: timeline.vehicle_id.clone(),
        samples,
        seam_marks: seams,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::timeline::validate_timeline;

    const T0: i64 = 1_672_560_000; // 2023-01-01T08:00:00Z

    fn trip(start: i64, end: i64, s0: f64, s1: f64) -> TripRecord {
        TripRecord {
            start_time: start,
            end_time: end,
            soc_start: s0,
            soc_end: s1,
            mean_temp: 293.15,
        }
    }

    #[test]
    fn parses_single_row_with_unit_conversion() {
        let log = "vehicle_id,trip_start,trip_end,soc_start_pct,soc_end_pct,mean_temp_c\n\
                   v1,2023-01-01T08:00:00-08:00,2023-01-01T08:30:00-08:00,40,30,20.5\n";
        let map = parse_trip_log(log.as_bytes()).unwrap();
        let trips = &map["v1"];
        assert_eq!(trips.len(), 1);
        assert!((trips[0].soc_start - 0.40).abs() < 1e-15);
        assert!((trips[0].soc_end - 0.30).abs() < 1e-15);
        assert!((trips[0].mean_temp - 293.65).abs() < 1e-12);
        assert_eq!(trips[0].end_time - trips[0].start_time, 1800);
        assert_eq!(trips[0].start_time, 1_672_588_800);
    }

    #[test]
    fn header_only_is_empty() {
        let log = "vehicle_id,trip_start,trip_end,soc_start_pct,soc_end_pct,mean_temp_c\n";
        assert!(parse_trip_log(log.as_bytes()).unwrap().is_empty());
    }

    #[test]
    fn reversed_trip_is_a_parse_error_at_its_line() {
        let log = "vehicle_id,trip_start,trip_end,soc_start_pct,soc_end_pct,mean_temp_c\n\
                   v1,2023-01-01T08:00:00-08:00,2023-01-01T08:30:00-08:00,40,30,20\n\
                   v1,2023-01-01T10:00:00-08:00,2023-01-01T09:30:00-08:00,30,20,20\n";
        match parse_trip_log(log.as_bytes()) {
            Err(IngestError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn overlapping_trips_name_both_lines() {
        let log = "vehicle_id,trip_start,trip_end,soc_start_pct,soc_end_pct,mean_temp_c\n\
                   v1,2023-01-01T08:00:00-08:00,2023-01-01T09:00:00-08:00,40,30,20\n\
                   v2,2023-01-01T08:00:00-08:00,2023-01-01T09:00:00-08:00,40,30,20\n\
                   v1,2023-01-01T08:30:00-08:00,2023-01-01T09:30:00-08:00,30,20,20\n";
        match parse_trip_log(log.as_bytes()) {
            Err(IngestError::Overlap {
                vehicle,
                first_line,
                second_line,
            }) => {
                assert_eq!(vehicle, "v1");
                assert_eq!((first_line, second_line), (2, 4));
            }
            other => panic!("expected overlap, got {other:?}"),
        }
    }

    #[test]
    fn malformed_number_and_bad_header() {
        let log = "vehicle_id,trip_start,trip_end,soc_start_pct,soc_end_pct,mean_temp_c\n\
                   v1,2023-01-01T08:00:00-08:00,2023-01-01T08:30:00-08:00,forty,30,20\n";
        assert!(matches!(
            parse_trip_log(log.as_bytes()),
            Err(IngestError::Parse { line: 2, .. })
        ));
        let bad = "id,start\n";
        assert!(matches!(
            parse_trip_log(bad.as_bytes()),
            Err(IngestError::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn writer_output_parses_back() {
        let trips = vec![trip(T0, T0 + 1800, 0.647, 0.5), trip(T0 + 7200, T0 + 9000, 0.9, 0.8512)];
        let text = write_trip_log([("v9", trips.as_slice())], -480);
        let back = parse_trip_log(text.as_bytes()).unwrap();
        assert_eq!(back["v9"].len(), 2);
        for (a, b) in trips.iter().zip(&back["v9"]) {
            assert_eq!(a.start_time, b.start_time);
            assert!((a.soc_start - b.soc_start).abs() < 1e-12);
            assert!((a.soc_end - b.soc_end).abs() < 1e-12);
            assert!((a.mean_temp - b.mean_temp).abs() < 1e-9);
        }
    }

    #[test]
    fn ac_event_from_four_hour_gap() {
        let cfg = IngestConfig::default();
        let trips = [trip(T0, T0 + 3600, 0.5, 0.4), trip(T0 + 5 * 3600, T0 + 6 * 3600, 0.8, 0.7)];
        let det = detect_charging_events(&trips, &cfg).unwrap();
        assert_eq!(det.events.len(), 1);
        let e = &det.events[0];
        assert_eq!(e.kind, ChargeKind::AcL2);
        assert!((e.energy_kwh(71.4) - 28.56).abs() < 1e-9);
        assert!((e.avg_power_kw - 7.14).abs() < 1e-9);
        assert_eq!(e.sim_power_kw, 9.6);
        assert!((e.charge_duration_s(71.4) / 3600.0 - 2.975).abs() < 1e-12);
        assert_eq!(e.plugin_time, T0 + 3600);
        assert_eq!(e.depart_time, T0 + 5 * 3600);
    }

    #[test]
    fn dcfc_event_from_one_hour_gap() {
        let cfg = IngestConfig::default();
        let trips = [trip(T0, T0 + 3600, 0.3, 0.1), trip(T0 + 2 * 3600, T0 + 3 * 3600, 0.8, 0.7)];
        let e = &detect_charging_events(&trips, &cfg).unwrap().events[0];
        assert_eq!(e.kind, ChargeKind::Dcfc);
        assert!((e.energy_kwh(71.4) - 49.98).abs() < 1e-9);
        assert!((e.avg_power_kw - 49.98).abs() < 1e-9);
        assert_eq!(e.sim_power_kw, 100.0);
        assert!((e.charge_duration_s(71.4) / 3600.0 - 0.4998).abs() < 1e-12);
    }

    #[test]
    fn no_event_without_soc_rise_and_fast_ac_keeps_observed_power() {
        let cfg = IngestConfig::default();
        let flat = [trip(T0, T0 + 3600, 0.5, 0.4), trip(T0 + 7200, T0 + 9000, 0.4, 0.3)];
        assert!(detect_charging_events(&flat, &cfg).unwrap().events.is_empty());
        // 0.2 * 71.4 kWh in 1 h = 14.28 kW: AC, simulated at the observed power.
        let quick = [trip(T0, T0 + 3600, 0.5, 0.4), trip(T0 + 7200, T0 + 9000, 0.6, 0.5)];
        let e = &detect_charging_events(&quick, &cfg).unwrap().events[0];
        assert_eq!(e.kind, ChargeKind::AcL2);
        assert!((e.sim_power_kw - 14.28).abs() < 1e-9);
    }

    #[test]
    fn infeasible_event_is_excluded_with_warning() {
        let cfg = IngestConfig::default();
        // 0.8 * 71.4 = 57.12 kWh in 10 minutes.
        let trips = [trip(T0, T0 + 3600, 0.3, 0.1), trip(T0 + 4200, T0 + 5000, 0.9, 0.8)];
        let det = detect_charging_events(&trips, &cfg).unwrap();
        assert!(det.events.is_empty());
        assert_eq!(det.warnings.len(), 1);
        // The timeline still builds, with a zero-throughput discontinuity.
        let tl = build_baseline_timeline("v", &trips, &det.events, &cfg).unwrap();
        assert!(validate_timeline(&tl).is_empty());
        assert_eq!(tl.seam_marks.len(), 1);
    }

    #[test]
    fn touching_trips_are_an_ordering_error() {
        let trips = [trip(T0, T0 + 3600, 0.5, 0.4), trip(T0 + 3600, T0 + 7200, 0.6, 0.5)];
        assert!(matches!(
            detect_charging_events(&trips, &IngestConfig::default()),
            Err(IngestError::Ordering { .. })
        ));
    }

    #[test]
    fn single_trip_timeline() {
        let cfg = IngestConfig::default();
        let trips = [trip(T0, T0 + 3600, 0.8, 0.7)];
        let tl = build_baseline_timeline("v", &trips, &[], &cfg).unwrap();
        assert_eq!(tl.samples.len(), 61);
        assert!(tl.samples[..60].iter().all(|s| (s.c_rate + 0.1).abs() < 1e-12));
        assert_eq!(tl.samples[0].soc, 0.8);
        assert!((tl.samples[60].soc - 0.7).abs() < 1e-15);
        assert!(validate_timeline(&tl).is_empty());
    }

    #[test]
    fn baseline_ac_charge_segment() {
        let cfg = IngestConfig::default();
        let trips = [trip(T0, T0 + 3600, 0.5, 0.4), trip(T0 + 5 * 3600, T0 + 6 * 3600, 0.8, 0.7)];
        let det = detect_charging_events(&trips, &cfg).unwrap();
        let tl = build_baseline_timeline("v", &trips, &det.events, &cfg).unwrap();
        assert!(validate_timeline(&tl).is_empty());
        let plugin = (T0 + 3600) as f64;
        let charge_end = plugin + 2.975 * 3600.0;
        let charging: Vec<_> = tl
            .samples
            .iter()
            .filter(|s| s.t >= plugin && s.t < charge_end)
            .collect();
        assert!(!charging.is_empty());
        for s in &charging {
            assert!((s.c_rate - 9.6 / 71.4).abs() < 1e-12);
        }
        assert!((9.6f64 / 71.4 - 0.13445).abs() < 1e-5);
        let rest = tl.samples.iter().find(|s| s.t == charge_end).unwrap();
        assert_eq!(rest.c_rate, 0.0);
        assert!((rest.soc - 0.8).abs() < 1e-12);
        // Energy balance of the plan.
        let plan = baseline_plan(&det.events[0], 71.4);
        assert!((plan.charged_kwh() - det.events[0].energy_kwh(71.4)).abs() < 1e-6);
    }

    #[test]
    fn overcharging_plan_is_infeasible() {
        let cfg = IngestConfig::default();
        let trips = [trip(T0, T0 + 3600, 0.5, 0.4), trip(T0 + 5 * 3600, T0 + 6 * 3600, 0.8, 0.7)];
        let det = detect_charging_events(&trips, &cfg).unwrap();
        let plugin = (T0 + 3600) as f64;
        // 0.62 * 71.4 kWh pushes SOC from 0.40 to 1.02.
        let hours = 0.62 * 71.4 / 9.6;
        let plan = EventPlan {
            segments: vec![
                PlanSegment {
                    start: plugin,
                    end: plugin + hours * 3600.0,
                    power_kw: 9.6,
                },
                PlanSegment {
                    start: plugin + hours * 3600.0,
                    end: (T0 + 5 * 3600) as f64,
                    power_kw: 0.0,
                },
            ],
        };
        let err = build_timeline("v", &trips, &det.events, &[plan], &cfg).unwrap_err();
        match err {
            IngestError::InfeasiblePlan { plugin_time, .. } => assert_eq!(plugin_time, T0 + 3600),
            other => panic!("{other:?}"),
        }
    }

    fn day_timeline(days: i64) -> UsageTimeline {
        let cfg = IngestConfig::default();
        let mut trips = Vec::new();
        for d in 0..days {
            let s = T0 + d * 86_400;
            trips.push(trip(s, s + 3600, 0.8, 0.7));
            trips.push(trip(s + 10 * 3600, s + 11 * 3600, 0.7, 0.6));
        }
        // Keep the last trip's end inside the final day.
        let det = detect_charging_events(&trips, &cfg).unwrap();
        build_baseline_timeline("v", &trips, &det.events, &cfg).unwrap()
    }

    #[test]
    fn four_month_base_tiles_to_forty_five() {
        let span = 15.0 * SECONDS_PER_YEAR / 45.0;
        assert_eq!(tiles_for_horizon(span, 15.0 * SECONDS_PER_YEAR), 45);
        let tl = UsageTimeline::new(
            "v",
            vec![
                TimelineSample::new(0.0, 0.5, 0.0, 290.0),
                TimelineSample::new(span, 0.5, 0.0, 290.0),
            ],
        );
        let ext = extend_cyclic(&tl, 15.0).unwrap();
        assert_eq!(ext.seam_marks.len(), 44);
        assert_eq!(ext.samples.len(), 90);
        assert!(ext.span() >= 15.0 * SECONDS_PER_YEAR);
        assert!(validate_timeline(&ext).is_empty());
    }

    #[test]
    fn extension_is_valid_and_seams_jump_back() {
        let tl = day_timeline(3);
        assert!(validate_timeline(&tl).is_empty());
        let ext = extend_cyclic(&tl, 0.1).unwrap();
        assert!(validate_timeline(&ext).is_empty());
        let first = ext.seam_marks[0];
        assert_eq!(ext.samples[first].soc, tl.samples.last().unwrap().soc);
        assert_eq!(ext.samples[first + 1].soc, tl.samples[0].soc);
        assert_eq!(ext.samples[first].c_rate, 0.0);
    }

    #[test]
    fn extension_errors() {
        let tl = day_timeline(3);
        assert!(extend_cyclic(&tl, 0.0).is_err());
        assert!(extend_cyclic(&tl, -1.0).is_err());
        let short = build_baseline_timeline(
            "v",
            &[trip(T0, T0 + 3600, 0.8, 0.7)],
            &[],
            &IngestConfig::default(),
        )
        .unwrap();
        assert!(extend_cyclic(&short, 1.0).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(IngestConfig::default().validate().is_ok());
        let bad = IngestConfig {
            dcfc_threshold_kw: 120.0,
            ..IngestConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
