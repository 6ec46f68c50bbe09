//! User-centric V2G strategy: peak-window discharge to a SOC floor, rest,
//! then a delayed charge that reaches the driver's target by the deadline.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::LocalClock;
use crate::ingest::{baseline_plan, build_timeline, EventPlan, IngestConfig, IngestError, PlanSegment};
use crate::timeline::{ChargeEvent, ChargeKind, TripRecord, UsageTimeline, SECONDS_PER_HOUR};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SchedulerError {
    #[error("invalid V2G config: {0}")]
    InvalidConfig(String),
    #[error("event plugged in at {0} is not eligible for V2G")]
    Ineligible(i64),
    #[error("infeasible plan for event plugged in at {plugin_time}: {reason}")]
    InfeasiblePlan { plugin_time: i64, reason: String },
}

/// Local hours are measured from midnight of the plug-in day; values at or
/// above 24 fall on the next day.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct V2GConfig {
    pub discharge_start_hour: f64,
    pub discharge_end_hour: f64,
    pub discharge_power_kw: f64,
    pub soc_floor: f64,
    pub ready_deadline_hour: f64,
    pub charge_power_kw: f64,
    pub eligibility_start_hour: f64,
    pub eligibility_end_hour: f64,
}

impl Default for V2GConfig {
    fn default() -> Self {
        Self {
            discharge_start_hour: 18.0,
            discharge_end_hour: 21.0,
            discharge_power_kw: 9.6,
            soc_floor: 0.50,
            ready_deadline_hour: 4.0,
            charge_power_kw: 9.6,
            eligibility_start_hour: 21.0,
            eligibility_end_hour: 4.0,
        }
    }
}

impl V2GConfig {
    pub fn validate(&self) -> Result<(), SchedulerError> {
        let bad = |m: &str| Err(SchedulerError::InvalidConfig(m.to_string()));
        if !(self.soc_floor > 0.0 && self.soc_floor <= 1.0) {
            return bad("soc_floor must be in (0, 1]");
        }
        if !(self.discharge_start_hour < self.discharge_end_hour) {
            return bad("discharge_start_hour must precede discharge_end_hour");
        }
        if !(self.discharge_power_kw > 0.0 && self.charge_power_kw > 0.0) {
            return bad("powers must be positive");
        }
        let hours = [
            self.discharge_start_hour,
            self.discharge_end_hour,
            self.ready_deadline_hour,
            self.eligibility_start_hour,
            self.eligibility_end_hour,
        ];
        if hours.iter().any(|h| !(0.0..=24.0).contains(h)) {
            return bad("hours must lie in [0, 24]");
        }
        if self.discharge_end_hour > self.eligibility_start_hour {
            return bad("discharge must end by the start of the eligibility window");
        }
        Ok(())
    }

    /// Deadline as hours after midnight of the plug-in day.
    fn ready_offset_hours(&self) -> f64 {
        24.0 + self.ready_deadline_hour
    }
}

/// Plugged in by the start of the overnight window and parked until its end.
pub fn is_eligible(event: &ChargeEvent, config: &V2GConfig, clock: &LocalClock) -> bool {
    if event.kind != ChargeKind::AcL2 {
        return false;
    }
    let plugin = event.plugin_time as f64;
    let day = clock.day_start(plugin);
    plugin <= clock.at(day, config.eligibility_start_hour)
        && event.depart_time as f64 >= clock.at(day, 24.0 + config.eligibility_end_hour)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct V2GPlan {
    pub plan: EventPlan,
    pub discharge_start: f64,
    pub discharge_end: f64,
    pub charge_start: f64,
    pub ready_time: f64,
    pub soc_after_discharge: f64,
    pub dispatched_kwh: f64,
}

/// Three-phase plan for one eligible event.
pub fn plan_v2g(
    event: &ChargeEvent,
    config: &V2GConfig,
    capacity_kwh: f64,
    clock: &LocalClock,
) -> Result<V2GPlan, SchedulerError> {
    if !is_eligible(event, config, clock) {
        return Err(SchedulerError::Ineligible(event.plugin_time));
    }
    let plugin = event.plugin_time as f64;
    let depart = event.depart_time as f64;
    let day = clock.day_start(plugin);
    let window_end = clock.at(day, config.discharge_end_hour);
    let ready = clock.at(day, config.ready_offset_hours());

    let discharge_start = plugin.max(clock.at(day, config.discharge_start_hour));
    let (discharge_end, soc_after) =
        if event.soc_start > config.soc_floor && discharge_start < window_end {
            let to_floor_h = (event.soc_start - config.soc_floor) * capacity_kwh / config.discharge_power_kw;
            let floor_hit = discharge_start + to_floor_h * SECONDS_PER_HOUR;
            if floor_hit <= window_end {
                (floor_hit, config.soc_floor)
            } else {
                let hours = (window_end - discharge_start) / SECONDS_PER_HOUR;
                (window_end, event.soc_start - config.discharge_power_kw * hours / capacity_kwh)
            }
        } else {
            (discharge_start, event.soc_start)
        };

    let charge_h = (event.soc_target - soc_after) * capacity_kwh / config.charge_power_kw;
    let charge_start = ready - charge_h * SECONDS_PER_HOUR;
    if charge_start < discharge_end {
        return Err(SchedulerError::InfeasiblePlan {
            plugin_time: event.plugin_time,
            reason: format!(
                "charging needs {charge_h:.3} h but only {:.3} h remain after discharge",
                (ready - discharge_end) / SECONDS_PER_HOUR
            ),
        });
    }

    let mut segments = Vec::with_capacity(5);
    let mut push = |start: f64, end: f64, power_kw: f64| {
        if end > start {
            segments.push(PlanSegment { start, end, power_kw });
        }
    };
    push(plugin, discharge_start, 0.0);
    push(discharge_start, discharge_end, -config.discharge_power_kw);
    push(discharge_end, charge_start, 0.0);
    push(charge_start, ready, config.charge_power_kw);
    push(ready, depart, 0.0);

    Ok(V2GPlan {
        plan: EventPlan { segments },
        discharge_start,
        discharge_end,
        charge_start,
        ready_time: ready,
        soc_after_discharge: soc_after,
        dispatched_kwh: (event.soc_start - soc_after) * capacity_kwh,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum EventOutcome {
    Ineligible,
    Dispatched(V2GPlan),
    /// Eligible but infeasible; the event kept its baseline plan.
    Failed(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct StrategyOutcome {
    pub timeline: UsageTimeline,
    pub dispatched_kwh: f64,
    pub outcomes: Vec<EventOutcome>,
}

impl StrategyOutcome {
    pub fn failed_events(&self) -> usize {
        self.outcomes
            .iter()
            .filter(|o| matches!(o, EventOutcome::Failed(_)))
            .count()
    }

    pub fn eligible_events(&self) -> usize {
        self.outcomes
            .iter()
            .filter(|o| !matches!(o, EventOutcome::Ineligible))
            .count()
    }
}

/// Replaces every eligible event with its V2G plan; other events, and
/// eligible events whose plan is infeasible, keep immediate charging.
pub fn apply_strategy(
    vehicle_id: &str,
    trips: &[TripRecord],
    events: &[ChargeEvent],
    ingest: &IngestConfig,
    config: &V2GConfig,
    clock: &LocalClock,
) -> Result<StrategyOutcome, IngestError> {
    let capacity = ingest.pack_capacity_kwh;
    let mut plans = Vec::with_capacity(events.len());
    let mut outcomes = Vec::with_capacity(events.len());
    let mut dispatched_kwh = 0.0;
    for event in events {
        if !is_eligible(event, config, clock) {
            plans.push(baseline_plan(event, capacity));
            outcomes.push(EventOutcome::Ineligible);
            continue;
        }
        match plan_v2g(event, config, capacity, clock) {
            Ok(p) => {
                dispatched_kwh += p.dispatched_kwh;
                plans.push(p.plan.clone());
                outcomes.push(EventOutcome::Dispatched(p));
            }
            Err(e) => {
                log::debug!("{vehicle_id}: {e}; keeping baseline charge");
                plans.push(baseline_plan(event, capacity));
                outcomes.push(EventOutcome::Failed(e.to_string()));
            }
        }
    }
    let timeline = build_timeline(vehicle_id, trips, events, &plans, ingest)?;
    Ok(StrategyOutcome {
        timeline,
        dispatched_kwh,
        outcomes,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AuditRule {
    BelowFloor,
    MissedTarget,
    OutsideWindow,
    EnergyBalance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditViolation {
    pub plugin_time: i64,
    pub rule: AuditRule,
    pub detail: String,
}

fn soc_at(timeline: &UsageTimeline, t: f64) -> Option<f64> {
    let i = timeline.index_at_or_before(t)?;
    let a = &timeline.samples[i];
    match timeline.samples.get(i + 1) {
        Some(b) if a.t < t => Some(a.soc + (b.soc - a.soc) * (t - a.t) / (b.t - a.t)),
        _ => Some(a.soc),
    }
}

/// Checks the strategy invariants against the built timeline, independently
/// of the plan arithmetic that produced it.
pub fn audit(
    outcome: &StrategyOutcome,
    events: &[ChargeEvent],
    config: &V2GConfig,
    capacity_kwh: f64,
    clock: &LocalClock,
) -> Vec<AuditViolation> {
    const SOC_TOL: f64 = 1e-9;
    let tl = &outcome.timeline;
    let s = &tl.samples;
    let mut out = Vec::new();
    for (event, o) in events.iter().zip(&outcome.outcomes) {
        let EventOutcome::Dispatched(plan) = o else {
            continue;
        };
        let mut flag = |rule, detail: String| {
            out.push(AuditViolation {
                plugin_time: event.plugin_time,
                rule,
                detail,
            })
        };
        let plugin = event.plugin_time as f64;
        let depart = event.depart_time as f64;
        let lo = s.partition_point(|x| x.t < plugin);
        let hi = s.partition_point(|x| x.t < depart);

        let mut charged = 0.0;
        let mut discharged = 0.0;
        for i in lo..hi {
            let a = &s[i];
            let Some(b) = s.get(i + 1) else { break };
            let kwh = a.c_rate * capacity_kwh * (b.t - a.t) / SECONDS_PER_HOUR;
            if a.c_rate < 0.0 {
                discharged -= kwh;
                let hour = clock.hour_of_day(a.t);
                let end_hour = clock.hour_of_day(b.t - 1e-6);
                if !(hour >= config.discharge_start_hour && end_hour < config.discharge_end_hour) {
                    flag(AuditRule::OutsideWindow, format!("discharge at local {}", clock.hms(a.t)));
                }
                if a.soc < config.soc_floor - SOC_TOL || b.soc < config.soc_floor - SOC_TOL {
                    flag(AuditRule::BelowFloor, format!("SOC {:.9} at {}", b.soc.min(a.soc), clock.hms(a.t)));
                }
            } else if a.c_rate > 0.0 {
                charged += kwh;
            }
        }
        match soc_at(tl, plan.ready_time) {
            Some(soc) if (soc - event.soc_target).abs() <= 1e-6 => {}
            got => flag(
                AuditRule::MissedTarget,
                format!("SOC {got:?} at deadline, target {}", event.soc_target),
            ),
        }
        let need = (event.soc_target - event.soc_start) * capacity_kwh;
        if (charged - (discharged + need)).abs() > 1e-6 {
            flag(
                AuditRule::EnergyBalance,
                format!("charged {charged} kWh, dispatched {discharged} + need {need}"),
            );
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    const CAP: f64 = 71.4;

    fn clock() -> LocalClock {
        LocalClock::default()
    }

    /// Local `hour` on 2023-01-01 (PST).
    fn local(hour: f64) -> i64 {
        let day = clock().day_start(1_672_600_000.0);
        clock().at(day, hour).round() as i64
    }

    fn event(plugin_h: f64, depart_h: f64, soc: f64, target: f64) -> ChargeEvent {
        ChargeEvent {
            plugin_time: local(plugin_h),
            depart_time: local(depart_h),
            soc_start: soc,
            soc_target: target,
            kind: ChargeKind::AcL2,
            sim_power_kw: 9.6,
            avg_power_kw: 2.0,
        }
    }

    #[test]
    fn eligibility_rules() {
        let cfg = V2GConfig::default();
        assert!(is_eligible(&event(17.5, 31.0, 0.8, 0.9), &cfg, &clock()));
        assert!(!is_eligible(&event(22.0, 31.0, 0.8, 0.9), &cfg, &clock()));
        assert!(!is_eligible(&event(17.5, 27.0, 0.8, 0.9), &cfg, &clock()));
        let mut dc = event(17.5, 31.0, 0.8, 0.9);
        dc.kind = ChargeKind::Dcfc;
        assert!(!is_eligible(&dc, &cfg, &clock()));
        // Low SOC does not gate eligibility.
        assert!(is_eligible(&event(17.5, 31.0, 0.3, 0.9), &cfg, &clock()));
    }

    #[test]
    fn evening_floor_plan() {
        let p = plan_v2g(&event(17.5, 31.0, 0.8, 0.9), &V2GConfig::default(), CAP, &clock()).unwrap();
        let c = clock();
        assert_eq!(c.hms(p.discharge_start), "18:00:00");
        assert_eq!(c.hms(p.discharge_end), "20:13:52");
        assert!((p.dispatched_kwh - 21.42).abs() < 1e-9);
        assert_eq!(c.hms(p.charge_start), "01:01:30");
        assert_eq!(c.hms(p.ready_time), "04:00:00");
        assert_eq!(p.soc_after_discharge, 0.5);
        assert_eq!(p.plan.segments.len(), 5);
        assert!((p.plan.discharged_kwh() - 21.42).abs() < 1e-9);
        assert!((p.plan.charged_kwh() - 0.4 * CAP).abs() < 1e-9);
    }

    #[test]
    fn late_plugin_near_floor() {
        let p = plan_v2g(&event(19.0, 31.0, 0.55, 0.9), &V2GConfig::default(), CAP, &clock()).unwrap();
        assert!((p.dispatched_kwh - 3.57).abs() < 1e-9);
        assert_eq!(clock().hms(p.discharge_start), "19:00:00");
        assert_eq!(clock().hms(p.discharge_end), "19:22:18");
        assert!(((p.discharge_end - p.discharge_start) / 3600.0 - 0.371875).abs() < 1e-9);
    }

    #[test]
    fn below_floor_only_delays_charge() {
        let p = plan_v2g(&event(17.5, 31.0, 0.45, 0.9), &V2GConfig::default(), CAP, &clock()).unwrap();
        assert_eq!(p.dispatched_kwh, 0.0);
        assert!(p.plan.segments.iter().all(|s| s.power_kw >= 0.0));
        assert_eq!(clock().hms(p.ready_time), "04:00:00");
    }

    #[test]
    fn window_limited_discharge() {
        // Starting full, three hours at 9.6 kW stops at 21:00 above the floor.
        let p = plan_v2g(&event(17.0, 31.0, 1.0, 1.0), &V2GConfig::default(), CAP, &clock()).unwrap();
        assert_eq!(clock().hms(p.discharge_end), "21:00:00");
        assert!((p.dispatched_kwh - 28.8).abs() < 1e-9);
        assert!(p.soc_after_discharge > 0.5);
    }

    #[test]
    fn infeasible_recharge_is_an_error() {
        let cfg = V2GConfig {
            charge_power_kw: 1.0,
            ..V2GConfig::default()
        };
        assert!(matches!(
            plan_v2g(&event(17.5, 31.0, 0.8, 0.9), &cfg, CAP, &clock()),
            Err(SchedulerError::InfeasiblePlan { .. })
        ));
    }

    #[test]
    fn config_validation() {
        assert!(V2GConfig::default().validate().is_ok());
        let bad = V2GConfig {
            soc_floor: 0.0,
            ..V2GConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
