//! Seeded synthetic fleet calibrated to published per-profile usage means.
//!
//! Each driver is simulated day by day: drive with probability
//! `driving_days_per_week / 7`, spend a lognormal share of SOC across a few
//! trips, then charge according to the profile's policy. Table means are
//! inputs; every dispersion and timing choice is a generator parameter.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Normal, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::LocalClock;
use crate::ingest::{detect_charging_events, write_trip_log, IngestConfig, IngestError};
use crate::timeline::{ChargeEvent, TripRecord, KELVIN_OFFSET, SECONDS_PER_HOUR};

/// 2023-01-01T00:00:00-08:00.
pub const DEFAULT_START: i64 = 1_672_588_800;

const DAYS_PER_MONTH: f64 = 365.0 / 12.0;
/// Range of average power for generated fast-charge stops.
const DCFC_POWER_KW: (f64, f64) = (45.0, 90.0);
/// Charge immediately when a day ends below this SOC.
const EMERGENCY_SOC: f64 = 0.15;
/// No trip takes SOC below this value.
const MIN_TRIP_SOC: f64 = 0.05;
const MIN_DWELL_S: f64 = 600.0;

#[derive(Debug, Error)]
pub enum FleetgenError {
    #[error("invalid profile spec: {0}")]
    InvalidSpec(String),
    #[error("profile spec {path}: {message}")]
    SpecFile { path: String, message: String },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error(transparent)]
    Ingest(#[from] IngestError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChargePolicy {
    /// Home charge after most driving days.
    Nightly,
    /// Home charge once SOC drops below a personal threshold.
    Threshold,
    /// Fast charge below a threshold, occasional overnight AC top-ups.
    Public,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HourComponent {
    pub weight: f64,
    pub mean: f64,
    pub sd: f64,
}

fn default_trips() -> f64 {
    2.5
}
fn default_consumption_log_sd() -> f64 {
    0.35
}
fn default_departure() -> HourComponent {
    HourComponent {
        weight: 1.0,
        mean: 7.5,
        sd: 1.0,
    }
}
fn default_plugin() -> Vec<HourComponent> {
    vec![HourComponent {
        weight: 1.0,
        mean: 18.0,
        sd: 2.0,
    }]
}
fn default_target_sd() -> f64 {
    0.03
}
fn default_driver_soc_sd() -> f64 {
    0.03
}
fn default_driver_consumption_sd() -> f64 {
    0.1
}
fn default_threshold_sd() -> f64 {
    0.0
}
fn default_temperature() -> (f64, f64) {
    (288.0, 301.0)
}
fn default_drive_kw() -> (f64, f64) {
    (8.0, 16.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileSpec {
    pub name: String,
    pub population_share: f64,
    pub driving_days_per_week: f64,
    pub charges_per_week: f64,
    pub home_access: bool,
    pub fast_charge_fraction: f64,
    pub mean_soc_before_charge: f64,
    pub mean_soc_after_charge: f64,
    pub charge_policy: ChargePolicy,
    #[serde(default = "default_trips")]
    pub trips_per_driving_day: f64,
    /// Log-space sd of daily SOC consumption.
    #[serde(default = "default_consumption_log_sd")]
    pub consumption_log_sd: f64,
    #[serde(default = "default_departure")]
    pub departure_hour: HourComponent,
    /// Mixture for the end of the last trip of a driving day.
    #[serde(default = "default_plugin")]
    pub plugin_hour: Vec<HourComponent>,
    #[serde(default = "default_target_sd")]
    pub target_soc_sd: f64,
    /// Per-driver offset sd of target and threshold SOC.
    #[serde(default = "default_driver_soc_sd")]
    pub driver_soc_sd: f64,
    /// Per-driver log-space sd of the consumption scale.
    #[serde(default = "default_driver_consumption_sd")]
    pub driver_consumption_sd: f64,
    /// Day-to-day sd of the charging threshold.
    #[serde(default = "default_threshold_sd")]
    pub threshold_sd: f64,
    /// Uniform range of each driver's constant temperature (K).
    #[serde(default = "default_temperature")]
    pub temperature_k: (f64, f64),
    /// Uniform range of average traction power while driving (kW).
    #[serde(default = "default_drive_kw")]
    pub driving_power_kw: (f64, f64),
}

impl ProfileSpec {
    /// Mean daily SOC consumption implied by the charge statistics.
    pub fn mean_daily_consumption(&self) -> f64 {
        self.charges_per_week * (self.mean_soc_after_charge - self.mean_soc_before_charge)
            / self.driving_days_per_week
    }

    pub fn validate(&self) -> Result<(), FleetgenError> {
        let bad = |m: String| Err(FleetgenError::InvalidSpec(format!("{}: {m}", self.name)));
        let unit = [
            self.population_share,
            self.fast_charge_fraction,
            self.mean_soc_before_charge,
            self.mean_soc_after_charge,
        ];
        if unit.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return bad("shares, fractions and SOC means must be in [0, 1]".into());
        }
        if self.mean_soc_after_charge <= self.mean_soc_before_charge {
            return bad("mean_soc_after_charge must exceed mean_soc_before_charge".into());
        }
        if !(self.driving_days_per_week > 0.0 && self.driving_days_per_week <= 7.0) {
            return bad("driving_days_per_week must be in (0, 7]".into());
        }
        if !(self.charges_per_week > 0.0) {
            return bad("charges_per_week must be positive".into());
        }
        if self.charge_policy == ChargePolicy::Nightly
            && self.charges_per_week > self.driving_days_per_week
        {
            return bad("nightly charging cannot exceed one charge per driving day".into());
        }
        let daily = self.mean_daily_consumption();
        if daily >= self.mean_soc_after_charge - MIN_TRIP_SOC {
            return bad(format!(
                "daily consumption {daily:.3} exceeds what one charge can replace"
            ));
        }
        if !self.home_access && self.charge_policy != ChargePolicy::Public {
            return bad("profiles without home access must use the public policy".into());
        }
        if self.plugin_hour.is_empty() || self.plugin_hour.iter().any(|c| !(c.weight > 0.0 && c.sd >= 0.0)) {
            return bad("plugin_hour needs components with positive weight".into());
        }
        if !(self.trips_per_driving_day >= 1.0) {
            return bad("trips_per_driving_day must be at least 1".into());
        }
        let (t0, t1) = self.temperature_k;
        let (p0, p1) = self.driving_power_kw;
        if !(t0 > 0.0 && t0 <= t1 && p0 > 0.0 && p0 <= p1) {
            return bad("temperature and driving power ranges must be positive and ordered".into());
        }
        let sds = [
            self.consumption_log_sd,
            self.target_soc_sd,
            self.driver_soc_sd,
            self.driver_consumption_sd,
            self.departure_hour.sd,
            self.threshold_sd,
        ];
        if sds.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
            return bad("dispersions must be non-negative".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FleetSpec {
    pub profile: Vec<ProfileSpec>,
}

const TABLE1_DEFAULTS: &str = include_str!("../../../data/profiles/table1_defaults.toml");

impl FleetSpec {
    pub fn table1_defaults() -> Self {
        Self::from_toml_str(TABLE1_DEFAULTS, "table1_defaults").expect("shipped profile spec is valid")
    }

    pub fn from_toml_str(text: &str, source: &str) -> Result<Self, FleetgenError> {
        let spec: FleetSpec = toml::from_str(text).map_err(|e| FleetgenError::SpecFile {
            path: source.to_string(),
            message: e.to_string(),
        })?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn from_path(path: &Path) -> Result<Self, FleetgenError> {
        let name = path.display().to_string();
        let text = std::fs::read_to_string(path).map_err(|e| FleetgenError::SpecFile {
            path: name.clone(),
            message: e.to_string(),
        })?;
        Self::from_toml_str(&text, &name)
    }

    /// `table1_defaults` or a path.
    pub fn resolve(name_or_path: &str) -> Result<Self, FleetgenError> {
        if name_or_path == "table1_defaults" {
            Ok(Self::table1_defaults())
        } else {
            Self::from_path(Path::new(name_or_path))
        }
    }

    pub fn validate(&self) -> Result<(), FleetgenError> {
        if self.profile.is_empty() {
            return Err(FleetgenError::InvalidSpec("no profiles".into()));
        }
        for p in &self.profile {
            p.validate()?;
        }
        let total: f64 = self.profile.iter().map(|p| p.population_share).sum();
        if (total - 1.0).abs() > 1e-6 {
            return Err(FleetgenError::InvalidSpec(format!(
                "population shares sum to {total}, expected 1"
            )));
        }
        Ok(())
    }
}

/// Largest-remainder apportionment of `n` drivers by share.
pub fn allocate_counts(n: usize, shares: &[f64]) -> Vec<usize> {
    let total: f64 = shares.iter().sum();
    let quotas: Vec<f64> = shares.iter().map(|s| s / total * n as f64).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..shares.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().take(n - assigned) {
        counts[i] += 1;
    }
    counts
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratedDriver {
    pub vehicle_id: String,
    pub profile: String,
    pub trips: Vec<TripRecord>,
    pub events: Vec<ChargeEvent>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fleet {
    pub drivers: Vec<GeneratedDriver>,
}

impl Fleet {
    pub fn to_trip_log(&self, utc_offset_minutes: i32) -> String {
        write_trip_log(
            self.drivers
                .iter()
                .map(|d| (d.vehicle_id.as_str(), d.trips.as_slice())),
            utc_offset_minutes,
        )
    }

    /// `vehicle_id,profile` rows.
    pub fn labels_csv(&self) -> String {
        let mut out = String::from("vehicle_id,profile\n");
        for d in &self.drivers {
            out.push_str(&format!("{},{}\n", d.vehicle_id, d.profile));
        }
        out
    }
}

/// Generation settings shared by all drivers of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct GenOptions {
    pub months: u32,
    pub start: i64,
    pub clock: LocalClock,
    pub ingest: IngestConfig,
}

impl Default for GenOptions {
    fn default() -> Self {
        Self {
            months: 4,
            start: DEFAULT_START,
            clock: LocalClock::default(),
            ingest: IngestConfig::default(),
        }
    }
}

fn quantize_soc(soc: f64) -> f64 {
    (soc.clamp(0.0, 1.0) * 1e4).round() / 1e4
}

fn normal(rng: &mut ChaCha8Rng, mean: f64, sd: f64) -> f64 {
    if sd == 0.0 {
        return mean;
    }
    Normal::new(mean, sd).expect("finite normal").sample(rng)
}

fn mixture_hour(rng: &mut ChaCha8Rng, comps: &[HourComponent]) -> f64 {
    let total: f64 = comps.iter().map(|c| c.weight).sum();
    let mut u = rng.random::<f64>() * total;
    for c in comps {
        if u < c.weight {
            return normal(rng, c.mean, c.sd);
        }
        u -= c.weight;
    }
    let last = comps.last().expect("non-empty mixture");
    normal(rng, last.mean, last.sd)
}

struct Driver<'a> {
    spec: &'a ProfileSpec,
    rng: ChaCha8Rng,
    capacity: f64,
    consumption: LogNormal<f64>,
    threshold: f64,
    target: f64,
    temp: f64,
    drive_kw: f64,
}

impl Driver<'_> {
    fn draw_target(&mut self) -> f64 {
        let sd = self.spec.target_soc_sd;
        normal(&mut self.rng, self.target, sd).clamp(0.3, 1.0)
    }

    fn dcfc_gap_s(&mut self, soc_from: f64, soc_to: f64) -> f64 {
        let kw = self.rng.random_range(DCFC_POWER_KW.0..DCFC_POWER_KW.1);
        ((soc_to - soc_from) * self.capacity / kw * SECONDS_PER_HOUR).ceil().max(60.0)
    }
}

/// Simulates one driver for `months` months.
pub fn generate_driver(
    spec: &ProfileSpec,
    seed: u64,
    options: &GenOptions,
) -> Result<(Vec<TripRecord>, Vec<ChargeEvent>), FleetgenError> {
    if options.months == 0 {
        return Err(FleetgenError::InvalidInput("months must be at least 1".into()));
    }
    spec.validate()?;
    options.ingest.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let daily = spec.mean_daily_consumption();
    let scale = normal(&mut rng, 0.0, spec.driver_consumption_sd).exp();
    let mean_c = daily * scale;
    let log_sd = spec.consumption_log_sd;
    let consumption = LogNormal::new(mean_c.ln() - log_sd * log_sd / 2.0, log_sd)
        .map_err(|e| FleetgenError::InvalidSpec(e.to_string()))?;
    let soc_offset = normal(&mut rng, 0.0, spec.driver_soc_sd);
    let target = (spec.mean_soc_after_charge + soc_offset).clamp(0.35, 1.0);
    // A threshold crossed mid-day lands half a day's use below it on average.
    let threshold = (spec.mean_soc_before_charge + soc_offset + daily / 2.0).clamp(0.2, target - 0.05);
    let (t0, t1) = spec.temperature_k;
    let temp = if t1 > t0 { rng.random_range(t0..t1) } else { t0 };
    let temp = ((temp - KELVIN_OFFSET) * 100.0).round() / 100.0 + KELVIN_OFFSET;
    let (k0, k1) = spec.driving_power_kw;
    let drive_kw = if k1 > k0 { rng.random_range(k0..k1) } else { k0 };

    let mut d = Driver {
        spec,
        rng,
        capacity: options.ingest.pack_capacity_kwh,
        consumption,
        threshold,
        target,
        temp,
        drive_kw,
    };

    let days = (f64::from(options.months) * DAYS_PER_MONTH).round() as i64;
    let p_drive = spec.driving_days_per_week / 7.0;
    let extra_trips = Poisson::new((spec.trips_per_driving_day - 1.0).max(1e-9))
        .map_err(|e| FleetgenError::InvalidSpec(e.to_string()))?;
    let p_night = match spec.charge_policy {
        ChargePolicy::Nightly => (spec.charges_per_week / spec.driving_days_per_week).min(1.0),
        ChargePolicy::Public => {
            spec.charges_per_week * (1.0 - spec.fast_charge_fraction) / spec.driving_days_per_week
        }
        ChargePolicy::Threshold => 0.0,
    };
    let ac_kw = options.ingest.ac_sim_power_kw;
    let clock = options.clock;
    let day0 = clock.day_start(options.start as f64);

    let mut trips: Vec<TripRecord> = Vec::new();
    let mut soc = quantize_soc(d.draw_target());
    let mut pending_dcfc = false;
    // Earliest time the next trip may start (after any overnight charge).
    let mut ready_at = day0;

    for day in 0..days {
        if !d.rng.random_bool(p_drive.min(1.0)) {
            continue;
        }
        let midnight = clock.at(day0, 24.0 * day as f64);
        let n_trips = 1 + extra_trips.sample(&mut d.rng).min(5.0) as usize;
        let n_trips = if pending_dcfc { n_trips.max(2) } else { n_trips };

        // Day's consumption split across trips with random weights.
        let total = d.consumption.sample(&mut d.rng).min(0.9);
        let weights: Vec<f64> = (0..n_trips).map(|_| d.rng.random_range(0.5..1.5)).collect();
        let wsum: f64 = weights.iter().sum();
        let shares: Vec<f64> = weights.iter().map(|w| total * w / wsum).collect();
        let durations: Vec<f64> = shares
            .iter()
            .map(|s| ((s * d.capacity / d.drive_kw) * SECONDS_PER_HOUR).max(300.0).round())
            .collect();
        let drive_s: f64 = durations.iter().sum();

        let dep_h = normal(&mut d.rng, spec.departure_hour.mean, spec.departure_hour.sd).clamp(4.5, 12.0);
        let mut t = clock.at(midnight, dep_h).round().max(ready_at.ceil());
        let arrive_h = mixture_hour(&mut d.rng, &spec.plugin_hour).clamp(9.0, 23.75);
        let arrive = clock.at(midnight, arrive_h);

        // Fast-charge stop after the first trip when one is pending.
        let dcfc_plan = if pending_dcfc {
            pending_dcfc = false;
            Some(d.draw_target().min(if spec.home_access { 1.0 } else { spec.mean_soc_after_charge + 0.1 }))
        } else {
            None
        };
        let dcfc_est = if dcfc_plan.is_some() { 0.75 * SECONDS_PER_HOUR } else { 0.0 };
        let free = arrive - t - drive_s - dcfc_est;
        let gaps = n_trips - 1;
        let dwell: Vec<f64> = if gaps == 0 {
            Vec::new()
        } else {
            let ws: Vec<f64> = (0..gaps).map(|_| d.rng.random_range(0.2..1.0)).collect();
            let s: f64 = ws.iter().sum();
            ws.iter()
                .map(|w| (free * w / s).max(MIN_DWELL_S).round())
                .collect()
        };

        for i in 0..n_trips {
            let start = t;
            let end = start + durations[i];
            let soc_end = quantize_soc((soc - shares[i]).max(MIN_TRIP_SOC.min(soc)));
            trips.push(TripRecord {
                start_time: start as i64,
                end_time: end as i64,
                soc_start: soc,
                soc_end,
                mean_temp: d.temp,
            });
            soc = soc_end;
            t = end;
            if i + 1 < n_trips {
                let mut gap = dwell[i];
                if i == 0 {
                    if let Some(goal) = dcfc_plan {
                        let goal = quantize_soc(goal.max(soc + 0.05).min(1.0));
                        gap = d.dcfc_gap_s(soc, goal);
                        soc = goal;
                    }
                }
                t += gap;
            }
        }

        // End-of-day charging decision.
        let below = soc < d.threshold + normal(&mut d.rng, 0.0, spec.threshold_sd);
        let mut charge_to: Option<f64> = None;
        match spec.charge_policy {
            ChargePolicy::Nightly => {
                if d.rng.random_bool(p_night) {
                    if d.rng.random_bool(spec.fast_charge_fraction) {
                        pending_dcfc = true;
                    } else {
                        charge_to = Some(d.draw_target());
                    }
                }
            }
            ChargePolicy::Threshold => {
                if below {
                    if d.rng.random_bool(spec.fast_charge_fraction) {
                        pending_dcfc = true;
                    } else {
                        charge_to = Some(d.draw_target());
                    }
                }
            }
            ChargePolicy::Public => {
                if d.rng.random_bool(p_night.clamp(0.0, 1.0)) {
                    charge_to = Some(d.draw_target());
                } else if below {
                    pending_dcfc = true;
                }
            }
        }
        if soc < EMERGENCY_SOC && charge_to.is_none() {
            if spec.home_access {
                charge_to = Some(d.draw_target());
                pending_dcfc = false;
            } else {
                pending_dcfc = true;
            }
        }
        ready_at = t + 60.0;
        if let Some(goal) = charge_to {
            let goal = quantize_soc(goal);
            if goal > soc {
                let hours = (goal - soc) * d.capacity / ac_kw;
                ready_at = t + hours * SECONDS_PER_HOUR + 300.0;
                soc = goal;
            }
        }
    }
    if trips.is_empty() {
        return Err(FleetgenError::InvalidSpec(format!(
            "{}: driver produced no trips",
            spec.name
        )));
    }
    let det = detect_charging_events(&trips, &options.ingest)?;
    if !det.warnings.is_empty() {
        return Err(FleetgenError::InvalidSpec(format!(
            "{}: generated {} infeasible charge(s)",
            spec.name,
            det.warnings.len()
        )));
    }
    Ok((trips, det.events))
}

/// Generates `n` drivers with profile counts by largest remainder and one
/// random stream per driver derived from `seed`.
pub fn generate_fleet(
    n: usize,
    spec: &FleetSpec,
    seed: u64,
    options: &GenOptions,
) -> Result<Fleet, FleetgenError> {
    spec.validate()?;
    if n < spec.profile.len() {
        return Err(FleetgenError::InvalidInput(format!(
            "need at least {} drivers, got {n}",
            spec.profile.len()
        )));
    }
    let shares: Vec<f64> = spec.profile.iter().map(|p| p.population_share).collect();
    let counts = allocate_counts(n, &shares);
    let width = n.to_string().len().max(4);
    let jobs: Vec<(usize, &ProfileSpec)> = spec
        .profile
        .iter()
        .zip(&counts)
        .flat_map(|(p, &c)| std::iter::repeat(p).take(c))
        .enumerate()
        .collect();
    let drivers = jobs
        .par_iter()
        .map(|&(i, p)| {
            let (trips, events) = generate_driver(p, driver_seed(seed, i), options)?;
            Ok(GeneratedDriver {
                vehicle_id: format!("v{:0width$}", i + 1),
                profile: p.name.clone(),
                trips,
                events,
            })
        })
        .collect::<Result<Vec<_>, FleetgenError>>()?;
    Ok(Fleet { drivers })
}

/// Per-driver seed: first output of the master stream `i`.
pub fn driver_seed(seed: u64, i: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(i as u64);
    rng.random()
}
