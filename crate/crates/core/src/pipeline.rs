//! End-to-end run: load or generate trips, cluster drivers, simulate baseline
//! and V2G degradation for each design, and compare.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::clock::LocalClock;
use crate::degradation::{simulate, BatteryParams, Checkpoint, DegradationError, SimOptions};
use crate::economics::{annual_dispatch, cluster_summary, net_revenue, EconomicsError, Tariff};
use crate::fleetgen::{generate_fleet, FleetSpec, FleetgenError, GenOptions, DEFAULT_START};
use crate::ingest::{
    build_baseline_timeline, detect_charging_events, extend_cyclic, parse_trip_log, IngestConfig,
    IngestError, IngestWarning,
};
use crate::profiles::{cluster_vehicles, extract_features, ClusteringConfig, ClusteringOutcome, FeatureVector, ProfilesError};
use crate::scheduler::{apply_strategy, SchedulerError, V2GConfig};
use crate::stats::{kruskal_wallis, mann_whitney_u, ols_slope, wilcoxon_signed_rank, Alternative, StatsError};
use crate::timeline::{ChargeEvent, TripRecord, SECONDS_PER_YEAR};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("vehicle {vehicle}: {source}")]
    Vehicle {
        vehicle: String,
        #[source]
        source: Box<PipelineError>,
    },
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Degradation(#[from] DegradationError),
    #[error(transparent)]
    Fleetgen(#[from] FleetgenError),
    #[error(transparent)]
    Profiles(#[from] ProfilesError),
    #[error(transparent)]
    Scheduler(#[from] SchedulerError),
    #[error(transparent)]
    Economics(#[from] EconomicsError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error("{failed} of {total} charging events were infeasible, above tolerance {tolerance}")]
    InfeasibleEvents {
        failed: usize,
        total: usize,
        tolerance: f64,
    },
}

impl PipelineError {
    /// 2 for infeasible-plan overflow, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::InfeasibleEvents { .. } => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum InputSource {
    TripLog {
        path: PathBuf,
        /// Optional `vehicle_id,profile` ground truth.
        #[serde(default)]
        labels: Option<PathBuf>,
    },
    Fleetgen {
        #[serde(default = "default_spec")]
        spec: String,
        #[serde(default = "default_n")]
        n: usize,
        #[serde(default = "default_months")]
        months: u32,
    },
}

fn default_spec() -> String {
    "table1_defaults".into()
}
fn default_n() -> usize {
    200
}
fn default_months() -> u32 {
    4
}

impl Default for InputSource {
    fn default() -> Self {
        InputSource::Fleetgen {
            spec: default_spec(),
            n: default_n(),
            months: default_months(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub input: InputSource,
    pub seed: u64,
    /// Checkpoint year used for comparisons; the last checkpoint if the
    /// horizon is shorter.
    pub report_year: f64,
    pub efc_halving: bool,
    pub batteries: Vec<String>,
    /// Worker threads; 0 uses all cores.
    pub workers: usize,
    pub output_dir: PathBuf,
    /// Largest tolerated share of infeasible charging events.
    pub infeasible_tolerance: f64,
    pub utc_offset_minutes: i32,
    pub ingest: IngestConfig,
    pub v2g: V2GConfig,
    pub tariff: Tariff,
    pub clustering: ClusteringConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            input: InputSource::default(),
            seed: 42,
            report_year: 10.0,
            efc_halving: false,
            batteries: crate::degradation::PUBLISHED_DESIGNS.iter().map(|s| s.to_string()).collect(),
            workers: 0,
            output_dir: PathBuf::from("out"),
            infeasible_tolerance: 0.05,
            utc_offset_minutes: -480,
            ingest: IngestConfig::default(),
            v2g: V2GConfig::default(),
            tariff: Tariff::default(),
            clustering: ClusteringConfig::default(),
        }
    }
}

fn resolve_against(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, PipelineError> {
        toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))
    }

    /// Reads a config file; relative paths inside it resolve against its directory.
    pub fn from_path(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(|source| PipelineError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut cfg = Self::from_toml_str(&text)
            .map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        self.output_dir = resolve_against(base, &self.output_dir);
        match &mut self.input {
            InputSource::TripLog { path, labels } => {
                *path = resolve_against(base, path);
                if let Some(l) = labels {
                    *l = resolve_against(base, l);
                }
            }
            InputSource::Fleetgen { spec, .. } => {
                if spec != "table1_defaults" {
                    *spec = resolve_against(base, Path::new(spec)).display().to_string();
                }
            }
        }
        for b in &mut self.batteries {
            if BatteryParams::builtin(b).is_none() {
                *b = resolve_against(base, Path::new(b)).display().to_string();
            }
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        self.ingest.validate()?;
        self.v2g.validate()?;
        self.tariff.validate()?;
        if self.batteries.is_empty() {
            return Err(PipelineError::Config("no battery designs selected".into()));
        }
        if !(0.0..=1.0).contains(&self.infeasible_tolerance) {
            return Err(PipelineError::Config("infeasible_tolerance must be in [0, 1]".into()));
        }
        if !(self.report_year > 0.0) {
            return Err(PipelineError::Config("report_year must be positive".into()));
        }
        if let InputSource::TripLog { path, labels } = &self.input {
            for p in std::iter::once(path).chain(labels) {
                if !p.exists() {
                    return Err(PipelineError::Config(format!("input file {} does not exist", p.display())));
                }
            }
        }
        Ok(())
    }

    pub fn clock(&self) -> LocalClock {
        LocalClock::new(self.utc_offset_minutes)
    }

    pub fn sim_options(&self) -> SimOptions {
        SimOptions {
            efc_halving: self.efc_halving,
        }
    }

    pub fn load_batteries(&self) -> Result<Vec<BatteryParams>, PipelineError> {
        self.batteries
            .iter()
            .map(|b| BatteryParams::resolve(b).map_err(PipelineError::from))
            .collect()
    }

    /// SHA-256 of the canonical serialized config, leaving out where outputs
    /// go and how many threads run.
    pub fn digest(&self) -> String {
        let canonical = RunConfig {
            output_dir: PathBuf::new(),
            workers: 0,
            ..self.clone()
        };
        let text = toml::to_string(&canonical).unwrap_or_default();
        hex::encode(Sha256::digest(text.as_bytes()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VehicleData {
    pub vehicle_id: String,
    pub label: Option<String>,
    pub trips: Vec<TripRecord>,
    pub events: Vec<ChargeEvent>,
    pub warnings: Vec<IngestWarning>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub vehicles: Vec<VehicleData>,
    /// Trip log text when the data was generated.
    pub generated_log: Option<String>,
}

fn read(path: &Path) -> Result<String, PipelineError> {
    std::fs::read_to_string(path).map_err(|source| PipelineError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn parse_labels(text: &str) -> BTreeMap<String, String> {
    text.lines()
        .skip(1)
        .filter_map(|l| l.split_once(','))
        .map(|(a, b)| (a.trim().to_string(), b.trim().to_string()))
        .collect()
}

/// Loads or generates the fleet, sorted by vehicle id.
pub fn load_dataset(config: &RunConfig) -> Result<Dataset, PipelineError> {
    match &config.input {
        InputSource::Fleetgen { spec, n, months } => {
            let spec = FleetSpec::resolve(spec)?;
            let options = GenOptions {
                months: *months,
                start: DEFAULT_START,
                clock: config.clock(),
                ingest: config.ingest.clone(),
            };
            let fleet = generate_fleet(*n, &spec, config.seed, &options)?;
            let log = fleet.to_trip_log(config.utc_offset_minutes);
            let mut vehicles: Vec<VehicleData> = fleet
                .drivers
                .into_iter()
                .map(|d| VehicleData {
                    vehicle_id: d.vehicle_id,
                    label: Some(d.profile),
                    trips: d.trips,
                    events: d.events,
                    warnings: Vec::new(),
                })
                .collect();
            vehicles.sort_by(|a, b| a.vehicle_id.cmp(&b.vehicle_id));
            Ok(Dataset {
                vehicles,
                generated_log: Some(log),
            })
        }
        InputSource::TripLog { path, labels } => {
            let text = read(path)?;
            let trips = parse_trip_log(text.as_bytes()).map_err(|e| match e {
                IngestError::Parse { line, message } => IngestError::Parse {
                    line,
                    message: format!("{}: {message}", path.display()),
                },
                other => other,
            })?;
            let labels = match labels {
                Some(p) => parse_labels(&read(p)?),
                None => BTreeMap::new(),
            };
            let vehicles = trips
                .into_iter()
                .map(|(id, trips)| {
                    let det = detect_charging_events(&trips, &config.ingest)?;
                    Ok(VehicleData {
                        label: labels.get(&id).cloned(),
                        vehicle_id: id,
                        trips,
                        events: det.events,
                        warnings: det.warnings,
                    })
                })
                .collect::<Result<Vec<_>, PipelineError>>()?;
            Ok(Dataset {
                vehicles,
                generated_log: None,
            })
        }
    }
}

fn wrap<T>(vehicle: &str, r: Result<T, impl Into<PipelineError>>) -> Result<T, PipelineError> {
    r.map_err(|e| PipelineError::Vehicle {
        vehicle: vehicle.to_string(),
        source: Box::new(e.into()),
    })
}

/// Behavioral features for every vehicle.
pub fn features(dataset: &Dataset, config: &RunConfig) -> Result<Vec<FeatureVector>, PipelineError> {
    let clock = config.clock();
    dataset
        .vehicles
        .par_iter()
        .map(|v| {
            let tl = wrap(&v.vehicle_id, build_baseline_timeline(&v.vehicle_id, &v.trips, &v.events, &config.ingest))?;
            wrap(
                &v.vehicle_id,
                extract_features(&tl, &v.events, &v.trips, config.ingest.pack_capacity_kwh, &clock),
            )
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Clustering {
    pub outcome: ClusteringOutcome,
    /// Cluster name per vehicle, aligned with the dataset order.
    pub names: Vec<String>,
}

/// Clusters vehicles and names clusters by majority ground-truth label when
/// labels are available.
pub fn cluster(dataset: &Dataset, feats: &[FeatureVector], config: &RunConfig) -> Result<Clustering, PipelineError> {
    let outcome = cluster_vehicles(feats, &config.clustering, config.seed)?;
    let k = outcome.model.k;
    let mut tallies: Vec<BTreeMap<&str, usize>> = vec![BTreeMap::new(); k];
    for (v, &a) in dataset.vehicles.iter().zip(&outcome.model.assignments) {
        if let Some(l) = &v.label {
            *tallies[a].entry(l.as_str()).or_default() += 1;
        }
    }
    let mut used: BTreeMap<String, usize> = BTreeMap::new();
    let cluster_names: Vec<String> = tallies
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let base = t
                .iter()
                .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
                .map(|(l, _)| l.to_string())
                .unwrap_or_else(|| format!("cluster {}", i + 1));
            let seen = used.entry(base.clone()).or_default();
            *seen += 1;
            if *seen > 1 {
                format!("{base} #{seen}")
            } else {
                base
            }
        })
        .collect();
    let names = outcome
        .model
        .assignments
        .iter()
        .map(|&a| cluster_names[a].clone())
        .collect();
    Ok(Clustering { outcome, names })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignOutcome {
    pub design: String,
    pub baseline: Vec<Checkpoint>,
    pub v2g: Vec<Checkpoint>,
    pub baseline_soc_avg: f64,
    pub v2g_soc_avg: f64,
    pub t_avg_k: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleOutcome {
    pub vehicle_id: String,
    pub events: usize,
    pub eligible_events: usize,
    pub failed_events: usize,
    pub infeasible_ingest_events: usize,
    pub dispatch_kwh_per_year: f64,
    pub revenue_per_year: f64,
    pub designs: Vec<DesignOutcome>,
}

fn report_checkpoint(cps: &[Checkpoint], year: f64) -> &Checkpoint {
    cps.iter()
        .find(|c| (c.years - year).abs() < 1e-9)
        .unwrap_or_else(|| cps.last().expect("checkpoints"))
}

impl DesignOutcome {
    pub fn baseline_at(&self, year: f64) -> &Checkpoint {
        report_checkpoint(&self.baseline, year)
    }

    pub fn v2g_at(&self, year: f64) -> &Checkpoint {
        report_checkpoint(&self.v2g, year)
    }

    /// Capacity change from V2G (positive means V2G retained more capacity),
    /// split as (total, calendar, cycle) with total = calendar + cycle.
    pub fn delta_capacity(&self, year: f64) -> (f64, f64, f64) {
        let b = self.baseline_at(year);
        let v = self.v2g_at(year);
        let cal = b.q_loss_cal - v.q_loss_cal;
        let cyc = b.q_loss_cyc - v.q_loss_cyc;
        (cal + cyc, cal, cyc)
    }
}

/// Baseline and V2G scenarios for one vehicle across the given designs.
pub fn run_vehicle(
    v: &VehicleData,
    designs: &[BatteryParams],
    config: &RunConfig,
) -> Result<VehicleOutcome, PipelineError> {
    let clock = config.clock();
    let horizon = config.ingest.horizon_years;
    let base = build_baseline_timeline(&v.vehicle_id, &v.trips, &v.events, &config.ingest)?;
    let outcome = apply_strategy(&v.vehicle_id, &v.trips, &v.events, &config.ingest, &config.v2g, &clock)?;
    let base_ext = extend_cyclic(&base, horizon)?;
    drop(base);
    let v2g_ext = extend_cyclic(&outcome.timeline, horizon)?;
    let n_tiles = crate::ingest::tiles_for_horizon(outcome.timeline.span(), horizon * SECONDS_PER_YEAR);
    let per_year = annual_dispatch(outcome.dispatched_kwh * n_tiles as f64, v2g_ext.span() / SECONDS_PER_YEAR)?;
    let options = config.sim_options();
    let designs = designs
        .iter()
        .map(|p| {
            let b = simulate(p, &base_ext, &options)?;
            let s = simulate(p, &v2g_ext, &options)?;
            Ok(DesignOutcome {
                design: p.design_name.clone(),
                baseline: b.checkpoints,
                v2g: s.checkpoints,
                baseline_soc_avg: b.soc_avg,
                v2g_soc_avg: s.soc_avg,
                t_avg_k: b.t_avg_k,
            })
        })
        .collect::<Result<Vec<_>, PipelineError>>()?;
    Ok(VehicleOutcome {
        vehicle_id: v.vehicle_id.clone(),
        events: v.events.len(),
        eligible_events: outcome.eligible_events(),
        failed_events: outcome.failed_events(),
        infeasible_ingest_events: v.warnings.len(),
        dispatch_kwh_per_year: per_year,
        revenue_per_year: net_revenue(per_year, &config.tariff)?,
        designs,
    })
}

/// Runs every vehicle in parallel; output order follows the dataset.
pub fn run_fleet(dataset: &Dataset, config: &RunConfig) -> Result<Vec<VehicleOutcome>, PipelineError> {
    let designs = config.load_batteries()?;
    dataset
        .vehicles
        .par_iter()
        .map(|v| wrap(&v.vehicle_id, run_vehicle(v, &designs, config)))
        .collect()
}

/// Checks the share of infeasible events against the configured tolerance.
pub fn check_infeasible(outcomes: &[VehicleOutcome], config: &RunConfig) -> Result<(), PipelineError> {
    let failed: usize = outcomes
        .iter()
        .map(|o| o.failed_events + o.infeasible_ingest_events)
        .sum();
    let total: usize = outcomes
        .iter()
        .map(|o| o.events + o.infeasible_ingest_events)
        .sum();
    if total > 0 && failed as f64 / total as f64 > config.infeasible_tolerance {
        return Err(PipelineError::InfeasibleEvents {
            failed,
            total,
            tolerance: config.infeasible_tolerance,
        });
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub cluster: String,
    pub design: String,
    pub metric: String,
    pub mean: f64,
    pub ci: Option<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatRow {
    pub comparison: String,
    pub statistic: f64,
    pub p_value: f64,
    pub n1: usize,
    pub n2: usize,
    pub alternative: Alternative,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionRow {
    pub design: String,
    pub cluster: String,
    pub component: String,
    pub slope: f64,
    pub intercept: f64,
    pub slope_se: f64,
    pub t_statistic: f64,
    pub p_value: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub summary: Vec<SummaryRow>,
    pub stats: Vec<StatRow>,
    pub regressions: Vec<RegressionRow>,
}

fn group(names: &[String], values: impl Iterator<Item = f64>) -> BTreeMap<String, Vec<f64>> {
    let mut m: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for (n, v) in names.iter().zip(values) {
        m.entry(n.clone()).or_default().push(v);
    }
    m
}

/// Per-cluster summaries, rank tests and dispatch regressions.
pub fn compare(
    outcomes: &[VehicleOutcome],
    names: &[String],
    config: &RunConfig,
) -> Result<Comparison, PipelineError> {
    let year = config.report_year;
    let mut summary = Vec::new();
    let mut push_summary = |design: &str, metric: &str, groups: BTreeMap<String, Vec<f64>>, seed: u64| -> Result<(), PipelineError> {
        for (cluster, s) in cluster_summary(&groups, seed)? {
            summary.push(SummaryRow {
                cluster,
                design: design.to_string(),
                metric: metric.to_string(),
                mean: s.mean,
                ci: s.ci,
            });
        }
        Ok(())
    };
    let mut seed = config.seed;
    let mut next_seed = || {
        seed = seed.wrapping_add(1_000);
        seed
    };
    push_summary("-", "dispatch_kwh_per_year", group(names, outcomes.iter().map(|o| o.dispatch_kwh_per_year)), next_seed())?;
    push_summary("-", "revenue_usd_per_year", group(names, outcomes.iter().map(|o| o.revenue_per_year)), next_seed())?;

    let mut stats = Vec::new();
    let mut regressions = Vec::new();
    let n_designs = outcomes.first().map_or(0, |o| o.designs.len());
    for d in 0..n_designs {
        let design = outcomes[0].designs[d].design.clone();
        let at = |f: &dyn Fn(&DesignOutcome) -> f64| -> Vec<f64> { outcomes.iter().map(|o| f(&o.designs[d])).collect() };
        let base_total = at(&|x| x.baseline_at(year).q_loss_total);
        let base_cal = at(&|x| x.baseline_at(year).q_loss_cal);
        let base_cyc = at(&|x| x.baseline_at(year).q_loss_cyc);
        let cal_frac = at(&|x| x.baseline_at(year).calendar_fraction());
        let v2g_total = at(&|x| x.v2g_at(year).q_loss_total);
        let deltas: Vec<(f64, f64, f64)> = outcomes.iter().map(|o| o.designs[d].delta_capacity(year)).collect();
        let metrics: [(&str, Vec<f64>); 8] = [
            ("capacity_loss_total", base_total.clone()),
            ("capacity_loss_calendar", base_cal),
            ("capacity_loss_cycle", base_cyc),
            ("calendar_fraction", cal_frac.clone()),
            ("v2g_capacity_loss_total", v2g_total),
            ("delta_capacity_total", deltas.iter().map(|x| x.0).collect()),
            ("delta_capacity_calendar", deltas.iter().map(|x| x.1).collect()),
            ("delta_capacity_cycle", deltas.iter().map(|x| x.2).collect()),
        ];
        for (metric, values) in &metrics {
            push_summary(&design, metric, group(names, values.iter().copied()), next_seed())?;
        }

        match wilcoxon_signed_rank(&cal_frac, 0.5, Alternative::TwoSided) {
            Ok(r) => stats.push(StatRow {
                comparison: format!("{design}: calendar fraction vs 0.5"),
                statistic: r.statistic,
                p_value: r.p_value,
                n1: r.n1,
                n2: r.n2,
                alternative: r.alternative,
            }),
            Err(e) => log::warn!("{design}: calendar-fraction test skipped: {e}"),
        }
        let groups = group(names, base_total.iter().copied());
        let slices: Vec<&[f64]> = groups.values().map(|v| v.as_slice()).collect();
        if slices.len() >= 2 {
            match kruskal_wallis(&slices) {
                Ok(r) => stats.push(StatRow {
                    comparison: format!("{design}: capacity loss across clusters"),
                    statistic: r.statistic,
                    p_value: r.p_value,
                    n1: r.n1,
                    n2: r.n2,
                    alternative: r.alternative,
                }),
                Err(e) => log::warn!("{design}: Kruskal-Wallis skipped: {e}"),
            }
            // The highest-loss cluster against each other cluster.
            let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
            let (focal, fv) = groups
                .iter()
                .max_by(|a, b| mean(a.1).total_cmp(&mean(b.1)))
                .expect("non-empty groups");
            for (other, ov) in &groups {
                if other == focal {
                    continue;
                }
                let r = mann_whitney_u(fv, ov, Alternative::Greater)?;
                stats.push(StatRow {
                    comparison: format!("{design}: {focal} > {other}"),
                    statistic: r.statistic,
                    p_value: r.p_value,
                    n1: r.n1,
                    n2: r.n2,
                    alternative: r.alternative,
                });
            }
        }

        let mut by_cluster: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for (i, n) in names.iter().enumerate() {
            by_cluster.entry(n.as_str()).or_default().push(i);
        }
        for (cluster, idx) in &by_cluster {
            let x: Vec<f64> = idx.iter().map(|&i| outcomes[i].dispatch_kwh_per_year).collect();
            for (component, pick) in [("total", 0usize), ("calendar", 1), ("cycle", 2)] {
                let y: Vec<f64> = idx
                    .iter()
                    .map(|&i| {
                        let t = deltas[i];
                        [t.0, t.1, t.2][pick]
                    })
                    .collect();
                match ols_slope(&x, &y) {
                    Ok(r) => regressions.push(RegressionRow {
                        design: design.clone(),
                        cluster: cluster.to_string(),
                        component: component.to_string(),
                        slope: r.slope,
                        intercept: r.intercept,
                        slope_se: r.slope_se,
                        t_statistic: r.t_statistic,
                        p_value: r.p_value,
                        n: r.n,
                    }),
                    Err(e) => log::warn!("{design}/{cluster}/{component}: regression skipped: {e}"),
                }
            }
        }
    }
    Ok(Comparison {
        summary,
        stats,
        regressions,
    })
}

// --- artifacts ------------------------------------------------------------

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

fn quote(s: &str) -> String {
    if s.contains(',') || s.contains('"') {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn events_csv(dataset: &Dataset) -> String {
    let mut out = String::from("vehicle_id,plugin_time,depart_time,soc_start,soc_target,kind,sim_power_kw,avg_power_kw\n");
    for v in &dataset.vehicles {
        for e in &v.events {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                v.vehicle_id,
                e.plugin_time,
                e.depart_time,
                e.soc_start,
                e.soc_target,
                e.kind.as_str(),
                e.sim_power_kw,
                e.avg_power_kw
            ));
        }
    }
    out
}

pub fn warnings_csv(dataset: &Dataset) -> String {
    let mut out = String::from("vehicle_id,warning\n");
    for v in &dataset.vehicles {
        for w in &v.warnings {
            out.push_str(&format!("{},{}\n", v.vehicle_id, quote(&w.to_string())));
        }
    }
    out
}

pub fn assignments_csv(dataset: &Dataset, names: &[String]) -> String {
    let mut out = String::from("vehicle_id,cluster\n");
    for (v, n) in dataset.vehicles.iter().zip(names) {
        out.push_str(&format!("{},{}\n", v.vehicle_id, quote(n)));
    }
    out
}

pub fn wcss_csv(c: &ClusteringOutcome) -> String {
    let mut out = String::from("k,wcss\n");
    for (i, w) in c.wcss_by_k.iter().enumerate() {
        out.push_str(&format!("{},{}\n", i + 1, w));
    }
    out
}

pub fn degradation_csv(outcomes: &[VehicleOutcome], names: &[String], v2g: bool) -> String {
    let mut out = String::from("vehicle_id,cluster,design,years,efc,q_loss_cal,q_loss_cyc,q_loss_total,soc_avg,t_avg_k\n");
    for (o, n) in outcomes.iter().zip(names) {
        for d in &o.designs {
            let (cps, soc) = if v2g { (&d.v2g, d.v2g_soc_avg) } else { (&d.baseline, d.baseline_soc_avg) };
            for c in cps {
                out.push_str(&format!(
                    "{},{},{},{},{},{},{},{},{},{}\n",
                    o.vehicle_id,
                    quote(n),
                    quote(&d.design),
                    c.years,
                    c.efc,
                    c.q_loss_cal,
                    c.q_loss_cyc,
                    c.q_loss_total,
                    soc,
                    d.t_avg_k
                ));
            }
        }
    }
    out
}

pub fn dispatch_csv(outcomes: &[VehicleOutcome], names: &[String]) -> String {
    let mut out = String::from("vehicle_id,cluster,events,eligible_events,failed_events,dispatch_kwh_per_year,revenue_usd_per_year\n");
    for (o, n) in outcomes.iter().zip(names) {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            o.vehicle_id,
            quote(n),
            o.events,
            o.eligible_events,
            o.failed_events,
            o.dispatch_kwh_per_year,
            o.revenue_per_year
        ));
    }
    out
}

pub fn deltas_csv(outcomes: &[VehicleOutcome], names: &[String], year: f64) -> String {
    let mut out = String::from("vehicle_id,cluster,design,dispatch_kwh_per_year,delta_total,delta_calendar,delta_cycle\n");
    for (o, n) in outcomes.iter().zip(names) {
        for d in &o.designs {
            let (t, c, y) = d.delta_capacity(year);
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                o.vehicle_id,
                quote(n),
                quote(&d.design),
                o.dispatch_kwh_per_year,
                t,
                c,
                y
            ));
        }
    }
    out
}

pub fn summary_csv(rows: &[SummaryRow]) -> String {
    let mut out = String::from("cluster,design,metric,mean,ci_lo,ci_hi\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            quote(&r.cluster),
            quote(&r.design),
            r.metric,
            r.mean,
            fmt_opt(r.ci.map(|c| c.0)),
            fmt_opt(r.ci.map(|c| c.1))
        ));
    }
    out
}

pub fn stats_csv(rows: &[StatRow]) -> String {
    let mut out = String::from("comparison,statistic,p_value,n1,n2,alternative\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            quote(&r.comparison),
            r.statistic,
            r.p_value,
            r.n1,
            r.n2,
            r.alternative.as_str()
        ));
    }
    out
}

pub fn regressions_csv(rows: &[RegressionRow]) -> String {
    let mut out = String::from("design,cluster,component,slope,intercept,slope_se,t_statistic,p_value,n\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            quote(&r.design),
            quote(&r.cluster),
            r.component,
            r.slope,
            r.intercept,
            r.slope_se,
            r.t_statistic,
            r.p_value,
            r.n
        ));
    }
    out
}

/// Pipeline stages, each including everything before it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    GenFleet,
    Ingest,
    Cluster,
    Simulate,
    V2g,
    Compare,
    Report,
}

impl Stage {
    pub fn name(&self) -> &'static str {
        match self {
            Stage::GenFleet => "gen-fleet",
            Stage::Ingest => "ingest",
            Stage::Cluster => "cluster",
            Stage::Simulate => "simulate",
            Stage::V2g => "v2g",
            Stage::Compare => "compare",
            Stage::Report => "report",
        }
    }
}

/// Artifacts keyed by file name, in write order.
pub type Artifacts = Vec<(String, String)>;

fn render_report(comparison: &Comparison, config: &RunConfig) -> String {
    let mut out = String::new();
    let year = config.report_year.min(config.ingest.horizon_years);
    out.push_str(&format!("report year: {year}\n\n"));
    out.push_str("mean annual dispatch by cluster (kWh/yr):\n");
    for r in comparison.summary.iter().filter(|r| r.metric == "dispatch_kwh_per_year") {
        out.push_str(&format!("  {:<24} {:>10.1}\n", r.cluster, r.mean));
    }
    out.push_str("\nmean baseline capacity loss and calendar share by design and cluster:\n");
    for r in comparison.summary.iter().filter(|r| r.metric == "capacity_loss_total") {
        let frac = comparison
            .summary
            .iter()
            .find(|s| s.metric == "calendar_fraction" && s.design == r.design && s.cluster == r.cluster)
            .map_or(f64::NAN, |s| s.mean);
        out.push_str(&format!(
            "  {:<10} {:<24} loss {:>7.4}  calendar share {:>6.3}\n",
            r.design, r.cluster, r.mean, frac
        ));
    }
    out.push_str("\nmean capacity change from V2G (positive = retained):\n");
    for r in comparison.summary.iter().filter(|r| r.metric == "delta_capacity_total") {
        out.push_str(&format!("  {:<10} {:<24} {:>+10.6}\n", r.design, r.cluster, r.mean));
    }
    out
}

/// Runs the pipeline up to `stage` and returns its artifacts plus the
/// manifest. `Err(InfeasibleEvents)` is returned only after the artifacts
/// are complete, through the second element.
pub fn run_stage(stage: Stage, config: &RunConfig) -> Result<(Artifacts, Option<PipelineError>), PipelineError> {
    config.validate()?;
    let mut art: Artifacts = Vec::new();
    let dataset = load_dataset(config)?;
    if let Some(log) = &dataset.generated_log {
        art.push(("trip_log.csv".into(), log.clone()));
        let mut labels = String::from("vehicle_id,profile\n");
        for v in &dataset.vehicles {
            labels.push_str(&format!("{},{}\n", v.vehicle_id, v.label.as_deref().unwrap_or("")));
        }
        art.push(("labels.csv".into(), labels));
    }
    let mut deferred = None;
    if stage >= Stage::Ingest {
        art.push(("events.csv".into(), events_csv(&dataset)));
        art.push(("warnings.csv".into(), warnings_csv(&dataset)));
    }
    if stage >= Stage::Cluster {
        let feats = features(&dataset, config)?;
        art.push(("features.csv".into(), crate::profiles::features_to_csv(&feats)));
        let clustering = cluster(&dataset, &feats, config)?;
        art.push(("assignments.csv".into(), assignments_csv(&dataset, &clustering.names)));
        art.push(("wcss.csv".into(), wcss_csv(&clustering.outcome)));
        art.push((
            "retained_features.txt".into(),
            clustering.outcome.model.retained.join("\n") + "\n",
        ));
        if stage >= Stage::Simulate {
            let outcomes = run_fleet(&dataset, config)?;
            let names = &clustering.names;
            art.push(("degradation_baseline.csv".into(), degradation_csv(&outcomes, names, false)));
            if stage >= Stage::V2g {
                art.push(("degradation_v2g.csv".into(), degradation_csv(&outcomes, names, true)));
                art.push(("dispatch.csv".into(), dispatch_csv(&outcomes, names)));
                deferred = check_infeasible(&outcomes, config).err();
            }
            if stage >= Stage::Compare {
                art.push(("deltas.csv".into(), deltas_csv(&outcomes, names, config.report_year)));
                let cmp = compare(&outcomes, names, config)?;
                art.push(("summary.csv".into(), summary_csv(&cmp.summary)));
                art.push(("stats.csv".into(), stats_csv(&cmp.stats)));
                art.push(("regressions.csv".into(), regressions_csv(&cmp.regressions)));
                if stage >= Stage::Report {
                    art.push(("report.txt".into(), render_report(&cmp, config)));
                }
            }
        }
    }
    art.push(("manifest.json".into(), manifest(stage, config, &art)));
    Ok((art, deferred))
}

fn manifest(stage: Stage, config: &RunConfig, art: &Artifacts) -> String {
    let files: BTreeMap<&str, String> = art
        .iter()
        .map(|(n, c)| (n.as_str(), hex::encode(Sha256::digest(c.as_bytes()))))
        .collect();
    let value = serde_json::json!({
        "tool": "v2gsim",
        "version": env!("CARGO_PKG_VERSION"),
        "subcommand": stage.name(),
        "config_sha256": config.digest(),
        "seed": config.seed,
        "batteries": config.batteries,
        "artifacts": files,
    });
    serde_json::to_string_pretty(&value).expect("manifest serializes") + "\n"
}

/// Writes artifacts under `dir`, creating it if needed.
pub fn write_artifacts(dir: &Path, art: &Artifacts) -> Result<(), PipelineError> {
    std::fs::create_dir_all(dir).map_err(|source| PipelineError::Io {
        path: dir.display().to_string(),
        source,
    })?;
    for (name, content) in art {
        let p = dir.join(name);
        std::fs::write(&p, content).map_err(|source| PipelineError::Io {
            path: p.display().to_string(),
            source,
        })?;
    }
    Ok(())
}

/// Runs `f` on a pool with `workers` threads (0 = all cores).
pub fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> Result<T, PipelineError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| PipelineError::Config(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_round_trips() {
        let cfg = RunConfig::default();
        let text = toml::to_string(&cfg).unwrap();
        assert_eq!(RunConfig::from_toml_str(&text).unwrap(), cfg);
        assert_eq!(cfg.digest(), RunConfig::default().digest());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::from_toml_str("bogus = 1").is_err());
    }

    #[test]
    fn missing_battery_is_a_config_error() {
        let cfg = RunConfig {
            batteries: vec!["/missing/cell.toml".into()],
            ..RunConfig::default()
        };
        let err = cfg.load_batteries().unwrap_err();
        assert!(err.to_string().contains("/missing/cell.toml"));
        assert_eq!(err.exit_code(), 1);
    }
}
