//! Semi-empirical capacity fade: closed-form calendar aging on time-averaged
//! temperature and SOC, incremental cycle aging along the usage timeline.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::timeline::{
    timeline_mean, TimelineError, UsageTimeline, SECONDS_PER_DAY, SECONDS_PER_HOUR,
    SECONDS_PER_YEAR,
};

#[derive(Debug, Error)]
pub enum DegradationError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("battery parameters {source_name}: {message}")]
    Params { source_name: String, message: String },
    #[error(transparent)]
    Timeline(#[from] TimelineError),
}

/// Time unit in which `t^p4` was fitted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TimeUnit {
    Seconds,
    Hours,
    Days,
    Years,
}

impl TimeUnit {
    pub fn seconds(self) -> f64 {
        match self {
            TimeUnit::Seconds => 1.0,
            TimeUnit::Hours => SECONDS_PER_HOUR,
            TimeUnit::Days => SECONDS_PER_DAY,
            TimeUnit::Years => SECONDS_PER_YEAR,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BatteryParams {
    pub design_name: String,
    pub time_unit: TimeUnit,
    #[serde(default = "default_q0")]
    pub q0: f64,
    pub p1: f64,
    pub p2: f64,
    pub p3: f64,
    pub p4: f64,
    pub p5: f64,
    pub p6: f64,
    pub p7: f64,
    pub p8: f64,
    pub p9: f64,
    pub p10: f64,
    #[serde(default)]
    pub source_citation: String,
}

fn default_q0() -> f64 {
    1.0
}

const BUILTIN: [(&str, &str); 4] = [
    ("LFP|Gr", include_str!("../../../data/batteries/lfp_gr.toml")),
    ("NMC|Gr B1", include_str!("../../../data/batteries/nmc_gr_b1.toml")),
    ("NMC|Gr B2", include_str!("../../../data/batteries/nmc_gr_b2.toml")),
    ("unit-test", include_str!("../../../data/batteries/unit_test.toml")),
];

/// The three published cell designs, in reporting order.
pub const PUBLISHED_DESIGNS: [&str; 3] = ["LFP|Gr", "NMC|Gr B1", "NMC|Gr B2"];

impl BatteryParams {
    pub fn from_toml_str(text: &str, source_name: &str) -> Result<Self, DegradationError> {
        let params: BatteryParams = toml::from_str(text).map_err(|e| DegradationError::Params {
            source_name: source_name.to_string(),
            message: e.to_string(),
        })?;
        params.validate().map_err(|e| DegradationError::Params {
            source_name: source_name.to_string(),
            message: e.to_string(),
        })?;
        Ok(params)
    }

    pub fn from_path(path: &Path) -> Result<Self, DegradationError> {
        let name = path.display().to_string();
        let text = std::fs::read_to_string(path).map_err(|e| DegradationError::Params {
            source_name: name.clone(),
            message: e.to_string(),
        })?;
        Self::from_toml_str(&text, &name)
    }

    pub fn builtin_names() -> impl Iterator<Item = &'static str> {
        BUILTIN.iter().map(|(n, _)| *n)
    }

    pub fn builtin(name: &str) -> Option<Self> {
        BUILTIN
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(n, text)| Self::from_toml_str(text, n).expect("shipped parameter file is valid"))
    }

    /// A built-in design name, or otherwise a path to a parameter file.
    pub fn resolve(name_or_path: &str) -> Result<Self, DegradationError> {
        match Self::builtin(name_or_path) {
            Some(p) => Ok(p),
            None => Self::from_path(Path::new(name_or_path)),
        }
    }

    pub fn validate(&self) -> Result<(), DegradationError> {
        let all = [
            self.q0, self.p1, self.p2, self.p3, self.p4, self.p5, self.p6, self.p7, self.p8,
            self.p9, self.p10,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(DegradationError::InvalidInput("non-finite parameter".into()));
        }
        if self.p4 <= 0.0 || self.p10 <= 0.0 || self.q0 <= 0.0 {
            return Err(DegradationError::InvalidInput(
                "p4, p10 and q0 must be positive".into(),
            ));
        }
        if self.design_name.trim().is_empty() {
            return Err(DegradationError::InvalidInput("empty design_name".into()));
        }
        Ok(())
    }

    /// Cycle-aging prefactor `(p5 + p6 (1 - soc) + p7 |c|) (exp(p8/T) + exp(-p9/T))`.
    pub fn cycle_prefactor(&self, soc: f64, c_rate: f64, t_avg_k: f64) -> f64 {
        (self.p5 + self.p6 * (1.0 - soc) + self.p7 * c_rate.abs())
            * ((self.p8 / t_avg_k).exp() + (-self.p9 / t_avg_k).exp())
    }
}

/// Graphite-to-reference anode potential in volts.
pub fn anode_potential(soc: f64) -> Result<f64, DegradationError> {
    if !(0.0..=1.0).contains(&soc) {
        return Err(DegradationError::Domain(format!("soc {soc} outside [0, 1]")));
    }
    let x = 0.0085 + 0.7715 * soc;
    Ok(0.6379 + 0.5416 * (-305.5309 * x).exp()
        + 0.044 * ((-x - 0.1958) / 0.1088).tanh()
        - 0.1978 * ((x - 1.0571) / 0.0854).tanh()
        - 0.6875 * ((x + 0.0117) / 0.0529).tanh()
        - 0.0175 * ((x - 0.5692) / 0.0875).tanh())
}

/// Time-averaged temperature (K) and SOC over the whole timeline.
pub fn scenario_averages(timeline: &UsageTimeline) -> Result<(f64, f64), DegradationError> {
    let t = timeline_mean(&timeline.samples, |s| s.temp)?;
    let soc = timeline_mean(&timeline.samples, |s| s.soc)?;
    Ok((t, soc))
}

/// Closed-form calendar loss after `t_seconds`.
pub fn calendar_loss(
    params: &BatteryParams,
    t_seconds: f64,
    t_avg_k: f64,
    soc_avg: f64,
) -> Result<f64, DegradationError> {
    if !(t_seconds >= 0.0) {
        return Err(DegradationError::InvalidInput(format!(
            "negative elapsed time {t_seconds}"
        )));
    }
    if !(t_avg_k > 0.0) {
        return Err(DegradationError::Domain(format!("temperature {t_avg_k} K")));
    }
    if t_seconds == 0.0 {
        return Ok(0.0);
    }
    let ua = anode_potential(soc_avg)?;
    let t = t_seconds / params.time_unit.seconds();
    Ok(params.p1
        * (params.p2 / t_avg_k).exp()
        * (params.p3 * ua / t_avg_k).exp()
        * t.powf(params.p4))
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DegradationState {
    pub t: f64,
    pub efc: f64,
    pub q_loss_cal: f64,
    pub q_loss_cyc: f64,
}

/// Advances cycle aging by `delta_efc` with the incremental-power update
/// `prefactor * ((efc + Δ)^p10 - efc^p10)`.
pub fn cycle_step(
    params: &BatteryParams,
    state: &DegradationState,
    soc: f64,
    c_rate: f64,
    t_avg_k: f64,
    delta_efc: f64,
) -> Result<DegradationState, DegradationError> {
    if !(delta_efc >= 0.0) || !(state.efc >= 0.0) {
        return Err(DegradationError::InvalidInput(format!(
            "delta_efc {delta_efc} and efc {} must be non-negative",
            state.efc
        )));
    }
    if delta_efc == 0.0 {
        return Ok(*state);
    }
    Ok(advance(params, state, soc, c_rate, t_avg_k, delta_efc))
}

#[inline]
fn advance(
    params: &BatteryParams,
    state: &DegradationState,
    soc: f64,
    c_rate: f64,
    t_avg_k: f64,
    delta_efc: f64,
) -> DegradationState {
    let next_efc = state.efc + delta_efc;
    let kernel = next_efc.powf(params.p10) - state.efc.powf(params.p10);
    DegradationState {
        efc: next_efc,
        q_loss_cyc: state.q_loss_cyc + params.cycle_prefactor(soc, c_rate, t_avg_k) * kernel,
        ..*state
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SimOptions {
    /// Count one full charge plus one full discharge as one equivalent cycle.
    /// Off by default: each full charge or discharge counts as one.
    pub efc_halving: bool,
}

impl SimOptions {
    pub fn delta_efc(&self, c_rate: f64, dt_s: f64) -> f64 {
        let full = c_rate.abs() * dt_s / SECONDS_PER_HOUR;
        if self.efc_halving {
            full / 2.0
        } else {
            full
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub years: f64,
    pub efc: f64,
    pub q_loss_cal: f64,
    pub q_loss_cyc: f64,
    pub q_loss_total: f64,
}

impl Checkpoint {
    pub fn calendar_fraction(&self) -> f64 {
        if self.q_loss_total > 0.0 {
            self.q_loss_cal / self.q_loss_total
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioResult {
    pub vehicle_id: String,
    pub design_name: String,
    pub checkpoints: Vec<Checkpoint>,
    pub soc_avg: f64,
    pub t_avg_k: f64,
    pub efc_total: f64,
    pub q0: f64,
}

impl ScenarioResult {
    /// Checkpoint at exactly `years`, if the timeline reached it.
    pub fn at_years(&self, years: f64) -> Option<&Checkpoint> {
        self.checkpoints
            .iter()
            .find(|c| (c.years - years).abs() < 1e-9)
    }

    pub fn last(&self) -> &Checkpoint {
        self.checkpoints.last().expect("at least one checkpoint")
    }

    /// Remaining relative capacity at a checkpoint.
    pub fn capacity(&self, cp: &Checkpoint) -> f64 {
        self.q0 - cp.q_loss_total
    }
}

/// Checkpoint times in seconds from start: every whole year, plus the end.
fn checkpoint_times(span: f64) -> Vec<f64> {
    let whole = (span / SECONDS_PER_YEAR + 1e-9).floor() as usize;
    let mut out: Vec<f64> = (1..=whole).map(|k| k as f64 * SECONDS_PER_YEAR).collect();
    if out.last().map_or(true, |&t| span - t > 1e-6) {
        out.push(span);
    }
    out
}

/// Runs the model along the timeline.
///
/// Each segment uses its midpoint SOC and its own C-rate; seams add nothing.
pub fn simulate(
    params: &BatteryParams,
    timeline: &UsageTimeline,
    options: &SimOptions,
) -> Result<ScenarioResult, DegradationError> {
    params.validate()?;
    timeline.ensure_valid()?;
    let (t_avg_k, soc_avg) = scenario_averages(timeline)?;
    let samples = &timeline.samples;
    let t0 = samples[0].t;
    let span = timeline.span();
    let marks = checkpoint_times(span);

    let mut state = DegradationState::default();
    let mut checkpoints = Vec::with_capacity(marks.len());
    let mut next_mark = 0;
    let mut seam_iter = timeline.seam_marks.iter().peekable();

    let record = |state: &DegradationState, at: f64| -> Result<Checkpoint, DegradationError> {
        let cal = calendar_loss(params, at, t_avg_k, soc_avg)?;
        Ok(Checkpoint {
            years: at / SECONDS_PER_YEAR,
            efc: state.efc,
            q_loss_cal: cal,
            q_loss_cyc: state.q_loss_cyc,
            q_loss_total: cal + state.q_loss_cyc,
        })
    };

    for i in 0..samples.len() - 1 {
        while seam_iter.peek().is_some_and(|&&m| m < i) {
            seam_iter.next();
        }
        let seam = seam_iter.peek().is_some_and(|&&m| m == i);
        let a = &samples[i];
        let b = &samples[i + 1];
        let c = if seam { 0.0 } else { a.c_rate };
        let mut ta = a.t - t0;
        let tb = b.t - t0;
        let soc_at = |t: f64| a.soc + (b.soc - a.soc) * (t - (a.t - t0)) / (b.t - a.t);
        while next_mark < marks.len() && marks[next_mark] <= tb + 1e-9 {
            let tm = marks[next_mark].min(tb);
            if c != 0.0 && tm > ta {
                let mid = 0.5 * (soc_at(ta) + soc_at(tm));
                state = advance(params, &state, mid, c, t_avg_k, options.delta_efc(c, tm - ta));
            }
            state.t = tm;
            checkpoints.push(record(&state, tm)?);
            ta = tm;
            next_mark += 1;
        }
        if c != 0.0 && tb > ta {
            let mid = 0.5 * (soc_at(ta) + soc_at(tb));
            state = advance(params, &state, mid, c, t_avg_k, options.delta_efc(c, tb - ta));
        }
        state.t = tb;
    }
    Ok(ScenarioResult {
        vehicle_id: timeline.vehicle_id.clone(),
        design_name: params.design_name.clone(),
        checkpoints,
        soc_avg,
        t_avg_k,
        efc_total: state.efc,
        q0: params.q0,
    })
}
