//! Experiment runners: predictor training, open-loop and closed-loop
//! simulation, error metrics, the relaxation ablation, and the CSV/JSON
//! writers for their results.

use std::path::Path;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::controller::{
    control_step, forecast, relaxation_norms, ControlSolution, ControllerConfig, Forecast, History, HorizonData,
    SpcController, CONSTRAINT_TOL,
};
use crate::csvfmt::{self, fmt9, CsvDoc};
use crate::datagen::{
    collect_trajectories, excitation_rank, fo_step, greedy_allocation, reference_library, split_blocks, ChannelBounds,
    DataSet, ExcitationReport, FoGains,
};
use crate::demand::{DemandParams, DemandProfile};
use crate::error::{Error, Result};
use crate::plant::{PlantConfig, PlantState};
use crate::power::{Outputs, Power3, Setpoints};
use crate::predictor::{fit, FitOptions, Predictor};
use crate::qp::QpStatus;
use crate::weather::{profile_rows, ProfileRow, WeatherParams};

const DATA_STREAM: u64 = 0;
const WEATHER_STREAM: u64 = 1;
const NOISE_STREAM: u64 = 2;

/// Deadband for the battery discharge and anticipation checks (MW).
pub const DISCHARGE_DEADBAND: f64 = 1e-3;

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Number of randomized days simulated under the FO controller.
    pub days: usize,
    /// Number of recorded windows.
    #[serde(rename = "T")]
    pub count: usize,
    /// Measurement noise std as a fraction of each channel's window RMS.
    pub noise_ratio: f64,
    pub fo: FoGains,
    pub fit: FitOptions,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            days: 4,
            count: 1000,
            noise_ratio: 0.02,
            fo: FoGains::default(),
            fit: FitOptions::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunMode {
    Open,
    Closed,
    Ablation,
}

impl RunMode {
    pub fn default_start_hour(self) -> f64 {
        match self {
            RunMode::Closed => 4.0,
            RunMode::Open | RunMode::Ablation => 11.88,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            RunMode::Open => "open",
            RunMode::Closed => "closed",
            RunMode::Ablation => "ablation",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub plant: PlantConfig,
    pub weather: WeatherParams,
    pub demand: DemandProfile,
    /// Base shape randomised into the training reference library.
    pub library_demand: DemandParams,
    pub controller: ControllerConfig,
    pub data: DataConfig,
    /// Perturb the realised wind speed and use the quantile bound.
    pub uncertainty: bool,
    /// Closed-loop measurement noise as a fraction of the training RMS.
    pub measurement_noise: f64,
    pub start_hour: f64,
    pub steps: usize,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            plant: PlantConfig::default(),
            weather: WeatherParams::default(),
            demand: DemandProfile::Synthetic(DemandParams::default()),
            library_demand: DemandParams::default(),
            controller: ControllerConfig::default(),
            data: DataConfig::default(),
            uncertainty: true,
            measurement_noise: 0.02,
            start_hour: RunMode::Closed.default_start_hour(),
            steps: 720,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        self.plant.validate()?;
        self.weather.validate()?;
        self.controller.validate()?;
        self.data.fo.validate()?;
        if self.steps == 0 {
            return Err(Error::Config("scenario.steps must be at least 1".into()));
        }
        if !self.start_hour.is_finite() {
            return Err(Error::Config("scenario.start_hour must be finite".into()));
        }
        if !(self.measurement_noise >= 0.0 && self.data.noise_ratio >= 0.0) {
            return Err(Error::Config("noise ratios must be non-negative".into()));
        }
        if (self.plant.dt - self.controller.sample_dt).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "plant.dt ({}) and controller.sample_dt ({}) must agree",
                self.plant.dt, self.controller.sample_dt
            )));
        }
        if self.data.days == 0 || self.data.count == 0 {
            return Err(Error::Config("data.days and data.T must be at least 1".into()));
        }
        Ok(())
    }
}

/// FO-controlled training data for the scenario.
pub fn generate_dataset(scn: &ScenarioConfig) -> Result<DataSet> {
    scn.validate()?;
    let mut rng = rng_for(scn.seed, DATA_STREAM);
    let refs = reference_library(scn.data.days, scn.plant.dt, &scn.library_demand, &scn.weather, &mut rng);
    collect_trajectories(
        &scn.plant,
        &refs,
        &scn.data.fo,
        scn.data.count,
        scn.controller.t_ini,
        scn.controller.horizon,
        scn.data.noise_ratio,
        &mut rng,
    )
}

/// Fits the predictor on a data set; fails if the inputs are not
/// persistently exciting.
pub fn fit_dataset(ds: &DataSet, opts: &FitOptions) -> Result<(Predictor, ExcitationReport)> {
    let blocks = split_blocks(ds);
    let report = excitation_rank(&blocks);
    if !report.is_sufficient {
        return Err(Error::Numerical(format!(
            "input data not persistently exciting: rank {} < {}",
            report.rank, report.required
        )));
    }
    Ok((fit(&blocks, opts)?, report))
}

pub fn train_predictor(scn: &ScenarioConfig) -> Result<(Predictor, ExcitationReport)> {
    fit_dataset(&generate_dataset(scn)?, &scn.data.fit)
}

/// `100·mean|pred − actual| / |mean(normalizer)|`.
pub fn normalized_error(pred: &[f64], actual: &[f64], normalizer: &[f64]) -> Result<f64> {
    if pred.len() != actual.len() || pred.len() != normalizer.len() {
        return Err(Error::dim("error series", pred.len(), actual.len().min(normalizer.len())));
    }
    if pred.is_empty() {
        return Err(Error::InvalidArgument("empty series".into()));
    }
    let n = pred.len() as f64;
    let norm = normalizer.iter().sum::<f64>() / n;
    if norm == 0.0 || !norm.is_finite() {
        return Err(Error::InvalidArgument("normalizer has zero mean".into()));
    }
    let mae = pred.iter().zip(actual).map(|(p, a)| (p - a).abs()).sum::<f64>() / n;
    Ok(100.0 * mae / norm.abs())
}

/// `100·RMS(actual − reference) / mean(reference)`.
pub fn rms_tracking_error(actual: &[f64], reference: &[f64]) -> Result<f64> {
    if actual.len() != reference.len() || actual.is_empty() {
        return Err(Error::dim("tracking series", reference.len(), actual.len()));
    }
    let n = actual.len() as f64;
    let mean = reference.iter().sum::<f64>() / n;
    if mean == 0.0 {
        return Err(Error::InvalidArgument("reference has zero mean".into()));
    }
    let ms = actual.iter().zip(reference).map(|(a, r)| (a - r).powi(2)).sum::<f64>() / n;
    Ok(100.0 * ms.sqrt() / mean.abs())
}

/// Realised weather and reference over a run, indexed by supervisory step
/// from `first_hour`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeatherTrace {
    pub first_hour: f64,
    pub rows: Vec<ProfileRow>,
    pub p_ref: Vec<f64>,
}

impl WeatherTrace {
    pub fn new(scn: &ScenarioConfig, first_hour: f64, len: usize, uncertain: bool) -> Self {
        let params = WeatherParams {
            sigma_v: if uncertain { scn.weather.sigma_v } else { 0.0 },
            ..scn.weather.clone()
        };
        let dt_h = scn.plant.dt / 3600.0;
        let times: Vec<f64> = (0..len).map(|i| first_hour + i as f64 * dt_h).collect();
        let mut rng = rng_for(scn.seed, WEATHER_STREAM);
        let rows = profile_rows(&params, scn.controller.q_w, &times, &mut rng);
        let p_ref = times.iter().map(|&t| scn.demand.at(t)).collect();
        Self { first_hour, rows, p_ref }
    }

    fn horizon(&self, start: usize, n: usize, cfg: &ControllerConfig) -> HorizonData {
        let rows = &self.rows[start..start + n];
        HorizonData {
            p_ref: self.p_ref[start..start + n].to_vec(),
            wind_bound: rows.iter().map(|r| r.quantile_bound_mw).collect(),
            solar_bound: rows.iter().map(|r| r.avail_solar_mw).collect(),
            battery_min: cfg.battery_min,
            battery_max: cfg.battery_max,
        }
    }
}

struct MeasurementNoise {
    dists: Vec<Option<Normal<f64>>>,
    rng: ChaCha8Rng,
}

impl MeasurementNoise {
    fn new(scn: &ScenarioConfig, pred: &Predictor) -> Result<Self> {
        let ratings = [scn.plant.rated_wind, scn.plant.rated_solar, scn.plant.battery_max.abs()];
        let dists = (0..3)
            .map(|c| {
                let level = pred.output_rms.get(c).copied().unwrap_or(ratings[c]);
                let std = scn.measurement_noise * level;
                if std > 0.0 {
                    Normal::new(0.0, std)
                        .map(Some)
                        .map_err(|e| Error::Config(format!("measurement noise: {e}")))
                } else {
                    Ok(None)
                }
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            dists,
            rng: rng_for(scn.seed, NOISE_STREAM),
        })
    }

    fn measure(&mut self, y: Outputs) -> Outputs {
        let mut v = y.to_array();
        for (c, d) in self.dists.iter().enumerate() {
            if let Some(d) = d {
                v[c] += d.sample(&mut self.rng);
            }
        }
        Power3::from(v)
    }
}

/// Runs the FO controller without dither for `T_ini` steps to fill the
/// history, starting from a greedy allocation at rest.
fn warm_up(
    scn: &ScenarioConfig,
    trace: &WeatherTrace,
    noise: &mut MeasurementNoise,
) -> Result<(History, Setpoints, PlantState)> {
    let t_ini = scn.controller.t_ini;
    let bounds = |i: usize| {
        ChannelBounds::new(
            trace.rows[i].avail_wind_mw,
            trace.rows[i].avail_solar_mw,
            scn.plant.battery_min,
            scn.plant.battery_max,
        )
    };
    let mut u = greedy_allocation(trace.p_ref[0], &bounds(0));
    let mut plant = PlantState::new(&scn.plant, u)?;
    let mut y_meas = plant.outputs();
    let gains = FoGains {
        dither_std: 0.0,
        ..scn.data.fo.clone()
    };
    let mut unused = rng_for(scn.seed, DATA_STREAM);
    let mut hist = History::new(t_ini);
    for i in 0..t_ini {
        u = fo_step(u, y_meas, trace.p_ref[i], &bounds(i), &gains, &mut unused);
        let (y, next) = plant.step(u, trace.rows[i].avail_wind_uncertain_mw, trace.rows[i].avail_solar_mw)?;
        plant = next;
        y_meas = noise.measure(y);
        hist.push(u, y_meas);
    }
    Ok((hist, u, plant))
}

/// One supervisory sample of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub t_h: f64,
    pub p_ref: f64,
    pub setpoint: Setpoints,
    /// True plant outputs.
    pub output: Outputs,
    /// Outputs as measured by the controller.
    pub measured: Outputs,
    /// Controller prediction for this sample.
    pub predicted: Outputs,
    /// Realised available wind power.
    pub avail_wind: f64,
    pub wind_bound: f64,
    pub avail_solar: f64,
    /// `u_b − (p_ref − ŷ_w − ŷ_s)`.
    pub battery_residual: f64,
    pub sigma_u_fro: f64,
    pub sigma_y_fro: f64,
    pub solve_ms: f64,
    pub iterations: usize,
    pub status: QpStatus,
    pub max_violation: f64,
    pub soc_mwh: f64,
}

impl StepRecord {
    pub fn delivered(&self) -> f64 {
        self.output.total()
    }

    pub fn violates_constraints(&self) -> bool {
        self.setpoint.wind > self.wind_bound + CONSTRAINT_TOL
            || self.battery_residual.abs() > CONSTRAINT_TOL
            || self.max_violation > CONSTRAINT_TOL
    }

    /// Load exceeds renewable availability but the battery is not
    /// discharging.
    pub fn misses_discharge(&self) -> bool {
        self.p_ref > self.wind_bound + self.avail_solar + DISCHARGE_DEADBAND && self.output.battery <= 0.0
    }
}

/// A full horizon solution logged at one closed-loop step.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastRecord {
    pub step: usize,
    pub forecast: Forecast,
    pub setpoints: Vec<Setpoints>,
    pub p_ref: Vec<f64>,
    pub wind_bound: Vec<f64>,
    pub solar_bound: Vec<f64>,
    pub sigma_u_fro: f64,
    pub sigma_y_fro: f64,
    pub solve_ms: f64,
}

impl ForecastRecord {
    /// Horizon samples where the load exceeds the renewable bounds but the
    /// forecast battery setpoint is not positive.
    pub fn anticipation_misses(&self) -> usize {
        (0..self.p_ref.len())
            .filter(|&k| {
                self.p_ref[k] > self.wind_bound[k] + self.solar_bound[k] + DISCHARGE_DEADBAND
                    && self.setpoints[k].battery <= 0.0
            })
            .count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OpenLoopErrors {
    pub wind_pct: f64,
    pub solar_pct: f64,
    pub battery_pct: f64,
    pub total_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub steps: usize,
    pub tracking_error_pct: f64,
    pub mean_solve_ms: Option<f64>,
    pub max_solve_ms: Option<f64>,
    pub constraint_violation_count: usize,
    pub solver_failure_count: usize,
    pub missed_discharge_count: usize,
    pub anticipation_miss_count: usize,
    pub mean_sigma_u_fro: f64,
    pub mean_sigma_y_fro: f64,
    pub open_loop_errors: Option<OpenLoopErrors>,
}

impl RunSummary {
    pub fn from_records(records: &[StepRecord], forecasts: &[ForecastRecord], open_loop: Option<OpenLoopErrors>) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::InvalidArgument("run has no steps".into()));
        }
        let n = records.len() as f64;
        let delivered: Vec<f64> = records.iter().map(StepRecord::delivered).collect();
        let reference: Vec<f64> = records.iter().map(|r| r.p_ref).collect();
        let times: Vec<f64> = records.iter().map(|r| r.solve_ms).collect();
        Ok(Self {
            steps: records.len(),
            tracking_error_pct: rms_tracking_error(&delivered, &reference)?,
            mean_solve_ms: Some(times.iter().sum::<f64>() / n),
            max_solve_ms: Some(times.iter().copied().fold(0.0, f64::max)),
            constraint_violation_count: records.iter().filter(|r| r.violates_constraints()).count(),
            solver_failure_count: records.iter().filter(|r| r.status != QpStatus::Solved).count(),
            missed_discharge_count: records.iter().filter(|r| r.misses_discharge()).count(),
            anticipation_miss_count: forecasts.iter().map(ForecastRecord::anticipation_misses).sum(),
            mean_sigma_u_fro: records.iter().map(|r| r.sigma_u_fro).sum::<f64>() / n,
            mean_sigma_y_fro: records.iter().map(|r| r.sigma_y_fro).sum::<f64>() / n,
            open_loop_errors: open_loop,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub mode: RunMode,
    pub records: Vec<StepRecord>,
    pub forecasts: Vec<ForecastRecord>,
    pub weather: Vec<ProfileRow>,
    pub summary: RunSummary,
}

fn horizon_first(hz: &HorizonData) -> (f64, f64) {
    (hz.wind_bound[0], hz.solar_bound[0])
}

fn forecast_record(step: usize, t0_s: f64, sol: &ControlSolution, hz: &HorizonData, dt: f64, solve_ms: f64) -> ForecastRecord {
    let (su, sy) = relaxation_norms(sol);
    ForecastRecord {
        step,
        forecast: forecast(sol, t0_s, dt),
        setpoints: sol.u_n.clone(),
        p_ref: hz.p_ref.clone(),
        wind_bound: hz.wind_bound.clone(),
        solar_bound: hz.solar_bound.clone(),
        sigma_u_fro: su,
        sigma_y_fro: sy,
        solve_ms,
    }
}

/// Receding-horizon simulation: solve, apply the first setpoint, measure,
/// repeat.
pub fn run_closed_loop(scn: &ScenarioConfig, pred: &Predictor) -> Result<RunResult> {
    scn.validate()?;
    let cfg = &scn.controller;
    let (t_ini, n) = (cfg.t_ini, cfg.horizon);
    let dt_h = scn.plant.dt / 3600.0;
    let first_hour = scn.start_hour - t_ini as f64 * dt_h;
    let trace = WeatherTrace::new(scn, first_hour, t_ini + scn.steps + n, scn.uncertainty);
    let mut noise = MeasurementNoise::new(scn, pred)?;
    let (mut hist, mut u_prev, mut plant) = warm_up(scn, &trace, &mut noise)?;
    let mut ctl = SpcController::new(cfg.clone(), pred.clone())?;

    let mut records = Vec::with_capacity(scn.steps);
    let mut forecasts = Vec::with_capacity(scn.steps);
    for step in 0..scn.steps {
        let i = t_ini + step;
        let hz = trace.horizon(i, n, cfg);
        let clock = Instant::now();
        let sol = ctl.step(&hist, &hz, u_prev)?;
        let solve_ms = clock.elapsed().as_secs_f64() * 1e3;

        let u = sol.u_n[0];
        let row = &trace.rows[i];
        let (y, next) = plant.step(u, row.avail_wind_uncertain_mw, row.avail_solar_mw)?;
        plant = next;
        let y_meas = noise.measure(y);
        hist.push(u, y_meas);
        u_prev = u;

        let (wb, sb) = horizon_first(&hz);
        let (su, sy) = relaxation_norms(&sol);
        let t_h = trace.first_hour + i as f64 * dt_h;
        records.push(StepRecord {
            step,
            t_h,
            p_ref: hz.p_ref[0],
            setpoint: u,
            output: y,
            measured: y_meas,
            predicted: sol.y_n[0],
            avail_wind: row.avail_wind_uncertain_mw,
            wind_bound: wb,
            avail_solar: sb,
            battery_residual: u.battery - (hz.p_ref[0] - sol.y_n[0].wind - sol.y_n[0].solar),
            sigma_u_fro: su,
            sigma_y_fro: sy,
            solve_ms,
            iterations: sol.iterations,
            status: sol.status,
            max_violation: sol.max_violation,
            soc_mwh: plant.soc_energy,
        });
        forecasts.push(forecast_record(step, t_h * 3600.0, &sol, &hz, scn.plant.dt, solve_ms));
    }
    let summary = RunSummary::from_records(&records, &forecasts, None)?;
    Ok(RunResult {
        mode: RunMode::Closed,
        records,
        forecasts,
        weather: trace.rows[t_ini..t_ini + scn.steps].to_vec(),
        summary,
    })
}

/// Solves once at the start time and applies the whole setpoint sequence
/// without feedback.
pub fn run_open_loop(scn: &ScenarioConfig, pred: &Predictor) -> Result<RunResult> {
    scn.validate()?;
    let cfg = &scn.controller;
    let (t_ini, n) = (cfg.t_ini, cfg.horizon);
    let dt_h = scn.plant.dt / 3600.0;
    let first_hour = scn.start_hour - t_ini as f64 * dt_h;
    let trace = WeatherTrace::new(scn, first_hour, t_ini + n, scn.uncertainty);
    let mut noise = MeasurementNoise::new(scn, pred)?;
    let (hist, u_prev, mut plant) = warm_up(scn, &trace, &mut noise)?;
    let hz = trace.horizon(t_ini, n, cfg);
    let clock = Instant::now();
    let sol = control_step(cfg, pred, &hist, &hz, u_prev, None)?;
    let solve_ms = clock.elapsed().as_secs_f64() * 1e3;
    let (su, sy) = relaxation_norms(&sol);

    let mut records = Vec::with_capacity(n);
    for k in 0..n {
        let i = t_ini + k;
        let u = sol.u_n[k];
        let row = &trace.rows[i];
        let (y, next) = plant.step(u, row.avail_wind_uncertain_mw, row.avail_solar_mw)?;
        plant = next;
        let y_meas = noise.measure(y);
        records.push(StepRecord {
            step: k,
            t_h: trace.first_hour + i as f64 * dt_h,
            p_ref: hz.p_ref[k],
            setpoint: u,
            output: y,
            measured: y_meas,
            predicted: sol.y_n[k],
            avail_wind: row.avail_wind_uncertain_mw,
            wind_bound: hz.wind_bound[k],
            avail_solar: hz.solar_bound[k],
            battery_residual: u.battery - (hz.p_ref[k] - sol.y_n[k].wind - sol.y_n[k].solar),
            sigma_u_fro: su,
            sigma_y_fro: sy,
            solve_ms: if k == 0 { solve_ms } else { 0.0 },
            iterations: sol.iterations,
            status: sol.status,
            max_violation: sol.max_violation,
            soc_mwh: plant.soc_energy,
        });
    }
    let pick = |f: fn(&StepRecord) -> f64| records.iter().map(f).collect::<Vec<f64>>();
    let errors = OpenLoopErrors {
        wind_pct: normalized_error(&pick(|r| r.predicted.wind), &pick(|r| r.output.wind), &pick(|r| r.predicted.wind))?,
        solar_pct: normalized_error(&pick(|r| r.predicted.solar), &pick(|r| r.output.solar), &pick(|r| r.predicted.solar))?,
        battery_pct: normalized_error(
            &pick(|r| r.predicted.battery),
            &pick(|r| r.output.battery),
            &pick(|r| r.predicted.battery),
        )?,
        total_pct: normalized_error(&pick(|r| r.predicted.total()), &pick(|r| r.output.total()), &pick(|r| r.p_ref))?,
    };
    let t0_s = (trace.first_hour + t_ini as f64 * dt_h) * 3600.0 - scn.plant.dt;
    let forecasts = vec![forecast_record(0, t0_s, &sol, &hz, scn.plant.dt, solve_ms)];
    let mut summary = RunSummary::from_records(&records, &forecasts, Some(errors))?;
    summary.mean_solve_ms = Some(solve_ms);
    summary.max_solve_ms = Some(solve_ms);
    Ok(RunResult {
        mode: RunMode::Open,
        records,
        forecasts,
        weather: trace.rows[t_ini..].to_vec(),
        summary,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub label: String,
    pub uncertainty: bool,
    pub lambda_slack: f64,
    pub q_w: f64,
    pub sigma_u_fro: f64,
    pub sigma_y_fro: f64,
    /// Mean absolute change of the predicted wind output from the baseline.
    pub delta_wind_mw: f64,
}

/// Label, uncertainty on, slack weight, wind quantile.
type AblationSpec = (&'static str, bool, f64, f64);

/// The five relaxation experiments: no uncertainty, uncertainty with slack
/// weights 10 and 1e5, and quantiles −0.4 and −1.6. All rows share one
/// history recorded on nominal weather and solve a single horizon at the
/// scenario start time.
pub fn ablation_table(base: &ScenarioConfig, pred: &Predictor) -> Result<Vec<AblationRow>> {
    base.validate()?;
    let cfg = &base.controller;
    let (t_ini, n) = (cfg.t_ini, cfg.horizon);
    let dt_h = base.plant.dt / 3600.0;
    let first_hour = base.start_hour - t_ini as f64 * dt_h;
    let nominal = WeatherTrace::new(base, first_hour, t_ini + n, false);
    let mut noise = MeasurementNoise::new(base, pred)?;
    let (hist, u_prev, _) = warm_up(base, &nominal, &mut noise)?;

    let specs: [AblationSpec; 5] = [
        ("no_uncertainty", false, 10.0, -0.4),
        ("uncertainty_lambda_10", true, 10.0, -0.4),
        ("uncertainty_lambda_1e5", true, 1e5, -0.4),
        ("uncertainty_q_-0.4", true, 10.0, -0.4),
        ("uncertainty_q_-1.6", true, 10.0, -1.6),
    ];
    let solved: Vec<(ControlSolution, AblationSpec)> = specs
        .par_iter()
        .map(|&spec| {
            let (_, uncertain, lam, q) = spec;
            let row_cfg = ControllerConfig {
                lambda_u: lam,
                lambda_y: lam,
                q_w: q,
                ..cfg.clone()
            };
            let hz = HorizonData {
                wind_bound: (0..n)
                    .map(|k| {
                        let t = first_hour + (t_ini + k) as f64 * dt_h;
                        base.weather.wind_bound(t, q, uncertain)
                    })
                    .collect(),
                ..nominal.horizon(t_ini, n, &row_cfg)
            };
            control_step(&row_cfg, pred, &hist, &hz, u_prev, None).map(|s| (s, spec))
        })
        .collect::<Result<_>>()?;

    let baseline: Vec<f64> = solved[0].0.y_n.iter().map(|y| y.wind).collect();
    Ok(solved
        .iter()
        .map(|(sol, (label, uncertain, lam, q))| {
            let (su, sy) = relaxation_norms(sol);
            let delta = sol.y_n.iter().zip(&baseline).map(|(y, b)| (y.wind - b).abs()).sum::<f64>() / n as f64;
            AblationRow {
                label: label.to_string(),
                uncertainty: *uncertain,
                lambda_slack: *lam,
                q_w: *q,
                sigma_u_fro: su,
                sigma_y_fro: sy,
                delta_wind_mw: delta,
            }
        })
        .collect())
}

pub const RUN_HEADER: [&str; 26] = [
    "step",
    "t_h",
    "p_ref",
    "u_w",
    "u_s",
    "u_b",
    "y_w",
    "y_s",
    "y_b",
    "p_l",
    "ym_w",
    "ym_s",
    "ym_b",
    "yhat_w",
    "yhat_s",
    "yhat_b",
    "avail_wind",
    "wind_bound",
    "avail_solar",
    "battery_residual",
    "sigma_u_fro",
    "sigma_y_fro",
    "solve_ms",
    "iterations",
    "status",
    "soc_mwh",
];

pub const FORECAST_HEADER: [&str; 15] = [
    "step",
    "k",
    "t_s",
    "u_w",
    "u_s",
    "u_b",
    "yhat_w",
    "yhat_s",
    "yhat_b",
    "yhat_total",
    "p_ref",
    "wind_bound",
    "sigma_u_fro",
    "sigma_y_fro",
    "solve_ms",
];

pub const FAN_HEADER: [&str; 4] = ["step", "k", "component", "value"];

pub const ABLATION_HEADER: [&str; 7] = [
    "label",
    "uncertainty",
    "lambda_slack",
    "q_w",
    "sigma_u_fro_mw",
    "sigma_y_fro_mw",
    "delta_wind_mw",
];

fn status_str(s: QpStatus) -> &'static str {
    match s {
        QpStatus::Solved => "solved",
        QpStatus::MaxIter => "max_iter",
        QpStatus::Infeasible => "infeasible",
    }
}

/// Per-step CSV. Solve times are written as zero unless `record_timing`.
pub fn run_csv(result: &RunResult, record_timing: bool) -> Vec<u8> {
    let mut doc = CsvDoc::new(&RUN_HEADER);
    for r in &result.records {
        let mut f = vec![r.step.to_string()];
        let nums = [
            r.t_h,
            r.p_ref,
            r.setpoint.wind,
            r.setpoint.solar,
            r.setpoint.battery,
            r.output.wind,
            r.output.solar,
            r.output.battery,
            r.delivered(),
            r.measured.wind,
            r.measured.solar,
            r.measured.battery,
            r.predicted.wind,
            r.predicted.solar,
            r.predicted.battery,
            r.avail_wind,
            r.wind_bound,
            r.avail_solar,
            r.battery_residual,
            r.sigma_u_fro,
            r.sigma_y_fro,
            if record_timing { r.solve_ms } else { 0.0 },
        ];
        f.extend(nums.iter().map(|&v| fmt9(v)));
        f.push(r.iterations.to_string());
        f.push(status_str(r.status).to_string());
        f.push(fmt9(r.soc_mwh));
        doc.push_fields(f);
    }
    doc.into_bytes()
}

/// Every logged horizon, one row per horizon sample.
pub fn forecast_csv(result: &RunResult, record_timing: bool) -> Vec<u8> {
    let mut doc = CsvDoc::new(&FORECAST_HEADER);
    for fr in &result.forecasts {
        let f = &fr.forecast;
        for k in 0..f.times.len() {
            let mut fields = vec![fr.step.to_string(), (k + 1).to_string()];
            let nums = [
                f.times[k],
                fr.setpoints[k].wind,
                fr.setpoints[k].solar,
                fr.setpoints[k].battery,
                f.wind[k],
                f.solar[k],
                f.battery[k],
                f.total[k],
                fr.p_ref[k],
                fr.wind_bound[k],
                fr.sigma_u_fro,
                fr.sigma_y_fro,
                if record_timing { fr.solve_ms } else { 0.0 },
            ];
            fields.extend(nums.iter().map(|&v| fmt9(v)));
            doc.push_fields(fields);
        }
    }
    doc.into_bytes()
}

/// Long-format forecast fan: `(step, k, component, value)`.
pub fn fan_csv(result: &RunResult) -> Vec<u8> {
    let mut doc = CsvDoc::new(&FAN_HEADER);
    for fr in &result.forecasts {
        let f = &fr.forecast;
        for k in 0..f.times.len() {
            for (name, v) in [
                ("yhat_w", f.wind[k]),
                ("yhat_s", f.solar[k]),
                ("yhat_b", f.battery[k]),
                ("yhat_total", f.total[k]),
                ("u_b", f.battery_setpoint[k]),
            ] {
                doc.push_fields([fr.step.to_string(), (k + 1).to_string(), name.to_string(), fmt9(v)]);
            }
        }
    }
    doc.into_bytes()
}

pub fn weather_csv(rows: &[ProfileRow]) -> Vec<u8> {
    let mut doc = CsvDoc::new(&ProfileRow::HEADER);
    for r in rows {
        doc.push_fields(r.values().iter().map(|&v| fmt9(v)));
    }
    doc.into_bytes()
}

pub fn ablation_csv(rows: &[AblationRow]) -> Vec<u8> {
    let mut doc = CsvDoc::new(&ABLATION_HEADER);
    for r in rows {
        doc.push_fields([
            r.label.clone(),
            r.uncertainty.to_string(),
            fmt9(r.lambda_slack),
            fmt9(r.q_w),
            fmt9(r.sigma_u_fro),
            fmt9(r.sigma_y_fro),
            fmt9(r.delta_wind_mw),
        ]);
    }
    doc.into_bytes()
}

/// Writes a run's CSV files into `dir`; forecast files only for closed
/// loop.
pub fn write_run_files(result: &RunResult, dir: &Path, record_timing: bool) -> Result<()> {
    csvfmt::write_atomic(&dir.join("run.csv"), &run_csv(result, record_timing))?;
    csvfmt::write_atomic(&dir.join("weather.csv"), &weather_csv(&result.weather))?;
    if result.mode == RunMode::Closed {
        csvfmt::write_atomic(&dir.join("forecasts.csv"), &forecast_csv(result, record_timing))?;
        csvfmt::write_atomic(&dir.join("forecast_fan.csv"), &fan_csv(result))?;
    }
    Ok(())
}

/// Summary metrics with the solve-time fields blanked unless timing is
/// recorded.
pub fn summary_for_output(summary: &RunSummary, record_timing: bool) -> RunSummary {
    let mut s = summary.clone();
    if !record_timing {
        s.mean_solve_ms = None;
        s.max_solve_ms = None;
    }
    s
}
