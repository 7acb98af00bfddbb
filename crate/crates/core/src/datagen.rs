//! Behaviour data collection.
//!
//! A reactive feedback-optimization (FO) controller tracks a library of
//! day-long load references against the plant with perfect inner-loop
//! tracking and certain weather. The recorded input/output sequences are cut
//! into length-`L` windows, corrupted with measurement noise and stacked into
//! the block matrices used by the predictor fit.
//!
//! Stacking order inside every column is sample-major, channel-minor: entry
//! `k·m + c` is channel `c` at sample `k`.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::csvfmt::{self, fmt9, CsvDoc};
use crate::demand::DemandParams;
use crate::error::{Error, Result};
use crate::plant::{PlantConfig, PlantState};
use crate::power::{Outputs, Power3, Setpoints};
use crate::weather::WeatherParams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FoGains {
    /// Gradient step size.
    pub alpha: f64,
    /// Standard deviation of the per-channel setpoint dither (MW).
    pub dither_std: f64,
    /// Share of the tracking gradient given to (wind, solar, battery).
    pub weights: [f64; 3],
}

impl Default for FoGains {
    fn default() -> Self {
        Self {
            alpha: 0.4,
            dither_std: 0.3,
            weights: [1.0, 1.0, 0.0],
        }
    }
}

impl FoGains {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0) || !(self.dither_std >= 0.0) || self.weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::Config(
                "FO gains need alpha > 0, dither_std >= 0 and non-negative weights".into(),
            ));
        }
        Ok(())
    }
}

/// Per-channel setpoint bounds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelBounds {
    pub lo: Power3,
    pub hi: Power3,
}

impl ChannelBounds {
    pub fn new(avail_wind: f64, avail_solar: f64, battery_min: f64, battery_max: f64) -> Self {
        Self {
            lo: Power3::new(0.0, 0.0, battery_min),
            hi: Power3::new(avail_wind.max(0.0), avail_solar.max(0.0), battery_max),
        }
    }

    fn project(&self, v: [f64; 3]) -> [f64; 3] {
        let (lo, hi) = (self.lo.to_array(), self.hi.to_array());
        [v[0].clamp(lo[0], hi[0]), v[1].clamp(lo[1], hi[1]), v[2].clamp(lo[2], hi[2])]
    }
}

/// One projected-gradient FO update.
///
/// The tracking error is the renewable shortfall `p_ref − (y_w + y_s)`; the
/// battery setpoint is then set to cover whatever the renewable setpoints
/// leave over.
pub fn fo_step<R: Rng + ?Sized>(
    u_prev: Setpoints,
    y_meas: Outputs,
    p_ref: f64,
    bounds: &ChannelBounds,
    gains: &FoGains,
    rng: &mut R,
) -> Setpoints {
    let e = p_ref - (y_meas.wind + y_meas.solar);
    let prev = u_prev.to_array();
    let mut u = [0.0; 3];
    for c in 0..3 {
        let dither = if gains.dither_std > 0.0 {
            gains.dither_std * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng)
        } else {
            0.0
        };
        u[c] = prev[c] + gains.alpha * e * gains.weights[c] + dither;
    }
    let mut u = bounds.project(u);
    u[2] = (p_ref - u[0] - u[1]).clamp(bounds.lo.battery, bounds.hi.battery);
    Setpoints::from(u)
}

/// Setpoints that serve `p_ref` from wind first, then solar, then battery.
pub fn greedy_allocation(p_ref: f64, bounds: &ChannelBounds) -> Setpoints {
    let wind = p_ref.clamp(bounds.lo.wind, bounds.hi.wind);
    let solar = (p_ref - wind).clamp(bounds.lo.solar, bounds.hi.solar);
    let battery = (p_ref - wind - solar).clamp(bounds.lo.battery, bounds.hi.battery);
    Setpoints::new(wind, solar, battery)
}

/// A day-long reference sampled at the supervisory rate.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceDay {
    pub demand: Vec<f64>,
    pub avail_wind: Vec<f64>,
    pub avail_solar: Vec<f64>,
}

impl ReferenceDay {
    pub fn len(&self) -> usize {
        self.demand.len()
    }

    pub fn is_empty(&self) -> bool {
        self.demand.is_empty()
    }
}

/// A library of `days` randomized day-long references: demand shape, wind and
/// irradiance vary from day to day, and the demand carries an AR(1)
/// fluctuation.
pub fn reference_library<R: Rng + ?Sized>(
    days: usize,
    dt: f64,
    demand: &DemandParams,
    weather: &WeatherParams,
    rng: &mut R,
) -> Vec<ReferenceDay> {
    let samples = (24.0 * 3600.0 / dt).round() as usize;
    let ar = 0.99;
    let ar_std = 0.02 * demand.peak_mw / 5.0;
    (0..days)
        .map(|_| {
            let d = DemandParams {
                peak_mw: demand.peak_mw * rng.random_range(0.9..1.1),
                peak_hour: demand.peak_hour + rng.random_range(-2.0..2.0),
                daily_amplitude: demand.daily_amplitude * rng.random_range(0.75..1.25),
                semidaily_amplitude: demand.semidaily_amplitude * rng.random_range(0.0..2.0),
            };
            let w = WeatherParams {
                wind_mean: weather.wind_mean * rng.random_range(0.75..1.25),
                wind_amplitude: weather.wind_amplitude * rng.random_range(0.4..1.4),
                wind_phase: rng.random_range(0.0..std::f64::consts::TAU),
                irradiance_peak: weather.irradiance_peak * rng.random_range(0.6..1.0),
                ..weather.clone()
            };
            let mut fluct = 0.0;
            let mut day = ReferenceDay {
                demand: Vec::with_capacity(samples),
                avail_wind: Vec::with_capacity(samples),
                avail_solar: Vec::with_capacity(samples),
            };
            for k in 0..samples {
                let t = k as f64 * dt / 3600.0;
                fluct = ar * fluct + ar_std * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng);
                day.demand.push((d.at(t) + fluct).max(0.0));
                day.avail_wind.push(w.avail_wind(t));
                day.avail_solar.push(w.avail_solar(t));
            }
            day
        })
        .collect()
}

/// One recorded window: `L` samples of inputs (L × m) and outputs (L × p).
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub u: DMatrix<f64>,
    pub y: DMatrix<f64>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.u.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.u.nrows() == 0
    }

    /// Entries of rows `[from, to)` of `mat`, sample-major.
    fn stacked(mat: &DMatrix<f64>, from: usize, to: usize) -> DVector<f64> {
        let ch = mat.ncols();
        DVector::from_iterator((to - from) * ch, (from..to).flat_map(|k| (0..ch).map(move |c| mat[(k, c)])))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataSet {
    pub trajectories: Vec<Trajectory>,
    pub t_ini: usize,
    pub horizon: usize,
    pub m: usize,
    pub p: usize,
}

impl DataSet {
    pub fn new(trajectories: Vec<Trajectory>, t_ini: usize, horizon: usize) -> Result<Self> {
        let first = trajectories
            .first()
            .ok_or_else(|| Error::InvalidArgument("data set needs at least one trajectory".into()))?;
        let (m, p) = (first.u.ncols(), first.y.ncols());
        let l = t_ini + horizon;
        for (j, tr) in trajectories.iter().enumerate() {
            if tr.u.nrows() != l || tr.y.nrows() != l {
                return Err(Error::dim(format!("length of trajectory {j}"), l, tr.u.nrows().min(tr.y.nrows())));
            }
            if tr.u.ncols() != m || tr.y.ncols() != p {
                return Err(Error::dim(format!("channels of trajectory {j}"), m + p, tr.u.ncols() + tr.y.ncols()));
            }
            if tr.u.iter().chain(tr.y.iter()).any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("trajectory entry"));
            }
        }
        Ok(Self {
            trajectories,
            t_ini,
            horizon,
            m,
            p,
        })
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn window_len(&self) -> usize {
        self.t_ini + self.horizon
    }
}

/// Adds `N(0, (ratio·rms_c)²)` noise to every channel `c` of `traj`, where
/// `rms_c` is that channel's root-mean-square over the window.
pub fn add_measurement_noise<R: Rng + ?Sized>(traj: &Trajectory, ratio: f64, rng: &mut R) -> Trajectory {
    let mut out = traj.clone();
    if ratio <= 0.0 {
        return out;
    }
    for mat in [&mut out.u, &mut out.y] {
        for c in 0..mat.ncols() {
            let col = mat.column(c);
            let rms = (col.iter().map(|v| v * v).sum::<f64>() / col.len().max(1) as f64).sqrt();
            if rms == 0.0 {
                continue;
            }
            let noise = Normal::new(0.0, ratio * rms).expect("finite noise std");
            for k in 0..mat.nrows() {
                mat[(k, c)] += noise.sample(rng);
            }
        }
    }
    out
}

/// Records one day of FO closed-loop operation with ideal inner tracking.
pub fn simulate_fo_day<R: Rng + ?Sized>(
    plant_cfg: &PlantConfig,
    day: &ReferenceDay,
    gains: &FoGains,
    rng: &mut R,
) -> Result<(Vec<Setpoints>, Vec<Outputs>)> {
    let cfg = PlantConfig {
        ideal_tracking: true,
        ..plant_cfg.clone()
    };
    let bounds_at = |k: usize| ChannelBounds::new(day.avail_wind[k], day.avail_solar[k], cfg.battery_min, cfg.battery_max);
    let mut u_prev = greedy_allocation(day.demand[0], &bounds_at(0));
    let mut plant = PlantState::new(&cfg, u_prev)?;
    let mut y_meas = plant.outputs();
    let mut us = Vec::with_capacity(day.len());
    let mut ys = Vec::with_capacity(day.len());
    for k in 0..day.len() {
        let bounds = bounds_at(k);
        let u = fo_step(u_prev, y_meas, day.demand[k], &bounds, gains, rng);
        let (y, next) = plant.step(u, day.avail_wind[k], day.avail_solar[k])?;
        plant = next;
        us.push(u);
        ys.push(y);
        u_prev = u;
        y_meas = y;
    }
    Ok((us, ys))
}

/// Runs the FO controller over every reference day and returns exactly
/// `count` noisy windows of length `t_ini + horizon`.
///
/// Window starts are spread evenly over all available windows of all days.
/// Days are simulated in parallel with seeds drawn from `rng` up front, so the
/// result does not depend on scheduling.
#[allow(clippy::too_many_arguments)]
pub fn collect_trajectories<R: Rng + ?Sized>(
    plant_cfg: &PlantConfig,
    references: &[ReferenceDay],
    gains: &FoGains,
    count: usize,
    t_ini: usize,
    horizon: usize,
    noise_ratio: f64,
    rng: &mut R,
) -> Result<DataSet> {
    gains.validate()?;
    if count == 0 || t_ini == 0 || horizon == 0 {
        return Err(Error::InvalidArgument("T, T_ini and N must all be at least 1".into()));
    }
    if !(noise_ratio >= 0.0) {
        return Err(Error::InvalidArgument(format!("noise ratio must be non-negative, got {noise_ratio}")));
    }
    let l = t_ini + horizon;
    let available: usize = references.iter().map(|d| (d.len() + 1).saturating_sub(l)).sum();
    if available < count {
        return Err(Error::InsufficientData {
            required: count,
            available,
        });
    }
    let day_seeds: Vec<u64> = references.iter().map(|_| rng.random()).collect();
    let noise_seed: u64 = rng.random();

    let days: Vec<(Vec<Setpoints>, Vec<Outputs>)> = references
        .par_iter()
        .zip(day_seeds.par_iter())
        .map(|(day, &seed)| simulate_fo_day(plant_cfg, day, gains, &mut ChaCha8Rng::seed_from_u64(seed)))
        .collect::<Result<_>>()?;

    let stride = available / count;
    let mut noise_rng = ChaCha8Rng::seed_from_u64(noise_seed);
    let mut trajectories = Vec::with_capacity(count);
    let mut wanted = (0..count).map(|i| i * stride).peekable();
    let mut offset = 0;
    for (us, ys) in &days {
        let n_windows = (us.len() + 1).saturating_sub(l);
        while let Some(&g) = wanted.peek() {
            if g >= offset + n_windows {
                break;
            }
            let start = g - offset;
            let u = DMatrix::from_fn(l, 3, |k, c| us[start + k].to_array()[c]);
            let y = DMatrix::from_fn(l, 3, |k, c| ys[start + k].to_array()[c]);
            trajectories.push(add_measurement_noise(&Trajectory { u, y }, noise_ratio, &mut noise_rng));
            wanted.next();
        }
        offset += n_windows;
    }
    DataSet::new(trajectories, t_ini, horizon)
}

/// Past/future block matrices, one column per trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct Blocks {
    pub u_ini: DMatrix<f64>,
    pub u_future: DMatrix<f64>,
    pub y_ini: DMatrix<f64>,
    pub y_future: DMatrix<f64>,
    /// Row stack `[Y_ini; U_ini; U_future]`.
    pub regressor: DMatrix<f64>,
    pub t_ini: usize,
    pub horizon: usize,
    pub m: usize,
    pub p: usize,
}

/// Splits every trajectory into past and future blocks and builds the
/// regressor.
pub fn split_blocks(ds: &DataSet) -> Blocks {
    let (t_ini, n, m, p) = (ds.t_ini, ds.horizon, ds.m, ds.p);
    let l = t_ini + n;
    let cols = ds.len();
    let mut u_ini = DMatrix::zeros(t_ini * m, cols);
    let mut u_future = DMatrix::zeros(n * m, cols);
    let mut y_ini = DMatrix::zeros(t_ini * p, cols);
    let mut y_future = DMatrix::zeros(n * p, cols);
    for (j, tr) in ds.trajectories.iter().enumerate() {
        u_ini.set_column(j, &Trajectory::stacked(&tr.u, 0, t_ini));
        u_future.set_column(j, &Trajectory::stacked(&tr.u, t_ini, l));
        y_ini.set_column(j, &Trajectory::stacked(&tr.y, 0, t_ini));
        y_future.set_column(j, &Trajectory::stacked(&tr.y, t_ini, l));
    }
    let rows = t_ini * p + t_ini * m + n * m;
    let mut regressor = DMatrix::zeros(rows, cols);
    regressor.rows_mut(0, t_ini * p).copy_from(&y_ini);
    regressor.rows_mut(t_ini * p, t_ini * m).copy_from(&u_ini);
    regressor.rows_mut(t_ini * (p + m), n * m).copy_from(&u_future);
    Blocks {
        u_ini,
        u_future,
        y_ini,
        y_future,
        regressor,
        t_ini,
        horizon: n,
        m,
        p,
    }
}

impl Blocks {
    pub fn len(&self) -> usize {
        self.regressor.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.regressor.ncols() == 0
    }

    /// Reassembles the trajectories the blocks were built from.
    pub fn trajectories(&self) -> Vec<Trajectory> {
        let (t_ini, n, m, p) = (self.t_ini, self.horizon, self.m, self.p);
        (0..self.len())
            .map(|j| {
                let u = DMatrix::from_fn(t_ini + n, m, |k, c| {
                    if k < t_ini {
                        self.u_ini[(k * m + c, j)]
                    } else {
                        self.u_future[((k - t_ini) * m + c, j)]
                    }
                });
                let y = DMatrix::from_fn(t_ini + n, p, |k, c| {
                    if k < t_ini {
                        self.y_ini[(k * p + c, j)]
                    } else {
                        self.y_future[((k - t_ini) * p + c, j)]
                    }
                });
                Trajectory { u, y }
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExcitationReport {
    pub rank: usize,
    pub required: usize,
    pub is_sufficient: bool,
    pub sigma_max: f64,
    pub sigma_min: f64,
}

/// Numerical rank of the stacked input blocks `[U_ini; U_future]`.
///
/// Singular values count when above `max(rows, cols)·ε·σ_max`.
pub fn excitation_rank(b: &Blocks) -> ExcitationReport {
    let rows = b.u_ini.nrows() + b.u_future.nrows();
    let mut inputs = DMatrix::zeros(rows, b.len());
    inputs.rows_mut(0, b.u_ini.nrows()).copy_from(&b.u_ini);
    inputs.rows_mut(b.u_ini.nrows(), b.u_future.nrows()).copy_from(&b.u_future);
    let sv = if rows > 0 && !b.is_empty() {
        inputs.singular_values()
    } else {
        DVector::zeros(0)
    };
    let sigma_max = sv.iter().copied().fold(0.0, f64::max);
    let tol = rows.max(b.len()) as f64 * f64::EPSILON * sigma_max;
    let rank = if sigma_max > 0.0 { sv.iter().filter(|&&s| s > tol).count() } else { 0 };
    let sigma_min = sv.iter().copied().fold(f64::INFINITY, f64::min);
    ExcitationReport {
        rank,
        required: rows,
        is_sufficient: rank == rows,
        sigma_max,
        sigma_min: if sigma_min.is_finite() { sigma_min } else { 0.0 },
    }
}

/// Sidecar describing a persisted data set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSetMeta {
    #[serde(rename = "T")]
    pub count: usize,
    #[serde(rename = "L")]
    pub window_len: usize,
    #[serde(rename = "T_ini")]
    pub t_ini: usize,
    #[serde(rename = "N")]
    pub horizon: usize,
    pub m: usize,
    pub p: usize,
    pub seed: u64,
}

pub const DATASET_HEADER: [&str; 8] = ["traj_id", "k", "u_w", "u_s", "u_b", "y_w", "y_s", "y_b"];

/// CSV body: one row per (trajectory, sample).
pub fn dataset_csv(ds: &DataSet) -> Result<Vec<u8>> {
    if ds.m != 3 || ds.p != 3 {
        return Err(Error::InvalidArgument(format!(
            "the data set CSV layout holds 3 inputs and 3 outputs, got m={} p={}",
            ds.m, ds.p
        )));
    }
    let mut doc = CsvDoc::new(&DATASET_HEADER);
    for (j, tr) in ds.trajectories.iter().enumerate() {
        for k in 0..tr.len() {
            let mut fields = vec![j.to_string(), k.to_string()];
            fields.extend((0..3).map(|c| fmt9(tr.u[(k, c)])));
            fields.extend((0..3).map(|c| fmt9(tr.y[(k, c)])));
            doc.push_fields(fields);
        }
    }
    Ok(doc.into_bytes())
}

/// Writes the CSV and its `.json` sidecar.
pub fn write_dataset(ds: &DataSet, path: &Path, seed: u64) -> Result<()> {
    let meta = DataSetMeta {
        count: ds.len(),
        window_len: ds.window_len(),
        t_ini: ds.t_ini,
        horizon: ds.horizon,
        m: ds.m,
        p: ds.p,
        seed,
    };
    let body = dataset_csv(ds)?;
    let mut side = serde_json::to_vec_pretty(&meta)?;
    side.push(b'\n');
    csvfmt::write_atomic(path, &body)?;
    csvfmt::write_atomic(&csvfmt::sidecar_path(path), &side)
}

/// Reads a data set written by [`write_dataset`], checking it against its
/// sidecar.
pub fn read_dataset(path: &Path) -> Result<(DataSet, DataSetMeta)> {
    let side_path = csvfmt::sidecar_path(path);
    let meta: DataSetMeta = serde_json::from_str(&csvfmt::read_to_string(&side_path)?)
        .map_err(|e| Error::Config(format!("{}: {e}", side_path.display())))?;
    if meta.m != 3 || meta.p != 3 {
        return Err(Error::dim("data set channels (m, p)", 3, if meta.m != 3 { meta.m } else { meta.p }));
    }
    if meta.window_len != meta.t_ini + meta.horizon {
        return Err(Error::dim("data set window length L = T_ini + N", meta.t_ini + meta.horizon, meta.window_len));
    }
    let text = csvfmt::read_to_string(path)?;
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    if header != DATASET_HEADER {
        return Err(Error::Config(format!(
            "{}: unexpected header {:?}, expected {:?}",
            path.display(),
            header,
            DATASET_HEADER
        )));
    }
    let l = meta.window_len;
    let mut rows: Vec<(usize, usize, [f64; 6])> = Vec::new();
    for rec in reader.records() {
        let rec = rec?;
        let bad = || Error::Config(format!("{}: malformed row {:?}", path.display(), rec.iter().collect::<Vec<_>>()));
        let j: usize = rec[0].parse().map_err(|_| bad())?;
        let k: usize = rec[1].parse().map_err(|_| bad())?;
        let mut v = [0.0; 6];
        for (i, slot) in v.iter_mut().enumerate() {
            *slot = rec[i + 2].trim().parse().map_err(|_| bad())?;
        }
        rows.push((j, k, v));
    }
    if rows.len() != meta.count * l {
        return Err(Error::dim("data set rows (T·L)", meta.count * l, rows.len()));
    }
    let mut trajectories = vec![
        Trajectory {
            u: DMatrix::zeros(l, 3),
            y: DMatrix::zeros(l, 3),
        };
        meta.count
    ];
    let mut seen = vec![false; meta.count * l];
    for (j, k, v) in rows {
        if j >= meta.count || k >= l || seen[j * l + k] {
            return Err(Error::Config(format!(
                "{}: row (traj_id={j}, k={k}) is out of range or duplicated for T={}, L={l}",
                path.display(),
                meta.count
            )));
        }
        seen[j * l + k] = true;
        for c in 0..3 {
            trajectories[j].u[(k, c)] = v[c];
            trajectories[j].y[(k, c)] = v[3 + c];
        }
    }
    Ok((DataSet::new(trajectories, meta.t_ini, meta.horizon)?, meta))
}
