//! Uncertainty-aware predictive controller.
//!
//! Each step solves a QP over `x = [u_N; y_N; σ_u; σ_y]`: track the load
//! with wind and solar outputs, damp wind moves, keep the trajectory
//! consistent with the learned predictor up to penalised slacks on the
//! initial window, let the battery take the residual, and keep every
//! setpoint and predicted output inside its box. The wind box uses a
//! per-sample quantile of the uncertain availability.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::power::{Outputs, Power3, Setpoints};
use crate::predictor::Predictor;
use crate::qp::{AdmmSolver, QpProblem, QpSettings, QpSolution, QpStatus};

const CHANNELS: usize = Power3::CHANNELS;
const WIND: usize = 0;
const SOLAR: usize = 1;
const BATTERY: usize = 2;

/// Tolerance used when checking the solved constraints (MW).
pub const CONSTRAINT_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControllerConfig {
    #[serde(rename = "N")]
    pub horizon: usize,
    #[serde(rename = "T_ini")]
    pub t_ini: usize,
    /// Weight on the squared renewable tracking error.
    pub q_r: f64,
    /// Weight on squared wind setpoint and output moves.
    pub lambda: f64,
    pub lambda_u: f64,
    pub lambda_y: f64,
    /// Standard-normal quantile of the wind availability bound.
    pub q_w: f64,
    pub battery_min: f64,
    pub battery_max: f64,
    /// Supervisory sampling interval (s).
    pub sample_dt: f64,
    pub qp: QpSettings,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self {
            horizon: 20,
            t_ini: 20,
            q_r: 1.0,
            lambda: 0.1,
            lambda_u: 10.0,
            lambda_y: 10.0,
            q_w: -0.4,
            battery_min: -4.0,
            battery_max: 4.0,
            sample_dt: 20.0,
            qp: QpSettings::default(),
        }
    }
}

impl ControllerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 || self.t_ini == 0 {
            return Err(Error::Config("controller N and T_ini must be at least 1".into()));
        }
        for (name, v) in [
            ("q_r", self.q_r),
            ("lambda", self.lambda),
            ("lambda_u", self.lambda_u),
            ("lambda_y", self.lambda_y),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("controller.{name} must be non-negative, got {v}")));
            }
        }
        if !self.q_w.is_finite() {
            return Err(Error::Config("controller.q_w must be finite".into()));
        }
        if !(self.battery_min <= self.battery_max && self.battery_min.is_finite() && self.battery_max.is_finite()) {
            return Err(Error::Config("controller battery bounds must be finite with min ≤ max".into()));
        }
        if !(self.sample_dt > 0.0 && self.sample_dt.is_finite()) {
            return Err(Error::Config("controller.sample_dt must be positive".into()));
        }
        self.qp.validate()
    }
}

/// The most recent `T_ini` applied setpoints and measured outputs, oldest
/// first.
#[derive(Debug, Clone, PartialEq)]
pub struct History {
    t_ini: usize,
    u: VecDeque<Setpoints>,
    y: VecDeque<Outputs>,
}

impl History {
    pub fn new(t_ini: usize) -> Self {
        Self {
            t_ini,
            u: VecDeque::with_capacity(t_ini + 1),
            y: VecDeque::with_capacity(t_ini + 1),
        }
    }

    /// Keeps the last `t_ini` pairs of the given sequences.
    pub fn from_samples(t_ini: usize, u: &[Setpoints], y: &[Outputs]) -> Result<Self> {
        if u.len() != y.len() {
            return Err(Error::dim("history outputs", u.len(), y.len()));
        }
        let mut h = Self::new(t_ini);
        for (a, b) in u.iter().zip(y) {
            h.push(*a, *b);
        }
        Ok(h)
    }

    pub fn push(&mut self, u: Setpoints, y: Outputs) {
        self.u.push_back(u);
        self.y.push_back(y);
        while self.u.len() > self.t_ini {
            self.u.pop_front();
            self.y.pop_front();
        }
    }

    pub fn t_ini(&self) -> usize {
        self.t_ini
    }

    pub fn len(&self) -> usize {
        self.u.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.u.len() == self.t_ini
    }

    pub fn last_u(&self) -> Option<Setpoints> {
        self.u.back().copied()
    }

    pub fn last_y(&self) -> Option<Outputs> {
        self.y.back().copied()
    }

    pub fn u_ini(&self) -> DVector<f64> {
        DVector::from_iterator(self.u.len() * CHANNELS, self.u.iter().flat_map(|s| s.to_array()))
    }

    pub fn y_ini(&self) -> DVector<f64> {
        DVector::from_iterator(self.y.len() * CHANNELS, self.y.iter().flat_map(|s| s.to_array()))
    }
}

/// Reference and bounds over the prediction horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct HorizonData {
    pub p_ref: Vec<f64>,
    /// Per-sample quantile bound on available wind power.
    pub wind_bound: Vec<f64>,
    pub solar_bound: Vec<f64>,
    pub battery_min: f64,
    pub battery_max: f64,
}

impl HorizonData {
    pub fn validate(&self, horizon: usize) -> Result<()> {
        for (name, v) in [
            ("p_ref", &self.p_ref),
            ("wind_bound", &self.wind_bound),
            ("solar_bound", &self.solar_bound),
        ] {
            if v.len() != horizon {
                return Err(Error::dim(name, horizon, v.len()));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite("horizon data"));
            }
        }
        if self.wind_bound.iter().chain(&self.solar_bound).any(|&b| b < 0.0) {
            return Err(Error::InvalidArgument("wind and solar bounds must be non-negative".into()));
        }
        if !(self.battery_min <= self.battery_max) {
            return Err(Error::InvalidArgument("battery_min > battery_max".into()));
        }
        Ok(())
    }

    fn bounds(&self, k: usize) -> ([f64; 3], [f64; 3]) {
        (
            [0.0, 0.0, self.battery_min],
            [self.wind_bound[k], self.solar_bound[k], self.battery_max],
        )
    }
}

/// Positions of the decision variables and constraint rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IndexMap {
    pub horizon: usize,
    pub t_ini: usize,
}

impl IndexMap {
    pub fn u(&self, k: usize, c: usize) -> usize {
        k * CHANNELS + c
    }

    pub fn y(&self, k: usize, c: usize) -> usize {
        self.horizon * CHANNELS + k * CHANNELS + c
    }

    pub fn sigma_u(&self, i: usize) -> usize {
        2 * self.horizon * CHANNELS + i
    }

    pub fn sigma_y(&self, i: usize) -> usize {
        2 * self.horizon * CHANNELS + self.t_ini * CHANNELS + i
    }

    pub fn n_vars(&self) -> usize {
        2 * (self.horizon + self.t_ini) * CHANNELS
    }

    pub fn behaviour_rows(&self) -> std::ops::Range<usize> {
        0..self.horizon * CHANNELS
    }

    pub fn battery_rows(&self) -> std::ops::Range<usize> {
        let s = self.horizon * CHANNELS;
        s..s + self.horizon
    }

    pub fn u_box_rows(&self) -> std::ops::Range<usize> {
        let s = self.horizon * (CHANNELS + 1);
        s..s + self.horizon * CHANNELS
    }

    pub fn y_box_rows(&self) -> std::ops::Range<usize> {
        let s = self.horizon * (2 * CHANNELS + 1);
        s..s + self.horizon * CHANNELS
    }

    pub fn n_rows(&self) -> usize {
        self.horizon * (3 * CHANNELS + 1)
    }
}

fn check_dims(cfg: &ControllerConfig, pred: &Predictor) -> Result<IndexMap> {
    let d = &pred.dims;
    if d.m != CHANNELS || d.p != CHANNELS {
        return Err(Error::dim("predictor channels", CHANNELS, d.m.max(d.p)));
    }
    if d.horizon != cfg.horizon {
        return Err(Error::dim("predictor horizon", cfg.horizon, d.horizon));
    }
    if d.t_ini != cfg.t_ini {
        return Err(Error::dim("predictor T_ini", cfg.t_ini, d.t_ini));
    }
    Ok(IndexMap {
        horizon: cfg.horizon,
        t_ini: cfg.t_ini,
    })
}

fn hessian(cfg: &ControllerConfig, map: &IndexMap) -> DMatrix<f64> {
    let n = map.n_vars();
    let mut h = DMatrix::zeros(n, n);
    for k in 0..map.horizon {
        let (w, s) = (map.y(k, WIND), map.y(k, SOLAR));
        for i in [w, s] {
            for j in [w, s] {
                h[(i, j)] += cfg.q_r;
            }
        }
    }
    // λ(v_k − v_{k−1})² for the wind setpoint and the wind output.
    for idx in [|m: &IndexMap, k| m.u(k, WIND), |m: &IndexMap, k| m.y(k, WIND)] {
        for k in 0..map.horizon {
            let i = idx(map, k);
            h[(i, i)] += 2.0 * cfg.lambda;
            if k > 0 {
                let j = idx(map, k - 1);
                h[(j, j)] += 2.0 * cfg.lambda;
                h[(i, j)] -= 2.0 * cfg.lambda;
                h[(j, i)] -= 2.0 * cfg.lambda;
            }
        }
    }
    for i in 0..map.t_ini * CHANNELS {
        h[(map.sigma_u(i), map.sigma_u(i))] += 2.0 * cfg.lambda_u;
        h[(map.sigma_y(i), map.sigma_y(i))] += 2.0 * cfg.lambda_y;
    }
    h
}

/// Linear cost and constant for the current reference and the last applied
/// wind setpoint / measured wind output.
fn linear_cost(cfg: &ControllerConfig, map: &IndexMap, hz: &HorizonData, u_prev_wind: f64, y_last_wind: f64) -> (DVector<f64>, f64) {
    let mut g = DVector::zeros(map.n_vars());
    let mut constant = 0.0;
    for k in 0..map.horizon {
        let r = hz.p_ref[k];
        g[map.y(k, WIND)] -= cfg.q_r * r;
        g[map.y(k, SOLAR)] -= cfg.q_r * r;
        constant += 0.5 * cfg.q_r * r * r;
    }
    g[map.u(0, WIND)] -= 2.0 * cfg.lambda * u_prev_wind;
    g[map.y(0, WIND)] -= 2.0 * cfg.lambda * y_last_wind;
    constant += cfg.lambda * (u_prev_wind * u_prev_wind + y_last_wind * y_last_wind);
    (g, constant)
}

fn constraint_matrix(pred: &Predictor, map: &IndexMap) -> DMatrix<f64> {
    let n = map.n_vars();
    let mut a = DMatrix::zeros(map.n_rows(), n);
    let s_y = pred.y_ini_block();
    let s_ui = pred.u_ini_block();
    let s_un = pred.u_future_block();
    let w = map.t_ini * CHANNELS;
    for (r, row) in map.behaviour_rows().enumerate() {
        a[(row, map.y(0, 0) + r)] = 1.0;
        for j in 0..map.horizon * CHANNELS {
            a[(row, map.u(0, 0) + j)] = -s_un[(r, j)];
        }
        for j in 0..w {
            a[(row, map.sigma_y(j))] = -s_y[(r, j)];
            a[(row, map.sigma_u(j))] = -s_ui[(r, j)];
        }
    }
    for (k, row) in map.battery_rows().enumerate() {
        a[(row, map.u(k, BATTERY))] = 1.0;
        a[(row, map.y(k, WIND))] = 1.0;
        a[(row, map.y(k, SOLAR))] = 1.0;
    }
    for (i, row) in map.u_box_rows().enumerate() {
        a[(row, map.u(0, 0) + i)] = 1.0;
    }
    for (i, row) in map.y_box_rows().enumerate() {
        a[(row, map.y(0, 0) + i)] = 1.0;
    }
    a
}

fn row_bounds(pred: &Predictor, map: &IndexMap, hist: &History, hz: &HorizonData) -> (DVector<f64>, DVector<f64>) {
    let mut lb = DVector::zeros(map.n_rows());
    let mut ub = DVector::zeros(map.n_rows());
    let free = pred.y_ini_block() * hist.y_ini() + pred.u_ini_block() * hist.u_ini();
    for (r, row) in map.behaviour_rows().enumerate() {
        lb[row] = free[r];
        ub[row] = free[r];
    }
    for (k, row) in map.battery_rows().enumerate() {
        lb[row] = hz.p_ref[k];
        ub[row] = hz.p_ref[k];
    }
    for k in 0..map.horizon {
        let (lo, hi) = hz.bounds(k);
        for c in 0..CHANNELS {
            for rows in [map.u_box_rows(), map.y_box_rows()] {
                let row = rows.start + k * CHANNELS + c;
                lb[row] = lo[c];
                ub[row] = hi[c];
            }
        }
    }
    (lb, ub)
}

fn check_inputs(cfg: &ControllerConfig, pred: &Predictor, hist: &History, hz: &HorizonData) -> Result<IndexMap> {
    let map = check_dims(cfg, pred)?;
    if hist.is_empty() {
        return Err(Error::InvalidArgument("history is empty".into()));
    }
    if hist.t_ini() != cfg.t_ini || !hist.is_full() {
        return Err(Error::dim("history samples", cfg.t_ini, hist.len()));
    }
    hz.validate(cfg.horizon)?;
    Ok(map)
}

/// Builds the QP for one control step. Returns the problem, the variable
/// layout and the constant dropped from the objective.
pub fn build_problem(
    cfg: &ControllerConfig,
    pred: &Predictor,
    hist: &History,
    hz: &HorizonData,
    u_prev: Setpoints,
) -> Result<(QpProblem, IndexMap, f64)> {
    let map = check_inputs(cfg, pred, hist, hz)?;
    let y_last = hist.last_y().expect("history is full");
    let (g, constant) = linear_cost(cfg, &map, hz, u_prev.wind, y_last.wind);
    let (lb, ub) = row_bounds(pred, &map, hist, hz);
    let p = QpProblem::assemble(hessian(cfg, &map), g, constraint_matrix(pred, &map), lb, ub)?;
    Ok((p, map, constant))
}

/// Primal and dual iterate carried between consecutive steps.
#[derive(Debug, Clone, PartialEq)]
pub struct WarmStart {
    pub x: DVector<f64>,
    pub dual: DVector<f64>,
}

impl WarmStart {
    /// Shifts every per-sample block one sample forward, repeating the last
    /// sample.
    pub fn shifted(&self, map: &IndexMap) -> Self {
        let mut x = self.x.clone();
        let h = map.horizon * CHANNELS;
        let w = map.t_ini * CHANNELS;
        shift(&mut x, map.u(0, 0), h, CHANNELS);
        shift(&mut x, map.y(0, 0), h, CHANNELS);
        shift(&mut x, map.sigma_u(0), w, CHANNELS);
        shift(&mut x, map.sigma_y(0), w, CHANNELS);
        let mut dual = self.dual.clone();
        shift(&mut dual, map.behaviour_rows().start, h, CHANNELS);
        shift(&mut dual, map.battery_rows().start, map.horizon, 1);
        shift(&mut dual, map.u_box_rows().start, h, CHANNELS);
        shift(&mut dual, map.y_box_rows().start, h, CHANNELS);
        Self { x, dual }
    }
}

fn shift(v: &mut DVector<f64>, start: usize, len: usize, stride: usize) {
    if len <= stride {
        return;
    }
    for i in start..start + len - stride {
        v[i] = v[i + stride];
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlSolution {
    pub u_n: Vec<Setpoints>,
    pub y_n: Vec<Outputs>,
    pub sigma_u: DVector<f64>,
    pub sigma_y: DVector<f64>,
    /// Full objective including the constant dropped from the QP.
    pub objective: f64,
    /// `p_ref − ŷ_w − ŷ_s` per horizon sample.
    pub tracking_cost_per_step: Vec<f64>,
    pub status: QpStatus,
    pub iterations: usize,
    pub polished: bool,
    /// Largest violation of any box, battery or behaviour row (MW).
    pub max_violation: f64,
    pub warm: WarmStart,
}

impl ControlSolution {
    pub fn constraints_ok(&self) -> bool {
        self.max_violation <= CONSTRAINT_TOL
    }
}

fn unpack(map: &IndexMap, p: &QpProblem, constant: f64, hz: &HorizonData, s: QpSolution) -> Result<ControlSolution> {
    if s.status == QpStatus::Infeasible {
        return Err(Error::Infeasible);
    }
    let x = &s.x;
    let at = |i: usize| x[i];
    let u_n: Vec<Setpoints> = (0..map.horizon)
        .map(|k| Power3::new(at(map.u(k, 0)), at(map.u(k, 1)), at(map.u(k, 2))))
        .collect();
    let y_n: Vec<Outputs> = (0..map.horizon)
        .map(|k| Power3::new(at(map.y(k, 0)), at(map.y(k, 1)), at(map.y(k, 2))))
        .collect();
    let w = map.t_ini * CHANNELS;
    let sigma_u = DVector::from_fn(w, |i, _| at(map.sigma_u(i)));
    let sigma_y = DVector::from_fn(w, |i, _| at(map.sigma_y(i)));
    let tracking_cost_per_step = (0..map.horizon).map(|k| hz.p_ref[k] - y_n[k].wind - y_n[k].solar).collect();
    Ok(ControlSolution {
        u_n,
        y_n,
        sigma_u,
        sigma_y,
        objective: s.objective + constant,
        tracking_cost_per_step,
        status: s.status,
        iterations: s.iterations,
        polished: s.polished,
        max_violation: p.bound_violation(x).max(0.0),
        warm: WarmStart { x: s.x, dual: s.dual },
    })
}

/// Solves one step from scratch, optionally warm-started.
pub fn control_step(
    cfg: &ControllerConfig,
    pred: &Predictor,
    hist: &History,
    hz: &HorizonData,
    u_prev: Setpoints,
    warm: Option<&WarmStart>,
) -> Result<ControlSolution> {
    cfg.validate()?;
    let (p, map, constant) = build_problem(cfg, pred, hist, hz, u_prev)?;
    let mut solver = AdmmSolver::new(p, cfg.qp)?;
    if let Some(ws) = warm {
        solver.warm_start(&ws.x, &ws.dual)?;
    }
    let s = solve_tight(&mut solver)?;
    unpack(&map, solver.problem(), constant, hz, s)
}

/// Violation above which a solved step is refined before use, well inside
/// [`CONSTRAINT_TOL`].
const REFINE_VIOLATION: f64 = 1e-7;

/// Solves, and if the polish was rejected or the result violates a row by
/// more than [`REFINE_VIOLATION`], re-solves from it with tolerances
/// tightened to 1e-9.
fn solve_tight(solver: &mut AdmmSolver) -> Result<QpSolution> {
    let s = solver.solve();
    if s.status != QpStatus::Solved || (s.polished && solver.problem().bound_violation(&s.x) <= REFINE_VIOLATION) {
        return Ok(s);
    }
    let base = *solver.settings();
    solver.set_tolerances(1e-9, 1e-9, base.max_iter)?;
    solver.warm_start(&s.x, &s.dual)?;
    let tight = solver.solve();
    solver.set_tolerances(base.eps_abs, base.eps_rel, base.max_iter)?;
    Ok(if tight.status == QpStatus::Solved { tight } else { s })
}

/// Receding-horizon controller: keeps the QP factorisation and the previous
/// solution between steps.
pub struct SpcController {
    cfg: ControllerConfig,
    pred: Predictor,
    map: IndexMap,
    solver: Option<AdmmSolver>,
    last: Option<WarmStart>,
}

impl SpcController {
    pub fn new(cfg: ControllerConfig, pred: Predictor) -> Result<Self> {
        cfg.validate()?;
        let map = check_dims(&cfg, &pred)?;
        Ok(Self {
            cfg,
            pred,
            map,
            solver: None,
            last: None,
        })
    }

    pub fn config(&self) -> &ControllerConfig {
        &self.cfg
    }

    pub fn predictor(&self) -> &Predictor {
        &self.pred
    }

    pub fn index_map(&self) -> IndexMap {
        self.map
    }

    /// Forgets the previous solution so the next step starts cold.
    pub fn reset(&mut self) {
        self.last = None;
    }

    pub fn step(&mut self, hist: &History, hz: &HorizonData, u_prev: Setpoints) -> Result<ControlSolution> {
        let map = check_inputs(&self.cfg, &self.pred, hist, hz)?;
        let y_last = hist.last_y().expect("history is full");
        let (g, constant) = linear_cost(&self.cfg, &map, hz, u_prev.wind, y_last.wind);
        let (lb, ub) = row_bounds(&self.pred, &map, hist, hz);
        let solver = match self.solver.as_mut() {
            Some(s) => {
                s.update_vectors(g, lb, ub)?;
                s
            }
            None => {
                let p = QpProblem::assemble(hessian(&self.cfg, &map), g, constraint_matrix(&self.pred, &map), lb, ub)?;
                self.solver.insert(AdmmSolver::new(p, self.cfg.qp)?)
            }
        };
        if let Some(ws) = &self.last {
            solver.warm_start(&ws.x, &ws.dual)?;
        }
        let s = solve_tight(solver)?;
        let sol = unpack(&map, solver.problem(), constant, hz, s)?;
        self.last = Some(sol.warm.shifted(&map));
        Ok(sol)
    }
}

/// Per-component predicted outputs over the horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct Forecast {
    /// Absolute time of each sample (s).
    pub times: Vec<f64>,
    pub wind: Vec<f64>,
    pub solar: Vec<f64>,
    pub battery: Vec<f64>,
    pub total: Vec<f64>,
    pub battery_setpoint: Vec<f64>,
}

/// Forecast of the horizon starting at `t0` (s); sample `k` is at
/// `t0 + k·dt` for `k = 1..=N`.
pub fn forecast(sol: &ControlSolution, t0: f64, sample_dt: f64) -> Forecast {
    let n = sol.y_n.len();
    Forecast {
        times: (1..=n).map(|k| t0 + k as f64 * sample_dt).collect(),
        wind: sol.y_n.iter().map(|y| y.wind).collect(),
        solar: sol.y_n.iter().map(|y| y.solar).collect(),
        battery: sol.y_n.iter().map(|y| y.battery).collect(),
        total: sol.y_n.iter().map(|y| y.wind + y.solar + y.battery).collect(),
        battery_setpoint: sol.u_n.iter().map(|u| u.battery).collect(),
    }
}

/// Euclidean norms `(‖σ_u‖, ‖σ_y‖)` in MW.
pub fn relaxation_norms(sol: &ControlSolution) -> (f64, f64) {
    (sol.sigma_u.norm(), sol.sigma_y.norm())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::predictor::PredictorDims;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Predictor of the plant `y_k = u_k`: the future outputs copy the future
    /// inputs and ignore the initial window.
    fn identity_predictor(horizon: usize, t_ini: usize) -> Predictor {
        let dims = PredictorDims {
            t_ini,
            horizon,
            m: 3,
            p: 3,
        };
        let mut s = DMatrix::zeros(dims.rows(), dims.cols());
        let off = t_ini * 6;
        for i in 0..horizon * 3 {
            s[(i, off + i)] = 1.0;
        }
        Predictor::new(s, dims, 0.0).unwrap()
    }

    fn history(t_ini: usize, s: Setpoints) -> History {
        let mut h = History::new(t_ini);
        for _ in 0..t_ini {
            h.push(s, s);
        }
        h
    }

    fn horizon(n: usize, p_ref: f64, wind: f64, solar: f64) -> HorizonData {
        HorizonData {
            p_ref: vec![p_ref; n],
            wind_bound: vec![wind; n],
            solar_bound: vec![solar; n],
            battery_min: -4.0,
            battery_max: 4.0,
        }
    }

    fn small_cfg(n: usize) -> ControllerConfig {
        ControllerConfig {
            horizon: n,
            t_ini: n,
            ..Default::default()
        }
    }

    #[test]
    fn default_problem_has_240_variables_and_psd_hessian() {
        let cfg = ControllerConfig::default();
        let pred = identity_predictor(20, 20);
        let s = Setpoints::new(2.0, 1.0, 1.0);
        let (p, map, _) = build_problem(&cfg, &pred, &history(20, s), &horizon(20, 4.0, 3.0, 2.0), s).unwrap();
        assert_eq!(p.n(), 240);
        assert_eq!(map.n_vars(), 240);
        assert_eq!(p.mc(), 200);
        let min_eig = p.h.clone().symmetric_eigen().eigenvalues.min();
        assert!(min_eig >= -1e-10, "{min_eig}");
    }

    #[test]
    fn build_rejects_bad_inputs() {
        let cfg = small_cfg(3);
        let pred = identity_predictor(3, 3);
        let s = Setpoints::zero();
        assert!(build_problem(&cfg, &pred, &History::new(3), &horizon(3, 1.0, 1.0, 1.0), s).is_err());
        assert!(build_problem(&cfg, &pred, &history(3, s), &horizon(4, 1.0, 1.0, 1.0), s).is_err());
        assert!(build_problem(&cfg, &identity_predictor(4, 3), &history(3, s), &horizon(3, 1.0, 1.0, 1.0), s).is_err());
    }

    #[test]
    fn objective_matches_direct_evaluation() {
        let cfg = small_cfg(3);
        let pred = identity_predictor(3, 3);
        let s = Setpoints::new(1.0, 0.5, 0.2);
        let hist = history(3, s);
        let hz = HorizonData {
            p_ref: vec![2.0, 2.5, 3.0],
            ..horizon(3, 0.0, 3.0, 3.0)
        };
        let (p, map, constant) = build_problem(&cfg, &pred, &hist, &hz, s).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = DVector::from_fn(map.n_vars(), |_, _| rng.random_range(-1.0..1.0));
        let mut direct = 0.0;
        for k in 0..3 {
            let jt = hz.p_ref[k] - x[map.y(k, WIND)] - x[map.y(k, SOLAR)];
            let (pu, py) = if k == 0 {
                (s.wind, s.wind)
            } else {
                (x[map.u(k - 1, WIND)], x[map.y(k - 1, WIND)])
            };
            direct += 0.5 * cfg.q_r * jt * jt
                + cfg.lambda * (x[map.y(k, WIND)] - py).powi(2)
                + cfg.lambda * (x[map.u(k, WIND)] - pu).powi(2);
        }
        for i in 0..9 {
            direct += cfg.lambda_u * x[map.sigma_u(i)].powi(2) + cfg.lambda_y * x[map.sigma_y(i)].powi(2);
        }
        assert!((p.objective(&x) + constant - direct).abs() < 1e-12);
    }

    #[test]
    fn solution_respects_wind_bound_and_battery_rule() {
        let cfg = small_cfg(5);
        let pred = identity_predictor(5, 5);
        let s = Setpoints::new(2.0, 1.0, 1.0);
        let hz = HorizonData {
            wind_bound: vec![2.0, 1.8, 1.6, 1.4, 1.2],
            ..horizon(5, 4.0, 0.0, 1.5)
        };
        let sol = control_step(&cfg, &pred, &history(5, s), &hz, s, None).unwrap();
        assert_eq!(sol.status, QpStatus::Solved);
        assert!(sol.constraints_ok());
        for k in 0..5 {
            assert!(sol.u_n[k].wind <= hz.wind_bound[k] + 1e-6);
            let resid = sol.u_n[k].battery - (hz.p_ref[k] - sol.y_n[k].wind - sol.y_n[k].solar);
            assert!(resid.abs() <= 1e-6);
        }
    }

    #[test]
    fn consistent_history_needs_no_relaxation() {
        let cfg = small_cfg(4);
        let pred = identity_predictor(4, 4);
        let s = Setpoints::new(2.0, 1.0, 0.5);
        let sol = control_step(&cfg, &pred, &history(4, s), &horizon(4, 3.5, 3.0, 3.0), s, None).unwrap();
        let (nu, ny) = relaxation_norms(&sol);
        assert!(nu < 1e-6 && ny < 1e-6, "{nu} {ny}");
        // Reference within availability: renewables track it exactly.
        for j in &sol.tracking_cost_per_step {
            assert!(j.abs() < 1e-4, "{j}");
        }
    }

    // With only slack costs and every u/y pinned, the slacks are the
    // minimum-norm solution of the behaviour equation.
    #[test]
    fn slack_subproblem_matches_least_squares() {
        let (n, t) = (2, 2);
        let dims = PredictorDims {
            t_ini: t,
            horizon: n,
            m: 3,
            p: 3,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let s_star = DMatrix::from_fn(dims.rows(), dims.cols(), |_, _| rng.random_range(-0.5..0.5));
        let pred = Predictor::new(s_star, dims, 0.0).unwrap();
        let cfg = ControllerConfig {
            horizon: n,
            t_ini: t,
            q_r: 0.0,
            lambda: 0.0,
            lambda_u: 3.0,
            lambda_y: 3.0,
            ..Default::default()
        };
        let hist = History::from_samples(
            t,
            &[Power3::new(1.0, 0.5, 0.0), Power3::new(1.2, 0.4, 0.1)],
            &[Power3::new(0.9, 0.6, 0.0), Power3::new(1.1, 0.5, 0.2)],
        )
        .unwrap();
        let u_pin = [Power3::new(1.0, 1.0, 1.0), Power3::new(1.5, 0.5, 0.8)];
        let y_pin = [Power3::new(1.1, 0.9, 0.9), Power3::new(1.4, 0.6, 0.7)];
        let (mut p, map, _) = build_problem(&cfg, &pred, &hist, &horizon(n, 0.0, 4.0, 4.0), u_pin[0]).unwrap();
        for k in 0..n {
            let r = map.battery_rows().start + k;
            p.lb[r] = u_pin[k].battery + y_pin[k].wind + y_pin[k].solar;
            p.ub[r] = p.lb[r];
            for c in 0..3 {
                let ru = map.u_box_rows().start + k * 3 + c;
                let ry = map.y_box_rows().start + k * 3 + c;
                p.lb[ru] = u_pin[k].to_array()[c];
                p.ub[ru] = p.lb[ru];
                p.lb[ry] = y_pin[k].to_array()[c];
                p.ub[ry] = p.lb[ry];
            }
        }
        let sol = crate::qp::solve(&p, &cfg.qp).unwrap();
        assert_eq!(sol.status, QpStatus::Solved);

        let u_n = DVector::from_iterator(6, u_pin.iter().flat_map(|v| v.to_array()));
        let y_n = DVector::from_iterator(6, y_pin.iter().flat_map(|v| v.to_array()));
        let rhs = &y_n - pred.u_future_block() * &u_n - pred.y_ini_block() * hist.y_ini() - pred.u_ini_block() * hist.u_ini();
        let mut m = DMatrix::zeros(6, 12);
        m.columns_mut(0, 6).copy_from(&pred.y_ini_block());
        m.columns_mut(6, 6).copy_from(&pred.u_ini_block());
        let expected = m.pseudo_inverse(1e-12).unwrap() * rhs;
        for i in 0..6 {
            assert!((sol.x[map.sigma_y(i)] - expected[i]).abs() < 1e-6);
            assert!((sol.x[map.sigma_u(i)] - expected[6 + i]).abs() < 1e-6);
        }
    }

    #[test]
    fn warm_and_cold_solves_agree() {
        let cfg = small_cfg(6);
        let pred = identity_predictor(6, 6);
        let s = Setpoints::new(2.0, 1.0, 1.0);
        let mut hist = history(6, s);
        let mut ctl = SpcController::new(cfg.clone(), pred.clone()).unwrap();
        let mut u_prev = s;
        for step in 0..5 {
            let hz = HorizonData {
                p_ref: (0..6).map(|k| 3.0 + 0.1 * (step + k) as f64).collect(),
                ..horizon(6, 0.0, 2.5, 1.0)
            };
            let warm = ctl.step(&hist, &hz, u_prev).unwrap();
            let cold = control_step(&cfg, &pred, &hist, &hz, u_prev, None).unwrap();
            assert!((warm.objective - cold.objective).abs() <= 1e-6 * (1.0 + cold.objective.abs()));
            u_prev = warm.u_n[0];
            hist.push(u_prev, u_prev);
        }
    }

    #[test]
    fn tighter_quantile_lowers_wind_envelope() {
        let cfg = small_cfg(5);
        let pred = identity_predictor(5, 5);
        let s = Setpoints::new(2.0, 1.0, 1.0);
        let max_wind = |bound: f64| {
            let sol = control_step(&cfg, &pred, &history(5, s), &horizon(5, 4.5, bound, 1.0), s, None).unwrap();
            sol.u_n.iter().map(|u| u.wind).fold(f64::MIN, f64::max)
        };
        assert!(max_wind(1.5) <= max_wind(2.0) + 1e-9);
    }

    #[test]
    fn forecast_sums_and_anticipates_discharge() {
        let cfg = small_cfg(20);
        let pred = identity_predictor(20, 20);
        let s = Setpoints::new(2.0, 1.0, 0.0);
        let hz = HorizonData {
            p_ref: (0..20).map(|k| if k < 10 { 2.5 } else { 4.0 }).collect(),
            ..horizon(20, 0.0, 2.0, 1.0)
        };
        let sol = control_step(&cfg, &pred, &history(20, s), &hz, s, None).unwrap();
        let f = forecast(&sol, 100.0, 20.0);
        assert_eq!(f.times.len(), 20);
        assert_eq!(f.times[0], 120.0);
        assert_eq!(f.times[19] - 100.0, 400.0);
        for k in 0..20 {
            assert_eq!(f.total[k], f.wind[k] + f.solar[k] + f.battery[k]);
            if f.wind[k] + f.solar[k] < hz.p_ref[k] - 1e-3 {
                assert!(f.battery_setpoint[k] > 0.0);
            }
        }
        assert!(f.battery_setpoint[19] > 0.9);
    }

    #[test]
    fn relaxation_norms_are_homogeneous() {
        let cfg = small_cfg(2);
        let pred = identity_predictor(2, 2);
        let s = Setpoints::new(1.0, 1.0, 0.0);
        let mut sol = control_step(&cfg, &pred, &history(2, s), &horizon(2, 2.0, 2.0, 2.0), s, None).unwrap();
        sol.sigma_u.fill(0.0);
        sol.sigma_y.fill(0.0);
        assert_eq!(relaxation_norms(&sol), (0.0, 0.0));
        sol.sigma_u[0] = 0.3;
        sol.sigma_y[1] = -0.4;
        let (a, b) = relaxation_norms(&sol);
        sol.sigma_u *= 2.0;
        sol.sigma_y *= 2.0;
        assert_eq!(relaxation_norms(&sol), (2.0 * a, 2.0 * b));
    }

    #[test]
    fn history_keeps_latest_samples_in_order() {
        let mut h = History::new(2);
        for i in 0..4 {
            let v = i as f64;
            h.push(Power3::new(v, 0.0, 0.0), Power3::new(0.0, v, 0.0));
        }
        assert!(h.is_full());
        assert_eq!(h.u_ini().as_slice(), &[2.0, 0.0, 0.0, 3.0, 0.0, 0.0]);
        assert_eq!(h.y_ini().as_slice(), &[0.0, 2.0, 0.0, 0.0, 3.0, 0.0]);
    }
}
