//! Dense convex QP solver for
//!
//! ```text
//! minimize ½xᵀHx + gᵀx   subject to   lb ≤ Ax ≤ ub
//! ```
//!
//! ADMM operator splitting with over-relaxation, Ruiz equilibration and an
//! adaptive penalty, followed by an active-set polish. The factorisation is
//! cached in [`AdmmSolver`] so a sequence of problems that only differ in
//! `g`, `lb` and `ub` reuses it.

use std::path::Path;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::csvfmt::{self, fmt_exact, CsvDoc};
use crate::error::{Error, Result};

const RHO_MIN: f64 = 1e-6;
const RHO_MAX: f64 = 1e6;
const RHO_EQ_FACTOR: f64 = 1e3;
const EQ_TOL: f64 = 1e-4;
const SCALE_MIN: f64 = 1e-4;

/// Unscaled primal, constraint value and dual.
type Iterate = (DVector<f64>, DVector<f64>, DVector<f64>);
const SCALE_MAX: f64 = 1e4;

fn inf_norm(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    pub h: DMatrix<f64>,
    pub g: DVector<f64>,
    pub a: DMatrix<f64>,
    pub lb: DVector<f64>,
    pub ub: DVector<f64>,
}

impl QpProblem {
    /// Validates shapes and bounds and symmetrises `H`. Equality rows have
    /// `lb == ub`; missing bounds are `±∞`.
    pub fn assemble(
        h: DMatrix<f64>,
        g: DVector<f64>,
        a: DMatrix<f64>,
        lb: DVector<f64>,
        ub: DVector<f64>,
    ) -> Result<Self> {
        let n = g.len();
        if h.nrows() != n || h.ncols() != n {
            return Err(Error::dim("H", n * n, h.nrows() * h.ncols()));
        }
        if a.ncols() != n {
            return Err(Error::dim("columns of A", n, a.ncols()));
        }
        let mc = a.nrows();
        if lb.len() != mc {
            return Err(Error::dim("lb", mc, lb.len()));
        }
        if ub.len() != mc {
            return Err(Error::dim("ub", mc, ub.len()));
        }
        if h.iter().chain(g.iter()).chain(a.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("QP data"));
        }
        check_bounds(&lb, &ub)?;
        let scale = h.amax().max(1.0);
        let skew = (&h - h.transpose()).amax() / 2.0;
        if skew > 1e-12 * scale {
            return Err(Error::InvalidArgument(format!("H is not symmetric (skew part {skew:e})")));
        }
        let h = (&h + h.transpose()) * 0.5;
        Ok(Self { h, g, a, lb, ub })
    }

    pub fn n(&self) -> usize {
        self.g.len()
    }

    pub fn mc(&self) -> usize {
        self.lb.len()
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.h * x)) + self.g.dot(x)
    }

    /// Largest violation of `lb ≤ Ax ≤ ub`.
    pub fn bound_violation(&self, x: &DVector<f64>) -> f64 {
        let ax = &self.a * x;
        (0..self.mc()).fold(0.0, |m, i| m.max(self.lb[i] - ax[i]).max(ax[i] - self.ub[i]))
    }

    /// Writes `H.csv`, `g.csv`, `A.csv` and `bounds.csv` into `dir`.
    pub fn dump_csv(&self, dir: &Path) -> Result<()> {
        let matrix = |m: &DMatrix<f64>| {
            let mut s = String::new();
            for i in 0..m.nrows() {
                let row: Vec<String> = m.row(i).iter().map(|&v| fmt_exact(v)).collect();
                s.push_str(&row.join(","));
                s.push('\n');
            }
            s
        };
        csvfmt::write_atomic(&dir.join("H.csv"), matrix(&self.h).as_bytes())?;
        csvfmt::write_atomic(&dir.join("A.csv"), matrix(&self.a).as_bytes())?;
        let mut g = CsvDoc::new(&["g"]);
        for v in self.g.iter() {
            g.push_fields([fmt_exact(*v)]);
        }
        csvfmt::write_atomic(&dir.join("g.csv"), &g.into_bytes())?;
        let mut b = CsvDoc::new(&["lb", "ub"]);
        for i in 0..self.mc() {
            b.push_fields([fmt_exact(self.lb[i]), fmt_exact(self.ub[i])]);
        }
        csvfmt::write_atomic(&dir.join("bounds.csv"), &b.into_bytes())
    }
}

fn check_bounds(lb: &DVector<f64>, ub: &DVector<f64>) -> Result<()> {
    for i in 0..lb.len() {
        if lb[i].is_nan() || ub[i].is_nan() {
            return Err(Error::NonFinite("QP bounds"));
        }
        if lb[i] == f64::INFINITY || ub[i] == f64::NEG_INFINITY {
            return Err(Error::InvalidArgument(format!("row {i}: bound is infinite on the wrong side")));
        }
        if lb[i] > ub[i] {
            return Err(Error::InvalidArgument(format!("row {i}: lb {} > ub {}", lb[i], ub[i])));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QpSettings {
    pub eps_abs: f64,
    pub eps_rel: f64,
    /// Tolerance of the primal infeasibility certificate.
    pub eps_prim_inf: f64,
    pub max_iter: usize,
    pub rho: f64,
    pub sigma: f64,
    /// Over-relaxation factor in (0, 2).
    pub alpha: f64,
    pub adaptive_rho: bool,
    pub adaptive_rho_interval: usize,
    pub adaptive_rho_tolerance: f64,
    /// Residuals are evaluated every this many iterations.
    pub check_interval: usize,
    pub scaling_iters: usize,
    pub polish: bool,
    pub polish_delta: f64,
    pub polish_refine_iter: usize,
}

impl Default for QpSettings {
    fn default() -> Self {
        Self {
            eps_abs: 1e-6,
            eps_rel: 1e-6,
            eps_prim_inf: 1e-5,
            max_iter: 20_000,
            rho: 0.1,
            sigma: 1e-6,
            alpha: 1.6,
            adaptive_rho: true,
            adaptive_rho_interval: 25,
            adaptive_rho_tolerance: 5.0,
            check_interval: 5,
            scaling_iters: 10,
            polish: true,
            polish_delta: 1e-6,
            polish_refine_iter: 5,
        }
    }
}

impl QpSettings {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("eps_prim_inf", self.eps_prim_inf),
            ("rho", self.rho),
            ("sigma", self.sigma),
            ("polish_delta", self.polish_delta),
            ("adaptive_rho_tolerance", self.adaptive_rho_tolerance),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("qp.{name} must be positive, got {v}")));
            }
        }
        if !(self.eps_abs >= 0.0 && self.eps_rel >= 0.0 && self.eps_abs + self.eps_rel > 0.0) {
            return Err(Error::Config("qp tolerances must be non-negative and not both zero".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 2.0) {
            return Err(Error::Config(format!("qp.alpha must lie in (0, 2), got {}", self.alpha)));
        }
        if self.max_iter == 0 || self.check_interval == 0 || self.adaptive_rho_interval == 0 {
            return Err(Error::Config("qp iteration counts must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QpStatus {
    Solved,
    MaxIter,
    Infeasible,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub x: DVector<f64>,
    /// Multipliers with `Hx + g + Aᵀ·dual = 0`; negative at a lower bound,
    /// positive at an upper bound.
    pub dual: DVector<f64>,
    pub status: QpStatus,
    pub iterations: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub objective: f64,
    pub polished: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KktResiduals {
    pub stationarity: f64,
    pub primal_feasibility: f64,
    pub complementarity: f64,
}

/// ∞-norms of the KKT conditions at `(x, dual)`. Complementarity is
/// `|dual_i|·gap_i` towards the bound the multiplier points at; a multiplier
/// pointing at an infinite bound counts with its magnitude.
pub fn kkt_residuals(p: &QpProblem, x: &DVector<f64>, dual: &DVector<f64>) -> KktResiduals {
    let stationarity = inf_norm(&(&p.h * x + &p.g + p.a.tr_mul(dual)));
    let ax = &p.a * x;
    let mut complementarity: f64 = 0.0;
    for i in 0..p.mc() {
        let y = dual[i];
        let c = if y > 0.0 {
            if p.ub[i].is_finite() {
                y * (p.ub[i] - ax[i]).abs()
            } else {
                y
            }
        } else if y < 0.0 {
            if p.lb[i].is_finite() {
                -y * (ax[i] - p.lb[i]).abs()
            } else {
                -y
            }
        } else {
            0.0
        };
        complementarity = complementarity.max(c);
    }
    KktResiduals {
        stationarity,
        primal_feasibility: p.bound_violation(x),
        complementarity,
    }
}

#[derive(Debug, Clone)]
struct Scaling {
    d: DVector<f64>,
    e: DVector<f64>,
    c: f64,
}

fn limited(norm: f64) -> f64 {
    if norm < SCALE_MIN {
        1.0
    } else {
        norm.min(SCALE_MAX)
    }
}

/// Ruiz equilibration of the KKT matrix plus a cost scaling.
fn equilibrate(h: &DMatrix<f64>, a: &DMatrix<f64>, g: &DVector<f64>, iters: usize) -> (DMatrix<f64>, DMatrix<f64>, Scaling) {
    let (n, mc) = (h.nrows(), a.nrows());
    let mut p = h.clone();
    let mut am = a.clone();
    let mut q = g.clone();
    let mut d = DVector::from_element(n, 1.0);
    let mut e = DVector::from_element(mc, 1.0);
    let mut c = 1.0;
    for _ in 0..iters {
        let dt = DVector::from_fn(n, |j, _| {
            let norm = p.column(j).amax().max(if mc > 0 { am.column(j).amax() } else { 0.0 });
            1.0 / limited(norm).sqrt()
        });
        let et = DVector::from_fn(mc, |i, _| 1.0 / limited(am.row(i).amax()).sqrt());
        for j in 0..n {
            p.column_mut(j).scale_mut(dt[j]);
            am.column_mut(j).scale_mut(dt[j]);
        }
        for i in 0..n {
            p.row_mut(i).scale_mut(dt[i]);
        }
        for i in 0..mc {
            am.row_mut(i).scale_mut(et[i]);
        }
        q.component_mul_assign(&dt);
        d.component_mul_assign(&dt);
        e.component_mul_assign(&et);

        let mean_col = if n > 0 {
            (0..n).map(|j| p.column(j).amax()).sum::<f64>() / n as f64
        } else {
            0.0
        };
        let gamma = 1.0 / limited(mean_col.max(inf_norm(&q)));
        p *= gamma;
        q *= gamma;
        c *= gamma;
    }
    (p, am, Scaling { d, e, c })
}

/// Reusable ADMM workspace. The matrices `H` and `A` are fixed at
/// construction; [`AdmmSolver::update_vectors`] swaps `g`, `lb` and `ub`.
pub struct AdmmSolver {
    prob: QpProblem,
    settings: QpSettings,
    p_s: DMatrix<f64>,
    a_s: DMatrix<f64>,
    q_s: DVector<f64>,
    l_s: DVector<f64>,
    u_s: DVector<f64>,
    scale: Scaling,
    rho: f64,
    rho_vec: DVector<f64>,
    factor: Cholesky<f64, Dyn>,
    x: DVector<f64>,
    z: DVector<f64>,
    y: DVector<f64>,
}

impl AdmmSolver {
    pub fn new(prob: QpProblem, settings: QpSettings) -> Result<Self> {
        settings.validate()?;
        let (p_s, a_s, scale) = equilibrate(&prob.h, &prob.a, &prob.g, settings.scaling_iters);
        let q_s = prob.g.component_mul(&scale.d) * scale.c;
        let l_s = prob.lb.component_mul(&scale.e);
        let u_s = prob.ub.component_mul(&scale.e);
        let rho = settings.rho;
        let rho_vec = rho_vector(rho, &l_s, &u_s);
        let factor = factorize(&p_s, &a_s, &rho_vec, settings.sigma)?;
        let (n, mc) = (prob.n(), prob.mc());
        Ok(Self {
            prob,
            settings,
            p_s,
            a_s,
            q_s,
            l_s,
            u_s,
            scale,
            rho,
            rho_vec,
            factor,
            x: DVector::zeros(n),
            z: DVector::zeros(mc),
            y: DVector::zeros(mc),
        })
    }

    pub fn problem(&self) -> &QpProblem {
        &self.prob
    }

    pub fn settings(&self) -> &QpSettings {
        &self.settings
    }

    /// Changes the tolerances and iteration limits used by later solves.
    pub fn set_tolerances(&mut self, eps_abs: f64, eps_rel: f64, max_iter: usize) -> Result<()> {
        let s = QpSettings {
            eps_abs,
            eps_rel,
            max_iter,
            ..self.settings
        };
        s.validate()?;
        self.settings = s;
        Ok(())
    }

    /// Replaces the linear cost and the bounds, refactoring only if the set
    /// of equality or free rows changed.
    pub fn update_vectors(&mut self, g: DVector<f64>, lb: DVector<f64>, ub: DVector<f64>) -> Result<()> {
        if g.len() != self.prob.n() {
            return Err(Error::dim("g", self.prob.n(), g.len()));
        }
        if lb.len() != self.prob.mc() || ub.len() != self.prob.mc() {
            return Err(Error::dim("bounds", self.prob.mc(), lb.len().min(ub.len())));
        }
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("QP linear cost"));
        }
        check_bounds(&lb, &ub)?;
        self.q_s = g.component_mul(&self.scale.d) * self.scale.c;
        self.l_s = lb.component_mul(&self.scale.e);
        self.u_s = ub.component_mul(&self.scale.e);
        self.prob.g = g;
        self.prob.lb = lb;
        self.prob.ub = ub;
        let rho_vec = rho_vector(self.rho, &self.l_s, &self.u_s);
        if rho_vec != self.rho_vec {
            self.rho_vec = rho_vec;
            self.factor = factorize(&self.p_s, &self.a_s, &self.rho_vec, self.settings.sigma)?;
        }
        Ok(())
    }

    /// Starts the next solve from the given primal and dual iterate.
    pub fn warm_start(&mut self, x: &DVector<f64>, dual: &DVector<f64>) -> Result<()> {
        if x.len() != self.prob.n() {
            return Err(Error::dim("warm-start x", self.prob.n(), x.len()));
        }
        if dual.len() != self.prob.mc() {
            return Err(Error::dim("warm-start dual", self.prob.mc(), dual.len()));
        }
        if x.iter().chain(dual.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("warm start"));
        }
        self.x = x.component_div(&self.scale.d);
        self.y = dual.component_div(&self.scale.e) * self.scale.c;
        self.z = &self.a_s * &self.x;
        Ok(())
    }

    /// Unscaled `(x, z, y)` of the current iterate.
    fn unscaled(&self) -> (DVector<f64>, DVector<f64>, DVector<f64>) {
        let x = self.x.component_mul(&self.scale.d);
        let z = self.z.component_div(&self.scale.e);
        let y = self.y.component_mul(&self.scale.e) / self.scale.c;
        (x, z, y)
    }

    /// Returns `(r_prim, r_dual, eps_prim, eps_dual)` in original units.
    fn residuals(&self, x: &DVector<f64>, z: &DVector<f64>, y: &DVector<f64>) -> (f64, f64, f64, f64) {
        let p = &self.prob;
        let s = &self.settings;
        let ax = &p.a * x;
        let hx = &p.h * x;
        let aty = p.a.tr_mul(y);
        let rp = inf_norm(&(&ax - z));
        let rd = inf_norm(&(&hx + &p.g + &aty));
        let ep = s.eps_abs + s.eps_rel * inf_norm(&ax).max(inf_norm(z));
        let ed = s.eps_abs + s.eps_rel * inf_norm(&hx).max(inf_norm(&aty)).max(inf_norm(&p.g));
        (rp, rd, ep, ed)
    }

    fn adapt_rho(&mut self) -> Result<()> {
        let ax = &self.a_s * &self.x;
        let px = &self.p_s * &self.x;
        let aty = self.a_s.tr_mul(&self.y);
        let prim = inf_norm(&(&ax - &self.z)) / inf_norm(&ax).max(inf_norm(&self.z)).max(1e-30);
        let dual = inf_norm(&(&px + &self.q_s + &aty))
            / inf_norm(&px).max(inf_norm(&aty)).max(inf_norm(&self.q_s)).max(1e-30);
        let candidate = (self.rho * (prim / dual.max(1e-30)).sqrt()).clamp(RHO_MIN, RHO_MAX);
        let tol = self.settings.adaptive_rho_tolerance;
        if candidate > self.rho * tol || candidate < self.rho / tol {
            self.rho = candidate;
            self.rho_vec = rho_vector(self.rho, &self.l_s, &self.u_s);
            self.factor = factorize(&self.p_s, &self.a_s, &self.rho_vec, self.settings.sigma)?;
        }
        Ok(())
    }

    /// Primal infeasibility certificate from the last dual increment.
    fn certifies_infeasible(&self, dy_scaled: &DVector<f64>) -> bool {
        let p = &self.prob;
        let dy = dy_scaled.component_mul(&self.scale.e) / self.scale.c;
        let norm = inf_norm(&dy);
        let eps = self.settings.eps_prim_inf;
        if !(norm > eps) {
            return false;
        }
        if inf_norm(&p.a.tr_mul(&dy)) > eps * norm {
            return false;
        }
        let mut support = 0.0;
        for i in 0..p.mc() {
            let (v, bound) = if dy[i] > 0.0 {
                (dy[i], p.ub[i])
            } else {
                (dy[i], p.lb[i])
            };
            if v == 0.0 {
                continue;
            }
            if !bound.is_finite() {
                if v.abs() <= eps * norm {
                    continue;
                }
                return false;
            }
            support += bound * v;
        }
        support < -eps * norm
    }

    pub fn solve(&mut self) -> QpSolution {
        let s = self.settings;
        let n = self.prob.n();
        let mut y_prev = self.y.clone();
        let mut best: Option<(f64, Iterate)> = None;
        let mut status = QpStatus::MaxIter;
        let mut iterations = s.max_iter;
        let mut last_res = (f64::INFINITY, f64::INFINITY, 0.0, 0.0);

        for iter in 1..=s.max_iter {
            y_prev.copy_from(&self.y);
            let rz = self.rho_vec.component_mul(&self.z) - &self.y;
            let rhs = &self.x * s.sigma - &self.q_s + self.a_s.tr_mul(&rz);
            let xt = self.factor.solve(&rhs);
            let zt = &self.a_s * &xt;
            let x_new = &xt * s.alpha + &self.x * (1.0 - s.alpha);
            let z_relax = &zt * s.alpha + &self.z * (1.0 - s.alpha);
            let mut z_new = &z_relax + self.y.component_div(&self.rho_vec);
            for i in 0..z_new.len() {
                z_new[i] = z_new[i].clamp(self.l_s[i], self.u_s[i]);
            }
            self.y += self.rho_vec.component_mul(&(&z_relax - &z_new));
            self.x = x_new;
            self.z = z_new;

            if iter % s.check_interval != 0 && iter != s.max_iter {
                continue;
            }
            let (x, z, y) = self.unscaled();
            let res = self.residuals(&x, &z, &y);
            last_res = res;
            let (rp, rd, ep, ed) = res;
            if rp <= ep && rd <= ed {
                status = QpStatus::Solved;
                iterations = iter;
                best = Some((0.0, (x, z, y)));
                break;
            }
            let merit = (rp / ep).max(rd / ed);
            if best.as_ref().is_none_or(|b| merit < b.0) {
                best = Some((merit, (x, z, y)));
            }
            let dy = &self.y - &y_prev;
            if self.certifies_infeasible(&dy) {
                status = QpStatus::Infeasible;
                iterations = iter;
                break;
            }
            if s.adaptive_rho && iter % s.adaptive_rho_interval == 0 && self.adapt_rho().is_err() {
                break;
            }
        }

        if status == QpStatus::Infeasible {
            let (x, _, y) = self.unscaled();
            return QpSolution {
                objective: self.prob.objective(&x),
                x,
                dual: y,
                status,
                iterations,
                primal_residual: last_res.0,
                dual_residual: last_res.1,
                polished: false,
            };
        }

        let (x, z, y) = match best {
            Some((_, iterate)) => iterate,
            None => self.unscaled(),
        };
        let (rp, rd, ep, ed) = self.residuals(&x, &z, &y);
        if status == QpStatus::Solved && s.polish {
            if let Some((xp, yp)) = polish(&self.prob, &z, &y, &s) {
                let zp = clamp_to_bounds(&self.prob, &(&self.prob.a * &xp));
                let (rpp, rdp, _, _) = self.residuals(&xp, &zp, &yp);
                if rpp <= ep.max(rp) && rdp <= ed.max(rd) {
                    return QpSolution {
                        objective: self.prob.objective(&xp),
                        x: xp,
                        dual: yp,
                        status,
                        iterations,
                        primal_residual: rpp,
                        dual_residual: rdp,
                        polished: true,
                    };
                }
            }
        }
        debug_assert_eq!(x.len(), n);
        QpSolution {
            objective: self.prob.objective(&x),
            x,
            dual: y,
            status,
            iterations,
            primal_residual: rp,
            dual_residual: rd,
            polished: false,
        }
    }
}

fn rho_vector(rho: f64, l: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
    DVector::from_fn(l.len(), |i, _| {
        if l[i] == f64::NEG_INFINITY && u[i] == f64::INFINITY {
            RHO_MIN
        } else if u[i] - l[i] < EQ_TOL {
            (rho * RHO_EQ_FACTOR).min(RHO_MAX)
        } else {
            rho
        }
    })
}

fn factorize(p: &DMatrix<f64>, a: &DMatrix<f64>, rho: &DVector<f64>, sigma: f64) -> Result<Cholesky<f64, Dyn>> {
    let mut ra = a.clone();
    for i in 0..ra.nrows() {
        ra.row_mut(i).scale_mut(rho[i]);
    }
    let mut k = a.tr_mul(&ra) + p;
    for i in 0..k.nrows() {
        k[(i, i)] += sigma;
    }
    Cholesky::new(k).ok_or_else(|| Error::Numerical("ADMM system matrix is not positive definite".into()))
}

fn clamp_to_bounds(p: &QpProblem, ax: &DVector<f64>) -> DVector<f64> {
    DVector::from_fn(ax.len(), |i, _| ax[i].clamp(p.lb[i], p.ub[i]))
}

/// Solves the equality-constrained problem on the active set guessed from
/// `(z, y)`. Returns `None` when the reduced system is singular or the
/// multipliers point the wrong way.
fn polish(
    p: &QpProblem,
    z: &DVector<f64>,
    y: &DVector<f64>,
    s: &QpSettings,
) -> Option<(DVector<f64>, DVector<f64>)> {
    #[derive(Clone, Copy, PartialEq)]
    enum Side {
        Lower,
        Upper,
        Both,
    }
    let n = p.n();
    let mut active = Vec::new();
    for i in 0..p.mc() {
        if p.lb[i] == p.ub[i] {
            active.push((i, p.lb[i], Side::Both));
        } else if z[i] - p.lb[i] < -y[i] {
            active.push((i, p.lb[i], Side::Lower));
        } else if p.ub[i] - z[i] < y[i] {
            active.push((i, p.ub[i], Side::Upper));
        }
    }
    let k = active.len();
    let dim = n + k;
    let mut kkt = DMatrix::zeros(dim, dim);
    kkt.view_mut((0, 0), (n, n)).copy_from(&p.h);
    for (r, &(i, _, _)) in active.iter().enumerate() {
        for j in 0..n {
            let v = p.a[(i, j)];
            kkt[(n + r, j)] = v;
            kkt[(j, n + r)] = v;
        }
    }
    let mut rhs = DVector::zeros(dim);
    rhs.rows_mut(0, n).copy_from(&(-&p.g));
    for (r, &(_, b, _)) in active.iter().enumerate() {
        rhs[n + r] = b;
    }
    let mut reg = kkt.clone();
    for i in 0..dim {
        reg[(i, i)] += if i < n { s.polish_delta } else { -s.polish_delta };
    }
    let lu = reg.lu();
    let mut sol = lu.solve(&rhs)?;
    for _ in 0..s.polish_refine_iter {
        let r = &rhs - &kkt * &sol;
        sol += lu.solve(&r)?;
    }
    if sol.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let xp = sol.rows(0, n).into_owned();
    let mut yp = DVector::zeros(p.mc());
    let sign_tol = s.eps_abs + s.eps_rel * inf_norm(y);
    for (r, &(i, _, side)) in active.iter().enumerate() {
        let v = sol[n + r];
        match side {
            Side::Lower if v > sign_tol => return None,
            Side::Upper if v < -sign_tol => return None,
            _ => {}
        }
        yp[i] = v;
    }
    Some((xp, yp))
}

/// One-shot solve from a cold start.
pub fn solve(p: &QpProblem, settings: &QpSettings) -> Result<QpSolution> {
    let mut solver = AdmmSolver::new(p.clone(), *settings)?;
    Ok(solver.solve())
}
