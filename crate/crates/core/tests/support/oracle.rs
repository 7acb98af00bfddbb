//! Brute-force QP reference: every row is inactive, at its lower bound or at
//! its upper bound; each combination gives an equality-constrained KKT
//! system, and the cheapest primal-feasible stationary point is the optimum.

use hybrid_spc::qp::QpProblem;
use nalgebra::{DMatrix, DVector};

pub fn enumerate_optimum(p: &QpProblem) -> Option<(DVector<f64>, f64)> {
    let n = p.n();
    let mc = p.mc();
    let mut best: Option<(DVector<f64>, f64)> = None;
    let total = 3usize.pow(mc as u32);
    for code in 0..total {
        let mut rows = Vec::new();
        let mut c = code;
        let mut usable = true;
        for i in 0..mc {
            let state = c % 3;
            c /= 3;
            let bound = match state {
                0 => continue,
                1 => p.lb[i],
                _ => p.ub[i],
            };
            if !bound.is_finite() || (state == 2 && p.lb[i] == p.ub[i]) {
                usable = false;
                break;
            }
            rows.push((i, bound));
        }
        if !usable {
            continue;
        }
        let k = rows.len();
        let mut kkt = DMatrix::zeros(n + k, n + k);
        kkt.view_mut((0, 0), (n, n)).copy_from(&p.h);
        let mut rhs = DVector::zeros(n + k);
        for j in 0..n {
            rhs[j] = -p.g[j];
        }
        for (r, &(i, b)) in rows.iter().enumerate() {
            for j in 0..n {
                kkt[(n + r, j)] = p.a[(i, j)];
                kkt[(j, n + r)] = p.a[(i, j)];
            }
            rhs[n + r] = b;
        }
        let Some(sol) = kkt.lu().solve(&rhs) else {
            continue;
        };
        let x = sol.rows(0, n).into_owned();
        if !x.iter().all(|v| v.is_finite()) || p.bound_violation(&x) > 1e-9 {
            continue;
        }
        let obj = p.objective(&x);
        if best.as_ref().is_none_or(|b| obj < b.1) {
            best = Some((x, obj));
        }
    }
    best
}
