use hybrid_spc::qp::QpProblem;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Strictly convex problem with a known feasible point; some rows are
/// equalities and some one-sided.
pub fn random_problem(seed: u64) -> QpProblem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(1..=6);
    let mc = rng.random_range(1..=8);
    let b = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    let h = b.transpose() * &b + DMatrix::identity(n, n) * 0.1;
    let g = DVector::from_fn(n, |_, _| rng.random_range(-3.0..3.0));
    let a = DMatrix::from_fn(mc, n, |_, _| rng.random_range(-1.0..1.0));
    let x0 = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
    let ax0 = &a * &x0;
    let mut lb = DVector::zeros(mc);
    let mut ub = DVector::zeros(mc);
    for i in 0..mc {
        match rng.random_range(0..6) {
            0 if i < n => {
                lb[i] = ax0[i];
                ub[i] = ax0[i];
            }
            1 => {
                lb[i] = f64::NEG_INFINITY;
                ub[i] = ax0[i] + rng.random_range(0.0..0.5);
            }
            2 => {
                lb[i] = ax0[i] - rng.random_range(0.0..0.5);
                ub[i] = f64::INFINITY;
            }
            _ => {
                lb[i] = ax0[i] - rng.random_range(0.0..0.5);
                ub[i] = ax0[i] + rng.random_range(0.0..0.5);
            }
        }
    }
    QpProblem::assemble(h, g, a, lb, ub).unwrap()
}
