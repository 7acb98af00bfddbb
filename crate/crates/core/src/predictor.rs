//! Multi-step least-squares predictor `y_N = S·[y_ini; u_ini; u_N]`.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::csvfmt::{self, fmt_exact};
use crate::datagen::{excitation_rank, Blocks};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictorDims {
    pub t_ini: usize,
    pub horizon: usize,
    pub m: usize,
    pub p: usize,
}

impl PredictorDims {
    pub fn rows(&self) -> usize {
        self.horizon * self.p
    }

    pub fn cols(&self) -> usize {
        self.t_ini * self.p + self.t_ini * self.m + self.horizon * self.m
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitOptions {
    /// Singular values below `rcond·σ_max` are discarded.
    pub rcond: f64,
    /// Tikhonov weight; 0 gives the Moore–Penrose solution.
    pub ridge: f64,
    /// `σ_max` below this is treated as an all-zero regressor.
    pub abs_floor: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            rcond: 1e-10,
            ridge: 0.0,
            abs_floor: 1e-300,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Predictor {
    pub s_star: DMatrix<f64>,
    pub dims: PredictorDims,
    pub fit_residual_fro: f64,
    /// False when the training inputs were not persistently exciting.
    pub excitation_ok: bool,
    /// RMS of each output channel in the training data; empty if unknown.
    pub output_rms: Vec<f64>,
}

/// Minimum-norm least-squares fit of `S·M ≈ Y_N` through the SVD of `M`.
pub fn fit(b: &Blocks, opts: &FitOptions) -> Result<Predictor> {
    let dims = PredictorDims {
        t_ini: b.t_ini,
        horizon: b.horizon,
        m: b.m,
        p: b.p,
    };
    let m = &b.regressor;
    if m.nrows() != dims.cols() || b.y_future.nrows() != dims.rows() || b.y_future.ncols() != m.ncols() {
        return Err(Error::dim("regressor rows", dims.cols(), m.nrows()));
    }
    if m.ncols() == 0 {
        return Err(Error::DegenerateRegressor(0.0));
    }
    if m.iter().chain(b.y_future.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("training blocks"));
    }
    let excitation_ok = excitation_rank(b).is_sufficient;

    // Work on the tall orientation so the thin SVD is cheap.
    let svd = m.transpose().svd(true, true);
    let sigma = &svd.singular_values;
    let sigma_max = sigma.iter().copied().fold(0.0, f64::max);
    if !(sigma_max > opts.abs_floor) {
        return Err(Error::DegenerateRegressor(sigma_max));
    }
    let cutoff = opts.rcond * sigma_max;
    // Mᵀ = U Σ Vᵀ  ⇒  M† = U Σ⁺ Vᵀ and S = Y_N U Σ⁺ Vᵀ.
    let u = svd.u.as_ref().expect("requested U");
    let v_t = svd.v_t.as_ref().expect("requested Vᵀ");
    let filter = DVector::from_iterator(
        sigma.len(),
        sigma.iter().map(|&s| {
            if s <= cutoff {
                0.0
            } else if opts.ridge > 0.0 {
                s / (s * s + opts.ridge)
            } else {
                1.0 / s
            }
        }),
    );
    let mut yu = &b.y_future * u;
    for (j, f) in filter.iter().enumerate() {
        yu.column_mut(j).scale_mut(*f);
    }
    let s_star = yu * v_t;
    let fit_residual_fro = (&s_star * m - &b.y_future).norm();
    let output_rms = (0..b.p)
        .map(|c| {
            let rows = (c..b.y_ini.nrows()).step_by(b.p).map(|r| b.y_ini.row(r).norm_squared());
            let rows_f = (c..b.y_future.nrows()).step_by(b.p).map(|r| b.y_future.row(r).norm_squared());
            let count = (b.t_ini + b.horizon) * m.ncols();
            (rows.chain(rows_f).sum::<f64>() / count as f64).sqrt()
        })
        .collect();
    Ok(Predictor {
        s_star,
        dims,
        fit_residual_fro,
        excitation_ok,
        output_rms,
    })
}

impl Predictor {
    pub fn new(s_star: DMatrix<f64>, dims: PredictorDims, fit_residual_fro: f64) -> Result<Self> {
        if s_star.nrows() != dims.rows() || s_star.ncols() != dims.cols() {
            return Err(Error::dim(
                "predictor matrix entries",
                dims.rows() * dims.cols(),
                s_star.nrows() * s_star.ncols(),
            ));
        }
        if s_star.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("predictor matrix"));
        }
        Ok(Self {
            s_star,
            dims,
            fit_residual_fro,
            excitation_ok: true,
            output_rms: Vec::new(),
        })
    }

    /// Columns of `S` acting on `y_ini`.
    pub fn y_ini_block(&self) -> nalgebra::DMatrixView<'_, f64> {
        self.s_star.columns(0, self.dims.t_ini * self.dims.p)
    }

    /// Columns of `S` acting on `u_ini`.
    pub fn u_ini_block(&self) -> nalgebra::DMatrixView<'_, f64> {
        self.s_star.columns(self.dims.t_ini * self.dims.p, self.dims.t_ini * self.dims.m)
    }

    /// Columns of `S` acting on `u_N`.
    pub fn u_future_block(&self) -> nalgebra::DMatrixView<'_, f64> {
        self.s_star
            .columns(self.dims.t_ini * (self.dims.p + self.dims.m), self.dims.horizon * self.dims.m)
    }

    /// `S·[y_ini; u_ini; u_future]`.
    pub fn predict(&self, y_ini: &DVector<f64>, u_ini: &DVector<f64>, u_future: &DVector<f64>) -> Result<DVector<f64>> {
        let d = &self.dims;
        for (v, len, name) in [
            (y_ini, d.t_ini * d.p, "y_ini"),
            (u_ini, d.t_ini * d.m, "u_ini"),
            (u_future, d.horizon * d.m, "u_future"),
        ] {
            if v.len() != len {
                return Err(Error::dim(name, len, v.len()));
            }
        }
        Ok(self.y_ini_block() * y_ini + self.u_ini_block() * u_ini + self.u_future_block() * u_future)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualReport {
    pub fro_residual: f64,
    /// RMS of the training residual per output channel.
    pub per_channel_rms: Vec<f64>,
}

pub fn residual_report(pred: &Predictor, b: &Blocks) -> Result<ResidualReport> {
    if pred.s_star.ncols() != b.regressor.nrows() || pred.s_star.nrows() != b.y_future.nrows() {
        return Err(Error::dim("training blocks vs predictor", pred.s_star.ncols(), b.regressor.nrows()));
    }
    let r = &pred.s_star * &b.regressor - &b.y_future;
    let p = pred.dims.p;
    let per_channel_rms = (0..p)
        .map(|c| {
            let mut sum = 0.0;
            let mut n = 0usize;
            for row in (c..r.nrows()).step_by(p) {
                sum += r.row(row).norm_squared();
                n += r.ncols();
            }
            (sum / n.max(1) as f64).sqrt()
        })
        .collect();
    Ok(ResidualReport {
        fro_residual: r.norm(),
        per_channel_rms,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictorMeta {
    #[serde(rename = "T_ini")]
    pub t_ini: usize,
    #[serde(rename = "N")]
    pub horizon: usize,
    pub m: usize,
    pub p: usize,
    pub rows: usize,
    pub cols: usize,
    pub fit_residual_fro: f64,
    pub excitation_ok: bool,
    #[serde(default)]
    pub output_rms: Vec<f64>,
}

/// Writes `S` as a header-less CSV matrix with round-trip exact numbers, plus
/// a `.json` dims sidecar.
pub fn write_predictor(pred: &Predictor, path: &Path) -> Result<()> {
    let mut body = String::new();
    for i in 0..pred.s_star.nrows() {
        let row: Vec<String> = pred.s_star.row(i).iter().map(|&v| fmt_exact(v)).collect();
        body.push_str(&row.join(","));
        body.push('\n');
    }
    let meta = PredictorMeta {
        t_ini: pred.dims.t_ini,
        horizon: pred.dims.horizon,
        m: pred.dims.m,
        p: pred.dims.p,
        rows: pred.s_star.nrows(),
        cols: pred.s_star.ncols(),
        fit_residual_fro: pred.fit_residual_fro,
        excitation_ok: pred.excitation_ok,
        output_rms: pred.output_rms.clone(),
    };
    let mut side = serde_json::to_vec_pretty(&meta)?;
    side.push(b'\n');
    csvfmt::write_atomic(path, body.as_bytes())?;
    csvfmt::write_atomic(&csvfmt::sidecar_path(path), &side)
}

pub fn read_predictor(path: &Path) -> Result<Predictor> {
    let side_path = csvfmt::sidecar_path(path);
    let meta: PredictorMeta = serde_json::from_str(&csvfmt::read_to_string(&side_path)?)
        .map_err(|e| Error::Config(format!("{}: {e}", side_path.display())))?;
    let dims = PredictorDims {
        t_ini: meta.t_ini,
        horizon: meta.horizon,
        m: meta.m,
        p: meta.p,
    };
    if meta.rows != dims.rows() || meta.cols != dims.cols() {
        return Err(Error::dim("predictor sidecar shape", dims.rows() * dims.cols(), meta.rows * meta.cols));
    }
    let text = csvfmt::read_to_string(path)?;
    let mut values = Vec::with_capacity(meta.rows * meta.cols);
    let mut rows = 0;
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let before = values.len();
        for field in line.split(',') {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("{}: bad number `{field}`", path.display())))?;
            values.push(v);
        }
        if values.len() - before != meta.cols {
            return Err(Error::dim(format!("columns in predictor row {rows}"), meta.cols, values.len() - before));
        }
        rows += 1;
    }
    if rows != meta.rows {
        return Err(Error::dim("predictor rows", meta.rows, rows));
    }
    let mut pred = Predictor::new(DMatrix::from_row_slice(meta.rows, meta.cols, &values), dims, meta.fit_residual_fro)?;
    pred.excitation_ok = meta.excitation_ok;
    pred.output_rms = meta.output_rms;
    Ok(pred)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{split_blocks, DataSet, Trajectory};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    /// Scalar system y⁺ = a·y + (1−a)·u⁺ driven by Gaussian inputs, cut into
    /// windows with T_ini = N = 1.
    fn scalar_blocks(a: f64, count: usize) -> Blocks {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut y = 0.3;
        let mut u_seq = Vec::new();
        let mut y_seq = Vec::new();
        for _ in 0..count + 1 {
            let u: f64 = StandardNormal.sample(&mut rng);
            y = a * y + (1.0 - a) * u;
            u_seq.push(u);
            y_seq.push(y);
        }
        let trajectories = (0..count)
            .map(|j| Trajectory {
                u: DMatrix::from_row_slice(2, 1, &u_seq[j..j + 2]),
                y: DMatrix::from_row_slice(2, 1, &y_seq[j..j + 2]),
            })
            .collect();
        split_blocks(&DataSet::new(trajectories, 1, 1).unwrap())
    }

    #[test]
    fn recovers_scalar_first_order_gains() {
        let a = (-1.0f64).exp();
        let b = scalar_blocks(a, 200);
        let pred = fit(&b, &FitOptions::default()).unwrap();
        // Regressor order [y_ini, u_ini, u_future].
        assert!((pred.s_star[(0, 0)] - a).abs() < 1e-8);
        assert!(pred.s_star[(0, 1)].abs() < 1e-8);
        assert!((pred.s_star[(0, 2)] - (1.0 - a)).abs() < 1e-8);
        let rep = residual_report(&pred, &b).unwrap();
        assert!(rep.fro_residual < 1e-8);
        assert_eq!(rep.fro_residual, pred.fit_residual_fro);
    }

    #[test]
    fn zero_targets_give_zero_predictor() {
        let mut b = scalar_blocks(0.5, 50);
        b.y_future.fill(0.0);
        let pred = fit(&b, &FitOptions::default()).unwrap();
        assert!(pred.s_star.iter().all(|&v| v == 0.0));
        assert_eq!(pred.fit_residual_fro, 0.0);
    }

    #[test]
    fn residual_is_orthogonal_to_regressor() {
        let mut b = scalar_blocks(0.7, 300);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for v in b.y_future.iter_mut() {
            *v += 0.1 * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng);
        }
        let pred = fit(&b, &FitOptions::default()).unwrap();
        let r = &pred.s_star * &b.regressor - &b.y_future;
        assert!((r * b.regressor.transpose()).norm() < 1e-6 * b.y_future.norm());
    }

    #[test]
    fn all_zero_regressor_is_degenerate() {
        let mut b = scalar_blocks(0.5, 10);
        b.regressor.fill(0.0);
        assert!(matches!(fit(&b, &FitOptions::default()), Err(Error::DegenerateRegressor(_))));
    }

    #[test]
    fn predict_checks_lengths_and_is_linear() {
        let b = scalar_blocks(0.6, 100);
        let pred = fit(&b, &FitOptions::default()).unwrap();
        let z = DVector::zeros(1);
        assert_eq!(pred.predict(&z, &z, &z).unwrap()[0], 0.0);
        let err = pred.predict(&z, &DVector::zeros(2), &z).unwrap_err().to_string();
        assert!(err.contains("u_ini"), "{err}");
        let a = (DVector::from_element(1, 0.3), DVector::from_element(1, -1.0), DVector::from_element(1, 2.0));
        let c = (DVector::from_element(1, 1.1), DVector::from_element(1, 0.5), DVector::from_element(1, -0.7));
        let sum = pred.predict(&(&a.0 + &c.0), &(&a.1 + &c.1), &(&a.2 + &c.2)).unwrap();
        let parts = pred.predict(&a.0, &a.1, &a.2).unwrap() + pred.predict(&c.0, &c.1, &c.2).unwrap();
        assert!((sum - parts).amax() < 1e-14);
    }

    #[test]
    fn in_sample_prediction_matches_targets() {
        let b = scalar_blocks(0.8, 60);
        let pred = fit(&b, &FitOptions::default()).unwrap();
        for j in [0, 17, 59] {
            let y = pred
                .predict(
                    &DVector::from_element(1, b.y_ini[(0, j)]),
                    &DVector::from_element(1, b.u_ini[(0, j)]),
                    &DVector::from_element(1, b.u_future[(0, j)]),
                )
                .unwrap();
            assert!((y[0] - b.y_future[(0, j)]).abs() <= pred.fit_residual_fro + 1e-12);
        }
    }

    #[test]
    fn pure_noise_targets_report_noise_level() {
        let mut b = scalar_blocks(0.5, 20_000);
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for v in b.y_future.iter_mut() {
            *v = 0.25 * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng);
        }
        let pred = fit(&b, &FitOptions::default()).unwrap();
        let rep = residual_report(&pred, &b).unwrap();
        assert!((rep.per_channel_rms[0] - 0.25).abs() < 0.01, "{}", rep.per_channel_rms[0]);
    }

    #[test]
    fn ridge_shrinks_the_fit() {
        let b = scalar_blocks(0.5, 100);
        let plain = fit(&b, &FitOptions::default()).unwrap();
        let ridged = fit(
            &b,
            &FitOptions {
                ridge: 10.0,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(ridged.s_star.norm() < plain.s_star.norm());
    }

    #[test]
    fn persisted_predictor_round_trips_bit_exactly() {
        let b = scalar_blocks(0.55, 80);
        let pred = fit(&b, &FitOptions::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        write_predictor(&pred, &path).unwrap();
        let back = read_predictor(&path).unwrap();
        assert_eq!(back.dims, pred.dims);
        assert_eq!(back.output_rms, pred.output_rms);
        assert_eq!(back.fit_residual_fro.to_bits(), pred.fit_residual_fro.to_bits());
        for (x, y) in back.s_star.iter().zip(pred.s_star.iter()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }
}
