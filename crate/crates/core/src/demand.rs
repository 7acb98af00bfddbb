//! Load reference profiles: a synthetic two-harmonic daily shape, or a
//! user-supplied table read from CSV.

use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::csvfmt;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DemandParams {
    /// Daily maximum (MW).
    pub peak_mw: f64,
    /// Hour of the daily maximum.
    pub peak_hour: f64,
    /// Relative amplitude of the daily harmonic.
    pub daily_amplitude: f64,
    /// Relative amplitude of the half-day harmonic.
    pub semidaily_amplitude: f64,
}

impl Default for DemandParams {
    fn default() -> Self {
        Self {
            peak_mw: 5.0,
            peak_hour: 13.0,
            daily_amplitude: 0.4,
            semidaily_amplitude: 0.0,
        }
    }
}

impl DemandParams {
    pub fn at(&self, t: f64) -> f64 {
        let phase = 2.0 * PI * (t - self.peak_hour) / 24.0;
        let shape = 1.0 + self.daily_amplitude * phase.cos() + self.semidaily_amplitude * (2.0 * phase).cos();
        let max = 1.0 + self.daily_amplitude.abs() + self.semidaily_amplitude.abs();
        self.peak_mw * shape / max
    }
}

/// A demand profile sampled at arbitrary times (h), periodic over 24 h.
#[derive(Debug, Clone, PartialEq)]
pub enum DemandProfile {
    Synthetic(DemandParams),
    /// `(time_h, p_ref_mw)` samples sorted by time within `[0, 24)`.
    Table(Vec<(f64, f64)>),
}

impl DemandProfile {
    pub fn at(&self, t: f64) -> f64 {
        match self {
            DemandProfile::Synthetic(p) => p.at(t),
            DemandProfile::Table(rows) => interpolate_periodic(rows, t.rem_euclid(24.0)),
        }
    }

    /// Reads a CSV with columns `time_h,p_ref_mw`.
    pub fn from_csv(path: &Path) -> Result<Self> {
        let text = csvfmt::read_to_string(path)?;
        let mut reader = csv::Reader::from_reader(text.as_bytes());
        let headers = reader.headers()?.clone();
        let col = |name: &str| {
            headers
                .iter()
                .position(|h| h.trim() == name)
                .ok_or_else(|| Error::Config(format!("{}: missing column `{name}`", path.display())))
        };
        let (ti, pi) = (col("time_h")?, col("p_ref_mw")?);
        let mut rows = Vec::new();
        for (row, rec) in reader.records().enumerate() {
            let rec = rec?;
            let parse = |i: usize| -> Result<f64> {
                rec.get(i)
                    .and_then(|s| s.trim().parse::<f64>().ok())
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::Config(format!("{}: bad number in data row {}", path.display(), row + 1)))
            };
            rows.push((parse(ti)?.rem_euclid(24.0), parse(pi)?));
        }
        if rows.is_empty() {
            return Err(Error::Config(format!("{}: demand table is empty", path.display())));
        }
        rows.sort_by(|a, b| a.0.total_cmp(&b.0));
        Ok(DemandProfile::Table(rows))
    }
}

fn interpolate_periodic(rows: &[(f64, f64)], t: f64) -> f64 {
    if rows.len() == 1 {
        return rows[0].1;
    }
    let idx = rows.partition_point(|r| r.0 <= t);
    let (t0, p0, t1, p1) = if idx == 0 {
        let last = rows[rows.len() - 1];
        (last.0 - 24.0, last.1, rows[0].0, rows[0].1)
    } else if idx == rows.len() {
        let last = rows[rows.len() - 1];
        (last.0, last.1, rows[0].0 + 24.0, rows[0].1)
    } else {
        (rows[idx - 1].0, rows[idx - 1].1, rows[idx].0, rows[idx].1)
    };
    if t1 - t0 <= 0.0 {
        return p0;
    }
    p0 + (p1 - p0) * (t - t0) / (t1 - t0)
}
