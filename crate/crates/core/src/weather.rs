//! Synthetic day-long wind speed and irradiance, power curves, wind-speed
//! uncertainty and the quantile bound on available wind power.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WeatherParams {
    /// Mean wind speed (m/s).
    pub wind_mean: f64,
    /// Wind speed amplitude (m/s).
    pub wind_amplitude: f64,
    /// Period of the wind sinusoid (h).
    pub wind_period_h: f64,
    /// Phase of the wind sinusoid (rad).
    pub wind_phase: f64,
    /// Irradiance at solar noon (W/m²).
    pub irradiance_peak: f64,
    pub sunrise_h: f64,
    pub sunset_h: f64,
    pub rated_wind: f64,
    pub rated_solar: f64,
    pub cut_in: f64,
    pub rated_speed: f64,
    pub cut_out: f64,
    /// Standard deviation of the wind-speed forecast error (m/s).
    pub sigma_v: f64,
}

impl Default for WeatherParams {
    fn default() -> Self {
        Self {
            wind_mean: 9.0,
            wind_amplitude: 3.0,
            wind_period_h: 24.0,
            // Wind peaks at 03:00 and is weakest at 15:00.
            wind_phase: PI / 4.0,
            irradiance_peak: 1000.0,
            sunrise_h: 6.0,
            sunset_h: 18.0,
            rated_wind: 4.0,
            rated_solar: 4.0,
            cut_in: 3.0,
            rated_speed: 12.0,
            cut_out: 25.0,
            sigma_v: 0.1,
        }
    }
}

impl WeatherParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 <= self.cut_in && self.cut_in < self.rated_speed && self.rated_speed < self.cut_out) {
            return Err(Error::Config(format!(
                "weather: need 0 <= cut_in < rated_speed < cut_out, got {} / {} / {}",
                self.cut_in, self.rated_speed, self.cut_out
            )));
        }
        if !(self.rated_wind > 0.0 && self.rated_solar > 0.0) {
            return Err(Error::Config("weather: rated powers must be positive".into()));
        }
        if !(self.sigma_v >= 0.0) {
            return Err(Error::Config("weather.sigma_v must be non-negative".into()));
        }
        if !(self.wind_period_h > 0.0) {
            return Err(Error::Config("weather.wind_period_h must be positive".into()));
        }
        if !(self.sunrise_h < self.sunset_h) {
            return Err(Error::Config("weather: sunrise must precede sunset".into()));
        }
        if !(self.irradiance_peak >= 0.0 && self.wind_amplitude >= 0.0) {
            return Err(Error::Config("weather: irradiance peak and wind amplitude must be non-negative".into()));
        }
        Ok(())
    }

    /// Nominal available wind power at time `t` (h).
    pub fn avail_wind(&self, t: f64) -> f64 {
        wind_power_curve(wind_speed_profile(t, self), self)
    }

    /// Available solar power at time `t` (h).
    pub fn avail_solar(&self, t: f64) -> f64 {
        solar_power_curve(irradiance_profile(t, self), self)
    }

    /// Upper bound on wind power used by the controller at time `t` (h):
    /// the `q`-quantile bound when `uncertain`, else nominal availability.
    pub fn wind_bound(&self, t: f64, q: f64, uncertain: bool) -> f64 {
        let v = wind_speed_profile(t, self);
        if uncertain {
            let (mu, sigma) = wind_power_stats(v, self.sigma_v, self);
            quantile_bound(mu, sigma, q, self.rated_wind).bound
        } else {
            wind_power_curve(v, self)
        }
    }
}

/// Wind speed (m/s) at time `t` (h).
pub fn wind_speed_profile(t: f64, params: &WeatherParams) -> f64 {
    let v = params.wind_mean + params.wind_amplitude * (2.0 * PI * t / params.wind_period_h + params.wind_phase).sin();
    v.max(0.0)
}

/// Irradiance (W/m²): a half sine between sunrise and sunset, zero at night.
pub fn irradiance_profile(t: f64, params: &WeatherParams) -> f64 {
    let h = t.rem_euclid(24.0);
    if h <= params.sunrise_h || h >= params.sunset_h {
        return 0.0;
    }
    let frac = (h - params.sunrise_h) / (params.sunset_h - params.sunrise_h);
    params.irradiance_peak * (PI * frac).sin()
}

/// Cubic wind turbine power curve (MW).
pub fn wind_power_curve(v: f64, params: &WeatherParams) -> f64 {
    if v < params.cut_in || v > params.cut_out {
        0.0
    } else if v < params.rated_speed {
        let ci3 = params.cut_in.powi(3);
        params.rated_wind * (v.powi(3) - ci3) / (params.rated_speed.powi(3) - ci3)
    } else {
        params.rated_wind
    }
}

fn wind_power_slope(v: f64, params: &WeatherParams) -> f64 {
    if v >= params.cut_in && v < params.rated_speed {
        params.rated_wind * 3.0 * v * v / (params.rated_speed.powi(3) - params.cut_in.powi(3))
    } else {
        0.0
    }
}

/// Solar farm power (MW), linear in irradiance up to 1000 W/m².
pub fn solar_power_curve(g: f64, params: &WeatherParams) -> f64 {
    params.rated_solar * (g.max(0.0) / 1000.0).min(1.0)
}

/// Wind speed plus a Gaussian forecast error, floored at zero.
pub fn perturb_wind_speed<R: Rng + ?Sized>(v: f64, sigma_v: f64, rng: &mut R) -> f64 {
    if sigma_v <= 0.0 {
        return v;
    }
    let noise = Normal::new(0.0, sigma_v).expect("sigma_v is finite and positive");
    (v + noise.sample(rng)).max(0.0)
}

/// Mean and standard deviation of wind power under speed noise `sigma_v`,
/// propagated to first order through the power curve.
pub fn wind_power_stats(v: f64, sigma_v: f64, params: &WeatherParams) -> (f64, f64) {
    let mu = wind_power_curve(v, params);
    let sigma = wind_power_slope(v, params).abs() * sigma_v.max(0.0);
    (mu, sigma)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantileBound {
    pub mu: f64,
    pub sigma: f64,
    pub q: f64,
    pub bound: f64,
}

/// `clamp(mu + q·sigma, 0, rated)`.
pub fn quantile_bound(mu: f64, sigma: f64, q: f64, rated: f64) -> QuantileBound {
    let sigma = sigma.max(0.0);
    QuantileBound {
        mu,
        sigma,
        q,
        bound: (mu + q * sigma).clamp(0.0, rated),
    }
}

/// One row of the exported weather profile.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ProfileRow {
    pub time_h: f64,
    pub wind_speed: f64,
    pub avail_wind_mw: f64,
    pub avail_wind_uncertain_mw: f64,
    pub quantile_bound_mw: f64,
    pub avail_solar_mw: f64,
}

impl ProfileRow {
    pub const HEADER: [&'static str; 6] = [
        "time_h",
        "wind_speed",
        "avail_wind_mw",
        "avail_wind_uncertain_mw",
        "quantile_bound_mw",
        "avail_solar_mw",
    ];

    pub fn values(&self) -> [f64; 6] {
        [
            self.time_h,
            self.wind_speed,
            self.avail_wind_mw,
            self.avail_wind_uncertain_mw,
            self.quantile_bound_mw,
            self.avail_solar_mw,
        ]
    }
}

/// Profile samples at `times` (h), with one perturbed wind speed draw per
/// sample from `rng`.
pub fn profile_rows<R: Rng + ?Sized>(params: &WeatherParams, q: f64, times: &[f64], rng: &mut R) -> Vec<ProfileRow> {
    times
        .iter()
        .map(|&t| {
            let v = wind_speed_profile(t, params);
            let v_un = perturb_wind_speed(v, params.sigma_v, rng);
            let (mu, sigma) = wind_power_stats(v, params.sigma_v, params);
            ProfileRow {
                time_h: t,
                wind_speed: v,
                avail_wind_mw: mu,
                avail_wind_uncertain_mw: wind_power_curve(v_un, params),
                quantile_bound_mw: quantile_bound(mu, sigma, q, params.rated_wind).bound,
                avail_solar_mw: params.avail_solar(t),
            }
        })
        .collect()
}
