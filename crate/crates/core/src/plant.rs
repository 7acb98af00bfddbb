//! Discrete-time hybrid power plant: three first-order components, each behind
//! its own PID loop, with availability limits on wind/solar and symmetric
//! power limits on the battery.

use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};
use crate::power::{Outputs, Setpoints};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PidGains {
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
    pub command_lo: f64,
    pub command_hi: f64,
}

impl PidGains {
    pub fn new(kp: f64, ki: f64, kd: f64, command_lo: f64, command_hi: f64) -> Result<Self> {
        let g = Self {
            kp,
            ki,
            kd,
            command_lo,
            command_hi,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        for (v, name) in [
            (self.kp, "kp"),
            (self.ki, "ki"),
            (self.kd, "kd"),
            (self.command_lo, "command_lo"),
            (self.command_hi, "command_hi"),
        ] {
            if !v.is_finite() {
                return Err(Error::InvalidArgument(format!("PID gain {name} is not finite")));
            }
        }
        if self.kp < 0.0 || self.ki < 0.0 || self.kd < 0.0 {
            return Err(Error::InvalidArgument("PID gains must be non-negative".into()));
        }
        if self.command_lo >= self.command_hi {
            return Err(Error::InvalidArgument(format!(
                "PID command range [{}, {}] is empty",
                self.command_lo, self.command_hi
            )));
        }
        Ok(())
    }

    /// PI gains whose zero cancels the pole of a first-order plant with time
    /// constant `tau` sampled at `dt`, leaving a single closed-loop pole at
    /// `pole` per inner step.
    pub fn pole_cancelling(tau: f64, dt: f64, pole: f64, command_lo: f64, command_hi: f64) -> Result<Self> {
        if !(tau > 0.0 && dt > 0.0) || !(0.0..1.0).contains(&pole) {
            return Err(Error::InvalidArgument(format!(
                "pole placement needs tau > 0, dt > 0 and pole in [0, 1) (tau={tau}, dt={dt}, pole={pole})"
            )));
        }
        let a = (-dt / tau).exp();
        let k = (1.0 - pole) / (1.0 - a);
        Self::new(k * a, k * (1.0 - a) / dt, 0.0, command_lo, command_hi)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PidState {
    pub integral: f64,
    pub prev_error: f64,
}

impl PidState {
    /// State that holds `command` with zero error, i.e. a loop at rest.
    pub fn holding(command: f64, gains: &PidGains) -> Self {
        let integral = if gains.ki > 0.0 { command / gains.ki } else { 0.0 };
        Self {
            integral,
            prev_error: 0.0,
        }
    }
}

/// One step of a positional PID with conditional-integration anti-windup.
///
/// The integral is not advanced when the tentative command saturates in the
/// direction the error would push it further.
pub fn pid_step(
    pid: &PidState,
    gains: &PidGains,
    setpoint: f64,
    measurement: f64,
    dt: f64,
) -> Result<(f64, PidState)> {
    ensure_finite(setpoint, "PID setpoint")?;
    ensure_finite(measurement, "PID measurement")?;
    ensure_finite(pid.integral, "PID integral")?;
    ensure_finite(pid.prev_error, "PID previous error")?;
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidArgument(format!("PID dt must be positive, got {dt}")));
    }
    let e = setpoint - measurement;
    let derivative = gains.kd * (e - pid.prev_error) / dt;
    let tentative = pid.integral + e * dt;
    let raw = gains.kp * e + gains.ki * tentative + derivative;
    let winding_up = (raw > gains.command_hi && e > 0.0) || (raw < gains.command_lo && e < 0.0);
    let integral = if winding_up { pid.integral } else { tentative };
    let command = (gains.kp * e + gains.ki * integral + derivative).clamp(gains.command_lo, gains.command_hi);
    Ok((
        command,
        PidState {
            integral,
            prev_error: e,
        },
    ))
}

/// Exact zero-order-hold step of `tau·ẏ = command − y`.
pub fn first_order_step(output: f64, command: f64, tau: f64, dt: f64) -> f64 {
    debug_assert!(tau > 0.0 && dt > 0.0);
    let a = (-dt / tau).exp();
    a * output + (1.0 - a) * command
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrackingMode {
    /// PID + first-order dynamics.
    Dynamic,
    /// Output jumps to the clamped setpoint (perfect inner-loop tracking).
    Ideal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentState {
    pub output: f64,
    pub tau: f64,
    pub pid: PidState,
    pub gains: PidGains,
}

impl ComponentState {
    /// Component resting at `output` with its loop holding that value.
    pub fn at_rest(output: f64, tau: f64, gains: PidGains) -> Result<Self> {
        if !(tau > 0.0) {
            return Err(Error::InvalidArgument(format!("time constant must be positive, got {tau}")));
        }
        gains.validate()?;
        Ok(Self {
            output,
            tau,
            pid: PidState::holding(output, &gains),
            gains,
        })
    }

    /// One inner step: PID against the current output, first-order response,
    /// then clamp to `[lo, hi]`.
    pub fn step(&self, setpoint: f64, lo: f64, hi: f64, dt: f64, mode: TrackingMode) -> Result<(f64, ComponentState)> {
        ensure_finite(setpoint, "component setpoint")?;
        if lo > hi || lo.is_nan() || hi.is_nan() {
            return Err(Error::InvalidArgument(format!("component bounds [{lo}, {hi}] are inconsistent")));
        }
        let mut next = self.clone();
        match mode {
            TrackingMode::Ideal => {
                next.output = setpoint.clamp(lo, hi);
                next.pid = PidState::holding(next.output, &self.gains);
            }
            TrackingMode::Dynamic => {
                let (command, pid) = pid_step(&self.pid, &self.gains, setpoint, self.output, dt)?;
                next.pid = pid;
                next.output = first_order_step(self.output, command, self.tau, dt).clamp(lo, hi);
            }
        }
        Ok((next.output, next))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlantConfig {
    pub rated_wind: f64,
    pub rated_solar: f64,
    pub battery_min: f64,
    pub battery_max: f64,
    pub tau_wind: f64,
    pub tau_solar: f64,
    pub tau_battery: f64,
    /// Supervisory sampling interval (s).
    pub dt: f64,
    /// Inner PID/first-order step (s); must divide `dt`.
    pub dt_inner: f64,
    /// Closed-loop pole of each inner loop per inner step.
    pub inner_pole: f64,
    /// PID command range as a multiple of the component rating.
    pub command_headroom: f64,
    pub ideal_tracking: bool,
    pub battery_capacity_mwh: f64,
}

impl Default for PlantConfig {
    fn default() -> Self {
        Self {
            rated_wind: 4.0,
            rated_solar: 4.0,
            battery_min: -4.0,
            battery_max: 4.0,
            tau_wind: 20.0,
            tau_solar: 20.0,
            tau_battery: 5.0,
            dt: 20.0,
            dt_inner: 1.0,
            inner_pole: 0.5,
            command_headroom: 3.0,
            ideal_tracking: false,
            battery_capacity_mwh: 4.0,
        }
    }
}

impl PlantConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            (self.rated_wind, "rated_wind"),
            (self.rated_solar, "rated_solar"),
            (self.tau_wind, "tau_wind"),
            (self.tau_solar, "tau_solar"),
            (self.tau_battery, "tau_battery"),
            (self.dt, "dt"),
            (self.dt_inner, "dt_inner"),
            (self.command_headroom, "command_headroom"),
        ];
        for (v, name) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("plant.{name} must be positive and finite, got {v}")));
            }
        }
        if !(self.battery_min < self.battery_max) {
            return Err(Error::Config("plant.battery_min must be below plant.battery_max".into()));
        }
        if self.dt_inner > self.dt {
            return Err(Error::Config("plant.dt_inner must not exceed plant.dt".into()));
        }
        let ratio = self.dt / self.dt_inner;
        if (ratio - ratio.round()).abs() > 1e-9 {
            return Err(Error::Config("plant.dt must be an integer multiple of plant.dt_inner".into()));
        }
        Ok(())
    }

    pub fn substeps(&self) -> usize {
        (self.dt / self.dt_inner).round() as usize
    }

    pub fn mode(&self) -> TrackingMode {
        if self.ideal_tracking {
            TrackingMode::Ideal
        } else {
            TrackingMode::Dynamic
        }
    }

    pub fn gains(&self, tau: f64, rating: f64) -> Result<PidGains> {
        let span = self.command_headroom * rating;
        PidGains::pole_cancelling(tau, self.dt_inner, self.inner_pole, -span, span)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantState {
    pub wind: ComponentState,
    pub solar: ComponentState,
    pub battery: ComponentState,
    /// Supervisory interval (s).
    pub dt: f64,
    pub dt_inner: f64,
    pub mode: TrackingMode,
    pub battery_min: f64,
    pub battery_max: f64,
    /// Stored energy (MWh). Reported only; never limits operation.
    pub soc_energy: f64,
}

impl PlantState {
    /// Plant resting at `initial` outputs.
    pub fn new(cfg: &PlantConfig, initial: Outputs) -> Result<Self> {
        cfg.validate()?;
        let battery_rating = cfg.battery_max.abs().max(cfg.battery_min.abs());
        Ok(Self {
            wind: ComponentState::at_rest(initial.wind, cfg.tau_wind, cfg.gains(cfg.tau_wind, cfg.rated_wind)?)?,
            solar: ComponentState::at_rest(initial.solar, cfg.tau_solar, cfg.gains(cfg.tau_solar, cfg.rated_solar)?)?,
            battery: ComponentState::at_rest(
                initial.battery,
                cfg.tau_battery,
                cfg.gains(cfg.tau_battery, battery_rating)?,
            )?,
            dt: cfg.dt,
            dt_inner: cfg.dt_inner,
            mode: cfg.mode(),
            battery_min: cfg.battery_min,
            battery_max: cfg.battery_max,
            soc_energy: 0.5 * cfg.battery_capacity_mwh,
        })
    }

    pub fn outputs(&self) -> Outputs {
        Outputs::new(self.wind.output, self.solar.output, self.battery.output)
    }

    /// Advance one supervisory interval under constant setpoints and
    /// availability.
    pub fn step(&self, setpoints: Setpoints, avail_wind: f64, avail_solar: f64) -> Result<(Outputs, PlantState)> {
        if !(avail_wind >= 0.0 && avail_solar >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "availability must be non-negative (wind {avail_wind}, solar {avail_solar})"
            )));
        }
        let mut next = self.clone();
        let (substeps, h) = match self.mode {
            TrackingMode::Ideal => (1, self.dt),
            TrackingMode::Dynamic => ((self.dt / self.dt_inner).round().max(1.0) as usize, self.dt_inner),
        };
        for _ in 0..substeps {
            let (_, w) = next.wind.step(setpoints.wind, 0.0, avail_wind, h, self.mode)?;
            let (_, s) = next.solar.step(setpoints.solar, 0.0, avail_solar, h, self.mode)?;
            let (pb, b) = next
                .battery
                .step(setpoints.battery, self.battery_min, self.battery_max, h, self.mode)?;
            next.wind = w;
            next.solar = s;
            next.battery = b;
            next.soc_energy -= pb * h / 3600.0;
        }
        Ok((next.outputs(), next))
    }
}
