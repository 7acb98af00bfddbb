use serde::{Deserialize, Serialize};

/// Power per plant component in MW, ordered (wind, solar, battery).
///
/// Battery sign convention: positive is discharging, negative is charging.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Power3 {
    pub wind: f64,
    pub solar: f64,
    pub battery: f64,
}

/// Setpoints sent by the supervisory controller.
pub type Setpoints = Power3;
/// Measured component outputs.
pub type Outputs = Power3;

impl Power3 {
    pub const CHANNELS: usize = 3;

    pub const fn new(wind: f64, solar: f64, battery: f64) -> Self {
        Self {
            wind,
            solar,
            battery,
        }
    }

    pub const fn zero() -> Self {
        Self::new(0.0, 0.0, 0.0)
    }

    pub fn total(&self) -> f64 {
        self.wind + self.solar + self.battery
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.wind, self.solar, self.battery]
    }

    pub fn from_slice(v: &[f64]) -> Self {
        Self::new(v[0], v[1], v[2])
    }

    pub fn is_finite(&self) -> bool {
        self.wind.is_finite() && self.solar.is_finite() && self.battery.is_finite()
    }
}

impl From<[f64; 3]> for Power3 {
    fn from(a: [f64; 3]) -> Self {
        Self::new(a[0], a[1], a[2])
    }
}
