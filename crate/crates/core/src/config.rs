//! JSON experiment files. Every field is optional; unknown keys are
//! rejected so typos fail loudly.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::controller::ControllerConfig;
use crate::csvfmt;
use crate::demand::{DemandParams, DemandProfile};
use crate::error::{Error, Result};
use crate::harness::{DataConfig, RunMode, ScenarioConfig};
use crate::plant::PlantConfig;
use crate::weather::WeatherParams;

/// Where the reference load comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DemandSource {
    Synthetic(DemandParams),
    /// Table with columns `time_h,p_ref_mw`; relative paths resolve against
    /// the config file's directory.
    Csv { path: PathBuf },
}

impl Default for DemandSource {
    fn default() -> Self {
        DemandSource::Synthetic(DemandParams::default())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioSection {
    pub seed: u64,
    /// Defaults to 4 h for closed loop and 11.88 h otherwise.
    pub start_hour: Option<f64>,
    /// Closed-loop steps; defaults to 720 (four hours).
    pub steps: Option<usize>,
    pub uncertainty: bool,
    pub measurement_noise: f64,
    pub demand: DemandSource,
}

impl Default for ScenarioSection {
    fn default() -> Self {
        Self {
            seed: 42,
            start_hour: None,
            steps: None,
            uncertainty: true,
            measurement_noise: 0.02,
            demand: DemandSource::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IoSection {
    /// Write measured solve times to output files. Off by default so that
    /// reruns are byte-identical.
    pub record_timing: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentFile {
    pub plant: PlantConfig,
    pub weather: WeatherParams,
    pub controller: ControllerConfig,
    pub data: DataConfig,
    pub scenario: ScenarioSection,
    pub io: IoSection,
    /// Directory used to resolve relative paths; not serialized.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

const DEFAULT_CLOSED_STEPS: usize = 720;

impl ExperimentFile {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = csvfmt::read_to_string(path)?;
        let mut file = Self::from_json(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        file.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(file)
    }

    /// Fills every optional field for `mode` so the echoed config is
    /// self-describing.
    pub fn resolve(&mut self, mode: RunMode) {
        let s = &mut self.scenario;
        s.start_hour.get_or_insert(mode.default_start_hour());
        s.steps.get_or_insert(match mode {
            RunMode::Closed => DEFAULT_CLOSED_STEPS,
            RunMode::Open | RunMode::Ablation => self.controller.horizon,
        });
    }

    pub fn to_scenario(&self, mode: RunMode) -> Result<ScenarioConfig> {
        let s = &self.scenario;
        let (demand, library_demand) = match &s.demand {
            DemandSource::Synthetic(p) => (DemandProfile::Synthetic(p.clone()), p.clone()),
            DemandSource::Csv { path } => {
                let full = if path.is_absolute() { path.clone() } else { self.base_dir.join(path) };
                (DemandProfile::from_csv(&full)?, DemandParams::default())
            }
        };
        let scn = ScenarioConfig {
            seed: s.seed,
            plant: self.plant.clone(),
            weather: self.weather.clone(),
            demand,
            library_demand,
            controller: self.controller.clone(),
            data: self.data.clone(),
            uncertainty: s.uncertainty,
            measurement_noise: s.measurement_noise,
            start_hour: s.start_hour.unwrap_or(mode.default_start_hour()),
            steps: s.steps.unwrap_or(match mode {
                RunMode::Closed => DEFAULT_CLOSED_STEPS,
                RunMode::Open | RunMode::Ablation => self.controller.horizon,
            }),
        };
        scn.validate()?;
        Ok(scn)
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_gives_paper_defaults() {
        let f = ExperimentFile::from_json("{}").unwrap();
        assert_eq!(f.controller.horizon, 20);
        assert_eq!(f.controller.t_ini, 20);
        assert_eq!(f.data.count, 1000);
        assert_eq!(f.controller.sample_dt, 20.0);
        assert_eq!(f.plant.rated_wind, 4.0);
        assert_eq!(f.data.noise_ratio, 0.02);
        assert_eq!(f.weather.sigma_v, 0.1);
        assert_eq!(f.controller.q_w, -0.4);
        assert_eq!(f.controller.lambda_u, 10.0);
        assert_eq!(f.controller.lambda_y, 10.0);
        let scn = f.to_scenario(RunMode::Closed).unwrap();
        assert_eq!(scn, ScenarioConfig::default());
    }

    #[test]
    fn unknown_keys_are_named() {
        for text in [
            r#"{"bogus": 1}"#,
            r#"{"controller": {"bogus": 1}}"#,
            r#"{"controller": {"qp": {"bogus": 1}}}"#,
            r#"{"scenario": {"demand": {"synthetic": {"bogus": 1}}}}"#,
            r#"{"scenario": {"demand": {"csv": {"path": "x.csv", "bogus": 1}}}}"#,
            r#"{"io": {"bogus": true}}"#,
        ] {
            let err = ExperimentFile::from_json(text).unwrap_err().to_string();
            assert!(err.contains("bogus"), "{text}: {err}");
        }
    }

    #[test]
    fn paper_names_are_accepted() {
        let f = ExperimentFile::from_json(r#"{"controller": {"N": 10, "T_ini": 5}, "data": {"T": 300}}"#).unwrap();
        assert_eq!((f.controller.horizon, f.controller.t_ini, f.data.count), (10, 5, 300));
    }

    #[test]
    fn resolve_fills_mode_defaults_and_round_trips() {
        let mut f = ExperimentFile::default();
        f.resolve(RunMode::Open);
        assert_eq!(f.scenario.start_hour, Some(11.88));
        assert_eq!(f.scenario.steps, Some(20));
        let back = ExperimentFile::from_json(&f.to_json().to_string()).unwrap();
        assert_eq!(back, f);
    }

    #[test]
    fn csv_demand_resolves_against_config_dir() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("load.csv"), "time_h,p_ref_mw\n0,1\n12,3\n").unwrap();
        let cfg = dir.path().join("exp.json");
        std::fs::write(&cfg, r#"{"scenario": {"demand": {"csv": {"path": "load.csv"}}}}"#).unwrap();
        let scn = ExperimentFile::load(&cfg).unwrap().to_scenario(RunMode::Closed).unwrap();
        assert!((scn.demand.at(6.0) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn invalid_values_are_config_errors() {
        let f = ExperimentFile::from_json(r#"{"scenario": {"steps": 0}}"#).unwrap();
        assert!(matches!(f.to_scenario(RunMode::Closed), Err(Error::Config(_))));
    }
}
