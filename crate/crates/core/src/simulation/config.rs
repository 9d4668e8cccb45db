use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{EmConfig, Init, Method};

use super::{ExperimentId, ExperimentSpec, MetricsConfig};

/// Declarative description of a simulation run, usually read from TOML.
///
/// ```toml
/// experiment = 1
/// n = 500
/// censoring = 0.2
/// replicates = 200
/// estimators = ["em_pava", "npmle_type2"]
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    pub experiment: u8,
    /// Replace `F2` by `F1`.
    #[serde(default)]
    pub null: bool,
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(default)]
    pub censoring: f64,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    /// Permutations per data set; 0 skips the rejection-rate study.
    #[serde(default)]
    pub permutations: usize,
    /// Bootstrap replicates per data set; 0 skips est sd and coverage.
    #[serde(default)]
    pub bootstrap: usize,
    #[serde(default = "default_level")]
    pub level: f64,
    pub seed: Option<u64>,
    #[serde(default = "default_estimators")]
    pub estimators: Vec<String>,
    #[serde(default = "default_grid_points")]
    pub grid_points: usize,
    #[serde(default = "default_max_iterations")]
    pub max_iterations: usize,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    #[serde(default = "default_init")]
    pub init: String,
}

fn default_n() -> usize {
    500
}
fn default_replicates() -> usize {
    100
}
fn default_level() -> f64 {
    0.95
}
fn default_estimators() -> Vec<String> {
    vec!["em_pava".into()]
}
fn default_grid_points() -> usize {
    50
}
fn default_max_iterations() -> usize {
    500
}
fn default_tolerance() -> f64 {
    1e-8
}
fn default_init() -> String {
    "pooled-km".into()
}

impl SimulationConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    /// Design of the run, using `seed` when the file does not fix one.
    pub fn spec(&self, seed: u64) -> Result<ExperimentSpec> {
        let spec = ExperimentSpec::experiment(
            ExperimentId::from_number(self.experiment)?,
            self.n,
            self.censoring,
            self.replicates,
            self.seed.unwrap_or(seed),
        )?;
        Ok(if self.null { spec.null_variant() } else { spec })
    }

    pub fn methods(&self) -> Result<Vec<Method>> {
        if self.estimators.is_empty() {
            return Err(Error::InvalidConfig("no estimators listed".into()));
        }
        self.estimators.iter().map(|s| s.parse()).collect()
    }

    pub fn em_config(&self) -> Result<EmConfig> {
        let cfg = EmConfig {
            max_iterations: self.max_iterations,
            tolerance: self.tolerance,
            init: self.init.parse::<Init>()?,
            ..EmConfig::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn metrics_config(&self) -> Result<MetricsConfig> {
        Ok(MetricsConfig {
            bootstrap: self.bootstrap,
            level: self.level,
            grid_points: self.grid_points,
            em: self.em_config()?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_minimal_and_full_files() {
        let c = SimulationConfig::from_toml_str("experiment = 2").unwrap();
        assert_eq!(c.n, 500);
        assert_eq!(c.methods().unwrap(), vec![Method::EmPava]);
        assert_eq!(c.spec(7).unwrap().seed, 7);

        let c = SimulationConfig::from_toml_str(
            r#"
            experiment = 1
            null = true
            n = 100
            censoring = 0.4
            replicates = 3
            seed = 11
            estimators = ["em_pava", "npmle_type2"]
            init = "uniform"
            "#,
        )
        .unwrap();
        let s = c.spec(0).unwrap();
        assert_eq!(s.seed, 11);
        assert_eq!(s.f1, s.f2);
        assert_eq!(c.em_config().unwrap().init, Init::UniformLinear);
    }

    #[test]
    fn rejects_bad_files() {
        assert!(SimulationConfig::from_toml_str("experiment = 1\nbogus = 2").is_err());
        assert!(SimulationConfig::from_toml_str("n = 5").is_err());
        let c = SimulationConfig::from_toml_str("experiment = 4").unwrap();
        assert!(c.spec(0).is_err());
        let c = SimulationConfig::from_toml_str("experiment = 1\nestimators = [\"nope\"]").unwrap();
        assert!(c.methods().is_err());
    }
}
