//! Experiment configuration files (TOML).

use std::path::{Path, PathBuf};

use hac_core::dataset::{generate_random_dataset, Dataset};
use hac_core::env::{
    EnvKind, Environment, LqrEnv, LqrParams, MountainCarEnv, MountainCarParams, PendulumEnv,
    PendulumParams,
};
use hac_core::hac::HacConfig;
use hac_core::mve::MveConfig;
use hac_core::train::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Hac,
    Mve,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Hac => "hac",
            Algorithm::Mve => "mve",
        }
    }
}

impl std::str::FromStr for Algorithm {
    type Err = CliError;

    fn from_str(s: &str) -> CliResult<Self> {
        match s {
            "hac" => Ok(Algorithm::Hac),
            "mve" => Ok(Algorithm::Mve),
            other => Err(CliError::input(format!("unknown algorithm `{other}`"))),
        }
    }
}

/// Environment choice plus optional overrides of its benchmark settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvConfig {
    pub name: EnvKind,
    pub horizon: Option<usize>,
    pub discount: Option<f64>,
    pub initial_mean: Option<Vec<f64>>,
    pub initial_noise_std: Option<f64>,
}

impl EnvConfig {
    pub fn new(name: EnvKind) -> Self {
        Self {
            name,
            horizon: None,
            discount: None,
            initial_mean: None,
            initial_noise_std: None,
        }
    }

    pub fn build(&self) -> CliResult<Box<dyn Environment>> {
        let env: Box<dyn Environment> = match self.name {
            EnvKind::Lqr => {
                let mut params = LqrParams::benchmark();
                if let Some(m) = &self.initial_mean {
                    params.s0_mean = m.clone();
                }
                if let Some(std) = self.initial_noise_std {
                    params.s0_noise_std = std;
                }
                if self.discount.is_some_and(|g| g != 1.0) {
                    return Err(CliError::input("the LQR task is undiscounted"));
                }
                Box::new(LqrEnv::new(params, self.horizon.unwrap_or(10))?)
            }
            EnvKind::Pendulum => {
                let mut params = PendulumParams::default();
                if let Some(m) = &self.initial_mean {
                    if m.len() != 2 {
                        return Err(CliError::input("pendulum initial_mean needs 2 entries"));
                    }
                    params.s0_mean = m.clone();
                }
                if let Some(std) = self.initial_noise_std {
                    params.s0_noise_std = std;
                }
                Box::new(PendulumEnv::new(
                    params,
                    self.horizon.unwrap_or(10),
                    self.discount.unwrap_or(0.99),
                ))
            }
            EnvKind::MountainCar => {
                if self.initial_mean.is_some() || self.initial_noise_std.is_some() {
                    return Err(CliError::input(
                        "mountain car resets uniformly; initial-state overrides are not supported",
                    ));
                }
                let mut params = MountainCarParams::default();
                if let Some(h) = self.horizon {
                    params.horizon = h;
                }
                Box::new(MountainCarEnv::new(params, self.discount.unwrap_or(0.99)))
            }
        };
        if env.spec().horizon == 0 {
            return Err(CliError::input("horizon must be positive"));
        }
        Ok(env)
    }
}

/// Where the offline dataset comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    /// Existing PMDS file; takes precedence over generation.
    pub path: Option<PathBuf>,
    /// Size of a freshly generated random dataset; the environment default when absent.
    pub size: Option<usize>,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub env: EnvConfig,
    pub algorithm: Algorithm,
    pub seeds: Vec<u64>,
    pub output_dir: Option<PathBuf>,
    pub dataset: Option<DatasetConfig>,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub hac: HacConfig,
    #[serde(default)]
    pub mve: MveConfig,
}

impl ExperimentConfig {
    pub fn new(env: EnvKind, algorithm: Algorithm) -> Self {
        Self {
            env: EnvConfig::new(env),
            algorithm,
            seeds: vec![0],
            output_dir: None,
            dataset: None,
            train: TrainConfig::default(),
            hac: HacConfig {
                k: env.default_rollout_horizon(),
                ..HacConfig::default()
            },
            mve: MveConfig {
                k: env.default_rollout_horizon(),
                ..MveConfig::default()
            },
        }
    }

    pub fn from_toml(text: &str) -> CliResult<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| CliError::input(e.to_string()))?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> CliResult<String> {
        toml::to_string(self).map_err(|e| CliError::input(e.to_string()))
    }

    /// Reads a config; relative dataset and output paths resolve against the
    /// file's directory.
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::input(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        let dir = path.parent().unwrap_or(Path::new(""));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        };
        if let Some(DatasetConfig { path: Some(p), .. }) = &mut cfg.dataset {
            resolve(p);
        }
        if let Some(p) = &mut cfg.output_dir {
            resolve(p);
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> CliResult<()> {
        if self.seeds.is_empty() {
            return Err(CliError::input("at least one seed is required"));
        }
        self.train.validate()?;
        self.hac.validate()?;
        self.mve.validate()?;
        if let Some(DatasetConfig { path: Some(p), .. }) = &self.dataset {
            if !p.is_file() {
                return Err(CliError::input(format!("dataset {} does not exist", p.display())));
            }
        }
        Ok(())
    }

    /// The configured dataset: loaded from disk or generated with random actions.
    pub fn dataset(&self, env: &dyn Environment) -> CliResult<Dataset> {
        let ds = self.dataset.clone().unwrap_or(DatasetConfig {
            path: None,
            size: None,
            seed: 0,
        });
        if let Some(p) = &ds.path {
            return Ok(Dataset::load(p)?);
        }
        let size = ds.size.unwrap_or(self.env.name.default_dataset_size());
        Ok(generate_random_dataset(
            env,
            size,
            ds.seed,
            self.train.unbounded_action_range,
        )?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"
algorithm = "hac"
seeds = [0, 1, 2]

[env]
name = "lqr"
initial_mean = [0.0, 0.0, 1.0, 1.0, 0.0]

[dataset]
size = 500
seed = 3

[train]
rounds = 4
updates_per_round = 10

[train.dynamics]
epochs = 5
residual = true

[hac]
k = 10
optimizer = "sgd"
lr = 1e-4
"#;

    #[test]
    fn parse_serialize_parse_is_identity() {
        let a = ExperimentConfig::from_toml(SAMPLE).unwrap();
        let b = ExperimentConfig::from_toml(&a.to_toml().unwrap()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.train.rounds, 4);
        assert!(a.train.dynamics.residual);
        assert_eq!(a.train.dynamics.batch_size, 64);
    }

    #[test]
    fn default_config_round_trips() {
        for kind in [EnvKind::Lqr, EnvKind::Pendulum, EnvKind::MountainCar] {
            let a = ExperimentConfig::new(kind, Algorithm::Mve);
            let b = ExperimentConfig::from_toml(&a.to_toml().unwrap()).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = SAMPLE.replace("rounds = 4", "roundz = 4");
        assert!(ExperimentConfig::from_toml(&text).is_err());
    }

    #[test]
    fn empty_seed_list_is_invalid() {
        let mut cfg = ExperimentConfig::from_toml(SAMPLE).unwrap();
        cfg.seeds.clear();
        assert!(matches!(cfg.validate(), Err(CliError::Input(_))));
    }

    #[test]
    fn missing_dataset_file_is_invalid() {
        let mut cfg = ExperimentConfig::from_toml(SAMPLE).unwrap();
        cfg.dataset = Some(DatasetConfig {
            path: Some("/nonexistent/data.pmds".into()),
            size: None,
            seed: 0,
        });
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn overrides_reach_the_environment() {
        let cfg = ExperimentConfig::from_toml(SAMPLE).unwrap();
        let env = cfg.env.build().unwrap();
        assert_eq!(env.initial_mean(), &[0.0, 0.0, 1.0, 1.0, 0.0]);
        let mut bad = cfg.env.clone();
        bad.initial_mean = Some(vec![1.0]);
        assert!(bad.build().is_err());
    }
}
