//! Run configuration loaded from TOML. Every section and key is optional;
//! missing values take their defaults.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::compat::{CompatConfig, SurvivalModel};
use crate::error::{Error, Result};
use crate::learn::{BlackboxConfig, TrainConfig};
use crate::popgen::PopulationConfig;

/// Environment variable naming the default config file.
pub const CONFIG_ENV: &str = "HINDSIGHT_CONFIG";

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub compat: CompatConfig,
    pub survival: SurvivalModel,
    pub population: PopulationConfig,
    pub train: TrainConfig,
    pub blackbox: BlackboxConfig,
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self> {
        let c: Config = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.compat.validate()?;
        self.population.validate()?;
        self.train.validate()
    }
}

/// A config plus a record of which `section.key` names its file set, so
/// callers can report where each effective value came from.
#[derive(Clone, Debug, Default)]
pub struct LoadedConfig {
    pub config: Config,
    pub path: Option<PathBuf>,
    keys: BTreeSet<String>,
}

impl LoadedConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let config = Config::load(path)?;
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let table: toml::Table = toml::from_str(&text).map_err(|e| Error::Config(e.to_string()))?;
        let mut keys = BTreeSet::new();
        for (section, v) in &table {
            if let Some(t) = v.as_table() {
                keys.extend(t.keys().map(|k| format!("{section}.{k}")));
            }
        }
        Ok(LoadedConfig {
            config,
            path: Some(path.to_path_buf()),
            keys,
        })
    }

    /// Whether the file set `key` (e.g. `"train.epochs"`).
    pub fn sets(&self, key: &str) -> bool {
        self.keys.contains(key)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learn::LossKind;

    #[test]
    fn empty_file_is_default() {
        assert_eq!(Config::from_toml("").unwrap(), Config::default());
    }

    #[test]
    fn round_trip() {
        let mut c = Config::default();
        c.train.loss = LossKind::Hinge;
        c.population.rng_seed = 77;
        c.compat.max_distance_nm = 500.0;
        c.survival = c.survival.with_override("D1", "P1", 3.5);
        c.blackbox.initial = Some(vec![0.5, -1.0]);
        assert_eq!(Config::from_toml(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn partial_sections() {
        let c = Config::from_toml("[train]\nloss = \"listwise\"\nepochs = 3\n[population]\ndonor_rate_per_day = 2.5\n")
            .unwrap();
        assert_eq!(c.train.loss, LossKind::Listwise);
        assert_eq!(c.train.epochs, 3);
        assert_eq!(c.train.batch_size, 32);
        assert_eq!(c.population.donor_rate_per_day, 2.5);
    }

    #[test]
    fn rejects_unknown_and_invalid() {
        assert!(matches!(Config::from_toml("[train]\nlr = 1\n"), Err(Error::Config(_))));
        assert!(matches!(Config::from_toml("[bogus]\n"), Err(Error::Config(_))));
        assert!(Config::from_toml("[train]\nloss = \"l1\"\n").is_err());
        assert!(Config::from_toml("[compat]\nmax_distance_nm = -1.0\n").is_err());
    }

    #[test]
    fn records_keys_set_by_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.toml");
        std::fs::write(&p, "[train]\nepochs = 4\n").unwrap();
        let l = LoadedConfig::load(&p).unwrap();
        assert!(l.sets("train.epochs"));
        assert!(!l.sets("train.seed"));
        assert_eq!(l.config.train.epochs, 4);
    }
}
