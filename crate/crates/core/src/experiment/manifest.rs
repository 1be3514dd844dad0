use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Generate,
    Augment,
    Train,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 4] = [Stage::Generate, Stage::Augment, Stage::Train, Stage::Report];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Generate => "generate",
            Stage::Augment => "augment",
            Stage::Train => "train",
            Stage::Report => "report",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// The eight policies of the main comparison, in report order.
pub const DEFAULT_ROSTER: [&str; 8] = [
    "status_quo",
    "myopic",
    "cas",
    "linear_blackbox",
    "linear_lr",
    "linear_svm",
    "nn4",
    "nn34",
];

/// Everything needed to reproduce one experiment directory.
///
/// Relative paths are resolved against the manifest file's directory when
/// loaded with [`Manifest::load`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Manifest {
    pub output_dir: PathBuf,
    /// Optional TOML run configuration; defaults apply when absent.
    pub config: Option<PathBuf>,
    pub seed: u64,
    pub stages: Vec<Stage>,
    pub horizon_days: u32,
    pub train_months: usize,
    pub heldout_months: usize,
    /// Semi-synthetic draws per training trajectory.
    pub draws_per_month: usize,
    pub policies: Vec<String>,
    /// Existing training trajectories; when non-empty nothing is generated for training.
    pub train_files: Vec<PathBuf>,
    /// Existing held-out trajectories; when non-empty nothing is generated for evaluation.
    pub heldout_files: Vec<PathBuf>,
    /// Learning rate for linear imitation models (the configured rate is
    /// sized for the neural networks).
    pub linear_learning_rate: f64,
}

impl Default for Manifest {
    fn default() -> Self {
        Manifest {
            output_dir: PathBuf::from("out"),
            config: None,
            seed: 0,
            stages: Stage::ALL.to_vec(),
            horizon_days: 30,
            train_months: 12,
            heldout_months: 9,
            draws_per_month: 2,
            policies: DEFAULT_ROSTER.iter().map(|s| s.to_string()).collect(),
            train_files: Vec::new(),
            heldout_files: Vec::new(),
            linear_learning_rate: 1e-2,
        }
    }
}

fn rebase(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl Manifest {
    pub fn from_toml(text: &str) -> Result<Self> {
        let m: Manifest = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        Ok(m)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("manifest serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut m = Self::from_toml(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        rebase(base, &mut m.output_dir);
        if let Some(c) = &mut m.config {
            rebase(base, c);
        }
        for f in m.train_files.iter_mut().chain(m.heldout_files.iter_mut()) {
            rebase(base, f);
        }
        Ok(m)
    }

    /// Stages in execution order, deduplicated.
    pub fn ordered_stages(&self) -> Vec<Stage> {
        let mut s = self.stages.clone();
        s.sort();
        s.dedup();
        s
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon_days == 0 {
            return Err(Error::Config("horizon_days must be at least 1".into()));
        }
        if !(self.linear_learning_rate > 0.0) {
            return Err(Error::Config("linear_learning_rate must be > 0".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for p in &self.policies {
            super::PolicySpec::named(p)?;
            if !seen.insert(p) {
                return Err(Error::Config(format!("policy {p:?} listed twice")));
            }
        }
        for f in self.config.iter().chain(&self.train_files).chain(&self.heldout_files) {
            if !f.is_file() {
                return Err(Error::io(
                    f,
                    std::io::Error::new(std::io::ErrorKind::NotFound, "referenced file does not exist"),
                ));
            }
        }
        Ok(())
    }
}
