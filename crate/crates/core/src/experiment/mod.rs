//! Staged experiment pipeline: generate, augment, train, report.
//!
//! Each stage reads what earlier stages left in the output directory, so a
//! manifest may run any subset of stages against an existing directory.

mod manifest;

pub use manifest::{Manifest, Stage, DEFAULT_ROSTER};

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::config::Config;
use crate::domain::{read_trajectory, write_trajectory, Trajectory};
use crate::error::{Error, Result};
use crate::learn::{blackbox_optimize, build_dataset, train, ImitationDataset, LossKind, TrainConfig};
use crate::policies::{FeatureMapId, ModelKind, Policy, PotentialModel};
use crate::popgen::{compute_bounds, generate_trajectory, semisynthetic, PopulationConfig};
use crate::sim::{evaluate, run, Metrics, Report, METRICS_HEADER};

/// How a roster entry obtains its decisions.
#[derive(Clone, Debug, PartialEq)]
pub enum PolicySpec {
    StatusQuo,
    Myopic,
    Imitation {
        map: FeatureMapId,
        hidden: Vec<usize>,
        loss: LossKind,
    },
    Blackbox {
        map: FeatureMapId,
    },
}

/// Known roster names. The position fixes each policy's seed stream.
const KNOWN: [&str; 9] = [
    "status_quo",
    "myopic",
    "cas",
    "linear_blackbox",
    "linear_lr",
    "linear_svm",
    "nn4",
    "nn34",
    "cas_blackbox",
];

impl PolicySpec {
    pub fn named(name: &str) -> Result<Self> {
        use FeatureMapId::*;
        let imitation = |map, hidden: &[usize], loss| PolicySpec::Imitation {
            map,
            hidden: hidden.to_vec(),
            loss,
        };
        Ok(match name {
            "status_quo" => PolicySpec::StatusQuo,
            "myopic" => PolicySpec::Myopic,
            "cas" => imitation(Cas14, &[], LossKind::Pairwise),
            "cas_blackbox" => PolicySpec::Blackbox { map: Cas14 },
            "linear_blackbox" => PolicySpec::Blackbox { map: Blood4 },
            "linear_lr" => imitation(Blood4, &[], LossKind::Pairwise),
            "linear_svm" => imitation(Blood4, &[], LossKind::Hinge),
            "nn4" => imitation(Blood4, &[64, 32], LossKind::Pairwise),
            "nn34" => imitation(MatchState34, &[128, 64, 32], LossKind::Listwise),
            _ => {
                return Err(Error::Config(format!(
                    "unknown policy {name:?}; expected one of {}",
                    KNOWN.join(", ")
                )))
            }
        })
    }

    pub fn is_learned(&self) -> bool {
        matches!(self, PolicySpec::Imitation { .. } | PolicySpec::Blackbox { .. })
    }
}

/// Seed number `index` of stream `stream` under the master seed.
pub fn derive_seed(master: u64, stream: u64, index: u64) -> u64 {
    let mut r = ChaCha8Rng::seed_from_u64(master);
    r.set_stream(stream);
    r.set_word_pos(u128::from(index) * 2);
    r.next_u64()
}

const STREAM_TRAIN: u64 = 1;
const STREAM_HELDOUT: u64 = 2;
const STREAM_AUGMENT: u64 = 3;
const STREAM_FIT: u64 = 4;
const STREAM_INIT: u64 = 5;
const STREAM_BLACKBOX: u64 = 6;

#[derive(Clone, Debug, Default)]
pub struct ExperimentOutcome {
    pub output_dir: PathBuf,
    pub stages: Vec<Stage>,
    pub report: Option<Report>,
    /// Per report row, in the same order.
    pub metrics: Vec<Metrics>,
    pub models: Vec<(String, PotentialModel)>,
    pub written: Vec<PathBuf>,
}

struct Ctx<'a> {
    m: &'a Manifest,
    cfg: Config,
    out: &'a Path,
    written: Vec<PathBuf>,
    log: &'a mut dyn FnMut(&str),
}

impl Ctx<'_> {
    fn traj_dir(&self) -> PathBuf {
        self.out.join("trajectories")
    }

    fn model_path(&self, name: &str) -> PathBuf {
        self.out.join("models").join(format!("{name}.model"))
    }

    fn write(&mut self, path: PathBuf, contents: &str) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        std::fs::write(&path, contents).map_err(|e| Error::io(&path, e))?;
        self.written.push(path);
        Ok(())
    }

    fn write_traj(&mut self, name: &str, t: &Trajectory) -> Result<()> {
        let dir = self.traj_dir();
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let path = dir.join(format!("{name}.traj"));
        write_trajectory(&path, t)?;
        self.written.push(path);
        Ok(())
    }

    /// Generated files with `prefix`, sorted by name.
    fn stored(&self, prefix: &str) -> Result<Vec<PathBuf>> {
        let dir = self.traj_dir();
        if !dir.is_dir() {
            return Ok(Vec::new());
        }
        let mut v: Vec<PathBuf> = std::fs::read_dir(&dir)
            .map_err(|e| Error::io(&dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                p.extension().is_some_and(|x| x == "traj")
                    && p.file_name()
                        .and_then(|n| n.to_str())
                        .is_some_and(|n| n.starts_with(prefix))
            })
            .collect();
        v.sort();
        Ok(v)
    }

    fn clear(&self, prefix: &str) -> Result<()> {
        for p in self.stored(prefix)? {
            std::fs::remove_file(&p).map_err(|e| Error::io(&p, e))?;
        }
        Ok(())
    }

    fn training_set(&self, with_augmented: bool) -> Result<Vec<(String, Trajectory)>> {
        let mut files = if self.m.train_files.is_empty() {
            self.stored("train_")?
        } else {
            self.m.train_files.clone()
        };
        if with_augmented {
            files.extend(self.stored("aug_")?);
        }
        load_named(&files)
    }

    fn heldout_set(&self) -> Result<Vec<(String, Trajectory)>> {
        let files = if self.m.heldout_files.is_empty() {
            self.stored("heldout_")?
        } else {
            self.m.heldout_files.clone()
        };
        load_named(&files)
    }
}

fn load_named(files: &[PathBuf]) -> Result<Vec<(String, Trajectory)>> {
    files
        .par_iter()
        .map(|f| {
            let name = f
                .file_stem()
                .and_then(|s| s.to_str())
                .unwrap_or("trajectory")
                .to_string();
            Ok((name, read_trajectory(f)?))
        })
        .collect()
}

fn month(pc: &PopulationConfig, seed: u64, horizon: u32) -> Result<Trajectory> {
    let pc = PopulationConfig {
        rng_seed: seed,
        ..pc.clone()
    };
    generate_trajectory(&pc, i64::from(horizon))
}

fn stage_generate(cx: &mut Ctx<'_>) -> Result<()> {
    let m = cx.m;
    let mut jobs = Vec::new();
    if m.train_files.is_empty() {
        cx.clear("train_")?;
        jobs.extend(
            (0..m.train_months).map(|i| (format!("train_{i:02}"), derive_seed(m.seed, STREAM_TRAIN, i as u64))),
        );
    }
    if m.heldout_files.is_empty() {
        cx.clear("heldout_")?;
        jobs.extend(
            (0..m.heldout_months).map(|i| (format!("heldout_{i:02}"), derive_seed(m.seed, STREAM_HELDOUT, i as u64))),
        );
    }
    let pc = &cx.cfg.population;
    let made: Vec<(String, Trajectory)> = jobs
        .par_iter()
        .map(|(name, s)| Ok((name.clone(), month(pc, *s, m.horizon_days)?)))
        .collect::<Result<_>>()?;
    for (name, t) in &made {
        cx.write_traj(name, t)?;
    }
    (cx.log)(&format!("generate: wrote {} trajectories", made.len()));
    Ok(())
}

fn stage_augment(cx: &mut Ctx<'_>) -> Result<()> {
    cx.clear("aug_")?;
    let base = cx.training_set(false)?;
    if base.is_empty() {
        return Err(Error::invalid("no training trajectories to augment"));
    }
    let h = cx.m.horizon_days;
    let seed = cx.m.seed;
    let k = cx.m.draws_per_month;
    let made: Vec<(String, Trajectory)> = base
        .par_iter()
        .enumerate()
        .map(|(i, (_, t))| {
            let window = h.min(u32::try_from(t.horizon()).unwrap_or(u32::MAX)).max(1);
            let b = compute_bounds(t, window)?;
            (0..k)
                .map(|j| {
                    let s = derive_seed(seed, STREAM_AUGMENT, (i * k + j) as u64);
                    Ok((format!("aug_{i:02}_{j:02}"), semisynthetic(t, h, &b, s)?))
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    for (name, t) in &made {
        cx.write_traj(name, t)?;
    }
    (cx.log)(&format!("augment: wrote {} semi-synthetic trajectories", made.len()));
    Ok(())
}

fn stage_train(cx: &mut Ctx<'_>) -> Result<Vec<(String, PotentialModel)>> {
    let learned: Vec<(usize, String, PolicySpec)> =
        cx.m.policies
            .iter()
            .map(|n| {
                Ok((
                    KNOWN.iter().position(|k| k == n).unwrap_or(0),
                    n.clone(),
                    PolicySpec::named(n)?,
                ))
            })
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .filter(|(_, _, s)| s.is_learned())
            .collect();
    if learned.is_empty() {
        return Ok(Vec::new());
    }
    let trajs = cx.training_set(true)?;
    if trajs.is_empty() {
        return Err(Error::invalid("no training trajectories"));
    }
    let plain: Vec<Trajectory> = trajs.iter().map(|(_, t)| t.clone()).collect();
    let (compat, survival) = (cx.cfg.compat.clone(), cx.cfg.survival.clone());
    let mut base: Option<ImitationDataset> = None;
    let mut models = Vec::new();
    let mut log_csv = String::from("policy,step,value\n");
    for (slot, name, spec) in learned {
        let model = match spec {
            PolicySpec::Imitation { map, hidden, loss } => {
                if base.is_none() {
                    base = Some(build_dataset(&plain, FeatureMapId::Blood4, &compat, &survival)?);
                }
                let ds = base.as_ref().expect("dataset built").with_feature_map(map)?;
                let fit_seed = derive_seed(cx.m.seed, STREAM_FIT, slot as u64);
                let (m0, lr) = if hidden.is_empty() {
                    (
                        PotentialModel::zeros(map, ModelKind::Linear, &[])?,
                        cx.m.linear_learning_rate,
                    )
                } else {
                    let init = derive_seed(cx.m.seed, STREAM_INIT, slot as u64);
                    (
                        PotentialModel::mlp_init(map, &hidden, init)?,
                        cx.cfg.train.learning_rate,
                    )
                };
                let tc = TrainConfig {
                    loss,
                    learning_rate: lr,
                    seed: fit_seed,
                    ..cx.cfg.train.clone()
                };
                let out = train(&ds, &m0, &tc)?;
                for (e, l) in out.epoch_losses.iter().enumerate() {
                    let _ = writeln!(log_csv, "{name},{},{l}", e + 1);
                }
                (cx.log)(&format!(
                    "train: {name} ({} examples, final epoch loss {:.4})",
                    ds.len(),
                    out.epoch_losses.last().copied().unwrap_or(f64::NAN)
                ));
                out.model
            }
            PolicySpec::Blackbox { map } => {
                let bc = crate::learn::BlackboxConfig {
                    seed: derive_seed(cx.m.seed, STREAM_BLACKBOX, slot as u64),
                    ..cx.cfg.blackbox.clone()
                };
                // Base trajectories only: each evaluation simulates all of them.
                let evals = cx.training_set(false)?;
                let objective = |theta: &[f64]| -> Result<f64> {
                    let p = Policy::Model(PotentialModel::linear(map, theta.to_vec())?);
                    let mut total = 0.0;
                    for (_, t) in &evals {
                        total += run(t, &p, &compat, &survival)?.total_plyg;
                    }
                    Ok(total / evals.len() as f64)
                };
                let r = blackbox_optimize(objective, map.dim(), &bc)?;
                for (e, (_, v)) in r.history.iter().enumerate() {
                    let _ = writeln!(log_csv, "{name},{},{v}", e + 1);
                }
                (cx.log)(&format!(
                    "train: {name} (black-box, {} evaluations, best mean PLYG {:.4})",
                    r.evaluations(),
                    r.value
                ));
                PotentialModel::linear(map, r.theta)?
            }
            PolicySpec::StatusQuo | PolicySpec::Myopic => unreachable!("filtered above"),
        };
        let path = cx.model_path(&name);
        cx.write(path, &model.to_text())?;
        models.push((name, model));
    }
    cx.write(cx.out.join("training.csv"), &log_csv)?;
    Ok(models)
}

fn stage_report(cx: &mut Ctx<'_>, trained: &[(String, PotentialModel)]) -> Result<(Report, Vec<Metrics>)> {
    let heldout = cx.heldout_set()?;
    if heldout.is_empty() {
        return Err(Error::invalid("no held-out trajectories to evaluate"));
    }
    let mut policies = Vec::new();
    for name in &cx.m.policies {
        let p = match PolicySpec::named(name)? {
            PolicySpec::StatusQuo => Policy::StatusQuo,
            PolicySpec::Myopic => Policy::Myopic,
            _ => match trained.iter().find(|(n, _)| n == name) {
                Some((_, m)) => Policy::Model(m.clone()),
                None => Policy::Model(PotentialModel::load(&cx.model_path(name))?),
            },
        };
        policies.push((name.clone(), p));
    }
    let (report, metrics) = evaluate(&heldout, &policies, &cx.cfg.compat, &cx.cfg.survival)?;
    cx.write(cx.out.join("report.csv"), &report.to_csv())?;
    let mut csv = format!("trajectory,policy,{METRICS_HEADER}\n");
    for (row, m) in report.rows.iter().zip(&metrics) {
        for (group, g) in m.groups() {
            let _ = writeln!(
                csv,
                "{},{},{group},{}",
                row.trajectory,
                row.policy,
                Metrics::csv_fields(g)
            );
        }
    }
    cx.write(cx.out.join("metrics.csv"), &csv)?;
    for p in &report.policies {
        if let Some(mean) = report.mean(p) {
            (cx.log)(&format!(
                "report: {p:<16} mean PLYG {:10.4}  ratio {:.4}",
                mean.plyg,
                mean.competitive_ratio.unwrap_or(f64::NAN)
            ));
        }
    }
    Ok((report, metrics))
}

fn tag<T>(stage: Stage, r: Result<T>) -> Result<T> {
    r.map_err(|e| Error::Stage {
        stage: stage.as_str(),
        source: Box::new(e),
    })
}

pub fn run_experiment(m: &Manifest) -> Result<ExperimentOutcome> {
    run_experiment_with(m, &mut |_| {})
}

/// Runs the manifest's stages in pipeline order, reporting progress lines to
/// `log`. Writes `config.toml` and a replay `manifest.toml` into the output
/// directory.
pub fn run_experiment_with(m: &Manifest, log: &mut dyn FnMut(&str)) -> Result<ExperimentOutcome> {
    m.validate()?;
    let cfg = match &m.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    cfg.validate()?;
    let out = m.output_dir.clone();
    std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    let stages = m.ordered_stages();
    let mut cx = Ctx {
        m,
        cfg,
        out: &out,
        written: Vec::new(),
        log,
    };
    let mut outcome = ExperimentOutcome {
        output_dir: out.clone(),
        stages: stages.clone(),
        ..Default::default()
    };
    for &stage in &stages {
        match stage {
            Stage::Generate => tag(stage, stage_generate(&mut cx))?,
            Stage::Augment => tag(stage, stage_augment(&mut cx))?,
            Stage::Train => outcome.models = tag(stage, stage_train(&mut cx))?,
            Stage::Report => {
                let (r, ms) = tag(stage, stage_report(&mut cx, &outcome.models))?;
                outcome.report = Some(r);
                outcome.metrics = ms;
            }
        }
    }
    let replay = Manifest {
        output_dir: PathBuf::from("."),
        config: Some(PathBuf::from("config.toml")),
        ..m.clone()
    };
    let config_text = cx.cfg.to_toml();
    cx.write(out.join("config.toml"), &config_text)?;
    cx.write(out.join("manifest.toml"), &replay.to_toml())?;
    outcome.written = cx.written;
    Ok(outcome)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(dir: &Path, stages: &[Stage], policies: &[&str]) -> Manifest {
        let cfg = dir.join("cfg.toml");
        std::fs::write(
            &cfg,
            "[population]\ninitial_waitlist_size = 40\n[train]\nepochs = 2\n[blackbox]\nbudget = 4\n",
        )
        .unwrap();
        Manifest {
            output_dir: dir.join("out"),
            config: Some(cfg),
            seed: 5,
            stages: stages.to_vec(),
            horizon_days: 8,
            train_months: 2,
            heldout_months: 2,
            draws_per_month: 1,
            policies: policies.iter().map(|s| s.to_string()).collect(),
            ..Default::default()
        }
    }

    #[test]
    fn seeds_are_stable_and_distinct() {
        assert_eq!(derive_seed(1, 2, 3), derive_seed(1, 2, 3));
        assert_ne!(derive_seed(1, 2, 3), derive_seed(1, 2, 4));
        assert_ne!(derive_seed(1, 2, 3), derive_seed(1, 3, 3));
        assert_ne!(derive_seed(1, 2, 3), derive_seed(2, 2, 3));
    }

    #[test]
    fn generate_only_writes_one_file() {
        let dir = tempfile::tempdir().unwrap();
        let m = Manifest {
            train_months: 1,
            heldout_months: 0,
            ..small(dir.path(), &[Stage::Generate], &["myopic"])
        };
        let o = run_experiment(&m).unwrap();
        let trajs: Vec<_> = o
            .written
            .iter()
            .filter(|p| p.extension().is_some_and(|x| x == "traj"))
            .collect();
        assert_eq!(trajs.len(), 1);
        assert!(o.report.is_none());
        assert!(dir.path().join("out/manifest.toml").is_file());
    }

    #[test]
    fn full_pipeline_and_replay() {
        let dir = tempfile::tempdir().unwrap();
        let m = small(
            dir.path(),
            &Stage::ALL,
            &["status_quo", "myopic", "linear_lr", "linear_blackbox", "nn4"],
        );
        let o = run_experiment(&m).unwrap();
        let r = o.report.as_ref().unwrap();
        assert_eq!(r.rows.len(), 2 * 5);
        assert_eq!(o.models.len(), 3);
        for row in &r.rows {
            assert!(row.plyg <= row.omniscient, "{row:?}");
        }
        let first = std::fs::read(dir.path().join("out/report.csv")).unwrap();

        // The replay manifest regenerates the same directory contents.
        let replay = Manifest::load(&dir.path().join("out/manifest.toml")).unwrap();
        run_experiment(&replay).unwrap();
        assert_eq!(std::fs::read(dir.path().join("out/report.csv")).unwrap(), first);
    }

    #[test]
    fn report_stage_reuses_saved_models() {
        let dir = tempfile::tempdir().unwrap();
        let all = small(dir.path(), &Stage::ALL, &["myopic", "linear_svm"]);
        let a = run_experiment(&all).unwrap();
        let again = Manifest {
            stages: vec![Stage::Report],
            ..all
        };
        let b = run_experiment(&again).unwrap();
        assert_eq!(a.report, b.report);
    }

    #[test]
    fn failures_name_the_stage() {
        let dir = tempfile::tempdir().unwrap();
        let m = small(dir.path(), &[Stage::Report], &["myopic"]);
        let e = run_experiment(&m).unwrap_err();
        assert!(e.to_string().starts_with("stage report:"), "{e}");
        assert_eq!(e.exit_code(), 2);
        let m = small(dir.path(), &[Stage::Report], &["nn4"]);
        let e = run_experiment(&Manifest {
            heldout_months: 1,
            stages: vec![Stage::Generate, Stage::Report],
            ..m
        })
        .unwrap_err();
        assert_eq!(e.exit_code(), 4, "{e}");
    }
}
