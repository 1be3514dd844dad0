use std::fmt::Display;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use hindsight_core::config::{LoadedConfig, CONFIG_ENV};
use hindsight_core::domain::{read_trajectory, write_trajectory, Trajectory};
use hindsight_core::experiment::{run_experiment_with, Manifest};
use hindsight_core::learn::{
    blackbox_optimize, build_dataset, fit_scaler, gradcheck_losses, jitter, train, BlackboxConfig, ImitationExample,
    LossKind, LossSpec, TrainConfig,
};
use hindsight_core::oracle::solve_trajectory;
use hindsight_core::policies::{FeatureMapId, ModelKind, Policy, PotentialModel};
use hindsight_core::popgen::{compute_bounds, generate_trajectory, semisynthetic, PopulationConfig};
use hindsight_core::sim::{metrics, monthly_report, run};
use hindsight_core::Error;

use crate::{Cli, Command};

/// 2 validation, 3 numerical, 4 I/O. Errors outside the library count as
/// validation failures (bad flags, unreadable values).
pub fn exit_code(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if let Some(err) = cause.downcast_ref::<Error>() {
            return err.exit_code() as u8;
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return 4;
        }
    }
    2
}

fn load_config(flag: Option<PathBuf>) -> Result<LoadedConfig> {
    let (path, how) = match flag {
        Some(p) => (Some(p), "--config"),
        None => match std::env::var_os(CONFIG_ENV) {
            Some(p) if !p.is_empty() => (Some(PathBuf::from(p)), CONFIG_ENV),
            _ => (None, ""),
        },
    };
    match path {
        Some(p) => {
            eprintln!("config: {} (from {how})", p.display());
            Ok(LoadedConfig::load(&p)?)
        }
        None => {
            eprintln!("config: built-in defaults");
            Ok(LoadedConfig::default())
        }
    }
}

/// Flag beats config file beats default; prints the winner and its source.
fn resolve<T: Display + Clone>(lc: &LoadedConfig, key: &str, flag: Option<T>, current: T) -> T {
    let (v, src) = match flag {
        Some(v) => (v, "flag"),
        None if lc.sets(key) => (current, "config file"),
        None => (current, "default"),
    };
    eprintln!("  {key} = {v} ({src})");
    v
}

fn write_out(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            }
            std::fs::write(p, text).map_err(|e| Error::io(p, e))?;
        }
        None => print!("{text}"),
    }
    Ok(())
}

fn read_all(paths: &[PathBuf]) -> Result<Vec<Trajectory>> {
    paths
        .iter()
        .map(|p| read_trajectory(p).with_context(|| format!("reading {}", p.display())))
        .collect()
}

fn parse_loss(s: &str) -> Result<LossKind> {
    Ok(s.parse::<LossKind>()?)
}

fn parse_map(s: &str) -> Result<FeatureMapId> {
    Ok(s.parse::<FeatureMapId>()?)
}

pub fn dispatch(cli: Cli) -> Result<()> {
    let lc = load_config(cli.config)?;
    let cfg = &lc.config;
    match cli.command {
        Command::Generate(a) => {
            let seed = resolve(&lc, "population.rng_seed", a.seed, cfg.population.rng_seed);
            let pc = PopulationConfig {
                rng_seed: seed,
                ..cfg.population.clone()
            };
            let t = generate_trajectory(&pc, a.horizon_days)?;
            write_trajectory(&a.out, &t)?;
            eprintln!(
                "wrote {} ({} donors, {} patients)",
                a.out.display(),
                t.donor_count(),
                t.patients().count()
            );
        }
        Command::Augment(a) => {
            let t = read_trajectory(&a.input)?;
            let b = compute_bounds(&t, a.window_days.unwrap_or(a.subhorizon_days))?;
            eprintln!(
                "bounds: donors {}..{}, patients {}..{}",
                b.d_min, b.d_max, b.p_min, b.p_max
            );
            if a.count == 1 {
                write_trajectory(&a.out, &semisynthetic(&t, a.subhorizon_days, &b, a.seed)?)?;
            } else {
                std::fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
                for j in 0..a.count {
                    let s = a.seed.wrapping_add(j as u64);
                    let d = semisynthetic(&t, a.subhorizon_days, &b, s)?;
                    write_trajectory(a.out.join(format!("aug_{j:03}.traj")), &d)?;
                }
            }
            eprintln!("wrote {} draw(s) to {}", a.count, a.out.display());
        }
        Command::Oracle(a) => {
            let t = read_trajectory(&a.input)?;
            let sol = solve_trajectory(&t, &cfg.compat, &cfg.survival)?;
            let mut s = String::from("time,donor_id,patient_id,utility\n");
            for m in &sol.matches {
                let _ = writeln!(s, "{},{},{},{}", m.time, m.donor_id, m.patient_id, m.utility);
            }
            let _ = writeln!(s, "total,,,{}", sol.total_utility);
            write_out(a.out.as_deref(), &s)?;
            eprintln!("{} matches, total utility {}", sol.matches.len(), sol.total_utility);
        }
        Command::Train(a) => {
            let map = parse_map(&a.features)?;
            let loss = resolve(
                &lc,
                "train.loss",
                a.loss.as_deref().map(parse_loss).transpose()?,
                cfg.train.loss,
            );
            let epochs = resolve(&lc, "train.epochs", a.epochs, cfg.train.epochs);
            let seed = resolve(&lc, "train.seed", a.seed, cfg.train.seed);
            let lr = resolve(&lc, "train.learning_rate", a.learning_rate, cfg.train.learning_rate);
            let tc = TrainConfig {
                loss,
                epochs,
                seed,
                learning_rate: lr,
                ..cfg.train.clone()
            };
            let trajs = read_all(&a.data)?;
            let ds = build_dataset(&trajs, map, &cfg.compat, &cfg.survival)?;
            let m0 = if a.hidden.is_empty() {
                PotentialModel::zeros(map, ModelKind::Linear, &[])?
            } else {
                PotentialModel::mlp_init(map, &a.hidden, seed)?
            };
            eprintln!("training on {} decisions from {} trajectories", ds.len(), trajs.len());
            let out = train(&ds, &m0, &tc)?;
            for (e, l) in out.epoch_losses.iter().enumerate() {
                eprintln!("epoch {:>3}  loss {l:.6}", e + 1);
            }
            out.model.save(&a.out_model)?;
            eprintln!("wrote {}", a.out_model.display());
        }
        Command::Blackbox(a) => {
            let map = parse_map(&a.features)?;
            let budget = resolve(&lc, "blackbox.budget", a.budget, cfg.blackbox.budget);
            let seed = resolve(&lc, "blackbox.seed", a.seed, cfg.blackbox.seed);
            if let Some(d) = a.dims {
                if d != map.dim() {
                    return Err(Error::DimensionMismatch {
                        expected: map.dim(),
                        got: d,
                    }
                    .into());
                }
            }
            let bc = BlackboxConfig {
                budget,
                seed,
                ..cfg.blackbox.clone()
            };
            let trajs = read_all(&a.data)?;
            let objective = |theta: &[f64]| -> hindsight_core::Result<f64> {
                let p = Policy::Model(PotentialModel::linear(map, theta.to_vec())?);
                let mut total = 0.0;
                for t in &trajs {
                    total += run(t, &p, &cfg.compat, &cfg.survival)?.total_plyg;
                }
                Ok(total / trajs.len() as f64)
            };
            let r = blackbox_optimize(objective, map.dim(), &bc)?;
            eprintln!("best mean PLYG {} after {} evaluations", r.value, r.evaluations());
            PotentialModel::linear(map, r.theta)?.save(&a.out_model)?;
            eprintln!("wrote {}", a.out_model.display());
        }
        Command::Gradcheck(a) => gradcheck_cmd(&lc, a)?,
        Command::PolicyEval(a) => {
            let t = read_trajectory(&a.input)?;
            let p = named_policy(&a.policy)?;
            let r = run(&t, &p, &cfg.compat, &cfg.survival)?;
            let m = metrics(&r, &t);
            println!("plyg,{}", r.total_plyg);
            println!("matches,{}", r.matches.len());
            println!("discards,{}", r.discards.len());
            println!("deaths,{}", r.deaths().count());
            if let Some(p) = &a.matches_out {
                write_out(Some(p), &r.matches_csv())?;
            }
            if let Some(p) = &a.metrics_out {
                write_out(Some(p), &m.to_csv())?;
            }
        }
        Command::Report(a) => {
            let trajs: Vec<(String, Trajectory)> = a
                .trajectories
                .iter()
                .map(|p| {
                    let name = p
                        .file_stem()
                        .and_then(|s| s.to_str())
                        .unwrap_or("trajectory")
                        .to_string();
                    Ok((name, read_trajectory(p)?))
                })
                .collect::<Result<_>>()?;
            let policies: Vec<(String, Policy)> = a
                .policies
                .iter()
                .map(|s| match s.split_once('=') {
                    Some((name, path)) => Ok((name.to_string(), named_policy(path)?)),
                    None => Ok((s.clone(), named_policy(s)?)),
                })
                .collect::<Result<_>>()?;
            let r = monthly_report(&trajs, &policies, &cfg.compat, &cfg.survival)?;
            write_out(a.out.as_deref(), &r.to_csv())?;
        }
        Command::Experiment(a) => {
            let mut m = Manifest::load(&a.manifest)?;
            if let Some(o) = a.output_dir {
                m.output_dir = o;
            }
            if let Some(s) = a.seed {
                m.seed = s;
            }
            if m.config.is_none() {
                m.config = lc.path.clone();
            }
            eprintln!("experiment: seed {} -> {}", m.seed, m.output_dir.display());
            let start = std::time::Instant::now();
            let o = run_experiment_with(&m, &mut |line| {
                eprintln!("[{:>8.1}s] {line}", start.elapsed().as_secs_f64())
            })?;
            eprintln!("wrote {} files under {}", o.written.len(), o.output_dir.display());
        }
    }
    Ok(())
}

fn named_policy(s: &str) -> Result<Policy> {
    Ok(match s {
        "myopic" => Policy::Myopic,
        "status_quo" => Policy::StatusQuo,
        path => {
            let p = Path::new(path);
            if !p.exists() {
                bail!("unknown policy {s:?}: expected myopic, status_quo, or a model file");
            }
            Policy::Model(PotentialModel::load(p)?)
        }
    })
}

fn gradcheck_cmd(lc: &LoadedConfig, a: crate::GradcheckArgs) -> Result<()> {
    let cfg = &lc.config;
    let map = parse_map(&a.features)?;
    let t = match &a.data {
        Some(p) => read_trajectory(p)?,
        None => generate_trajectory(
            &PopulationConfig {
                rng_seed: a.seed,
                initial_waitlist_size: 60,
                ..cfg.population.clone()
            },
            10,
        )?,
    };
    let ds = build_dataset(&[t], map, &cfg.compat, &cfg.survival)?;
    let batch: Vec<&ImitationExample> = ds.examples.iter().take(a.batch).collect();
    if batch.is_empty() {
        bail!("the trajectory yields no oracle decisions to check");
    }
    let mut m = if a.hidden.is_empty() {
        PotentialModel::zeros(map, ModelKind::Linear, &[])?
    } else {
        PotentialModel::mlp_init(map, &a.hidden, a.seed)?
    };
    if m.kind == ModelKind::Mlp {
        // Same input standardization as training.
        m.scaler = Some(fit_scaler(&ds)?);
    }
    // A random point away from the all-zero start exercises every layer.
    jitter(&mut m, a.seed, 0.2);
    let kinds = match &a.loss {
        Some(l) => vec![parse_loss(l)?],
        None => LossKind::ALL.to_vec(),
    };
    let specs: Vec<LossSpec> = kinds
        .iter()
        .map(|&kind| LossSpec {
            kind,
            margin: cfg.train.margin,
            l2: cfg.train.l2,
            importance_weighting: cfg.train.importance_weighting,
        })
        .collect();
    let mut failed = false;
    for (kind, r) in kinds.iter().zip(gradcheck_losses(&m, &batch, &specs, None)?) {
        let ok = r.passes(a.tolerance);
        failed |= !ok;
        println!(
            "{kind:<9} max_rel_error {:.3e}  params {}  examples {}  near_kink {}  unit_kink_retries {}  skipped {}  {}",
            r.max_rel_error,
            r.params_checked,
            r.examples_used,
            r.excluded_near_kink,
            r.kink_retries,
            r.kink_skipped,
            if ok { "ok" } else { "FAIL" }
        );
    }
    if failed {
        return Err(Error::Numerical(format!("gradient check exceeded tolerance {:e}", a.tolerance)).into());
    }
    Ok(())
}
