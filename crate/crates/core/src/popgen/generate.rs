use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::weighted::WeightedIndex;
use rand_distr::{Beta, Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::domain::*;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BetaParams {
    pub alpha: f64,
    pub beta: f64,
}

impl BetaParams {
    pub fn mean(&self) -> f64 {
        self.alpha / (self.alpha + self.beta)
    }

    fn dist(&self, what: &str) -> Result<Beta<f64>> {
        Beta::new(self.alpha, self.beta)
            .map_err(|e| Error::Config(format!("{what} beta({}, {}): {e}", self.alpha, self.beta)))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PopulationConfig {
    /// `O, A, B, AB` frequencies, shared by donors and patients.
    pub blood_type_frequencies: [f64; 4],
    pub region_weights: [f64; 9],
    pub severity_distribution: BetaParams,
    pub cpra_distribution: BetaParams,
    pub donor_quality_distribution: BetaParams,
    pub donor_rate_per_day: f64,
    pub patient_arrival_rate_per_day: f64,
    pub initial_waitlist_size: usize,
    /// Longest prior wait of an initial-waitlist patient.
    pub max_initial_wait_days: u32,
    /// Daily death probability of a patient at severity 1.
    pub death_hazard_scale: f64,
    pub delisting_rate_per_day: f64,
    /// Daily probability of a clinical status update.
    pub status_update_rate: f64,
    pub severity_drift: f64,
    pub severity_volatility: f64,
    pub lvad_probability: f64,
    pub rng_seed: u64,
}

impl Default for PopulationConfig {
    fn default() -> Self {
        PopulationConfig {
            blood_type_frequencies: [0.44, 0.42, 0.10, 0.04],
            region_weights: [0.08, 0.10, 0.12, 0.12, 0.14, 0.12, 0.10, 0.12, 0.10],
            severity_distribution: BetaParams { alpha: 2.0, beta: 2.5 },
            cpra_distribution: BetaParams { alpha: 1.0, beta: 4.0 },
            donor_quality_distribution: BetaParams { alpha: 2.5, beta: 2.0 },
            donor_rate_per_day: 5.0,
            patient_arrival_rate_per_day: 5.0,
            initial_waitlist_size: 250,
            max_initial_wait_days: 365,
            death_hazard_scale: 0.03,
            delisting_rate_per_day: 0.002,
            status_update_rate: 0.1,
            severity_drift: 0.02,
            severity_volatility: 0.06,
            lvad_probability: 0.2,
            rng_seed: 1,
        }
    }
}

impl PopulationConfig {
    pub fn validate(&self) -> Result<()> {
        let simplex = |name: &str, w: &[f64]| -> Result<()> {
            if w.iter().any(|&x| !(x >= 0.0)) || (w.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
                return Err(Error::Config(format!("{name} must be a probability simplex")));
            }
            Ok(())
        };
        simplex("blood_type_frequencies", &self.blood_type_frequencies)?;
        simplex("region_weights", &self.region_weights)?;
        for (name, rate) in [
            ("donor_rate_per_day", self.donor_rate_per_day),
            ("patient_arrival_rate_per_day", self.patient_arrival_rate_per_day),
            ("death_hazard_scale", self.death_hazard_scale),
            ("delisting_rate_per_day", self.delisting_rate_per_day),
            ("status_update_rate", self.status_update_rate),
            ("severity_volatility", self.severity_volatility),
        ] {
            if !(rate >= 0.0 && rate.is_finite()) {
                return Err(Error::Config(format!("{name} must be finite and >= 0")));
            }
        }
        for (name, p) in [
            ("death_hazard_scale", self.death_hazard_scale),
            ("delisting_rate_per_day", self.delisting_rate_per_day),
            ("status_update_rate", self.status_update_rate),
            ("lvad_probability", self.lvad_probability),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} is a probability")));
            }
        }
        self.severity_distribution.dist("severity")?;
        self.cpra_distribution.dist("cpra")?;
        self.donor_quality_distribution.dist("donor quality")?;
        Ok(())
    }
}

struct Samplers {
    blood: WeightedIndex<f64>,
    region: WeightedIndex<f64>,
    severity: Beta<f64>,
    cpra: Beta<f64>,
    quality: Beta<f64>,
}

impl Samplers {
    fn new(cfg: &PopulationConfig) -> Result<Self> {
        let wi = |w: &[f64]| WeightedIndex::new(w).map_err(|e| Error::Config(e.to_string()));
        Ok(Samplers {
            blood: wi(&cfg.blood_type_frequencies)?,
            region: wi(&cfg.region_weights)?,
            severity: cfg.severity_distribution.dist("severity")?,
            cpra: cfg.cpra_distribution.dist("cpra")?,
            quality: cfg.donor_quality_distribution.dist("donor quality")?,
        })
    }

    fn location(&self, rng: &mut ChaCha8Rng, geo: &Geography) -> Location {
        let region = Region::all().nth(self.region.sample(rng)).expect("nine regions");
        let (lo, hi) = geo.region_box(region);
        // Stay strictly inside the box so the coordinate never lands on a
        // shared edge.
        let x = lo[0] + (hi[0] - lo[0]) * rng.random_range(0.001..0.999);
        let y = lo[1] + (hi[1] - lo[1]) * rng.random_range(0.001..0.999);
        Location::new(region, x, y)
    }

    fn blood(&self, rng: &mut ChaCha8Rng) -> BloodType {
        BloodType::ALL[self.blood.sample(rng)]
    }
}

fn poisson_count(rng: &mut ChaCha8Rng, rate: f64) -> Result<u64> {
    if rate == 0.0 {
        return Ok(0);
    }
    let p = Poisson::new(rate).map_err(|e| Error::Config(format!("poisson({rate}): {e}")))?;
    Ok(p.sample(rng) as u64)
}

/// Samples a fully synthetic trajectory. Each patient's progression (status
/// updates, death, delisting) is drawn up front and written as events, so a
/// trajectory is a complete record of what would happen absent transplants.
pub fn generate_trajectory(cfg: &PopulationConfig, horizon_days: i64) -> Result<Trajectory> {
    generate_trajectory_in(cfg, horizon_days, &Geography::default())
}

pub fn generate_trajectory_in(cfg: &PopulationConfig, horizon_days: i64, geo: &Geography) -> Result<Trajectory> {
    if horizon_days <= 0 || horizon_days > i64::from(i32::MAX) {
        return Err(Error::invalid(format!(
            "horizon_days must be positive, got {horizon_days}"
        )));
    }
    cfg.validate()?;
    let horizon = horizon_days as Day;
    let s = Samplers::new(cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let mut events = Vec::new();
    let mut initial_waitlist = Vec::with_capacity(cfg.initial_waitlist_size);
    let mut next_patient = 0usize;

    for _ in 0..cfg.initial_waitlist_size {
        let id = format!("P{next_patient:06}");
        next_patient += 1;
        let listed = -(rng.random_range(0..=cfg.max_initial_wait_days) as Day);
        let lvad_start = (rng.random::<f64>() < cfg.lvad_probability).then(|| rng.random_range(listed..=0));
        let mut p = PatientState::new(
            id,
            s.blood(&mut rng),
            s.location(&mut rng, geo),
            s.severity.sample(&mut rng),
            s.cpra.sample(&mut rng),
            lvad_start.map_or(0, |st| (-st) as u32),
            listed,
            0,
        );
        p.status = status_for_severity(p.severity);
        progress(&mut rng, cfg, &p, 0, lvad_start, horizon, &mut events);
        initial_waitlist.push(p);
    }

    let mut next_donor = 0usize;
    for day in 1..=horizon {
        for _ in 0..poisson_count(&mut rng, cfg.patient_arrival_rate_per_day)? {
            let id = format!("P{next_patient:06}");
            next_patient += 1;
            let lvad_start = (rng.random::<f64>() < cfg.lvad_probability).then_some(day);
            let p = PatientState::new(
                id,
                s.blood(&mut rng),
                s.location(&mut rng, geo),
                s.severity.sample(&mut rng),
                s.cpra.sample(&mut rng),
                0,
                day,
                day,
            );
            progress(&mut rng, cfg, &p, day, lvad_start, horizon, &mut events);
            events.push(TrajectoryEvent::new(day, EventKind::PatientArrival(p)));
        }
        for _ in 0..poisson_count(&mut rng, cfg.donor_rate_per_day)? {
            let d = DonorRecord {
                id: format!("D{next_donor:06}"),
                blood_type: s.blood(&mut rng),
                location: s.location(&mut rng, geo),
                quality: s.quality.sample(&mut rng),
                arrival_time: day,
            };
            next_donor += 1;
            events.push(TrajectoryEvent::new(day, EventKind::DonorArrival(d)));
        }
    }

    let mut t = Trajectory {
        horizon_days: horizon as u32,
        initial_waitlist,
        events,
    };
    t.canonicalize();
    Ok(t)
}

/// Daily death probability at the given severity.
pub fn death_hazard(cfg: &PopulationConfig, severity: f64) -> f64 {
    cfg.death_hazard_scale * (4.0 * (severity - 1.0)).exp()
}

/// Rolls the latent progression of one patient from `start` to the horizon.
fn progress(
    rng: &mut ChaCha8Rng,
    cfg: &PopulationConfig,
    p: &PatientState,
    start: Day,
    lvad_start: Option<Day>,
    horizon: Day,
    out: &mut Vec<TrajectoryEvent>,
) {
    let mut severity = p.severity;
    let mut lvad_start = lvad_start;
    for day in (start + 1)..=horizon {
        if rng.random::<f64>() < cfg.status_update_rate {
            let z: f64 = rng.sample(StandardNormal);
            severity = (severity + cfg.severity_drift + cfg.severity_volatility * z).clamp(0.0, 1.0);
            if lvad_start.is_none() && severity > 0.7 && rng.random::<f64>() < cfg.lvad_probability {
                lvad_start = Some(day);
            }
            out.push(TrajectoryEvent::new(
                day,
                EventKind::StatusUpdate {
                    patient_id: p.id.clone(),
                    update: StatusUpdate {
                        severity,
                        cpra: p.cpra,
                        lvad_days: lvad_start.map_or(0, |st| (day - st) as u32),
                    },
                },
            ));
        }
        let cause = if rng.random::<f64>() < death_hazard(cfg, severity) {
            Some(DepartureCause::Death)
        } else if rng.random::<f64>() < cfg.delisting_rate_per_day {
            Some(DepartureCause::Delisting)
        } else {
            None
        };
        if let Some(cause) = cause {
            out.push(TrajectoryEvent::new(
                day,
                EventKind::PatientDeparture {
                    patient_id: p.id.clone(),
                    cause,
                },
            ));
            return;
        }
    }
}
