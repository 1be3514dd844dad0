use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domain::*;
use crate::error::{Error, Result};

pub const DEFAULT_K_OFFSET_DAYS: u32 = 7;

/// Volume bounds for resampling plus the start-shift half-width `k` applied
/// to initial-waitlist patients.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResampleBounds {
    pub d_min: u32,
    pub d_max: u32,
    pub p_min: u32,
    pub p_max: u32,
    pub k_offset_days: u32,
}

impl ResampleBounds {
    pub fn validate(&self) -> Result<()> {
        if self.d_min > self.d_max || self.p_min > self.p_max {
            return Err(Error::invalid(format!(
                "resample bounds must satisfy min <= max: donors {}..{}, patients {}..{}",
                self.d_min, self.d_max, self.p_min, self.p_max
            )));
        }
        Ok(())
    }
}

/// Min/max donor counts and present-patient counts over every window of
/// `window_days` consecutive days within the horizon.
///
/// A patient is present in a window if listed on or before its last day and
/// not departed before its first day. Initial-waitlist patients count as
/// listed on day 0.
pub fn compute_bounds(t: &Trajectory, window_days: u32) -> Result<ResampleBounds> {
    if window_days == 0 || window_days > t.horizon_days {
        return Err(Error::invalid(format!(
            "window of {window_days} days does not fit horizon {}",
            t.horizon_days
        )));
    }
    let h = t.horizon_days as usize;
    let w = window_days as usize;
    // Per-day counts indexed 0..=h.
    let mut donors = vec![0u32; h + 1];
    let mut starts = vec![0u32; h + 1];
    let mut exits = vec![0u32; h + 1];
    starts[0] += t.initial_waitlist.len() as u32;
    for e in &t.events {
        let day = e.time.clamp(0, h as Day) as usize;
        match &e.kind {
            EventKind::DonorArrival(_) => donors[day] += 1,
            EventKind::PatientArrival(_) => starts[day] += 1,
            EventKind::PatientDeparture { .. } => exits[day] += 1,
            EventKind::StatusUpdate { .. } => {}
        }
    }
    let prefix = |v: &[u32]| {
        let mut acc = 0u32;
        v.iter()
            .map(|x| {
                acc += x;
                acc
            })
            .collect::<Vec<_>>()
    };
    let (dp, sp, ep) = (prefix(&donors), prefix(&starts), prefix(&exits));

    let mut b = ResampleBounds {
        d_min: u32::MAX,
        d_max: 0,
        p_min: u32::MAX,
        p_max: 0,
        k_offset_days: DEFAULT_K_OFFSET_DAYS,
    };
    for first in 1..=(h - w + 1) {
        let last = first + w - 1;
        let d = dp[last] - dp[first - 1];
        // Listed by `last` minus those gone before `first`.
        let p = sp[last] - ep[first - 1];
        b.d_min = b.d_min.min(d);
        b.d_max = b.d_max.max(d);
        b.p_min = b.p_min.min(p);
        b.p_max = b.p_max.max(p);
    }
    Ok(b)
}

#[derive(Clone, Debug)]
enum Progression {
    Update(StatusUpdate),
    Depart(DepartureCause),
}

/// One patient of the source trajectory with its progression expressed as
/// day offsets from its listing day.
#[derive(Clone, Debug)]
pub struct SourcePatient {
    pub state: PatientState,
    pub initial: bool,
    events: Vec<(Day, Progression)>,
}

/// Indexed source population for repeated semi-synthetic draws.
#[derive(Clone, Debug)]
pub struct Augmenter {
    donors: Vec<DonorRecord>,
    patients: Vec<SourcePatient>,
}

/// Output of one draw together with what was sampled.
#[derive(Clone, Debug)]
pub struct SemiSyntheticDraw {
    pub trajectory: Trajectory,
    pub n_donors: u32,
    pub n_patients: u32,
    /// Index into [`Augmenter::patients`] of every sampled patient, including
    /// those whose shifted history ends before day 1.
    pub patient_sources: Vec<usize>,
    pub n_from_initial: u32,
}

impl Augmenter {
    pub fn new(t: &Trajectory) -> Result<Self> {
        let mut patients: Vec<SourcePatient> = Vec::new();
        let mut by_id: HashMap<&str, usize> = HashMap::new();
        for p in &t.initial_waitlist {
            by_id.insert(&p.id, patients.len());
            patients.push(SourcePatient {
                state: p.clone(),
                initial: true,
                events: Vec::new(),
            });
        }
        let mut donors = Vec::new();
        for e in &t.events {
            let (id, prog) = match &e.kind {
                EventKind::DonorArrival(d) => {
                    donors.push(d.clone());
                    continue;
                }
                EventKind::PatientArrival(p) => {
                    by_id.insert(&p.id, patients.len());
                    patients.push(SourcePatient {
                        state: p.clone(),
                        initial: false,
                        events: Vec::new(),
                    });
                    continue;
                }
                EventKind::StatusUpdate { patient_id, update } => (patient_id, Progression::Update(*update)),
                EventKind::PatientDeparture { patient_id, cause } => (patient_id, Progression::Depart(*cause)),
            };
            let &i = by_id
                .get(id.as_str())
                .ok_or_else(|| Error::invalid(format!("event for unknown patient {id}")))?;
            let offset = e.time - patients[i].state.listed_time;
            patients[i].events.push((offset, prog));
        }
        if donors.is_empty() || patients.is_empty() {
            return Err(Error::invalid(
                "source trajectory needs at least one donor and one patient",
            ));
        }
        Ok(Augmenter { donors, patients })
    }

    pub fn donors(&self) -> &[DonorRecord] {
        &self.donors
    }

    pub fn patients(&self) -> &[SourcePatient] {
        &self.patients
    }

    pub fn initial_count(&self) -> usize {
        self.patients.iter().filter(|p| p.initial).count()
    }

    /// Resamples donors and patients with replacement and re-times them over
    /// a new horizon of `subhorizon_days`.
    pub fn draw(&self, subhorizon_days: u32, b: &ResampleBounds, seed: u64) -> Result<SemiSyntheticDraw> {
        b.validate()?;
        if subhorizon_days == 0 {
            return Err(Error::invalid("subhorizon must be at least one day"));
        }
        let h = subhorizon_days as Day;
        let k = b.k_offset_days as Day;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut events = Vec::new();
        let mut initial_waitlist = Vec::new();

        let n_donors = rng.random_range(b.d_min..=b.d_max);
        for j in 0..n_donors {
            let src = &self.donors[rng.random_range(0..self.donors.len())];
            let day = rng.random_range(1..=h);
            let mut d = src.clone();
            d.id = format!("{}_s{j}", src.id);
            d.arrival_time = day;
            events.push(TrajectoryEvent::new(day, EventKind::DonorArrival(d)));
        }

        let n_patients = rng.random_range(b.p_min..=b.p_max);
        let mut patient_sources = Vec::with_capacity(n_patients as usize);
        let mut n_from_initial = 0;
        for j in 0..n_patients {
            let si = rng.random_range(0..self.patients.len());
            patient_sources.push(si);
            let src = &self.patients[si];
            let id = format!("{}_s{j}", src.state.id);
            let listed = if src.initial {
                n_from_initial += 1;
                src.state.listed_time + rng.random_range(-k..=k)
            } else {
                rng.random_range(1..=h)
            };
            self.place(src, id, listed, h, &mut initial_waitlist, &mut events);
        }

        let mut trajectory = Trajectory {
            horizon_days: subhorizon_days,
            initial_waitlist,
            events,
        };
        trajectory.canonicalize();
        Ok(SemiSyntheticDraw {
            trajectory,
            n_donors,
            n_patients,
            patient_sources,
            n_from_initial,
        })
    }

    /// Places one sampled patient with listing day `listed`, carrying its
    /// progression offsets along. A listing on a day <= 0 puts the patient on
    /// the initial waitlist with pre-horizon progression folded into its
    /// day-0 state; a positive listing day makes it an arrival.
    fn place(
        &self,
        src: &SourcePatient,
        id: String,
        listed: Day,
        h: Day,
        initial_waitlist: &mut Vec<PatientState>,
        events: &mut Vec<TrajectoryEvent>,
    ) {
        if listed > h {
            return;
        }
        let mut state = src.state.clone();
        state.id = id;
        state.listed_time = listed;
        let start = listed.max(0);
        state.as_of_time = start;
        let mut own = Vec::new();
        for (offset, prog) in &src.events {
            let day = listed + offset;
            if day > h {
                break;
            }
            if day <= start {
                // Already happened by the time the patient enters the new horizon.
                match prog {
                    Progression::Update(u) => {
                        state.apply_update(u, start);
                    }
                    Progression::Depart(_) => return,
                }
                continue;
            }
            let kind = match prog {
                Progression::Update(u) => EventKind::StatusUpdate {
                    patient_id: state.id.clone(),
                    update: *u,
                },
                Progression::Depart(cause) => EventKind::PatientDeparture {
                    patient_id: state.id.clone(),
                    cause: *cause,
                },
            };
            own.push(TrajectoryEvent::new(day, kind));
        }
        if listed > 0 {
            events.push(TrajectoryEvent::new(listed, EventKind::PatientArrival(state)));
        } else {
            initial_waitlist.push(state);
        }
        events.extend(own);
    }
}

/// Draws one semi-synthetic trajectory from `t`.
pub fn semisynthetic(t: &Trajectory, subhorizon_days: u32, b: &ResampleBounds, seed: u64) -> Result<Trajectory> {
    Ok(Augmenter::new(t)?.draw(subhorizon_days, b, seed)?.trajectory)
}
