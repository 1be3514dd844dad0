//! Discrete-event replay of a trajectory under an online policy.

mod metrics;
mod report;

pub use metrics::{metrics, GroupMetrics, Metrics, METRICS_HEADER};
pub use report::{evaluate, monthly_report, Report, ReportRow, REPORT_HEADER};

use std::collections::HashMap;
use std::fmt::Write as _;

use crate::compat::{CompatConfig, SurvivalModel};
use crate::domain::*;
use crate::error::{Error, Result};
use crate::policies::{candidate_pool, pool_utilities, Decision, DecisionContext, DiscardReason, Policy};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Outcome {
    Transplanted,
    Died,
    Delisted,
    /// Still waiting at the end of the horizon.
    Censored,
}

/// How long one patient waited within the horizon and how it ended.
#[derive(Clone, Debug, PartialEq)]
pub struct WaitRecord {
    pub patient_id: String,
    pub blood_type: BloodType,
    pub start: Day,
    pub end: Day,
    pub outcome: Outcome,
}

impl WaitRecord {
    pub fn wait_days(&self) -> Day {
        self.end - self.start
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiscardRecord {
    pub time: Day,
    pub donor_id: String,
    pub reason: DiscardReason,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DepartureRecord {
    pub time: Day,
    pub patient_id: String,
    pub cause: DepartureCause,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SimulationResult {
    pub matches: Vec<MatchRecord>,
    pub discards: Vec<DiscardRecord>,
    /// Deaths and delistings of patients still waiting, in event order.
    pub departures: Vec<DepartureRecord>,
    pub total_plyg: f64,
    /// One entry per patient, initial waitlist first, then arrivals.
    pub waits: Vec<WaitRecord>,
}

impl SimulationResult {
    pub fn deaths(&self) -> impl Iterator<Item = &DepartureRecord> {
        self.departures.iter().filter(|d| d.cause == DepartureCause::Death)
    }

    /// Chosen patient per donor in arrival order (`None` for a discard).
    pub fn decision_sequence(&self) -> Vec<(String, Option<String>)> {
        let mut seq: Vec<(Day, String, Option<String>)> = self
            .matches
            .iter()
            .map(|m| (m.time, m.donor_id.clone(), Some(m.patient_id.clone())))
            .chain(self.discards.iter().map(|d| (d.time, d.donor_id.clone(), None)))
            .collect();
        // Same-day donors are replayed in id order.
        seq.sort_by(|a, b| (a.0, &a.1).cmp(&(b.0, &b.1)));
        seq.into_iter().map(|(_, d, p)| (d, p)).collect()
    }

    pub fn matches_csv(&self) -> String {
        let mut s = String::from("time,donor_id,patient_id,utility\n");
        for m in &self.matches {
            let _ = writeln!(s, "{},{},{},{}", m.time, m.donor_id, m.patient_id, m.utility);
        }
        s
    }
}

/// Replays `t`, letting `policy` allocate each arriving donor.
///
/// Matched patients leave the waitlist immediately and their later events are
/// ignored. A discarded organ is lost.
pub fn run(t: &Trajectory, policy: &Policy, cfg: &CompatConfig, model: &SurvivalModel) -> Result<SimulationResult> {
    ensure_valid(t)?;
    let mut res = SimulationResult::default();
    let mut ledger: HashMap<&str, usize> = HashMap::new();
    for p in t.patients() {
        ledger.insert(&p.id, res.waits.len());
        res.waits.push(WaitRecord {
            patient_id: p.id.clone(),
            blood_type: p.blood_type,
            start: p.listed_time.max(0),
            end: t.horizon(),
            outcome: Outcome::Censored,
        });
    }
    let mut wl = Waitlist::new(&t.initial_waitlist);
    for e in &t.events {
        match &e.kind {
            EventKind::PatientArrival(p) => wl.insert(p.clone()),
            EventKind::StatusUpdate { patient_id, update } => {
                wl.update(patient_id, update, e.time);
            }
            EventKind::DonorArrival(d) => {
                let pool = candidate_pool(d, wl.as_slice(), cfg);
                let us = pool_utilities(d, &pool, model);
                let ctx = DecisionContext {
                    donor: d,
                    pool: &pool,
                    utilities: &us,
                    time: e.time,
                    horizon: t.horizon(),
                };
                match policy.decide(&ctx)? {
                    Decision::Selected { patient_id, .. } => {
                        let i = pool.iter().position(|p| p.id == patient_id).ok_or_else(|| {
                            Error::invalid(format!("policy chose {patient_id}, which is not a candidate"))
                        })?;
                        let u = us[i];
                        wl.remove(&patient_id);
                        let w = &mut res.waits[ledger[patient_id.as_str()]];
                        w.end = e.time;
                        w.outcome = Outcome::Transplanted;
                        res.total_plyg += u;
                        res.matches.push(MatchRecord {
                            time: e.time,
                            donor_id: d.id.clone(),
                            patient_id,
                            utility: u,
                        });
                    }
                    Decision::Discard(reason) => res.discards.push(DiscardRecord {
                        time: e.time,
                        donor_id: d.id.clone(),
                        reason,
                    }),
                }
            }
            EventKind::PatientDeparture { patient_id, cause } => {
                if wl.remove(patient_id).is_some() {
                    let w = &mut res.waits[ledger[patient_id.as_str()]];
                    w.end = e.time;
                    w.outcome = match cause {
                        DepartureCause::Death => Outcome::Died,
                        DepartureCause::Delisting => Outcome::Delisted,
                    };
                    res.departures.push(DepartureRecord {
                        time: e.time,
                        patient_id: patient_id.clone(),
                        cause: *cause,
                    });
                }
            }
        }
    }
    Ok(res)
}
