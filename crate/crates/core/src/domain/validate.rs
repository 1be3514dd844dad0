use std::collections::HashSet;
use std::fmt;

use super::types::{status_for_severity, EventKind, Geography, Location, PatientState, Trajectory};

/// Where in a trajectory a violation was found.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Site {
    Header,
    Waitlist(usize),
    Event(usize),
}

impl fmt::Display for Site {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Site::Header => f.write_str("header"),
            Site::Waitlist(i) => write!(f, "waitlist[{i}]"),
            Site::Event(i) => write!(f, "event[{i}]"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Rule {
    HorizonPositive,
    TimeInHorizon,
    EventOrder,
    KnownPatient,
    UniqueId,
    IdFormat,
    StatusMatchesSeverity,
    ValueRange,
    TimeConsistency,
    LocationInRegion,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Violation {
    pub site: Site,
    pub rule: Rule,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {:?}: {}", self.site, self.rule, self.detail)
    }
}

/// Checks every trajectory invariant against the default geography.
pub fn validate_trajectory(t: &Trajectory) -> Vec<Violation> {
    validate_trajectory_with(t, &Geography::default())
}

pub fn validate_trajectory_with(t: &Trajectory, geo: &Geography) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut push = |site, rule, detail: String| out.push(Violation { site, rule, detail });

    if t.horizon_days == 0 {
        push(Site::Header, Rule::HorizonPositive, "horizon_days is 0".into());
    }
    let horizon = t.horizon();

    let mut seen_patients: HashSet<&str> = HashSet::new();
    let mut listed: HashSet<&str> = HashSet::new();
    let mut seen_donors: HashSet<&str> = HashSet::new();

    for (i, p) in t.initial_waitlist.iter().enumerate() {
        let site = Site::Waitlist(i);
        for (rule, detail) in patient_problems(p, geo) {
            push(site, rule, detail);
        }
        if p.listed_time > 0 {
            push(
                site,
                Rule::TimeConsistency,
                format!("initial patient {} listed on day {} > 0", p.id, p.listed_time),
            );
        }
        if !seen_patients.insert(&p.id) {
            push(site, Rule::UniqueId, format!("duplicate patient id {}", p.id));
        }
        listed.insert(&p.id);
    }

    let mut prev: Option<(i32, u8)> = None;
    for (i, ev) in t.events.iter().enumerate() {
        let site = Site::Event(i);
        if ev.time < 1 || ev.time > horizon {
            push(
                site,
                Rule::TimeInHorizon,
                format!("time {} outside 1..={}", ev.time, horizon),
            );
        }
        let key = ev.precedence();
        if let Some(pk) = prev {
            if key < pk {
                push(
                    site,
                    Rule::EventOrder,
                    format!("(day {}, rank {}) follows (day {}, rank {})", key.0, key.1, pk.0, pk.1),
                );
            }
        }
        prev = Some(key);

        match &ev.kind {
            EventKind::PatientArrival(p) => {
                for (rule, detail) in patient_problems(p, geo) {
                    push(site, rule, detail);
                }
                if p.listed_time != ev.time || p.as_of_time != ev.time {
                    push(
                        site,
                        Rule::TimeConsistency,
                        format!(
                            "arrival of {} on day {} carries listed/as-of {}/{}",
                            p.id, ev.time, p.listed_time, p.as_of_time
                        ),
                    );
                }
                if !seen_patients.insert(&p.id) {
                    push(site, Rule::UniqueId, format!("duplicate patient id {}", p.id));
                }
                listed.insert(&p.id);
            }
            EventKind::StatusUpdate { patient_id, update } => {
                if !listed.contains(patient_id.as_str()) {
                    push(
                        site,
                        Rule::KnownPatient,
                        format!("update for unlisted patient {patient_id}"),
                    );
                }
                if !in_unit(update.severity) || !in_unit(update.cpra) {
                    push(
                        site,
                        Rule::ValueRange,
                        format!("update for {patient_id} has severity/cpra outside [0,1]"),
                    );
                }
            }
            EventKind::DonorArrival(d) => {
                if !valid_id(&d.id) {
                    push(site, Rule::IdFormat, format!("bad donor id {:?}", d.id));
                }
                if !seen_donors.insert(&d.id) {
                    push(site, Rule::UniqueId, format!("duplicate donor id {}", d.id));
                }
                if d.arrival_time != ev.time {
                    push(
                        site,
                        Rule::TimeConsistency,
                        format!(
                            "donor {} arrival_time {} != event day {}",
                            d.id, d.arrival_time, ev.time
                        ),
                    );
                }
                if !in_unit(d.quality) {
                    push(site, Rule::ValueRange, format!("donor {} quality outside [0,1]", d.id));
                }
                if let Some(detail) = location_problem(&d.location, geo) {
                    push(site, Rule::LocationInRegion, format!("donor {}: {detail}", d.id));
                }
            }
            EventKind::PatientDeparture { patient_id, .. } => {
                if !listed.remove(patient_id.as_str()) {
                    push(
                        site,
                        Rule::KnownPatient,
                        format!("departure of unlisted patient {patient_id}"),
                    );
                }
            }
        }
    }
    out
}

fn in_unit(x: f64) -> bool {
    (0.0..=1.0).contains(&x)
}

pub(crate) fn valid_id(id: &str) -> bool {
    !id.is_empty() && !id.chars().any(|c| c.is_whitespace() || c == ',')
}

fn location_problem(loc: &Location, geo: &Geography) -> Option<String> {
    if !loc.coord.iter().all(|c| c.is_finite()) {
        return Some("non-finite coordinate".into());
    }
    if !geo.contains(loc) {
        return Some(format!(
            "coordinate ({}, {}) not inside region {}",
            loc.coord[0], loc.coord[1], loc.region
        ));
    }
    None
}

fn patient_problems(p: &PatientState, geo: &Geography) -> Vec<(Rule, String)> {
    let mut v = Vec::new();
    if !valid_id(&p.id) {
        v.push((Rule::IdFormat, format!("bad patient id {:?}", p.id)));
    }
    if !in_unit(p.severity) || !in_unit(p.cpra) {
        v.push((
            Rule::ValueRange,
            format!("patient {} severity/cpra outside [0,1]", p.id),
        ));
    } else if p.status != status_for_severity(p.severity) {
        v.push((
            Rule::StatusMatchesSeverity,
            format!(
                "patient {} status {} but severity {} maps to {}",
                p.id,
                p.status,
                p.severity,
                status_for_severity(p.severity)
            ),
        ));
    }
    if p.as_of_time < p.listed_time {
        v.push((
            Rule::TimeConsistency,
            format!(
                "patient {} as_of {} before listing {}",
                p.id, p.as_of_time, p.listed_time
            ),
        ));
    }
    if let Some(detail) = location_problem(&p.location, geo) {
        v.push((Rule::LocationInRegion, format!("patient {}: {detail}", p.id)));
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::types::*;

    fn loc() -> Location {
        Location::new(Region::new(5).unwrap(), 1200.0, 675.0)
    }

    fn patient(id: &str, t: Day) -> PatientState {
        PatientState::new(id, BloodType::O, loc(), 0.5, 0.1, 0, t, t)
    }

    fn donor(id: &str, t: Day) -> DonorRecord {
        DonorRecord {
            id: id.into(),
            blood_type: BloodType::O,
            location: loc(),
            quality: 0.5,
            arrival_time: t,
        }
    }

    fn three_events() -> Trajectory {
        Trajectory {
            horizon_days: 10,
            initial_waitlist: vec![patient("P0", 0)],
            events: vec![
                TrajectoryEvent::new(1, EventKind::PatientArrival(patient("P1", 1))),
                TrajectoryEvent::new(2, EventKind::DonorArrival(donor("D1", 2))),
                TrajectoryEvent::new(
                    3,
                    EventKind::PatientDeparture {
                        patient_id: "P0".into(),
                        cause: DepartureCause::Death,
                    },
                ),
            ],
        }
    }

    #[test]
    fn well_formed_trajectory_has_no_violations() {
        assert_eq!(validate_trajectory(&three_events()), vec![]);
    }

    #[test]
    fn update_for_unknown_patient_is_reported() {
        let mut t = three_events();
        t.events.push(TrajectoryEvent::new(
            4,
            EventKind::StatusUpdate {
                patient_id: "ghost".into(),
                update: StatusUpdate {
                    severity: 0.4,
                    cpra: 0.0,
                    lvad_days: 0,
                },
            },
        ));
        let v = validate_trajectory(&t);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].site, Site::Event(3));
        assert_eq!(v[0].rule, Rule::KnownPatient);
    }

    #[test]
    fn out_of_order_events_give_one_ordering_violation() {
        let mut t = three_events();
        t.events.swap(1, 2);
        // Departure on day 3 now precedes the day-2 donor.
        let v = validate_trajectory(&t);
        assert_eq!(v.len(), 1, "{v:?}");
        assert_eq!(v[0].rule, Rule::EventOrder);
        assert_eq!(v[0].site, Site::Event(2));
    }

    #[test]
    fn same_day_rank_inversion_is_an_ordering_violation() {
        let mut t = three_events();
        t.events[0].time = 2;
        t.events[0].kind = EventKind::PatientArrival(patient("P1", 2));
        t.events.swap(0, 1);
        let v = validate_trajectory(&t);
        assert_eq!(v.len(), 1, "{v:?}");
        assert_eq!(v[0].rule, Rule::EventOrder);
    }

    #[test]
    fn departed_patient_cannot_be_updated() {
        let mut t = three_events();
        t.events.push(TrajectoryEvent::new(
            3,
            EventKind::PatientDeparture {
                patient_id: "P0".into(),
                cause: DepartureCause::Delisting,
            },
        ));
        let v = validate_trajectory(&t);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].rule, Rule::KnownPatient);
    }

    #[test]
    fn field_level_problems_are_caught() {
        let mut t = three_events();
        t.initial_waitlist[0].status = 1;
        t.initial_waitlist.push(patient("P0", 0));
        if let EventKind::DonorArrival(d) = &mut t.events[1].kind {
            d.quality = 1.5;
            d.location.coord = [0.0, 0.0];
        }
        let rules: Vec<Rule> = validate_trajectory(&t).into_iter().map(|v| v.rule).collect();
        assert!(rules.contains(&Rule::StatusMatchesSeverity));
        assert!(rules.contains(&Rule::UniqueId));
        assert!(rules.contains(&Rule::ValueRange));
        assert!(rules.contains(&Rule::LocationInRegion));
    }

    #[test]
    fn events_outside_horizon_are_flagged() {
        let mut t = three_events();
        t.horizon_days = 2;
        let v = validate_trajectory(&t);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].rule, Rule::TimeInHorizon);
    }
}
