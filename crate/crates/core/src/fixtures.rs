//! Small hand-built instances used by tests, benches, and documentation.

use crate::compat::SurvivalModel;
use crate::domain::*;

/// Two patients (P1 type AB, P2 type O) wait; an O donor arrives on day 1
/// and an A donor on day 2. Utilities are pinned: D1-P1 = 10, D1-P2 = 9,
/// D2-P1 = 10. The A organ cannot go to P2.
///
/// Greedy matching gives D1 to P1 and then wastes D2 (total 10); the best
/// plan in hindsight is D1-P2 and D2-P1 (total 19).
pub fn motivating_example() -> (Trajectory, SurvivalModel) {
    let loc = Location::new(Region::new(5).expect("valid region"), 1200.0, 675.0);
    let p1 = PatientState::new("P1", BloodType::AB, loc, 0.6, 0.1, 0, -30, 0);
    let p2 = PatientState::new("P2", BloodType::O, loc, 0.6, 0.1, 0, -20, 0);
    let donor = |id: &str, bt, day| {
        TrajectoryEvent::new(
            day,
            EventKind::DonorArrival(DonorRecord {
                id: id.into(),
                blood_type: bt,
                location: loc,
                quality: 0.5,
                arrival_time: day,
            }),
        )
    };
    let t = Trajectory {
        horizon_days: 2,
        initial_waitlist: vec![p1, p2],
        events: vec![donor("D1", BloodType::O, 1), donor("D2", BloodType::A, 2)],
    };
    let model = SurvivalModel::default()
        .with_override("D1", "P1", 10.0)
        .with_override("D1", "P2", 9.0)
        .with_override("D2", "P1", 10.0);
    (t, model)
}
