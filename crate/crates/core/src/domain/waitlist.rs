use std::collections::HashMap;

use super::types::{Day, DonorRecord, EventKind, PatientState, StatusUpdate, Trajectory};

/// Currently listed patients in listing order, with O(1) id lookup.
#[derive(Clone, Debug, Default)]
pub struct Waitlist {
    patients: Vec<PatientState>,
    index: HashMap<String, usize>,
}

impl Waitlist {
    pub fn new(initial: &[PatientState]) -> Self {
        let mut wl = Waitlist::default();
        for p in initial {
            wl.insert(p.clone());
        }
        wl
    }

    pub fn insert(&mut self, p: PatientState) {
        self.index.insert(p.id.clone(), self.patients.len());
        self.patients.push(p);
    }

    pub fn contains(&self, id: &str) -> bool {
        self.index.contains_key(id)
    }

    pub fn get(&self, id: &str) -> Option<&PatientState> {
        self.index.get(id).map(|&i| &self.patients[i])
    }

    /// Applies an update if the patient is still listed; returns whether it was.
    pub fn update(&mut self, id: &str, update: &StatusUpdate, time: Day) -> bool {
        match self.index.get(id) {
            Some(&i) => {
                self.patients[i].apply_update(update, time);
                true
            }
            None => false,
        }
    }

    /// Removes a patient while keeping the remaining listing order.
    pub fn remove(&mut self, id: &str) -> Option<PatientState> {
        let i = self.index.remove(id)?;
        let p = self.patients.remove(i);
        for q in &self.patients[i..] {
            if let Some(slot) = self.index.get_mut(&q.id) {
                *slot -= 1;
            }
        }
        Some(p)
    }

    pub fn as_slice(&self) -> &[PatientState] {
        &self.patients
    }

    pub fn len(&self) -> usize {
        self.patients.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patients.is_empty()
    }
}

/// Replays `t` without matching anyone, calling `f` at each donor arrival
/// with the waitlist as it stands at that moment.
pub fn replay_donors<F>(t: &Trajectory, mut f: F)
where
    F: FnMut(&DonorRecord, &Waitlist, Day),
{
    let mut wl = Waitlist::new(&t.initial_waitlist);
    for e in &t.events {
        match &e.kind {
            EventKind::PatientArrival(p) => wl.insert(p.clone()),
            EventKind::StatusUpdate { patient_id, update } => {
                wl.update(patient_id, update, e.time);
            }
            EventKind::DonorArrival(d) => f(d, &wl, e.time),
            EventKind::PatientDeparture { patient_id, .. } => {
                wl.remove(patient_id);
            }
        }
    }
}
