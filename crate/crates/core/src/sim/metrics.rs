use std::fmt::Write as _;

use super::{Outcome, SimulationResult};
use crate::compat::DAYS_PER_YEAR;
use crate::domain::{BloodType, Trajectory};

/// Counts and rates for one patient group. A rate is `None` when its
/// denominator is zero.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GroupMetrics {
    pub patients: usize,
    pub deaths: usize,
    pub transplants: usize,
    pub wait_years: f64,
    pub mortality_per_patient: Option<f64>,
    pub mortality_per_wait_year: Option<f64>,
    pub transplant_per_patient: Option<f64>,
    pub transplant_per_wait_year: Option<f64>,
}

impl GroupMetrics {
    fn finish(mut self) -> Self {
        let per = |num: usize, den: f64| (den > 0.0).then(|| num as f64 / den);
        self.mortality_per_patient = per(self.deaths, self.patients as f64);
        self.transplant_per_patient = per(self.transplants, self.patients as f64);
        self.mortality_per_wait_year = per(self.deaths, self.wait_years);
        self.transplant_per_wait_year = per(self.transplants, self.wait_years);
        self
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Metrics {
    pub plyg: f64,
    /// Indexed like [`BloodType::ALL`].
    pub by_blood: [GroupMetrics; 4],
    pub overall: GroupMetrics,
}

pub const METRICS_HEADER: &str = "group,patients,deaths,transplants,wait_years,mortality_per_patient,\
mortality_per_wait_year,transplant_per_patient,transplant_per_wait_year";

fn opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

impl Metrics {
    /// `(group, row)` pairs in output order: O, A, B, AB, all.
    pub fn groups(&self) -> impl Iterator<Item = (&'static str, &GroupMetrics)> {
        BloodType::ALL
            .iter()
            .map(|b| b.as_str())
            .zip(self.by_blood.iter())
            .chain(std::iter::once(("all", &self.overall)))
    }

    /// Comma-joined values after the group column.
    pub fn csv_fields(g: &GroupMetrics) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            g.patients,
            g.deaths,
            g.transplants,
            g.wait_years,
            opt(g.mortality_per_patient),
            opt(g.mortality_per_wait_year),
            opt(g.transplant_per_patient),
            opt(g.transplant_per_wait_year)
        )
    }

    pub fn to_csv(&self) -> String {
        let mut s = format!("{METRICS_HEADER}\n");
        for (name, g) in self.groups() {
            let _ = writeln!(s, "{name},{}", Self::csv_fields(g));
        }
        s
    }
}

/// Per-blood-type and overall mortality and transplant rates, per listed
/// patient and per year of waiting.
pub fn metrics(r: &SimulationResult, _t: &Trajectory) -> Metrics {
    let mut by_blood: [GroupMetrics; 4] = Default::default();
    let mut overall = GroupMetrics::default();
    let mut days = [0i64; 4];
    for w in &r.waits {
        let g = &mut by_blood[w.blood_type.index()];
        g.patients += 1;
        days[w.blood_type.index()] += i64::from(w.wait_days());
        match w.outcome {
            Outcome::Died => g.deaths += 1,
            Outcome::Transplanted => g.transplants += 1,
            Outcome::Delisted | Outcome::Censored => {}
        }
    }
    for (g, d) in by_blood.iter_mut().zip(days) {
        g.wait_years = d as f64 / DAYS_PER_YEAR;
        overall.patients += g.patients;
        overall.deaths += g.deaths;
        overall.transplants += g.transplants;
    }
    overall.wait_years = days.iter().sum::<i64>() as f64 / DAYS_PER_YEAR;
    Metrics {
        plyg: r.total_plyg,
        by_blood: by_blood.map(GroupMetrics::finish),
        overall: overall.finish(),
    }
}
