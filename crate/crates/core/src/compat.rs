//! Match feasibility (blood group and distance) and the life-years utility
//! model.
//!
//! Utility is post-transplant survival minus waitlist survival, both from a
//! log-linear proportional-hazards style model:
//!
//! ```text
//! Y_W(p)    = waitlist_base   * exp(-w · [severity, cpra, lvad_years])
//! Y_T(d, p) = transplant_base * exp(-c · [severity, cpra, lvad_years, quality,
//!                                          same_blood, quality*severity, distance/1000])
//! U(d, p)   = Y_T(d, p) - Y_W(p)
//! ```

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::domain::{BloodType, DonorRecord, Geography, Location, PatientState, Region};
use crate::error::{Error, Result};

pub const DAYS_PER_YEAR: f64 = 365.25;

/// ABO rules: O gives to all, A and B to themselves and AB, AB only to AB.
pub fn blood_compatible(donor: BloodType, patient: BloodType) -> bool {
    use BloodType::*;
    match donor {
        O => true,
        A => matches!(patient, A | AB),
        B => matches!(patient, B | AB),
        AB => patient == AB,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum MatchClass {
    Primary,
    Secondary,
    Infeasible,
}

pub fn blood_match_class(donor: BloodType, patient: BloodType) -> MatchClass {
    if donor == patient {
        MatchClass::Primary
    } else if blood_compatible(donor, patient) {
        MatchClass::Secondary
    } else {
        MatchClass::Infeasible
    }
}

/// Euclidean distance in nautical miles.
pub fn distance_nm(a: &Location, b: &Location) -> f64 {
    (a.coord[0] - b.coord[0]).hypot(a.coord[1] - b.coord[1])
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompatConfig {
    pub max_distance_nm: f64,
    pub geography: Geography,
}

impl Default for CompatConfig {
    fn default() -> Self {
        CompatConfig {
            max_distance_nm: 1000.0,
            geography: Geography::default(),
        }
    }
}

impl CompatConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.max_distance_nm > 0.0) {
            return Err(Error::Config("max_distance_nm must be > 0".into()));
        }
        if !(self.geography.cell_width_nm > 0.0 && self.geography.cell_height_nm > 0.0) {
            return Err(Error::Config("geography cells must have positive size".into()));
        }
        Ok(())
    }

    pub fn region_centroids(&self) -> BTreeMap<Region, [f64; 2]> {
        Region::all().map(|r| (r, self.geography.centroid(r))).collect()
    }
}

/// The constraint function: blood compatible and within the distance cap.
pub fn feasible(d: &DonorRecord, p: &PatientState, cfg: &CompatConfig) -> bool {
    blood_compatible(d.blood_type, p.blood_type) && distance_nm(&d.location, &p.location) <= cfg.max_distance_nm
}

/// Coefficients on `[severity, cpra, lvad_years]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WaitlistCoeffs {
    pub severity: f64,
    pub cpra: f64,
    pub lvad_years: f64,
}

impl Default for WaitlistCoeffs {
    fn default() -> Self {
        WaitlistCoeffs {
            severity: 3.0,
            cpra: 0.2,
            lvad_years: -0.1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransplantCoeffs {
    pub severity: f64,
    pub cpra: f64,
    pub lvad_years: f64,
    pub quality: f64,
    pub same_blood: f64,
    pub quality_x_severity: f64,
    /// Per 1000 nm of donor-recipient distance.
    pub distance_knm: f64,
}

impl Default for TransplantCoeffs {
    fn default() -> Self {
        TransplantCoeffs {
            severity: 1.2,
            cpra: 0.4,
            lvad_years: 0.1,
            quality: -0.6,
            same_blood: -0.1,
            quality_x_severity: -0.3,
            distance_knm: 0.15,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SurvivalModel {
    pub waitlist_base_years: f64,
    pub waitlist_coeffs: WaitlistCoeffs,
    pub transplant_base_years: f64,
    pub transplant_coeffs: TransplantCoeffs,
    /// Pinned utilities keyed by donor id then patient id; these bypass the
    /// survival formula entirely.
    pub overrides: BTreeMap<String, BTreeMap<String, f64>>,
}

impl Default for SurvivalModel {
    fn default() -> Self {
        SurvivalModel {
            waitlist_base_years: 8.0,
            waitlist_coeffs: WaitlistCoeffs::default(),
            transplant_base_years: 9.0,
            transplant_coeffs: TransplantCoeffs::default(),
            overrides: BTreeMap::new(),
        }
    }
}

impl SurvivalModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.waitlist_base_years > 0.0 && self.transplant_base_years > 0.0) {
            return Err(Error::Config("survival base years must be > 0".into()));
        }
        let w = self.waitlist_coeffs;
        let c = self.transplant_coeffs;
        let all = [
            w.severity,
            w.cpra,
            w.lvad_years,
            c.severity,
            c.cpra,
            c.lvad_years,
            c.quality,
            c.same_blood,
            c.quality_x_severity,
            c.distance_knm,
        ];
        if !all.iter().all(|x| x.is_finite()) {
            return Err(Error::Config("survival coefficients must be finite".into()));
        }
        if self.overrides.values().flat_map(|m| m.values()).any(|u| !u.is_finite()) {
            return Err(Error::Config("utility overrides must be finite".into()));
        }
        Ok(())
    }

    pub fn with_override(mut self, donor: &str, patient: &str, utility: f64) -> Self {
        self.overrides
            .entry(donor.to_string())
            .or_default()
            .insert(patient.to_string(), utility);
        self
    }

    fn pinned(&self, donor: &str, patient: &str) -> Option<f64> {
        if self.overrides.is_empty() {
            return None;
        }
        self.overrides.get(donor)?.get(patient).copied()
    }
}

fn lvad_years(p: &PatientState) -> f64 {
    f64::from(p.lvad_days) / DAYS_PER_YEAR
}

/// Expected survival without a transplant.
pub fn waitlist_survival(p: &PatientState, m: &SurvivalModel) -> f64 {
    let w = &m.waitlist_coeffs;
    let lin = w.severity * p.severity + w.cpra * p.cpra + w.lvad_years * lvad_years(p);
    m.waitlist_base_years * (-lin).exp()
}

/// Expected survival after receiving `d`'s organ.
pub fn posttransplant_survival(d: &DonorRecord, p: &PatientState, m: &SurvivalModel) -> f64 {
    let c = &m.transplant_coeffs;
    let same = if d.blood_type == p.blood_type { 1.0 } else { 0.0 };
    let dist = distance_nm(&d.location, &p.location) / 1000.0;
    let lin = c.severity * p.severity
        + c.cpra * p.cpra
        + c.lvad_years * lvad_years(p)
        + c.quality * d.quality
        + c.same_blood * same
        + c.quality_x_severity * d.quality * p.severity
        + c.distance_knm * dist;
    m.transplant_base_years * (-lin).exp()
}

/// Life-years gained by the match; negative when transplanting is harmful.
pub fn utility(d: &DonorRecord, p: &PatientState, m: &SurvivalModel) -> f64 {
    if let Some(u) = m.pinned(&d.id, &p.id) {
        return u;
    }
    posttransplant_survival(d, p, m) - waitlist_survival(p, m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::Region;
    use proptest::prelude::*;
    use BloodType::*;

    fn loc(x: f64, y: f64) -> Location {
        let geo = Geography::default();
        Location::new(geo.region_of([x, y]).unwrap(), x, y)
    }

    fn patient(bt: BloodType, severity: f64) -> PatientState {
        PatientState::new("P", bt, loc(100.0, 100.0), severity, 0.2, 30, 0, 0)
    }

    fn donor(bt: BloodType, quality: f64, x: f64) -> DonorRecord {
        DonorRecord {
            id: "D".into(),
            blood_type: bt,
            location: loc(x, 100.0),
            quality,
            arrival_time: 1,
        }
    }

    #[test]
    fn abo_examples() {
        assert!(blood_compatible(O, AB));
        assert!(!blood_compatible(A, O));
        assert!(!blood_compatible(AB, A));
        let table = [
            (O, [true, true, true, true]),
            (A, [false, true, false, true]),
            (B, [false, false, true, true]),
            (AB, [false, false, false, true]),
        ];
        for (d, row) in table {
            for (p, expect) in BloodType::ALL.into_iter().zip(row) {
                assert_eq!(blood_compatible(d, p), expect, "{d} -> {p}");
            }
        }
    }

    #[test]
    fn match_classes() {
        assert_eq!(blood_match_class(O, O), MatchClass::Primary);
        assert_eq!(blood_match_class(O, A), MatchClass::Secondary);
        assert_eq!(blood_match_class(B, A), MatchClass::Infeasible);
        for d in BloodType::ALL {
            assert!(blood_compatible(d, d));
            for p in BloodType::ALL {
                assert_eq!(
                    blood_match_class(d, p) == MatchClass::Infeasible,
                    !blood_compatible(d, p)
                );
            }
        }
    }

    #[test]
    fn distance_examples() {
        assert_eq!(distance_nm(&loc(10.0, 10.0), &loc(10.0, 10.0)), 0.0);
        assert_eq!(distance_nm(&loc(0.0, 0.0), &loc(3.0, 4.0)), 5.0);
    }

    #[test]
    fn feasibility_respects_both_constraints() {
        let cfg = CompatConfig::default();
        let p = patient(A, 0.5);
        assert!(feasible(&donor(O, 0.5, 1099.0), &p, &cfg)); // 999 nm
        assert!(!feasible(&donor(O, 0.5, 1101.0), &p, &cfg)); // 1001 nm
        assert!(!feasible(&donor(B, 0.5, 100.0), &p, &cfg));
    }

    #[test]
    fn zero_coefficients_give_base_years() {
        let m = SurvivalModel {
            waitlist_coeffs: WaitlistCoeffs {
                severity: 0.0,
                cpra: 0.0,
                lvad_years: 0.0,
            },
            transplant_coeffs: TransplantCoeffs {
                severity: 0.0,
                cpra: 0.0,
                lvad_years: 0.0,
                quality: 0.0,
                same_blood: 0.0,
                quality_x_severity: 0.0,
                distance_knm: 0.0,
            },
            ..SurvivalModel::default()
        };
        let p = patient(AB, 0.77);
        assert_eq!(waitlist_survival(&p, &m), m.waitlist_base_years);
        assert_eq!(
            posttransplant_survival(&donor(O, 0.3, 500.0), &p, &m),
            m.transplant_base_years
        );
        let equal = SurvivalModel {
            transplant_base_years: m.waitlist_base_years,
            ..m
        };
        assert_eq!(utility(&donor(O, 0.3, 500.0), &p, &equal), 0.0);
    }

    #[test]
    fn default_model_monotonicity() {
        let m = SurvivalModel::default();
        assert!(waitlist_survival(&patient(O, 0.9), &m) < waitlist_survival(&patient(O, 0.1), &m));
        let p = patient(O, 0.5);
        assert!(
            posttransplant_survival(&donor(O, 0.9, 200.0), &p, &m)
                > posttransplant_survival(&donor(O, 0.1, 200.0), &p, &m)
        );
    }

    #[test]
    fn fixture_values_match_hand_evaluation() {
        // Patient: severity 0.6, cpra 0.2, 73 LVAD days.
        // Donor: O to A (not identical), quality 0.7, 300 nm away.
        let mut p = patient(A, 0.6);
        p.lvad_days = 73;
        let d = donor(O, 0.7, 400.0);
        let m = SurvivalModel::default();
        let lvad: f64 = 73.0 / 365.25;
        let yw = 8.0 * (-(3.0 * 0.6 + 0.2 * 0.2 - 0.1 * lvad)).exp();
        let yt = 9.0 * (-(1.2 * 0.6 + 0.4 * 0.2 + 0.1 * lvad - 0.6 * 0.7 - 0.3 * 0.7 * 0.6 + 0.15 * 0.3)).exp();
        assert!((waitlist_survival(&p, &m) - yw).abs() < 1e-12);
        assert!((posttransplant_survival(&d, &p, &m) - yt).abs() < 1e-12);
        assert!((utility(&d, &p, &m) - (yt - yw)).abs() < 1e-12);
    }

    #[test]
    fn overrides_pin_exact_utilities() {
        let m = SurvivalModel::default().with_override("D", "P", 10.0);
        let p = patient(AB, 0.5);
        assert_eq!(utility(&donor(O, 0.5, 100.0), &p, &m), 10.0);
        let mut other = donor(O, 0.5, 100.0);
        other.id = "D2".into();
        let expect = posttransplant_survival(&other, &p, &m) - waitlist_survival(&p, &m);
        assert_eq!(utility(&other, &p, &m), expect);
    }

    #[test]
    fn log_base_shift_scales_only_transplant_survival() {
        let m = SurvivalModel::default();
        let c = 0.37_f64;
        let shifted = SurvivalModel {
            transplant_base_years: (m.transplant_base_years.ln() + c).exp(),
            ..m.clone()
        };
        let p = patient(B, 0.4);
        let d = donor(B, 0.6, 300.0);
        let yt = posttransplant_survival(&d, &p, &m);
        let yt2 = posttransplant_survival(&d, &p, &shifted);
        assert!((yt2 / yt - c.exp()).abs() < 1e-12);
        assert_eq!(waitlist_survival(&p, &m), waitlist_survival(&p, &shifted));
    }

    fn arb_loc() -> impl Strategy<Value = Location> {
        (0.0..2400.0f64, 0.0..1350.0f64).prop_map(|(x, y)| loc(x, y))
    }

    proptest! {
        #[test]
        fn distance_is_symmetric(a in arb_loc(), b in arb_loc()) {
            prop_assert_eq!(distance_nm(&a, &b), distance_nm(&b, &a));
        }

        #[test]
        fn feasibility_invariant_to_swapping_locations(a in arb_loc(), b in arb_loc(), di in 0usize..4, pi in 0usize..4) {
            let cfg = CompatConfig::default();
            let mut d = donor(BloodType::ALL[di], 0.5, 10.0);
            let mut p = patient(BloodType::ALL[pi], 0.5);
            d.location = a;
            p.location = b;
            let before = feasible(&d, &p, &cfg);
            d.location = b;
            p.location = a;
            prop_assert_eq!(before, feasible(&d, &p, &cfg));
        }

        #[test]
        fn utility_is_difference_of_survivals(s in 0.0..=1.0f64, q in 0.0..=1.0f64, x in 0.0..2400.0f64) {
            let m = SurvivalModel::default();
            let p = patient(AB, s);
            let d = donor(A, q, x);
            let u = utility(&d, &p, &m);
            prop_assert_eq!(u, posttransplant_survival(&d, &p, &m) - waitlist_survival(&p, &m));
        }
    }

    #[test]
    fn centroids_cover_nine_regions() {
        let c = CompatConfig::default().region_centroids();
        assert_eq!(c.len(), 9);
        assert_eq!(c[&Region::new(5).unwrap()], [1200.0, 675.0]);
    }
}
