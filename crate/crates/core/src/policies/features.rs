use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::compat::{blood_match_class, distance_nm, MatchClass, DAYS_PER_YEAR};
use crate::domain::{BloodType, Day, DonorRecord, PatientState, Region};
use crate::error::{Error, Result};

/// Feature maps available to potentials and scores.
///
/// * `Blood4`: patient blood one-hot `[O, A, B, AB]`.
/// * `BloodRegion13`: `Blood4` followed by the patient region one-hot (1..=9).
/// * `MatchState34`: patient blood (4), patient region (9), donor blood (4),
///   U(d, p) (1), pool blood fractions (4), pool region fractions (9),
///   pool max U (1), pool mean U (1), t / horizon (1).
/// * `Cas14`: patient status one-hot 1..=6 (6), severity, cpra, waiting years,
///   primary blood match, secondary blood match, LVAD years,
///   distance / 1000 nm, same region.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FeatureMapId {
    Blood4,
    BloodRegion13,
    MatchState34,
    Cas14,
}

impl FeatureMapId {
    pub const ALL: [FeatureMapId; 4] = [
        FeatureMapId::Blood4,
        FeatureMapId::BloodRegion13,
        FeatureMapId::MatchState34,
        FeatureMapId::Cas14,
    ];

    pub fn dim(self) -> usize {
        match self {
            FeatureMapId::Blood4 => 4,
            FeatureMapId::BloodRegion13 => 13,
            FeatureMapId::MatchState34 => 34,
            FeatureMapId::Cas14 => 14,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            FeatureMapId::Blood4 => "blood4",
            FeatureMapId::BloodRegion13 => "blood_region13",
            FeatureMapId::MatchState34 => "match_state34",
            FeatureMapId::Cas14 => "cas14",
        }
    }

    /// Whether the map needs pool-level statistics.
    pub fn uses_pool(self) -> bool {
        self == FeatureMapId::MatchState34
    }
}

impl fmt::Display for FeatureMapId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FeatureMapId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "blood4" | "4" => Ok(FeatureMapId::Blood4),
            "blood_region13" | "13" => Ok(FeatureMapId::BloodRegion13),
            "match_state34" | "34" => Ok(FeatureMapId::MatchState34),
            "cas14" | "cas" | "14" => Ok(FeatureMapId::Cas14),
            _ => Err(Error::invalid(format!("unknown feature map {s:?}"))),
        }
    }
}

/// Candidate-pool statistics shared by every candidate of one donor.
#[derive(Clone, Debug, PartialEq)]
pub struct PoolStats {
    pub blood_fractions: [f64; 4],
    pub region_fractions: [f64; 9],
    pub max_utility: f64,
    pub mean_utility: f64,
}

impl PoolStats {
    pub fn new(pool: &[&PatientState], utilities: &[f64]) -> Self {
        let mut s = PoolStats {
            blood_fractions: [0.0; 4],
            region_fractions: [0.0; 9],
            max_utility: 0.0,
            mean_utility: 0.0,
        };
        if pool.is_empty() {
            return s;
        }
        let n = pool.len() as f64;
        for p in pool {
            s.blood_fractions[p.blood_type.index()] += 1.0;
            s.region_fractions[p.location.region.index()] += 1.0;
        }
        s.blood_fractions.iter_mut().for_each(|x| *x /= n);
        s.region_fractions.iter_mut().for_each(|x| *x /= n);
        s.max_utility = utilities.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        s.mean_utility = utilities.iter().sum::<f64>() / n;
        s
    }
}

/// Everything a feature map may look at for one (donor, candidate) pair.
pub struct FeatureInput<'a> {
    pub donor: &'a DonorRecord,
    pub patient: &'a PatientState,
    pub utility: f64,
    pub pool: Option<&'a PoolStats>,
    pub time: Day,
    pub horizon: Day,
}

fn one_hot(out: &mut [f64], i: usize) {
    out.fill(0.0);
    out[i] = 1.0;
}

/// Writes `map`'s features for `x` into `out` (length `map.dim()`).
pub fn phi_into(map: FeatureMapId, x: &FeatureInput<'_>, out: &mut [f64]) -> Result<()> {
    if out.len() != map.dim() {
        return Err(Error::DimensionMismatch {
            expected: map.dim(),
            got: out.len(),
        });
    }
    let p = x.patient;
    match map {
        FeatureMapId::Blood4 => one_hot(out, p.blood_type.index()),
        FeatureMapId::BloodRegion13 => {
            one_hot(&mut out[..4], p.blood_type.index());
            one_hot(&mut out[4..13], p.location.region.index());
        }
        FeatureMapId::MatchState34 => {
            let s = x
                .pool
                .ok_or_else(|| Error::invalid("match_state34 needs pool statistics"))?;
            one_hot(&mut out[..4], p.blood_type.index());
            one_hot(&mut out[4..13], p.location.region.index());
            one_hot(&mut out[13..17], x.donor.blood_type.index());
            out[17] = x.utility;
            out[18..22].copy_from_slice(&s.blood_fractions);
            out[22..31].copy_from_slice(&s.region_fractions);
            out[31] = s.max_utility;
            out[32] = s.mean_utility;
            out[33] = f64::from(x.time) / f64::from(x.horizon.max(1));
        }
        FeatureMapId::Cas14 => {
            one_hot(&mut out[..6], usize::from(p.status.clamp(1, 6) - 1));
            out[6] = p.severity;
            out[7] = p.cpra;
            out[8] = f64::from(p.waiting_days(x.time).max(0)) / DAYS_PER_YEAR;
            let class = blood_match_class(x.donor.blood_type, p.blood_type);
            out[9] = f64::from(u8::from(class == MatchClass::Primary));
            out[10] = f64::from(u8::from(class == MatchClass::Secondary));
            out[11] = f64::from(p.lvad_days) / DAYS_PER_YEAR;
            out[12] = distance_nm(&x.donor.location, &p.location) / 1000.0;
            out[13] = f64::from(u8::from(x.donor.location.region == p.location.region));
        }
    }
    Ok(())
}

pub fn phi(map: FeatureMapId, x: &FeatureInput<'_>) -> Result<Vec<f64>> {
    let mut out = vec![0.0; map.dim()];
    phi_into(map, x, &mut out)?;
    Ok(out)
}

/// Slot names in layout order, for reports and model inspection.
pub fn feature_names(map: FeatureMapId) -> Vec<String> {
    fn blood(prefix: &'static str) -> impl Iterator<Item = String> {
        BloodType::ALL.into_iter().map(move |b| format!("{prefix}_{b}"))
    }
    fn region(prefix: &'static str) -> impl Iterator<Item = String> {
        Region::all().map(move |r| format!("{prefix}_{r}"))
    }
    match map {
        FeatureMapId::Blood4 => blood("blood").collect(),
        FeatureMapId::BloodRegion13 => blood("blood").chain(region("region")).collect(),
        FeatureMapId::MatchState34 => blood("blood")
            .chain(region("region"))
            .chain(blood("donor_blood"))
            .chain(["utility".to_string()])
            .chain(blood("pool_blood"))
            .chain(region("pool_region"))
            .chain([
                "pool_max_utility".into(),
                "pool_mean_utility".into(),
                "time_fraction".into(),
            ])
            .collect(),
        FeatureMapId::Cas14 => (1..=6)
            .map(|s| format!("status_{s}"))
            .chain(
                [
                    "severity",
                    "cpra",
                    "waiting_years",
                    "primary_blood",
                    "secondary_blood",
                    "lvad_years",
                    "distance_knm",
                    "same_region",
                ]
                .map(String::from),
            )
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::Location;

    fn patient(id: &str, bt: BloodType, region: u8) -> PatientState {
        let geo = crate::domain::Geography::default();
        let r = Region::new(region).unwrap();
        let c = geo.centroid(r);
        PatientState::new(id, bt, Location::new(r, c[0], c[1]), 0.9, 0.3, 40, -100, 10)
    }

    fn donor() -> DonorRecord {
        DonorRecord {
            id: "D".into(),
            blood_type: BloodType::O,
            location: Location::new(Region::new(5).unwrap(), 1200.0, 675.0),
            quality: 0.5,
            arrival_time: 10,
        }
    }

    fn input<'a>(d: &'a DonorRecord, p: &'a PatientState, pool: Option<&'a PoolStats>) -> FeatureInput<'a> {
        FeatureInput {
            donor: d,
            patient: p,
            utility: 1.5,
            pool,
            time: 10,
            horizon: 40,
        }
    }

    #[test]
    fn dims_and_names_agree() {
        for m in FeatureMapId::ALL {
            assert_eq!(feature_names(m).len(), m.dim(), "{m}");
            assert_eq!(m.as_str().parse::<FeatureMapId>().unwrap(), m);
        }
    }

    #[test]
    fn blood4_one_hot() {
        let d = donor();
        let p = patient("P", BloodType::O, 1);
        assert_eq!(
            phi(FeatureMapId::Blood4, &input(&d, &p, None)).unwrap(),
            [1.0, 0.0, 0.0, 0.0]
        );
        let p = patient("P", BloodType::AB, 9);
        let v = phi(FeatureMapId::BloodRegion13, &input(&d, &p, None)).unwrap();
        assert_eq!(v[3], 1.0);
        assert_eq!(v[12], 1.0);
        assert_eq!(v.iter().sum::<f64>(), 2.0);
    }

    #[test]
    fn pool_fractions_and_max() {
        let d = donor();
        let ps = [
            patient("a", BloodType::O, 1),
            patient("b", BloodType::O, 2),
            patient("c", BloodType::AB, 2),
            patient("e", BloodType::AB, 3),
        ];
        let pool: Vec<&PatientState> = ps.iter().collect();
        let us = [0.5, 2.5, -1.0, 1.0];
        let stats = PoolStats::new(&pool, &us);
        let v = phi(FeatureMapId::MatchState34, &input(&d, pool[0], Some(&stats))).unwrap();
        assert_eq!(&v[18..22], &[0.5, 0.0, 0.0, 0.5]);
        assert_eq!(v[31], 2.5);
        assert_eq!(v[32], 0.75);
        assert_eq!(v[33], 0.25);
        assert_eq!(&v[13..17], &[1.0, 0.0, 0.0, 0.0]);
        assert_eq!(v[17], 1.5);
        assert!((v[22..31].iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn match_state_requires_pool() {
        let d = donor();
        let p = patient("P", BloodType::O, 1);
        assert!(phi(FeatureMapId::MatchState34, &input(&d, &p, None)).is_err());
    }

    #[test]
    fn cas_layout() {
        let d = donor();
        let p = patient("P", BloodType::A, 5);
        let v = phi(FeatureMapId::Cas14, &input(&d, &p, None)).unwrap();
        // severity 0.9 -> status 2
        assert_eq!(&v[..6], &[0.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(v[6], 0.9);
        assert_eq!(v[7], 0.3);
        assert_eq!(v[8], 110.0 / DAYS_PER_YEAR);
        assert_eq!((v[9], v[10]), (0.0, 1.0));
        assert_eq!(v[11], 40.0 / DAYS_PER_YEAR);
        assert_eq!(v[12], 0.0);
        assert_eq!(v[13], 1.0);
    }
}
