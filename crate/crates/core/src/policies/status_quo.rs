//! The 68-tier lexicographic allocation rule.

use crate::compat::{blood_match_class, distance_nm, MatchClass};
use crate::domain::{DonorRecord, PatientState};

/// One priority tier: medical status, blood match class, and the largest
/// donor distance (nm) it covers; `None` means any distance.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TierRow {
    pub status: u8,
    pub class: MatchClass,
    pub max_distance_nm: Option<f64>,
}

const fn row(status: u8, primary: bool, max: f64) -> TierRow {
    TierRow {
        status,
        class: if primary {
            MatchClass::Primary
        } else {
            MatchClass::Secondary
        },
        max_distance_nm: if max < 0.0 { None } else { Some(max) },
    }
}

const ANY: f64 = -1.0;

/// Tier `k` (1-based) is `TIERS[k - 1]`.
#[rustfmt::skip]
pub const TIERS: [TierRow; 68] = [
    row(1, true, 500.0),   row(1, false, 500.0),   row(2, true, 500.0),   row(2, false, 500.0),
    row(3, true, 250.0),   row(3, false, 250.0),   row(1, true, 1000.0),  row(1, false, 1000.0),
    row(2, true, 1000.0),  row(2, false, 1000.0),  row(4, true, 250.0),   row(4, false, 250.0),
    row(3, true, 500.0),   row(3, false, 500.0),   row(5, true, 250.0),   row(5, false, 250.0),
    row(3, true, 1000.0),  row(3, false, 1000.0),  row(6, true, 250.0),   row(6, false, 250.0),
    row(1, true, 1500.0),  row(1, false, 1500.0),  row(2, true, 1500.0),  row(2, false, 1500.0),
    row(3, true, 1500.0),  row(3, false, 1500.0),  row(4, true, 500.0),   row(4, false, 500.0),
    row(5, true, 500.0),   row(5, false, 500.0),   row(6, true, 500.0),   row(6, false, 500.0),
    row(1, true, 2500.0),  row(1, false, 2500.0),  row(2, true, 2500.0),  row(2, false, 2500.0),
    row(3, true, 2500.0),  row(3, false, 2500.0),  row(4, true, 1000.0),  row(4, false, 1000.0),
    row(5, true, 1000.0),  row(5, false, 1000.0),  row(6, true, 1000.0),  row(6, false, 1000.0),
    row(1, true, ANY),     row(1, false, ANY),     row(2, true, ANY),     row(2, false, ANY),
    row(3, true, ANY),     row(3, false, ANY),     row(4, true, 1500.0),  row(4, false, 1500.0),
    row(5, true, 1500.0),  row(5, false, 1500.0),  row(6, true, 1500.0),  row(6, false, 1500.0),
    row(4, true, 2500.0),  row(4, false, 2500.0),  row(5, true, 2500.0),  row(5, false, 2500.0),
    row(6, true, 2500.0),  row(6, false, 2500.0),  row(4, true, ANY),     row(4, false, ANY),
    row(5, true, ANY),     row(5, false, ANY),     row(6, true, ANY),     row(6, false, ANY),
];

/// Lowest-numbered tier covering the combination, or `None` for an
/// ABO-incompatible pair or a status outside 1..=6.
pub fn tier_for(status: u8, class: MatchClass, distance_nm: f64) -> Option<u8> {
    if class == MatchClass::Infeasible {
        return None;
    }
    TIERS
        .iter()
        .position(|t| t.status == status && t.class == class && t.max_distance_nm.is_none_or(|m| distance_nm <= m))
        .map(|i| i as u8 + 1)
}

pub fn tier_of(d: &DonorRecord, p: &PatientState) -> Option<u8> {
    tier_for(
        p.status,
        blood_match_class(d.blood_type, p.blood_type),
        distance_nm(&d.location, &p.location),
    )
}

/// Index of the candidate with the best `(tier, listed_time, patient_id)`.
pub fn rank_first(d: &DonorRecord, pool: &[&PatientState]) -> Option<usize> {
    pool.iter()
        .enumerate()
        .filter_map(|(i, p)| tier_of(d, p).map(|t| (t, p.listed_time, p.id.as_str(), i)))
        .min()
        .map(|(.., i)| i)
}
