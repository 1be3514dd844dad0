//! Online allocation policies. Each policy sees one arriving donor and the
//! feasible candidates on the waitlist at that moment.

mod features;
mod model;
mod status_quo;

pub use features::{feature_names, phi, phi_into, FeatureInput, FeatureMapId, PoolStats};
pub(crate) use model::dot;
pub use model::{MlpBatch, MlpCache, ModelKind, PotentialModel, Scaler, LEAKY_SLOPE};
pub use status_quo::{rank_first as status_quo_rank, tier_for, tier_of, TierRow, TIERS};

use std::fmt;

use crate::compat::{feasible, utility, CompatConfig, SurvivalModel};
use crate::domain::{Day, DonorRecord, PatientState};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum DiscardReason {
    NoCandidates,
    NonpositiveUtility,
}

impl DiscardReason {
    pub fn as_str(self) -> &'static str {
        match self {
            DiscardReason::NoCandidates => "no_candidates",
            DiscardReason::NonpositiveUtility => "nonpositive_utility",
        }
    }
}

impl fmt::Display for DiscardReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Decision {
    Selected { patient_id: String, score: f64 },
    Discard(DiscardReason),
}

impl Decision {
    pub fn patient_id(&self) -> Option<&str> {
        match self {
            Decision::Selected { patient_id, .. } => Some(patient_id),
            Decision::Discard(_) => None,
        }
    }
}

/// What a policy sees when a donor arrives.
pub struct DecisionContext<'a> {
    pub donor: &'a DonorRecord,
    /// Feasible candidates in waitlist order.
    pub pool: &'a [&'a PatientState],
    /// `utilities[i]` is U(donor, pool[i]).
    pub utilities: &'a [f64],
    pub time: Day,
    pub horizon: Day,
}

/// Feasible patients of `waitlist` for donor `d`, in waitlist order.
pub fn candidate_pool<'a>(d: &DonorRecord, waitlist: &'a [PatientState], cfg: &CompatConfig) -> Vec<&'a PatientState> {
    waitlist.iter().filter(|p| feasible(d, p, cfg)).collect()
}

pub fn pool_utilities(d: &DonorRecord, pool: &[&PatientState], model: &SurvivalModel) -> Vec<f64> {
    pool.iter().map(|p| utility(d, p, model)).collect()
}

/// Index of the largest score; ties go to the lowest patient id.
pub fn argmax_by_id(pool: &[&PatientState], scores: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for i in 0..pool.len() {
        best = match best {
            None => Some(i),
            Some(b) => {
                if scores[i] > scores[b] || (scores[i] == scores[b] && pool[i].id < pool[b].id) {
                    Some(i)
                } else {
                    Some(b)
                }
            }
        };
    }
    best
}

/// Picks the best-scoring candidate, then discards if its utility is not
/// positive.
fn gated(ctx: &DecisionContext<'_>, scores: &[f64]) -> Decision {
    match argmax_by_id(ctx.pool, scores) {
        None => Decision::Discard(DiscardReason::NoCandidates),
        Some(i) if ctx.utilities[i] <= 0.0 => Decision::Discard(DiscardReason::NonpositiveUtility),
        Some(i) => Decision::Selected {
            patient_id: ctx.pool[i].id.clone(),
            score: scores[i],
        },
    }
}

pub fn myopic_select(ctx: &DecisionContext<'_>) -> Decision {
    gated(ctx, ctx.utilities)
}

/// Never looks at utility; discards only when no candidate exists.
pub fn status_quo_select(ctx: &DecisionContext<'_>) -> Decision {
    match status_quo::rank_first(ctx.donor, ctx.pool) {
        None => Decision::Discard(DiscardReason::NoCandidates),
        Some(i) => Decision::Selected {
            patient_id: ctx.pool[i].id.clone(),
            score: -f64::from(tier_of(ctx.donor, ctx.pool[i]).unwrap_or(0)),
        },
    }
}

/// Decision scores of every candidate under `m`.
pub fn model_scores(ctx: &DecisionContext<'_>, m: &PotentialModel) -> Result<Vec<f64>> {
    let stats = m
        .feature_map
        .uses_pool()
        .then(|| PoolStats::new(ctx.pool, ctx.utilities));
    let mut x = vec![0.0; m.dim()];
    let mut cache = MlpCache::default();
    let mut scores = Vec::with_capacity(ctx.pool.len());
    for (p, &u) in ctx.pool.iter().zip(ctx.utilities) {
        let input = FeatureInput {
            donor: ctx.donor,
            patient: p,
            utility: u,
            pool: stats.as_ref(),
            time: ctx.time,
            horizon: ctx.horizon,
        };
        phi_into(m.feature_map, &input, &mut x)?;
        let v = match m.kind {
            ModelKind::Linear => model::dot(&m.params, &x),
            ModelKind::Mlp => m.forward(&x, None, &mut cache),
        };
        scores.push(m.score_from(u, v));
    }
    Ok(scores)
}

/// `argmax Q` with `Q = U - P(phi)`, or the direct score for CAS weights.
pub fn potential_select(ctx: &DecisionContext<'_>, m: &PotentialModel) -> Result<Decision> {
    Ok(gated(ctx, &model_scores(ctx, m)?))
}

/// Linear composite score over the 14 CAS features.
#[derive(Clone, Debug, PartialEq)]
pub struct CasWeights {
    pub weights: [f64; 14],
}

impl CasWeights {
    pub fn to_model(&self) -> PotentialModel {
        PotentialModel::linear(FeatureMapId::Cas14, self.weights.to_vec()).expect("14 weights")
    }

    pub fn from_model(m: &PotentialModel) -> Result<Self> {
        if m.feature_map != FeatureMapId::Cas14 || m.kind != ModelKind::Linear {
            return Err(Error::invalid("CAS weights need a linear cas14 model"));
        }
        let mut weights = [0.0; 14];
        weights.copy_from_slice(&m.params);
        Ok(CasWeights { weights })
    }
}

pub fn cas_select(ctx: &DecisionContext<'_>, w: &CasWeights) -> Decision {
    potential_select(ctx, &w.to_model()).expect("cas14 never needs pool statistics")
}

#[derive(Clone, Debug, PartialEq)]
pub enum Policy {
    Myopic,
    StatusQuo,
    /// Any linear or MLP model; a `Cas14` model acts as a CAS score.
    Model(PotentialModel),
}

impl Policy {
    pub fn decide(&self, ctx: &DecisionContext<'_>) -> Result<Decision> {
        match self {
            Policy::Myopic => Ok(myopic_select(ctx)),
            Policy::StatusQuo => Ok(status_quo_select(ctx)),
            Policy::Model(m) => potential_select(ctx, m),
        }
    }

    pub fn zero_potential(map: FeatureMapId) -> Self {
        Policy::Model(PotentialModel::zeros(map, ModelKind::Linear, &[]).expect("linear"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{replay_donors, BloodType};
    use crate::fixtures::motivating_example;
    use crate::popgen::{generate_trajectory, PopulationConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn decide_first_donor(policy: &Policy) -> Decision {
        let (t, model) = motivating_example();
        let cfg = CompatConfig::default();
        let mut out = None;
        replay_donors(&t, |d, wl, time| {
            if out.is_none() {
                let pool = candidate_pool(d, wl.as_slice(), &cfg);
                let us = pool_utilities(d, &pool, &model);
                let ctx = DecisionContext {
                    donor: d,
                    pool: &pool,
                    utilities: &us,
                    time,
                    horizon: t.horizon(),
                };
                out = Some(policy.decide(&ctx).unwrap());
            }
        });
        out.unwrap()
    }

    #[test]
    fn motivating_example_decisions() {
        assert_eq!(decide_first_donor(&Policy::Myopic).patient_id(), Some("P1"));
        let m = PotentialModel::linear(FeatureMapId::Blood4, vec![0.0, 0.0, 0.0, 2.0]).unwrap();
        assert_eq!(decide_first_donor(&Policy::Model(m)).patient_id(), Some("P2"));
    }

    #[test]
    fn type_a_donor_only_reaches_ab_patient() {
        let (t, _) = motivating_example();
        let cfg = CompatConfig::default();
        let d2 = t.donors().nth(1).unwrap();
        let pool = candidate_pool(d2, &t.initial_waitlist, &cfg);
        assert_eq!(pool.len(), 1);
        assert_eq!(pool[0].blood_type, BloodType::AB);
        assert!(candidate_pool(d2, &[], &cfg).is_empty());
    }

    fn random_context_parts(seed: u64) -> (crate::domain::Trajectory, Vec<(DonorRecord, Vec<PatientState>, Day)>) {
        let pc = PopulationConfig {
            rng_seed: seed,
            initial_waitlist_size: 30,
            ..Default::default()
        };
        let t = generate_trajectory(&pc, 10).unwrap();
        let mut snaps = Vec::new();
        replay_donors(&t, |d, wl, time| snaps.push((d.clone(), wl.as_slice().to_vec(), time)));
        (t, snaps)
    }

    #[test]
    fn selectors_agree_with_brute_force() {
        let cfg = CompatConfig::default();
        let model = SurvivalModel::default();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for seed in 0..5 {
            let (t, snaps) = random_context_parts(seed);
            for (d, wl, time) in &snaps {
                let pool = candidate_pool(d, wl, &cfg);
                let brute: Vec<&PatientState> = wl.iter().filter(|p| feasible(d, p, &cfg)).collect();
                assert_eq!(pool.len(), brute.len());
                let us = pool_utilities(d, &pool, &model);
                let ctx = DecisionContext {
                    donor: d,
                    pool: &pool,
                    utilities: &us,
                    time: *time,
                    horizon: t.horizon(),
                };
                // Myopic: exhaustive scan for the best (utility, -id).
                let want = pool
                    .iter()
                    .zip(&us)
                    .max_by(|a, b| a.1.total_cmp(b.1).then_with(|| b.0.id.cmp(&a.0.id)))
                    .map(|(p, u)| (p.id.clone(), *u));
                match (myopic_select(&ctx), want) {
                    (Decision::Selected { patient_id, .. }, Some((id, u))) => {
                        assert_eq!(patient_id, id);
                        assert!(u > 0.0);
                    }
                    (Decision::Discard(DiscardReason::NoCandidates), None) => {}
                    (Decision::Discard(DiscardReason::NonpositiveUtility), Some((_, u))) => assert!(u <= 0.0),
                    (got, want) => panic!("{got:?} vs {want:?}"),
                }

                // Random CAS weights and potentials against a plain dot product.
                let w: Vec<f64> = (0..14).map(|_| rng.random_range(-1.0..1.0)).collect();
                let cas = CasWeights {
                    weights: w.clone().try_into().unwrap(),
                };
                let theta: Vec<f64> = (0..4).map(|_| rng.random_range(-2.0..2.0)).collect();
                let pot = PotentialModel::linear(FeatureMapId::Blood4, theta.clone()).unwrap();
                let mut cas_scores = Vec::new();
                let mut q = Vec::new();
                for (p, &u) in pool.iter().zip(&us) {
                    let x = FeatureInput {
                        donor: d,
                        patient: p,
                        utility: u,
                        pool: None,
                        time: *time,
                        horizon: t.horizon(),
                    };
                    let f = phi(FeatureMapId::Cas14, &x).unwrap();
                    cas_scores.push(f.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>());
                    q.push(u - theta[p.blood_type.index()]);
                }
                let pick = |s: &[f64]| {
                    (0..pool.len()).max_by(|&a, &b| s[a].total_cmp(&s[b]).then_with(|| pool[b].id.cmp(&pool[a].id)))
                };
                assert_eq!(
                    cas_select(&ctx, &cas).patient_id(),
                    pick(&cas_scores).filter(|&i| us[i] > 0.0).map(|i| pool[i].id.as_str())
                );
                assert_eq!(
                    potential_select(&ctx, &pot).unwrap().patient_id(),
                    pick(&q).filter(|&i| us[i] > 0.0).map(|i| pool[i].id.as_str())
                );

                // Positive rescaling and constant shifts do not change choices.
                let scaled = CasWeights {
                    weights: cas.weights.map(|x| x * 3.5),
                };
                assert_eq!(
                    cas_select(&ctx, &scaled).patient_id(),
                    cas_select(&ctx, &cas).patient_id()
                );
                let shifted =
                    PotentialModel::linear(FeatureMapId::Blood4, theta.iter().map(|x| x + 0.75).collect()).unwrap();
                assert_eq!(
                    potential_select(&ctx, &shifted).unwrap().patient_id(),
                    potential_select(&ctx, &pot).unwrap().patient_id()
                );

                // The zero potential is the myopic policy.
                for map in FeatureMapId::ALL {
                    if map == FeatureMapId::Cas14 {
                        continue;
                    }
                    assert_eq!(Policy::zero_potential(map).decide(&ctx).unwrap(), myopic_select(&ctx));
                }
            }
        }
    }

    #[test]
    fn cas_degenerate_weights() {
        let (t, snaps) = random_context_parts(7);
        let cfg = CompatConfig::default();
        for (d, wl, time) in &snaps {
            let pool = candidate_pool(d, wl, &cfg);
            // Force positive utilities so the gate never fires.
            let us = vec![1.0; pool.len()];
            let ctx = DecisionContext {
                donor: d,
                pool: &pool,
                utilities: &us,
                time: *time,
                horizon: t.horizon(),
            };
            let lowest = pool.iter().map(|p| p.id.as_str()).min();
            assert_eq!(
                cas_select(&ctx, &CasWeights { weights: [0.0; 14] }).patient_id(),
                lowest
            );
            let mut w = [0.0; 14];
            w[8] = 1.0;
            let longest = pool
                .iter()
                .max_by(|a, b| b.listed_time.cmp(&a.listed_time).then_with(|| b.id.cmp(&a.id)))
                .map(|p| p.id.as_str());
            assert_eq!(cas_select(&ctx, &CasWeights { weights: w }).patient_id(), longest);
        }
    }
}
