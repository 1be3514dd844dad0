use std::collections::HashMap;

use crate::compat::{CompatConfig, SurvivalModel};
use crate::domain::*;
use crate::error::{Error, Result};
use crate::oracle::solve_trajectory;
use crate::policies::{candidate_pool, phi_into, pool_utilities, FeatureInput, FeatureMapId, PoolStats};

/// One oracle decision: the donor, the candidates it could have gone to, and
/// which one the oracle picked.
#[derive(Clone, Debug, PartialEq)]
pub struct ImitationExample {
    pub donor: DonorRecord,
    pub time: Day,
    pub horizon: Day,
    pub pool: Vec<PatientState>,
    pub utilities: Vec<f64>,
    /// Index of the oracle's patient in `pool`.
    pub chosen: usize,
    /// Row-major `pool.len() x feature_map.dim()`.
    pub features: Vec<f64>,
}

impl ImitationExample {
    pub fn chosen_id(&self) -> &str {
        &self.pool[self.chosen].id
    }

    pub fn len(&self) -> usize {
        self.pool.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pool.is_empty()
    }

    pub fn row(&self, i: usize, dim: usize) -> &[f64] {
        &self.features[i * dim..(i + 1) * dim]
    }

    fn featurize(&mut self, map: FeatureMapId) -> Result<()> {
        let refs: Vec<&PatientState> = self.pool.iter().collect();
        let stats = map.uses_pool().then(|| PoolStats::new(&refs, &self.utilities));
        let dim = map.dim();
        let mut feats = vec![0.0; self.pool.len() * dim];
        for (i, p) in self.pool.iter().enumerate() {
            let x = FeatureInput {
                donor: &self.donor,
                patient: p,
                utility: self.utilities[i],
                pool: stats.as_ref(),
                time: self.time,
                horizon: self.horizon,
            };
            phi_into(map, &x, &mut feats[i * dim..(i + 1) * dim])?;
        }
        self.features = feats;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImitationDataset {
    pub feature_map: FeatureMapId,
    pub examples: Vec<ImitationExample>,
}

impl ImitationDataset {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.feature_map.dim()
    }

    /// Same decisions, features recomputed for another map.
    pub fn with_feature_map(&self, map: FeatureMapId) -> Result<Self> {
        let mut out = self.clone();
        out.feature_map = map;
        for e in &mut out.examples {
            e.featurize(map)?;
        }
        Ok(out)
    }

    /// Every candidate feature row across all examples.
    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        let dim = self.dim();
        self.examples.iter().flat_map(move |e| e.features.chunks_exact(dim))
    }
}

/// Replays each trajectory under the hindsight-optimal allocation and records
/// one example per donor the oracle used.
///
/// The pool at each donor is the waitlist as the oracle's own schedule leaves
/// it: patients the oracle already transplanted are gone.
pub fn build_dataset(
    trajectories: &[Trajectory],
    map: FeatureMapId,
    cfg: &CompatConfig,
    model: &SurvivalModel,
) -> Result<ImitationDataset> {
    let mut examples = Vec::new();
    for t in trajectories {
        let sol = solve_trajectory(t, cfg, model)?;
        let plan: HashMap<&str, &str> = sol
            .matches
            .iter()
            .map(|m| (m.donor_id.as_str(), m.patient_id.as_str()))
            .collect();
        let mut wl = Waitlist::new(&t.initial_waitlist);
        for e in &t.events {
            match &e.kind {
                EventKind::PatientArrival(p) => wl.insert(p.clone()),
                EventKind::StatusUpdate { patient_id, update } => {
                    wl.update(patient_id, update, e.time);
                }
                EventKind::PatientDeparture { patient_id, .. } => {
                    wl.remove(patient_id);
                }
                EventKind::DonorArrival(d) => {
                    let Some(&target) = plan.get(d.id.as_str()) else {
                        continue;
                    };
                    let pool = candidate_pool(d, wl.as_slice(), cfg);
                    let chosen = pool.iter().position(|p| p.id == target).ok_or_else(|| {
                        Error::invalid(format!("oracle match {} -> {target} is not in the replayed pool", d.id))
                    })?;
                    let utilities = pool_utilities(d, &pool, model);
                    let mut ex = ImitationExample {
                        donor: d.clone(),
                        time: e.time,
                        horizon: t.horizon(),
                        pool: pool.into_iter().cloned().collect(),
                        utilities,
                        chosen,
                        features: Vec::new(),
                    };
                    ex.featurize(map)?;
                    examples.push(ex);
                    wl.remove(target);
                }
            }
        }
    }
    Ok(ImitationDataset {
        feature_map: map,
        examples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::motivating_example;
    use crate::popgen::{generate_trajectory, PopulationConfig};

    #[test]
    fn motivating_example_gives_two_examples() {
        let (t, m) = motivating_example();
        let ds = build_dataset(&[t], FeatureMapId::Blood4, &CompatConfig::default(), &m).unwrap();
        let got: Vec<(&str, &str)> = ds
            .examples
            .iter()
            .map(|e| (e.donor.id.as_str(), e.chosen_id()))
            .collect();
        assert_eq!(got, [("D1", "P2"), ("D2", "P1")]);
        assert_eq!(ds.examples[0].len(), 2);
        assert_eq!(ds.examples[1].len(), 1);
        assert_eq!(ds.examples[0].row(1, 4), &[1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn discarded_donors_are_skipped() {
        let (t, _) = motivating_example();
        // D2 is worthless, so the oracle leaves it unused.
        let m = crate::compat::SurvivalModel::default()
            .with_override("D1", "P1", 10.0)
            .with_override("D1", "P2", 9.0)
            .with_override("D2", "P1", -1.0);
        let ds = build_dataset(&[t], FeatureMapId::Blood4, &CompatConfig::default(), &m).unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!(ds.examples[0].chosen_id(), "P1");
    }

    #[test]
    fn chosen_is_always_in_pool() {
        let cfg = CompatConfig::default();
        let model = SurvivalModel::default();
        let ts: Vec<Trajectory> = (0..3)
            .map(|s| {
                generate_trajectory(
                    &PopulationConfig {
                        rng_seed: s,
                        initial_waitlist_size: 60,
                        ..Default::default()
                    },
                    20,
                )
                .unwrap()
            })
            .collect();
        let ds = build_dataset(&ts, FeatureMapId::MatchState34, &cfg, &model).unwrap();
        let oracle_total: usize = ts
            .iter()
            .map(|t| solve_trajectory(t, &cfg, &model).unwrap().matches.len())
            .sum();
        assert_eq!(ds.len(), oracle_total);
        for e in &ds.examples {
            assert!(e.pool.iter().any(|p| p.id == e.chosen_id()));
            assert_eq!(e.features.len(), e.len() * 34);
            assert!(e.utilities[e.chosen] > 0.0);
        }
        let cas = ds.with_feature_map(FeatureMapId::Cas14).unwrap();
        assert_eq!(cas.rows().count(), ds.rows().count());
    }
}
