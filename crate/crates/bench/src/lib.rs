//! Inputs shared by the benchmarks.

use hindsight_core::compat::{CompatConfig, SurvivalModel};
use hindsight_core::domain::Trajectory;
use hindsight_core::learn::{build_dataset, fit_scaler, jitter, ImitationDataset};
use hindsight_core::policies::{FeatureMapId, PotentialModel};
use hindsight_core::popgen::{generate_trajectory, PopulationConfig};

/// A default-population trajectory of `days` days.
pub fn month(seed: u64, days: i64) -> Trajectory {
    let pop = PopulationConfig {
        rng_seed: seed,
        ..Default::default()
    };
    generate_trajectory(&pop, days).expect("default population is valid")
}

pub fn dataset(t: &Trajectory, map: FeatureMapId) -> ImitationDataset {
    build_dataset(
        std::slice::from_ref(t),
        map,
        &CompatConfig::default(),
        &SurvivalModel::default(),
    )
    .expect("generated trajectories are valid")
}

/// A randomly perturbed MLP with a scaler fitted to `ds`.
pub fn mlp(ds: &ImitationDataset, map: FeatureMapId, hidden: &[usize]) -> PotentialModel {
    let mut m = PotentialModel::mlp_init(map, hidden, 3).expect("non-empty layers");
    m.scaler = Some(fit_scaler(ds).expect("non-empty dataset"));
    jitter(&mut m, 4, 0.1);
    m
}
