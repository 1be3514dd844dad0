//! Synthetic population generation and semi-synthetic resampling.

mod augment;
mod generate;

pub use augment::{
    compute_bounds, semisynthetic, Augmenter, ResampleBounds, SemiSyntheticDraw, SourcePatient, DEFAULT_K_OFFSET_DAYS,
};
pub use generate::{death_hazard, generate_trajectory, generate_trajectory_in, BetaParams, PopulationConfig};
