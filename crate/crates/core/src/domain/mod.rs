//! Trajectory data model: donors, patients, timed events, and validation.

mod format;
mod types;
mod validate;
mod waitlist;

pub use format::{fmt_real, from_text, read_trajectory, to_text, write_trajectory};
pub use types::*;
pub use validate::{validate_trajectory, validate_trajectory_with, Rule, Site, Violation};
pub use waitlist::{replay_donors, Waitlist};

use crate::error::{Error, Result};

/// Returns `Ok(())` or the full violation list as an error.
pub fn ensure_valid(t: &Trajectory) -> Result<()> {
    let v = validate_trajectory(t);
    if v.is_empty() {
        Ok(())
    } else {
        Err(Error::InvalidTrajectory(v))
    }
}
