use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BlackboxConfig {
    /// Total objective evaluations, including `initial`.
    pub budget: usize,
    pub lower: f64,
    pub upper: f64,
    pub seed: u64,
    pub initial: Option<Vec<f64>>,
}

impl Default for BlackboxConfig {
    fn default() -> Self {
        BlackboxConfig {
            budget: 100,
            lower: -2.0,
            upper: 2.0,
            seed: 0,
            initial: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BlackboxResult {
    pub theta: Vec<f64>,
    pub value: f64,
    /// Every evaluated point in evaluation order.
    pub history: Vec<(Vec<f64>, f64)>,
}

impl BlackboxResult {
    pub fn evaluations(&self) -> usize {
        self.history.len()
    }
}

fn latin_hypercube(n: usize, dims: usize, lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut pts = vec![vec![0.0; dims]; n];
    for j in 0..dims {
        let mut strata: Vec<usize> = (0..n).collect();
        strata.shuffle(rng);
        for (pt, s) in pts.iter_mut().zip(strata) {
            let u = (s as f64 + rng.random::<f64>()) / n as f64;
            pt[j] = lo + u * (hi - lo);
        }
    }
    pts
}

/// Maximizes `objective` over the box `[lower, upper]^dims`.
///
/// A fifth of the budget goes to a Latin hypercube design (evaluated in
/// parallel), the rest to Gaussian steps around the incumbent with the step
/// size adapted by the one-fifth success rule. Ties keep the earlier point.
pub fn blackbox_optimize<F>(objective: F, dims: usize, bc: &BlackboxConfig) -> Result<BlackboxResult>
where
    F: Fn(&[f64]) -> Result<f64> + Sync,
{
    if dims == 0 || bc.budget == 0 || bc.lower.partial_cmp(&bc.upper) != Some(std::cmp::Ordering::Less) {
        return Err(Error::Config(format!(
            "black-box search needs dims > 0, budget > 0 and lower < upper (got {dims}, {}, [{}, {}])",
            bc.budget, bc.lower, bc.upper
        )));
    }
    let eval = |x: &[f64]| -> Result<f64> {
        let v = objective(x)?;
        if v.is_nan() {
            return Err(Error::Numerical(format!("objective returned NaN at {x:?}")));
        }
        Ok(v)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(bc.seed);
    let mut history: Vec<(Vec<f64>, f64)> = Vec::with_capacity(bc.budget);
    if let Some(x0) = &bc.initial {
        if x0.len() != dims {
            return Err(Error::DimensionMismatch {
                expected: dims,
                got: x0.len(),
            });
        }
        let x0: Vec<f64> = x0.iter().map(|v| v.clamp(bc.lower, bc.upper)).collect();
        let v = eval(&x0)?;
        history.push((x0, v));
    }
    let n_design = (bc.budget / 5).max(1).min(bc.budget - history.len());
    let design = latin_hypercube(n_design, dims, bc.lower, bc.upper, &mut rng);
    let values: Vec<f64> = design.par_iter().map(|x| eval(x)).collect::<Result<_>>()?;
    history.extend(design.into_iter().zip(values));

    let best_of = |h: &[(Vec<f64>, f64)]| {
        let mut b = 0;
        for (i, (_, v)) in h.iter().enumerate() {
            if *v > h[b].1 {
                b = i;
            }
        }
        b
    };
    let mut best = best_of(&history);
    let range = bc.upper - bc.lower;
    let mut sigma = 0.1 * range;
    while history.len() < bc.budget {
        let cand: Vec<f64> = history[best]
            .0
            .iter()
            .map(|&x| {
                let z: f64 = rng.sample(StandardNormal);
                (x + sigma * z).clamp(bc.lower, bc.upper)
            })
            .collect();
        let v = eval(&cand)?;
        history.push((cand, v));
        if v > history[best].1 {
            best = history.len() - 1;
            sigma *= 1.5;
        } else {
            sigma *= 1.5f64.powf(-0.25);
        }
        sigma = sigma.clamp(1e-6 * range, range);
    }
    let (theta, value) = history[best].clone();
    Ok(BlackboxResult { theta, value, history })
}
