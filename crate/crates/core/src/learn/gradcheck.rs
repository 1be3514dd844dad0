use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::dataset::ImitationExample;
use super::losses::LossKind;
use super::train::{batch_loss_grad, example_scores, loss_from_scores, LossSpec};
use crate::error::{Error, Result};
use crate::policies::PotentialModel;

/// Hinge examples closer than this to a kink are left out of the check.
pub const KINK_EXCLUSION: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckReport {
    /// `max |analytic - numeric| / max(1, |analytic|, |numeric|)`.
    pub max_rel_error: f64,
    pub worst_param: usize,
    pub params_checked: usize,
    pub examples_used: usize,
    pub excluded_near_kink: usize,
    /// Smallest `|margin - (q_c - q_p)|` among the examples used (hinge only).
    pub min_kink_distance: Option<f64>,
    /// Parameters whose step flipped a hidden unit and were redone with a
    /// step 100 times smaller.
    pub kink_retries: usize,
    /// Parameters that flipped a hidden unit even with the smaller step;
    /// left out of `max_rel_error`.
    pub kink_skipped: usize,
}

impl GradcheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error.is_finite() && self.max_rel_error < tol
    }
}

fn kink_distance(q: &[f64], c: usize, margin: f64) -> Option<f64> {
    (0..q.len())
        .filter(|&p| p != c)
        .map(|p| (margin - (q[c] - q[p])).abs())
        .min_by(f64::total_cmp)
}

/// Central differences against the analytic batch gradient, dropout off.
/// The step for parameter `i` is `1e-5 * max(1, |theta_i|)`. `max_params`
/// limits the check to evenly spaced parameters.
///
/// A difference is only meaningful if both sides see the same piecewise-linear
/// region of the network: when some hidden pre-activation changes sign between
/// `theta + h` and `theta - h`, the parameter is redone with `h / 100` and
/// skipped if that still crosses.
pub fn gradcheck(
    m: &PotentialModel,
    examples: &[&ImitationExample],
    spec: &LossSpec,
    max_params: Option<usize>,
) -> Result<GradcheckReport> {
    Ok(gradcheck_losses(m, examples, std::slice::from_ref(spec), max_params)?.remove(0))
}

/// [`gradcheck`] for several losses at once, sharing each perturbed forward
/// pass. One report per entry of `specs`.
pub fn gradcheck_losses(
    m: &PotentialModel,
    examples: &[&ImitationExample],
    specs: &[LossSpec],
    max_params: Option<usize>,
) -> Result<Vec<GradcheckReport>> {
    m.validate()?;
    for e in examples {
        if e.features.len() != e.len() * m.dim() {
            return Err(Error::DimensionMismatch {
                expected: e.len() * m.dim(),
                got: e.features.len(),
            });
        }
    }
    let scores = |m: &PotentialModel| -> (Vec<Vec<f64>>, Vec<bool>) {
        let mut pattern = Vec::new();
        let q = examples.iter().map(|e| example_scores(m, e, &mut pattern)).collect();
        (q, pattern)
    };
    let (base, _) = scores(m);
    let mut reports = Vec::with_capacity(specs.len());
    let mut used_sets = Vec::with_capacity(specs.len());
    let mut analytic = Vec::with_capacity(specs.len());
    for spec in specs {
        let mut used = Vec::new();
        let mut excluded = 0;
        let mut min_kink: Option<f64> = None;
        for (k, e) in examples.iter().enumerate() {
            if spec.kind == LossKind::Hinge {
                if let Some(d) = kink_distance(&base[k], e.chosen, spec.margin) {
                    if d < KINK_EXCLUSION {
                        excluded += 1;
                        continue;
                    }
                    min_kink = Some(min_kink.map_or(d, |x| x.min(d)));
                }
            }
            used.push(k);
        }
        let batch: Vec<&ImitationExample> = used.iter().map(|&k| examples[k]).collect();
        analytic.push(batch_loss_grad(m, &batch, spec).1);
        used_sets.push(used);
        reports.push(GradcheckReport {
            max_rel_error: 0.0,
            worst_param: 0,
            params_checked: 0,
            examples_used: batch.len(),
            excluded_near_kink: excluded,
            min_kink_distance: min_kink,
            kink_retries: 0,
            kink_skipped: 0,
        });
    }
    let objective = |m: &PotentialModel, q: &[Vec<f64>], s: usize| -> f64 {
        used_sets[s]
            .iter()
            .map(|&k| loss_from_scores(examples[k], &specs[s], &q[k]))
            .sum::<f64>()
            + 0.5 * specs[s].l2 * m.params.iter().map(|x| x * x).sum::<f64>()
    };
    let n = m.params.len();
    let idx: Vec<usize> = match max_params {
        Some(k) if k < n && k > 0 => (0..k).map(|j| j * n / k).collect(),
        _ => (0..n).collect(),
    };
    // Per parameter: number of steps tried, and the errors (None if skipped).
    let errs: Vec<(usize, Option<Vec<f64>>)> = idx
        .par_iter()
        .map(|&i| {
            let mut h = 1e-5 * m.params[i].abs().max(1.0);
            for attempt in 1..=2 {
                let mut plus = m.clone();
                plus.params[i] += h;
                let mut minus = m.clone();
                minus.params[i] -= h;
                let ((qp, pp), (qm, pm)) = (scores(&plus), scores(&minus));
                if pp != pm {
                    h /= 100.0;
                    continue;
                }
                let e = (0..specs.len())
                    .map(|s| {
                        let num = (objective(&plus, &qp, s) - objective(&minus, &qm, s)) / (2.0 * h);
                        let a = analytic[s][i];
                        (a - num).abs() / a.abs().max(num.abs()).max(1.0)
                    })
                    .collect();
                return (attempt, Some(e));
            }
            (2, None)
        })
        .collect();
    for (s, r) in reports.iter_mut().enumerate() {
        r.kink_retries = errs.iter().filter(|(a, e)| *a > 1 && e.is_some()).count();
        r.kink_skipped = errs.iter().filter(|(_, e)| e.is_none()).count();
        r.params_checked = idx.len() - r.kink_skipped;
        let mut worst = None;
        for (j, (_, e)) in errs.iter().enumerate() {
            let Some(e) = e else { continue };
            let e = e[s];
            if worst.is_none_or(|(_, w): (usize, f64)| e > w || e.is_nan()) {
                worst = Some((j, e));
            }
        }
        if let Some((j, e)) = worst {
            r.max_rel_error = e;
            r.worst_param = idx[j];
        }
    }
    Ok(reports)
}

/// Adds independent `U(-scale, scale)` noise to every parameter.
pub fn jitter(m: &mut PotentialModel, seed: u64, scale: f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for p in m.params.iter_mut() {
        *p += rng.random_range(-scale..=scale);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compat::{CompatConfig, SurvivalModel};
    use crate::learn::{build_dataset, ImitationDataset};
    use crate::policies::{FeatureMapId, ModelKind};
    use crate::popgen::{generate_trajectory, PopulationConfig};

    fn data(map: FeatureMapId) -> ImitationDataset {
        let t = generate_trajectory(
            &PopulationConfig {
                rng_seed: 3,
                initial_waitlist_size: 40,
                ..Default::default()
            },
            10,
        )
        .unwrap();
        build_dataset(&[t], map, &CompatConfig::default(), &SurvivalModel::default()).unwrap()
    }

    fn spec(kind: LossKind) -> LossSpec {
        LossSpec {
            kind,
            margin: 1.0,
            l2: 1e-3,
            importance_weighting: false,
        }
    }

    #[test]
    fn linear_all_losses() {
        let ds = data(FeatureMapId::Blood4);
        let batch: Vec<&ImitationExample> = ds.examples.iter().take(8).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for kind in LossKind::ALL {
            let theta = (0..4).map(|_| rng.random_range(-3.0..3.0)).collect();
            let m = PotentialModel::linear(FeatureMapId::Blood4, theta).unwrap();
            let r = gradcheck(&m, &batch, &spec(kind), None).unwrap();
            assert!(r.passes(1e-6), "{kind}: {r:?}");
            assert!(r.examples_used > 0);
        }
    }

    #[test]
    fn mlp_listwise() {
        let ds = data(FeatureMapId::Blood4);
        let batch: Vec<&ImitationExample> = ds.examples.iter().take(4).collect();
        let mut m = PotentialModel::mlp_init(FeatureMapId::Blood4, &[64, 32], 5).unwrap();
        jitter(&mut m, 2, 0.2);
        let r = gradcheck(&m, &batch, &spec(LossKind::Listwise), None).unwrap();
        assert!(r.passes(1e-5), "{r:?}");
        assert_eq!(r.params_checked, m.params.len());
    }

    #[test]
    fn zero_model_passes() {
        let ds = data(FeatureMapId::Blood4);
        let batch: Vec<&ImitationExample> = ds.examples.iter().take(4).collect();
        let m = PotentialModel::zeros(FeatureMapId::Blood4, ModelKind::Linear, &[]).unwrap();
        let r = gradcheck(&m, &batch, &spec(LossKind::Pairwise), None).unwrap();
        assert!(r.passes(1e-6), "{r:?}");
    }

    #[test]
    fn subset_of_params() {
        let ds = data(FeatureMapId::Blood4);
        let batch: Vec<&ImitationExample> = ds.examples.iter().take(2).collect();
        let m = PotentialModel::mlp_init(FeatureMapId::Blood4, &[64, 32], 5).unwrap();
        let r = gradcheck(&m, &batch, &spec(LossKind::Pairwise), Some(50)).unwrap();
        assert_eq!(r.params_checked, 50);
    }
}
