use std::cell::RefCell;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dataset::{ImitationDataset, ImitationExample};
use super::losses::{ranking_loss, LossKind};
use crate::error::{Error, Result};
use crate::policies::{argmax_by_id, MlpBatch, MlpCache, ModelKind, PotentialModel, Scaler};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(with = "loss_serde")]
    pub loss: LossKind,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub grad_clip_norm: f64,
    pub l2: f64,
    /// Applied to MLP hidden activations only.
    pub dropout: f64,
    pub margin: f64,
    /// Scale each pair by `max(1, |U* - U_p|)`.
    pub importance_weighting: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            loss: LossKind::Pairwise,
            learning_rate: 1e-4,
            batch_size: 32,
            epochs: 25,
            grad_clip_norm: 1.0,
            l2: 1e-3,
            dropout: 0.3,
            margin: 1.0,
            importance_weighting: false,
            seed: 0,
        }
    }
}

mod loss_serde {
    use super::LossKind;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(k: &LossKind, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(k.as_str())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<LossKind, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate > 0.0
            && self.batch_size > 0
            && self.grad_clip_norm > 0.0
            && self.l2 >= 0.0
            && (0.0..1.0).contains(&self.dropout)
            && self.margin > 0.0;
        if !ok {
            return Err(Error::Config(format!("invalid training configuration: {self:?}")));
        }
        Ok(())
    }
}

/// Loss settings shared by training and gradient checking.
#[derive(Clone, Copy, Debug)]
pub struct LossSpec {
    pub kind: LossKind,
    pub margin: f64,
    pub l2: f64,
    pub importance_weighting: bool,
}

impl From<&TrainConfig> for LossSpec {
    fn from(tc: &TrainConfig) -> Self {
        LossSpec {
            kind: tc.loss,
            margin: tc.margin,
            l2: tc.l2,
            importance_weighting: tc.importance_weighting,
        }
    }
}

fn pair_weights(e: &ImitationExample) -> Vec<f64> {
    let uc = e.utilities[e.chosen];
    e.utilities.iter().map(|u| (uc - u).abs().max(1.0)).collect()
}

/// Inverted-dropout factors for one example, candidate by candidate, each
/// covering every hidden unit layer by layer.
fn dropout_masks(m: &PotentialModel, n: usize, rate: f64, rng: &mut ChaCha8Rng, out: &mut Vec<f64>) {
    let keep = 1.0 - rate;
    let units: usize = m.hidden.iter().sum();
    out.clear();
    out.extend((0..n * units).map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 }));
}

thread_local! {
    static SCRATCH: RefCell<(MlpBatch, Vec<f64>)> = RefCell::default();
}

/// Decision scores of every candidate, using the outputs already in `batch`
/// for an MLP.
fn scores_of(m: &PotentialModel, e: &ImitationExample, batch: &MlpBatch) -> Vec<f64> {
    let dim = m.dim();
    (0..e.len())
        .map(|i| {
            let p = match m.kind {
                ModelKind::Linear => crate::policies::dot(&m.params, e.row(i, dim)),
                ModelKind::Mlp => batch.outputs()[i],
            };
            m.score_from(e.utilities[i], p)
        })
        .collect()
}

fn loss_and_dq(e: &ImitationExample, spec: &LossSpec, q: &[f64]) -> (f64, Vec<f64>) {
    let weights = spec.importance_weighting.then(|| pair_weights(e));
    ranking_loss(spec.kind, q, e.chosen, spec.margin, weights.as_deref())
}

/// Scores of every candidate with dropout off. For an MLP the sign of each
/// hidden pre-activation is appended to `pattern`.
pub(crate) fn example_scores(m: &PotentialModel, e: &ImitationExample, pattern: &mut Vec<bool>) -> Vec<f64> {
    SCRATCH.with_borrow_mut(|(batch, _)| {
        if m.kind == ModelKind::Mlp {
            m.forward_batch(&e.features, e.len(), None, batch);
            batch.sign_pattern(pattern);
        }
        scores_of(m, e, batch)
    })
}

/// Loss of one example given its candidate scores.
pub(crate) fn loss_from_scores(e: &ImitationExample, spec: &LossSpec, q: &[f64]) -> f64 {
    loss_and_dq(e, spec, q).0
}

/// Loss of one example (no regularizer) and its gradient added into `grad`.
pub fn example_loss_grad(
    m: &PotentialModel,
    e: &ImitationExample,
    spec: &LossSpec,
    dropout: Option<(f64, &mut ChaCha8Rng)>,
    grad: &mut [f64],
) -> f64 {
    SCRATCH.with_borrow_mut(|(batch, masks)| example_loss_grad_in(m, e, spec, dropout, Some(grad), batch, masks))
}

fn example_loss_grad_in(
    m: &PotentialModel,
    e: &ImitationExample,
    spec: &LossSpec,
    dropout: Option<(f64, &mut ChaCha8Rng)>,
    grad: Option<&mut [f64]>,
    batch: &mut MlpBatch,
    mask_buf: &mut Vec<f64>,
) -> f64 {
    let dim = m.dim();
    let n = e.len();
    let masks = match (m.kind, dropout) {
        (ModelKind::Mlp, Some((rate, rng))) if rate > 0.0 => {
            dropout_masks(m, n, rate, rng, mask_buf);
            Some(mask_buf.as_slice())
        }
        _ => None,
    };
    if m.kind == ModelKind::Mlp {
        m.forward_batch(&e.features, n, masks, batch);
    }
    let q = scores_of(m, e, batch);
    let (loss, dq) = loss_and_dq(e, spec, &q);
    let Some(grad) = grad else {
        return loss;
    };
    let sign = m.score_sign();
    match m.kind {
        ModelKind::Linear => {
            for i in (0..n).filter(|&i| dq[i] != 0.0) {
                for (g, x) in grad.iter_mut().zip(e.row(i, dim)) {
                    *g += sign * dq[i] * x;
                }
            }
        }
        ModelKind::Mlp => {
            let dp: Vec<f64> = dq.iter().map(|d| sign * d).collect();
            m.backward_batch(batch, masks, &dp, grad);
        }
    }
    loss
}

/// Loss of one example, dropout off, no regularizer.
pub fn example_loss(m: &PotentialModel, e: &ImitationExample, spec: &LossSpec) -> f64 {
    SCRATCH.with_borrow_mut(|(batch, masks)| example_loss_grad_in(m, e, spec, None, None, batch, masks))
}

/// Summed loss over `batch` plus `(l2 / 2) * |theta|^2`, and its gradient.
/// Dropout is off.
pub fn batch_loss_grad(m: &PotentialModel, batch: &[&ImitationExample], spec: &LossSpec) -> (f64, Vec<f64>) {
    let parts: Vec<(f64, Vec<f64>)> = batch
        .par_iter()
        .map(|e| {
            let mut g = vec![0.0; m.params.len()];
            let l = example_loss_grad(m, e, spec, None, &mut g);
            (l, g)
        })
        .collect();
    reduce(m, parts, spec.l2)
}

fn reduce(m: &PotentialModel, parts: Vec<(f64, Vec<f64>)>, l2: f64) -> (f64, Vec<f64>) {
    let mut loss = 0.0;
    let mut grad = vec![0.0; m.params.len()];
    // Fixed summation order keeps runs bit-reproducible.
    for (l, g) in parts {
        loss += l;
        for (a, b) in grad.iter_mut().zip(&g) {
            *a += b;
        }
    }
    loss += 0.5 * l2 * m.params.iter().map(|x| x * x).sum::<f64>();
    for (g, p) in grad.iter_mut().zip(&m.params) {
        *g += l2 * p;
    }
    (loss, grad)
}

/// Dataset loss with dropout off, for monitoring.
pub fn dataset_loss(m: &PotentialModel, ds: &ImitationDataset, spec: &LossSpec) -> f64 {
    let refs: Vec<&ImitationExample> = ds.examples.iter().collect();
    batch_loss_grad(m, &refs, spec).0
}

/// Fraction of examples where the model's top candidate is the oracle's.
pub fn agreement(m: &PotentialModel, ds: &ImitationDataset) -> f64 {
    if ds.is_empty() {
        return 0.0;
    }
    let dim = m.dim();
    let hits = ds
        .examples
        .par_iter()
        .filter(|e| {
            let mut cache = MlpCache::default();
            let q: Vec<f64> = (0..e.len())
                .map(|i| {
                    let x = e.row(i, dim);
                    let p = match m.kind {
                        ModelKind::Linear => crate::policies::dot(&m.params, x),
                        ModelKind::Mlp => m.forward(x, None, &mut cache),
                    };
                    m.score_from(e.utilities[i], p)
                })
                .collect();
            let pool: Vec<&crate::domain::PatientState> = e.pool.iter().collect();
            argmax_by_id(&pool, &q) == Some(e.chosen)
        })
        .count();
    hits as f64 / ds.len() as f64
}

pub fn fit_scaler(ds: &ImitationDataset) -> Result<Scaler> {
    Scaler::fit(ds.rows(), ds.dim())
}

#[derive(Clone, Debug)]
struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize) -> Self {
        Adam {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::B1.powi(self.t);
        let c2 = 1.0 - Self::B2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = Self::B1 * self.m[i] + (1.0 - Self::B1) * grad[i];
            self.v[i] = Self::B2 * self.v[i] + (1.0 - Self::B2) * grad[i] * grad[i];
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= lr * mh / (vh.sqrt() + Self::EPS);
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: PotentialModel,
    /// Sum of the mini-batch objectives seen during each epoch.
    pub epoch_losses: Vec<f64>,
}

/// Per-(seed, epoch) generator: one ChaCha stream per epoch.
fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64);
    rng
}

/// Mini-batch Adam on the chosen ranking loss with global-norm clipping,
/// L2, and (for MLPs) dropout. An MLP without a scaler gets one fitted to the
/// dataset first.
pub fn train(ds: &ImitationDataset, m0: &PotentialModel, tc: &TrainConfig) -> Result<TrainOutcome> {
    tc.validate()?;
    m0.validate()?;
    if ds.is_empty() {
        return Err(Error::invalid("cannot train on an empty dataset"));
    }
    if ds.feature_map != m0.feature_map {
        return Err(Error::invalid(format!(
            "dataset features are {} but the model expects {}",
            ds.feature_map, m0.feature_map
        )));
    }
    let mut m = m0.clone();
    if m.kind == ModelKind::Mlp && m.scaler.is_none() {
        m.scaler = Some(fit_scaler(ds)?);
    }
    let spec = LossSpec::from(tc);
    let mut adam = Adam::new(m.params.len());
    let mut epoch_losses = Vec::with_capacity(tc.epochs);
    let mut order: Vec<usize> = (0..ds.len()).collect();
    for epoch in 0..tc.epochs {
        let mut rng = epoch_rng(tc.seed, epoch);
        order.sort_unstable();
        order.shuffle(&mut rng);
        let example_seed: u64 = rng.random();
        let mut epoch_loss = 0.0;
        for (b, chunk) in order.chunks(tc.batch_size).enumerate() {
            let parts: Vec<(f64, Vec<f64>)> = chunk
                .par_iter()
                .map(|&i| {
                    let mut g = vec![0.0; m.params.len()];
                    let mut r = ChaCha8Rng::seed_from_u64(example_seed);
                    r.set_stream(i as u64);
                    let l = example_loss_grad(&m, &ds.examples[i], &spec, Some((tc.dropout, &mut r)), &mut g);
                    (l, g)
                })
                .collect();
            let (loss, mut grad) = reduce(&m, parts, tc.l2);
            epoch_loss += loss;
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Numerical(format!(
                    "non-finite loss or gradient at epoch {} batch {b} (loss {loss})",
                    epoch + 1
                )));
            }
            let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
            if norm > tc.grad_clip_norm {
                let s = tc.grad_clip_norm / norm;
                grad.iter_mut().for_each(|g| *g *= s);
            }
            adam.step(&mut m.params, &grad, tc.learning_rate);
        }
        epoch_losses.push(epoch_loss);
    }
    Ok(TrainOutcome { model: m, epoch_losses })
}
