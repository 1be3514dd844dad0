use std::fmt::Write as _;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::features::FeatureMapId;
use crate::domain::fmt_real;
use crate::error::{Error, Result};

pub const LEAKY_SLOPE: f64 = 0.01;
const MODEL_HEADER: &str = "hindsight-potential v1";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelKind {
    Linear,
    Mlp,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Linear => "linear",
            ModelKind::Mlp => "mlp",
        }
    }
}

/// Per-feature standardization applied to MLP inputs.
#[derive(Clone, Debug, PartialEq)]
pub struct Scaler {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Scaler {
    pub const MIN_STD: f64 = 1e-12;

    pub fn identity(dim: usize) -> Self {
        Scaler {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    /// Population moments of the rows; near-constant columns get unit scale.
    pub fn fit<'a>(rows: impl IntoIterator<Item = &'a [f64]>, dim: usize) -> Result<Self> {
        let mut n = 0usize;
        let mut sum = vec![0.0; dim];
        let rows: Vec<&[f64]> = rows.into_iter().collect();
        for r in &rows {
            if r.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: r.len(),
                });
            }
            n += 1;
            for (s, x) in sum.iter_mut().zip(r.iter()) {
                *s += x;
            }
        }
        if n == 0 {
            return Err(Error::invalid("cannot fit a scaler to an empty dataset"));
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
        let mut var = vec![0.0; dim];
        for r in &rows {
            for j in 0..dim {
                let d = r[j] - mean[j];
                var[j] += d * d;
            }
        }
        let std = var
            .iter()
            .map(|v| {
                let s = (v / n as f64).sqrt();
                if s < Self::MIN_STD {
                    1.0
                } else {
                    s
                }
            })
            .collect();
        Ok(Scaler { mean, std })
    }

    pub fn apply(&self, x: &[f64], out: &mut [f64]) {
        for j in 0..x.len() {
            out[j] = (x[j] - self.mean[j]) / self.std[j];
        }
    }
}

/// A learned potential `P_theta(phi)` or, for the CAS map, a direct linear score.
///
/// MLP parameter layout: for each hidden layer, its weight matrix (row-major,
/// `out x in`) followed by its bias; then the output weights. The output layer
/// has no bias, so all-zero parameters give an output of exactly 0.
#[derive(Clone, Debug, PartialEq)]
pub struct PotentialModel {
    pub feature_map: FeatureMapId,
    pub kind: ModelKind,
    pub hidden: Vec<usize>,
    pub params: Vec<f64>,
    pub scaler: Option<Scaler>,
}

fn leaky(z: f64) -> f64 {
    if z > 0.0 {
        z
    } else {
        LEAKY_SLOPE * z
    }
}

fn leaky_grad(z: f64) -> f64 {
    if z > 0.0 {
        1.0
    } else {
        LEAKY_SLOPE
    }
}

/// Intermediate values of one MLP forward pass, kept for backprop.
#[derive(Clone, Debug, Default)]
pub struct MlpCache {
    /// `acts[0]` is the scaled input; `acts[l]` the (masked) output of hidden layer `l`.
    pub acts: Vec<Vec<f64>>,
    /// Pre-activations of each hidden layer.
    pub pre: Vec<Vec<f64>>,
}

/// Intermediates of a batched MLP pass, one row per input, row-major.
#[derive(Clone, Debug, Default)]
pub struct MlpBatch {
    n: usize,
    acts: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
    out: Vec<f64>,
    da: Vec<f64>,
    next: Vec<f64>,
}

impl MlpBatch {
    /// Network outputs of the last pass.
    pub fn outputs(&self) -> &[f64] {
        &self.out[..self.n]
    }

    /// Appends, for every hidden pre-activation of the last pass, whether it
    /// is positive.
    pub fn sign_pattern(&self, out: &mut Vec<bool>) {
        for z in &self.pre {
            out.extend(z.iter().map(|&v| v > 0.0));
        }
    }
}

/// `C = A B + beta C` for row-major slices with explicit strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    (m, k, n): (usize, usize, usize),
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
    rsc: usize,
) {
    if m == 0 || n == 0 {
        return;
    }
    let last = |rows: usize, cols: usize, rs: usize, cs: usize| (rows - 1) * rs + (cols - 1) * cs;
    assert!(k == 0 || (last(m, k, rsa, csa) < a.len() && last(k, n, rsb, csb) < b.len()));
    assert!(last(m, n, rsc, 1) < c.len());
    // SAFETY: the asserts above keep every index the kernel touches in bounds.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            1,
        );
    }
}

impl PotentialModel {
    pub fn param_count(map: FeatureMapId, kind: ModelKind, hidden: &[usize]) -> usize {
        match kind {
            ModelKind::Linear => map.dim(),
            ModelKind::Mlp => {
                let mut n = 0;
                let mut prev = map.dim();
                for &h in hidden {
                    n += h * prev + h;
                    prev = h;
                }
                n + prev
            }
        }
    }

    pub fn zeros(map: FeatureMapId, kind: ModelKind, hidden: &[usize]) -> Result<Self> {
        if kind == ModelKind::Mlp && (hidden.is_empty() || hidden.contains(&0)) {
            return Err(Error::invalid("an MLP needs at least one non-empty hidden layer"));
        }
        let hidden = if kind == ModelKind::Linear {
            vec![]
        } else {
            hidden.to_vec()
        };
        Ok(PotentialModel {
            feature_map: map,
            kind,
            params: vec![0.0; Self::param_count(map, kind, &hidden)],
            hidden,
            scaler: None,
        })
    }

    pub fn linear(map: FeatureMapId, theta: Vec<f64>) -> Result<Self> {
        let mut m = Self::zeros(map, ModelKind::Linear, &[])?;
        if theta.len() != m.params.len() {
            return Err(Error::DimensionMismatch {
                expected: m.params.len(),
                got: theta.len(),
            });
        }
        m.params = theta;
        Ok(m)
    }

    /// He-normal hidden weights, zero biases, zero output weights: the network
    /// starts as the zero potential but with non-degenerate hidden features.
    pub fn mlp_init(map: FeatureMapId, hidden: &[usize], seed: u64) -> Result<Self> {
        let mut m = Self::zeros(map, ModelKind::Mlp, hidden)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut off = 0;
        let mut prev = map.dim();
        for &h in hidden {
            let scale = (2.0 / prev as f64).sqrt();
            for w in &mut m.params[off..off + h * prev] {
                let z: f64 = StandardNormal.sample(&mut rng);
                *w = z * scale;
            }
            off += h * prev + h;
            prev = h;
        }
        Ok(m)
    }

    pub fn dim(&self) -> usize {
        self.feature_map.dim()
    }

    /// CAS-style models score candidates directly; all others are potentials
    /// subtracted from the immediate utility.
    pub fn is_direct_score(&self) -> bool {
        self.feature_map == FeatureMapId::Cas14
    }

    /// Decision score for a candidate with utility `u` and potential `p`.
    pub fn score_from(&self, u: f64, p: f64) -> f64 {
        if self.is_direct_score() {
            p
        } else {
            u - p
        }
    }

    /// d(score)/d(P).
    pub fn score_sign(&self) -> f64 {
        if self.is_direct_score() {
            1.0
        } else {
            -1.0
        }
    }

    pub fn validate(&self) -> Result<()> {
        let want = Self::param_count(self.feature_map, self.kind, &self.hidden);
        if self.params.len() != want {
            return Err(Error::DimensionMismatch {
                expected: want,
                got: self.params.len(),
            });
        }
        if self.params.iter().any(|x| !x.is_finite()) {
            return Err(Error::Numerical("model parameters are not finite".into()));
        }
        if let Some(s) = &self.scaler {
            if s.mean.len() != self.dim() || s.std.len() != self.dim() {
                return Err(Error::DimensionMismatch {
                    expected: self.dim(),
                    got: s.mean.len().min(s.std.len()),
                });
            }
            if s.std.iter().any(|&v| !(v > 0.0) || !v.is_finite()) {
                return Err(Error::invalid("scaler standard deviations must be positive"));
            }
        }
        Ok(())
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            });
        }
        Ok(())
    }

    /// Potential (or direct score) of a feature vector.
    pub fn value(&self, x: &[f64]) -> Result<f64> {
        self.check_dim(x)?;
        Ok(match self.kind {
            ModelKind::Linear => dot(&self.params, x),
            ModelKind::Mlp => self.forward(x, None, &mut MlpCache::default()),
        })
    }

    /// MLP forward pass filling `cache`. `masks`, when given, holds one factor
    /// per hidden unit, layer by layer, multiplying the activations (inverted
    /// dropout).
    pub fn forward(&self, x: &[f64], masks: Option<&[f64]>, cache: &mut MlpCache) -> f64 {
        debug_assert_eq!(self.kind, ModelKind::Mlp);
        let depth = self.hidden.len();
        cache.acts.resize(depth + 1, Vec::new());
        cache.pre.resize(depth, Vec::new());
        let a0 = &mut cache.acts[0];
        a0.resize(x.len(), 0.0);
        match &self.scaler {
            Some(s) => s.apply(x, a0),
            None => a0.copy_from_slice(x),
        }
        let mut off = 0;
        let mut moff = 0;
        let mut prev = x.len();
        for (l, &h) in self.hidden.iter().enumerate() {
            let (w, rest) = self.params[off..].split_at(h * prev);
            let b = &rest[..h];
            let (before, after) = cache.acts.split_at_mut(l + 1);
            let input = &before[l];
            let z = &mut cache.pre[l];
            let a = &mut after[0];
            z.resize(h, 0.0);
            a.resize(h, 0.0);
            for i in 0..h {
                z[i] = b[i] + dot(&w[i * prev..(i + 1) * prev], input);
                a[i] = leaky(z[i]);
            }
            if let Some(m) = masks {
                for (ai, mi) in a.iter_mut().zip(&m[moff..moff + h]) {
                    *ai *= mi;
                }
            }
            moff += h;
            off += h * prev + h;
            prev = h;
        }
        dot(&self.params[off..off + prev], &cache.acts[depth])
    }

    /// Forward pass over `n` inputs stored row by row in `xs`. `masks`, when
    /// given, holds per-row dropout factors laid out as in [`Self::forward`].
    pub fn forward_batch(&self, xs: &[f64], n: usize, masks: Option<&[f64]>, b: &mut MlpBatch) {
        debug_assert_eq!(self.kind, ModelKind::Mlp);
        let dim = self.dim();
        let depth = self.hidden.len();
        let units: usize = self.hidden.iter().sum();
        b.n = n;
        b.acts.resize(depth + 1, Vec::new());
        b.pre.resize(depth, Vec::new());
        let a0 = &mut b.acts[0];
        a0.resize(n * dim, 0.0);
        match &self.scaler {
            Some(s) => {
                for (dst, src) in a0.chunks_exact_mut(dim).zip(xs.chunks_exact(dim)) {
                    s.apply(src, dst);
                }
            }
            None => a0.copy_from_slice(&xs[..n * dim]),
        }
        let mut off = 0;
        let mut moff = 0;
        let mut prev = dim;
        for (l, &h) in self.hidden.iter().enumerate() {
            let w = &self.params[off..off + h * prev];
            let bias = &self.params[off + h * prev..off + h * prev + h];
            let z = &mut b.pre[l];
            z.resize(n * h, 0.0);
            gemm((n, prev, h), &b.acts[l], (prev, 1), w, (1, prev), 0.0, z, h);
            let a = &mut b.acts[l + 1];
            a.resize(n * h, 0.0);
            for (r, (zr, ar)) in z.chunks_exact_mut(h).zip(a.chunks_exact_mut(h)).enumerate() {
                for i in 0..h {
                    zr[i] += bias[i];
                    ar[i] = leaky(zr[i]);
                }
                if let Some(m) = masks {
                    let mr = &m[r * units + moff..r * units + moff + h];
                    for (ai, mi) in ar.iter_mut().zip(mr) {
                        *ai *= mi;
                    }
                }
            }
            off += h * prev + h;
            moff += h;
            prev = h;
        }
        let out_w = &self.params[off..off + prev];
        b.out.clear();
        b.out.extend(b.acts[depth].chunks_exact(prev).map(|a| dot(out_w, a)));
    }

    /// Accumulates `sum_r dout[r] * d(output_r)/d(params)` into `grad` for the
    /// pass held in `b` (produced with the same `masks`).
    pub fn backward_batch(&self, b: &mut MlpBatch, masks: Option<&[f64]>, dout: &[f64], grad: &mut [f64]) {
        let depth = self.hidden.len();
        let units: usize = self.hidden.iter().sum();
        let n = b.n;
        let last = self.hidden[depth - 1];
        let mut off = self.params.len() - last;
        let mut moff = units;
        let MlpBatch {
            acts, pre, da, next, ..
        } = b;
        let out_w = &self.params[off..];
        for (d, a) in dout.iter().zip(acts[depth].chunks_exact(last)) {
            for (g, x) in grad[off..].iter_mut().zip(a) {
                *g += d * x;
            }
        }
        // Gradient w.r.t. the last hidden activations, then turned in place
        // into the gradient w.r.t. the pre-activations of each layer.
        da.clear();
        for &d in &dout[..n] {
            da.extend(out_w.iter().map(|w| d * w));
        }
        for l in (0..depth).rev() {
            let h = self.hidden[l];
            let n_in = if l == 0 { self.dim() } else { self.hidden[l - 1] };
            off -= h * n_in + h;
            moff -= h;
            for (r, (dr, zr)) in da.chunks_exact_mut(h).zip(pre[l].chunks_exact(h)).enumerate() {
                for i in 0..h {
                    let m = masks.map_or(1.0, |m| m[r * units + moff + i]);
                    dr[i] *= m * leaky_grad(zr[i]);
                }
            }
            let (gw, rest) = grad[off..].split_at_mut(h * n_in);
            gemm((h, n, n_in), da, (1, h), &acts[l], (n_in, 1), 1.0, gw, n_in);
            for dr in da.chunks_exact(h) {
                for (g, d) in rest[..h].iter_mut().zip(dr) {
                    *g += d;
                }
            }
            if l > 0 {
                let w = &self.params[off..off + h * n_in];
                next.resize(n * n_in, 0.0);
                gemm((n, h, n_in), da, (h, 1), w, (n_in, 1), 0.0, next, n_in);
                std::mem::swap(da, next);
            }
        }
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{MODEL_HEADER}");
        let _ = writeln!(s, "feature_map {}", self.feature_map);
        let _ = writeln!(s, "kind {}", self.kind.as_str());
        let hidden: Vec<String> = self.hidden.iter().map(|h| h.to_string()).collect();
        let _ = writeln!(s, "hidden {}", hidden.join(" "));
        match &self.scaler {
            Some(sc) => {
                let _ = writeln!(s, "scaler_mean {}", join_reals(&sc.mean));
                let _ = writeln!(s, "scaler_std {}", join_reals(&sc.std));
            }
            None => {
                let _ = writeln!(s, "scaler none");
            }
        }
        let _ = writeln!(s, "params {}", self.params.len());
        for p in &self.params {
            let _ = writeln!(s, "{}", fmt_real(*p));
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim_end()));
        let mut next = |what: &str| {
            lines
                .next()
                .ok_or_else(|| Error::parse(0, format!("model file ends before {what}")))
        };
        let (ln, header) = next("header")?;
        if header != MODEL_HEADER {
            return Err(Error::parse(ln, format!("expected header {MODEL_HEADER:?}")));
        }
        let field = |(ln, line): (usize, &str), key: &str| -> Result<(usize, Vec<String>)> {
            let mut it = line.split_whitespace();
            if it.next() != Some(key) {
                return Err(Error::parse(ln, format!("expected `{key}`")));
            }
            Ok((ln, it.map(String::from).collect()))
        };
        let (ln, v) = field(next("feature_map")?, "feature_map")?;
        let feature_map: FeatureMapId = v
            .first()
            .ok_or_else(|| Error::parse(ln, "missing feature map"))?
            .parse()
            .map_err(|e: Error| Error::parse(ln, e.to_string()))?;
        let (ln, v) = field(next("kind")?, "kind")?;
        let kind = match v.first().map(String::as_str) {
            Some("linear") => ModelKind::Linear,
            Some("mlp") => ModelKind::Mlp,
            _ => return Err(Error::parse(ln, "kind must be linear or mlp")),
        };
        let (ln, v) = field(next("hidden")?, "hidden")?;
        let hidden = v
            .iter()
            .map(|h| {
                h.parse::<usize>()
                    .map_err(|_| Error::parse(ln, format!("bad width {h:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        let line = next("scaler")?;
        let scaler = if line.1 == "scaler none" {
            None
        } else {
            let (ln, mean) = field(line, "scaler_mean")?;
            let mean = parse_reals(ln, &mean)?;
            let (ln, std) = field(next("scaler_std")?, "scaler_std")?;
            Some(Scaler {
                mean,
                std: parse_reals(ln, &std)?,
            })
        };
        let (ln, v) = field(next("params")?, "params")?;
        let n: usize = v
            .first()
            .and_then(|x| x.parse().ok())
            .ok_or_else(|| Error::parse(ln, "bad parameter count"))?;
        let mut params = Vec::with_capacity(n);
        for _ in 0..n {
            let (ln, l) = next("parameter values")?;
            params.push(parse_reals(ln, &[l.trim().to_string()])?[0]);
        }
        let m = PotentialModel {
            feature_map,
            kind,
            hidden,
            params,
            scaler,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}

/// Four running sums so the loop vectorizes.
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0; 8];
    let mut ca = a.chunks_exact(8);
    let mut cb = b.chunks_exact(8);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for k in 0..8 {
            acc[k] += x[k] * y[k];
        }
    }
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

fn join_reals(v: &[f64]) -> String {
    v.iter().map(|x| fmt_real(*x)).collect::<Vec<_>>().join(" ")
}

fn parse_reals(ln: usize, v: &[String]) -> Result<Vec<f64>> {
    v.iter()
        .map(|x| {
            x.parse::<f64>()
                .ok()
                .filter(|f| f.is_finite())
                .ok_or_else(|| Error::parse(ln, format!("bad real {x:?}")))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    /// Straightforward layer-by-layer forward pass over nested matrices.
    fn reference_forward(m: &PotentialModel, x: &[f64]) -> f64 {
        let mut a: Vec<f64> = match &m.scaler {
            Some(s) => x.iter().enumerate().map(|(j, v)| (v - s.mean[j]) / s.std[j]).collect(),
            None => x.to_vec(),
        };
        let mut k = 0;
        for &h in &m.hidden {
            let n_in = a.len();
            let mut w = vec![vec![0.0; n_in]; h];
            for row in w.iter_mut() {
                for v in row.iter_mut() {
                    *v = m.params[k];
                    k += 1;
                }
            }
            let b: Vec<f64> = m.params[k..k + h].to_vec();
            k += h;
            a = (0..h)
                .map(|i| {
                    let z: f64 = b[i] + (0..n_in).map(|j| w[i][j] * a[j]).sum::<f64>();
                    if z > 0.0 {
                        z
                    } else {
                        0.01 * z
                    }
                })
                .collect();
        }
        (0..a.len()).map(|j| m.params[k + j] * a[j]).sum()
    }

    fn random_mlp(hidden: &[usize], seed: u64) -> PotentialModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = PotentialModel::zeros(FeatureMapId::MatchState34, ModelKind::Mlp, hidden).unwrap();
        for p in m.params.iter_mut() {
            *p = rng.random_range(-0.5..0.5);
        }
        m.scaler = Some(Scaler {
            mean: (0..34).map(|_| rng.random_range(-1.0..1.0)).collect(),
            std: (0..34).map(|_| rng.random_range(0.5..2.0)).collect(),
        });
        m
    }

    #[test]
    fn param_counts() {
        assert_eq!(
            PotentialModel::param_count(FeatureMapId::Blood4, ModelKind::Linear, &[]),
            4
        );
        assert_eq!(
            PotentialModel::param_count(FeatureMapId::Blood4, ModelKind::Mlp, &[64, 32]),
            64 * 4 + 64 + 32 * 64 + 32 + 32
        );
    }

    #[test]
    fn zero_params_give_zero() {
        for (kind, hidden) in [(ModelKind::Linear, vec![]), (ModelKind::Mlp, vec![64, 32])] {
            let m = PotentialModel::zeros(FeatureMapId::Blood4, kind, &hidden).unwrap();
            assert_eq!(m.value(&[3.0, -1.0, 2.0, 7.0]).unwrap(), 0.0);
        }
        let m = PotentialModel::mlp_init(FeatureMapId::MatchState34, &[128, 64, 32], 3).unwrap();
        assert_eq!(m.value(&[0.7; 34]).unwrap(), 0.0);
    }

    #[test]
    fn linear_is_a_dot_product() {
        let m = PotentialModel::linear(FeatureMapId::Blood4, vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        assert_eq!(m.value(&[2.0, 5.0, 5.0, 5.0]).unwrap(), 2.0);
        assert!(m.value(&[1.0]).is_err());
    }

    #[test]
    fn forward_matches_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for (i, hidden) in [vec![64, 32], vec![128, 64, 32]].into_iter().enumerate() {
            let m = random_mlp(&hidden, i as u64);
            for _ in 0..20 {
                let x: Vec<f64> = (0..34).map(|_| rng.random_range(-2.0..2.0)).collect();
                let got = m.value(&x).unwrap();
                let want = reference_forward(&m, &x);
                assert!((got - want).abs() <= 1e-12 * want.abs().max(1.0), "{got} vs {want}");
            }
        }
    }

    #[test]
    fn batch_forward_matches_rows() {
        let m = random_mlp(&[16, 8], 2);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let n = 7;
        let xs: Vec<f64> = (0..n * 34).map(|_| rng.random_range(-2.0..2.0)).collect();
        let masks: Vec<f64> = (0..n * 24).map(|_| rng.random_range(0..3) as f64 * 0.5).collect();
        let mut b = MlpBatch::default();
        m.forward_batch(&xs, n, Some(&masks), &mut b);
        let mut cache = MlpCache::default();
        for r in 0..n {
            let want = m.forward(
                &xs[r * 34..(r + 1) * 34],
                Some(&masks[r * 24..(r + 1) * 24]),
                &mut cache,
            );
            let got = b.outputs()[r];
            assert!((got - want).abs() <= 1e-12 * want.abs().max(1.0), "{got} vs {want}");
        }
    }

    #[test]
    fn batch_backward_sums_rows() {
        let m = random_mlp(&[6, 5], 3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let xs: Vec<f64> = (0..3 * 34).map(|_| rng.random_range(-1.0..1.0)).collect();
        let dout = [0.5, -2.0, 1.5];
        let mut b = MlpBatch::default();
        m.forward_batch(&xs, 3, None, &mut b);
        let mut all = vec![0.0; m.params.len()];
        m.backward_batch(&mut b, None, &dout, &mut all);
        let mut sum = vec![0.0; m.params.len()];
        for r in 0..3 {
            m.forward_batch(&xs[r * 34..(r + 1) * 34], 1, None, &mut b);
            m.backward_batch(&mut b, None, &dout[r..r + 1], &mut sum);
        }
        for (a, s) in all.iter().zip(&sum) {
            assert!((a - s).abs() < 1e-12, "{a} vs {s}");
        }
    }

    #[test]
    fn deep_backward_matches_finite_differences() {
        let m = random_mlp(&[9, 7, 5], 6);
        let x: Vec<f64> = (0..34).map(|j| (j as f64 * 0.53).cos()).collect();
        let mut b = MlpBatch::default();
        m.forward_batch(&x, 1, None, &mut b);
        let mut g = vec![0.0; m.params.len()];
        m.backward_batch(&mut b, None, &[1.0], &mut g);
        for (k, &gk) in g.iter().enumerate() {
            let h = 1e-6;
            let mut a = m.clone();
            a.params[k] += h;
            let mut c = m.clone();
            c.params[k] -= h;
            let num = (a.value(&x).unwrap() - c.value(&x).unwrap()) / (2.0 * h);
            assert!((num - gk).abs() < 1e-6, "param {k}: {num} vs {gk}");
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let m = random_mlp(&[8, 5], 4);
        let x: Vec<f64> = (0..34).map(|j| (j as f64 * 0.37).sin()).collect();
        let mut b = MlpBatch::default();
        m.forward_batch(&x, 1, None, &mut b);
        let mut g = vec![0.0; m.params.len()];
        m.backward_batch(&mut b, None, &[1.0], &mut g);
        for (k, &gk) in g.iter().enumerate() {
            let h = 1e-6;
            let mut a = m.clone();
            a.params[k] += h;
            let mut b = m.clone();
            b.params[k] -= h;
            let num = (a.value(&x).unwrap() - b.value(&x).unwrap()) / (2.0 * h);
            assert!((num - gk).abs() < 1e-6, "param {k}: {num} vs {gk}");
        }
    }

    #[test]
    fn scaler_moments() {
        let rows = [vec![0.0, 5.0], vec![2.0, 5.0]];
        let s = Scaler::fit(rows.iter().map(|r| r.as_slice()), 2).unwrap();
        assert_eq!(s.mean, [1.0, 5.0]);
        assert_eq!(s.std, [1.0, 1.0]);
        assert!(Scaler::fit(std::iter::empty(), 2).is_err());
    }

    #[test]
    fn text_round_trip() {
        let mut m = random_mlp(&[4, 3], 9);
        m.feature_map = FeatureMapId::MatchState34;
        let text = m.to_text();
        let back = PotentialModel::from_text(&text).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.to_text(), text);
        let lin = PotentialModel::linear(FeatureMapId::Cas14, vec![0.1; 14]).unwrap();
        assert_eq!(PotentialModel::from_text(&lin.to_text()).unwrap(), lin);
        assert!(PotentialModel::from_text("nope").is_err());
    }
}
