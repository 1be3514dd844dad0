//! Ranking losses over one donor's candidate scores `q`, with `c` the index
//! of the oracle's choice. Each returns the loss and `dL/dq`.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum LossKind {
    /// `sum_{p != c} w_p * max(0, margin - (q_c - q_p))`
    Hinge,
    /// `sum_{p != c} w_p * log(1 + exp(q_p - q_c))`
    Pairwise,
    /// `w * (logsumexp(q) - q_c)`
    Listwise,
}

impl LossKind {
    pub const ALL: [LossKind; 3] = [LossKind::Hinge, LossKind::Pairwise, LossKind::Listwise];

    pub fn as_str(self) -> &'static str {
        match self {
            LossKind::Hinge => "hinge",
            LossKind::Pairwise => "pairwise",
            LossKind::Listwise => "listwise",
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "hinge" | "svm" => Ok(LossKind::Hinge),
            "pairwise" | "pair" | "bce" => Ok(LossKind::Pairwise),
            "listwise" | "list" | "kl" => Ok(LossKind::Listwise),
            _ => Err(Error::invalid(format!("unknown loss {s:?}"))),
        }
    }
}

/// `log(1 + exp(x))` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Per-candidate multipliers; `None` means all ones. For the listwise loss
/// only `weights[c]` is used, as a per-donor weight.
pub fn ranking_loss(kind: LossKind, q: &[f64], c: usize, margin: f64, weights: Option<&[f64]>) -> (f64, Vec<f64>) {
    let w = |i: usize| weights.map_or(1.0, |w| w[i]);
    let mut grad = vec![0.0; q.len()];
    let mut loss = 0.0;
    match kind {
        LossKind::Hinge => {
            for p in 0..q.len() {
                if p == c {
                    continue;
                }
                let slack = margin - (q[c] - q[p]);
                // Subgradient 0 at the kink.
                if slack > 0.0 {
                    loss += w(p) * slack;
                    grad[p] += w(p);
                    grad[c] -= w(p);
                }
            }
        }
        LossKind::Pairwise => {
            for p in 0..q.len() {
                if p == c {
                    continue;
                }
                let x = q[p] - q[c];
                loss += w(p) * softplus(x);
                let s = w(p) * sigmoid(x);
                grad[p] += s;
                grad[c] -= s;
            }
        }
        LossKind::Listwise => {
            let m = q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = q.iter().map(|v| (v - m).exp()).sum();
            let lse = m + z.ln();
            let wc = w(c);
            loss = wc * (lse - q[c]);
            for (g, v) in grad.iter_mut().zip(q) {
                *g = wc * (v - lse).exp();
            }
            grad[c] -= wc;
        }
    }
    (loss, grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn hinge_cases() {
        let (l, g) = ranking_loss(LossKind::Hinge, &[5.0, 0.0, 0.0], 0, 1.0, None);
        assert_eq!(l, 0.0);
        assert!(g.iter().all(|&x| x == 0.0));
        let (l, _) = ranking_loss(LossKind::Hinge, &[2.0, 2.0], 0, 1.0, None);
        assert_eq!(l, 1.0);
    }

    #[test]
    fn pairwise_cases() {
        let (l, _) = ranking_loss(LossKind::Pairwise, &[0.3, 0.3], 1, 1.0, None);
        assert!((l - 2f64.ln()).abs() < 1e-15);
        let (l, _) = ranking_loss(LossKind::Pairwise, &[800.0, 0.0], 0, 1.0, None);
        assert_eq!(l, 0.0);
        let (l, g) = ranking_loss(LossKind::Pairwise, &[-800.0, 0.0], 0, 1.0, None);
        assert_eq!(l, 800.0);
        assert!(g.iter().all(|x| x.is_finite()));
    }

    #[test]
    fn listwise_cases() {
        let (l, g) = ranking_loss(LossKind::Listwise, &[3.0], 0, 1.0, None);
        assert_eq!(l, 0.0);
        assert_eq!(g, [0.0]);
        let (l, _) = ranking_loss(LossKind::Listwise, &[0.7; 5], 2, 1.0, None);
        assert!((l - 5f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for kind in LossKind::ALL {
            for _ in 0..50 {
                let n = rng.random_range(1..8);
                let q: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
                let w: Vec<f64> = (0..n).map(|_| rng.random_range(1.0..3.0)).collect();
                let c = rng.random_range(0..n);
                let (_, g) = ranking_loss(kind, &q, c, 1.0, Some(&w));
                for i in 0..n {
                    let h = 1e-6;
                    let mut a = q.clone();
                    a[i] += h;
                    let mut b = q.clone();
                    b[i] -= h;
                    let num = (ranking_loss(kind, &a, c, 1.0, Some(&w)).0 - ranking_loss(kind, &b, c, 1.0, Some(&w)).0)
                        / (2.0 * h);
                    // Skip points within h of a hinge kink.
                    if kind == LossKind::Hinge && (0..n).any(|p| p != c && (1.0 - (q[c] - q[p])).abs() < 1e-5) {
                        continue;
                    }
                    assert!((num - g[i]).abs() < 1e-6, "{kind} {i}: {num} vs {}", g[i]);
                }
            }
        }
    }

    #[test]
    fn listwise_is_nonnegative() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..200 {
            let n = rng.random_range(1..10);
            let q: Vec<f64> = (0..n).map(|_| rng.random_range(-50.0..50.0)).collect();
            let (l, _) = ranking_loss(LossKind::Listwise, &q, rng.random_range(0..n), 1.0, None);
            assert!(l >= 0.0);
        }
    }
}
