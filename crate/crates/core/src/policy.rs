//! Categorical policy over board actions: masking, Gumbel-max sampling,
//! log-probabilities, entropy and their gradients.

use crate::scalar::Scalar;
use rand::distributions::Open01;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

/// Floor added to masked probabilities in [`MaskMode::SoftEpsilon`].
pub const SOFT_EPSILON: f64 = 1e-8;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MaskMode {
    /// No mask anywhere.
    #[default]
    None,
    /// Invalid actions get logit `-inf`.
    Hard,
    /// Mask is appended to the observation as an extra plane; logits untouched.
    Soft,
    /// Probabilities become `mask * softmax(logits) + eps`, renormalised.
    SoftEpsilon,
}

impl MaskMode {
    /// Whether observations carry the mask plane.
    pub fn mask_in_observation(self) -> bool {
        self == MaskMode::Soft
    }

    /// Whether sampling needs the valid-action mask.
    pub fn masks_logits(self) -> bool {
        matches!(self, MaskMode::Hard | MaskMode::SoftEpsilon)
    }
}

impl fmt::Display for MaskMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MaskMode::None => "none",
            MaskMode::Hard => "hard",
            MaskMode::Soft => "soft",
            MaskMode::SoftEpsilon => "soft-epsilon",
        })
    }
}

impl FromStr for MaskMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "none" => Ok(MaskMode::None),
            "hard" => Ok(MaskMode::Hard),
            "soft" => Ok(MaskMode::Soft),
            "soft-epsilon" => Ok(MaskMode::SoftEpsilon),
            other => Err(format!("unknown mask mode `{other}` (none, hard, soft, soft-epsilon)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum PolicyError {
    #[error("every action is masked out; no action can be sampled")]
    MaskedAllActions,
    #[error("logit {0} is not finite")]
    NonFiniteLogit(usize),
    #[error("action {0} has zero probability under the mask")]
    MaskedAction(usize),
    #[error("action {index} out of range for {n} actions")]
    ActionOutOfRange { index: usize, n: usize },
    #[error("mask has {mask} entries but there are {logits} logits")]
    LengthMismatch { logits: usize, mask: usize },
}

/// `logits + (0 | -inf)`; the flag is true when nothing survives.
pub fn apply_hard_mask<T: Scalar>(logits: &[T], mask: &[bool]) -> (Vec<T>, bool) {
    let out: Vec<T> = logits
        .iter()
        .zip(mask)
        .map(|(&l, &m)| if m { l } else { T::neg_infinity() })
        .collect();
    let degenerate = !mask.iter().any(|&m| m);
    (out, degenerate)
}

/// Numerically stable `log softmax`; entries at `-inf` stay `-inf`.
fn log_softmax<T: Scalar>(x: &[T]) -> Vec<T> {
    let max = x.iter().copied().fold(T::neg_infinity(), T::max);
    let lse = max + x.iter().map(|&v| (v - max).exp()).sum::<T>().ln();
    x.iter().map(|&v| v - lse).collect()
}

/// Categorical distribution over actions after masking.
#[derive(Clone, Debug)]
pub struct ActionDistribution<T> {
    mode: MaskMode,
    mask: Option<Vec<bool>>,
    /// Softmax of the raw logits; only kept for the epsilon-mask chain rule.
    raw_probs: Option<Vec<T>>,
    effective: Vec<T>,
    log_probs: Vec<T>,
    degenerate: bool,
}

impl<T: Scalar> ActionDistribution<T> {
    /// `mask` is required for [`MaskMode::Hard`] and [`MaskMode::SoftEpsilon`]
    /// and ignored otherwise.
    pub fn new(logits: &[T], mode: MaskMode, mask: Option<&[bool]>) -> Result<Self, PolicyError> {
        if let Some(i) = logits.iter().position(|v| !v.is_finite()) {
            return Err(PolicyError::NonFiniteLogit(i));
        }
        let mask = if mode.masks_logits() {
            let m = mask.ok_or(PolicyError::LengthMismatch { logits: logits.len(), mask: 0 })?;
            if m.len() != logits.len() {
                return Err(PolicyError::LengthMismatch { logits: logits.len(), mask: m.len() });
            }
            Some(m.to_vec())
        } else {
            None
        };
        let (effective, degenerate, raw_probs) = match (mode, &mask) {
            (MaskMode::Hard, Some(m)) => {
                let (e, d) = apply_hard_mask(logits, m);
                (e, d, None)
            }
            (MaskMode::SoftEpsilon, Some(m)) => {
                let eps = T::from_f64_lossy(SOFT_EPSILON);
                let p: Vec<T> = log_softmax(logits).into_iter().map(T::exp).collect();
                let e = p
                    .iter()
                    .zip(m)
                    .map(|(&p, &m)| (if m { p } else { T::zero() } + eps).ln())
                    .collect();
                (e, false, Some(p))
            }
            _ => (logits.to_vec(), false, None),
        };
        let log_probs = if degenerate { effective.clone() } else { log_softmax(&effective) };
        Ok(ActionDistribution { mode, mask, raw_probs, effective, log_probs, degenerate })
    }

    /// Unmasked distribution, e.g. for a uniform random baseline.
    pub fn unmasked(logits: &[T]) -> Result<Self, PolicyError> {
        Self::new(logits, MaskMode::None, None)
    }

    pub fn len(&self) -> usize {
        self.effective.len()
    }

    pub fn is_empty(&self) -> bool {
        self.effective.is_empty()
    }

    pub fn mode(&self) -> MaskMode {
        self.mode
    }

    /// True when a hard mask removed every action.
    pub fn is_degenerate(&self) -> bool {
        self.degenerate
    }

    pub fn effective_logits(&self) -> &[T] {
        &self.effective
    }

    pub fn log_probs(&self) -> Result<&[T], PolicyError> {
        if self.degenerate {
            return Err(PolicyError::MaskedAllActions);
        }
        Ok(&self.log_probs)
    }

    pub fn probs(&self) -> Result<Vec<T>, PolicyError> {
        Ok(self.log_probs()?.iter().map(|v| v.exp()).collect())
    }

    fn check_index(&self, action: usize) -> Result<(), PolicyError> {
        if action >= self.len() {
            return Err(PolicyError::ActionOutOfRange { index: action, n: self.len() });
        }
        Ok(())
    }

    pub fn log_prob(&self, action: usize) -> Result<T, PolicyError> {
        self.check_index(action)?;
        let lp = self.log_probs()?[action];
        if lp == T::neg_infinity() {
            return Err(PolicyError::MaskedAction(action));
        }
        Ok(lp)
    }

    pub fn entropy(&self) -> Result<T, PolicyError> {
        let lp = self.log_probs()?;
        let s = lp
            .iter()
            .filter(|v| v.is_finite())
            .map(|&l| -(l.exp() * l))
            .sum::<T>();
        Ok(s.max(T::zero()))
    }

    /// One Gumbel perturbation per action, always drawing `len()` uniforms.
    fn perturbed(&self, rng: &mut impl Rng) -> Result<Vec<(usize, T)>, PolicyError> {
        if self.degenerate {
            return Err(PolicyError::MaskedAllActions);
        }
        let mut out = Vec::with_capacity(self.len());
        for (i, &l) in self.effective.iter().enumerate() {
            let u: f64 = rng.sample(Open01);
            let g = T::from_f64_lossy(-(-u.ln()).ln());
            if l.is_finite() {
                out.push((i, l + g));
            }
        }
        if out.is_empty() {
            return Err(PolicyError::MaskedAllActions);
        }
        Ok(out)
    }

    /// `argmax(logits + g)` with `g = -ln(-ln u)`, `u` uniform on (0, 1).
    pub fn sample(&self, rng: &mut impl Rng) -> Result<usize, PolicyError> {
        let p = self.perturbed(rng)?;
        let mut best = p[0];
        for &(i, v) in &p[1..] {
            if v > best.1 {
                best = (i, v);
            }
        }
        Ok(best.0)
    }

    /// Actions in decreasing perturbed-logit order: a sample without
    /// replacement of every action with nonzero probability.
    pub fn ranking(&self, rng: &mut impl Rng) -> Result<Vec<usize>, PolicyError> {
        let mut p = self.perturbed(rng)?;
        p.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(std::cmp::Ordering::Equal));
        Ok(p.into_iter().map(|(i, _)| i).collect())
    }

    /// Gradient of `log_prob(action)` with respect to the effective logits.
    pub fn grad_log_prob(&self, action: usize) -> Result<Vec<T>, PolicyError> {
        self.log_prob(action)?;
        let mut g: Vec<T> = self.log_probs.iter().map(|&l| -l.exp()).collect();
        g[action] += T::one();
        Ok(g)
    }

    /// Gradient of `entropy()` with respect to the effective logits.
    pub fn grad_entropy(&self) -> Result<Vec<T>, PolicyError> {
        let s = self.entropy()?;
        Ok(self
            .log_probs()?
            .iter()
            .map(|&l| if l.is_finite() { -l.exp() * (l + s) } else { T::zero() })
            .collect())
    }

    /// Maps a gradient on the effective logits back to the raw logits.
    pub fn backprop_to_logits(&self, grad_effective: &[T]) -> Vec<T> {
        match (&self.raw_probs, &self.mask) {
            (Some(p), Some(mask)) => {
                // e_k = ln(m_k p_k + eps); de_k/dl_j = m_k p_k (δ_kj - p_j) / q_k
                let eps = T::from_f64_lossy(SOFT_EPSILON);
                let w: Vec<T> = p
                    .iter()
                    .zip(mask)
                    .zip(grad_effective)
                    .map(|((&p, &m), &g)| if m { g * p / (p + eps) } else { T::zero() })
                    .collect();
                let total = w.iter().copied().sum::<T>();
                w.iter().zip(p).map(|(&w, &p)| w - p * total).collect()
            }
            _ => grad_effective
                .iter()
                .zip(&self.effective)
                .map(|(&g, &e)| if e.is_finite() { g } else { T::zero() })
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(2024)
    }

    #[test]
    fn single_valid_action_is_always_sampled() {
        let mut logits = vec![0.0f64; 117];
        logits[40] = 30.0;
        let mut mask = [false; 117];
        mask[7] = true;
        let d = ActionDistribution::new(&logits, MaskMode::Hard, Some(&mask)).unwrap();
        let mut r = rng();
        for _ in 0..1000 {
            assert_eq!(d.sample(&mut r).unwrap(), 7);
        }
        assert_eq!(d.log_prob(7).unwrap(), 0.0);
    }

    #[test]
    fn hard_mask_identity_and_degenerate() {
        let logits = [0.5f32, -1.0, 2.0];
        let (out, deg) = apply_hard_mask(&logits, &[true; 3]);
        assert_eq!(out, logits.to_vec());
        assert!(!deg);
        let (out, deg) = apply_hard_mask(&logits, &[false; 3]);
        assert!(out.iter().all(|&v| v == f32::NEG_INFINITY));
        assert!(deg);
        let d = ActionDistribution::new(&logits, MaskMode::Hard, Some(&[false; 3])).unwrap();
        assert!(d.is_degenerate());
        assert_eq!(d.sample(&mut rng()), Err(PolicyError::MaskedAllActions));
        assert_eq!(d.log_prob(0), Err(PolicyError::MaskedAllActions));
        assert_eq!(d.entropy(), Err(PolicyError::MaskedAllActions));
        assert_eq!(d.ranking(&mut rng()), Err(PolicyError::MaskedAllActions));
    }

    #[test]
    fn masked_entry_has_exactly_zero_probability() {
        let logits = [1.0f64, 2.0, 3.0];
        let d = ActionDistribution::new(&logits, MaskMode::Hard, Some(&[true, false, true])).unwrap();
        let p = d.probs().unwrap();
        assert_eq!(p[1], 0.0);
        let z = 1f64.exp() + 3f64.exp();
        assert!((p[0] - 1f64.exp() / z).abs() < 1e-15);
        assert!((p[2] - 3f64.exp() / z).abs() < 1e-15);
        assert_eq!(d.log_prob(1), Err(PolicyError::MaskedAction(1)));
    }

    #[test]
    fn non_finite_logits_are_rejected() {
        let logits = [0.0f64, f64::NAN];
        assert_eq!(ActionDistribution::unmasked(&logits).unwrap_err(), PolicyError::NonFiniteLogit(1));
    }

    #[test]
    fn log_prob_examples() {
        let d = ActionDistribution::unmasked(&[0.0f64; 117]).unwrap();
        assert!((d.log_prob(5).unwrap() - (1.0f64 / 117.0).ln()).abs() < 1e-12);

        let mut logits = vec![0.0f64; 117];
        logits[0] = 1.0;
        let d = ActionDistribution::unmasked(&logits).unwrap();
        let z = 1f64.exp() + 116.0;
        assert!((d.log_prob(0).unwrap() - (1.0 - z.ln())).abs() < 1e-12);
        assert!((d.log_prob(3).unwrap() + z.ln()).abs() < 1e-12);

        let shifted: Vec<f64> = logits.iter().map(|v| v + 1234.5).collect();
        let d2 = ActionDistribution::unmasked(&shifted).unwrap();
        assert!((d2.log_prob(0).unwrap() - d.log_prob(0).unwrap()).abs() < 1e-6);
    }

    #[test]
    fn entropy_examples() {
        let d = ActionDistribution::unmasked(&[0.0f64; 117]).unwrap();
        assert!((d.entropy().unwrap() - 117f64.ln()).abs() < 1e-12);
        assert!((117f64.ln() - 4.762).abs() < 1e-3);

        let mut mask = [false; 117];
        mask[3] = true;
        let d = ActionDistribution::new(&[0.0f64; 117], MaskMode::Hard, Some(&mask)).unwrap();
        assert_eq!(d.entropy().unwrap(), 0.0);

        let mut r = rng();
        let logits: Vec<f64> = (0..117).map(|_| r.gen_range(-3.0..3.0)).collect();
        let z: f64 = logits.iter().map(|l| l.exp()).sum();
        let oracle: f64 = logits.iter().map(|l| l.exp() / z).map(|p| -p * p.ln()).sum();
        let d = ActionDistribution::unmasked(&logits).unwrap();
        assert!((d.entropy().unwrap() - oracle).abs() < 1e-6);
    }

    #[test]
    fn softmax_sums_to_one_in_single_precision() {
        let mut r = rng();
        let logits: Vec<f32> = (0..117).map(|_| r.gen_range(-10.0..10.0)).collect();
        let d = ActionDistribution::unmasked(&logits).unwrap();
        let s: f32 = d.probs().unwrap().iter().sum();
        assert!((s - 1.0).abs() < 1e-6);
    }

    #[test]
    fn gumbel_frequencies_match_softmax() {
        let logits = [0.3f64, -1.2, 1.5, 0.0, -0.4];
        let d = ActionDistribution::unmasked(&logits).unwrap();
        let p = d.probs().unwrap();
        let mut counts = [0usize; 5];
        let mut r = rng();
        let n = 100_000;
        for _ in 0..n {
            counts[d.sample(&mut r).unwrap()] += 1;
        }
        let l1: f64 = counts.iter().zip(&p).map(|(&c, &p)| (c as f64 / n as f64 - p).abs()).sum();
        assert!(l1 < 0.02, "L1 {l1}");
    }

    #[test]
    fn hard_mask_sampling_is_uniform_over_survivors() {
        let mut mask = [false; 117];
        let keep = [2usize, 17, 50, 51, 99, 116];
        for &k in &keep {
            mask[k] = true;
        }
        let d = ActionDistribution::new(&[0.0f32; 117], MaskMode::Hard, Some(&mask)).unwrap();
        let mut counts = [0usize; 117];
        let mut r = rng();
        let n = 60_000;
        for _ in 0..n {
            counts[d.sample(&mut r).unwrap()] += 1;
        }
        assert_eq!(keep.iter().map(|&k| counts[k]).sum::<usize>(), n);
        let e = n as f64 / keep.len() as f64;
        let chi2: f64 = keep.iter().map(|&k| (counts[k] as f64 - e).powi(2) / e).sum();
        // 5 degrees of freedom, upper 1% point.
        assert!(chi2 < 15.086, "chi2 {chi2}");
    }

    #[test]
    fn ranking_lists_each_supported_action_once() {
        let mut mask = [true; 10];
        mask[4] = false;
        let d = ActionDistribution::new(&[0.1f64; 10], MaskMode::Hard, Some(&mask)).unwrap();
        let mut order = d.ranking(&mut rng()).unwrap();
        assert_eq!(order.len(), 9);
        order.sort_unstable();
        assert_eq!(order, vec![0, 1, 2, 3, 5, 6, 7, 8, 9]);
    }

    #[test]
    fn ranking_first_element_is_the_sample() {
        let logits = [0.3f64, -1.2, 1.5, 0.0];
        let d = ActionDistribution::unmasked(&logits).unwrap();
        for seed in 0..50 {
            let a = d.sample(&mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            let r = d.ranking(&mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            assert_eq!(a, r[0]);
        }
    }

    #[test]
    fn soft_epsilon_keeps_masked_actions_barely_possible() {
        let mut mask = [false; 117];
        mask[0] = true;
        mask[1] = true;
        let d = ActionDistribution::new(&[0.0f64; 117], MaskMode::SoftEpsilon, Some(&mask)).unwrap();
        let p = d.probs().unwrap();
        let q = 1.0 / 117.0 + SOFT_EPSILON;
        let z = 2.0 * q + 115.0 * SOFT_EPSILON;
        assert!((p[0] - q / z).abs() < 1e-12);
        assert!((p[5] - SOFT_EPSILON / z).abs() < 1e-18);
        assert!(!d.is_degenerate());
        let none = ActionDistribution::new(&[0.0f64; 117], MaskMode::SoftEpsilon, Some(&[false; 117])).unwrap();
        assert!((none.probs().unwrap()[3] - 1.0 / 117.0).abs() < 1e-12);
    }

    fn numeric_grad(f: impl Fn(&[f64]) -> f64, x: &[f64]) -> Vec<f64> {
        let h = 1e-5;
        (0..x.len())
            .map(|i| {
                let mut a = x.to_vec();
                let mut b = x.to_vec();
                a[i] += h;
                b[i] -= h;
                (f(&a) - f(&b)) / (2.0 * h)
            })
            .collect()
    }

    fn assert_close(a: &[f64], b: &[f64]) {
        for (x, y) in a.iter().zip(b) {
            let err = (x - y).abs();
            assert!(err < 1e-6 || err / x.abs().max(y.abs()) < 1e-4, "{x} vs {y}");
        }
    }

    #[test]
    fn gradients_match_finite_differences_in_every_mode() {
        let mut r = rng();
        let logits: Vec<f64> = (0..9).map(|_| r.gen_range(-2.0..2.0)).collect();
        let mask = [true, false, true, true, false, true, true, true, false];
        for mode in [MaskMode::None, MaskMode::Hard, MaskMode::Soft, MaskMode::SoftEpsilon] {
            let dist = |l: &[f64]| ActionDistribution::new(l, mode, Some(&mask)).unwrap();
            let d = dist(&logits);
            let action = 5;
            let analytic = d.backprop_to_logits(&d.grad_log_prob(action).unwrap());
            let numeric = numeric_grad(|l| dist(l).log_prob(action).unwrap(), &logits);
            assert_close(&analytic, &numeric);
            let analytic = d.backprop_to_logits(&d.grad_entropy().unwrap());
            let numeric = numeric_grad(|l| dist(l).entropy().unwrap(), &logits);
            assert_close(&analytic, &numeric);
        }
    }

    #[test]
    fn mask_mode_text_round_trip() {
        for m in [MaskMode::None, MaskMode::Hard, MaskMode::Soft, MaskMode::SoftEpsilon] {
            assert_eq!(m.to_string().parse::<MaskMode>().unwrap(), m);
        }
        assert!("bogus".parse::<MaskMode>().is_err());
    }
}
