use super::PpoError;
use crate::nn::{Input, ParamSet, PolicyParams};
use crate::policy::{ActionDistribution, MaskMode};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossCoefficients {
    pub clip_range: f64,
    pub value_coef: f64,
    pub entropy_coef: f64,
    pub mask_mode: MaskMode,
}

impl From<&super::PpoConfig> for LossCoefficients {
    fn from(c: &super::PpoConfig) -> Self {
        LossCoefficients {
            clip_range: c.clip_range,
            value_coef: c.value_coef,
            entropy_coef: c.entropy_coef,
            mask_mode: c.mask_mode,
        }
    }
}

/// Training samples for one gradient step.
#[derive(Clone, Debug)]
pub struct Minibatch<T> {
    pub input: Input<T>,
    pub actions: Vec<usize>,
    pub old_log_probs: Vec<T>,
    pub advantages: Vec<T>,
    pub returns: Vec<T>,
    /// Legal-move masks, one per sample; empty unless the mask mode needs them.
    pub masks: Vec<Vec<bool>>,
}

impl<T> Minibatch<T> {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

/// Loss value and its parts, averaged over the minibatch.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossStats {
    /// `-L_CLIP + c1 L_VF - c2 S`
    pub total: f64,
    /// `-L_CLIP`
    pub policy: f64,
    /// `L_VF`
    pub value: f64,
    /// `S`
    pub entropy: f64,
    pub approx_kl: f64,
    pub clip_fraction: f64,
}

/// Evaluates the clipped-surrogate loss without gradients.
pub fn ppo_loss<T: Scalar>(
    params: &PolicyParams<T>,
    batch: &Minibatch<T>,
    coef: &LossCoefficients,
) -> Result<LossStats, PpoError> {
    evaluate(params, batch, coef, false).map(|(s, _)| s)
}

/// Loss and the gradient of `total` with respect to every parameter.
pub fn ppo_loss_and_grad<T: Scalar>(
    params: &PolicyParams<T>,
    batch: &Minibatch<T>,
    coef: &LossCoefficients,
) -> Result<(LossStats, ParamSet<T>), PpoError> {
    evaluate(params, batch, coef, true).map(|(s, g)| (s, g.expect("gradients requested")))
}

fn evaluate<T: Scalar>(
    params: &PolicyParams<T>,
    batch: &Minibatch<T>,
    coef: &LossCoefficients,
    want_grad: bool,
) -> Result<(LossStats, Option<ParamSet<T>>), PpoError> {
    let n = batch.len();
    if n == 0 || batch.input.batch != n {
        return Err(PpoError::Config(format!("minibatch of {n} samples with {} inputs", batch.input.batch)));
    }
    let (out, cache) = params.forward_cached(&batch.input)?;
    let na = out.n_actions;
    let inv_n = T::one() / T::from_usize(n).expect("batch size");
    let eps = T::from_f64_lossy(coef.clip_range);
    let (lo, hi) = (T::one() - eps, T::one() + eps);
    let c1 = T::from_f64_lossy(coef.value_coef);
    let c2 = T::from_f64_lossy(coef.entropy_coef);

    let mut d_logits = vec![T::zero(); if want_grad { n * na } else { 0 }];
    let mut d_values = vec![T::zero(); if want_grad { n } else { 0 }];
    let (mut surrogate, mut value_sq, mut entropy, mut kl) = (T::zero(), T::zero(), T::zero(), T::zero());
    let mut clipped = 0usize;
    for i in 0..n {
        let mask = if coef.mask_mode.masks_logits() { Some(&batch.masks[i][..]) } else { None };
        let dist = ActionDistribution::new(out.logits_row(i), coef.mask_mode, mask)?;
        let lp = dist.log_prob(batch.actions[i])?;
        let ent = dist.entropy()?;
        let ratio = (lp - batch.old_log_probs[i]).exp();
        let adv = batch.advantages[i];
        let unclipped = ratio * adv;
        let clipped_term = ratio.max(lo).min(hi) * adv;
        let use_unclipped = unclipped <= clipped_term;
        surrogate += if use_unclipped { unclipped } else { clipped_term };
        if (ratio - T::one()).abs() > eps {
            clipped += 1;
        }
        let diff = out.values[i] - batch.returns[i];
        value_sq += diff * diff;
        entropy += ent;
        kl += batch.old_log_probs[i] - lp;

        if want_grad {
            // d total / d log_prob and d total / d entropy for this sample
            let g_lp = if use_unclipped { -unclipped * inv_n } else { T::zero() };
            let g_ent = -c2 * inv_n;
            let mut g_eff = dist.grad_log_prob(batch.actions[i])?;
            for v in &mut g_eff {
                *v *= g_lp;
            }
            if coef.entropy_coef != 0.0 {
                for (g, e) in g_eff.iter_mut().zip(dist.grad_entropy()?) {
                    *g += g_ent * e;
                }
            }
            d_logits[i * na..(i + 1) * na].copy_from_slice(&dist.backprop_to_logits(&g_eff));
            d_values[i] = (c1 + c1) * diff * inv_n;
        }
    }
    let policy = -surrogate * inv_n;
    let value = value_sq * inv_n;
    let ent = entropy * inv_n;
    let mut total = policy + c1 * value;
    if coef.entropy_coef != 0.0 {
        total -= c2 * ent;
    }
    let stats = LossStats {
        total: total.to_f64_lossy(),
        policy: policy.to_f64_lossy(),
        value: value.to_f64_lossy(),
        entropy: ent.to_f64_lossy(),
        approx_kl: (kl * inv_n).to_f64_lossy(),
        clip_fraction: clipped as f64 / n as f64,
    };
    if !stats.total.is_finite() {
        return Err(PpoError::NonFiniteLoss { update: 0, detail: format!("{stats:?}") });
    }
    let grads = if want_grad { Some(params.backward(&cache, &d_logits, &d_values)?) } else { None };
    Ok((stats, grads))
}
