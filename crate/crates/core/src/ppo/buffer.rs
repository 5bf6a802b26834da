use crate::encoder::Observation;
use crate::engine::ActionMask;

/// `δ_t = r_t + γ V(s_{t+1}) (1 - done_t) - V(s_t)` and
/// `A_t = δ_t + γ λ (1 - done_t) A_{t+1}` over one actor's trajectory;
/// `returns = A + V`. `done_t` marks the last transition of an episode.
pub fn compute_gae(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    last_value: f64,
    gamma: f64,
    lambda: f64,
) -> (Vec<f64>, Vec<f64>) {
    let n = rewards.len();
    assert!(values.len() == n && dones.len() == n, "trajectory length mismatch");
    let mut adv = vec![0.0; n];
    let mut next_adv = 0.0;
    let mut next_value = last_value;
    for t in (0..n).rev() {
        let live = if dones[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + gamma * next_value * live - values[t];
        next_adv = delta + gamma * lambda * live * next_adv;
        adv[t] = next_adv;
        next_value = values[t];
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    (adv, returns)
}

/// Shifts to mean 0 and scales to unit (population) standard deviation.
pub fn normalize_advantages(adv: &mut [f64]) {
    if adv.is_empty() {
        return;
    }
    let n = adv.len() as f64;
    let mean = adv.iter().sum::<f64>() / n;
    let std = (adv.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n).sqrt();
    for a in adv {
        *a = (*a - mean) / (std + 1e-8);
    }
}

/// Transitions of one collection phase, stored time-major:
/// index `t * n_actors + actor`.
#[derive(Clone, Debug, Default)]
pub struct RolloutBuffer {
    pub n_steps: usize,
    pub n_actors: usize,
    pub observations: Vec<Observation>,
    pub actions: Vec<usize>,
    pub log_probs: Vec<f64>,
    pub values: Vec<f64>,
    pub rewards: Vec<f64>,
    pub dones: Vec<bool>,
    /// Whether the chosen action was a legal move.
    pub valid: Vec<bool>,
    /// Legal-move masks; filled only when sampling uses them.
    pub masks: Vec<ActionMask>,
    /// Total steps (valid and invalid) of the episode after this transition.
    pub episode_steps: Vec<u64>,
    pub entropies: Vec<f64>,
    /// Value estimate of each actor's state after the last step.
    pub bootstrap: Vec<f64>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

impl RolloutBuffer {
    pub fn new(n_steps: usize, n_actors: usize) -> Self {
        let cap = n_steps * n_actors;
        RolloutBuffer {
            n_steps,
            n_actors,
            observations: Vec::with_capacity(cap),
            actions: Vec::with_capacity(cap),
            log_probs: Vec::with_capacity(cap),
            values: Vec::with_capacity(cap),
            rewards: Vec::with_capacity(cap),
            dones: Vec::with_capacity(cap),
            valid: Vec::with_capacity(cap),
            masks: Vec::new(),
            episode_steps: Vec::with_capacity(cap),
            entropies: Vec::with_capacity(cap),
            bootstrap: Vec::new(),
            advantages: Vec::new(),
            returns: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.len() == self.n_steps * self.n_actors
    }

    /// Fills `advantages` (normalized over the whole buffer) and `returns`.
    pub fn finish(&mut self, gamma: f64, lambda: f64) {
        assert!(self.is_full() && self.bootstrap.len() == self.n_actors, "buffer not complete");
        let total = self.len();
        self.advantages = vec![0.0; total];
        self.returns = vec![0.0; total];
        for a in 0..self.n_actors {
            let idx: Vec<usize> = (0..self.n_steps).map(|t| t * self.n_actors + a).collect();
            let r: Vec<f64> = idx.iter().map(|&i| self.rewards[i]).collect();
            let v: Vec<f64> = idx.iter().map(|&i| self.values[i]).collect();
            let d: Vec<bool> = idx.iter().map(|&i| self.dones[i]).collect();
            let (adv, ret) = compute_gae(&r, &v, &d, self.bootstrap[a], gamma, lambda);
            for (k, &i) in idx.iter().enumerate() {
                self.advantages[i] = adv[k];
                self.returns[i] = ret[k];
            }
        }
        normalize_advantages(&mut self.advantages);
    }

    pub fn invalid_rate(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        self.valid.iter().filter(|&&v| !v).count() as f64 / self.len() as f64
    }

    pub fn mean_entropy(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        self.entropies.iter().sum::<f64>() / self.len() as f64
    }

    pub fn max_episode_steps(&self) -> u64 {
        self.episode_steps.iter().copied().max().unwrap_or(0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lambda_zero_gives_td_errors() {
        let r = [0.5, -0.1, 1.0, 0.2];
        let v = [0.3, 0.2, -0.4, 0.9];
        let d = [false, true, false, false];
        let (adv, ret) = compute_gae(&r, &v, &d, 0.7, 0.9, 0.0);
        let expected = [0.5 + 0.9 * 0.2 - 0.3, -0.1 - 0.2, 1.0 + 0.9 * 0.9 + 0.4, 0.2 + 0.9 * 0.7 - 0.9];
        for (a, e) in adv.iter().zip(expected) {
            assert!((a - e).abs() < 1e-12);
        }
        for i in 0..4 {
            assert!((ret[i] - adv[i] - v[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn three_step_episode_by_hand() {
        // γ = 0.9, λ = 0.8, γλ = 0.72
        let r = [1.0, 0.0, 2.0];
        let v = [0.5, 1.0, 1.5];
        let d = [false, false, true];
        let (adv, _) = compute_gae(&r, &v, &d, 123.0, 0.9, 0.8);
        let d2: f64 = 2.0 - 1.5;
        let d1: f64 = 0.0 + 0.9 * 1.5 - 1.0;
        let d0: f64 = 1.0 + 0.9 * 1.0 - 0.5;
        let a2 = d2;
        let a1 = d1 + 0.72 * a2;
        let a0 = d0 + 0.72 * a1;
        assert!((adv[2] - a2).abs() < 1e-12);
        assert!((adv[1] - a1).abs() < 1e-12);
        assert!((adv[0] - a0).abs() < 1e-12);
    }

    #[test]
    fn zero_rewards_and_values_give_zero_advantage() {
        let (adv, ret) = compute_gae(&[0.0; 5], &[0.0; 5], &[false, false, true, false, false], 0.0, 0.99, 0.95);
        assert!(adv.iter().chain(&ret).all(|&x| x == 0.0));
    }

    #[test]
    fn normalization() {
        let mut a = vec![1.0, 2.0, 3.0, 4.0];
        normalize_advantages(&mut a);
        let mean: f64 = a.iter().sum::<f64>() / 4.0;
        let var: f64 = a.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 4.0;
        assert!(mean.abs() < 1e-12);
        assert!((var - 1.0).abs() < 1e-6);
        let mut z = vec![0.0; 3];
        normalize_advantages(&mut z);
        assert_eq!(z, vec![0.0; 3]);
    }
}
