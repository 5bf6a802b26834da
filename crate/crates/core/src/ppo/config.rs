use crate::engine::TRAIN_LEVELS;
use crate::nn::AdamConfig;
use crate::policy::MaskMode;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

use super::PpoError;

/// Training configuration, read from TOML. Every key is optional; missing
/// keys take the defaults below.
///
/// ```toml
/// n_steps = 256          # steps per actor per update
/// n_minibatches = 64
/// n_actors = 8
/// epochs = 4
/// clip_range = 0.2
/// value_coef = 0.5
/// entropy_coef = 0.01
/// gamma = 0.99
/// gae_lambda = 0.95
/// learning_rate = 2.5e-4
/// adam_epsilon = 1e-5
/// max_grad_norm = 0.5    # 0 disables clipping
/// color_shuffle = true
/// reset_after = 100      # total-step cap per episode, 0 disables
/// mask_mode = "none"     # none | hard | soft | soft-epsilon
/// total_steps = 1000000
/// seed = 0
/// train_levels = [1, 3, 5, 7, 9]
/// # level_dir = "levels"  # extra level files, overriding bundled ids
/// checkpoint_every = 10  # updates, 0 = final checkpoint only
/// halt_on_stuck = false
/// stuck_entropy = 0.1
/// stuck_invalid_rate = 0.5
/// ```
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PpoConfig {
    pub n_steps: usize,
    pub n_minibatches: usize,
    pub n_actors: usize,
    pub epochs: usize,
    pub clip_range: f64,
    pub value_coef: f64,
    pub entropy_coef: f64,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub learning_rate: f64,
    pub adam_epsilon: f64,
    pub max_grad_norm: f64,
    pub color_shuffle: bool,
    pub reset_after: u64,
    pub mask_mode: MaskMode,
    pub total_steps: u64,
    pub seed: u64,
    pub train_levels: Vec<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub level_dir: Option<PathBuf>,
    pub checkpoint_every: usize,
    pub halt_on_stuck: bool,
    pub stuck_entropy: f64,
    pub stuck_invalid_rate: f64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        PpoConfig {
            n_steps: 256,
            n_minibatches: 64,
            n_actors: 8,
            epochs: 4,
            clip_range: 0.2,
            value_coef: 0.5,
            entropy_coef: 0.01,
            gamma: 0.99,
            gae_lambda: 0.95,
            learning_rate: 2.5e-4,
            adam_epsilon: 1e-5,
            max_grad_norm: 0.5,
            color_shuffle: true,
            reset_after: 100,
            mask_mode: MaskMode::None,
            total_steps: 1_000_000,
            seed: 0,
            train_levels: TRAIN_LEVELS.to_vec(),
            level_dir: None,
            checkpoint_every: 10,
            halt_on_stuck: false,
            stuck_entropy: 0.1,
            stuck_invalid_rate: 0.5,
        }
    }
}

fn invalid(msg: impl Into<String>) -> PpoError {
    PpoError::Config(msg.into())
}

impl PpoConfig {
    pub fn from_toml(text: &str) -> Result<Self, PpoError> {
        let cfg: PpoConfig = toml::from_str(text).map_err(|e| invalid(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, PpoError> {
        let text = std::fs::read_to_string(path).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        // Relative level directories are taken from the config's location.
        if let (Some(dir), Some(parent)) = (&cfg.level_dir, path.parent()) {
            if dir.is_relative() {
                cfg.level_dir = Some(parent.join(dir));
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    // negated comparisons so that NaN is rejected too
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<(), PpoError> {
        if self.n_steps == 0 || self.n_actors == 0 || self.n_minibatches == 0 || self.epochs == 0 {
            return Err(invalid("n_steps, n_actors, n_minibatches and epochs must be positive"));
        }
        if !(self.n_steps * self.n_actors).is_multiple_of(self.n_minibatches) {
            return Err(invalid(format!(
                "n_steps * n_actors = {} is not divisible by n_minibatches = {}",
                self.n_steps * self.n_actors,
                self.n_minibatches
            )));
        }
        if !(self.entropy_coef >= 0.0) {
            return Err(invalid("entropy_coef must be >= 0"));
        }
        if !(self.clip_range > 0.0) || !(self.value_coef >= 0.0) || !(self.max_grad_norm >= 0.0) {
            return Err(invalid("clip_range must be > 0; value_coef and max_grad_norm >= 0"));
        }
        if !(0.0..=1.0).contains(&self.gamma) || !(0.0..=1.0).contains(&self.gae_lambda) {
            return Err(invalid("gamma and gae_lambda must lie in [0, 1]"));
        }
        if !(self.learning_rate > 0.0) || !(self.adam_epsilon > 0.0) {
            return Err(invalid("learning_rate and adam_epsilon must be > 0"));
        }
        if self.train_levels.is_empty() {
            return Err(invalid("train_levels is empty"));
        }
        Ok(())
    }

    pub fn batch_size(&self) -> usize {
        self.n_steps * self.n_actors
    }

    pub fn minibatch_size(&self) -> usize {
        self.batch_size() / self.n_minibatches
    }

    /// Updates needed to cover `total_steps`, rounding up.
    pub fn n_updates(&self) -> u64 {
        self.total_steps.div_ceil(self.batch_size() as u64)
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig { learning_rate: self.learning_rate, epsilon: self.adam_epsilon, ..AdamConfig::default() }
    }

    pub fn reset_cap(&self) -> Option<u64> {
        (self.reset_after > 0).then_some(self.reset_after)
    }

    pub fn observation_channels(&self) -> usize {
        crate::encoder::channels(self.mask_mode.mask_in_observation())
    }
}
