use super::buffer::RolloutBuffer;
use super::config::PpoConfig;
use super::log::{append_timing, LogRow, TrainLog};
use super::loss::{ppo_loss_and_grad, LossCoefficients, LossStats, Minibatch};
use super::PpoError;
use crate::encoder::{encode, sample_permutation, ColorPermutation, Observation};
use crate::engine::{Board, LevelPack, LevelSpec, Status};
use crate::nn::{Architecture, Checkpoint, Input, NnError, PolicyParams};
use crate::policy::ActionDistribution;
use crate::seed;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;
use std::path::{Path, PathBuf};
use std::time::Instant;

const TAG_INIT: u64 = 1;
const TAG_ACTOR: u64 = 2;
const TAG_SHUFFLE: u64 = 3;
const ROLLING_EPISODES: usize = 100;

pub const LOG_FILE: &str = "train_log.csv";
pub const TIMING_FILE: &str = "timing.csv";
pub const FINAL_CHECKPOINT: &str = "final.ckpt";

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Actor {
    board: Board,
    perm: ColorPermutation,
    rng: ChaCha8Rng,
    episode_reward: f64,
}

impl Actor {
    fn start(mut rng: ChaCha8Rng, levels: &[LevelSpec], shuffle: bool) -> Result<Self, PpoError> {
        let spec = &levels[rng.gen_range(0..levels.len())];
        let board = Board::load(spec, rng.gen()).map_err(|e| PpoError::Levels(e.to_string()))?;
        let perm = sample_permutation(&mut rng, shuffle);
        Ok(Actor { board, perm, rng, episode_reward: 0.0 })
    }

    fn restart(&mut self, levels: &[LevelSpec], shuffle: bool) -> Result<(), PpoError> {
        let rng = self.rng.clone();
        *self = Actor::start(rng, levels, shuffle)?;
        Ok(())
    }
}

/// Everything besides the network needed to continue a run exactly.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainerState {
    pub update: u64,
    pub global_step: u64,
    pub episodes: u64,
    actors: Vec<Actor>,
    shuffle_rng: ChaCha8Rng,
    recent_rewards: VecDeque<f64>,
    pub halted: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeRecord {
    pub level_id: u32,
    pub reward: f64,
    /// Total steps, valid and invalid.
    pub length: u64,
    pub completed: bool,
}

/// Result of one collect-and-optimize cycle.
#[derive(Debug)]
pub struct UpdateOutcome {
    pub row: LogRow,
    pub buffer: RolloutBuffer,
    pub episodes: Vec<EpisodeRecord>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainSummary {
    pub updates: u64,
    pub global_step: u64,
    pub halted: Option<String>,
    pub final_checkpoint: Option<PathBuf>,
}

pub struct Trainer {
    cfg: PpoConfig,
    levels: Vec<LevelSpec>,
    params: PolicyParams<f32>,
    state: TrainerState,
    out_dir: Option<PathBuf>,
    log: TrainLog,
}

fn training_levels(cfg: &PpoConfig) -> Result<Vec<LevelSpec>, PpoError> {
    let pack = LevelPack::with_dir(cfg.level_dir.as_deref()).map_err(|e| PpoError::Levels(e.to_string()))?;
    cfg.train_levels
        .iter()
        .map(|&id| pack.get(id).cloned().map_err(|e| PpoError::Levels(e.to_string())))
        .collect()
}

impl Trainer {
    /// Fresh run. With `out_dir`, the log, config copy and checkpoints are
    /// written there.
    pub fn new(cfg: PpoConfig, out_dir: Option<&Path>) -> Result<Self, PpoError> {
        cfg.validate()?;
        let levels = training_levels(&cfg)?;
        let arch = Architecture::standard(cfg.observation_channels());
        let params = PolicyParams::init(arch, seed::derive(cfg.seed, &[TAG_INIT]))?;
        let actors = (0..cfg.n_actors)
            .map(|a| Actor::start(seed::rng(cfg.seed, &[TAG_ACTOR, a as u64]), &levels, cfg.color_shuffle))
            .collect::<Result<Vec<_>, _>>()?;
        let state = TrainerState {
            update: 0,
            global_step: 0,
            episodes: 0,
            actors,
            shuffle_rng: seed::rng(cfg.seed, &[TAG_SHUFFLE]),
            recent_rewards: VecDeque::new(),
            halted: None,
        };
        let log = match out_dir {
            Some(dir) => {
                std::fs::create_dir_all(dir.join("checkpoints"))?;
                std::fs::write(dir.join("config.toml"), cfg.to_toml())?;
                let timing = dir.join(TIMING_FILE);
                if timing.exists() {
                    std::fs::remove_file(timing)?;
                }
                TrainLog::create(&dir.join(LOG_FILE), Vec::new())?
            }
            None => TrainLog::in_memory(),
        };
        Ok(Trainer { cfg, levels, params, state, out_dir: out_dir.map(Path::to_path_buf), log })
    }

    /// Continues from a checkpoint written by [`Trainer::save_checkpoint`].
    /// Log rows after the checkpoint's update are discarded.
    pub fn resume(checkpoint: &Path, out_dir: Option<&Path>, total_steps: Option<u64>) -> Result<Self, PpoError> {
        let ck = Checkpoint::<f32>::load(checkpoint)?;
        let cfg_text = ck.section_str("config").ok_or_else(|| PpoError::State("checkpoint has no config".into()))?;
        let mut cfg = PpoConfig::from_toml(cfg_text)?;
        if let Some(t) = total_steps {
            cfg.total_steps = t;
        }
        let state_text =
            ck.section_str("trainer").ok_or_else(|| PpoError::State("checkpoint has no trainer state".into()))?;
        let state: TrainerState = serde_json::from_str(state_text).map_err(|e| PpoError::State(e.to_string()))?;
        if let Some(reason) = &state.halted {
            return Err(PpoError::Halted(reason.clone()));
        }
        let levels = training_levels(&cfg)?;
        let log = match out_dir {
            Some(dir) => {
                std::fs::create_dir_all(dir.join("checkpoints"))?;
                let path = dir.join(LOG_FILE);
                let existing = if path.exists() {
                    TrainLog::read(&path)?.into_iter().filter(|r| r.update <= state.update).collect()
                } else {
                    Vec::new()
                };
                TrainLog::create(&path, existing)?
            }
            None => TrainLog::in_memory(),
        };
        Ok(Trainer { cfg, levels, params: ck.params, state, out_dir: out_dir.map(Path::to_path_buf), log })
    }

    pub fn config(&self) -> &PpoConfig {
        &self.cfg
    }

    pub fn params(&self) -> &PolicyParams<f32> {
        &self.params
    }

    pub fn state(&self) -> &TrainerState {
        &self.state
    }

    pub fn log(&self) -> &TrainLog {
        &self.log
    }

    pub fn is_done(&self) -> bool {
        self.state.halted.is_some() || self.state.global_step >= self.cfg.total_steps
    }

    pub fn checkpoint(&self) -> Checkpoint<f32> {
        Checkpoint::new(self.params.clone())
            .with_section("config", self.cfg.to_toml().into_bytes())
            .with_section("trainer", serde_json::to_vec(&self.state).expect("state serializes"))
    }

    pub fn save_checkpoint(&self, path: &Path) -> Result<(), PpoError> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        self.checkpoint().save(path)?;
        Ok(())
    }

    /// Runs updates until the step budget is spent or the run halts.
    pub fn run(&mut self) -> Result<TrainSummary, PpoError> {
        while !self.is_done() {
            self.step_update()?;
        }
        let final_checkpoint = match &self.out_dir {
            Some(dir) => {
                let path = dir.join(FINAL_CHECKPOINT);
                self.save_checkpoint(&path)?;
                Some(path)
            }
            None => None,
        };
        Ok(TrainSummary {
            updates: self.state.update,
            global_step: self.state.global_step,
            halted: self.state.halted.clone(),
            final_checkpoint,
        })
    }

    /// One collection phase followed by the optimization epochs.
    pub fn step_update(&mut self) -> Result<UpdateOutcome, PpoError> {
        if let Some(reason) = &self.state.halted {
            return Err(PpoError::Halted(reason.clone()));
        }
        let started = Instant::now();
        self.state.update += 1;
        let mut buffer = RolloutBuffer::new(self.cfg.n_steps, self.cfg.n_actors);
        let mut episodes = Vec::new();
        if let Err(e) = self.collect(&mut buffer, &mut episodes) {
            return Err(self.halt(e, &buffer, &episodes));
        }
        let loss = match self.optimize(&mut buffer) {
            Ok(l) => l,
            Err(e) => return Err(self.halt(e, &buffer, &episodes)),
        };
        let mut row = self.row(&buffer, &episodes, Some(loss), "ok");
        row.stuck = row.entropy < self.cfg.stuck_entropy && row.invalid_rate > self.cfg.stuck_invalid_rate;
        let halt = row.stuck && self.cfg.halt_on_stuck;
        if halt {
            row.status = "stuck-halt".into();
            self.state.halted = Some("stuck".into());
        }
        self.log.push(row.clone())?;
        if let Some(dir) = &self.out_dir {
            append_timing(&dir.join(TIMING_FILE), self.state.update, started.elapsed().as_secs_f64())?;
            if halt {
                self.save_checkpoint(&dir.join(FINAL_CHECKPOINT))?;
            } else if self.cfg.checkpoint_every > 0 && self.state.update.is_multiple_of(self.cfg.checkpoint_every as u64) {
                self.save_checkpoint(&dir.join("checkpoints").join(format!("update_{:06}.ckpt", self.state.update)))?;
            }
        }
        Ok(UpdateOutcome { row, buffer, episodes })
    }

    /// Logs the failure, writes a final checkpoint and the triggering state,
    /// and marks the run halted.
    fn halt(&mut self, mut err: PpoError, buffer: &RolloutBuffer, episodes: &[EpisodeRecord]) -> PpoError {
        if let PpoError::NonFiniteLoss { update, .. } = &mut err {
            *update = self.state.update;
        }
        self.state.halted = Some(err.status().to_string());
        let row = self.row(buffer, episodes, None, err.status());
        let mut failures = Vec::new();
        if let Err(e) = self.log.push(row) {
            failures.push(e.to_string());
        }
        if let Some(dir) = self.out_dir.clone() {
            let mut dump = format!("{err}\n");
            if let PpoError::MaskedAllActions { board, .. } = &err {
                dump.push_str(board);
            }
            if let Err(e) = std::fs::write(dir.join("halt_state.txt"), dump) {
                failures.push(e.to_string());
            }
            if let Err(e) = self.save_checkpoint(&dir.join(FINAL_CHECKPOINT)) {
                failures.push(e.to_string());
            }
        }
        if failures.is_empty() {
            err
        } else {
            PpoError::State(format!("{err}; while saving halt state: {}", failures.join("; ")))
        }
    }

    fn row(&self, buffer: &RolloutBuffer, episodes: &[EpisodeRecord], loss: Option<LossStats>, status: &str) -> LogRow {
        let n = episodes.len();
        let mean = |f: &dyn Fn(&EpisodeRecord) -> f64| (n > 0).then(|| episodes.iter().map(f).sum::<f64>() / n as f64);
        let recent = &self.state.recent_rewards;
        LogRow {
            update: self.state.update,
            global_step: self.state.global_step,
            episodes: n as u64,
            completed: episodes.iter().filter(|e| e.completed).count() as u64,
            mean_episode_reward: mean(&|e| e.reward),
            mean_episode_length: mean(&|e| e.length as f64),
            min_episode_length: episodes.iter().map(|e| e.length).min(),
            max_episode_length: episodes.iter().map(|e| e.length).max(),
            rolling_reward: (!recent.is_empty()).then(|| recent.iter().sum::<f64>() / recent.len() as f64),
            max_buffer_episode_steps: buffer.max_episode_steps(),
            entropy: buffer.mean_entropy(),
            invalid_rate: buffer.invalid_rate(),
            policy_loss: loss.map(|l| l.policy),
            value_loss: loss.map(|l| l.value),
            loss_entropy: loss.map(|l| l.entropy),
            total_loss: loss.map(|l| l.total),
            approx_kl: loss.map(|l| l.approx_kl),
            clip_fraction: loss.map(|l| l.clip_fraction),
            stuck: false,
            status: status.to_string(),
        }
    }

    fn collect(&mut self, buf: &mut RolloutBuffer, episodes: &mut Vec<EpisodeRecord>) -> Result<(), PpoError> {
        let cfg = &self.cfg;
        let mode = cfg.mask_mode;
        let soft = mode.mask_in_observation();
        let cap = cfg.reset_cap();
        for _ in 0..cfg.n_steps {
            let obs: Vec<Observation> =
                self.state.actors.iter().map(|a| encode(&a.board, &a.perm, soft)).collect();
            let out = self.params.forward(&Input::from_observations(&obs))?;
            for (i, (actor, ob)) in self.state.actors.iter_mut().zip(obs).enumerate() {
                let mask = mode.masks_logits().then(|| actor.board.valid_actions());
                let dist = ActionDistribution::new(out.logits_row(i), mode, mask.as_ref().map(|m| &m[..]))?;
                if dist.is_degenerate() {
                    return Err(PpoError::MaskedAllActions {
                        update: self.state.update,
                        actor: i,
                        level_id: actor.board.level_id(),
                        step: actor.board.step_count(),
                        board: actor.board.render(),
                    });
                }
                let action = dist.sample(&mut actor.rng)?;
                let log_prob = dist.log_prob(action)?;
                let entropy = dist.entropy()?;
                let result = actor.board.apply_move(action)?;
                actor.episode_reward += result.reward;
                let steps = actor.board.step_count();
                let status = actor.board.status();
                let done = status != Status::Running || cap.is_some_and(|c| steps >= c);

                buf.observations.push(ob);
                buf.actions.push(action);
                buf.log_probs.push(f64::from(log_prob));
                buf.values.push(f64::from(out.values[i]));
                buf.rewards.push(result.reward);
                buf.dones.push(done);
                buf.valid.push(result.valid);
                if let Some(m) = mask {
                    buf.masks.push(m);
                }
                buf.episode_steps.push(steps);
                buf.entropies.push(f64::from(entropy));

                if done {
                    let record = EpisodeRecord {
                        level_id: actor.board.level_id(),
                        reward: actor.episode_reward,
                        length: steps,
                        completed: status == Status::Completed,
                    };
                    self.state.episodes += 1;
                    if self.state.recent_rewards.len() == ROLLING_EPISODES {
                        self.state.recent_rewards.pop_front();
                    }
                    self.state.recent_rewards.push_back(record.reward);
                    episodes.push(record);
                    actor.restart(&self.levels, cfg.color_shuffle)?;
                }
            }
            self.state.global_step += cfg.n_actors as u64;
        }
        let obs: Vec<Observation> = self.state.actors.iter().map(|a| encode(&a.board, &a.perm, soft)).collect();
        let out = self.params.forward(&Input::from_observations(&obs))?;
        buf.bootstrap = out.values.iter().map(|&v| f64::from(v)).collect();
        Ok(())
    }

    fn minibatch(&self, buf: &RolloutBuffer, idx: &[usize]) -> Minibatch<f32> {
        Minibatch {
            input: Input::from_observations(idx.iter().map(|&i| &buf.observations[i])),
            actions: idx.iter().map(|&i| buf.actions[i]).collect(),
            old_log_probs: idx.iter().map(|&i| buf.log_probs[i] as f32).collect(),
            advantages: idx.iter().map(|&i| buf.advantages[i] as f32).collect(),
            returns: idx.iter().map(|&i| buf.returns[i] as f32).collect(),
            masks: if buf.masks.is_empty() { Vec::new() } else { idx.iter().map(|&i| buf.masks[i].to_vec()).collect() },
        }
    }

    /// Shuffled minibatch passes; returns loss statistics averaged over all
    /// gradient steps.
    fn optimize(&mut self, buf: &mut RolloutBuffer) -> Result<LossStats, PpoError> {
        buf.finish(self.cfg.gamma, self.cfg.gae_lambda);
        let coef = LossCoefficients::from(&self.cfg);
        let adam = self.cfg.adam();
        let mb = self.cfg.minibatch_size();
        let max_norm = self.cfg.max_grad_norm as f32;
        let mut sum = LossStats::default();
        let mut steps = 0usize;
        let mut order: Vec<usize> = (0..buf.len()).collect();
        for _ in 0..self.cfg.epochs {
            order.shuffle(&mut self.state.shuffle_rng);
            for chunk in order.chunks(mb) {
                let batch = self.minibatch(buf, chunk);
                let (stats, mut grads) = ppo_loss_and_grad(&self.params, &batch, &coef)?;
                if max_norm > 0.0 {
                    let norm = grads.global_norm();
                    if norm > max_norm {
                        grads.scale(max_norm / norm);
                    }
                }
                self.params.adam_step(&grads, &adam).map_err(|e| match e {
                    NnError::NonFiniteGradient(name) => PpoError::NonFiniteLoss {
                        update: self.state.update,
                        detail: format!("non-finite gradient in {name}"),
                    },
                    other => other.into(),
                })?;
                sum.total += stats.total;
                sum.policy += stats.policy;
                sum.value += stats.value;
                sum.entropy += stats.entropy;
                sum.approx_kl += stats.approx_kl;
                sum.clip_fraction += stats.clip_fraction;
                steps += 1;
            }
        }
        let k = steps as f64;
        Ok(LossStats {
            total: sum.total / k,
            policy: sum.policy / k,
            value: sum.value / k,
            entropy: sum.entropy / k,
            approx_kl: sum.approx_kl / k,
            clip_fraction: sum.clip_fraction / k,
        })
    }
}
