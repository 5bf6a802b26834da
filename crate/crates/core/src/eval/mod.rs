//! Evaluation harness: competence, completion under the move limit,
//! moves-used histograms and a uniform random baseline.

mod report;

pub use report::{emit_report, HumanData, ReportFiles};

use crate::encoder::{encode, sample_permutation, Observation};
use crate::engine::{Board, LevelPack, LevelSpec, Status, TEST_LEVELS, TRAIN_LEVELS};
use crate::nn::{Input, NnError, PolicyParams};
use crate::policy::{ActionDistribution, PolicyError};
use crate::seed;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use thiserror::Error;

const TAG_COMPLETION: u64 = 11;
const TAG_COMPETENCE: u64 = 12;
/// Episodes advanced together through one batched forward pass.
const LOCKSTEP: usize = 64;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("config: {0}")]
    Config(String),
    #[error("levels: {0}")]
    Levels(String),
    #[error("model: {0}")]
    Model(String),
    #[error("human data: {0}")]
    Human(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Evaluation settings, read from TOML; every key is optional.
///
/// ```toml
/// levels = [1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11]
/// episodes_per_level = 200
/// max_total_steps = 2000
/// seed = 0
/// train_levels = [1, 3, 5, 7, 9]   # marks levels as seen
/// # move_limit = 10                # overrides every level's limit
/// # level_dir = "levels"
/// ```
///
/// Colors are always shuffled per episode and no action mask is applied.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub levels: Vec<u32>,
    pub episodes_per_level: u32,
    pub max_total_steps: u64,
    pub seed: u64,
    pub train_levels: Vec<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub move_limit: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub level_dir: Option<PathBuf>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        let mut levels: Vec<u32> = TRAIN_LEVELS.iter().chain(&TEST_LEVELS).copied().collect();
        levels.sort_unstable();
        EvalConfig {
            levels,
            episodes_per_level: 200,
            max_total_steps: 2000,
            seed: 0,
            train_levels: TRAIN_LEVELS.to_vec(),
            move_limit: None,
            level_dir: None,
        }
    }
}

impl EvalConfig {
    pub fn from_toml(text: &str) -> Result<Self, EvalError> {
        let cfg: EvalConfig = toml::from_str(text).map_err(|e| EvalError::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, EvalError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| EvalError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
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

    pub fn validate(&self) -> Result<(), EvalError> {
        if self.levels.is_empty() {
            return Err(EvalError::Config("levels is empty".into()));
        }
        if self.episodes_per_level == 0 || self.max_total_steps == 0 {
            return Err(EvalError::Config("episodes_per_level and max_total_steps must be positive".into()));
        }
        Ok(())
    }

    pub fn pack(&self) -> Result<LevelPack, EvalError> {
        LevelPack::with_dir(self.level_dir.as_deref()).map_err(|e| EvalError::Levels(e.to_string()))
    }
}

/// Anything that maps observations to action logits.
pub trait ActionModel {
    fn name(&self) -> &str;
    /// 15, or 16 when the observation carries the legal-move plane.
    fn observation_channels(&self) -> usize;
    /// Row-major `[batch, 117]` logits.
    fn logits(&self, obs: &[Observation]) -> Result<Vec<f32>, EvalError>;
}

pub struct NetworkModel {
    name: String,
    params: PolicyParams<f32>,
}

impl NetworkModel {
    pub fn new(name: impl Into<String>, params: PolicyParams<f32>) -> Self {
        NetworkModel { name: name.into(), params }
    }
}

impl ActionModel for NetworkModel {
    fn name(&self) -> &str {
        &self.name
    }

    fn observation_channels(&self) -> usize {
        self.params.arch.in_channels
    }

    fn logits(&self, obs: &[Observation]) -> Result<Vec<f32>, EvalError> {
        Ok(self.params.forward(&Input::from_observations(obs))?.logits)
    }
}

/// Equal logits everywhere: the random baseline.
pub struct UniformModel;

pub const BASELINE_NAME: &str = "random";

impl ActionModel for UniformModel {
    fn name(&self) -> &str {
        BASELINE_NAME
    }

    fn observation_channels(&self) -> usize {
        crate::encoder::BASE_CHANNELS
    }

    fn logits(&self, obs: &[Observation]) -> Result<Vec<f32>, EvalError> {
        Ok(vec![0.0; obs.len() * crate::engine::N_CELLS])
    }
}

/// 1-based position of the first action accepted by `is_valid` when
/// sampling without replacement from `dist`; `None` if nothing is valid.
pub fn first_valid_rank<T: crate::scalar::Scalar>(
    dist: &ActionDistribution<T>,
    is_valid: impl Fn(usize) -> bool,
    rng: &mut impl Rng,
) -> Result<Option<(usize, usize)>, EvalError> {
    let order = dist.ranking(rng)?;
    Ok(order.iter().position(|&a| is_valid(a)).map(|i| (i + 1, order[i])))
}

/// Running totals for the competence metric.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CompetenceStats {
    pub steps: u64,
    pub rank_sum: u64,
    /// States with no valid action; excluded from the metric.
    pub dead_states: u64,
}

impl CompetenceStats {
    /// `1 / mean rank`, or `None` before any step.
    pub fn competence(&self) -> Option<f64> {
        (self.steps > 0).then(|| self.steps as f64 / self.rank_sum as f64)
    }

    pub fn add_rank(&mut self, rank: usize) {
        self.steps += 1;
        self.rank_sum += rank as u64;
    }
}

/// Environment surface needed by the competence procedure.
pub trait CompetenceEnv {
    fn n_actions(&self) -> usize;
    fn is_valid(&self, action: usize) -> bool;
    fn step(&mut self, action: usize, rng: &mut ChaCha8Rng);
}

/// Synthetic environment with a fresh random set of exactly `n_valid`
/// legal actions after every step.
pub struct RandomSubsetEnv {
    valid: Vec<bool>,
    n_valid: usize,
}

impl RandomSubsetEnv {
    pub fn new(n_actions: usize, n_valid: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut env = RandomSubsetEnv { valid: vec![false; n_actions], n_valid };
        env.redraw(rng);
        env
    }

    fn redraw(&mut self, rng: &mut ChaCha8Rng) {
        self.valid.fill(false);
        for i in rand::seq::index::sample(rng, self.valid.len(), self.n_valid) {
            self.valid[i] = true;
        }
    }
}

impl CompetenceEnv for RandomSubsetEnv {
    fn n_actions(&self) -> usize {
        self.valid.len()
    }

    fn is_valid(&self, action: usize) -> bool {
        self.valid[action]
    }

    fn step(&mut self, _action: usize, rng: &mut ChaCha8Rng) {
        self.redraw(rng);
    }
}

/// Competence of a fixed-logit policy over `steps` environment steps.
pub fn competence_in_env<E: CompetenceEnv>(
    env: &mut E,
    logits: &[f64],
    steps: u64,
    rng: &mut ChaCha8Rng,
) -> Result<CompetenceStats, EvalError> {
    let dist = ActionDistribution::unmasked(logits)?;
    let mut stats = CompetenceStats::default();
    for _ in 0..steps {
        match first_valid_rank(&dist, |a| env.is_valid(a), rng)? {
            Some((rank, action)) => {
                stats.add_rank(rank);
                env.step(action, rng);
            }
            None => {
                stats.dead_states += 1;
                env.step(0, rng);
            }
        }
    }
    Ok(stats)
}

/// Results for one level and one model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelEval {
    pub level: u32,
    pub seen: bool,
    pub move_limit: u32,
    pub episodes: u32,
    pub competence: Option<f64>,
    pub competence_stats: CompetenceStats,
    /// Episodes that cleared every goal within the move limit.
    pub completed: u32,
    pub completion_rate: f64,
    /// Valid moves used by each completion episode that finished within the
    /// step cap; `None` for episodes that did not.
    pub moves_used: Vec<Option<u32>>,
    /// Mean total steps (valid and invalid) per completion episode.
    pub mean_total_steps: f64,
}

impl LevelEval {
    /// Completion rate under a different move limit, on the same episodes.
    pub fn completion_rate_at(&self, limit: u32) -> f64 {
        let n = self.moves_used.iter().filter(|m| m.is_some_and(|m| m <= limit)).count();
        n as f64 / self.episodes as f64
    }

    /// Counts of valid moves used, index = moves; only completions within
    /// `limit` when given, otherwise every completion under the step cap.
    pub fn histogram(&self, limit: Option<u32>) -> Vec<u32> {
        let used: Vec<u32> =
            self.moves_used.iter().flatten().copied().filter(|&m| limit.is_none_or(|l| m <= l)).collect();
        let len = limit.map_or_else(|| used.iter().max().map_or(0, |&m| m + 1), |l| l + 1) as usize;
        let mut h = vec![0u32; len];
        for m in used {
            h[m as usize] += 1;
        }
        h
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelEval {
    pub name: String,
    pub levels: Vec<LevelEval>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub config: EvalConfig,
    pub models: Vec<ModelEval>,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, EvalError> {
        serde_json::from_str(text).map_err(|e| EvalError::Config(format!("report: {e}")))
    }
}

struct Episode {
    board: Board,
    perm: crate::encoder::ColorPermutation,
    rng: ChaCha8Rng,
}

impl Episode {
    fn start(spec: &LevelSpec, cfg: &EvalConfig, tag: u64, index: u32) -> Result<Self, EvalError> {
        let mut rng = seed::rng(cfg.seed, &[tag, u64::from(spec.id), u64::from(index)]);
        let board = Board::load(spec, rng.gen()).map_err(|e| EvalError::Levels(e.to_string()))?;
        let perm = sample_permutation(&mut rng, true);
        Ok(Episode { board, perm, rng })
    }
}

/// Steps every episode in lockstep batches until `step` reports it finished.
fn run_lockstep<M: ActionModel + ?Sized>(
    model: &M,
    mut episodes: Vec<Episode>,
    mut step: impl FnMut(usize, &mut Episode, &[f32]) -> Result<bool, EvalError>,
) -> Result<(), EvalError> {
    let soft = model.observation_channels() == crate::encoder::SOFT_MASK_CHANNELS;
    let na = crate::engine::N_CELLS;
    let mut pending: Vec<usize> = (0..episodes.len()).rev().collect();
    let mut active: Vec<usize> = Vec::new();
    loop {
        while active.len() < LOCKSTEP {
            match pending.pop() {
                Some(i) => active.push(i),
                None => break,
            }
        }
        if active.is_empty() {
            return Ok(());
        }
        let obs: Vec<Observation> =
            active.iter().map(|&i| encode(&episodes[i].board, &episodes[i].perm, soft)).collect();
        let logits = model.logits(&obs)?;
        let mut still = Vec::with_capacity(active.len());
        for (row, &i) in active.iter().enumerate() {
            if !step(i, &mut episodes[i], &logits[row * na..(row + 1) * na])? {
                still.push(i);
            }
        }
        active = still;
    }
}

/// Completion episodes: unmasked sampling, unlimited moves, stop at
/// completion or the step cap. Returns valid moves used per episode.
fn completion_runs<M: ActionModel + ?Sized>(
    model: &M,
    spec: &LevelSpec,
    cfg: &EvalConfig,
) -> Result<(Vec<Option<u32>>, f64), EvalError> {
    let n = cfg.episodes_per_level;
    let episodes = (0..n)
        .map(|i| {
            let mut e = Episode::start(spec, cfg, TAG_COMPLETION, i)?;
            e.board.set_moves_left(u32::MAX);
            Ok(e)
        })
        .collect::<Result<Vec<_>, EvalError>>()?;
    let mut moves = vec![None; n as usize];
    let mut steps = vec![0u64; n as usize];
    run_lockstep(model, episodes, |i, ep, logits| {
        let dist = ActionDistribution::unmasked(logits)?;
        let action = dist.sample(&mut ep.rng)?;
        ep.board.apply_move(action).map_err(|e| EvalError::Model(e.to_string()))?;
        steps[i] = ep.board.step_count();
        if ep.board.status() == Status::Completed {
            moves[i] = Some(ep.board.moves_used());
            return Ok(true);
        }
        Ok(ep.board.step_count() >= cfg.max_total_steps)
    })?;
    let mean_steps = steps.iter().sum::<u64>() as f64 / f64::from(n);
    Ok((moves, mean_steps))
}

/// Competence episodes: each step takes the first valid action found by
/// sampling without replacement, under the level's own move limit.
fn competence_runs<M: ActionModel + ?Sized>(
    model: &M,
    spec: &LevelSpec,
    cfg: &EvalConfig,
    move_limit: u32,
) -> Result<CompetenceStats, EvalError> {
    let episodes = (0..cfg.episodes_per_level)
        .map(|i| {
            let mut e = Episode::start(spec, cfg, TAG_COMPETENCE, i)?;
            e.board.set_moves_left(move_limit);
            Ok(e)
        })
        .collect::<Result<Vec<_>, EvalError>>()?;
    let mut stats = CompetenceStats::default();
    if move_limit == 0 {
        return Ok(stats);
    }
    run_lockstep(model, episodes, |_, ep, logits| {
        let dist = ActionDistribution::unmasked(logits)?;
        let board = &ep.board;
        match first_valid_rank(&dist, |a| board.is_valid_action(a), &mut ep.rng)? {
            Some((rank, action)) => {
                stats.add_rank(rank);
                ep.board.apply_move(action).map_err(|e| EvalError::Model(e.to_string()))?;
                Ok(ep.board.status() != Status::Running || ep.board.step_count() >= cfg.max_total_steps)
            }
            None => {
                stats.dead_states += 1;
                Ok(true)
            }
        }
    })?;
    Ok(stats)
}

pub fn evaluate_level<M: ActionModel + ?Sized>(
    model: &M,
    spec: &LevelSpec,
    cfg: &EvalConfig,
) -> Result<LevelEval, EvalError> {
    let move_limit = cfg.move_limit.unwrap_or(spec.move_limit);
    let stats = competence_runs(model, spec, cfg, move_limit)?;
    let (moves_used, mean_total_steps) = completion_runs(model, spec, cfg)?;
    let mut eval = LevelEval {
        level: spec.id,
        seen: cfg.train_levels.contains(&spec.id),
        move_limit,
        episodes: cfg.episodes_per_level,
        competence: stats.competence(),
        competence_stats: stats,
        completed: 0,
        completion_rate: 0.0,
        moves_used,
        mean_total_steps,
    };
    eval.completed = eval.moves_used.iter().filter(|m| m.is_some_and(|m| m <= move_limit)).count() as u32;
    eval.completion_rate = eval.completion_rate_at(move_limit);
    Ok(eval)
}

pub fn evaluate<M: ActionModel + ?Sized>(model: &M, pack: &LevelPack, cfg: &EvalConfig) -> Result<ModelEval, EvalError> {
    cfg.validate()?;
    let levels = cfg
        .levels
        .iter()
        .map(|&id| {
            let spec = pack.get(id).map_err(|e| EvalError::Levels(e.to_string()))?;
            evaluate_level(model, spec, cfg)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(ModelEval { name: model.name().to_string(), levels })
}

pub fn random_baseline(pack: &LevelPack, cfg: &EvalConfig) -> Result<ModelEval, EvalError> {
    evaluate(&UniformModel, pack, cfg)
}

#[cfg(test)]
mod tests;
