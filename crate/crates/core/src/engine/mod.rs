//! Match-2 board simulator.
//!
//! Clicking a group of two or more orthogonally connected basic pieces of one
//! color clears it; groups of five or more leave a power piece behind. Power
//! pieces can be clicked at any time. After each valid click the board
//! settles under gravity and empty cells are refilled from the level palette
//! using the board's own seeded RNG, so a `(level, seed, actions)` triple
//! always replays identically.

mod level;
mod pack;
mod piece;

pub use level::{CellSpec, LevelError, LevelSpec, Slot};
pub use pack::{LevelPack, PackError, MINI_BLOCKER_LEVEL, MINI_LEVEL, TEST_LEVELS, TRAIN_LEVELS};
pub use piece::{Color, GoalKind, Goals, Piece, PieceKind, N_COLORS, N_GOAL_KINDS};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use thiserror::Error;

pub const WIDTH: usize = 13;
pub const HEIGHT: usize = 9;
pub const N_CELLS: usize = WIDTH * HEIGHT;

pub const COLLECT_REWARD: f64 = 0.05;
pub const COMPLETION_REWARD: f64 = 1.0;
pub const STEP_PENALTY: f64 = 0.1;
pub const INVALID_REWARD: f64 = -0.5;

pub fn cell_index(row: usize, col: usize) -> usize {
    row * WIDTH + col
}

/// One flag per action, `true` where clicking does something.
pub type ActionMask = [bool; N_CELLS];

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EngineError {
    #[error("action index {0} out of range 0..{N_CELLS}")]
    ActionOutOfRange(usize),
    #[error("board is already terminal ({0:?})")]
    Terminal(Status),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Status {
    Completed,
    OutOfMoves,
    Running,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Cell {
    pub exists: bool,
    pub base: Option<Piece>,
    /// Non-clickable piece stacked on top of `base`.
    pub cover: Option<Piece>,
}

impl Cell {
    pub fn top(&self) -> Option<&Piece> {
        self.cover.as_ref().or(self.base.as_ref())
    }

    fn top_mut(&mut self) -> Option<&mut Piece> {
        match self.cover {
            Some(ref mut p) => Some(p),
            None => self.base.as_mut(),
        }
    }

    /// Kind of the piece a click would act on, if the top piece is clickable.
    pub fn clickable(&self) -> Option<PieceKind> {
        self.top().map(|p| p.kind).filter(|k| k.is_clickable())
    }

    fn is_empty(&self) -> bool {
        self.base.is_none() && self.cover.is_none()
    }

    pub fn piece_count(&self) -> usize {
        usize::from(self.base.is_some()) + usize::from(self.cover.is_some())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MoveResult {
    pub valid: bool,
    /// Collect-goal pieces removed by this step.
    pub collected: u32,
    pub completed: bool,
    pub reward: f64,
}

/// What a valid click did, before gravity and refill.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Resolution {
    pub removed: Vec<Piece>,
    pub spawned: Option<Piece>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Board {
    level_id: u32,
    cells: Vec<Cell>,
    moves_left: u32,
    moves_used: u32,
    goals: Goals,
    palette: Vec<Color>,
    step_count: u64,
    rng: ChaCha8Rng,
}

impl Board {
    /// Builds the starting board for `spec`; placeholder cells are colored
    /// from the palette in row-major order using `seed`.
    pub fn load(spec: &LevelSpec, seed: u64) -> Result<Board, LevelError> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut cells = vec![Cell::default(); N_CELLS];
        for (cell, cs) in cells.iter_mut().zip(&spec.cells) {
            cell.exists = cs.exists;
            cell.base = match cs.base {
                Slot::Empty => None,
                Slot::RandomColor => {
                    let c = spec.palette[rng.gen_range(0..spec.palette.len())];
                    Some(Piece::new(PieceKind::Basic(c)))
                }
                Slot::Fixed(p) => Some(p),
            };
            cell.cover = cs.cover;
        }
        let mut board = Board {
            level_id: spec.id,
            cells,
            moves_left: spec.move_limit,
            moves_used: 0,
            goals: spec.goals,
            palette: spec.palette.clone(),
            step_count: 0,
            rng,
        };
        board.refresh_goal_flags();
        Ok(board)
    }

    pub fn level_id(&self) -> u32 {
        self.level_id
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    pub fn cell(&self, row: usize, col: usize) -> &Cell {
        &self.cells[cell_index(row, col)]
    }

    pub fn moves_left(&self) -> u32 {
        self.moves_left
    }

    /// Valid moves made so far.
    pub fn moves_used(&self) -> u32 {
        self.moves_used
    }

    /// Replaces the remaining move budget (evaluation runs without one).
    pub fn set_moves_left(&mut self, moves: u32) {
        self.moves_left = moves;
    }

    pub fn goals_remaining(&self) -> &Goals {
        &self.goals
    }

    /// Total actions taken, valid or not.
    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn status(&self) -> Status {
        if self.goals.is_done() {
            Status::Completed
        } else if self.moves_left == 0 {
            Status::OutOfMoves
        } else {
            Status::Running
        }
    }

    pub fn piece_count(&self) -> usize {
        self.cells.iter().map(Cell::piece_count).sum()
    }

    fn basic_color_at(&self, idx: usize) -> Option<Color> {
        let cell = &self.cells[idx];
        match cell.cover {
            Some(_) => None,
            None => cell.base.and_then(|p| p.kind.color()),
        }
    }

    pub fn is_valid_action(&self, idx: usize) -> bool {
        let cell = &self.cells[idx];
        if !cell.exists {
            return false;
        }
        match cell.clickable() {
            Some(PieceKind::Basic(color)) => {
                neighbors(idx).any(|n| self.basic_color_at(n) == Some(color))
            }
            Some(_) => true,
            None => false,
        }
    }

    pub fn valid_actions(&self) -> ActionMask {
        let mut mask = [false; N_CELLS];
        for (i, m) in mask.iter_mut().enumerate() {
            *m = self.is_valid_action(i);
        }
        mask
    }

    /// Clicks cell `action` (row-major index).
    pub fn apply_move(&mut self, action: usize) -> Result<MoveResult, EngineError> {
        self.apply_move_detailed(action).map(|(result, _)| result)
    }

    /// Like [`Board::apply_move`], also returning what the click removed.
    pub fn apply_move_detailed(
        &mut self,
        action: usize,
    ) -> Result<(MoveResult, Resolution), EngineError> {
        if action >= N_CELLS {
            return Err(EngineError::ActionOutOfRange(action));
        }
        let status = self.status();
        if status != Status::Running {
            return Err(EngineError::Terminal(status));
        }
        self.step_count += 1;
        if !self.is_valid_action(action) {
            let result = MoveResult { valid: false, collected: 0, completed: false, reward: INVALID_REWARD };
            return Ok((result, Resolution::default()));
        }

        let resolution = self.resolve(action);
        let collected = self.tally_goals(&resolution.removed);
        self.moves_left -= 1;
        self.moves_used += 1;
        self.settle();

        let completed = self.goals.is_done();
        let bonus = if completed { COMPLETION_REWARD } else { 0.0 };
        let reward = COLLECT_REWARD * f64::from(collected) + bonus - STEP_PENALTY;
        Ok((MoveResult { valid: true, collected, completed, reward }, resolution))
    }

    fn resolve(&mut self, action: usize) -> Resolution {
        let mut res = Resolution::default();
        let kind = self.cells[action].clickable().expect("validated click");
        match kind {
            PieceKind::Basic(color) => {
                let group = self.connected_group(action, color);
                for &i in &group {
                    res.removed.extend(self.cells[i].base.take());
                }
                if group.len() >= 5 {
                    let spawned = Piece::new(power_for_group(&group));
                    self.cells[action].base = Some(spawned);
                    res.spawned = Some(spawned);
                }
                let mut damaged = Vec::new();
                for &i in &group {
                    for n in neighbors(i) {
                        if !group.contains(&n) && !damaged.contains(&n) {
                            damaged.push(n);
                        }
                    }
                }
                damaged.sort_unstable();
                for n in damaged {
                    let hit_by_match = matches!(
                        self.cells[n].top().map(|p| p.kind),
                        Some(PieceKind::BlockerA | PieceKind::BlockerC)
                    );
                    if hit_by_match {
                        self.peel(n, &mut res.removed);
                    }
                }
            }
            power => {
                res.removed.extend(self.cells[action].base.take());
                let (row, col) = (action / WIDTH, action % WIDTH);
                let targets: Vec<usize> = match power {
                    PieceKind::RocketHorizontal => (0..WIDTH).map(|c| cell_index(row, c)).collect(),
                    PieceKind::RocketVertical => (0..HEIGHT).map(|r| cell_index(r, col)).collect(),
                    PieceKind::Bomb => {
                        let mut t = Vec::with_capacity(9);
                        for r in row.saturating_sub(1)..=(row + 1).min(HEIGHT - 1) {
                            for c in col.saturating_sub(1)..=(col + 1).min(WIDTH - 1) {
                                t.push(cell_index(r, c));
                            }
                        }
                        t
                    }
                    PieceKind::Magic => match self.most_frequent_color() {
                        Some(color) => {
                            (0..N_CELLS).filter(|&i| self.basic_color_at(i) == Some(color)).collect()
                        }
                        None => Vec::new(),
                    },
                    _ => unreachable!("blockers are never clickable"),
                };
                for t in targets {
                    if t != action && self.cells[t].exists {
                        self.peel(t, &mut res.removed);
                    }
                }
            }
        }
        res
    }

    /// Removes one layer from the top piece of `idx`.
    fn peel(&mut self, idx: usize, removed: &mut Vec<Piece>) {
        let cell = &mut self.cells[idx];
        let Some(top) = cell.top_mut() else { return };
        if top.layers > 1 {
            top.layers -= 1;
            return;
        }
        let piece = if cell.cover.is_some() { cell.cover.take() } else { cell.base.take() };
        removed.extend(piece);
    }

    fn connected_group(&self, start: usize, color: Color) -> Vec<usize> {
        let mut seen = [false; N_CELLS];
        let mut stack = vec![start];
        let mut group = Vec::new();
        seen[start] = true;
        while let Some(i) = stack.pop() {
            group.push(i);
            for n in neighbors(i) {
                if !seen[n] && self.basic_color_at(n) == Some(color) {
                    seen[n] = true;
                    stack.push(n);
                }
            }
        }
        group.sort_unstable();
        group
    }

    /// Most common basic color on the board; ties go to the color whose first
    /// piece comes earliest in row-major order, which keeps the rule
    /// independent of color labels.
    fn most_frequent_color(&self) -> Option<Color> {
        let mut counts = [0usize; N_COLORS];
        let mut first_seen = [usize::MAX; N_COLORS];
        for i in 0..N_CELLS {
            if let Some(c) = self.basic_color_at(i) {
                counts[c.index()] += 1;
                first_seen[c.index()] = first_seen[c.index()].min(i);
            }
        }
        Color::all()
            .filter(|c| counts[c.index()] > 0)
            .max_by(|a, b| {
                counts[a.index()]
                    .cmp(&counts[b.index()])
                    .then(first_seen[b.index()].cmp(&first_seen[a.index()]))
            })
    }

    fn tally_goals(&mut self, removed: &[Piece]) -> u32 {
        let mut collected = 0;
        for piece in removed.iter().filter(|p| p.collect_goal) {
            if let Some(kind) = piece.kind.goal_kind() {
                let left = self.goals.get(kind);
                if left > 0 {
                    self.goals.set(kind, left - 1);
                    collected += 1;
                }
            }
        }
        self.refresh_goal_flags();
        collected
    }

    fn refresh_goal_flags(&mut self) {
        let goals = self.goals;
        let flag = |p: &mut Piece| {
            p.collect_goal = p.kind.goal_kind().is_some_and(|k| goals.get(k) > 0);
        };
        for cell in &mut self.cells {
            cell.base.as_mut().map(flag);
            cell.cover.as_mut().map(flag);
        }
    }

    /// Gravity then refill: stacks fall straight down through the existing
    /// cells of each column, then empty cells at the top receive palette
    /// colors.
    fn settle(&mut self) {
        for col in 0..WIDTH {
            let column: Vec<usize> =
                (0..HEIGHT).map(|r| cell_index(r, col)).filter(|&i| self.cells[i].exists).collect();
            let stacks: Vec<(Option<Piece>, Option<Piece>)> = column
                .iter()
                .filter(|&&i| !self.cells[i].is_empty())
                .map(|&i| (self.cells[i].base, self.cells[i].cover))
                .collect();
            let empty = column.len() - stacks.len();
            for (slot, &i) in column.iter().enumerate() {
                let cell = &mut self.cells[i];
                if slot < empty {
                    cell.base = None;
                    cell.cover = None;
                } else {
                    (cell.base, cell.cover) = stacks[slot - empty];
                }
            }
        }
        for col in 0..WIDTH {
            for row in 0..HEIGHT {
                let i = cell_index(row, col);
                if self.cells[i].exists && self.cells[i].is_empty() {
                    let color = self.palette[self.rng.gen_range(0..self.palette.len())];
                    let mut piece = Piece::new(PieceKind::Basic(color));
                    piece.collect_goal = self.goals.get(GoalKind::Color(color)) > 0;
                    self.cells[i].base = Some(piece);
                }
            }
        }
    }

    /// Text dump: header lines plus the piece and cover grids in level-file
    /// codes.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "level {}", self.level_id);
        let _ = writeln!(out, "moves_left {}", self.moves_left);
        let _ = writeln!(out, "moves_used {}", self.moves_used);
        let _ = writeln!(out, "steps {}", self.step_count);
        let goals: Vec<String> =
            self.goals.iter().map(|(k, n)| format!("{}:{n}", goal_label(k))).collect();
        let _ = writeln!(out, "goals {}", goals.join(" "));
        out.push_str("pieces\n");
        for r in 0..HEIGHT {
            for c in 0..WIDTH {
                let cell = self.cell(r, c);
                out.push(match (cell.exists, cell.base.as_ref()) {
                    (false, _) => '.',
                    (true, None) => '_',
                    (true, Some(p)) => level::piece_code(p),
                });
            }
            out.push('\n');
        }
        if self.cells.iter().any(|c| c.cover.is_some()) {
            out.push_str("cover\n");
            for r in 0..HEIGHT {
                for c in 0..WIDTH {
                    out.push(self.cell(r, c).cover.as_ref().map_or('.', level::piece_code));
                }
                out.push('\n');
            }
        }
        out
    }
}

fn goal_label(kind: GoalKind) -> String {
    match kind {
        GoalKind::Color(c) => c.to_string(),
        GoalKind::BlockerA => "a".into(),
        GoalKind::BlockerB => "b".into(),
        GoalKind::BlockerC => "c".into(),
    }
}

fn neighbors(idx: usize) -> impl Iterator<Item = usize> {
    let (r, c) = (idx / WIDTH, idx % WIDTH);
    let up = (r > 0).then(|| idx - WIDTH);
    let down = (r + 1 < HEIGHT).then(|| idx + WIDTH);
    let left = (c > 0).then(|| idx - 1);
    let right = (c + 1 < WIDTH).then(|| idx + 1);
    [up, down, left, right].into_iter().flatten()
}

/// Power piece left behind by clearing `group` (size >= 5).
fn power_for_group(group: &[usize]) -> PieceKind {
    match group.len() {
        0..=6 => {
            let rows = group.iter().map(|i| i / WIDTH);
            let cols = group.iter().map(|i| i % WIDTH);
            let height = rows.clone().max().unwrap() - rows.min().unwrap() + 1;
            let width = cols.clone().max().unwrap() - cols.min().unwrap() + 1;
            if height > width {
                PieceKind::RocketVertical
            } else {
                PieceKind::RocketHorizontal
            }
        }
        7..=8 => PieceKind::Bomb,
        _ => PieceKind::Magic,
    }
}
