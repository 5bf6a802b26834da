use serde::{Deserialize, Serialize};
use std::fmt;

/// Number of distinct basic-piece colors.
pub const N_COLORS: usize = 6;

/// A basic-piece color, always in `0..N_COLORS`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Color(u8);

impl Color {
    pub fn new(index: u8) -> Option<Self> {
        ((index as usize) < N_COLORS).then_some(Color(index))
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn all() -> impl Iterator<Item = Color> {
        (0..N_COLORS as u8).map(Color)
    }
}

impl fmt::Display for Color {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PieceKind {
    Basic(Color),
    RocketHorizontal,
    RocketVertical,
    Bomb,
    Magic,
    /// Cleared by one adjacent basic match or any power hit.
    BlockerA,
    /// Cleared only by power-piece effects.
    BlockerB,
    /// Two layers; each adjacent match or power hit peels one.
    BlockerC,
}

impl PieceKind {
    pub fn is_clickable(self) -> bool {
        !self.is_blocker()
    }

    pub fn is_power(self) -> bool {
        matches!(
            self,
            PieceKind::RocketHorizontal | PieceKind::RocketVertical | PieceKind::Bomb | PieceKind::Magic
        )
    }

    pub fn is_blocker(self) -> bool {
        matches!(self, PieceKind::BlockerA | PieceKind::BlockerB | PieceKind::BlockerC)
    }

    pub fn color(self) -> Option<Color> {
        match self {
            PieceKind::Basic(c) => Some(c),
            _ => None,
        }
    }

    /// Layer count a freshly placed piece of this kind starts with.
    pub fn full_layers(self) -> u8 {
        match self {
            PieceKind::BlockerC => 2,
            _ => 1,
        }
    }

    pub fn goal_kind(self) -> Option<GoalKind> {
        match self {
            PieceKind::Basic(c) => Some(GoalKind::Color(c)),
            PieceKind::BlockerA => Some(GoalKind::BlockerA),
            PieceKind::BlockerB => Some(GoalKind::BlockerB),
            PieceKind::BlockerC => Some(GoalKind::BlockerC),
            _ => None,
        }
    }

    pub fn map_color(self, f: impl Fn(Color) -> Color) -> Self {
        match self {
            PieceKind::Basic(c) => PieceKind::Basic(f(c)),
            other => other,
        }
    }
}

/// A piece instance on the board.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Piece {
    pub kind: PieceKind,
    /// Remaining hits before removal (2 for a fresh `BlockerC`, otherwise 1).
    pub layers: u8,
    pub collect_goal: bool,
}

impl Piece {
    pub fn new(kind: PieceKind) -> Self {
        Piece { kind, layers: kind.full_layers(), collect_goal: false }
    }

    pub fn with_layers(kind: PieceKind, layers: u8) -> Self {
        Piece { kind, layers, collect_goal: false }
    }
}

/// Piece categories that collect goals can target.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum GoalKind {
    Color(Color),
    BlockerA,
    BlockerB,
    BlockerC,
}

pub const N_GOAL_KINDS: usize = N_COLORS + 3;

impl GoalKind {
    pub fn index(self) -> usize {
        match self {
            GoalKind::Color(c) => c.index(),
            GoalKind::BlockerA => N_COLORS,
            GoalKind::BlockerB => N_COLORS + 1,
            GoalKind::BlockerC => N_COLORS + 2,
        }
    }

    pub fn from_index(i: usize) -> Option<Self> {
        match i {
            i if i < N_COLORS => Some(GoalKind::Color(Color(i as u8))),
            i if i == N_COLORS => Some(GoalKind::BlockerA),
            i if i == N_COLORS + 1 => Some(GoalKind::BlockerB),
            i if i == N_COLORS + 2 => Some(GoalKind::BlockerC),
            _ => None,
        }
    }

    pub fn all() -> impl Iterator<Item = GoalKind> {
        (0..N_GOAL_KINDS).filter_map(GoalKind::from_index)
    }
}

/// Per-kind collect-goal counts.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Goals([u32; N_GOAL_KINDS]);

impl Goals {
    pub fn get(&self, kind: GoalKind) -> u32 {
        self.0[kind.index()]
    }

    pub fn set(&mut self, kind: GoalKind, count: u32) {
        self.0[kind.index()] = count;
    }

    pub fn total(&self) -> u32 {
        self.0.iter().sum()
    }

    pub fn is_done(&self) -> bool {
        self.total() == 0
    }

    /// Non-zero entries in kind order.
    pub fn iter(&self) -> impl Iterator<Item = (GoalKind, u32)> + '_ {
        GoalKind::all().map(|k| (k, self.get(k))).filter(|&(_, n)| n > 0)
    }

    pub fn map_colors(&self, f: impl Fn(Color) -> Color) -> Goals {
        let mut out = Goals::default();
        for (kind, n) in self.iter() {
            let kind = match kind {
                GoalKind::Color(c) => GoalKind::Color(f(c)),
                other => other,
            };
            out.set(kind, n);
        }
        out
    }
}
