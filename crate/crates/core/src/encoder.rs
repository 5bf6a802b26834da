//! Layered board observations and the action-index convention.
//!
//! Channel layout (each a 9x13 plane, row-major):
//!
//! | index | channel            |
//! |-------|--------------------|
//! | 0     | isCell             |
//! | 1..=6 | color 0..5         |
//! | 7     | isCollectgoal      |
//! | 8     | isClickableTrue    |
//! | 9     | isClickableFalse   |
//! | 10    | idBasic            |
//! | 11    | idRocketHorizontal |
//! | 12    | idRocketVertical   |
//! | 13    | idBomb             |
//! | 14    | idMagic            |
//! | 15    | action mask (only with the soft mask) |

use crate::engine::{Board, Color, PieceKind, HEIGHT, N_CELLS, N_COLORS, WIDTH};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const BASE_CHANNELS: usize = 15;
pub const SOFT_MASK_CHANNELS: usize = 16;

pub const CH_IS_CELL: usize = 0;
pub const CH_COLOR0: usize = 1;
pub const CH_COLLECT_GOAL: usize = 7;
pub const CH_CLICKABLE: usize = 8;
pub const CH_NOT_CLICKABLE: usize = 9;
pub const CH_BASIC: usize = 10;
pub const CH_ROCKET_H: usize = 11;
pub const CH_ROCKET_V: usize = 12;
pub const CH_BOMB: usize = 13;
pub const CH_MAGIC: usize = 14;
pub const CH_ACTION_MASK: usize = 15;

pub fn channels(soft_mask: bool) -> usize {
    if soft_mask {
        SOFT_MASK_CHANNELS
    } else {
        BASE_CHANNELS
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("cell ({row}, {col}) outside the {HEIGHT}x{WIDTH} board")]
pub struct IndexError {
    pub row: usize,
    pub col: usize,
}

/// Row-major index of a board square.
pub fn action_index(row: usize, col: usize) -> Result<usize, IndexError> {
    if row >= HEIGHT || col >= WIDTH {
        return Err(IndexError { row, col });
    }
    Ok(row * WIDTH + col)
}

/// Inverse of [`action_index`].
pub fn action_cell(index: usize) -> Result<(usize, usize), IndexError> {
    if index >= N_CELLS {
        return Err(IndexError { row: index / WIDTH, col: index % WIDTH });
    }
    Ok((index / WIDTH, index % WIDTH))
}

/// Bijection on the six colors; maps a board color to the observation
/// color channel it is written to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ColorPermutation([u8; N_COLORS]);

impl Default for ColorPermutation {
    fn default() -> Self {
        Self::identity()
    }
}

impl ColorPermutation {
    pub fn identity() -> Self {
        ColorPermutation([0, 1, 2, 3, 4, 5])
    }

    pub fn from_slice(perm: &[u8]) -> Option<Self> {
        if perm.len() != N_COLORS {
            return None;
        }
        let mut seen = [false; N_COLORS];
        let mut out = [0u8; N_COLORS];
        for (slot, &p) in out.iter_mut().zip(perm) {
            let p_idx = p as usize;
            if p_idx >= N_COLORS || seen[p_idx] {
                return None;
            }
            seen[p_idx] = true;
            *slot = p;
        }
        Some(ColorPermutation(out))
    }

    /// Uniform over all 720 permutations.
    pub fn sample<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let mut p = [0u8, 1, 2, 3, 4, 5];
        p.shuffle(rng);
        ColorPermutation(p)
    }

    pub fn apply(&self, c: Color) -> Color {
        Color::new(self.0[c.index()]).expect("permutation entries are colors")
    }

    pub fn inverse(&self) -> Self {
        let mut inv = [0u8; N_COLORS];
        for (i, &p) in self.0.iter().enumerate() {
            inv[p as usize] = i as u8;
        }
        ColorPermutation(inv)
    }

    pub fn as_slice(&self) -> &[u8; N_COLORS] {
        &self.0
    }

    /// Position of this permutation in lexicographic order, `0..720`.
    pub fn rank(&self) -> usize {
        let mut rank = 0;
        let mut factorial = 120;
        let mut remaining: Vec<u8> = (0..N_COLORS as u8).collect();
        for (i, &p) in self.0.iter().enumerate() {
            let pos = remaining.iter().position(|&r| r == p).expect("bijection");
            rank += pos * factorial;
            remaining.remove(pos);
            if i + 1 < N_COLORS {
                factorial /= N_COLORS - 1 - i;
            }
        }
        rank
    }
}

/// Draws the per-episode permutation, or the identity when shuffling is off.
pub fn sample_permutation<R: Rng + ?Sized>(rng: &mut R, shuffle: bool) -> ColorPermutation {
    if shuffle {
        ColorPermutation::sample(rng)
    } else {
        ColorPermutation::identity()
    }
}

/// Binary `C x 9 x 13` tensor, channel-major.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Observation {
    channels: usize,
    data: Vec<u8>,
}

impl Observation {
    pub fn zeros(channels: usize) -> Self {
        Observation { channels, data: vec![0; channels * N_CELLS] }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, channel: usize, row: usize, col: usize) -> u8 {
        self.data[channel * N_CELLS + row * WIDTH + col]
    }

    pub fn plane(&self, channel: usize) -> &[u8] {
        &self.data[channel * N_CELLS..(channel + 1) * N_CELLS]
    }

    fn set(&mut self, channel: usize, cell: usize) {
        self.data[channel * N_CELLS + cell] = 1;
    }

    /// Reorders the color planes: plane `c` moves to plane `perm(c)`.
    pub fn permute_color_channels(&self, perm: &ColorPermutation) -> Observation {
        let mut out = self.clone();
        for c in Color::all() {
            let dst = CH_COLOR0 + perm.apply(c).index();
            let src = CH_COLOR0 + c.index();
            out.data[dst * N_CELLS..(dst + 1) * N_CELLS].copy_from_slice(self.plane(src));
        }
        out
    }
}

fn id_channel(kind: PieceKind) -> Option<usize> {
    match kind {
        PieceKind::Basic(_) => Some(CH_BASIC),
        PieceKind::RocketHorizontal => Some(CH_ROCKET_H),
        PieceKind::RocketVertical => Some(CH_ROCKET_V),
        PieceKind::Bomb => Some(CH_BOMB),
        PieceKind::Magic => Some(CH_MAGIC),
        _ => None,
    }
}

/// Encodes `board` with board color `c` written to channel `perm(c)`.
pub fn encode(board: &Board, perm: &ColorPermutation, soft_mask: bool) -> Observation {
    let mut obs = Observation::zeros(channels(soft_mask));
    for (i, cell) in board.cells().iter().enumerate() {
        if !cell.exists {
            continue;
        }
        obs.set(CH_IS_CELL, i);
        for piece in cell.base.iter().chain(cell.cover.iter()) {
            if piece.collect_goal {
                obs.set(CH_COLLECT_GOAL, i);
            }
            if piece.kind.is_clickable() {
                obs.set(CH_CLICKABLE, i);
            } else {
                obs.set(CH_NOT_CLICKABLE, i);
            }
            if let Some(ch) = id_channel(piece.kind) {
                obs.set(ch, i);
            }
            if let Some(c) = piece.kind.color() {
                obs.set(CH_COLOR0 + perm.apply(c).index(), i);
            }
        }
    }
    if soft_mask {
        for (i, valid) in board.valid_actions().iter().enumerate() {
            if *valid {
                obs.set(CH_ACTION_MASK, i);
            }
        }
    }
    obs
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{LevelPack, LevelSpec};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn board_from(pieces: &[(usize, usize, char)], shape_cells: Option<&[(usize, usize)]>) -> Board {
        let mut text = String::from("id 1\nmoves 5\npalette 0\ngoal 0 1\nshape\n");
        let exists = |r: usize, c: usize| shape_cells.is_none_or(|cells| cells.contains(&(r, c)));
        for r in 0..HEIGHT {
            for c in 0..WIDTH {
                text.push(if exists(r, c) { '#' } else { '.' });
            }
            text.push('\n');
        }
        text.push_str("pieces\n");
        for r in 0..HEIGHT {
            for c in 0..WIDTH {
                let ch = pieces.iter().find(|p| (p.0, p.1) == (r, c)).map(|p| p.2);
                text.push(match (exists(r, c), ch) {
                    (false, _) => '.',
                    (true, Some(ch)) => ch,
                    (true, None) => '_',
                });
            }
            text.push('\n');
        }
        Board::load(&LevelSpec::parse(&text).unwrap(), 0).unwrap()
    }

    #[test]
    fn index_convention() {
        assert_eq!(action_index(0, 0), Ok(0));
        assert_eq!(action_index(8, 12), Ok(116));
        assert_eq!(action_cell(27), Ok((27 / 13, 27 % 13)));
        assert_eq!(action_cell(27), Ok((2, 1)));
        assert!(action_index(9, 0).is_err());
        assert!(action_index(0, 13).is_err());
        assert!(action_cell(117).is_err());
        for i in 0..N_CELLS {
            let (r, c) = action_cell(i).unwrap();
            assert_eq!(action_index(r, c), Ok(i));
        }
    }

    #[test]
    fn empty_region_sets_only_is_cell() {
        let cells = [(0, 0), (0, 1), (1, 0), (1, 1)];
        let board = board_from(&[], Some(&cells));
        let obs = encode(&board, &ColorPermutation::identity(), false);
        assert_eq!(obs.channels(), 15);
        for ch in 0..BASE_CHANNELS {
            let ones: Vec<usize> = (0..N_CELLS).filter(|&i| obs.plane(ch)[i] == 1).collect();
            if ch == CH_IS_CELL {
                assert_eq!(ones, vec![0, 1, 13, 14]);
            } else {
                assert!(ones.is_empty(), "channel {ch}");
            }
        }
    }

    #[test]
    fn single_goal_piece_channels() {
        let board = board_from(&[(3, 4, '0')], None);
        let obs = encode(&board, &ColorPermutation::identity(), false);
        let set: Vec<usize> = (0..BASE_CHANNELS).filter(|&ch| obs.get(ch, 3, 4) == 1).collect();
        assert_eq!(set, vec![CH_IS_CELL, CH_COLOR0, CH_COLLECT_GOAL, CH_CLICKABLE, CH_BASIC]);
    }

    #[test]
    fn swapping_two_colors_swaps_two_planes() {
        let board = board_from(&[(3, 4, '0'), (5, 5, '2'), (0, 0, '1')], None);
        let id = encode(&board, &ColorPermutation::identity(), false);
        let swap = ColorPermutation::from_slice(&[2, 1, 0, 3, 4, 5]).unwrap();
        let sw = encode(&board, &swap, false);
        for ch in 0..BASE_CHANNELS {
            let expected = match ch {
                1 => id.plane(3),
                3 => id.plane(1),
                _ => id.plane(ch),
            };
            assert_eq!(sw.plane(ch), expected, "channel {ch}");
        }
    }

    #[test]
    fn stacked_cell_uses_both_clickable_planes() {
        let spec = LevelPack::bundled().get(7).unwrap().clone();
        let board = Board::load(&spec, 4).unwrap();
        let obs = encode(&board, &ColorPermutation::identity(), false);
        let (r, c) = (5, 1);
        assert!(board.cell(r, c).cover.is_some());
        assert_eq!(obs.get(CH_CLICKABLE, r, c), 1);
        assert_eq!(obs.get(CH_NOT_CLICKABLE, r, c), 1);
        assert_eq!(obs.get(CH_BASIC, r, c), 1);
    }

    #[test]
    fn soft_mask_plane_is_valid_actions() {
        let pack = LevelPack::bundled();
        for id in pack.ids() {
            let board = Board::load(pack.get(id).unwrap(), 11).unwrap();
            let obs = encode(&board, &ColorPermutation::identity(), true);
            assert_eq!(obs.channels(), 16);
            let mask = board.valid_actions();
            for i in 0..N_CELLS {
                assert_eq!(obs.plane(CH_ACTION_MASK)[i] == 1, mask[i]);
            }
        }
    }

    #[test]
    fn permutation_helpers() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let p = ColorPermutation::sample(&mut rng);
            assert!(ColorPermutation::from_slice(p.as_slice()).is_some());
            let inv = p.inverse();
            for c in Color::all() {
                assert_eq!(inv.apply(p.apply(c)), c);
            }
        }
        assert_eq!(ColorPermutation::identity().rank(), 0);
        assert_eq!(ColorPermutation::from_slice(&[5, 4, 3, 2, 1, 0]).unwrap().rank(), 719);
        assert!(ColorPermutation::from_slice(&[0, 0, 1, 2, 3, 4]).is_none());
        assert_eq!(sample_permutation(&mut rng, false), ColorPermutation::identity());
        let a = sample_permutation(&mut ChaCha8Rng::seed_from_u64(9), true);
        let b = sample_permutation(&mut ChaCha8Rng::seed_from_u64(9), true);
        assert_eq!(a, b);
    }

    #[test]
    fn permutation_draws_are_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let draws = 72_000;
        let mut counts = vec![0u32; 720];
        for _ in 0..draws {
            counts[ColorPermutation::sample(&mut rng).rank()] += 1;
        }
        let p = 1.0 / 720.0;
        let mean = draws as f64 * p;
        let sigma = (draws as f64 * p * (1.0 - p)).sqrt();
        let outside = counts.iter().filter(|&&n| (n as f64 - mean).abs() > 3.0 * sigma).count();
        assert!(counts.iter().all(|&n| n > 0));
        // About 0.27% of cells fall outside 3 sigma by chance.
        assert!(outside <= 7, "{outside} permutations outside 3 sigma");
    }
}
