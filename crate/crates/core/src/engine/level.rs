//! Declarative level definitions and their line-oriented text format.
//!
//! A level file looks like this (blank lines are ignored, and `#` starts a
//! comment line in the header):
//!
//! ```text
//! id 3
//! moves 25
//! palette 0 1 2 3
//! goal 0 20
//! goal a 6
//! shape
//! .............        9 rows of 13 chars: '#' cell, '.' no cell
//! pieces
//! .....0?1a....        9 rows of 13 piece codes
//! cover
//! .....a.......        optional: non-clickable pieces stacked on top
//! ```
//!
//! Piece codes: `.` no piece (required where the shape has no cell), `_` empty
//! cell, `?` random palette color, `0`-`5` basic colors, `H`/`V` rockets, `B`
//! bomb, `M` magic, `a`/`b` blockers A/B, `c` blocker C with two layers, `d`
//! blocker C with one layer left. Goal kinds are `0`-`5`, `a`, `b`, `c`.

use super::piece::{Color, GoalKind, Goals, Piece, PieceKind};
use super::{cell_index, HEIGHT, N_CELLS, WIDTH};
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum LevelError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("invalid field `{field}`: {msg}")]
    Invalid { field: String, msg: String },
}

fn parse_err(line: usize, msg: impl Into<String>) -> LevelError {
    LevelError::Parse { line, msg: msg.into() }
}

fn invalid(field: impl Into<String>, msg: impl Into<String>) -> LevelError {
    LevelError::Invalid { field: field.into(), msg: msg.into() }
}

/// What a cell holds at level start.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Slot {
    Empty,
    /// Basic piece of a color drawn from the refill palette on load.
    RandomColor,
    Fixed(Piece),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CellSpec {
    pub exists: bool,
    pub base: Slot,
    pub cover: Option<Piece>,
}

impl CellSpec {
    pub const NONE: CellSpec = CellSpec { exists: false, base: Slot::Empty, cover: None };
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LevelSpec {
    pub id: u32,
    pub move_limit: u32,
    pub palette: Vec<Color>,
    pub goals: Goals,
    /// Row-major, `HEIGHT * WIDTH` entries.
    pub cells: Vec<CellSpec>,
}

pub(crate) fn piece_code(piece: &Piece) -> char {
    match piece.kind {
        PieceKind::Basic(c) => (b'0' + c.index() as u8) as char,
        PieceKind::RocketHorizontal => 'H',
        PieceKind::RocketVertical => 'V',
        PieceKind::Bomb => 'B',
        PieceKind::Magic => 'M',
        PieceKind::BlockerA => 'a',
        PieceKind::BlockerB => 'b',
        PieceKind::BlockerC if piece.layers >= 2 => 'c',
        PieceKind::BlockerC => 'd',
    }
}

pub(crate) fn piece_from_code(ch: char) -> Option<Piece> {
    let kind = match ch {
        '0'..='5' => PieceKind::Basic(Color::new(ch as u8 - b'0')?),
        'H' => PieceKind::RocketHorizontal,
        'V' => PieceKind::RocketVertical,
        'B' => PieceKind::Bomb,
        'M' => PieceKind::Magic,
        'a' => PieceKind::BlockerA,
        'b' => PieceKind::BlockerB,
        'c' => PieceKind::BlockerC,
        'd' => return Some(Piece::with_layers(PieceKind::BlockerC, 1)),
        _ => return None,
    };
    Some(Piece::new(kind))
}

fn goal_code(kind: GoalKind) -> char {
    match kind {
        GoalKind::Color(c) => (b'0' + c.index() as u8) as char,
        GoalKind::BlockerA => 'a',
        GoalKind::BlockerB => 'b',
        GoalKind::BlockerC => 'c',
    }
}

fn goal_from_code(s: &str) -> Option<GoalKind> {
    let mut chars = s.chars();
    let ch = chars.next()?;
    if chars.next().is_some() {
        return None;
    }
    match ch {
        '0'..='5' => Some(GoalKind::Color(Color::new(ch as u8 - b'0')?)),
        'a' => Some(GoalKind::BlockerA),
        'b' => Some(GoalKind::BlockerB),
        'c' => Some(GoalKind::BlockerC),
        _ => None,
    }
}

fn parse_color(s: &str) -> Option<Color> {
    s.parse::<u8>().ok().and_then(Color::new)
}

#[derive(PartialEq)]
enum Section {
    Header,
    Shape,
    Pieces,
    Cover,
}

impl LevelSpec {
    /// Parses and validates a level file.
    pub fn parse(text: &str) -> Result<LevelSpec, LevelError> {
        let mut id = None;
        let mut moves = None;
        let mut palette = None;
        let mut goals = Goals::default();
        let mut shape: Vec<(usize, &str)> = Vec::new();
        let mut pieces: Vec<(usize, &str)> = Vec::new();
        let mut cover: Vec<(usize, &str)> = Vec::new();
        let mut section = Section::Header;

        for (i, raw) in text.lines().enumerate() {
            let lineno = i + 1;
            let line = raw.trim();
            if line.is_empty() || (section == Section::Header && line.starts_with('#')) {
                continue;
            }
            match line {
                "shape" => {
                    section = Section::Shape;
                    continue;
                }
                "pieces" => {
                    section = Section::Pieces;
                    continue;
                }
                "cover" => {
                    section = Section::Cover;
                    continue;
                }
                _ => {}
            }
            match section {
                Section::Shape => shape.push((lineno, line)),
                Section::Pieces => pieces.push((lineno, line)),
                Section::Cover => cover.push((lineno, line)),
                Section::Header => {
                    let mut words = line.split_whitespace();
                    let key = words.next().unwrap_or_default();
                    let rest: Vec<&str> = words.collect();
                    match key {
                        "id" => {
                            let v = rest.first().and_then(|s| s.parse().ok());
                            id = Some(v.ok_or_else(|| parse_err(lineno, "expected `id <integer>`"))?);
                        }
                        "moves" => {
                            let v = rest.first().and_then(|s| s.parse().ok());
                            moves =
                                Some(v.ok_or_else(|| parse_err(lineno, "expected `moves <integer>`"))?);
                        }
                        "palette" => {
                            let colors: Option<Vec<Color>> = rest.iter().map(|s| parse_color(s)).collect();
                            palette = Some(
                                colors.ok_or_else(|| parse_err(lineno, "palette colors must be 0-5"))?,
                            );
                        }
                        "goal" => {
                            let [kind, count] = rest[..] else {
                                return Err(parse_err(lineno, "expected `goal <kind> <count>`"));
                            };
                            let kind = goal_from_code(kind)
                                .ok_or_else(|| parse_err(lineno, format!("unknown goal kind `{kind}`")))?;
                            let count: u32 = count
                                .parse()
                                .map_err(|_| parse_err(lineno, format!("bad goal count `{count}`")))?;
                            if goals.get(kind) != 0 {
                                return Err(parse_err(lineno, "duplicate goal kind"));
                            }
                            goals.set(kind, count);
                        }
                        other => return Err(parse_err(lineno, format!("unknown header key `{other}`"))),
                    }
                }
            }
        }

        let id = id.ok_or_else(|| invalid("id", "missing"))?;
        let move_limit = moves.ok_or_else(|| invalid("moves", "missing"))?;
        let palette = palette.ok_or_else(|| invalid("palette", "missing"))?;

        let check_rows = |rows: &[(usize, &str)], name: &str| -> Result<(), LevelError> {
            if rows.len() != HEIGHT {
                return Err(invalid(name, format!("expected {HEIGHT} rows, found {}", rows.len())));
            }
            for &(lineno, row) in rows {
                if row.chars().count() != WIDTH {
                    return Err(parse_err(lineno, format!("{name} row must have {WIDTH} columns")));
                }
            }
            Ok(())
        };
        check_rows(&shape, "shape")?;
        check_rows(&pieces, "pieces")?;
        if !cover.is_empty() {
            check_rows(&cover, "cover")?;
        }

        let mut cells = vec![CellSpec::NONE; N_CELLS];
        for r in 0..HEIGHT {
            let (shape_line, shape_row) = shape[r];
            let (piece_line, piece_row) = pieces[r];
            let cover_row: Vec<char> = match cover.get(r) {
                Some(&(_, row)) => row.chars().collect(),
                None => vec!['.'; WIDTH],
            };
            for (c, (s, p)) in shape_row.chars().zip(piece_row.chars()).enumerate() {
                let exists = match s {
                    '#' => true,
                    '.' => false,
                    other => return Err(parse_err(shape_line, format!("bad shape char `{other}`"))),
                };
                let base = match p {
                    '.' => Slot::Empty,
                    '_' => Slot::Empty,
                    '?' => Slot::RandomColor,
                    other => Slot::Fixed(
                        piece_from_code(other)
                            .ok_or_else(|| parse_err(piece_line, format!("bad piece code `{other}`")))?,
                    ),
                };
                if exists == (p == '.') {
                    return Err(parse_err(
                        piece_line,
                        format!("column {c}: piece `{p}` disagrees with shape `{s}`"),
                    ));
                }
                let cover = match cover_row[c] {
                    '.' => None,
                    other => Some(piece_from_code(other).ok_or_else(|| {
                        invalid("cover", format!("bad cover code `{other}` at ({r},{c})"))
                    })?),
                };
                cells[cell_index(r, c)] = CellSpec { exists, base, cover };
            }
        }

        let spec = LevelSpec { id, move_limit, palette, goals, cells };
        spec.validate()?;
        Ok(spec)
    }

    /// Canonical text form; `parse(serialize(x)) == x`.
    pub fn serialize(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "id {}", self.id);
        let _ = writeln!(out, "moves {}", self.move_limit);
        let palette: Vec<String> = self.palette.iter().map(|c| c.to_string()).collect();
        let _ = writeln!(out, "palette {}", palette.join(" "));
        for (kind, n) in self.goals.iter() {
            let _ = writeln!(out, "goal {} {}", goal_code(kind), n);
        }
        out.push_str("shape\n");
        for r in 0..HEIGHT {
            for c in 0..WIDTH {
                out.push(if self.cells[cell_index(r, c)].exists { '#' } else { '.' });
            }
            out.push('\n');
        }
        out.push_str("pieces\n");
        for r in 0..HEIGHT {
            for c in 0..WIDTH {
                let cell = &self.cells[cell_index(r, c)];
                out.push(match (cell.exists, &cell.base) {
                    (false, _) => '.',
                    (true, Slot::Empty) => '_',
                    (true, Slot::RandomColor) => '?',
                    (true, Slot::Fixed(p)) => piece_code(p),
                });
            }
            out.push('\n');
        }
        if self.cells.iter().any(|c| c.cover.is_some()) {
            out.push_str("cover\n");
            for r in 0..HEIGHT {
                for c in 0..WIDTH {
                    out.push(self.cells[cell_index(r, c)].cover.as_ref().map_or('.', piece_code));
                }
                out.push('\n');
            }
        }
        out
    }

    /// Checks the structural invariants and goal reachability.
    pub fn validate(&self) -> Result<(), LevelError> {
        if self.cells.len() != N_CELLS {
            return Err(invalid("cells", format!("expected {N_CELLS} cells")));
        }
        if self.move_limit == 0 {
            return Err(invalid("moves", "move limit must be positive"));
        }
        if self.palette.is_empty() {
            return Err(invalid("palette", "refill palette is empty"));
        }
        for (i, a) in self.palette.iter().enumerate() {
            if self.palette[..i].contains(a) {
                return Err(invalid("palette", format!("color {a} listed twice")));
            }
        }
        if self.goals.is_done() {
            return Err(invalid("goal", "level has no collect goals"));
        }
        for (i, cell) in self.cells.iter().enumerate() {
            let (r, c) = (i / WIDTH, i % WIDTH);
            if !cell.exists && (cell.base != Slot::Empty || cell.cover.is_some()) {
                return Err(invalid("pieces", format!("piece outside board shape at ({r},{c})")));
            }
            if let Some(cover) = cell.cover {
                if cover.kind.is_clickable() {
                    return Err(invalid("cover", format!("clickable cover piece at ({r},{c})")));
                }
                let under_clickable = match cell.base {
                    Slot::RandomColor => true,
                    Slot::Fixed(p) => p.kind.is_clickable(),
                    Slot::Empty => false,
                };
                if !under_clickable {
                    return Err(invalid(
                        "cover",
                        format!("cover at ({r},{c}) must sit on a clickable piece"),
                    ));
                }
            }
        }
        for (kind, count) in self.goals.iter() {
            let available = self.count_initial(kind);
            match kind {
                GoalKind::Color(c) => {
                    if self.palette.contains(&c) {
                        continue;
                    }
                    if available == 0 {
                        return Err(invalid(
                            "goal",
                            format!("color {c} is neither on the board nor in the palette"),
                        ));
                    }
                    if available < count {
                        return Err(invalid(
                            "goal",
                            format!("goal needs {count} of color {c} but only {available} can ever exist"),
                        ));
                    }
                }
                _ => {
                    if available < count {
                        return Err(invalid(
                            "goal",
                            format!(
                                "goal needs {count} of blocker `{}` but the board holds {available}",
                                goal_code(kind)
                            ),
                        ));
                    }
                }
            }
        }
        Ok(())
    }

    fn count_initial(&self, kind: GoalKind) -> u32 {
        let mut n = 0;
        for cell in &self.cells {
            if let Slot::Fixed(p) = cell.base {
                n += u32::from(p.kind.goal_kind() == Some(kind));
            }
            if let Some(p) = cell.cover {
                n += u32::from(p.kind.goal_kind() == Some(kind));
            }
        }
        n
    }

    /// Relabels every fixed color, goal color and palette entry. Palette
    /// order is preserved so refill draws map through the same function.
    pub fn permute_colors(&self, f: impl Fn(Color) -> Color + Copy) -> LevelSpec {
        let map_piece = |p: Piece| Piece { kind: p.kind.map_color(f), ..p };
        LevelSpec {
            id: self.id,
            move_limit: self.move_limit,
            palette: self.palette.iter().map(|&c| f(c)).collect(),
            goals: self.goals.map_colors(f),
            cells: self
                .cells
                .iter()
                .map(|cell| CellSpec {
                    exists: cell.exists,
                    base: match cell.base {
                        Slot::Fixed(p) => Slot::Fixed(map_piece(p)),
                        other => other,
                    },
                    cover: cell.cover.map(map_piece),
                })
                .collect(),
        }
    }

    /// Cells holding a board cell.
    pub fn cell_count(&self) -> usize {
        self.cells.iter().filter(|c| c.exists).count()
    }
}
