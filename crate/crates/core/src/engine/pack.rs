use super::level::{LevelError, LevelSpec};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PackError {
    #[error("{path}: {source}")]
    Level { path: String, source: LevelError },
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("duplicate level id {id} ({path})")]
    DuplicateId { id: u32, path: String },
    #[error("level {0} is not in the pack")]
    Missing(u32),
}

const BUNDLED: &[(&str, &str)] = &[
    ("level01.txt", include_str!("../../levels/pack/level01.txt")),
    ("level02.txt", include_str!("../../levels/pack/level02.txt")),
    ("level03.txt", include_str!("../../levels/pack/level03.txt")),
    ("level04.txt", include_str!("../../levels/pack/level04.txt")),
    ("level05.txt", include_str!("../../levels/pack/level05.txt")),
    ("level06.txt", include_str!("../../levels/pack/level06.txt")),
    ("level07.txt", include_str!("../../levels/pack/level07.txt")),
    ("level08.txt", include_str!("../../levels/pack/level08.txt")),
    ("level09.txt", include_str!("../../levels/pack/level09.txt")),
    ("level10.txt", include_str!("../../levels/pack/level10.txt")),
    ("level11.txt", include_str!("../../levels/pack/level11.txt")),
];

const DESK: &[(&str, &str)] = &[
    ("mini.txt", include_str!("../../levels/desk/mini.txt")),
    ("mini_blocker.txt", include_str!("../../levels/desk/mini_blocker.txt")),
];

/// Bundled training levels.
pub const TRAIN_LEVELS: [u32; 5] = [1, 3, 5, 7, 9];
/// Bundled held-out levels; 11 carries a blocker absent from training.
pub const TEST_LEVELS: [u32; 6] = [2, 4, 6, 8, 10, 11];
/// Id of the 5x5 two-color desk-scale level.
pub const MINI_LEVEL: u32 = 101;
/// Id of the small blocker level used for stuck-policy runs.
pub const MINI_BLOCKER_LEVEL: u32 = 102;

/// Levels keyed by id.
/// One file of a checked directory and its parse outcome.
pub type FileCheck = (PathBuf, Result<LevelSpec, LevelError>);

#[derive(Clone, Debug, Default)]
pub struct LevelPack {
    levels: BTreeMap<u32, LevelSpec>,
}

impl LevelPack {
    fn from_sources<'a>(
        sources: impl IntoIterator<Item = (String, &'a str)>,
    ) -> Result<Self, PackError> {
        let mut pack = LevelPack::default();
        for (path, text) in sources {
            let spec = LevelSpec::parse(text).map_err(|source| PackError::Level { path: path.clone(), source })?;
            pack.insert(spec, &path)?;
        }
        Ok(pack)
    }

    fn insert(&mut self, spec: LevelSpec, path: &str) -> Result<(), PackError> {
        if self.levels.contains_key(&spec.id) {
            return Err(PackError::DuplicateId { id: spec.id, path: path.to_string() });
        }
        self.levels.insert(spec.id, spec);
        Ok(())
    }

    /// The eleven-level pack.
    pub fn bundled() -> LevelPack {
        Self::from_sources(BUNDLED.iter().map(|&(p, t)| (p.to_string(), t)))
            .expect("bundled levels are valid")
    }

    /// The eleven-level pack plus the desk-scale levels.
    pub fn bundled_with_desk() -> LevelPack {
        Self::from_sources(BUNDLED.iter().chain(DESK).map(|&(p, t)| (p.to_string(), t)))
            .expect("bundled levels are valid")
    }

    /// Raw text of every bundled file, for tooling that writes them to disk.
    pub fn bundled_sources() -> impl Iterator<Item = (&'static str, &'static str)> {
        BUNDLED.iter().chain(DESK).copied()
    }

    /// Loads every `*.txt` file in `dir`, failing on the first bad level.
    pub fn load_dir(dir: &Path) -> Result<LevelPack, PackError> {
        let mut pack = LevelPack::default();
        for (path, result) in Self::check_dir(dir)? {
            let spec = result.map_err(|source| PackError::Level { path: path.display().to_string(), source })?;
            pack.insert(spec, &path.display().to_string())?;
        }
        Ok(pack)
    }

    /// Parses every `*.txt` file in `dir` (sorted by name) and reports each
    /// outcome without stopping.
    pub fn check_dir(dir: &Path) -> Result<Vec<FileCheck>, PackError> {
        let io = |source| PackError::Io { path: dir.display().to_string(), source };
        let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
            .map_err(io)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e == "txt"))
            .collect();
        paths.sort();
        paths
            .into_iter()
            .map(|p| {
                let text = std::fs::read_to_string(&p)
                    .map_err(|source| PackError::Io { path: p.display().to_string(), source })?;
                Ok((p, LevelSpec::parse(&text)))
            })
            .collect()
    }

    /// Levels from `other` replace same-id levels here.
    pub fn overlay(&mut self, other: LevelPack) {
        self.levels.extend(other.levels);
    }

    /// Bundled levels, overlaid with `dir` when given.
    pub fn with_dir(dir: Option<&Path>) -> Result<LevelPack, PackError> {
        let mut pack = Self::bundled_with_desk();
        if let Some(dir) = dir {
            pack.overlay(Self::load_dir(dir)?);
        }
        Ok(pack)
    }

    pub fn get(&self, id: u32) -> Result<&LevelSpec, PackError> {
        self.levels.get(&id).ok_or(PackError::Missing(id))
    }

    pub fn ids(&self) -> impl Iterator<Item = u32> + '_ {
        self.levels.keys().copied()
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }
}
