//! Copybooks stored as files under a directory.
//!
//! `COPY NAME OF LIB` looks for `<root>/<LIB>/<NAME>.cpy` first and then
//! `<root>/<NAME>.cpy`. Names are matched case-insensitively, and a file
//! without an extension is accepted too.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use cblpipe_core::expander::{Copybook, CopybookSource, FetchError};

pub const COPYBOOK_EXTENSIONS: [&str; 2] = ["cpy", ""];

#[derive(Debug, Clone)]
pub struct DirectoryStore {
    root: PathBuf,
}

impl DirectoryStore {
    pub fn new(root: impl Into<PathBuf>) -> io::Result<Self> {
        let root = root.into();
        if !root.is_dir() {
            return Err(io::Error::new(
                io::ErrorKind::NotFound,
                format!("copybook directory {} does not exist", root.display()),
            ));
        }
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }
}

fn stem_and_ext(path: &Path) -> Option<(String, String)> {
    let stem = path.file_stem()?.to_string_lossy().into_owned();
    let ext = path
        .extension()
        .map(|e| e.to_string_lossy().into_owned())
        .unwrap_or_default();
    Some((stem, ext))
}

/// Case-insensitive lookup of a copybook file directly inside `dir`.
fn find_in(dir: &Path, name: &str) -> Option<PathBuf> {
    let entries = fs::read_dir(dir).ok()?;
    let mut best: Option<(usize, PathBuf)> = None;
    for entry in entries.flatten() {
        let path = entry.path();
        if !path.is_file() {
            continue;
        }
        let Some((stem, ext)) = stem_and_ext(&path) else {
            continue;
        };
        if !stem.eq_ignore_ascii_case(name) {
            continue;
        }
        let rank = COPYBOOK_EXTENSIONS
            .iter()
            .position(|e| ext.eq_ignore_ascii_case(e));
        if let Some(rank) = rank {
            if best
                .as_ref()
                .is_none_or(|(r, p)| rank < *r || (rank == *r && path < *p))
            {
                best = Some((rank, path));
            }
        }
    }
    best.map(|(_, p)| p)
}

fn find_dir(root: &Path, name: &str) -> Option<PathBuf> {
    fs::read_dir(root)
        .ok()?
        .flatten()
        .map(|e| e.path())
        .filter(|p| p.is_dir())
        .filter(|p| {
            p.file_name()
                .is_some_and(|n| n.to_string_lossy().eq_ignore_ascii_case(name))
        })
        .min()
}

impl CopybookSource for DirectoryStore {
    fn fetch(&self, name: &str, library: Option<&str>) -> Result<Copybook, FetchError> {
        let name = name.to_ascii_uppercase();
        let qualified = library.and_then(|lib| {
            let lib = lib.to_ascii_uppercase();
            let dir = find_dir(&self.root, &lib)?;
            find_in(&dir, &name).map(|p| (format!("{lib}/{name}"), p))
        });
        let Some((id, path)) =
            qualified.or_else(|| find_in(&self.root, &name).map(|p| (name.clone(), p)))
        else {
            return Err(FetchError::NotFound);
        };
        let bytes = fs::read(&path).map_err(|e| FetchError::Unreadable(e.to_string()))?;
        let text = String::from_utf8(bytes).map_err(|_| {
            FetchError::Unreadable(format!("{} is not valid UTF-8", path.display()))
        })?;
        Ok(Copybook { id, text })
    }
}
