//! Frame sequences on disk: a directory of `frame_%06d.pgm` files, optionally
//! ordered by a `manifest.txt` listing one relative filename per line.

use std::path::{Path, PathBuf};

use super::pgm::{read_frame_pgm, write_frame_pgm};
use crate::error::{invalid, Error, Result};
use crate::model::Frame;

pub const MANIFEST_NAME: &str = "manifest.txt";

pub fn frame_file_name(index: usize) -> String {
    format!("frame_{index:06}.pgm")
}

fn parse_manifest(path: &Path) -> Result<Vec<PathBuf>> {
    let base = path.parent().unwrap_or(Path::new("."));
    let text = std::fs::read_to_string(path)?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| base.join(l))
        .collect())
}

/// Frame files of a sequence in playback order.
///
/// `input` may be a manifest file, or a directory holding either a manifest or
/// `frame_*.pgm` files (sorted by name).
pub fn list_frames(input: &Path) -> Result<Vec<PathBuf>> {
    if input.is_file() {
        return parse_manifest(input);
    }
    if !input.is_dir() {
        return Err(invalid(format!("{} is neither a directory nor a manifest", input.display())));
    }
    let manifest = input.join(MANIFEST_NAME);
    if manifest.is_file() {
        return parse_manifest(&manifest);
    }
    let mut files: Vec<PathBuf> = std::fs::read_dir(input)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("frame_") && n.ends_with(".pgm"))
        })
        .collect();
    files.sort();
    Ok(files)
}

/// Reads frames lazily; the frame index is the position in the listing.
#[derive(Debug, Clone)]
pub struct FrameReader {
    files: Vec<PathBuf>,
    next: usize,
}

impl FrameReader {
    pub fn open(input: &Path) -> Result<Self> {
        Ok(Self { files: list_frames(input)?, next: 0 })
    }

    pub fn len(&self) -> usize {
        self.files.len()
    }

    pub fn is_empty(&self) -> bool {
        self.files.is_empty()
    }

    pub fn files(&self) -> &[PathBuf] {
        &self.files
    }
}

impl Iterator for FrameReader {
    type Item = Result<Frame>;

    fn next(&mut self) -> Option<Result<Frame>> {
        let path = self.files.get(self.next)?;
        let index = self.next;
        self.next += 1;
        Some(
            std::fs::read(path)
                .map_err(Error::from)
                .and_then(|bytes| read_frame_pgm(&bytes, index))
                .map_err(|e| match e {
                    Error::Parse { offset, message } => Error::Parse {
                        offset,
                        message: format!("{}: {message}", path.display()),
                    },
                    Error::Io(io) => Error::Io(std::io::Error::new(io.kind(), format!("{}: {io}", path.display()))),
                    other => other,
                }),
        )
    }
}

/// Writes frames as `frame_%06d.pgm` plus a manifest; returns the number written.
pub fn write_sequence(dir: &Path, frames: impl IntoIterator<Item = Frame>) -> Result<usize> {
    std::fs::create_dir_all(dir)?;
    let mut manifest = String::new();
    let mut count = 0;
    for frame in frames {
        let name = frame_file_name(frame.index);
        std::fs::write(dir.join(&name), write_frame_pgm(frame.pixels.as_slice(), frame.height, frame.width))?;
        manifest.push_str(&name);
        manifest.push('\n');
        count += 1;
    }
    std::fs::write(dir.join(MANIFEST_NAME), manifest)?;
    Ok(count)
}
