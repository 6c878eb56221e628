//! File helpers shared by the subcommands.

use std::fs::File;
use std::path::{Path, PathBuf};

use psl_core::grid::{LabelMask, Volume};
use psl_core::volio::{self, VolioError};
use serde::Serialize;

use crate::error::{CliError, Result};

pub fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("create {}: {e}", dir.display())))
}

/// CSV writer with `\n` record terminators.
pub fn csv_writer(path: &Path) -> Result<csv::Writer<File>> {
    let file = File::create(path).map_err(|e| CliError::Io(format!("create {}: {e}", path.display())))?;
    Ok(csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(file))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_text(path, &text)
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| CliError::Io(format!("write {}: {e}", path.display())))
}

pub fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| CliError::Io(format!("open {}: {e}", path.display())))
}

/// Shortest round-trip decimal; infinities as `inf`/`-inf`.
pub fn num(v: f64) -> String {
    if v == f64::INFINITY {
        "inf".into()
    } else if v == f64::NEG_INFINITY {
        "-inf".into()
    } else {
        v.to_string()
    }
}

/// File name without `.nii` / `.nii.gz`.
pub fn case_id(path: &Path) -> Option<String> {
    let name = path.file_name()?.to_str()?;
    name.strip_suffix(".nii.gz").or_else(|| name.strip_suffix(".nii")).map(str::to_string)
}

pub fn resolve(base: &Path, p: &str) -> PathBuf {
    let p = Path::new(p);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

pub fn load_volume(path: &Path, flip: bool) -> std::result::Result<Volume, VolioError> {
    let mut v = volio::read_volume(path)?;
    if flip {
        v.flip_y();
    }
    Ok(v)
}

pub fn load_mask(path: &Path, flip: bool) -> std::result::Result<LabelMask, VolioError> {
    let mut m = volio::read_label_mask(path)?;
    if flip {
        m.flip_y();
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn case_ids_strip_nifti_suffixes() {
        assert_eq!(case_id(Path::new("a/b/case01.nii.gz")).as_deref(), Some("case01"));
        assert_eq!(case_id(Path::new("case02.nii")).as_deref(), Some("case02"));
        assert_eq!(case_id(Path::new("notes.txt")), None);
    }

    #[test]
    fn numbers_round_trip() {
        assert_eq!(num(f64::INFINITY), "inf");
        assert_eq!(num(0.1), "0.1");
    }
}
