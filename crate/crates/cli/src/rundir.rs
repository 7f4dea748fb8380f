//! Staged run directories: outputs go to `<out>/tmp` and are moved into
//! `<out>` only once the command has succeeded.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::CliResult;

pub struct RunDir {
    out: PathBuf,
    tmp: PathBuf,
}

pub const STAGING: &str = "tmp";
pub const LOG_FILE: &str = "run.log";

impl RunDir {
    /// Creates `out` if needed and an empty staging directory inside it.
    pub fn create(out: &Path) -> CliResult<Self> {
        fs::create_dir_all(out)?;
        let tmp = out.join(STAGING);
        if tmp.exists() {
            fs::remove_dir_all(&tmp)?;
        }
        fs::create_dir_all(&tmp)?;
        Ok(Self {
            out: out.to_path_buf(),
            tmp,
        })
    }

    /// Path of a staged output.
    pub fn stage(&self, name: &str) -> PathBuf {
        self.tmp.join(name)
    }

    /// Final location of an output once promoted.
    pub fn final_path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    pub fn write(&self, name: &str, bytes: impl AsRef<[u8]>) -> CliResult<()> {
        fs::write(self.stage(name), bytes)?;
        Ok(())
    }

    /// Moves every staged entry into the run directory, replacing older
    /// outputs of the same name, then removes the staging directory.
    pub fn promote(self) -> CliResult<()> {
        let mut entries: Vec<PathBuf> = fs::read_dir(&self.tmp)?.map(|e| e.map(|e| e.path())).collect::<Result<_, _>>()?;
        entries.sort();
        for src in entries {
            let dst = self.out.join(src.file_name().expect("entry has a name"));
            if dst.is_dir() {
                fs::remove_dir_all(&dst)?;
            }
            fs::rename(&src, &dst)?;
        }
        fs::remove_dir(&self.tmp)?;
        Ok(())
    }
}
