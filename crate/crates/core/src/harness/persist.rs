//! Output-directory ownership and artifact writes.
//!
//! Artifacts are written to `<name>.partial` and renamed into place, so an
//! interrupted run leaves only `.partial` files behind. A lock file keeps a
//! second process out of the same output directory.

use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

pub const LOCK_FILE: &str = ".patchkit.lock";

pub fn partial_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".partial");
    path.with_file_name(name)
}

/// Exclusive claim on an output directory, released on drop.
#[derive(Debug)]
pub struct OutputDir {
    root: PathBuf,
    lock: PathBuf,
    force: bool,
}

impl OutputDir {
    /// Creates `root` if needed and takes its lock. With `force`, existing
    /// artifacts may be overwritten.
    pub fn open(root: &Path, force: bool) -> Result<Self> {
        fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
        let lock = root.join(LOCK_FILE);
        let mut f = OpenOptions::new().write(true).create_new(true).open(&lock).map_err(|e| {
            if e.kind() == std::io::ErrorKind::AlreadyExists {
                Error::Config(format!(
                    "{} is locked by another run (remove {} if that run is gone)",
                    root.display(),
                    lock.display()
                ))
            } else {
                Error::io(&lock, e)
            }
        })?;
        writeln!(f, "{}", std::process::id()).map_err(|e| Error::io(&lock, e))?;
        Ok(OutputDir {
            root: root.to_path_buf(),
            lock,
            force,
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    /// Refuses to replace an existing artifact unless forced.
    pub fn check_writable(&self, name: &str) -> Result<PathBuf> {
        let p = self.path(name);
        if p.exists() && !self.force {
            return Err(Error::Config(format!(
                "{} already exists; pass --force to overwrite",
                p.display()
            )));
        }
        Ok(p)
    }

    /// Writes an artifact through a `.partial` file.
    pub fn write(&self, name: &str, bytes: &[u8]) -> Result<PathBuf> {
        self.write_with(name, |f| f.write_all(bytes).map_err(|e| Error::io(name, e)))
    }

    /// Like [`OutputDir::write`] with a streaming writer.
    pub fn write_with(&self, name: &str, fill: impl FnOnce(&mut File) -> Result<()>) -> Result<PathBuf> {
        let p = self.check_writable(name)?;
        if let Some(parent) = p.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let partial = partial_path(&p);
        let mut f = File::create(&partial).map_err(|e| Error::io(&partial, e))?;
        fill(&mut f)?;
        f.sync_all().map_err(|e| Error::io(&partial, e))?;
        drop(f);
        fs::rename(&partial, &p).map_err(|e| Error::io(&p, e))?;
        Ok(p)
    }

    /// Moves an already-written file at `partial` into place as `name`.
    pub fn commit(&self, partial: &Path, name: &str) -> Result<PathBuf> {
        let p = self.check_writable(name)?;
        fs::rename(partial, &p).map_err(|e| Error::io(&p, e))?;
        Ok(p)
    }
}

impl Drop for OutputDir {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.lock);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lock_is_exclusive_and_released() {
        let dir = tempfile::tempdir().unwrap();
        let a = OutputDir::open(dir.path(), false).unwrap();
        assert!(OutputDir::open(dir.path(), false).is_err());
        drop(a);
        OutputDir::open(dir.path(), false).unwrap();
    }

    #[test]
    fn overwrite_needs_force() {
        let dir = tempfile::tempdir().unwrap();
        {
            let out = OutputDir::open(dir.path(), false).unwrap();
            out.write("a.txt", b"1").unwrap();
            assert!(out.write("a.txt", b"2").is_err());
            assert!(!partial_path(&out.path("a.txt")).exists());
        }
        let out = OutputDir::open(dir.path(), true).unwrap();
        out.write("a.txt", b"2").unwrap();
        assert_eq!(fs::read(out.path("a.txt")).unwrap(), b"2");
    }

    #[test]
    fn failed_write_leaves_partial_marker() {
        let dir = tempfile::tempdir().unwrap();
        let out = OutputDir::open(dir.path(), false).unwrap();
        let r = out.write_with("b.csv", |f| {
            f.write_all(b"half").unwrap();
            Err(Error::Config("boom".into()))
        });
        assert!(r.is_err());
        assert!(!out.path("b.csv").exists());
        assert!(partial_path(&out.path("b.csv")).exists());
    }
}
