//! Pluggable file reads, so callers can audit or restrict what a command
//! touches.

use std::collections::BTreeSet;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use crate::error::AccessDenied;

pub trait FileAccess: Sync {
    fn read(&self, path: &Path) -> io::Result<Vec<u8>>;
}

/// Plain filesystem reads.
#[derive(Debug, Clone, Copy, Default)]
pub struct Disk;

impl FileAccess for Disk {
    fn read(&self, path: &Path) -> io::Result<Vec<u8>> {
        std::fs::read(path)
    }
}

/// Records every path read through it, in call order.
#[derive(Debug, Default)]
pub struct Recorder<A> {
    inner: A,
    log: Mutex<Vec<PathBuf>>,
}

impl<A> Recorder<A> {
    pub fn new(inner: A) -> Self {
        Self {
            inner,
            log: Mutex::new(Vec::new()),
        }
    }

    pub fn paths(&self) -> Vec<PathBuf> {
        self.log.lock().unwrap().clone()
    }
}

impl<A: FileAccess> FileAccess for Recorder<A> {
    fn read(&self, path: &Path) -> io::Result<Vec<u8>> {
        self.log.lock().unwrap().push(path.to_path_buf());
        self.inner.read(path)
    }
}

/// Refuses reads of a fixed set of files. Paths are compared after
/// canonicalization, so `a/../b` style aliases are caught too.
pub struct Deny<'a> {
    inner: &'a dyn FileAccess,
    denied: BTreeSet<PathBuf>,
    reason: String,
}

impl<'a> Deny<'a> {
    pub fn new(inner: &'a dyn FileAccess, paths: impl IntoIterator<Item = PathBuf>, reason: impl Into<String>) -> Self {
        Self {
            inner,
            denied: paths.into_iter().map(|p| canonical(&p)).collect(),
            reason: reason.into(),
        }
    }

    pub fn is_denied(&self, path: &Path) -> bool {
        self.denied.contains(&canonical(path))
    }
}

impl FileAccess for Deny<'_> {
    fn read(&self, path: &Path) -> io::Result<Vec<u8>> {
        if self.is_denied(path) {
            return Err(io::Error::new(
                io::ErrorKind::PermissionDenied,
                AccessDenied {
                    path: path.to_path_buf(),
                    reason: self.reason.clone(),
                },
            ));
        }
        self.inner.read(path)
    }
}

fn canonical(p: &Path) -> PathBuf {
    std::fs::canonicalize(p).unwrap_or_else(|_| p.to_path_buf())
}
