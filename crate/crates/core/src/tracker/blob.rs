use std::io;
use std::path::{Component, Path, PathBuf};

/// Minimal object store: `uri`s are `/`-separated keys.
pub trait BlobStore: Send + Sync {
    fn read(&self, uri: &str) -> io::Result<Vec<u8>>;
    /// Keys under `prefix`, sorted.
    fn list(&self, prefix: &str) -> io::Result<Vec<String>>;
}

/// A directory tree; keys are paths relative to the root.
#[derive(Debug, Clone)]
pub struct LocalBlobStore {
    root: PathBuf,
}

impl LocalBlobStore {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn resolve(&self, uri: &str) -> io::Result<PathBuf> {
        let rel = Path::new(uri.trim_start_matches('/'));
        if rel.components().any(|c| !matches!(c, Component::Normal(_) | Component::CurDir)) {
            return Err(io::Error::new(io::ErrorKind::InvalidInput, format!("key escapes the store: {uri}")));
        }
        Ok(self.root.join(rel))
    }
}

impl BlobStore for LocalBlobStore {
    fn read(&self, uri: &str) -> io::Result<Vec<u8>> {
        std::fs::read(self.resolve(uri)?)
    }

    fn list(&self, prefix: &str) -> io::Result<Vec<String>> {
        let start = self.resolve(prefix)?;
        let mut out = Vec::new();
        let mut stack = vec![start];
        while let Some(dir) = stack.pop() {
            let entries = match std::fs::read_dir(&dir) {
                Ok(e) => e,
                Err(e) if e.kind() == io::ErrorKind::NotFound => continue,
                Err(e) => return Err(e),
            };
            for entry in entries {
                let entry = entry?;
                let path = entry.path();
                if entry.file_type()?.is_dir() {
                    stack.push(path);
                } else if let Ok(rel) = path.strip_prefix(&self.root) {
                    let key: Vec<_> = rel.components().map(|c| c.as_os_str().to_string_lossy()).collect();
                    out.push(key.join("/"));
                }
            }
        }
        out.sort();
        Ok(out)
    }
}
