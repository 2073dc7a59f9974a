use std::collections::BTreeMap;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

/// Minimal key/value blob backend. Object stores plug in here.
pub trait BlobStore: Send + Sync {
    /// Replace the blob at `key` atomically.
    fn put(&self, key: &str, data: &[u8]) -> io::Result<()>;
    fn get(&self, key: &str) -> io::Result<Vec<u8>>;
    fn list(&self) -> io::Result<Vec<String>>;
}

impl<B: BlobStore + ?Sized> BlobStore for std::sync::Arc<B> {
    fn put(&self, key: &str, data: &[u8]) -> io::Result<()> {
        (**self).put(key, data)
    }

    fn get(&self, key: &str) -> io::Result<Vec<u8>> {
        (**self).get(key)
    }

    fn list(&self) -> io::Result<Vec<String>> {
        (**self).list()
    }
}

impl<B: BlobStore + ?Sized> BlobStore for Box<B> {
    fn put(&self, key: &str, data: &[u8]) -> io::Result<()> {
        (**self).put(key, data)
    }

    fn get(&self, key: &str) -> io::Result<Vec<u8>> {
        (**self).get(key)
    }

    fn list(&self) -> io::Result<Vec<String>> {
        (**self).list()
    }
}

/// Blobs as files in one directory. Writes go through a temp file and a
/// rename so readers never observe a partial file.
#[derive(Debug, Clone)]
pub struct FsBlobStore {
    root: PathBuf,
}

impl FsBlobStore {
    pub fn open(root: impl Into<PathBuf>) -> io::Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root)?;
        Ok(FsBlobStore { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn path(&self, key: &str) -> io::Result<PathBuf> {
        if key.is_empty() || key.contains(['/', '\\']) || key.starts_with('.') {
            return Err(io::Error::new(io::ErrorKind::InvalidInput, format!("bad blob key `{key}`")));
        }
        Ok(self.root.join(key))
    }
}

impl BlobStore for FsBlobStore {
    fn put(&self, key: &str, data: &[u8]) -> io::Result<()> {
        let target = self.path(key)?;
        let tmp = self.root.join(format!(".{key}.tmp"));
        {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(data)?;
            f.sync_data()?;
        }
        fs::rename(&tmp, &target)
    }

    fn get(&self, key: &str) -> io::Result<Vec<u8>> {
        fs::read(self.path(key)?)
    }

    fn list(&self) -> io::Result<Vec<String>> {
        let mut keys = Vec::new();
        for entry in fs::read_dir(&self.root)? {
            let entry = entry?;
            if entry.file_type()?.is_file() {
                if let Some(name) = entry.file_name().to_str() {
                    if !name.starts_with('.') {
                        keys.push(name.to_string());
                    }
                }
            }
        }
        keys.sort();
        Ok(keys)
    }
}

/// In-memory backend for tests and the browser demo.
#[derive(Debug, Default)]
pub struct MemBlobStore {
    blobs: Mutex<BTreeMap<String, Vec<u8>>>,
}

impl MemBlobStore {
    pub fn new() -> Self {
        Self::default()
    }
}

impl BlobStore for MemBlobStore {
    fn put(&self, key: &str, data: &[u8]) -> io::Result<()> {
        self.blobs.lock().unwrap().insert(key.to_string(), data.to_vec());
        Ok(())
    }

    fn get(&self, key: &str) -> io::Result<Vec<u8>> {
        self.blobs
            .lock()
            .unwrap()
            .get(key)
            .cloned()
            .ok_or_else(|| io::Error::new(io::ErrorKind::NotFound, key.to_string()))
    }

    fn list(&self) -> io::Result<Vec<String>> {
        Ok(self.blobs.lock().unwrap().keys().cloned().collect())
    }
}
