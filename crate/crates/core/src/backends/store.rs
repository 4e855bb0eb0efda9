//! Content-addressed image store: `store/<2-hex>/<digest>.img` plus a
//! sidecar metadata JSON. Regenerated identical bytes dedupe to one entry.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const STORE_REF_PREFIX: &str = "sha256:";

/// Opaque reference to an image. Store-backed refs look like
/// `sha256:<hex digest>`; anything else (dataset keys, URLs, file paths) is
/// passed through untouched.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ImageRef(pub String);

impl ImageRef {
    pub fn new(s: impl Into<String>) -> Self {
        Self(s.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn is_store_ref(&self) -> bool {
        self.0.starts_with(STORE_REF_PREFIX)
    }

    pub fn digest(&self) -> Option<&str> {
        self.0.strip_prefix(STORE_REF_PREFIX)
    }
}

impl std::fmt::Display for ImageRef {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for ImageRef {
    fn from(s: &str) -> Self {
        Self(s.to_string())
    }
}

/// Sidecar metadata written next to every stored image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageMeta {
    pub digest: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub stage: String,
    pub byte_len: usize,
}

#[derive(Debug)]
pub struct ImageStore {
    root: PathBuf,
}

impl ImageStore {
    pub fn open(root: impl Into<PathBuf>) -> io::Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root)?;
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Store bytes under their digest and return the content-addressed
    /// reference. Existing entries are left in place.
    pub fn put(
        &self,
        bytes: &[u8],
        prompt: Option<&str>,
        seed: Option<u64>,
        stage: &str,
    ) -> io::Result<ImageRef> {
        let digest = hex_digest(bytes);
        let dir = self.root.join(&digest[..2]);
        fs::create_dir_all(&dir)?;
        let img_path = dir.join(format!("{digest}.img"));
        if !img_path.exists() {
            write_atomic(&img_path, bytes)?;
            let meta = ImageMeta {
                digest: digest.clone(),
                prompt: prompt.map(str::to_string),
                seed,
                stage: stage.to_string(),
                byte_len: bytes.len(),
            };
            let meta_bytes = serde_json::to_vec_pretty(&meta)?;
            write_atomic(&dir.join(format!("{digest}.json")), &meta_bytes)?;
        }
        Ok(ImageRef(format!("{STORE_REF_PREFIX}{digest}")))
    }

    /// Bytes for a store-backed ref; `None` for foreign refs or missing
    /// entries.
    pub fn get(&self, image: &ImageRef) -> io::Result<Option<Vec<u8>>> {
        let Some(digest) = image.digest() else {
            return Ok(None);
        };
        let path = self.entry_path(digest, "img");
        match fs::read(&path) {
            Ok(bytes) => Ok(Some(bytes)),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e),
        }
    }

    pub fn metadata(&self, image: &ImageRef) -> io::Result<Option<ImageMeta>> {
        let Some(digest) = image.digest() else {
            return Ok(None);
        };
        let path = self.entry_path(digest, "json");
        match fs::read(&path) {
            Ok(bytes) => Ok(Some(serde_json::from_slice(&bytes)?)),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e),
        }
    }

    fn entry_path(&self, digest: &str, ext: &str) -> PathBuf {
        let shard = digest.get(..2).unwrap_or("xx");
        self.root.join(shard).join(format!("{digest}.{ext}"))
    }
}

pub fn hex_digest(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let out = hasher.finalize();
    out.iter().map(|b| format!("{b:02x}")).collect()
}

/// Short digest used for call-log payloads and derived ids.
pub fn short_digest(bytes: &[u8]) -> String {
    hex_digest(bytes)[..16].to_string()
}

fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    use std::sync::atomic::{AtomicU64, Ordering};
    static WRITER_SEQ: AtomicU64 = AtomicU64::new(0);
    // Unique temp name per writer: concurrent shards may race to store the
    // same digest, and both renames must land on identical content.
    let seq = WRITER_SEQ.fetch_add(1, Ordering::Relaxed);
    let tmp = path.with_extension(format!("tmp.{}.{seq}", std::process::id()));
    fs::write(&tmp, bytes)?;
    match fs::rename(&tmp, path) {
        Ok(()) => Ok(()),
        Err(e) => {
            let _ = fs::remove_file(&tmp);
            // A concurrent writer stored the same digest; identical content
            // is already in place.
            if path.exists() {
                Ok(())
            } else {
                Err(e)
            }
        }
    }
}
