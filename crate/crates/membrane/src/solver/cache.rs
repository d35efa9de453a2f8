//! Content-addressed binary cache for solver products.
//!
//! Layout: `<root>/<fingerprint>/<op>.bin`, each file carrying a versioned
//! header and a SHA-256 checksum of the payload. A miss is never an error;
//! IO failures and corruption silently degrade to recomputation.

use std::io::{Read, Write};
use std::path::PathBuf;

use sha2::{Digest, Sha256};

const MAGIC: &[u8; 4] = b"MEMC";
const VERSION: u16 = 1;

#[derive(Debug, Clone)]
pub struct Cache {
    root: Option<PathBuf>,
}

impl Cache {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self {
            root: Some(root.into()),
        }
    }

    /// A cache that never hits and never stores (the `--no-cache` mode).
    pub fn disabled() -> Self {
        Self { root: None }
    }

    pub fn is_enabled(&self) -> bool {
        self.root.is_some()
    }

    fn path(&self, fingerprint: &str, op: &str) -> Option<PathBuf> {
        let root = self.root.as_ref()?;
        let clean = |s: &str| -> String {
            s.chars()
                .map(|c| {
                    if c.is_ascii_alphanumeric() || c == '-' || c == '.' || c == '_' {
                        c
                    } else {
                        '_'
                    }
                })
                .collect()
        };
        Some(root.join(clean(fingerprint)).join(format!("{}.bin", clean(op))))
    }

    /// Fetch a payload; any mismatch (missing, version, checksum) is a miss.
    pub fn get(&self, fingerprint: &str, op: &str) -> Option<Vec<u8>> {
        let path = self.path(fingerprint, op)?;
        let mut f = std::fs::File::open(path).ok()?;
        let mut magic = [0u8; 4];
        f.read_exact(&mut magic).ok()?;
        if &magic != MAGIC {
            return None;
        }
        let mut b2 = [0u8; 2];
        f.read_exact(&mut b2).ok()?;
        if u16::from_le_bytes(b2) != VERSION {
            return None;
        }
        let mut b8 = [0u8; 8];
        f.read_exact(&mut b8).ok()?;
        let len = u64::from_le_bytes(b8) as usize;
        let mut checksum = [0u8; 32];
        f.read_exact(&mut checksum).ok()?;
        let mut payload = vec![0u8; len];
        f.read_exact(&mut payload).ok()?;
        let digest = Sha256::digest(&payload);
        if digest[..] != checksum[..] {
            return None;
        }
        Some(payload)
    }

    /// Store a payload; failures are swallowed (the cache is advisory).
    pub fn put(&self, fingerprint: &str, op: &str, payload: &[u8]) {
        let Some(path) = self.path(fingerprint, op) else {
            return;
        };
        let write = || -> std::io::Result<()> {
            if let Some(dir) = path.parent() {
                std::fs::create_dir_all(dir)?;
            }
            let tmp = path.with_extension("tmp");
            {
                let mut f = std::io::BufWriter::new(std::fs::File::create(&tmp)?);
                f.write_all(MAGIC)?;
                f.write_all(&VERSION.to_le_bytes())?;
                f.write_all(&(payload.len() as u64).to_le_bytes())?;
                f.write_all(&Sha256::digest(payload))?;
                f.write_all(payload)?;
            }
            std::fs::rename(tmp, &path)?;
            Ok(())
        };
        let _ = write();
    }

    /// Fetch a cached `f64` vector.
    pub fn get_f64s(&self, fingerprint: &str, op: &str) -> Option<Vec<f64>> {
        let bytes = self.get(fingerprint, op)?;
        if bytes.len() % 8 != 0 {
            return None;
        }
        Some(
            bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        )
    }

    /// Store an `f64` vector.
    pub fn put_f64s(&self, fingerprint: &str, op: &str, values: &[f64]) {
        let mut bytes = Vec::with_capacity(values.len() * 8);
        for v in values {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        self.put(fingerprint, op, &bytes);
    }
}
