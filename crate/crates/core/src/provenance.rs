//! Training-set fingerprints attached to every fitted model.

use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Provenance {
    pub train_hash: [u8; 32],
}

impl Provenance {
    /// SHA-256 over the sorted, newline-joined training ids.
    pub fn of_ids<S: AsRef<str>>(ids: &[S]) -> Self {
        let mut sorted: Vec<&str> = ids.iter().map(|s| s.as_ref()).collect();
        sorted.sort_unstable();
        sorted.dedup();
        let mut hasher = Sha256::new();
        for id in sorted {
            hasher.update(id.as_bytes());
            hasher.update(b"\n");
        }
        Provenance {
            train_hash: hasher.finalize().into(),
        }
    }

    /// Unknown training set (models built outside a tracked split).
    pub fn unknown() -> Self {
        Provenance { train_hash: [0; 32] }
    }

    pub fn hex(&self) -> String {
        hex::encode(self.train_hash)
    }
}
