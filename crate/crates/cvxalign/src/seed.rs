//! Counter-based seed derivation.
//!
//! A single root seed fans out into independent per-purpose streams so that
//! changing, say, the pattern-sampling draw count never perturbs the
//! train/eval split. Derivation hashes the root seed together with a label,
//! which keeps streams decoupled and reproducible.

use sha2::{Digest, Sha256};

/// Derive a child seed from `root` for the given purpose label.
pub fn derive_seed(root: u64, label: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(root.to_le_bytes());
    hasher.update(label.as_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("sha256 yields 32 bytes"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stable_across_calls() {
        assert_eq!(derive_seed(7, "patterns"), derive_seed(7, "patterns"));
    }

    #[test]
    fn labels_decouple_streams() {
        assert_ne!(derive_seed(7, "patterns"), derive_seed(7, "split"));
        assert_ne!(derive_seed(7, "patterns"), derive_seed(8, "patterns"));
    }
}
