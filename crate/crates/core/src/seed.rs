//! Sub-seed derivation.
//!
//! Every random stream in the workbench descends from one master seed through
//! a hash chain: `derive_seed(parent, label)` is the first eight bytes
//! (little-endian) of `SHA-256(parent.to_le_bytes() || label)`. Labels are
//! slash-separated paths such as `"train/fold=2/repeat=1"`, so a stream's
//! seed depends only on its position in the experiment, never on the order
//! in which streams are created.

use sha2::{Digest, Sha256};

pub fn derive_seed(parent: u64, label: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(parent.to_le_bytes());
    h.update(label.as_bytes());
    let digest = h.finalize();
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

/// Hex SHA-256 of arbitrary bytes; used for config and file fingerprints.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
