//! Content hashes and seed derivation.

use serde::Serialize;
use sha2::{Digest, Sha256};

/// Hex SHA-256 of the canonical JSON encoding of `value`, truncated to 16 hex chars.
pub fn of<T: Serialize + ?Sized>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("value serializes to JSON");
    of_bytes(&bytes)
}

pub fn of_bytes(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    hex::encode(&digest[..8])
}

/// Derives a child seed from a parent seed and a label.
///
/// The child is the first eight bytes (little endian) of
/// `SHA-256("{parent}:{label}")`. Every stage and every mock sample draws its
/// randomness through this function so that runs are reproducible from one seed.
pub fn derive_seed(parent: u64, label: &str) -> u64 {
    let digest = Sha256::digest(format!("{parent}:{label}").as_bytes());
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}
