//! Platform-stable hashing helpers. Everything that derives a seed or an
//! identifier goes through here so outputs are identical across machines.

use sha2::{Digest, Sha256};
use xxhash_rust::xxh3::xxh3_64_with_seed;

/// Hash a sequence of fields. Fields are length-prefixed so that
/// `["ab", "c"]` and `["a", "bc"]` differ.
pub fn hash_fields<I, B>(fields: I, seed: u64) -> u64
where
    I: IntoIterator<Item = B>,
    B: AsRef<[u8]>,
{
    let mut buf = Vec::new();
    for f in fields {
        let f = f.as_ref();
        buf.extend_from_slice(&(f.len() as u64).to_le_bytes());
        buf.extend_from_slice(f);
    }
    xxh3_64_with_seed(&buf, seed)
}

pub fn hash_bytes(bytes: &[u8], seed: u64) -> u64 {
    xxh3_64_with_seed(bytes, seed)
}

/// Seed for a sub-stream, e.g. `(global seed, epoch, topic index)`.
pub fn derive_seed(seed: u64, parts: &[u64]) -> u64 {
    hash_fields(parts.iter().map(|p| p.to_le_bytes()), seed)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}
