use xxhash_rust::xxh64::xxh64;

/// XXH64 with seed 0.
///
/// Every sketch in this crate hashes through this function, so serialized
/// sketches are comparable across processes and platforms.
#[inline]
pub fn hash64(bytes: &[u8]) -> u64 {
    xxh64(bytes, 0)
}
