//! Lowercasing tokenizer over a hashed vocabulary.
//!
//! Tokens are maximal alphanumeric runs of the lowercased text; each token
//! maps to a bucket via FNV-1a 64 over its UTF-8 bytes, mod the vocabulary
//! size. The hash is pinned by the algorithm, not a per-process hasher, so
//! bucket ids are stable across runs and platforms.

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// FNV-1a, 64-bit.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash = FNV_OFFSET;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(FNV_PRIME);
    }
    hash
}

/// Lowercased alphanumeric tokens in input order.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

/// Token bucket ids for `text` under a vocabulary of `vocab_size` buckets.
pub fn token_ids(text: &str, vocab_size: usize) -> Vec<usize> {
    tokenize(text)
        .iter()
        .map(|t| (fnv1a64(t.as_bytes()) % vocab_size as u64) as usize)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fnv1a_reference_vectors() {
        // Published FNV-1a 64 test vectors.
        assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a64(b"foobar"), 0x85944171f73967e8);
    }

    #[test]
    fn tokenizer_lowercases_and_splits_on_punctuation() {
        assert_eq!(
            tokenize("The Shawshank Redemption (1994), Thriller!"),
            vec!["the", "shawshank", "redemption", "1994", "thriller"]
        );
        assert!(tokenize("  ...  ").is_empty());
    }

    #[test]
    fn bucket_ids_are_stable() {
        let a = token_ids("query: Whiplash, an item about Drama", 64);
        let b = token_ids("query: Whiplash, an item about Drama", 64);
        assert_eq!(a, b);
        assert!(a.iter().all(|&i| i < 64));
        // Frozen spot value; a change means the hash contract broke.
        assert_eq!(
            token_ids("drama", 1 << 15),
            vec![(fnv1a64(b"drama") % (1 << 15)) as usize]
        );
    }
}
