use std::hash::{Hash, Hasher};

use std::collections::hash_map::DefaultHasher;

/// Default filter width in bits (2^20).
pub const DEFAULT_BITS: usize = 1 << 20;
/// Default number of probe positions per key.
pub const DEFAULT_HASHES: u32 = 7;

/// A plain Bloom filter over string keys.
///
/// Positions come from double hashing, `h1 + i*h2 mod m`, with both halves
/// taken from SipHash under distinct prefixes.
#[derive(Debug, Clone)]
pub struct BloomFilter {
    words: Vec<u64>,
    bits: usize,
    hashes: u32,
    inserted: usize,
}

impl BloomFilter {
    pub fn new(bits: usize, hashes: u32) -> Self {
        let bits = bits.max(64);
        BloomFilter {
            words: vec![0; bits.div_ceil(64)],
            bits,
            hashes: hashes.max(1),
            inserted: 0,
        }
    }

    /// Sizes a filter for `expected` keys at false-positive rate `fp_rate`.
    pub fn with_rate(expected: usize, fp_rate: f64) -> Self {
        let n = expected.max(1) as f64;
        let ln2 = std::f64::consts::LN_2;
        let bits = (-(n * fp_rate.ln()) / (ln2 * ln2)).ceil() as usize;
        let hashes = ((bits as f64 / n) * ln2).round().max(1.0) as u32;
        Self::new(bits, hashes)
    }

    pub fn bits(&self) -> usize {
        self.bits
    }

    pub fn hashes(&self) -> u32 {
        self.hashes
    }

    /// Number of insertions since creation (duplicates included).
    pub fn inserted(&self) -> usize {
        self.inserted
    }

    /// Expected false-positive rate after `keys` distinct insertions.
    pub fn estimated_fp_rate(&self, keys: usize) -> f64 {
        let k = self.hashes as f64;
        (1.0 - (-k * keys as f64 / self.bits as f64).exp()).powf(k)
    }

    pub fn insert(&mut self, key: &str) {
        let (h1, h2) = hash_pair(key);
        for i in 0..self.hashes as u64 {
            let bit = (h1.wrapping_add(i.wrapping_mul(h2)) % self.bits as u64) as usize;
            self.words[bit / 64] |= 1 << (bit % 64);
        }
        self.inserted += 1;
    }

    pub fn contains(&self, key: &str) -> bool {
        let (h1, h2) = hash_pair(key);
        (0..self.hashes as u64).all(|i| {
            let bit = (h1.wrapping_add(i.wrapping_mul(h2)) % self.bits as u64) as usize;
            self.words[bit / 64] & (1 << (bit % 64)) != 0
        })
    }

    pub fn clear(&mut self) {
        self.words.iter_mut().for_each(|w| *w = 0);
        self.inserted = 0;
    }
}

impl Default for BloomFilter {
    fn default() -> Self {
        BloomFilter::new(DEFAULT_BITS, DEFAULT_HASHES)
    }
}

fn hash_pair(key: &str) -> (u64, u64) {
    let mut a = DefaultHasher::new();
    0u8.hash(&mut a);
    key.hash(&mut a);
    let mut b = DefaultHasher::new();
    1u8.hash(&mut b);
    key.hash(&mut b);
    // odd step so successive probes never collapse onto one position
    (a.finish(), b.finish() | 1)
}
