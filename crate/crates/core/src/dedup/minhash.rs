use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use xxhash_rust::xxh3::{xxh3_64, xxh3_64_with_seed};

pub const NUM_PERM: usize = 128;
pub const BANDS: usize = 8;
pub const ROWS_PER_BAND: usize = 16;
pub const DEFAULT_SHINGLE_K: usize = 3;

const _: () = assert!(BANDS * ROWS_PER_BAND == NUM_PERM);

/// Mersenne prime 2^61 - 1, the modulus of the permutation family.
const P61: u64 = (1 << 61) - 1;

/// Hashed word k-grams of a text, sorted and unique.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ShingleSet {
    pub k: usize,
    shingles: Vec<u64>,
}

impl ShingleSet {
    pub fn from_hashes(k: usize, mut hashes: Vec<u64>) -> Self {
        hashes.sort_unstable();
        hashes.dedup();
        Self { k, shingles: hashes }
    }

    pub fn as_slice(&self) -> &[u64] {
        &self.shingles
    }

    pub fn len(&self) -> usize {
        self.shingles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shingles.is_empty()
    }

    /// Exact Jaccard similarity; two empty sets count as identical.
    pub fn jaccard(&self, other: &ShingleSet) -> f64 {
        let (a, b) = (&self.shingles, &other.shingles);
        if a.is_empty() && b.is_empty() {
            return 1.0;
        }
        let (mut i, mut j, mut inter) = (0, 0, 0usize);
        while i < a.len() && j < b.len() {
            match a[i].cmp(&b[j]) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    inter += 1;
                    i += 1;
                    j += 1;
                }
            }
        }
        inter as f64 / (a.len() + b.len() - inter) as f64
    }
}

/// Lowercased sliding windows of `k` words, each hashed to 64 bits.
pub fn shingle(text: &str, k: usize) -> ShingleSet {
    assert!(k >= 1, "shingle width must be positive");
    let words: Vec<String> = text.split_whitespace().map(str::to_lowercase).collect();
    if words.len() < k {
        return ShingleSet { k, shingles: Vec::new() };
    }
    let mut buf = String::new();
    let hashes = words
        .windows(k)
        .map(|w| {
            buf.clear();
            for (i, word) in w.iter().enumerate() {
                if i > 0 {
                    buf.push(' ');
                }
                buf.push_str(word);
            }
            xxh3_64(buf.as_bytes())
        })
        .collect();
    ShingleSet::from_hashes(k, hashes)
}

/// `NUM_PERM` hash functions `h(x) = (a*x + b) mod (2^61 - 1)`, drawn from a seed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PermutationFamily {
    seed: u64,
    a: Vec<u64>,
    b: Vec<u64>,
}

impl PermutationFamily {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = (0..NUM_PERM).map(|_| rng.gen_range(1..P61)).collect();
        let b = (0..NUM_PERM).map(|_| rng.gen_range(0..P61)).collect();
        Self { seed, a, b }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    #[inline]
    fn apply(&self, i: usize, x: u64) -> u64 {
        let y = self.a[i] as u128 * x as u128 + self.b[i] as u128;
        let r = (y & P61 as u128) + (y >> 61);
        let r = (r & P61 as u128) + (r >> 61);
        let r = r as u64;
        if r >= P61 {
            r - P61
        } else {
            r
        }
    }

    /// Signature of a non-empty shingle set.
    pub fn signature(&self, shingles: &ShingleSet) -> MinHashSignature {
        let mut values = [u64::MAX; NUM_PERM];
        for &s in shingles.as_slice() {
            let x = s % P61;
            for (i, v) in values.iter_mut().enumerate() {
                let h = self.apply(i, x);
                if h < *v {
                    *v = h;
                }
            }
        }
        MinHashSignature { values, seed: self.seed }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MinHashSignature {
    pub values: [u64; NUM_PERM],
    pub seed: u64,
}

/// Signature under a fresh permutation family; prefer reusing a
/// [`PermutationFamily`] when hashing many sets.
pub fn minhash_signature(shingles: &ShingleSet, seed: u64) -> MinHashSignature {
    PermutationFamily::new(seed).signature(shingles)
}

/// Fraction of positions where the signatures agree.
pub fn estimate_jaccard(a: &MinHashSignature, b: &MinHashSignature) -> f64 {
    debug_assert_eq!(a.seed, b.seed, "signatures from different permutation families");
    let eq = a.values.iter().zip(&b.values).filter(|(x, y)| x == y).count();
    eq as f64 / NUM_PERM as f64
}

fn band_hash(sig: &MinHashSignature, band: usize) -> u64 {
    let mut bytes = [0u8; ROWS_PER_BAND * 8];
    for (i, v) in sig.values[band * ROWS_PER_BAND..(band + 1) * ROWS_PER_BAND].iter().enumerate() {
        bytes[i * 8..i * 8 + 8].copy_from_slice(&v.to_le_bytes());
    }
    xxh3_64_with_seed(&bytes, band as u64)
}

/// Banded LSH over MinHash signatures.
#[derive(Debug, Clone, Default)]
pub struct LshIndex {
    tables: Vec<HashMap<u64, Vec<u32>>>,
}

impl LshIndex {
    pub fn new() -> Self {
        Self { tables: vec![HashMap::new(); BANDS] }
    }

    pub fn insert(&mut self, id: u32, sig: &MinHashSignature) {
        if self.tables.is_empty() {
            self.tables = vec![HashMap::new(); BANDS];
        }
        for (band, table) in self.tables.iter_mut().enumerate() {
            table.entry(band_hash(sig, band)).or_default().push(id);
        }
    }

    /// Ids sharing at least one band bucket with `sig`, sorted and unique.
    pub fn candidates(&self, sig: &MinHashSignature) -> Vec<u32> {
        let mut out = Vec::new();
        for (band, table) in self.tables.iter().enumerate() {
            if let Some(ids) = table.get(&band_hash(sig, band)) {
                out.extend_from_slice(ids);
            }
        }
        out.sort_unstable();
        out.dedup();
        out
    }
}

/// Convenience form of [`LshIndex::candidates`].
pub fn lsh_candidates(index: &LshIndex, signature: &MinHashSignature) -> Vec<u32> {
    index.candidates(signature)
}
