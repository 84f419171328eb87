//! Hashed n-gram featurization of headline text.
//!
//! Lowercased word unigrams and bigrams are hashed into a fixed number of
//! buckets; bucket counts are L2-normalized. The hash is a seeded FNV-1a
//! so vectors are identical across runs, platforms and compilers for the
//! same text and seed.

use rayon::prelude::*;

use crate::data::DatasetSplit;

/// Default number of hash buckets.
pub const DEFAULT_FEATURE_DIM: usize = 4096;

/// Dense, L2-normalized feature vector. The zero vector only occurs for
/// text with no tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    values: Vec<f64>,
}

impl FeatureVector {
    /// Wrap an arbitrary dense vector. No normalization is applied; callers
    /// that want the hashed-n-gram invariants should use [`featurize`].
    pub fn from_values(values: Vec<f64>) -> Self {
        FeatureVector { values }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn l2_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// Seeded FNV-1a over the parts, with a separator byte between parts so
/// ("ab","c") and ("a","bc") hash differently.
fn hash_parts(seed: u64, parts: &[&str]) -> u64 {
    let mut h = FNV_OFFSET ^ seed.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    for part in parts {
        for b in part.bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(FNV_PRIME);
        }
        h ^= 0xff;
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    for c in text.chars() {
        if c.is_alphanumeric() {
            current.extend(c.to_lowercase());
        } else if !current.is_empty() {
            tokens.push(std::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    tokens
}

pub(crate) fn unigram_bucket(token: &str, dim: usize, hash_seed: u64) -> usize {
    (hash_parts(hash_seed, &["u", token]) % dim as u64) as usize
}

pub(crate) fn bigram_bucket(a: &str, b: &str, dim: usize, hash_seed: u64) -> usize {
    (hash_parts(hash_seed, &["b", a, b]) % dim as u64) as usize
}

/// Hash the text's lowercase unigrams and bigrams into `dim` buckets and
/// L2-normalize the counts.
pub fn featurize(text: &str, dim: usize, hash_seed: u64) -> FeatureVector {
    assert!(dim > 0, "feature dimension must be positive");
    let mut values = vec![0.0; dim];
    let tokens = tokenize(text);
    for t in &tokens {
        values[unigram_bucket(t, dim, hash_seed)] += 1.0;
    }
    for pair in tokens.windows(2) {
        values[bigram_bucket(&pair[0], &pair[1], dim, hash_seed)] += 1.0;
    }
    let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        for v in &mut values {
            *v /= norm;
        }
    }
    FeatureVector { values }
}

/// Featurize every record's edited text, preserving record order.
pub fn featurize_split(split: &DatasetSplit, dim: usize, hash_seed: u64) -> Vec<FeatureVector> {
    split
        .records
        .par_iter()
        .map(|r| featurize(&r.edited_text, dim, hash_seed))
        .collect()
}
