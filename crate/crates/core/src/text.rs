//! Tokenization and hashed bag-of-words features.

/// Lowercases and splits on anything that is not alphanumeric.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// 64-bit FNV-1a over the UTF-8 bytes of `token`.
pub fn token_hash(token: &str) -> u64 {
    token.bytes().fold(FNV_OFFSET, |h, byte| {
        (h ^ u64::from(byte)).wrapping_mul(FNV_PRIME)
    })
}

/// Dense input vector with its nonzero support cached.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    values: Vec<f64>,
    support: Vec<usize>,
}

impl FeatureVector {
    pub fn zeros(dim: usize) -> Self {
        FeatureVector {
            values: vec![0.0; dim],
            support: Vec::new(),
        }
    }

    pub fn from_dense(values: Vec<f64>) -> Self {
        let support = values
            .iter()
            .enumerate()
            .filter(|(_, v)| **v != 0.0)
            .map(|(i, _)| i)
            .collect();
        FeatureVector { values, support }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Indices of the nonzero entries, ascending.
    pub fn support(&self) -> &[usize] {
        &self.support
    }

    pub fn norm(&self) -> f64 {
        self.support
            .iter()
            .map(|&i| self.values[i] * self.values[i])
            .sum::<f64>()
            .sqrt()
    }
}

/// Hashes each token to `token_hash(t) % dim`, accumulates counts and
/// L2-normalizes the result. No tokens gives the zero vector.
pub fn featurize<S: AsRef<str>>(tokens: &[S], dim: usize) -> FeatureVector {
    assert!(dim >= 1, "feature dimension must be positive");
    let mut values = vec![0.0; dim];
    for t in tokens {
        values[(token_hash(t.as_ref()) % dim as u64) as usize] += 1.0;
    }
    let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        values.iter_mut().for_each(|v| *v /= norm);
    }
    FeatureVector::from_dense(values)
}

pub fn featurize_text(text: &str, dim: usize) -> FeatureVector {
    featurize(&tokenize(text), dim)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenize_examples() {
        assert_eq!(tokenize("The cat, sat."), ["the", "cat", "sat"]);
        assert!(tokenize("").is_empty());
        assert_eq!(tokenize("A a A"), ["a", "a", "a"]);
        assert_eq!(tokenize("  tabs\tand\nnewlines!! "), ["tabs", "and", "newlines"]);
    }

    #[test]
    fn fnv_reference_values() {
        // published FNV-1a 64 test vectors
        assert_eq!(token_hash(""), 0xcbf29ce484222325);
        assert_eq!(token_hash("a"), 0xaf63dc4c8601ec8c);
        assert_eq!(token_hash("foobar"), 0x85944171f73967e8);
    }

    #[test]
    fn featurize_examples() {
        let empty: [&str; 0] = [];
        let z = featurize(&empty, 16);
        assert!(z.values().iter().all(|&v| v == 0.0));
        assert!(z.support().is_empty());

        let one = featurize(&["w"], 16);
        let two = featurize(&["w", "w"], 16);
        assert_eq!(one, two);

        let v = featurize(&["alpha", "beta", "gamma", "alpha"], 64);
        assert!((v.norm() - 1.0).abs() < 1e-9);
    }
}
