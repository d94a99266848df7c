//! Word-embedding tables in the whitespace-separated GloVe text format.

use std::collections::HashMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{GmaError, Result};

pub const GLOVE_DIM: usize = 300;

/// What a lookup returns for a word missing from the table.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum OovPolicy {
    Zero,
    /// A vector drawn from a generator seeded by the word and `seed`, so the
    /// same word always maps to the same vector.
    HashedRandom { seed: u64 },
    Error,
}

impl Default for OovPolicy {
    fn default() -> Self {
        OovPolicy::HashedRandom { seed: 0x5eed }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    vectors: HashMap<String, Vec<f64>>,
    policy: OovPolicy,
}

impl EmbeddingTable {
    /// An empty table: every lookup goes through the OOV policy.
    pub fn empty(dim: usize, policy: OovPolicy) -> Self {
        EmbeddingTable {
            dim,
            vectors: HashMap::new(),
            policy,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn policy(&self) -> OovPolicy {
        self.policy
    }

    pub fn insert(&mut self, word: impl Into<String>, vector: Vec<f64>) -> Result<()> {
        if vector.len() != self.dim {
            return Err(GmaError::InvalidArgument(format!(
                "embedding of length {} in a {}-dim table",
                vector.len(),
                self.dim
            )));
        }
        self.vectors.insert(word.into(), vector);
        Ok(())
    }

    pub fn contains(&self, word: &str) -> bool {
        self.vectors.contains_key(word) || self.vectors.contains_key(&word.to_lowercase())
    }

    /// Exact match first, then the lowercased form, then the OOV policy.
    pub fn lookup(&self, word: &str) -> Result<Vec<f64>> {
        if let Some(v) = self.vectors.get(word).or_else(|| self.vectors.get(&word.to_lowercase())) {
            return Ok(v.clone());
        }
        match self.policy {
            OovPolicy::Zero => Ok(vec![0.0; self.dim]),
            OovPolicy::Error => Err(GmaError::OutOfVocabulary(word.to_string())),
            OovPolicy::HashedRandom { seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(fnv1a(word.to_lowercase().as_bytes()) ^ seed);
                Ok((0..self.dim).map(|_| rng.random_range(-0.5..0.5)).collect())
            }
        }
    }

    /// Parses `word v1 v2 … vD` lines. The first line fixes `D`.
    pub fn parse(text: &str, policy: OovPolicy) -> Result<Self> {
        let mut dim = None;
        let mut vectors = HashMap::new();
        for (i, line) in text.lines().enumerate() {
            let mut parts = line.split_whitespace();
            let Some(word) = parts.next() else { continue };
            let values = parts
                .map(|p| {
                    p.parse::<f64>().map_err(|_| GmaError::Parse {
                        line: i + 1,
                        message: format!("bad number {p:?}"),
                    })
                })
                .collect::<Result<Vec<f64>>>()?;
            let expected = *dim.get_or_insert(values.len());
            if values.len() != expected || expected == 0 {
                return Err(GmaError::Parse {
                    line: i + 1,
                    message: format!("{} values, expected {expected}", values.len()),
                });
            }
            vectors.insert(word.to_string(), values);
        }
        Ok(EmbeddingTable {
            dim: dim.unwrap_or(GLOVE_DIM),
            vectors,
            policy,
        })
    }
}

pub fn load_embeddings(path: &Path, policy: OovPolicy) -> Result<EmbeddingTable> {
    let text = std::fs::read_to_string(path).map_err(|e| GmaError::io(path, e))?;
    EmbeddingTable::parse(&text, policy)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| (h ^ u64::from(b)).wrapping_mul(0x0100_0000_01b3))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture() -> String {
        let a: Vec<String> = (0..GLOVE_DIM).map(|i| format!("{}", i as f64 * 0.01)).collect();
        let b: Vec<String> = (0..GLOVE_DIM).map(|i| format!("{}", -(i as f64))).collect();
        format!("car {}\nred {}\n", a.join(" "), b.join(" "))
    }

    #[test]
    fn two_line_fixture() {
        let t = EmbeddingTable::parse(&fixture(), OovPolicy::Zero).unwrap();
        assert_eq!(t.dim(), 300);
        assert_eq!(t.len(), 2);
        let car = t.lookup("car").unwrap();
        assert_eq!(car[1], 0.01);
        assert_eq!(car[299], 2.99);
        assert_eq!(t.lookup("Red").unwrap()[5], -5.0);
        assert_eq!(t.lookup("zebra").unwrap(), vec![0.0; 300]);
    }

    #[test]
    fn hashed_random_is_reproducible() {
        let p = OovPolicy::HashedRandom { seed: 11 };
        let a = EmbeddingTable::parse(&fixture(), p).unwrap();
        let b = EmbeddingTable::parse(&fixture(), p).unwrap();
        let v = a.lookup("zebra").unwrap();
        assert_eq!(v, b.lookup("zebra").unwrap());
        assert_ne!(v, a.lookup("giraffe").unwrap());
        let other = EmbeddingTable::parse(&fixture(), OovPolicy::HashedRandom { seed: 12 }).unwrap();
        assert_ne!(v, other.lookup("zebra").unwrap());
    }

    #[test]
    fn error_policy_and_bad_files() {
        let t = EmbeddingTable::parse(&fixture(), OovPolicy::Error).unwrap();
        assert!(matches!(t.lookup("zebra"), Err(GmaError::OutOfVocabulary(_))));
        let bad = "a 1 2 3\nb 1 2\n";
        assert!(matches!(EmbeddingTable::parse(bad, OovPolicy::Zero), Err(GmaError::Parse { line: 2, .. })));
        assert!(EmbeddingTable::parse("a 1 x\n", OovPolicy::Zero).is_err());
    }
}
