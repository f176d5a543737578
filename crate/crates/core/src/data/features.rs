use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{Vocabulary, UNK};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FeatureMode {
    /// Embedding table learned with the parser.
    #[default]
    Trainable,
    /// Vectors read from a file and never updated.
    Frozen,
}

/// Word vectors loaded from a `COUNT DIM` headed text file.
#[derive(Debug, Clone)]
pub struct FrozenTable {
    dim: usize,
    vectors: HashMap<String, Vec<f64>>,
}

impl FrozenTable {
    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines
            .next()
            .ok_or_else(|| Error::Empty("vector file has no header".into()))?;
        let nums: Vec<usize> = header
            .split_whitespace()
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::Parse {
                line: 1,
                message: format!("expected `COUNT DIM`, got {header:?}"),
            })?;
        let [count, dim] = nums[..] else {
            return Err(Error::Parse {
                line: 1,
                message: format!("expected `COUNT DIM`, got {header:?}"),
            });
        };
        let mut vectors = HashMap::with_capacity(count);
        for (idx, line) in lines {
            let mut parts = line.split_whitespace();
            let word = parts.next().unwrap_or_default().to_string();
            let values: Vec<f64> = parts
                .map(|p| p.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Parse {
                    line: idx + 1,
                    message: e.to_string(),
                })?;
            if values.len() != dim || values.iter().any(|v| !v.is_finite()) {
                return Err(Error::Parse {
                    line: idx + 1,
                    message: format!("expected {dim} finite values for {word:?}"),
                });
            }
            vectors.insert(word, values);
        }
        if vectors.len() != count {
            return Err(Error::Validation(format!(
                "header announces {count} vectors, file has {}",
                vectors.len()
            )));
        }
        Ok(FrozenTable { dim, vectors })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, word: &str) -> Option<&[f64]> {
        self.vectors.get(word).map(Vec::as_slice)
    }

    /// `[vocab size x dim]` table: each word's own vector, else the file's
    /// `<unk>` vector. The UNK row falls back to zeros.
    pub fn embedding_matrix(&self, vocab: &Vocabulary) -> Result<Tensor> {
        let unk = self.get(UNK);
        let mut data = Vec::with_capacity(vocab.num_words() * self.dim);
        for (id, w) in vocab.words().iter().enumerate() {
            match self.get(w).or(unk) {
                Some(v) => data.extend_from_slice(v),
                None if id == 0 => data.extend(std::iter::repeat_n(0.0, self.dim)),
                None => {
                    return Err(Error::Validation(format!(
                        "no vector for {w:?} and no <unk> vector in the file"
                    )))
                }
            }
        }
        Tensor::new(vec![vocab.num_words(), self.dim], data)
    }
}

/// Row `i` is the feature vector of word `i`.
pub fn get_features(word_ids: &[usize], embedding: &Tensor) -> Result<Tensor> {
    let (rows, dim) = embedding.require_2d()?;
    let mut data = Vec::with_capacity(word_ids.len() * dim);
    for &w in word_ids {
        if w >= rows {
            return Err(Error::Dimension(format!("word id {w} outside a table of {rows}")));
        }
        data.extend_from_slice(embedding.row(w));
    }
    Tensor::new(vec![word_ids.len(), dim], data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::parse_conllu;

    fn vocab() -> Vocabulary {
        let text = "1\tdogs\t_\t_\tN\t_\t2\tnsubj\t_\t_\n2\tbark\t_\t_\tV\t_\t0\troot\t_\t_\n";
        Vocabulary::build(&parse_conllu(text).unwrap(), 1).unwrap()
    }

    #[test]
    fn frozen_lookup_returns_file_rows() {
        let table = FrozenTable::parse("2 3\nbark 1 2 3\ndogs 0.5 -1 2.25\n").unwrap();
        let emb = table.embedding_matrix(&vocab()).unwrap();
        let v = vocab();
        let f = get_features(&[v.word_id("bark"), v.word_id("bark")], &emb).unwrap();
        assert_eq!(f.row(0), &[1.0, 2.0, 3.0]);
        assert_eq!(f.row(0), f.row(1));
        assert_eq!(emb.row(0), &[0.0; 3]);
    }

    #[test]
    fn missing_word_without_unk_is_an_error() {
        let table = FrozenTable::parse("1 2\nbark 1 2\n").unwrap();
        assert!(table.embedding_matrix(&vocab()).is_err());
        let with_unk = FrozenTable::parse("2 2\nbark 1 2\n<unk> 9 9\n").unwrap();
        let emb = with_unk.embedding_matrix(&vocab()).unwrap();
        assert_eq!(emb.row(vocab().word_id("dogs")), &[9.0, 9.0]);
    }

    #[test]
    fn malformed_files() {
        assert!(FrozenTable::parse("").is_err());
        assert!(FrozenTable::parse("1\nx 1\n").is_err());
        assert!(FrozenTable::parse("1 2\nx 1\n").is_err());
        assert!(FrozenTable::parse("2 1\nx 1\n").is_err());
    }
}
