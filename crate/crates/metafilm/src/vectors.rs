//! Pretrained word vectors in the GloVe / word2vec text format and the
//! vocabulary + embedding table built from them.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use metafilm_core::data::Instance;
use metafilm_core::embeddings::EmbeddingTable;
use metafilm_core::vocab::Vocabulary;
use metafilm_core::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{CliError, Result};

/// Range of the uniform initialization used when no vector file is given.
pub const RANDOM_SCALE: f64 = 0.25;

#[derive(Debug, Clone, PartialEq)]
pub struct WordVectors {
    pub dim: usize,
    pub vectors: HashMap<String, Vec<f64>>,
}

/// Reads `word v1 … vd` lines, keeping only words accepted by `keep`.
/// A leading `count dim` header line is accepted and checked. Keys are
/// lowercased; the first occurrence of a word wins.
pub fn read_vectors(path: &Path, expected_dim: Option<usize>, keep: impl Fn(&str) -> bool) -> Result<WordVectors> {
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    let format_err = |line: usize, message: String| CliError::Format {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut dim = expected_dim;
    let mut vectors = HashMap::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| CliError::io(path, e))?;
        let mut fields = line.split_whitespace();
        let Some(word) = fields.next() else { continue };
        let rest: Vec<&str> = fields.collect();
        if line_no == 1 && rest.len() == 1 {
            if let (Ok(_), Ok(d)) = (word.parse::<usize>(), rest[0].parse::<usize>()) {
                match dim {
                    Some(e) if e != d => {
                        return Err(format_err(
                            line_no,
                            format!("header declares dimension {d}, expected {e}"),
                        ))
                    }
                    _ => dim = Some(d),
                }
                continue;
            }
        }
        let d = *dim.get_or_insert(rest.len());
        if rest.len() != d {
            return Err(format_err(
                line_no,
                format!("vector for {word:?} has {} components, expected {d}", rest.len()),
            ));
        }
        let word = word.to_lowercase();
        if !keep(&word) || vectors.contains_key(&word) {
            continue;
        }
        let values = rest
            .iter()
            .map(|v| match v.parse::<f64>() {
                Ok(x) if x.is_finite() => Ok(x),
                _ => Err(format_err(line_no, format!("bad component {v:?} for {word:?}"))),
            })
            .collect::<Result<Vec<f64>>>()?;
        vectors.insert(word, values);
    }
    let dim = dim.ok_or_else(|| format_err(0, "file contains no vectors".into()))?;
    Ok(WordVectors { dim, vectors })
}

/// How the embedding table was filled.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Coverage {
    pub vocab: usize,
    pub pretrained: usize,
}

/// Vocabulary from the training sentences (tokens seen `min_count` times),
/// extended with held-out tokens that have a pretrained vector. With
/// `vectors`, rows are copied from the file and tokens missing from it get a
/// zero row; without, every row is uniform in `±RANDOM_SCALE`.
pub fn build_vocab_and_table(
    train: &[Instance],
    held_out: &[&[Instance]],
    min_count: usize,
    vectors: Option<&WordVectors>,
    d_word: usize,
    seed: u64,
    trainable: bool,
) -> Result<(Vocabulary, EmbeddingTable, Coverage)> {
    if let Some(v) = vectors {
        if v.dim != d_word {
            return Err(CliError::Config(format!(
                "embeddings have dimension {}, but d_word is {d_word}",
                v.dim
            )));
        }
    }
    let base = Vocabulary::build(train.iter().map(|i| i.sentence.as_slice()), min_count)?;
    let mut tokens: Vec<String> = base.tokens()[2..].to_vec();
    if let Some(v) = vectors {
        let mut extra: Vec<&String> = held_out
            .iter()
            .flat_map(|s| s.iter())
            .flat_map(|i| i.sentence.iter())
            .filter(|t| !base.contains(t) && v.vectors.contains_key(*t))
            .collect();
        extra.sort();
        extra.dedup();
        tokens.extend(extra.into_iter().cloned());
    }
    let vocab = Vocabulary::from_tokens(tokens)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = vec![0.0; vocab.len() * d_word];
    let mut pretrained = 0;
    for (id, tok) in vocab.tokens().iter().enumerate().skip(2) {
        let row = &mut data[id * d_word..(id + 1) * d_word];
        match vectors.and_then(|v| v.vectors.get(tok)) {
            Some(vec) => {
                row.copy_from_slice(vec);
                pretrained += 1;
            }
            None if vectors.is_some() => {}
            None => row
                .iter_mut()
                .for_each(|x| *x = rng.gen_range(-RANDOM_SCALE..RANDOM_SCALE)),
        }
    }
    let table = EmbeddingTable::from_matrix(Tensor::new(vec![vocab.len(), d_word], data)?, trainable)?;
    let coverage = Coverage {
        vocab: vocab.len() - 2,
        pretrained,
    };
    Ok((vocab, table, coverage))
}
