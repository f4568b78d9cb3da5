//! Character- and word-level corpora with stateful lane batching.
//!
//! Characters are bytes. Words are whitespace-separated tokens; the vocabulary
//! keeps the most frequent ones (ties broken lexicographically) and maps the
//! rest to the reserved unknown id 0.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{BatchInputs, BatchTargets, SequenceBatch};
use crate::tensor::Real;

pub const UNK: &str = "<unk>";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TextUnit {
    Char,
    Word,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    pub unit: TextUnit,
    pub symbols: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    fn from_symbols(unit: TextUnit, symbols: Vec<String>) -> Self {
        let index = symbols.iter().enumerate().map(|(i, s)| (s.clone(), i)).collect();
        Self { unit, symbols, index }
    }

    /// One id per distinct byte, in byte order.
    pub fn chars(corpus: &[u8]) -> Self {
        let mut seen = [false; 256];
        for &b in corpus {
            seen[b as usize] = true;
        }
        let symbols = (0..=255u8).filter(|&b| seen[b as usize]).map(byte_symbol).collect();
        Self::from_symbols(TextUnit::Char, symbols)
    }

    /// `<unk>` followed by the `max_size − 1` most frequent words.
    pub fn words(corpus: &str, max_size: usize) -> Result<Self> {
        if max_size < 2 {
            return Err(Error::InvalidArgument(
                "word vocabulary needs room for <unk> and one word".into(),
            ));
        }
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for w in corpus.split_whitespace() {
            *counts.entry(w).or_default() += 1;
        }
        let mut ranked: Vec<(&str, usize)> = counts.into_iter().filter(|(w, _)| *w != UNK).collect();
        ranked.sort_unstable_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        let symbols = std::iter::once(UNK.to_string())
            .chain(ranked.into_iter().take(max_size - 1).map(|(w, _)| w.to_string()))
            .collect();
        Ok(Self::from_symbols(TextUnit::Word, symbols))
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn id(&self, symbol: &str) -> Option<usize> {
        self.index.get(symbol).copied()
    }

    /// Char vocabularies reject unseen bytes; word vocabularies map them to 0.
    pub fn encode(&self, text: &str) -> Result<Vec<usize>> {
        match self.unit {
            TextUnit::Char => text
                .bytes()
                .map(|b| {
                    self.id(&byte_symbol(b))
                        .ok_or_else(|| Error::Data(format!("byte 0x{b:02x} not in vocabulary")))
                })
                .collect(),
            TextUnit::Word => Ok(text.split_whitespace().map(|w| self.id(w).unwrap_or(0)).collect()),
        }
    }
}

fn byte_symbol(b: u8) -> String {
    // bytes ≥ 0x80 are kept distinct even when not valid UTF-8 on their own
    if b.is_ascii() {
        (b as char).to_string()
    } else {
        format!("\\x{b:02x}")
    }
}

/// `(train, valid, test)` at 90 / 5 / 5 percent, contiguous.
pub fn split_90_5_5<E>(items: &[E]) -> (&[E], &[E], &[E]) {
    let n = items.len();
    let train = n * 90 / 100;
    let valid = n * 5 / 100;
    (&items[..train], &items[train..train + valid], &items[train + valid..])
}

#[derive(Clone, Debug)]
pub struct TextDataset {
    pub vocab: Vocab,
    pub train: Vec<usize>,
    pub valid: Vec<usize>,
    pub test: Vec<usize>,
}

impl TextDataset {
    /// Single raw corpus split 90 / 5 / 5. The vocabulary is built from the whole file.
    pub fn from_corpus(text: &str, unit: TextUnit, word_vocab: usize) -> Result<Self> {
        let vocab = match unit {
            TextUnit::Char => Vocab::chars(text.as_bytes()),
            TextUnit::Word => Vocab::words(text, word_vocab)?,
        };
        let ids = vocab.encode(text)?;
        let (train, valid, test) = split_90_5_5(&ids);
        Ok(Self {
            train: train.to_vec(),
            valid: valid.to_vec(),
            test: test.to_vec(),
            vocab,
        })
    }

    /// Pre-split corpora; the vocabulary comes from the training text.
    pub fn from_splits(train: &str, valid: &str, test: &str, unit: TextUnit, word_vocab: usize) -> Result<Self> {
        let vocab = match unit {
            TextUnit::Char => Vocab::chars([train, valid, test].concat().as_bytes()),
            TextUnit::Word => Vocab::words(train, word_vocab)?,
        };
        Ok(Self {
            train: vocab.encode(train)?,
            valid: vocab.encode(valid)?,
            test: vocab.encode(test)?,
            vocab,
        })
    }

    pub fn load(path: &Path, unit: TextUnit, word_vocab: usize) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_corpus(&text, unit, word_vocab)
    }
}

/// Cuts `ids` into `lanes` equal contiguous streams and those into windows.
///
/// Window `w` of lane `r` covers lane positions `w·window ..`, so consecutive
/// windows of a lane are corpus-consecutive and a carried state continues the
/// text. Targets are the next id in the lane; the lane's final position has no
/// successor and is masked. The trailing `len % lanes` ids are dropped.
pub fn window_text<T: Real>(ids: &[usize], window: usize, lanes: usize) -> Result<Vec<SequenceBatch<T>>> {
    if window < 2 || lanes == 0 {
        return Err(Error::InvalidArgument(format!(
            "window {window} / lanes {lanes} too small"
        )));
    }
    let lane_len = ids.len() / lanes;
    if lane_len < window {
        return Err(Error::Data(format!(
            "corpus of {} ids gives lanes of {lane_len}, shorter than window {window}",
            ids.len()
        )));
    }
    let lane = |r: usize| &ids[r * lane_len..(r + 1) * lane_len];
    let mut batches = Vec::new();
    let mut start = 0;
    while start < lane_len {
        let steps = window.min(lane_len - start);
        let mut inputs = vec![vec![0; lanes]; steps];
        let mut targets = vec![vec![0; lanes]; steps];
        let mut mask = vec![vec![true; lanes]; steps];
        for r in 0..lanes {
            let l = lane(r);
            for t in 0..steps {
                inputs[t][r] = l[start + t];
                match l.get(start + t + 1) {
                    Some(&next) => targets[t][r] = next,
                    None => mask[t][r] = false,
                }
            }
        }
        // a window made only of the final position has nothing to predict
        if mask.iter().flatten().any(|&m| m) {
            batches.push(
                SequenceBatch::new(
                    BatchInputs::Tokens(inputs),
                    BatchTargets::Tokens(targets),
                    vec![steps; lanes],
                )?
                .with_target_mask(mask)?,
            );
        }
        start += steps;
    }
    Ok(batches)
}
