//! Polyphonic piano rolls: per-step sets of MIDI notes in `21..=108`.
//!
//! JSON layout: `{"train": [seq, ...], "valid": [...], "test": [...]}` where a
//! sequence is a list of steps and a step is a list of note numbers.

use std::fs;
use std::path::Path;

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::model::{BatchInputs, BatchTargets, SequenceBatch};
use crate::tensor::{Real, Tensor};

pub const LOWEST_NOTE: i64 = 21;
pub const HIGHEST_NOTE: i64 = 108;
pub const NOTES: usize = 88;
pub const DEFAULT_MAX_LEN: usize = 200;

/// Steps of sorted, de-duplicated note numbers.
pub type Sequence = Vec<Vec<u8>>;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PianoRollDataset {
    pub train: Vec<Sequence>,
    pub valid: Vec<Sequence>,
    pub test: Vec<Sequence>,
}

#[derive(Deserialize)]
struct RawDataset {
    train: Vec<Vec<Vec<i64>>>,
    valid: Vec<Vec<Vec<i64>>>,
    test: Vec<Vec<Vec<i64>>>,
}

fn convert(split: &str, raw: Vec<Vec<Vec<i64>>>) -> Result<Vec<Sequence>> {
    raw.into_iter()
        .enumerate()
        .map(|(i, seq)| {
            seq.into_iter()
                .enumerate()
                .map(|(t, step)| {
                    let mut notes = step
                        .into_iter()
                        .map(|n| {
                            if (LOWEST_NOTE..=HIGHEST_NOTE).contains(&n) {
                                Ok(n as u8)
                            } else {
                                Err(Error::Data(format!(
                                    "{split} sequence {i} step {t}: note {n} outside [{LOWEST_NOTE}, {HIGHEST_NOTE}]"
                                )))
                            }
                        })
                        .collect::<Result<Vec<u8>>>()?;
                    notes.sort_unstable();
                    notes.dedup();
                    Ok(notes)
                })
                .collect()
        })
        .collect()
}

impl PianoRollDataset {
    pub fn from_json(text: &str) -> Result<Self> {
        let raw: RawDataset = serde_json::from_str(text).map_err(|e| Error::Data(format!("piano roll json: {e}")))?;
        Ok(Self {
            train: convert("train", raw.train)?,
            valid: convert("valid", raw.valid)?,
            test: convert("test", raw.test)?,
        })
    }
}

pub fn load_pianoroll(path: &Path) -> Result<PianoRollDataset> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    PianoRollDataset::from_json(&text)
}

/// Binary mask row for one step, index `note − 21`.
pub fn encode_step<T: Real>(notes: &[u8]) -> Vec<T> {
    let mut row = vec![T::zero(); NOTES];
    for &n in notes {
        row[n as usize - LOWEST_NOTE as usize] = T::one();
    }
    row
}

/// `max_len × 88` mask, trimmed or zero-padded, with the true (trimmed) length.
pub fn encode_pianoroll<T: Real>(seq: &Sequence, max_len: usize) -> Result<(Tensor<T>, usize)> {
    let len = seq.len().min(max_len);
    let mut out = Tensor::zeros(max_len, NOTES);
    for (t, notes) in seq.iter().take(len).enumerate() {
        if let Some(&bad) = notes
            .iter()
            .find(|&&n| !(LOWEST_NOTE..=HIGHEST_NOTE).contains(&(n as i64)))
        {
            return Err(Error::Data(format!(
                "step {t}: note {bad} outside [{LOWEST_NOTE}, {HIGHEST_NOTE}]"
            )));
        }
        out.row_mut(t).copy_from_slice(&encode_step::<T>(notes));
    }
    Ok((out, len))
}

/// Note sets of the first `len` rows of an encoded mask.
pub fn decode_pianoroll<T: Real>(mask: &Tensor<T>, len: usize) -> Sequence {
    (0..len.min(mask.rows()))
        .map(|t| {
            mask.row(t)
                .iter()
                .enumerate()
                .filter(|(_, &v)| v != T::zero())
                .map(|(i, _)| (i as i64 + LOWEST_NOTE) as u8)
                .collect()
        })
        .collect()
}

/// Next-step prediction batch over `seqs[idx]`, each trimmed to `max_len`.
///
/// Input at step `t` is frame `t`, target is frame `t + 1`. A step whose
/// successor does not exist in the original sequence has its target masked.
/// The batch is padded only to its longest member.
pub fn music_batch<T: Real>(seqs: &[Sequence], idx: &[usize], max_len: usize) -> Result<SequenceBatch<T>> {
    let lengths: Vec<usize> = idx.iter().map(|&i| seqs[i].len().min(max_len)).collect();
    let steps = lengths.iter().copied().max().unwrap_or(0);
    if steps == 0 || lengths.contains(&0) {
        return Err(Error::Data("empty piano-roll sequence in batch".into()));
    }
    let b = idx.len();
    let mut inputs = vec![Tensor::zeros(b, NOTES); steps];
    let mut targets = vec![Tensor::zeros(b, NOTES); steps];
    let mut mask = vec![vec![false; b]; steps];
    for (r, &i) in idx.iter().enumerate() {
        let seq = &seqs[i];
        for t in 0..lengths[r] {
            inputs[t].row_mut(r).copy_from_slice(&encode_step::<T>(&seq[t]));
            if let Some(next) = seq.get(t + 1) {
                targets[t].row_mut(r).copy_from_slice(&encode_step::<T>(next));
                mask[t][r] = true;
            }
        }
    }
    SequenceBatch::new(BatchInputs::Dense(inputs), BatchTargets::Notes(targets), lengths)?.with_target_mask(mask)
}
