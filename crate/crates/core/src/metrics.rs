//! Evaluation metrics computed from logit values.
//!
//! All reductions run in f64. Logits are clamped to `±LOGIT_CLAMP` before any
//! `exp`/`log`, matching the training losses recorded on the tape.

use std::f64::consts::LN_2;

use crate::autodiff::{bce, xent_row};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

pub const LOGIT_CLAMP: f64 = 30.0;

/// Running sum for a mean over valid positions.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct MeanAccumulator {
    pub sum: f64,
    pub count: f64,
}

impl MeanAccumulator {
    pub fn add(&mut self, value: f64) {
        self.sum += value;
        self.count += 1.0;
    }

    pub fn merge(&mut self, other: MeanAccumulator) {
        self.sum += other.sum;
        self.count += other.count;
    }

    pub fn mean(&self) -> f64 {
        if self.count == 0.0 {
            f64::NAN
        } else {
            self.sum / self.count
        }
    }
}

/// Validity mask `T × batch` from per-row counts of valid leading steps.
pub fn mask_from_lengths(steps: usize, lengths: &[usize]) -> Vec<Vec<bool>> {
    (0..steps).map(|t| lengths.iter().map(|&l| t < l).collect()).collect()
}

fn check_steps<T: Real>(logits: &[Tensor<T>], mask: &[Vec<bool>]) -> Result<()> {
    if mask.len() != logits.len() {
        return Err(Error::InvalidArgument(format!(
            "{} mask steps for {} logit steps",
            mask.len(),
            logits.len()
        )));
    }
    for (z, m) in logits.iter().zip(mask) {
        if m.len() != z.rows() {
            return Err(Error::InvalidArgument("mask width differs from batch".into()));
        }
    }
    Ok(())
}

/// Per-step Bernoulli NLL summed over notes; one accumulator entry per valid (step, row).
pub fn music_nll_sum<T: Real>(
    logits: &[Tensor<T>],
    targets: &[Tensor<T>],
    mask: &[Vec<bool>],
) -> Result<MeanAccumulator> {
    check_steps(logits, mask)?;
    if targets.len() != logits.len() {
        return Err(Error::InvalidArgument("targets and logits differ in length".into()));
    }
    let mut acc = MeanAccumulator::default();
    for ((z, y), m) in logits.iter().zip(targets).zip(mask) {
        if z.shape() != y.shape() {
            return Err(Error::shape("music_nll", z.shape(), y.shape()));
        }
        for (r, &valid) in m.iter().enumerate() {
            if !valid {
                continue;
            }
            let mut nll = 0.0;
            for (&zv, &yv) in z.row(r).iter().zip(y.row(r)) {
                let yv = yv.as_f64();
                if yv != 0.0 && yv != 1.0 {
                    return Err(Error::InvalidArgument(format!("note target {yv} is not binary")));
                }
                nll += bce(zv.as_f64(), yv);
            }
            acc.add(nll);
        }
    }
    Ok(acc)
}

/// Independent-Bernoulli NLL over the note axis, averaged over valid steps and batch rows.
pub fn music_nll<T: Real>(logits: &[Tensor<T>], targets: &[Tensor<T>], lengths: &[usize]) -> Result<f64> {
    let mask = mask_from_lengths(logits.len(), lengths);
    Ok(music_nll_sum(logits, targets, &mask)?.mean())
}

/// Softmax cross-entropy in nats; one accumulator entry per valid (step, row).
pub fn cross_entropy_sum<T: Real>(
    logits: &[Tensor<T>],
    targets: &[Vec<usize>],
    mask: &[Vec<bool>],
) -> Result<MeanAccumulator> {
    check_steps(logits, mask)?;
    let mut acc = MeanAccumulator::default();
    for ((z, ids), m) in logits.iter().zip(targets).zip(mask) {
        for (r, &valid) in m.iter().enumerate() {
            if !valid {
                continue;
            }
            let t = ids[r];
            if t >= z.cols() {
                return Err(Error::InvalidArgument(format!(
                    "target id {t} out of range for {} classes",
                    z.cols()
                )));
            }
            let row: Vec<f64> = z.row(r).iter().map(|v| v.as_f64()).collect();
            acc.add(xent_row(&row, t));
        }
    }
    Ok(acc)
}

pub fn cross_entropy<T: Real>(logits: &[Tensor<T>], targets: &[Vec<usize>], lengths: &[usize]) -> Result<f64> {
    let mask = mask_from_lengths(logits.len(), lengths);
    Ok(cross_entropy_sum(logits, targets, &mask)?.mean())
}

pub fn nats_to_bpc(nats: f64) -> f64 {
    nats / LN_2
}

pub fn nats_to_perplexity(nats: f64) -> f64 {
    nats.exp()
}

/// Bits per character: mean cross-entropy / ln 2.
pub fn char_bpc<T: Real>(logits: &[Tensor<T>], targets: &[Vec<usize>], lengths: &[usize]) -> Result<f64> {
    Ok(nats_to_bpc(cross_entropy(logits, targets, lengths)?))
}

/// `exp` of the mean cross-entropy in nats.
pub fn word_perplexity<T: Real>(logits: &[Tensor<T>], targets: &[Vec<usize>], lengths: &[usize]) -> Result<f64> {
    Ok(nats_to_perplexity(cross_entropy(logits, targets, lengths)?))
}

/// Counts of argmax hits over the rows of one logit matrix.
pub fn accuracy_sum<T: Real>(logits: &Tensor<T>, labels: &[usize]) -> Result<MeanAccumulator> {
    if labels.len() != logits.rows() {
        return Err(Error::InvalidArgument("one label per row required".into()));
    }
    let mut acc = MeanAccumulator::default();
    for (pred, &label) in logits.argmax_rows().into_iter().zip(labels) {
        if label >= logits.cols() {
            return Err(Error::InvalidArgument(format!("label {label} out of range")));
        }
        acc.add(if pred == label { 1.0 } else { 0.0 });
    }
    Ok(acc)
}

pub fn accuracy<T: Real>(logits: &Tensor<T>, labels: &[usize]) -> Result<f64> {
    Ok(accuracy_sum(logits, labels)?.mean())
}

/// Squared error summed over columns; one entry per row.
pub fn squared_error_sum<T: Real>(pred: &Tensor<T>, targets: &Tensor<T>) -> Result<MeanAccumulator> {
    if pred.shape() != targets.shape() {
        return Err(Error::shape("squared_error", pred.shape(), targets.shape()));
    }
    let mut acc = MeanAccumulator::default();
    for r in 0..pred.rows() {
        let se: f64 = pred
            .row(r)
            .iter()
            .zip(targets.row(r))
            .map(|(&a, &b)| (a.as_f64() - b.as_f64()).powi(2))
            .sum();
        acc.add(se);
    }
    Ok(acc)
}
