//! Synthetic diagnostic tasks, regenerable from a seed.
//!
//! * Adding: each step is `(value, marker)` with `value ~ U[0, 1)`; one marker
//!   falls in the first half and one in the second; the target is the sum of
//!   the two marked values.
//! * Copy: a prefix of `prefix` symbols from `1..=alphabet` is shown, then
//!   blanks (id 0). The target at step `t` is the input at `t − delay` (blank
//!   before that), over `prefix + delay` steps. Delay 0 is the identity task.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{BatchInputs, BatchTargets, SequenceBatch};
use crate::rng::Rng;
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SyntheticTask {
    Adding {
        length: usize,
    },
    Copy {
        prefix: usize,
        delay: usize,
        alphabet: usize,
    },
}

impl SyntheticTask {
    pub fn steps(&self) -> usize {
        match *self {
            SyntheticTask::Adding { length } => length,
            SyntheticTask::Copy { prefix, delay, .. } => prefix + delay,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AddingExample {
    pub values: Vec<f64>,
    pub markers: Vec<bool>,
    pub target: f64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CopyExample {
    pub inputs: Vec<usize>,
    pub targets: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum SyntheticData {
    Adding(Vec<AddingExample>),
    Copy(Vec<CopyExample>),
}

pub fn adding_example(length: usize, rng: &mut Rng) -> AddingExample {
    let values: Vec<f64> = (0..length).map(|_| rng.uniform()).collect();
    let half = length / 2;
    let a = rng.below(half);
    let b = half + rng.below(length - half);
    let mut markers = vec![false; length];
    markers[a] = true;
    markers[b] = true;
    AddingExample {
        target: values[a] + values[b],
        values,
        markers,
    }
}

pub fn copy_example(prefix: usize, delay: usize, alphabet: usize, rng: &mut Rng) -> CopyExample {
    let steps = prefix + delay;
    let mut inputs = vec![0; steps];
    for s in inputs.iter_mut().take(prefix) {
        *s = 1 + rng.below(alphabet);
    }
    let targets = (0..steps)
        .map(|t| if t >= delay { inputs[t - delay] } else { 0 })
        .collect();
    CopyExample { inputs, targets }
}

pub fn make_synthetic(task: SyntheticTask, count: usize, rng: &mut Rng) -> Result<SyntheticData> {
    match task {
        SyntheticTask::Adding { length } => {
            if length < 2 {
                return Err(Error::InvalidArgument("adding task needs length ≥ 2".into()));
            }
            Ok(SyntheticData::Adding(
                (0..count).map(|_| adding_example(length, rng)).collect(),
            ))
        }
        SyntheticTask::Copy {
            prefix,
            delay,
            alphabet,
        } => {
            if prefix + delay < 2 || prefix == 0 || alphabet == 0 {
                return Err(Error::InvalidArgument(
                    "copy task needs a prefix, an alphabet and ≥ 2 steps".into(),
                ));
            }
            Ok(SyntheticData::Copy(
                (0..count).map(|_| copy_example(prefix, delay, alphabet, rng)).collect(),
            ))
        }
    }
}

impl SyntheticData {
    pub fn len(&self) -> usize {
        match self {
            SyntheticData::Adding(e) => e.len(),
            SyntheticData::Copy(e) => e.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn batch<T: Real>(&self, idx: &[usize]) -> Result<SequenceBatch<T>> {
        match self {
            SyntheticData::Adding(examples) => {
                let steps = examples[idx[0]].values.len();
                let inputs = (0..steps)
                    .map(|t| {
                        let data = idx
                            .iter()
                            .flat_map(|&i| {
                                let e = &examples[i];
                                [T::lit(e.values[t]), if e.markers[t] { T::one() } else { T::zero() }]
                            })
                            .collect();
                        Tensor::new(idx.len(), 2, data)
                    })
                    .collect::<Result<Vec<_>>>()?;
                let targets = Tensor::new(idx.len(), 1, idx.iter().map(|&i| T::lit(examples[i].target)).collect())?;
                SequenceBatch::new(
                    BatchInputs::Dense(inputs),
                    BatchTargets::Values(targets),
                    vec![steps; idx.len()],
                )
            }
            SyntheticData::Copy(examples) => {
                let steps = examples[idx[0]].inputs.len();
                let column = |f: &dyn Fn(&CopyExample) -> &Vec<usize>| -> Vec<Vec<usize>> {
                    (0..steps)
                        .map(|t| idx.iter().map(|&i| f(&examples[i])[t]).collect())
                        .collect()
                };
                SequenceBatch::new(
                    BatchInputs::Tokens(column(&|e| &e.inputs)),
                    BatchTargets::Tokens(column(&|e| &e.targets)),
                    vec![steps; idx.len()],
                )
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adding_target_is_sum_of_marked() {
        let mut rng = Rng::new(5);
        for _ in 0..50 {
            let e = adding_example(50, &mut rng);
            assert_eq!(e.markers.iter().filter(|&&m| m).count(), 2);
            let sum: f64 = e
                .values
                .iter()
                .zip(&e.markers)
                .filter(|(_, &m)| m)
                .map(|(v, _)| v)
                .sum();
            assert_eq!(sum, e.target);
        }
        let e = AddingExample {
            values: vec![0.2, 0.5, 0.7],
            markers: vec![true, false, true],
            target: 0.2 + 0.7,
        };
        assert!((e.target - 0.9).abs() < 1e-15);
    }

    #[test]
    fn zero_delay_copy_is_identity() {
        let e = copy_example(6, 0, 4, &mut Rng::new(1));
        assert_eq!(e.inputs, e.targets);
        let e = copy_example(3, 2, 4, &mut Rng::new(1));
        assert_eq!(e.targets[..2], [0, 0]);
        assert_eq!(e.targets[2..], e.inputs[..3]);
    }

    #[test]
    fn regenerable_from_seed() {
        let task = SyntheticTask::Adding { length: 10 };
        let a = make_synthetic(task, 5, &mut Rng::new(3)).unwrap();
        assert_eq!(a, make_synthetic(task, 5, &mut Rng::new(3)).unwrap());
        assert!(make_synthetic(SyntheticTask::Adding { length: 1 }, 1, &mut Rng::new(0)).is_err());
    }

    #[test]
    fn adding_batch_layout() {
        let data = make_synthetic(SyntheticTask::Adding { length: 4 }, 3, &mut Rng::new(2)).unwrap();
        let b = data.batch::<f64>(&[2, 0]).unwrap();
        let (BatchInputs::Dense(x), BatchTargets::Values(y)) = (&b.inputs, &b.targets) else {
            unreachable!()
        };
        let SyntheticData::Adding(e) = &data else {
            unreachable!()
        };
        assert_eq!(x.len(), 4);
        assert_eq!(x[1].get(0, 0), e[2].values[1]);
        assert_eq!(y.get(1, 0), e[0].target);
    }
}
