//! Loads a trial's dataset and turns it into batches.

use std::borrow::Cow;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use rru_core::data::batch_indices;
use rru_core::data::mnist::{load_mnist, MnistDataset, MnistPaths};
use rru_core::data::pianoroll::{load_pianoroll, music_batch, PianoRollDataset, NOTES};
use rru_core::data::synthetic::{make_synthetic, SyntheticData, SyntheticTask};
use rru_core::data::text::{window_text, TextDataset, TextUnit};
use rru_core::rng::derive_seed;
use rru_core::{InputSpec, Rng, SequenceBatch, Task};

use crate::config::{DatasetSpec, TextSource, TrialConfig};
use crate::error::{HarnessError, Result};

/// Unit in which losses are reported.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    /// Nats per step, summed over notes.
    Nll,
    Bpc,
    Perplexity,
    /// Cross-entropy in nats.
    Xent,
    Mse,
}

impl Metric {
    /// Converts a mean model loss (nats, or squared error) into this unit.
    pub fn from_loss(self, loss: f64) -> f64 {
        match self {
            Metric::Bpc => loss / std::f64::consts::LN_2,
            Metric::Perplexity => loss.exp(),
            Metric::Nll | Metric::Xent | Metric::Mse => loss,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Valid,
    Test,
}

/// What the model must look like to consume the data.
#[derive(Clone, Debug, PartialEq)]
pub struct DataShape {
    pub input: InputSpec,
    pub logit_size: usize,
    pub task: Task,
    pub stateful: bool,
    pub metric: Metric,
}

/// A batch to build: dataset indices, or the position of a pre-cut text window.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum BatchPlan {
    Indices(Vec<usize>),
    Window(usize),
}

struct TextWindows {
    train: Vec<SequenceBatch<f32>>,
    valid: Vec<SequenceBatch<f32>>,
    test: Vec<SequenceBatch<f32>>,
}

enum Source {
    Music(PianoRollDataset),
    Text { vocab: usize, windows: TextWindows },
    Mnist(MnistDataset),
    Synthetic([SyntheticData; 3]),
}

/// Immutable loaded data, shareable across concurrent trials that agree on
/// dataset, batch size and window.
pub struct TrialData {
    spec: DatasetSpec,
    batch_size: usize,
    window: usize,
    embedding_size: usize,
    source: Source,
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| HarnessError::Data(format!("{}: {e}", path.display())))
}

fn load_text(source: &TextSource, unit: TextUnit, vocab_size: usize) -> Result<TextDataset> {
    match source {
        TextSource::Corpus { corpus } => TextDataset::from_corpus(&read_text(corpus)?, unit, vocab_size),
        TextSource::Splits { train, valid, test } => TextDataset::from_splits(
            &read_text(train)?,
            &read_text(valid)?,
            &read_text(test)?,
            unit,
            vocab_size,
        ),
    }
    .map_err(HarnessError::data)
}

/// Lanes for one split: the batch size, fewer when the split is too short.
fn windows(ids: &[usize], window: usize, batch: usize) -> Result<Vec<SequenceBatch<f32>>> {
    let lanes = batch.min(ids.len() / window).max(1);
    window_text(ids, window, lanes).map_err(HarnessError::data)
}

fn synthetic(task: SyntheticTask, sizes: [usize; 3], data_seed: u64) -> Result<[SyntheticData; 3]> {
    let make = |i: usize| {
        let mut rng = Rng::new(derive_seed(data_seed, &[i as u64]));
        make_synthetic(task, sizes[i], &mut rng).map_err(|e| HarnessError::Config(e.to_string()))
    };
    if sizes.contains(&0) {
        return Err(HarnessError::Config("synthetic split sizes must be positive".into()));
    }
    Ok([make(0)?, make(1)?, make(2)?])
}

impl TrialData {
    pub fn load(cfg: &TrialConfig) -> Result<Self> {
        let source = match &cfg.dataset {
            DatasetSpec::Music { path } => Source::Music(load_pianoroll(path).map_err(HarnessError::data)?),
            DatasetSpec::Char { source } | DatasetSpec::Word { source, .. } => {
                let (unit, vocab_size) = match cfg.dataset {
                    DatasetSpec::Word { vocab_size, .. } => (TextUnit::Word, vocab_size),
                    _ => (TextUnit::Char, 0),
                };
                let text = load_text(source, unit, vocab_size)?;
                Source::Text {
                    vocab: text.vocab.len(),
                    windows: TextWindows {
                        train: windows(&text.train, cfg.window, cfg.batch_size)?,
                        valid: windows(&text.valid, cfg.window, cfg.batch_size)?,
                        test: windows(&text.test, cfg.window, cfg.batch_size)?,
                    },
                }
            }
            DatasetSpec::Mnist {
                dir,
                permuted,
                perm_seed,
            } => {
                Source::Mnist(load_mnist(&MnistPaths::in_dir(dir), *permuted, *perm_seed).map_err(HarnessError::data)?)
            }
            &DatasetSpec::Adding {
                length,
                train_size,
                valid_size,
                test_size,
                data_seed,
            } => Source::Synthetic(synthetic(
                SyntheticTask::Adding { length },
                [train_size, valid_size, test_size],
                data_seed,
            )?),
            &DatasetSpec::Copy {
                prefix,
                delay,
                alphabet,
                train_size,
                valid_size,
                test_size,
                data_seed,
            } => Source::Synthetic(synthetic(
                SyntheticTask::Copy {
                    prefix,
                    delay,
                    alphabet,
                },
                [train_size, valid_size, test_size],
                data_seed,
            )?),
        };
        let data = Self {
            spec: cfg.dataset.clone(),
            batch_size: cfg.batch_size,
            window: cfg.window,
            embedding_size: cfg.embedding_size,
            source,
        };
        for split in [Split::Train, Split::Valid, Split::Test] {
            if data.plan(split, None).is_empty() {
                return Err(HarnessError::Data(format!(
                    "{} has an empty {split:?} split",
                    cfg.dataset.name()
                )));
            }
        }
        Ok(data)
    }

    /// True when `cfg` can reuse this data without reloading.
    pub fn fits(&self, cfg: &TrialConfig) -> bool {
        self.spec == cfg.dataset
            && self.batch_size == cfg.batch_size
            && self.window == cfg.window
            && self.embedding_size == cfg.embedding_size
    }

    pub fn shape(&self) -> DataShape {
        let tokens = |vocab_size| InputSpec::Tokens {
            vocab_size,
            embedding_size: self.embedding_size,
        };
        let (input, logit_size, task, metric) = match (&self.source, &self.spec) {
            (Source::Music(_), _) => (InputSpec::Dense { features: NOTES }, NOTES, Task::Music, Metric::Nll),
            (Source::Text { vocab, .. }, DatasetSpec::Word { .. }) => {
                (tokens(*vocab), *vocab, Task::Language, Metric::Perplexity)
            }
            (Source::Text { vocab, .. }, _) => (tokens(*vocab), *vocab, Task::Language, Metric::Bpc),
            (Source::Mnist(_), _) => (InputSpec::Dense { features: 1 }, 10, Task::Classification, Metric::Xent),
            (Source::Synthetic(_), DatasetSpec::Copy { alphabet, .. }) => {
                (tokens(alphabet + 1), alphabet + 1, Task::Language, Metric::Xent)
            }
            (Source::Synthetic(_), _) => (InputSpec::Dense { features: 2 }, 1, Task::Regression, Metric::Mse),
        };
        DataShape {
            input,
            logit_size,
            task,
            stateful: matches!(self.source, Source::Text { .. }),
            metric,
        }
    }

    fn split_len(&self, split: Split) -> usize {
        let i = split as usize;
        match &self.source {
            Source::Music(d) => [&d.train, &d.valid, &d.test][i].len(),
            Source::Text { windows, .. } => [&windows.train, &windows.valid, &windows.test][i].len(),
            Source::Mnist(d) => [&d.train, &d.valid, &d.test][i].len(),
            Source::Synthetic(s) => s[i].len(),
        }
    }

    /// Batches of one pass over `split`; training order is shuffled when
    /// `rng` is given, except for stateful text, whose windows stay in corpus order.
    pub fn plan(&self, split: Split, rng: Option<&mut Rng>) -> Vec<BatchPlan> {
        let n = self.split_len(split);
        match self.source {
            Source::Text { .. } => (0..n).map(BatchPlan::Window).collect(),
            _ => batch_indices(n, self.batch_size, rng)
                .into_iter()
                .map(BatchPlan::Indices)
                .collect(),
        }
    }

    pub fn batch(&self, split: Split, plan: &BatchPlan) -> Result<Cow<'_, SequenceBatch<f32>>> {
        let i = split as usize;
        let built = match (&self.source, plan) {
            (Source::Text { windows, .. }, BatchPlan::Window(w)) => {
                return Ok(Cow::Borrowed(&[&windows.train, &windows.valid, &windows.test][i][*w]));
            }
            (Source::Music(d), BatchPlan::Indices(idx)) => {
                music_batch([&d.train, &d.valid, &d.test][i], idx, self.window)
            }
            (Source::Mnist(d), BatchPlan::Indices(idx)) => [&d.train, &d.valid, &d.test][i].batch(idx),
            (Source::Synthetic(s), BatchPlan::Indices(idx)) => s[i].batch(idx),
            _ => unreachable!("plans come from the same source"),
        };
        built.map(Cow::Owned).map_err(HarnessError::data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ExperimentConfig;

    fn adding() -> TrialConfig {
        let mut cfg = ExperimentConfig::preset("adding").unwrap().trial;
        cfg.dataset = DatasetSpec::Adding {
            length: 6,
            train_size: 10,
            valid_size: 4,
            test_size: 4,
            data_seed: 1,
        };
        cfg.batch_size = 3;
        cfg
    }

    #[test]
    fn synthetic_plans_cover_each_split() {
        let data = TrialData::load(&adding()).unwrap();
        let plan = data.plan(Split::Train, Some(&mut Rng::new(0)));
        assert_eq!(plan.len(), 4);
        let mut seen: Vec<usize> = plan
            .iter()
            .flat_map(|p| match p {
                BatchPlan::Indices(i) => i.clone(),
                BatchPlan::Window(_) => unreachable!(),
            })
            .collect();
        seen.sort_unstable();
        assert_eq!(seen, (0..10).collect::<Vec<_>>());
        let b = data.batch(Split::Valid, &data.plan(Split::Valid, None)[0]).unwrap();
        assert_eq!((b.steps(), b.batch_size()), (6, 3));
        let shape = data.shape();
        assert_eq!(
            (shape.task, shape.logit_size, shape.stateful),
            (Task::Regression, 1, false)
        );
    }

    #[test]
    fn data_seed_fixes_the_examples() {
        let a = TrialData::load(&adding()).unwrap();
        let b = TrialData::load(&adding()).unwrap();
        let plan = BatchPlan::Indices(vec![0, 1, 2, 3]);
        assert_eq!(
            a.batch(Split::Test, &plan).unwrap(),
            b.batch(Split::Test, &plan).unwrap()
        );
    }

    #[test]
    fn text_windows_stay_in_order() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("corpus.txt");
        fs::write(&path, "the quick brown fox jumps over the lazy dog. ".repeat(200)).unwrap();
        let mut cfg = adding();
        cfg.dataset = DatasetSpec::Char {
            source: TextSource::Corpus { corpus: path },
        };
        cfg.window = 16;
        cfg.batch_size = 4;
        let data = TrialData::load(&cfg).unwrap();
        let plan = data.plan(Split::Train, Some(&mut Rng::new(3)));
        assert!(plan.iter().enumerate().all(|(i, p)| *p == BatchPlan::Window(i)));
        let shape = data.shape();
        assert!(shape.stateful);
        assert_eq!(shape.metric, Metric::Bpc);
        assert!(data.fits(&cfg));
        cfg.window = 32;
        assert!(!data.fits(&cfg));
    }

    #[test]
    fn missing_file_is_a_data_error() {
        let mut cfg = adding();
        cfg.dataset = DatasetSpec::Music {
            path: "/nonexistent/roll.json".into(),
        };
        assert_eq!(TrialData::load(&cfg).err().unwrap().exit_code(), 3);
    }

    #[test]
    fn metric_units() {
        assert!((Metric::Bpc.from_loss(std::f64::consts::LN_2 * 3.0) - 3.0).abs() < 1e-12);
        assert_eq!(Metric::Perplexity.from_loss(0.0), 1.0);
        assert_eq!(Metric::Mse.from_loss(0.25), 0.25);
    }
}
