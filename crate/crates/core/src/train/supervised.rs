use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{sentence_loss_grad, sgd_step, word_loss_grad, TrainConfig};
use crate::corpus::{split_holdout, Sentence};
use crate::error::{Error, Result};
use crate::model::{Loss, Model};
use crate::net::Layer;
use crate::tagscheme::{evaluate, EvalReport, Scheme};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Accuracy,
    /// Chunk F1 over IOBES tags.
    ChunkF1,
}

#[derive(Debug, Clone)]
pub struct Task {
    pub name: String,
    pub model: Model,
    pub train: Vec<Sentence>,
    pub valid: Vec<Sentence>,
    pub metric: Metric,
}

/// Which tensors multi-task models have in common.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sharing {
    Lookup,
    LookupAndFirstLayer,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochReport {
    pub epoch: usize,
    /// Mean training loss per example over all tasks.
    pub loss: f64,
    /// Validation metric per task (NaN without validation data).
    pub metrics: Vec<f64>,
}

impl EpochReport {
    pub fn mean_metric(&self) -> f64 {
        self.metrics.iter().sum::<f64>() / self.metrics.len() as f64
    }

    /// Log line, one per epoch.
    pub fn line(&self) -> String {
        format!("epoch {} loss {:.6} metric {:.4}", self.epoch, self.loss, self.mean_metric())
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub models: Vec<Model>,
    pub history: Vec<EpochReport>,
    /// Epoch whose parameters were kept.
    pub best_epoch: usize,
}

/// Scores a model on gold-tagged sentences. Chunk scores use IOBES.
pub fn evaluate_model(model: &Model, sentences: &[Sentence]) -> Result<EvalReport> {
    let mut gold = Vec::with_capacity(sentences.len());
    let mut pred = Vec::with_capacity(sentences.len());
    for s in sentences {
        let g = s
            .gold_tags
            .as_ref()
            .ok_or_else(|| Error::InvalidConfig("evaluation sentence has no gold tags".into()))?;
        gold.push(g.iter().map(|&i| model.tags[i].as_str()).collect::<Vec<_>>());
        pred.push(model.predict_names(s)?);
    }
    evaluate(&gold, &pred, Scheme::Iobes)
}

/// Fraction of words whose predicted tag is the gold tag.
pub fn tag_accuracy(model: &Model, sentences: &[Sentence]) -> Result<f64> {
    let (mut right, mut total) = (0usize, 0usize);
    for s in sentences {
        let g = s
            .gold_tags
            .as_ref()
            .ok_or_else(|| Error::InvalidConfig("evaluation sentence has no gold tags".into()))?;
        let p = model.predict(s)?;
        right += g.iter().zip(&p).filter(|(a, b)| a == b).count();
        total += g.len();
    }
    Ok(if total == 0 { f64::NAN } else { right as f64 / total as f64 })
}

fn score(task: &Task, model: &Model) -> Result<f64> {
    if task.valid.is_empty() {
        return Ok(f64::NAN);
    }
    match task.metric {
        Metric::Accuracy => tag_accuracy(model, &task.valid),
        Metric::ChunkF1 => Ok(evaluate_model(model, &task.valid)?.f1),
    }
}

/// A unit of SGD: a whole sentence for SLL, a single word for WLL.
#[derive(Debug, Clone, Copy)]
struct Example {
    sentence: usize,
    word: Option<usize>,
}

struct Stream {
    examples: Vec<Example>,
    next: usize,
    rng: ChaCha8Rng,
}

impl Stream {
    fn new(model: &Model, train: &[Sentence], seed: u64) -> Self {
        let examples = match model.loss {
            Loss::Sll => (0..train.len()).map(|s| Example { sentence: s, word: None }).collect(),
            Loss::Wll => train
                .iter()
                .enumerate()
                .flat_map(|(s, sent)| (0..sent.len()).map(move |t| Example { sentence: s, word: Some(t) }))
                .collect(),
        };
        let mut stream = Self {
            examples,
            next: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        stream.examples.shuffle(&mut stream.rng);
        stream
    }

    fn pull(&mut self) -> Example {
        if self.next == self.examples.len() {
            self.examples.shuffle(&mut self.rng);
            self.next = 0;
        }
        self.next += 1;
        self.examples[self.next - 1]
    }
}

/// Trains one task. Identical to [`train_multitask`] with a single task.
pub fn train_supervised(task: Task, config: &TrainConfig, observer: &mut dyn FnMut(&EpochReport, &[Model])) -> Result<TrainOutcome> {
    train_multitask(vec![task], Sharing::Lookup, config, observer)
}

fn first_layer(model: &Model) -> Option<usize> {
    model
        .network
        .layers
        .iter()
        .position(|l| matches!(l, Layer::Linear(_) | Layer::Conv(_)))
}

/// Tables every task has in common (same feature, same shape).
fn shared_tables(tasks: &[Task]) -> Result<Vec<usize>> {
    let first = &tasks[0].model;
    let word = first
        .word_feature()
        .ok_or_else(|| Error::InvalidConfig("multi-task training needs a word feature".into()))?;
    let mut shared = Vec::new();
    for (k, f) in first.features.iter().enumerate() {
        let same = tasks.iter().all(|t| {
            t.model.features.get(k).is_some_and(|g| g.kind == f.kind && g.dim == f.dim && g.dictionary == f.dictionary)
        });
        if same {
            shared.push(k);
        } else if k == word {
            return Err(Error::InvalidConfig(
                "tasks disagree on the word lookup table".into(),
            ));
        }
    }
    Ok(shared)
}

fn copy_first_layer(from: &Model, to: &mut Model, layer: usize) {
    to.network.layers[layer] = from.network.layers[layer].clone();
}

/// Joint training with strict round-robin over tasks. Shared lookup tables
/// (and optionally the first layer) start equal and stay bit-identical
/// across the task models: after each step the touched shared rows are
/// copied from the updated model to all others.
pub fn train_multitask(
    mut tasks: Vec<Task>,
    sharing: Sharing,
    config: &TrainConfig,
    observer: &mut dyn FnMut(&EpochReport, &[Model]),
) -> Result<TrainOutcome> {
    config.validate()?;
    if tasks.is_empty() {
        return Err(Error::Empty("task list"));
    }
    for task in &mut tasks {
        if task.train.is_empty() {
            return Err(Error::Empty("training corpus"));
        }
        if task.valid.is_empty() && config.validation_fraction > 0.0 {
            let (train, valid) = split_holdout(&task.train, config.validation_fraction);
            if train.is_empty() {
                return Err(Error::Empty("training corpus"));
            }
            let (train, valid) = (train.to_vec(), valid.to_vec());
            task.train = train;
            task.valid = valid;
        }
    }
    let shared = shared_tables(&tasks)?;
    let shared_layer = match sharing {
        Sharing::Lookup => None,
        Sharing::LookupAndFirstLayer => {
            let l = first_layer(&tasks[0].model);
            let ok = tasks.iter().all(|t| {
                t.model.network.spec.architecture == tasks[0].model.network.spec.architecture
                    && first_layer(&t.model) == l
                    && l.is_some_and(|l| {
                        layer_shape(&t.model.network.layers[l]) == layer_shape(&tasks[0].model.network.layers[l])
                    })
            });
            if !ok {
                return Err(Error::InvalidConfig("tasks disagree on the first layer".into()));
            }
            l
        }
    };
    let (head, rest) = tasks.split_at_mut(1);
    for t in rest {
        for &k in &shared {
            t.model.network.tables[k] = head[0].model.network.tables[k].clone();
        }
        if let Some(l) = shared_layer {
            copy_first_layer(&head[0].model, &mut t.model, l);
        }
    }

    let frozen = config.frozen_mask(tasks[0].model.features.len());
    let mut streams: Vec<Stream> = tasks
        .iter()
        .enumerate()
        .map(|(i, t)| Stream::new(&t.model, &t.train, config.seed.wrapping_add(i as u64)))
        .collect();
    let steps_per_task = streams.iter().map(|s| s.examples.len()).max().unwrap_or(0);

    let mut history = Vec::new();
    let mut best: Option<(f64, usize, Vec<Model>)> = None;
    let mut since_best = 0;
    for epoch in 1..=config.epochs {
        let mut total_loss = 0.0;
        for _ in 0..steps_per_task {
            for i in 0..tasks.len() {
                let ex = streams[i].pull();
                let task = &tasks[i];
                let sentence = &task.train[ex.sentence];
                let (loss, grad) = match ex.word {
                    Some(t) => word_loss_grad(&task.model, sentence, t)?,
                    None => sentence_loss_grad(&task.model, sentence)?,
                };
                total_loss += loss;
                sgd_step(&mut tasks[i].model, &grad, config.learning_rate, config.fan_in_scaling, &frozen)?;
                if tasks.len() > 1 {
                    sync_shared(&mut tasks, i, &shared, &frozen, shared_layer, &grad.network.tables);
                }
            }
        }
        let metrics = tasks.iter().map(|t| score(t, &t.model)).collect::<Result<Vec<_>>>()?;
        let report = EpochReport {
            epoch,
            loss: total_loss / (steps_per_task * tasks.len()) as f64,
            metrics,
        };
        let models: Vec<Model> = tasks.iter().map(|t| t.model.clone()).collect();
        observer(&report, &models);
        let metric = report.mean_metric();
        history.push(report);
        if metric.is_nan() {
            best = Some((metric, epoch, models));
            continue;
        }
        if best.as_ref().is_none_or(|(m, _, _)| m.is_nan() || metric > *m) {
            best = Some((metric, epoch, models));
            since_best = 0;
        } else {
            since_best += 1;
            if config.patience.is_some_and(|p| since_best >= p) {
                log::info!("no improvement for {since_best} epochs, stopping");
                break;
            }
        }
    }
    let (models, best_epoch) = match best {
        Some((_, e, m)) => (m, e),
        None => (tasks.into_iter().map(|t| t.model).collect(), 0),
    };
    Ok(TrainOutcome {
        models,
        history,
        best_epoch,
    })
}

fn layer_shape(layer: &Layer) -> Option<(usize, usize)> {
    match layer {
        Layer::Linear(l) => Some(l.weight.dim()),
        Layer::Conv(c) => Some(c.weight.dim()),
        _ => None,
    }
}

fn sync_shared(
    tasks: &mut [Task],
    source: usize,
    shared: &[usize],
    frozen: &[bool],
    shared_layer: Option<usize>,
    touched: &[crate::net::RowGrad],
) {
    let (src, others): (Vec<_>, Vec<_>) = tasks.iter_mut().enumerate().partition(|(i, _)| *i == source);
    let src = &src[0].1.model;
    for (_, t) in others {
        for &k in shared {
            if frozen[k] {
                continue;
            }
            for &r in touched[k].rows.keys() {
                t.model.network.tables[k]
                    .weight
                    .row_mut(r)
                    .assign(&src.network.tables[k].weight.row(r));
            }
        }
        if let Some(l) = shared_layer {
            copy_first_layer(src, &mut t.model, l);
        }
    }
}
