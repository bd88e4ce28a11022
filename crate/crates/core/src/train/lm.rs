use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{ranking_example_grad, sgd_step};
use crate::corpus::{split_holdout, Dictionary, Sentence, PADDING_INDEX};
use crate::crf::ranking_loss_grad;
use crate::error::{Error, Result};
use crate::features::FeatureSpec;
use crate::model::{Loss, Model, Shape};
use crate::net::Architecture;

#[derive(Debug, Clone, PartialEq)]
pub struct LmConfig {
    pub window: usize,
    pub word_dim: usize,
    pub hidden: usize,
    pub learning_rate: f64,
    pub fan_in_scaling: bool,
    pub iterations: usize,
    /// Held-out evaluation period, in iterations.
    pub eval_every: usize,
    /// Number of held-out (window, corrupting word) pairs.
    pub validation_windows: usize,
    /// Fraction of sentences, taken from the end, used for validation.
    pub validation_fraction: f64,
    pub seed: u64,
}

impl Default for LmConfig {
    fn default() -> Self {
        Self {
            window: 11,
            word_dim: 50,
            hidden: 100,
            learning_rate: 0.01,
            fan_in_scaling: true,
            iterations: 100_000,
            eval_every: 10_000,
            validation_windows: 1000,
            validation_fraction: 0.05,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LmResult {
    /// Single-output window scorer; its word table holds the embeddings.
    pub model: Model,
    /// `(iteration, mean held-out ranking loss)` at every checkpoint.
    pub trace: Vec<(usize, f64)>,
}

/// Copy of `sentence` with word `t` replaced by dictionary entry `word`.
pub fn corrupt_center(model: &Model, sentence: &Sentence, t: usize, word: usize) -> Result<Sentence> {
    let k = model
        .word_feature()
        .ok_or_else(|| Error::InvalidConfig("model has no word feature".into()))?;
    let size = model.features[k].size();
    if word >= size {
        return Err(Error::IndexOutOfRange {
            what: "corrupting word".into(),
            index: word,
            size,
        });
    }
    if t >= sentence.len() {
        return Err(Error::IndexOutOfRange {
            what: "center position".into(),
            index: t,
            size: sentence.len(),
        });
    }
    let mut out = sentence.clone();
    out.feature_rows[k][t] = word;
    Ok(out)
}

/// Trains a window scorer with the pairwise ranking criterion: a genuine
/// window should outscore the same window with its center word replaced
/// by a random dictionary word, by a margin of 1. Positions are sampled
/// uniformly over the corpus and the corrupting word uniformly over every
/// entry except PADDING.
pub fn train_lm(corpus: &[Vec<String>], dictionary: Dictionary, config: &LmConfig) -> Result<LmResult> {
    if dictionary.len() < 2 {
        return Err(Error::InvalidConfig("ranking needs a dictionary of at least two words".into()));
    }
    if config.eval_every == 0 {
        return Err(Error::InvalidConfig("evaluation period must be positive".into()));
    }
    let shape = Shape {
        architecture: Architecture::Window,
        window: config.window,
        hidden: vec![config.hidden],
        position: None,
    };
    let size = dictionary.len();
    let mut model = Model::new(
        vec![FeatureSpec::word(dictionary, config.word_dim)],
        vec!["score".into()],
        &shape,
        Loss::Wll,
        config.seed,
    )?;
    let sentences: Vec<Sentence> = corpus
        .iter()
        .filter(|s| !s.is_empty())
        .map(|s| model.encode(s.clone(), None, None::<&[&str]>, None))
        .collect::<Result<_>>()?;
    let (train, held) = split_holdout(&sentences, config.validation_fraction);
    if train.is_empty() {
        return Err(Error::Empty("language-model corpus"));
    }
    let positions = |set: &[Sentence]| -> Vec<(usize, usize)> {
        set.iter()
            .enumerate()
            .flat_map(|(i, s)| (0..s.len()).map(move |t| (i, t)))
            .collect()
    };
    let train_pos = positions(train);

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut eval_rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_cafe);
    let held_pos = positions(held);
    let validation: Vec<(usize, usize, usize)> = if held_pos.is_empty() {
        Vec::new()
    } else {
        (0..config.validation_windows)
            .map(|_| {
                let (s, t) = held_pos[eval_rng.random_range(0..held_pos.len())];
                (s, t, eval_rng.random_range(PADDING_INDEX + 1..size))
            })
            .collect()
    };
    let held_loss = |model: &Model| -> Result<f64> {
        let mut total = 0.0;
        for &(s, t, w) in &validation {
            let pos = model.scores(&held[s])?[[t, 0]];
            let neg = model.scores(&corrupt_center(model, &held[s], t, w)?)?[[t, 0]];
            total += ranking_loss_grad(pos, neg).0;
        }
        Ok(total / validation.len() as f64)
    };

    let mut trace = Vec::new();
    let mut running = 0.0;
    for it in 1..=config.iterations {
        let (s, t) = train_pos[rng.random_range(0..train_pos.len())];
        let w = rng.random_range(PADDING_INDEX + 1..size);
        let (loss, grad) = ranking_example_grad(&model, &train[s], t, w)?;
        running += loss;
        if loss > 0.0 {
            sgd_step(&mut model, &grad, config.learning_rate, config.fan_in_scaling, &[])?;
        }
        if it % config.eval_every == 0 {
            let train_mean = running / config.eval_every as f64;
            running = 0.0;
            if !validation.is_empty() {
                let v = held_loss(&model)?;
                log::info!("iteration {it} train {train_mean:.4} held-out {v:.4}");
                trace.push((it, v));
            }
        }
    }
    Ok(LmResult { model, trace })
}
