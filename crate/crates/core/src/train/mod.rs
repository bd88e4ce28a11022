//! Training drivers and the utilities built around them.

mod gradcheck;
mod lm;
mod supervised;
mod transfer;

pub use gradcheck::{gradient_check, CheckLoss, GradCheckReport};
pub use lm::{corrupt_center, train_lm, LmConfig, LmResult};
pub use supervised::{
    evaluate_model, tag_accuracy, train_multitask, train_supervised, EpochReport, Metric, Sharing, Task, TrainOutcome,
};
pub use transfer::{embed_neighbors, ensemble_vote, grow_dictionary, pretrain_init};

use ndarray::Array2;

use crate::corpus::Sentence;
use crate::crf::{ranking_loss_grad, sll_loss_grad, wll_loss_grad, TransitionGrad};
use crate::error::{Error, Result};
use crate::model::{Loss, Model};
use crate::net::Gradients;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
    /// Divide each layer's rate by its fan-in.
    pub fan_in_scaling: bool,
    /// Stop after this many epochs without a better validation metric.
    pub patience: Option<usize>,
    /// Lookup tables excluded from updates, by feature index.
    pub frozen_tables: Vec<usize>,
    /// Tail of the training set held out when a task has no validation set.
    pub validation_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            epochs: 10,
            seed: 0,
            fan_in_scaling: true,
            patience: None,
            frozen_tables: Vec::new(),
            validation_fraction: 0.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::InvalidConfig("validation fraction must be in [0, 1)".into()));
        }
        Ok(())
    }

    fn frozen_mask(&self, tables: usize) -> Vec<bool> {
        (0..tables).map(|k| self.frozen_tables.contains(&k)).collect()
    }
}

/// Gradients of one training example.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGrad {
    pub network: Gradients,
    pub transitions: Option<TransitionGrad>,
}

/// One gradient step. Network tensors move by `rate / fan_in` (or `rate`
/// without scaling); transition scores always move by `rate`. Fails before
/// touching any parameter if a gradient is not finite.
pub fn sgd_step(model: &mut Model, grad: &ModelGrad, learning_rate: f64, fan_in_scaling: bool, frozen: &[bool]) -> Result<()> {
    if let Some(bad) = grad.network.first_non_finite() {
        return Err(Error::NonFinite(format!("gradient of {bad}")));
    }
    if let Some(t) = &grad.transitions {
        if t.matrix.iter().chain(t.initial.iter()).any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("gradient of transition scores".into()));
        }
    }
    model.network.apply_gradients(&grad.network, learning_rate, fan_in_scaling, frozen);
    if let Some(t) = &grad.transitions {
        model.transitions.matrix.scaled_add(-learning_rate, &t.matrix);
        model.transitions.initial.scaled_add(-learning_rate, &t.initial);
    }
    Ok(())
}

fn gold(sentence: &Sentence) -> Result<&[usize]> {
    sentence
        .gold_tags
        .as_deref()
        .ok_or_else(|| Error::InvalidConfig("training sentence has no gold tags".into()))
}

/// Per-word criterion for word `t` alone.
pub fn word_loss_grad(model: &Model, sentence: &Sentence, t: usize) -> Result<(f64, ModelGrad)> {
    let gold = gold(sentence)?;
    let net = &model.network;
    let padded = net.padded_rows(sentence)?;
    let trace = net.forward_word(sentence, &padded, t)?;
    let (loss, g) = wll_loss_grad(trace.scores.view(), gold[t])?;
    let mut grads = Gradients::zeros_like(net);
    net.backward_column(&trace, g.view(), &mut grads)?;
    Ok((
        loss,
        ModelGrad {
            network: grads,
            transitions: None,
        },
    ))
}

/// Criterion summed over a whole sentence: per-word terms for WLL, the
/// path likelihood for SLL.
pub fn sentence_loss_grad(model: &Model, sentence: &Sentence) -> Result<(f64, ModelGrad)> {
    let gold = gold(sentence)?;
    let net = &model.network;
    let (scores, traces) = net.forward_sentence(sentence)?;
    let (loss, g_scores, transitions) = match model.loss {
        Loss::Wll => {
            let mut total = 0.0;
            let mut g = Array2::zeros(scores.dim());
            for (t, &y) in gold.iter().enumerate() {
                let (l, gt) = wll_loss_grad(scores.row(t), y)?;
                total += l;
                g.row_mut(t).assign(&gt);
            }
            (total, g, None)
        }
        Loss::Sll => {
            let (l, g, gt) = sll_loss_grad(scores.view(), &model.transitions, gold)?;
            (l, g, Some(gt))
        }
    };
    let mut grads = Gradients::zeros_like(net);
    for (t, trace) in traces.iter().enumerate() {
        net.backward_column(trace, g_scores.row(t), &mut grads)?;
    }
    Ok((
        loss,
        ModelGrad {
            network: grads,
            transitions,
        },
    ))
}

/// Hinge ranking criterion between word `t` of `sentence` and the same
/// window with its center replaced by `negative`, using output 0 as score.
pub fn ranking_example_grad(model: &Model, sentence: &Sentence, t: usize, negative: usize) -> Result<(f64, ModelGrad)> {
    let net = &model.network;
    let corrupted = corrupt_center(model, sentence, t, negative)?;
    let pos = net.forward_word(sentence, &net.padded_rows(sentence)?, t)?;
    let neg = net.forward_word(&corrupted, &net.padded_rows(&corrupted)?, t)?;
    let (loss, dpos, dneg) = ranking_loss_grad(pos.scores[0], neg.scores[0]);
    let mut grads = Gradients::zeros_like(net);
    if loss > 0.0 {
        let mut unit = ndarray::Array1::zeros(net.outputs());
        unit[0] = dpos;
        net.backward_column(&pos, unit.view(), &mut grads)?;
        unit[0] = dneg;
        net.backward_column(&neg, unit.view(), &mut grads)?;
    }
    Ok((
        loss,
        ModelGrad {
            network: grads,
            transitions: None,
        },
    ))
}
