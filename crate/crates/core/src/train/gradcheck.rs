use super::{ranking_example_grad, sentence_loss_grad, ModelGrad};
use crate::corpus::Sentence;
use crate::error::Result;
use crate::model::Model;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckLoss {
    /// The model's own criterion over the whole sentence.
    Sentence,
    /// Ranking criterion at word `center` against a corrupting word.
    Ranking { center: usize, negative: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// Parameter holding the worst error.
    pub worst: String,
    pub checked: usize,
    /// Distance of the instance from the nearest kink of a piecewise-linear
    /// unit; finite differences are unreliable when it is below the step.
    pub kink_margin: f64,
}

fn loss_grad(model: &Model, sentence: &Sentence, loss: CheckLoss) -> Result<(f64, ModelGrad)> {
    match loss {
        CheckLoss::Sentence => sentence_loss_grad(model, sentence),
        CheckLoss::Ranking { center, negative } => ranking_example_grad(model, sentence, center, negative),
    }
}

fn kink_margin(model: &Model, sentence: &Sentence, loss: CheckLoss) -> Result<f64> {
    let net = &model.network;
    let margin_of = |s: &Sentence| -> Result<f64> {
        let (_, traces) = net.forward_sentence(s)?;
        Ok(traces.iter().map(|t| t.kink_margin(&net.layers)).fold(f64::INFINITY, f64::min))
    };
    let mut margin = margin_of(sentence)?;
    if let CheckLoss::Ranking { center, negative } = loss {
        let corrupted = super::corrupt_center(model, sentence, center, negative)?;
        margin = margin.min(margin_of(&corrupted)?);
        let pos = net.scores(sentence)?[[center, 0]];
        let neg = net.scores(&corrupted)?[[center, 0]];
        margin = margin.min((1.0 - pos + neg).abs());
    }
    Ok(margin)
}

/// Compares analytic gradients with central differences
/// `(L(θ+h) - L(θ-h)) / 2h` on every parameter, or on `max_per_tensor`
/// evenly spaced entries of larger tensors. Relative error is
/// `|a - n| / max(|a|, |n|)`, counted as zero when `|a - n| <= 1e-8`.
pub fn gradient_check(
    model: &Model,
    sentence: &Sentence,
    loss: CheckLoss,
    step: f64,
    max_per_tensor: usize,
) -> Result<GradCheckReport> {
    let (_, grad) = loss_grad(model, sentence, loss)?;
    let mut analytic = model.network.dense_gradients(&grad.network);
    let with_transitions = grad.transitions.is_some();
    if let Some(t) = &grad.transitions {
        analytic.push(t.initial.to_vec());
        analytic.push(t.matrix.iter().copied().collect());
    }

    let mut probe = model.clone();
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst: String::new(),
        checked: 0,
        kink_margin: kink_margin(model, sentence, loss)?,
    };
    for (ti, grads) in analytic.iter().enumerate() {
        let n = grads.len();
        let stride = n.div_ceil(max_per_tensor.max(1)).max(1);
        for j in (0..n).step_by(stride) {
            let mut eval = |delta: f64| -> Result<f64> {
                nudge(&mut probe, ti, j, delta, with_transitions);
                let l = loss_grad(&probe, sentence, loss)?.0;
                nudge(&mut probe, ti, j, -delta, with_transitions);
                Ok(l)
            };
            let numeric = (eval(step)? - eval(-step)?) / (2.0 * step);
            let a = grads[j];
            let diff = (a - numeric).abs();
            let rel = if diff <= 1e-8 { 0.0 } else { diff / a.abs().max(numeric.abs()) };
            report.checked += 1;
            if rel > report.max_relative_error {
                report.max_relative_error = rel;
                report.worst = format!("tensor {ti} entry {j}: analytic {a:e} numeric {numeric:e}");
            }
        }
    }
    Ok(report)
}

fn nudge(model: &mut Model, tensor: usize, index: usize, delta: f64, with_transitions: bool) {
    let mut params = model.network.parameters_mut();
    let n = params.len();
    if tensor < n {
        params[tensor].1[index] += delta;
        return;
    }
    drop(params);
    debug_assert!(with_transitions);
    let t = &mut model.transitions;
    if tensor == n {
        t.initial[index] += delta;
    } else {
        t.matrix.as_slice_mut().expect("contiguous")[index] += delta;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Dictionary;
    use crate::features::FeatureSpec;
    use crate::model::{Loss, Shape};
    use crate::net::Architecture;

    #[test]
    fn linear_window_model_checks_out() {
        let dict = Dictionary::build("a b c".split(' '), 10).unwrap();
        let shape = Shape {
            architecture: Architecture::Window,
            window: 3,
            hidden: vec![],
            position: None,
        };
        let m = Model::new(vec![FeatureSpec::word(dict, 2)], vec!["X".into(), "Y".into()], &shape, Loss::Sll, 0).unwrap();
        let s = m.encode(vec!["a".into(), "c".into()], None, Some(&["X", "Y"]), None).unwrap();
        let ok = gradient_check(&m, &s, CheckLoss::Sentence, 1e-4, 100).unwrap();
        assert!(ok.max_relative_error < 1e-6, "{ok:?}");
        assert!(ok.kink_margin.is_infinite());
        assert_eq!(ok.checked, 5 * 2 + 6 * 2 + 2 + 2 + 4);
    }
}
