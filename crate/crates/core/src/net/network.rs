use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::layers::{
    hardtanh, hardtanh_backward, lookup_backward, lookup_forward, max_backward, max_forward,
    window_concat, Conv, DenseGrad, Linear, LookupTable, RowGrad,
};
use crate::corpus::Sentence;
use crate::error::{Error, Result};
use crate::features::relative_position_feature;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Architecture {
    /// Fixed window of words around the word to tag.
    Window,
    /// Convolution over the whole sentence followed by a max over time.
    Sentence,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LookupSpec {
    pub size: usize,
    pub dim: usize,
    /// Row used for the padding words around the sentence.
    pub padding: usize,
}

/// Relative-position lookup tables of the sentence architecture: one for
/// the distance to the word being tagged, and optionally one for the
/// distance to the predicate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PositionSpec {
    pub clip: usize,
    pub dim: usize,
    pub verb: bool,
}

impl PositionSpec {
    pub fn size(&self) -> usize {
        2 * self.clip + 1
    }

    pub fn tables(&self) -> usize {
        1 + usize::from(self.verb)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetworkSpec {
    pub architecture: Architecture,
    pub lookups: Vec<LookupSpec>,
    /// Sentence architecture only.
    pub position: Option<PositionSpec>,
    /// Window size of the window network, or convolution width.
    pub window: usize,
    /// Window: one linear + HardTanh layer per entry. Sentence: the first
    /// entry is the convolution width, each further entry a linear +
    /// HardTanh layer after the max.
    pub hidden: Vec<usize>,
    pub outputs: usize,
}

impl NetworkSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidSpec(m));
        if self.window.is_multiple_of(2) {
            return bad(format!("window size must be odd, got {}", self.window));
        }
        if self.outputs == 0 {
            return bad("network needs at least one output".into());
        }
        if self.lookups.is_empty() {
            return bad("network needs at least one lookup table".into());
        }
        for (k, l) in self.lookups.iter().enumerate() {
            if l.size == 0 || l.dim == 0 || l.padding >= l.size {
                return bad(format!("lookup table {k} is malformed: {l:?}"));
            }
        }
        if self.hidden.contains(&0) {
            return bad("hidden layers need at least one unit".into());
        }
        match self.architecture {
            Architecture::Window if self.position.is_some() => {
                bad("position features require the sentence architecture".into())
            }
            Architecture::Sentence if self.hidden.is_empty() => {
                bad("sentence architecture needs a convolution size".into())
            }
            _ => match self.position {
                Some(p) if p.dim == 0 || p.clip == 0 => bad("position features need dim and clip >= 1".into()),
                _ => Ok(()),
            },
        }
    }

    /// Width of one word's concatenated lookup vector.
    pub fn word_dim(&self) -> usize {
        let pos = self.position.map_or(0, |p| p.dim * p.tables());
        self.lookups.iter().map(|l| l.dim).sum::<usize>() + pos
    }

    /// Sizes of every lookup table, position tables last.
    pub fn table_shapes(&self) -> Vec<(usize, usize)> {
        let mut shapes: Vec<_> = self.lookups.iter().map(|l| (l.size, l.dim)).collect();
        if let Some(p) = self.position {
            shapes.extend(std::iter::repeat_n((p.size(), p.dim), p.tables()));
        }
        shapes
    }

    pub fn half_window(&self) -> usize {
        self.window / 2
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Linear(Linear),
    HardTanh,
    Conv(Conv),
    Max,
}

impl Layer {
    /// Inputs per output, used for init and learning-rate scaling.
    pub fn fan_in(&self) -> Option<usize> {
        match self {
            Layer::Linear(l) => Some(l.inputs()),
            Layer::Conv(c) => Some(c.weight.ncols()),
            _ => None,
        }
    }
}

/// Activation passed between layers.
#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Vector(Array1<f64>),
    Matrix(Array2<f64>),
}

impl Value {
    fn vector(&self) -> Result<ArrayView1<'_, f64>> {
        match self {
            Value::Vector(v) => Ok(v.view()),
            Value::Matrix(_) => Err(Error::Shape("layer expects a vector".into())),
        }
    }

    fn matrix(&self) -> Result<ArrayView2<'_, f64>> {
        match self {
            Value::Matrix(m) => Ok(m.view()),
            Value::Vector(_) => Err(Error::Shape("layer expects a matrix".into())),
        }
    }
}

/// Everything the backward pass needs from one forward evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct ColumnTrace {
    /// Lookup indices fed to each table.
    pub indices: Vec<Vec<usize>>,
    /// Input of every layer.
    pub inputs: Vec<Value>,
    /// Winning rows of each max layer.
    pub argmax: Vec<Option<Vec<usize>>>,
    pub scores: Array1<f64>,
}

impl ColumnTrace {
    /// Distance to the nearest non-differentiable point: HardTanh inputs
    /// near ±1 and max layers whose top two rows nearly tie.
    pub fn kink_margin(&self, layers: &[Layer]) -> f64 {
        let mut margin = f64::INFINITY;
        for (layer, input) in layers.iter().zip(&self.inputs) {
            match (layer, input) {
                (Layer::HardTanh, Value::Vector(v)) => {
                    for x in v {
                        margin = margin.min((x.abs() - 1.0).abs());
                    }
                }
                (Layer::Max, Value::Matrix(m)) if m.nrows() > 1 => {
                    for col in m.columns() {
                        let mut sorted: Vec<f64> = col.to_vec();
                        sorted.sort_by(|a, b| b.total_cmp(a));
                        margin = margin.min(sorted[0] - sorted[1]);
                    }
                }
                _ => {}
            }
        }
        margin
    }
}

/// Parameter gradients of a network, plus optional transition gradients
/// filled by the sentence-level criterion.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub tables: Vec<RowGrad>,
    pub layers: Vec<Option<DenseGrad>>,
}

impl Gradients {
    pub fn zeros_like(net: &Network) -> Self {
        Self {
            tables: vec![RowGrad::default(); net.tables.len()],
            layers: net
                .layers
                .iter()
                .map(|l| match l {
                    Layer::Linear(l) => Some(DenseGrad::zeros(l.outputs(), l.inputs())),
                    Layer::Conv(c) => Some(DenseGrad::zeros(c.outputs(), c.weight.ncols())),
                    _ => None,
                })
                .collect(),
        }
    }

    pub fn add(&mut self, other: &Gradients) {
        for (a, b) in self.tables.iter_mut().zip(&other.tables) {
            a.merge(b);
        }
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            if let (Some(a), Some(b)) = (a, b) {
                a.add(b);
            }
        }
    }

    /// Name of the first tensor holding a NaN or infinity.
    pub fn first_non_finite(&self) -> Option<String> {
        for (k, t) in self.tables.iter().enumerate() {
            for (r, g) in &t.rows {
                if g.iter().any(|x| !x.is_finite()) {
                    return Some(format!("lookup table {k} row {r}"));
                }
            }
        }
        for (l, g) in self.layers.iter().enumerate() {
            if let Some(g) = g {
                if g.weight.iter().chain(g.bias.iter()).any(|x| !x.is_finite()) {
                    return Some(format!("layer {l}"));
                }
            }
        }
        None
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub spec: NetworkSpec,
    /// Feature tables in spec order, then position tables.
    pub tables: Vec<LookupTable>,
    pub layers: Vec<Layer>,
}

impl Network {
    /// Window: lookup → concat → (linear → HardTanh)* → linear.
    /// Sentence: lookup (+ positions) → conv → max → (linear → HardTanh)* → linear.
    pub fn new(spec: NetworkSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tables = spec
            .table_shapes()
            .into_iter()
            .map(|(size, dim)| LookupTable::new(size, dim, &mut rng))
            .collect();
        let mut layers = Vec::new();
        let word_dim = spec.word_dim();
        let (mut width, rest) = match spec.architecture {
            Architecture::Window => (spec.window * word_dim, &spec.hidden[..]),
            Architecture::Sentence => {
                let units = spec.hidden[0];
                layers.push(Layer::Conv(Conv::new(word_dim, units, spec.window, &mut rng)));
                layers.push(Layer::Max);
                (units, &spec.hidden[1..])
            }
        };
        for &units in rest {
            layers.push(Layer::Linear(Linear::new(width, units, &mut rng)));
            layers.push(Layer::HardTanh);
            width = units;
        }
        layers.push(Layer::Linear(Linear::new(width, spec.outputs, &mut rng)));
        Ok(Self { spec, tables, layers })
    }

    pub fn outputs(&self) -> usize {
        self.spec.outputs
    }

    pub fn parameter_count(&self) -> usize {
        let tables: usize = self.tables.iter().map(|t| t.weight.len()).sum();
        let layers: usize = self
            .layers
            .iter()
            .map(|l| match l {
                Layer::Linear(l) => l.weight.len() + l.bias.len(),
                Layer::Conv(c) => c.weight.len() + c.bias.len(),
                _ => 0,
            })
            .sum();
        tables + layers
    }

    /// Feature rows with `window / 2` padding entries on both sides.
    pub fn padded_rows(&self, sentence: &Sentence) -> Result<Vec<Vec<usize>>> {
        if sentence.feature_rows.len() != self.spec.lookups.len() {
            return Err(Error::LengthMismatch {
                what: "feature rows",
                expected: self.spec.lookups.len(),
                actual: sentence.feature_rows.len(),
            });
        }
        let sizes: Vec<usize> = self.spec.lookups.iter().map(|l| l.size).collect();
        sentence.check_bounds(&sizes)?;
        let h = self.spec.half_window();
        Ok(self
            .spec
            .lookups
            .iter()
            .zip(&sentence.feature_rows)
            .map(|(l, row)| {
                let mut padded = Vec::with_capacity(row.len() + 2 * h);
                padded.extend(std::iter::repeat_n(l.padding, h));
                padded.extend_from_slice(row);
                padded.extend(std::iter::repeat_n(l.padding, h));
                padded
            })
            .collect())
    }

    /// Lookup indices for tagging word `t`.
    pub fn column_indices(&self, padded: &[Vec<usize>], t: usize, verb: Option<usize>) -> Result<Vec<Vec<usize>>> {
        match self.spec.architecture {
            Architecture::Window => Ok(padded
                .iter()
                .map(|row| row[t..t + self.spec.window].to_vec())
                .collect()),
            Architecture::Sentence => {
                let mut rows = padded.to_vec();
                if let Some(p) = self.spec.position {
                    let h = self.spec.half_window() as isize;
                    let n = padded.first().map_or(0, Vec::len);
                    let rel = |anchor: usize| -> Vec<usize> {
                        (0..n)
                            .map(|i| relative_position_feature(i as isize - h, anchor as isize, p.clip))
                            .collect()
                    };
                    rows.push(rel(t));
                    if p.verb {
                        let v = verb.ok_or_else(|| {
                            Error::InvalidConfig("network needs a predicate position".into())
                        })?;
                        rows.push(rel(v));
                    }
                }
                Ok(rows)
            }
        }
    }

    fn first_input(&self, indices: &[Vec<usize>]) -> Result<Value> {
        let m = lookup_forward(&self.tables, indices)?;
        Ok(match self.spec.architecture {
            Architecture::Window => Value::Vector(window_concat(m.view(), 0, m.nrows())),
            Architecture::Sentence => Value::Matrix(m),
        })
    }

    fn layer_forward(layer: &Layer, input: &Value) -> Result<(Value, Option<Vec<usize>>)> {
        Ok(match layer {
            Layer::Linear(l) => (Value::Vector(l.forward(input.vector()?)?), None),
            Layer::HardTanh => (Value::Vector(hardtanh(input.vector()?)), None),
            Layer::Conv(c) => (Value::Matrix(c.forward(input.matrix()?)?), None),
            Layer::Max => {
                let (v, a) = max_forward(input.matrix()?);
                (Value::Vector(v), Some(a))
            }
        })
    }

    /// Forward pass for one tagging decision, recording the trace.
    pub fn forward_column(&self, indices: Vec<Vec<usize>>) -> Result<ColumnTrace> {
        let mut value = self.first_input(&indices)?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut argmax = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (out, arg) = Self::layer_forward(layer, &value)?;
            inputs.push(std::mem::replace(&mut value, out));
            argmax.push(arg);
        }
        let scores = match value {
            Value::Vector(v) => v,
            Value::Matrix(_) => return Err(Error::Shape("network output must be a vector".into())),
        };
        Ok(ColumnTrace {
            indices,
            inputs,
            argmax,
            scores,
        })
    }

    /// Backpropagates `grad_scores` through one traced decision,
    /// accumulating into `grads`.
    pub fn backward_column(&self, trace: &ColumnTrace, grad_scores: ArrayView1<f64>, grads: &mut Gradients) -> Result<()> {
        if trace.inputs.len() != self.layers.len() || grad_scores.len() != self.outputs() {
            return Err(Error::Shape("trace does not match network".into()));
        }
        let mut grad = Value::Vector(grad_scores.to_owned());
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let input = &trace.inputs[l];
            grad = match layer {
                Layer::Linear(lin) => {
                    let (g, gi) = lin.backward(input.vector()?, grad.vector()?);
                    if let Some(acc) = grads.layers[l].as_mut() {
                        acc.add(&g);
                    }
                    Value::Vector(gi)
                }
                Layer::HardTanh => Value::Vector(hardtanh_backward(input.vector()?, grad.vector()?)),
                Layer::Conv(conv) => {
                    let (g, gi) = conv.backward(input.matrix()?, grad.matrix()?);
                    if let Some(acc) = grads.layers[l].as_mut() {
                        acc.add(&g);
                    }
                    Value::Matrix(gi)
                }
                Layer::Max => {
                    let argmax = trace.argmax[l]
                        .as_ref()
                        .ok_or_else(|| Error::Shape("max layer trace lacks argmax".into()))?;
                    let rows = input.matrix()?.nrows();
                    Value::Matrix(max_backward(argmax, rows, grad.vector()?))
                }
            };
        }
        let word_dim = self.spec.word_dim();
        let grad_lookup = match grad {
            Value::Vector(v) => v
                .into_shape_with_order((self.spec.window, word_dim))
                .map_err(|e| Error::Shape(e.to_string()))?,
            Value::Matrix(m) => m,
        };
        lookup_backward(&self.tables, &trace.indices, grad_lookup.view(), &mut grads.tables);
        Ok(())
    }

    /// Forward pass for word `t` of a sentence.
    pub fn forward_word(&self, sentence: &Sentence, padded: &[Vec<usize>], t: usize) -> Result<ColumnTrace> {
        let indices = self.column_indices(padded, t, sentence.verb_position)?;
        self.forward_column(indices)
    }

    /// Traced forward pass over every word; scores are `(T, outputs)`.
    pub fn forward_sentence(&self, sentence: &Sentence) -> Result<(Array2<f64>, Vec<ColumnTrace>)> {
        let padded = self.padded_rows(sentence)?;
        let mut scores = Array2::zeros((sentence.len(), self.outputs()));
        let mut traces = Vec::with_capacity(sentence.len());
        for t in 0..sentence.len() {
            let trace = self.forward_word(sentence, &padded, t)?;
            scores.row_mut(t).assign(&trace.scores);
            traces.push(trace);
        }
        Ok((scores, traces))
    }

    /// Inference-only scores `(T, outputs)`, no trace kept.
    pub fn scores(&self, sentence: &Sentence) -> Result<Array2<f64>> {
        let padded = self.padded_rows(sentence)?;
        let len = sentence.len();
        let mut scores = Array2::zeros((len, self.outputs()));
        match self.spec.architecture {
            Architecture::Window => {
                // One lookup for the padded sentence; windows are row slices.
                let m = lookup_forward(&self.tables, &padded)?;
                let m = m.as_standard_layout();
                let width = self.spec.window * m.ncols();
                let flat = m.as_slice().expect("standard layout");
                for t in 0..len {
                    let start = t * m.ncols();
                    let mut value = Value::Vector(ArrayView1::from(&flat[start..start + width]).to_owned());
                    for layer in &self.layers {
                        value = Self::layer_forward(layer, &value)?.0;
                    }
                    scores.row_mut(t).assign(&value.vector()?);
                }
            }
            Architecture::Sentence => {
                for t in 0..len {
                    let indices = self.column_indices(&padded, t, sentence.verb_position)?;
                    let mut value = self.first_input(&indices)?;
                    for layer in &self.layers {
                        value = Self::layer_forward(layer, &value)?.0;
                    }
                    scores.row_mut(t).assign(&value.vector()?);
                }
            }
        }
        Ok(scores)
    }

    /// Plain gradient descent on every tensor: `θ -= rate · grad`, with the
    /// rate divided by the layer fan-in when `fan_in_scaling` is set (lookup
    /// tables have fan-in 1). Tables flagged in `frozen` are left untouched.
    pub fn apply_gradients(&mut self, grads: &Gradients, learning_rate: f64, fan_in_scaling: bool, frozen: &[bool]) {
        for (k, (table, g)) in self.tables.iter_mut().zip(&grads.tables).enumerate() {
            if frozen.get(k).copied().unwrap_or(false) {
                continue;
            }
            for (&r, row) in &g.rows {
                table.weight.row_mut(r).scaled_add(-learning_rate, row);
            }
        }
        for (layer, g) in self.layers.iter_mut().zip(&grads.layers) {
            let Some(g) = g else { continue };
            let rate = match layer.fan_in() {
                Some(f) if fan_in_scaling => learning_rate / f as f64,
                _ => learning_rate,
            };
            let (w, b) = match layer {
                Layer::Linear(l) => (&mut l.weight, &mut l.bias),
                Layer::Conv(c) => (&mut c.weight, &mut c.bias),
                _ => continue,
            };
            w.scaled_add(-rate, &g.weight);
            b.scaled_add(-rate, &g.bias);
        }
    }

    /// Every trainable tensor as a flat mutable slice, in serialization
    /// order: tables, then each layer's weight and bias.
    pub fn parameters_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let mut out = Vec::new();
        for (k, t) in self.tables.iter_mut().enumerate() {
            out.push((format!("table{k}"), t.weight.as_slice_mut().expect("standard layout")));
        }
        for (l, layer) in self.layers.iter_mut().enumerate() {
            let (w, b) = match layer {
                Layer::Linear(x) => (&mut x.weight, &mut x.bias),
                Layer::Conv(x) => (&mut x.weight, &mut x.bias),
                _ => continue,
            };
            out.push((format!("layer{l}.weight"), w.as_slice_mut().expect("standard layout")));
            out.push((format!("layer{l}.bias"), b.as_slice_mut().expect("standard layout")));
        }
        out
    }

    /// Gradients laid out like [`Network::parameters_mut`].
    pub fn dense_gradients(&self, grads: &Gradients) -> Vec<Vec<f64>> {
        let mut out = Vec::new();
        for (t, g) in self.tables.iter().zip(&grads.tables) {
            let mut dense = Array2::<f64>::zeros(t.weight.dim());
            for (&r, row) in &g.rows {
                dense.row_mut(r).assign(row);
            }
            out.push(dense.into_raw_vec_and_offset().0);
        }
        for (layer, g) in self.layers.iter().zip(&grads.layers) {
            if let (Some(_), Some(g)) = (layer.fan_in(), g) {
                out.push(g.weight.as_standard_layout().iter().copied().collect());
                out.push(g.bias.to_vec());
            }
        }
        out
    }
}
