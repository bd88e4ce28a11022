//! Layer primitives with hand-derived backward passes.
//!
//! Sequences are stored `(T, n)`: row `t` is the feature vector of word `t`.

use std::collections::BTreeMap;

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;

use crate::error::{Error, Result};

/// Half-width of the uniform init range for a layer with the given fan-in.
///
/// A centered uniform on `[-a, a]` has variance `a^2 / 3`; the variance is
/// set to `fan_in^(-1/2)`.
pub fn init_range(fan_in: usize) -> f64 {
    3f64.sqrt() * (fan_in as f64).powf(-0.25)
}

pub fn uniform_matrix<R: Rng>(rows: usize, cols: usize, fan_in: usize, rng: &mut R) -> Array2<f64> {
    let a = init_range(fan_in);
    Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-a..=a))
}

pub fn uniform_vector<R: Rng>(len: usize, fan_in: usize, rng: &mut R) -> Array1<f64> {
    let a = init_range(fan_in);
    Array1::from_shape_simple_fn(len, || rng.random_range(-a..=a))
}

/// Gradient of a lookup table, kept only for the rows a sentence touched.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RowGrad {
    pub rows: BTreeMap<usize, Array1<f64>>,
}

impl RowGrad {
    pub fn add(&mut self, row: usize, grad: ArrayView1<f64>) {
        match self.rows.get_mut(&row) {
            Some(g) => *g += &grad,
            None => {
                self.rows.insert(row, grad.to_owned());
            }
        }
    }

    pub fn merge(&mut self, other: &RowGrad) {
        for (&r, g) in &other.rows {
            self.add(r, g.view());
        }
    }
}

/// Embedding matrix, one row of `dim` values per dictionary entry.
#[derive(Debug, Clone, PartialEq)]
pub struct LookupTable {
    pub weight: Array2<f64>,
}

impl LookupTable {
    pub fn new<R: Rng>(size: usize, dim: usize, rng: &mut R) -> Self {
        Self {
            weight: uniform_matrix(size, dim, 1, rng),
        }
    }

    pub fn size(&self) -> usize {
        self.weight.nrows()
    }

    pub fn dim(&self) -> usize {
        self.weight.ncols()
    }

    fn check(&self, indices: &[usize]) -> Result<()> {
        match indices.iter().find(|&&i| i >= self.size()) {
            Some(&bad) => Err(Error::IndexOutOfRange {
                what: "lookup table".into(),
                index: bad,
                size: self.size(),
            }),
            None => Ok(()),
        }
    }

    pub fn forward(&self, indices: &[usize]) -> Result<Array2<f64>> {
        self.check(indices)?;
        Ok(self.weight.select(Axis(0), indices))
    }

    /// Sums the output gradient rows into the rows of the words that
    /// produced them.
    pub fn backward(&self, indices: &[usize], grad_out: ArrayView2<f64>, grad: &mut RowGrad) {
        for (&i, g) in indices.iter().zip(grad_out.rows()) {
            grad.add(i, g);
        }
    }
}

/// Concatenates the outputs of several lookup tables word by word.
pub fn lookup_forward<I: AsRef<[usize]>>(tables: &[LookupTable], rows: &[I]) -> Result<Array2<f64>> {
    if tables.len() != rows.len() {
        return Err(Error::LengthMismatch {
            what: "feature rows",
            expected: tables.len(),
            actual: rows.len(),
        });
    }
    let len = rows.first().map_or(0, |r| r.as_ref().len());
    let dim: usize = tables.iter().map(LookupTable::dim).sum();
    let mut out = Array2::zeros((len, dim));
    let mut col = 0;
    for (table, row) in tables.iter().zip(rows) {
        let row = row.as_ref();
        if row.len() != len {
            return Err(Error::LengthMismatch {
                what: "feature row",
                expected: len,
                actual: row.len(),
            });
        }
        table.check(row)?;
        for (t, &i) in row.iter().enumerate() {
            out.slice_mut(s![t, col..col + table.dim()]).assign(&table.weight.row(i));
        }
        col += table.dim();
    }
    Ok(out)
}

/// Splits a gradient over concatenated lookup outputs back into the tables.
pub fn lookup_backward<I: AsRef<[usize]>>(
    tables: &[LookupTable],
    rows: &[I],
    grad_out: ArrayView2<f64>,
    grads: &mut [RowGrad],
) {
    let mut col = 0;
    for ((table, row), grad) in tables.iter().zip(rows).zip(grads.iter_mut()) {
        let d = table.dim();
        table.backward(row.as_ref(), grad_out.slice(s![.., col..col + d]), grad);
        col += d;
    }
}

/// The `window` rows starting at padded position `t`, flattened. With the
/// sentence padded by `window / 2` rows on each side, this is the window
/// centered on word `t`.
pub fn window_concat(padded: ArrayView2<f64>, t: usize, window: usize) -> Array1<f64> {
    padded
        .slice(s![t..t + window, ..])
        .iter()
        .copied()
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseGrad {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl DenseGrad {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            weight: Array2::zeros((rows, cols)),
            bias: Array1::zeros(rows),
        }
    }

    pub fn add(&mut self, other: &DenseGrad) {
        self.weight += &other.weight;
        self.bias += &other.bias;
    }
}

/// Affine layer `W x + b`, `W` of shape `(outputs, inputs)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Linear {
    pub fn new<R: Rng>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        Self {
            weight: uniform_matrix(outputs, inputs, inputs, rng),
            bias: uniform_vector(outputs, inputs, rng),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.weight.nrows()
    }

    pub fn forward(&self, input: ArrayView1<f64>) -> Result<Array1<f64>> {
        if input.len() != self.inputs() {
            return Err(Error::Shape(format!(
                "linear layer expects {} inputs, got {}",
                self.inputs(),
                input.len()
            )));
        }
        Ok(self.weight.dot(&input) + &self.bias)
    }

    /// Returns `(dC/dW = g x^T, dC/db = g)` and `dC/dx = W^T g`.
    pub fn backward(&self, input: ArrayView1<f64>, grad_out: ArrayView1<f64>) -> (DenseGrad, Array1<f64>) {
        let weight = grad_out
            .insert_axis(Axis(1))
            .dot(&input.insert_axis(Axis(0)));
        let grad_in = self.weight.t().dot(&grad_out);
        (
            DenseGrad {
                weight,
                bias: grad_out.to_owned(),
            },
            grad_in,
        )
    }
}

/// Linear layer applied to every window of `window` successive rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
    pub window: usize,
}

impl Conv {
    pub fn new<R: Rng>(inputs: usize, outputs: usize, window: usize, rng: &mut R) -> Self {
        let fan_in = window * inputs;
        Self {
            weight: uniform_matrix(outputs, fan_in, fan_in, rng),
            bias: uniform_vector(outputs, fan_in, rng),
            window,
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.ncols() / self.window
    }

    pub fn outputs(&self) -> usize {
        self.weight.nrows()
    }

    /// Row `t` of the result is the flattened window starting at padded row `t`.
    fn unfold(&self, padded: ArrayView2<f64>) -> Array2<f64> {
        let len = padded.nrows() + 1 - self.window;
        let width = self.weight.ncols();
        let mut u = Array2::zeros((len, width));
        for t in 0..len {
            let win = padded.slice(s![t..t + self.window, ..]);
            for (dst, &src) in u.row_mut(t).iter_mut().zip(win.iter()) {
                *dst = src;
            }
        }
        u
    }

    fn check(&self, padded: ArrayView2<f64>) -> Result<()> {
        if padded.ncols() != self.inputs() || padded.nrows() < self.window {
            return Err(Error::Shape(format!(
                "convolution expects at least {} rows of {} features, got {:?}",
                self.window,
                self.inputs(),
                padded.dim()
            )));
        }
        Ok(())
    }

    /// `(T + window - 1, inputs)` padded input → `(T, outputs)`.
    pub fn forward(&self, padded: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check(padded)?;
        let u = self.unfold(padded);
        Ok(u.dot(&self.weight.t()) + &self.bias)
    }

    /// Sums the per-window linear gradients; input gradients of overlapping
    /// windows accumulate.
    pub fn backward(&self, padded: ArrayView2<f64>, grad_out: ArrayView2<f64>) -> (DenseGrad, Array2<f64>) {
        let u = self.unfold(padded);
        let weight = grad_out.t().dot(&u);
        let bias = grad_out.sum_axis(Axis(0));
        let grad_u = grad_out.dot(&self.weight);
        let inputs = self.inputs();
        let mut grad_in = Array2::zeros(padded.dim());
        for (t, g) in grad_u.rows().into_iter().enumerate() {
            let g = g.into_shape_with_order((self.window, inputs)).expect("window layout");
            let mut dst = grad_in.slice_mut(s![t..t + self.window, ..]);
            dst += &g;
        }
        (DenseGrad { weight, bias }, grad_in)
    }
}

pub fn hardtanh(input: ArrayView1<f64>) -> Array1<f64> {
    input.mapv(|x| x.clamp(-1.0, 1.0))
}

/// Gradient passes where `-1 <= x <= 1`, zero elsewhere.
pub fn hardtanh_backward(input: ArrayView1<f64>, grad_out: ArrayView1<f64>) -> Array1<f64> {
    let mut g = grad_out.to_owned();
    g.zip_mut_with(&input, |g, &x| {
        if !(-1.0..=1.0).contains(&x) {
            *g = 0.0;
        }
    });
    g
}

/// Max over time of every feature, with the winning row; ties go to the
/// earliest row.
pub fn max_forward(input: ArrayView2<f64>) -> (Array1<f64>, Vec<usize>) {
    let n = input.ncols();
    let mut values = input.row(0).to_owned();
    let mut argmax = vec![0; n];
    for (t, row) in input.rows().into_iter().enumerate().skip(1) {
        for i in 0..n {
            if row[i] > values[i] {
                values[i] = row[i];
                argmax[i] = t;
            }
        }
    }
    (values, argmax)
}

/// Routes each feature's gradient to its argmax row only.
pub fn max_backward(argmax: &[usize], len: usize, grad_out: ArrayView1<f64>) -> Array2<f64> {
    let mut g = Array2::zeros((len, argmax.len()));
    for (i, &t) in argmax.iter().enumerate() {
        g[[t, i]] = grad_out[i];
    }
    g
}
