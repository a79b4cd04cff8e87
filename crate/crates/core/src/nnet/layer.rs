use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerKind {
    Dense,
    Relu,
    BatchNorm,
    Softmax,
    Sigmoid,
}

impl LayerKind {
    pub(crate) fn code(self) -> u8 {
        match self {
            LayerKind::Dense => 1,
            LayerKind::Relu => 2,
            LayerKind::BatchNorm => 3,
            LayerKind::Softmax => 4,
            LayerKind::Sigmoid => 5,
        }
    }

    pub(crate) fn from_code(code: u8) -> Result<Self> {
        Ok(match code {
            1 => LayerKind::Dense,
            2 => LayerKind::Relu,
            3 => LayerKind::BatchNorm,
            4 => LayerKind::Softmax,
            5 => LayerKind::Sigmoid,
            other => return Err(Error::Format(format!("unknown layer code {other}"))),
        })
    }

    pub fn is_output_only(self) -> bool {
        matches!(self, LayerKind::Softmax | LayerKind::Sigmoid)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub input_dim: usize,
    pub output_dim: usize,
}

impl LayerSpec {
    pub fn dense(input_dim: usize, output_dim: usize) -> Self {
        LayerSpec { kind: LayerKind::Dense, input_dim, output_dim }
    }

    pub fn relu(dim: usize) -> Self {
        Self::elementwise(LayerKind::Relu, dim)
    }

    pub fn batchnorm(dim: usize) -> Self {
        Self::elementwise(LayerKind::BatchNorm, dim)
    }

    pub fn softmax(dim: usize) -> Self {
        Self::elementwise(LayerKind::Softmax, dim)
    }

    pub fn sigmoid(dim: usize) -> Self {
        Self::elementwise(LayerKind::Sigmoid, dim)
    }

    fn elementwise(kind: LayerKind, dim: usize) -> Self {
        LayerSpec { kind, input_dim: dim, output_dim: dim }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// A learnable tensor with its accumulated gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamTensor {
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
    pub grad: Vec<f64>,
}

impl ParamTensor {
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), values.len());
        let grad = vec![0.0; values.len()];
        ParamTensor { shape, values, grad }
    }

    pub fn filled(shape: Vec<usize>, value: f64) -> Self {
        let n = shape.iter().product();
        Self::new(shape, vec![value; n])
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = 0.0);
    }

    fn matrix(&self) -> ArrayView2<'_, f64> {
        ArrayView2::from_shape((self.shape[0], self.shape[1]), &self.values)
            .expect("shape matches value count")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: ParamTensor,
    pub bias: ParamTensor,
    input: Option<Array2<f64>>,
}

impl Dense {
    pub fn new<R: Rng + ?Sized>(input_dim: usize, output_dim: usize, rng: &mut R) -> Self {
        let limit = (6.0 / (input_dim + output_dim) as f64).sqrt();
        let values = (0..input_dim * output_dim).map(|_| rng.random_range(-limit..=limit)).collect();
        Dense::from_parts(
            ParamTensor::new(vec![input_dim, output_dim], values),
            ParamTensor::filled(vec![output_dim], 0.0),
        )
    }

    pub fn from_parts(weight: ParamTensor, bias: ParamTensor) -> Self {
        Dense { weight, bias, input: None }
    }

    fn forward(&mut self, x: &Array2<f64>, keep: bool) -> Array2<f64> {
        let y = self.apply(x);
        self.input = keep.then(|| x.clone());
        y
    }

    fn apply(&self, x: &Array2<f64>) -> Array2<f64> {
        let mut y = x.dot(&self.weight.matrix());
        let b = ArrayView2::from_shape((1, self.bias.len()), &self.bias.values).expect("bias row");
        y += &b;
        y
    }

    fn backward(&mut self, g: &Array2<f64>) -> Result<Array2<f64>> {
        let x = self.input.take().ok_or_else(|| Error::usage("dense backward without forward"))?;
        let dw = x.t().dot(g);
        for (acc, d) in self.weight.grad.iter_mut().zip(dw.iter()) {
            *acc += d;
        }
        for (acc, d) in self.bias.grad.iter_mut().zip(g.sum_axis(Axis(0)).iter()) {
            *acc += d;
        }
        Ok(g.dot(&self.weight.matrix().t()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub gamma: ParamTensor,
    pub beta: ParamTensor,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
    pub epsilon: f64,
    cache: Option<BnCache>,
}

#[derive(Debug, Clone, PartialEq)]
struct BnCache {
    normalized: Array2<f64>,
    inv_std: Array1<f64>,
    mode: Mode,
}

impl BatchNorm {
    pub const DEFAULT_MOMENTUM: f64 = 0.9;
    pub const DEFAULT_EPSILON: f64 = 1e-5;

    pub fn new(dim: usize) -> Self {
        BatchNorm {
            gamma: ParamTensor::filled(vec![dim], 1.0),
            beta: ParamTensor::filled(vec![dim], 0.0),
            running_mean: vec![0.0; dim],
            running_var: vec![1.0; dim],
            momentum: Self::DEFAULT_MOMENTUM,
            epsilon: Self::DEFAULT_EPSILON,
            cache: None,
        }
    }

    fn forward(&mut self, x: &Array2<f64>, mode: Mode, keep: bool) -> Result<Array2<f64>> {
        let (mean, var) = match mode {
            Mode::Train => {
                let n = x.nrows();
                if n < 2 {
                    return Err(Error::usage("batchnorm in train mode needs at least 2 rows"));
                }
                let mean = x.mean_axis(Axis(0)).expect("non-empty batch");
                let var = x.var_axis(Axis(0), 0.0);
                let unbiased = n as f64 / (n - 1) as f64;
                for j in 0..mean.len() {
                    self.running_mean[j] =
                        self.momentum * self.running_mean[j] + (1.0 - self.momentum) * mean[j];
                    self.running_var[j] =
                        self.momentum * self.running_var[j] + (1.0 - self.momentum) * var[j] * unbiased;
                }
                (mean, var)
            }
            Mode::Eval => (Array1::from(self.running_mean.clone()), Array1::from(self.running_var.clone())),
        };
        let inv_std = var.mapv(|v| 1.0 / (v + self.epsilon).sqrt());
        let normalized = (x - &mean) * &inv_std;
        let y = &normalized * &Array1::from(self.gamma.values.clone())
            + &Array1::from(self.beta.values.clone());
        self.cache = keep.then_some(BnCache { normalized, inv_std, mode });
        Ok(y)
    }

    fn apply(&self, x: &Array2<f64>) -> Array2<f64> {
        let mut y = x.clone();
        for mut row in y.rows_mut() {
            for j in 0..row.len() {
                let inv = 1.0 / (self.running_var[j] + self.epsilon).sqrt();
                row[j] = (row[j] - self.running_mean[j]) * inv * self.gamma.values[j] + self.beta.values[j];
            }
        }
        y
    }

    fn backward(&mut self, g: &Array2<f64>) -> Result<Array2<f64>> {
        let cache = self.cache.take().ok_or_else(|| Error::usage("batchnorm backward without forward"))?;
        let gamma = Array1::from(self.gamma.values.clone());
        let dgamma = (g * &cache.normalized).sum_axis(Axis(0));
        let dbeta = g.sum_axis(Axis(0));
        for j in 0..gamma.len() {
            self.gamma.grad[j] += dgamma[j];
            self.beta.grad[j] += dbeta[j];
        }
        let dxhat = g * &gamma;
        Ok(match cache.mode {
            Mode::Eval => dxhat * &cache.inv_std,
            Mode::Train => {
                let n = g.nrows() as f64;
                let sum_dxhat = dxhat.sum_axis(Axis(0));
                let sum_dxhat_xhat = (&dxhat * &cache.normalized).sum_axis(Axis(0));
                let centered = &dxhat * n - &sum_dxhat - &(&cache.normalized * &sum_dxhat_xhat);
                centered * &(&cache.inv_std / n)
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Dense(Dense),
    Relu { dim: usize, input: Option<Array2<f64>> },
    BatchNorm(BatchNorm),
    Softmax { dim: usize, output: Option<Array2<f64>> },
    Sigmoid { dim: usize, output: Option<Array2<f64>> },
}

impl Layer {
    pub fn from_spec<R: Rng + ?Sized>(spec: &LayerSpec, rng: &mut R) -> Self {
        match spec.kind {
            LayerKind::Dense => Layer::Dense(Dense::new(spec.input_dim, spec.output_dim, rng)),
            LayerKind::Relu => Layer::Relu { dim: spec.input_dim, input: None },
            LayerKind::BatchNorm => Layer::BatchNorm(BatchNorm::new(spec.input_dim)),
            LayerKind::Softmax => Layer::Softmax { dim: spec.input_dim, output: None },
            LayerKind::Sigmoid => Layer::Sigmoid { dim: spec.input_dim, output: None },
        }
    }

    pub fn kind(&self) -> LayerKind {
        match self {
            Layer::Dense(_) => LayerKind::Dense,
            Layer::Relu { .. } => LayerKind::Relu,
            Layer::BatchNorm(_) => LayerKind::BatchNorm,
            Layer::Softmax { .. } => LayerKind::Softmax,
            Layer::Sigmoid { .. } => LayerKind::Sigmoid,
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            Layer::Dense(d) => d.weight.shape[0],
            Layer::BatchNorm(b) => b.gamma.len(),
            Layer::Relu { dim, .. } | Layer::Softmax { dim, .. } | Layer::Sigmoid { dim, .. } => *dim,
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            Layer::Dense(d) => d.weight.shape[1],
            other => other.input_dim(),
        }
    }

    pub fn params(&self) -> Vec<&ParamTensor> {
        match self {
            Layer::Dense(d) => vec![&d.weight, &d.bias],
            Layer::BatchNorm(b) => vec![&b.gamma, &b.beta],
            _ => Vec::new(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut ParamTensor> {
        match self {
            Layer::Dense(d) => vec![&mut d.weight, &mut d.bias],
            Layer::BatchNorm(b) => vec![&mut b.gamma, &mut b.beta],
            _ => Vec::new(),
        }
    }

    pub(crate) fn forward(&mut self, x: &Array2<f64>, mode: Mode, keep: bool) -> Result<Array2<f64>> {
        Ok(match self {
            Layer::Dense(d) => d.forward(x, keep),
            Layer::BatchNorm(b) => b.forward(x, mode, keep)?,
            Layer::Relu { input, .. } => {
                *input = keep.then(|| x.clone());
                x.mapv(|v| v.max(0.0))
            }
            Layer::Softmax { output, .. } => {
                let y = softmax_rows(x);
                *output = keep.then(|| y.clone());
                y
            }
            Layer::Sigmoid { output, .. } => {
                let y = x.mapv(sigmoid);
                *output = keep.then(|| y.clone());
                y
            }
        })
    }

    /// Eval-mode forward that leaves the layer untouched.
    pub(crate) fn apply(&self, x: &Array2<f64>) -> Array2<f64> {
        match self {
            Layer::Dense(d) => d.apply(x),
            Layer::BatchNorm(b) => b.apply(x),
            Layer::Relu { .. } => x.mapv(|v| v.max(0.0)),
            Layer::Softmax { .. } => softmax_rows(x),
            Layer::Sigmoid { .. } => x.mapv(sigmoid),
        }
    }

    pub(crate) fn backward(&mut self, g: &Array2<f64>) -> Result<Array2<f64>> {
        let missing = || Error::usage("backward without forward");
        match self {
            Layer::Dense(d) => d.backward(g),
            Layer::BatchNorm(b) => b.backward(g),
            Layer::Relu { input, .. } => {
                let x = input.take().ok_or_else(missing)?;
                Ok(ndarray::Zip::from(g).and(&x).map_collect(|&g, &x| if x > 0.0 { g } else { 0.0 }))
            }
            Layer::Softmax { output, .. } => {
                let y = output.take().ok_or_else(missing)?;
                let dot = (g * &y).sum_axis(Axis(1)).insert_axis(Axis(1));
                Ok(&y * &(g - &dot))
            }
            Layer::Sigmoid { output, .. } => {
                let y = output.take().ok_or_else(missing)?;
                Ok(g * &y.mapv(|v| v * (1.0 - v)))
            }
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Row-wise softmax in the max-shifted form.
pub fn softmax_rows(x: &Array2<f64>) -> Array2<f64> {
    let mut y = x.clone();
    for mut row in y.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    y
}
