//! Dense networks with hand-written reverse-mode gradients.
//!
//! Only the fixed layer menu needed here is supported: dense, relu, batch
//! normalization and a terminal softmax or sigmoid. All arithmetic is `f64`.

mod checkpoint;
mod layer;

use ndarray::Array2;
use rand::Rng;

pub use checkpoint::{read_network, write_network, NETWORK_MAGIC};
pub(crate) use checkpoint::{get_u32, put_u32};
pub use layer::{
    sigmoid, softmax_rows, BatchNorm, Dense, Layer, LayerKind, LayerSpec, Mode, ParamTensor,
};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    layers: Vec<Layer>,
    pending_backward: bool,
}

impl Network {
    pub fn new<R: Rng + ?Sized>(specs: &[LayerSpec], rng: &mut R) -> Result<Self> {
        validate_specs(specs)?;
        let layers = specs.iter().map(|s| Layer::from_spec(s, rng)).collect();
        Ok(Network { layers, pending_backward: false })
    }

    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        let specs: Vec<LayerSpec> = layers
            .iter()
            .map(|l| LayerSpec { kind: l.kind(), input_dim: l.input_dim(), output_dim: l.output_dim() })
            .collect();
        validate_specs(&specs)?;
        Ok(Network { layers, pending_backward: false })
    }

    /// `dims = [in, h1, .., out]`: dense+relu between hidden sizes, linear output.
    pub fn mlp<R: Rng + ?Sized>(dims: &[usize], rng: &mut R) -> Result<Self> {
        let mut specs = Vec::new();
        for (i, w) in dims.windows(2).enumerate() {
            specs.push(LayerSpec::dense(w[0], w[1]));
            if i + 2 < dims.len() {
                specs.push(LayerSpec::relu(w[1]));
            }
        }
        Self::new(&specs, rng)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].output_dim()
    }

    pub fn has_batchnorm(&self) -> bool {
        self.layers.iter().any(|l| l.kind() == LayerKind::BatchNorm)
    }

    fn check_input(&self, x: &Array2<f64>) -> Result<()> {
        if x.ncols() != self.input_dim() {
            return Err(Error::usage(format!(
                "batch has {} columns, network expects {}",
                x.ncols(),
                self.input_dim()
            )));
        }
        if x.nrows() == 0 {
            return Err(Error::usage("empty batch"));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::numeric("non-finite network input"));
        }
        Ok(())
    }

    /// Forward pass that records what [`Network::backward`] needs.
    pub fn forward(&mut self, x: &Array2<f64>, mode: Mode) -> Result<Array2<f64>> {
        self.check_input(x)?;
        let mut h = x.clone();
        for layer in &mut self.layers {
            h = layer.forward(&h, mode, true)?;
        }
        self.pending_backward = true;
        check_output(h)
    }

    /// Eval-mode forward; a pure function of the weights.
    pub fn infer(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        self.check_input(x)?;
        let mut h = x.clone();
        for layer in &self.layers {
            h = layer.apply(&h);
        }
        check_output(h)
    }

    /// Accumulates parameter gradients for `dL/d(output)` and returns `dL/d(input)`.
    pub fn backward(&mut self, upstream: &Array2<f64>) -> Result<Array2<f64>> {
        if !self.pending_backward {
            return Err(Error::usage("backward called without a preceding forward"));
        }
        if upstream.ncols() != self.output_dim() {
            return Err(Error::usage("upstream gradient has the wrong width"));
        }
        self.pending_backward = false;
        let mut g = upstream.clone();
        for layer in self.layers.iter_mut().rev() {
            g = layer.backward(&g)?;
        }
        Ok(g)
    }

    /// `p <- p - lr * grad`, then zero the gradients.
    pub fn sgd_step(&mut self, learning_rate: f64) -> Result<()> {
        if !(learning_rate >= 0.0 && learning_rate.is_finite()) {
            return Err(Error::usage(format!("invalid learning rate {learning_rate}")));
        }
        for (i, layer) in self.layers.iter().enumerate() {
            for p in layer.params() {
                if p.grad.iter().any(|g| !g.is_finite()) {
                    return Err(Error::numeric(format!(
                        "non-finite gradient in layer {i} ({:?})",
                        layer.kind()
                    )));
                }
            }
        }
        for (i, layer) in self.layers.iter_mut().enumerate() {
            let kind = layer.kind();
            for p in layer.params_mut() {
                for (v, g) in p.values.iter_mut().zip(p.grad.iter_mut()) {
                    *v -= learning_rate * *g;
                    *g = 0.0;
                }
                if p.values.iter().any(|v| !v.is_finite()) {
                    return Err(Error::numeric(format!("non-finite parameter in layer {i} ({kind:?})")));
                }
            }
        }
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        for layer in &mut self.layers {
            for p in layer.params_mut() {
                p.zero_grad();
            }
        }
    }

    pub fn params(&self) -> impl Iterator<Item = &ParamTensor> {
        self.layers.iter().flat_map(|l| l.params())
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut ParamTensor> {
        self.layers.iter_mut().flat_map(|l| l.params_mut())
    }

    pub fn parameter_count(&self) -> usize {
        self.params().map(ParamTensor::len).sum()
    }

    /// Flat copy of every parameter value, in layer order.
    pub fn flat_params(&self) -> Vec<f64> {
        self.params().flat_map(|p| p.values.iter().copied()).collect()
    }
}

fn check_output(h: Array2<f64>) -> Result<Array2<f64>> {
    if h.iter().any(|v| !v.is_finite()) {
        return Err(Error::numeric("network produced a non-finite output"));
    }
    Ok(h)
}

fn validate_specs(specs: &[LayerSpec]) -> Result<()> {
    if specs.is_empty() {
        return Err(Error::usage("network needs at least one layer"));
    }
    for (i, s) in specs.iter().enumerate() {
        if s.input_dim == 0 || s.output_dim == 0 {
            return Err(Error::usage(format!("layer {i} has a zero dimension")));
        }
        if s.kind != LayerKind::Dense && s.input_dim != s.output_dim {
            return Err(Error::usage(format!("layer {i} ({:?}) must preserve width", s.kind)));
        }
        if s.kind.is_output_only() && i + 1 != specs.len() {
            return Err(Error::usage(format!("{:?} is only allowed as the last layer", s.kind)));
        }
        if i > 0 && specs[i - 1].output_dim != s.input_dim {
            return Err(Error::usage(format!(
                "layer {i} expects width {} but previous layer yields {}",
                s.input_dim,
                specs[i - 1].output_dim
            )));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stream};
    use ndarray::array;

    fn rng() -> rand_chacha::ChaCha8Rng {
        stream(42, Stream::QInit)
    }

    #[test]
    fn softmax_of_equal_logits_is_uniform() {
        let mut net = Network::new(&[LayerSpec::softmax(4)], &mut rng()).unwrap();
        let y = net.forward(&array![[0.0, 0.0, 0.0, 0.0]], Mode::Train).unwrap();
        for v in y.iter() {
            assert!((v - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_survives_huge_logits() {
        let y = softmax_rows(&array![[1e4, -1e4, 0.0], [-1e4, -1e4, -1e4]]);
        assert!(y.iter().all(|v| v.is_finite()));
        for row in y.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-9);
        }
        assert_eq!(y[[0, 0]], 1.0);
    }

    #[test]
    fn zero_dense_gives_zero() {
        let dense = Dense::from_parts(
            ParamTensor::filled(vec![3, 2], 0.0),
            ParamTensor::filled(vec![2], 0.0),
        );
        let net = Network::from_layers(vec![Layer::Dense(dense)]).unwrap();
        let y = net.infer(&array![[1.0, -2.0, 3.0]]).unwrap();
        assert_eq!(y, array![[0.0, 0.0]]);
    }

    #[test]
    fn batchnorm_on_equal_rows_returns_beta() {
        let mut bn = BatchNorm::new(2);
        bn.beta.values = vec![0.3, -0.7];
        bn.gamma.values = vec![2.0, 5.0];
        let mut net = Network::from_layers(vec![Layer::BatchNorm(bn)]).unwrap();
        let y = net.forward(&array![[1.5, 2.0], [1.5, 2.0], [1.5, 2.0]], Mode::Train).unwrap();
        for row in y.rows() {
            assert_eq!(row.to_vec(), vec![0.3, -0.7]);
        }
    }

    #[test]
    fn batchnorm_train_needs_two_rows() {
        let mut net = Network::new(&[LayerSpec::batchnorm(2)], &mut rng()).unwrap();
        assert!(matches!(net.forward(&array![[1.0, 2.0]], Mode::Train), Err(Error::Usage(_))));
        assert!(net.forward(&array![[1.0, 2.0]], Mode::Eval).is_ok());
    }

    #[test]
    fn linear_gradient() {
        let dense = Dense::from_parts(ParamTensor::new(vec![1, 1], vec![0.7]), ParamTensor::filled(vec![1], 0.0));
        let mut net = Network::from_layers(vec![Layer::Dense(dense)]).unwrap();
        net.forward(&array![[3.0]], Mode::Train).unwrap();
        net.backward(&array![[1.0]]).unwrap();
        let w = net.params().next().unwrap();
        assert_eq!(w.grad, vec![3.0]);
    }

    #[test]
    fn zero_upstream_gives_zero_grads() {
        let mut net = Network::mlp(&[3, 4, 2], &mut rng()).unwrap();
        net.forward(&array![[1.0, 2.0, 3.0], [0.5, -1.0, 0.0]], Mode::Train).unwrap();
        net.backward(&Array2::zeros((2, 2))).unwrap();
        assert!(net.params().all(|p| p.grad.iter().all(|g| *g == 0.0)));
    }

    #[test]
    fn backward_requires_forward() {
        let mut net = Network::mlp(&[2, 2], &mut rng()).unwrap();
        assert!(matches!(net.backward(&array![[1.0, 1.0]]), Err(Error::Usage(_))));
        net.forward(&array![[1.0, 1.0]], Mode::Train).unwrap();
        net.backward(&array![[1.0, 1.0]]).unwrap();
        assert!(matches!(net.backward(&array![[1.0, 1.0]]), Err(Error::Usage(_))));
    }

    #[test]
    fn sgd_step_arithmetic() {
        let dense = Dense::from_parts(ParamTensor::new(vec![1, 1], vec![1.0]), ParamTensor::filled(vec![1], 0.0));
        let mut net = Network::from_layers(vec![Layer::Dense(dense)]).unwrap();
        net.params_mut().next().unwrap().grad[0] = 0.5;
        net.sgd_step(0.1).unwrap();
        let w = net.params().next().unwrap();
        assert_eq!(w.values[0], 0.95);
        assert_eq!(w.grad[0], 0.0);
    }

    #[test]
    fn zero_learning_rate_is_identity() {
        let mut net = Network::mlp(&[3, 5, 2], &mut rng()).unwrap();
        let before = net.flat_params();
        net.forward(&array![[1.0, 2.0, 3.0]], Mode::Train).unwrap();
        net.backward(&array![[1.0, -1.0]]).unwrap();
        net.sgd_step(0.0).unwrap();
        assert_eq!(before, net.flat_params());
    }

    #[test]
    fn non_finite_gradient_names_the_layer() {
        let mut net = Network::mlp(&[2, 3, 1], &mut rng()).unwrap();
        net.layers_mut()[2].params_mut()[0].grad[0] = f64::NAN;
        match net.sgd_step(0.1) {
            Err(Error::Numeric(msg)) => assert!(msg.contains("layer 2"), "{msg}"),
            other => panic!("expected numeric error, got {other:?}"),
        }
    }

    #[test]
    fn rejects_bad_architectures() {
        let mut r = rng();
        assert!(Network::new(&[LayerSpec::dense(2, 3), LayerSpec::relu(4)], &mut r).is_err());
        assert!(Network::new(&[LayerSpec::softmax(3), LayerSpec::dense(3, 1)], &mut r).is_err());
        let net = Network::mlp(&[2, 3], &mut r).unwrap();
        assert!(matches!(net.infer(&array![[1.0]]), Err(Error::Usage(_))));
        assert!(matches!(net.infer(&array![[f64::NAN, 1.0]]), Err(Error::Numeric(_))));
    }

    #[test]
    fn eval_forward_is_row_independent() {
        let mut r = rng();
        let specs = [
            LayerSpec::dense(3, 4),
            LayerSpec::batchnorm(4),
            LayerSpec::relu(4),
            LayerSpec::dense(4, 2),
            LayerSpec::softmax(2),
        ];
        let mut net = Network::new(&specs, &mut r).unwrap();
        let batch = array![[0.1, 0.2, 0.3], [1.0, -1.0, 0.5], [2.0, 0.0, -0.3]];
        net.forward(&batch, Mode::Train).unwrap();
        let all = net.infer(&batch).unwrap();
        for i in 0..3 {
            let single = net.infer(&batch.slice(ndarray::s![i..i + 1, ..]).to_owned()).unwrap();
            assert_eq!(single.row(0), all.row(i));
        }
    }
}
