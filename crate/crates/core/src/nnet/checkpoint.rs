//! Binary network checkpoints.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! magic    8 bytes  "FRSHNET1"
//! version  u32      1
//! layers   u32
//! per layer:
//!   kind   u8       1 dense, 2 relu, 3 batchnorm, 4 softmax, 5 sigmoid
//!   in     u32
//!   out    u32
//!   dense:      weight (in*out f64, row-major in x out), bias (out f64)
//!   batchnorm:  gamma, beta, running_mean, running_var (in f64 each),
//!               momentum f64, epsilon f64
//! ```

use std::io::{Read, Write};

use super::layer::{BatchNorm, Dense, Layer, LayerKind, ParamTensor};
use super::Network;
use crate::error::{Error, Result};

pub const NETWORK_MAGIC: &[u8; 8] = b"FRSHNET1";
const VERSION: u32 = 1;

pub fn write_network<W: Write>(w: &mut W, net: &Network) -> Result<()> {
    w.write_all(NETWORK_MAGIC)?;
    put_u32(w, VERSION)?;
    put_u32(w, net.layers().len() as u32)?;
    for layer in net.layers() {
        w.write_all(&[layer.kind().code()])?;
        put_u32(w, layer.input_dim() as u32)?;
        put_u32(w, layer.output_dim() as u32)?;
        match layer {
            Layer::Dense(d) => {
                put_f64s(w, &d.weight.values)?;
                put_f64s(w, &d.bias.values)?;
            }
            Layer::BatchNorm(b) => {
                put_f64s(w, &b.gamma.values)?;
                put_f64s(w, &b.beta.values)?;
                put_f64s(w, &b.running_mean)?;
                put_f64s(w, &b.running_var)?;
                put_f64s(w, &[b.momentum, b.epsilon])?;
            }
            _ => {}
        }
    }
    Ok(())
}

pub fn read_network<R: Read>(r: &mut R) -> Result<Network> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != NETWORK_MAGIC {
        return Err(Error::Format("not a network checkpoint (bad magic)".into()));
    }
    let version = get_u32(r)?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported network checkpoint version {version}")));
    }
    let count = get_u32(r)? as usize;
    let mut layers = Vec::with_capacity(count);
    for _ in 0..count {
        let mut code = [0u8; 1];
        r.read_exact(&mut code)?;
        let kind = LayerKind::from_code(code[0])?;
        let input = get_u32(r)? as usize;
        let output = get_u32(r)? as usize;
        layers.push(match kind {
            LayerKind::Dense => {
                let weight = get_f64s(r, input * output)?;
                let bias = get_f64s(r, output)?;
                Layer::Dense(Dense::from_parts(
                    ParamTensor::new(vec![input, output], weight),
                    ParamTensor::new(vec![output], bias),
                ))
            }
            LayerKind::BatchNorm => {
                let mut bn = BatchNorm::new(input);
                bn.gamma = ParamTensor::new(vec![input], get_f64s(r, input)?);
                bn.beta = ParamTensor::new(vec![input], get_f64s(r, input)?);
                bn.running_mean = get_f64s(r, input)?;
                bn.running_var = get_f64s(r, input)?;
                let extra = get_f64s(r, 2)?;
                bn.momentum = extra[0];
                bn.epsilon = extra[1];
                Layer::BatchNorm(bn)
            }
            LayerKind::Relu => Layer::Relu { dim: input, input: None },
            LayerKind::Softmax => Layer::Softmax { dim: input, output: None },
            LayerKind::Sigmoid => Layer::Sigmoid { dim: input, output: None },
        });
    }
    Network::from_layers(layers)
}

pub(crate) fn put_u32<W: Write>(w: &mut W, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

pub(crate) fn get_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn put_f64s<W: Write>(w: &mut W, values: &[f64]) -> Result<()> {
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn get_f64s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(n);
    let mut b = [0u8; 8];
    for _ in 0..n {
        r.read_exact(&mut b)?;
        out.push(f64::from_le_bytes(b));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nnet::{LayerSpec, Mode};
    use crate::rng::{stream, Stream};
    use ndarray::array;

    #[test]
    fn round_trip_is_bit_exact() {
        let mut rng = stream(5, Stream::FnnInit);
        let specs = [
            LayerSpec::dense(3, 4),
            LayerSpec::batchnorm(4),
            LayerSpec::relu(4),
            LayerSpec::dense(4, 2),
            LayerSpec::softmax(2),
        ];
        let mut net = Network::new(&specs, &mut rng).unwrap();
        // Move the running statistics away from their defaults.
        net.forward(&array![[0.1, 0.2, 0.3], [1.0, -1.0, 0.5]], Mode::Train).unwrap();

        let mut bytes = Vec::new();
        write_network(&mut bytes, &net).unwrap();
        let back = read_network(&mut bytes.as_slice()).unwrap();
        let mut again = Vec::new();
        write_network(&mut again, &back).unwrap();
        assert_eq!(bytes, again);
        assert_eq!(&bytes[..8], b"FRSHNET1");
    }

    #[test]
    fn rejects_bad_magic() {
        let bytes = b"NOTANETWxxxx".to_vec();
        assert!(matches!(read_network(&mut bytes.as_slice()), Err(Error::Format(_))));
    }
}
