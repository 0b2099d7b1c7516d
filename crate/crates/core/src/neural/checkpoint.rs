use std::io::{Read, Write};

use super::{Activation, AffineLayer, Mlp, NeuralError, Tensor};

pub const MAGIC: &[u8; 4] = b"SPNN";
pub const VERSION: u16 = 1;

/// Writes `magic, version: u16`, then per layer `in: u32, out: u32,
/// activation: u8`, weights and bias as little-endian `f64`.
pub fn write_layers<W: Write>(layers: &[AffineLayer], mut w: W) -> Result<(), NeuralError> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    for l in layers {
        buf.extend_from_slice(&(l.inputs() as u32).to_le_bytes());
        buf.extend_from_slice(&(l.outputs() as u32).to_le_bytes());
        buf.push(l.activation.tag());
        for v in l.weights.data().iter().chain(l.bias.data()) {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    w.write_all(&buf).map_err(|e| NeuralError::Io(e.to_string()))
}

pub fn read_layers<R: Read>(mut r: R) -> Result<Vec<AffineLayer>, NeuralError> {
    let mut buf = Vec::new();
    r.read_to_end(&mut buf).map_err(|e| NeuralError::Io(e.to_string()))?;
    if buf.len() < 6 || &buf[..4] != MAGIC {
        return Err(NeuralError::Malformed("bad checkpoint magic".into()));
    }
    let version = u16::from_le_bytes([buf[4], buf[5]]);
    if version != VERSION {
        return Err(NeuralError::Malformed(format!("unsupported checkpoint version {version}")));
    }
    let mut rest = &buf[6..];
    let mut layers = Vec::new();
    while !rest.is_empty() {
        if rest.len() < 9 {
            return Err(NeuralError::Malformed("truncated layer header".into()));
        }
        let inputs = u32::from_le_bytes(rest[..4].try_into().unwrap()) as usize;
        let outputs = u32::from_le_bytes(rest[4..8].try_into().unwrap()) as usize;
        let act = Activation::from_tag(rest[8])
            .ok_or_else(|| NeuralError::Malformed(format!("activation tag {}", rest[8])))?;
        rest = &rest[9..];
        let n = inputs * outputs + outputs;
        if rest.len() < n * 8 {
            return Err(NeuralError::Malformed("truncated layer values".into()));
        }
        let vals: Vec<f64> = rest[..n * 8]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        rest = &rest[n * 8..];
        let weights = Tensor::from_vec(inputs, outputs, vals[..inputs * outputs].to_vec())?;
        let bias = Tensor::from_vec(1, outputs, vals[inputs * outputs..].to_vec())?;
        layers.push(AffineLayer::new(weights, bias, act)?);
    }
    Ok(layers)
}

pub fn save_mlp<W: Write>(mlp: &Mlp, w: W) -> Result<(), NeuralError> {
    write_layers(&mlp.layers, w)
}

pub fn load_mlp<R: Read>(r: R) -> Result<Mlp, NeuralError> {
    Mlp::new(read_layers(r)?)
}
