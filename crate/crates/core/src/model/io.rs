//! Binary model file.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! magic       8 bytes  "NPATMODL"
//! version     u32      currently 1
//! layers      u32      number of layers, last layer included
//! per layer:
//!   in        u32
//!   out       u32
//!   activation u8      0 = identity, 1 = relu
//!   weight    out*in f64, row-major
//!   bias      out f64
//! ```
//!
//! The final layer is the last linear layer and must be identity. Floats are
//! stored as raw IEEE-754 bits so a round trip is bit-exact.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::Matrix;

use super::{Activation, LayerParams, NetworkModel};

pub const MODEL_MAGIC: &[u8; 8] = b"NPATMODL";
pub const MODEL_FILE_VERSION: u32 = 1;

pub fn encode_model(model: &NetworkModel) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MODEL_MAGIC);
    out.extend_from_slice(&MODEL_FILE_VERSION.to_le_bytes());
    let layers: Vec<&LayerParams> = model.layers().collect();
    out.extend_from_slice(&(layers.len() as u32).to_le_bytes());
    for layer in layers {
        out.extend_from_slice(&(layer.input_dim() as u32).to_le_bytes());
        out.extend_from_slice(&(layer.output_dim() as u32).to_le_bytes());
        out.push(match layer.activation {
            Activation::Identity => 0,
            Activation::Relu => 1,
        });
        for v in layer.weight.data().iter().chain(&layer.bias) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Format(format!(
                "truncated file while reading {what} at byte {}",
                self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn f64s(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        let bytes = n
            .checked_mul(8)
            .ok_or_else(|| Error::Format(format!("{what} size overflows")))?;
        let b = self.take(bytes, what)?;
        Ok(b.chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect())
    }
}

pub fn decode_model(bytes: &[u8]) -> Result<NetworkModel> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(8, "magic")? != MODEL_MAGIC {
        return Err(Error::Format("bad magic: not a model file".into()));
    }
    let version = r.u32("version")?;
    if version != MODEL_FILE_VERSION {
        return Err(Error::Version {
            found: version,
            expected: MODEL_FILE_VERSION,
        });
    }
    let count = r.u32("layer count")? as usize;
    if count == 0 {
        return Err(Error::Format("model has no layers".into()));
    }
    let mut layers = Vec::with_capacity(count.min(1024));
    for i in 0..count {
        let inp = r.u32("layer input width")? as usize;
        let out = r.u32("layer output width")? as usize;
        let activation = match r.take(1, "activation tag")?[0] {
            0 => Activation::Identity,
            1 => Activation::Relu,
            t => return Err(Error::Format(format!("layer {i}: unknown activation tag {t}"))),
        };
        let weight = Matrix::new(out, inp, r.f64s(out * inp, "weights")?)?;
        let bias = r.f64s(out, "bias")?;
        layers.push(LayerParams {
            weight,
            bias,
            activation,
        });
    }
    if r.pos != bytes.len() {
        return Err(Error::Format(format!(
            "{} trailing bytes after last layer",
            bytes.len() - r.pos
        )));
    }
    let last = layers.pop().expect("count > 0");
    NetworkModel::new(layers, last).map_err(|e| Error::Format(e.to_string()))
}

/// Writes atomically: the bytes go to a sibling temp file which is then renamed.
pub fn save_model(model: &NetworkModel, path: impl AsRef<Path>) -> Result<()> {
    crate::harness::write_atomic(path.as_ref(), &encode_model(model))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<NetworkModel> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_model(&bytes)
}
