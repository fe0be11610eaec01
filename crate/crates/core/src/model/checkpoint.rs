//! Binary checkpoint format.
//!
//! Layout (all integers and reals little-endian):
//!
//! ```text
//! magic        8 bytes  "SFADACKP"
//! version      u32      currently 1
//! seed         u64      RNG seed the model was initialised with
//! input_dim    u32
//! n_hidden     u32
//! hidden       u32 × n_hidden
//! bottleneck   u32
//! classes      u32
//! activations  u8 × (n_hidden + 1)   0 = linear, 1 = tanh, 2 = relu
//! n_values     u64      total parameter count
//! payload      f64 × n_values, parameters in declaration order
//! ```

use std::path::Path;

use crate::error::{CheckpointError, Error, Result};
use crate::numcore::Tensor;

use super::{Activation, Dense, MlpModel, ModelDims};

pub const MAGIC: &[u8; 8] = b"SFADACKP";
pub const VERSION: u32 = 1;

/// Optional constraints checked while loading.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct DimExpectation {
    pub input_dim: Option<usize>,
    pub classes: Option<usize>,
}

pub fn to_bytes(model: &MlpModel) -> Vec<u8> {
    let dims = model.dims();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&model.seed().to_le_bytes());
    out.extend_from_slice(&(dims.input_dim as u32).to_le_bytes());
    out.extend_from_slice(&(dims.hidden.len() as u32).to_le_bytes());
    for &h in &dims.hidden {
        out.extend_from_slice(&(h as u32).to_le_bytes());
    }
    out.extend_from_slice(&(dims.bottleneck as u32).to_le_bytes());
    out.extend_from_slice(&(dims.classes as u32).to_le_bytes());
    for act in model.activations() {
        out.push(act.code());
    }
    let params = model.parameters();
    let n_values: usize = params.iter().map(|p| p.len()).sum();
    out.extend_from_slice(&(n_values as u64).to_le_bytes());
    for p in params {
        for v in p.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], CheckpointError> {
        let end = self.pos + n;
        if end > self.bytes.len() {
            return Err(CheckpointError::Truncated {
                needed: end,
                found: self.bytes.len(),
            });
        }
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> std::result::Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> std::result::Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> std::result::Result<f64, CheckpointError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn from_bytes(bytes: &[u8]) -> std::result::Result<MlpModel, CheckpointError> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(MAGIC.len()).map_err(|_| CheckpointError::BadMagic)? != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(CheckpointError::Version {
            found: version,
            expected: VERSION,
        });
    }
    let seed = r.u64()?;
    let input_dim = r.u32()? as usize;
    let n_hidden = r.u32()? as usize;
    if n_hidden > 1024 {
        return Err(CheckpointError::Malformed(format!("{n_hidden} hidden layers")));
    }
    let hidden = (0..n_hidden)
        .map(|_| r.u32().map(|v| v as usize))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let bottleneck = r.u32()? as usize;
    let classes = r.u32()? as usize;
    let activations = r
        .take(n_hidden + 1)?
        .iter()
        .map(|&c| Activation::from_code(c).ok_or_else(|| CheckpointError::Malformed(format!("activation code {c}"))))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let dims = ModelDims {
        input_dim,
        hidden,
        bottleneck,
        classes,
    };
    dims.validate().map_err(|e| CheckpointError::Malformed(e.to_string()))?;

    let widths = dims.extractor_widths();
    let mut shapes: Vec<(usize, usize)> = widths.windows(2).map(|w| (w[0], w[1])).collect();
    shapes.push((bottleneck, classes));
    let expected_values: usize = shapes.iter().map(|(i, o)| i * o + o).sum();
    let n_values = r.u64()? as usize;
    if n_values != expected_values {
        return Err(CheckpointError::DimMismatch {
            what: "parameter count",
            expected: expected_values,
            found: n_values,
        });
    }
    // Check the whole payload is present before allocating for it.
    let needed = r.pos + 8 * n_values;
    if needed > bytes.len() {
        return Err(CheckpointError::Truncated {
            needed,
            found: bytes.len(),
        });
    }

    let mut read_tensor = |rows: usize, cols: usize| -> std::result::Result<Tensor, CheckpointError> {
        let data = (0..rows * cols)
            .map(|_| r.f64())
            .collect::<std::result::Result<Vec<_>, _>>()?;
        Tensor::new(rows, cols, data).map_err(|e| CheckpointError::Malformed(e.to_string()))
    };
    let mut layers = Vec::with_capacity(shapes.len());
    for (i, &(fan_in, fan_out)) in shapes.iter().enumerate() {
        let weight = read_tensor(fan_in, fan_out)?;
        let bias = read_tensor(1, fan_out)?;
        let activation = activations.get(i).copied().unwrap_or(Activation::Linear);
        layers.push(Dense {
            weight,
            bias,
            activation,
        });
    }
    if r.pos != bytes.len() {
        return Err(CheckpointError::Malformed(format!(
            "{} trailing bytes",
            bytes.len() - r.pos
        )));
    }
    let classifier = layers.pop().expect("at least the classifier layer");
    MlpModel::from_layers(layers, classifier, seed).map_err(|e| CheckpointError::Malformed(e.to_string()))
}

pub fn save_checkpoint(model: &MlpModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, to_bytes(model)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<MlpModel> {
    load_checkpoint_expecting(path, &DimExpectation::default())
}

pub fn load_checkpoint_expecting(path: impl AsRef<Path>, expect: &DimExpectation) -> Result<MlpModel> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let model = from_bytes(&bytes)?;
    let dims = model.dims();
    if let Some(c) = expect.classes.filter(|&c| c != dims.classes) {
        return Err(CheckpointError::DimMismatch {
            what: "classes",
            expected: c,
            found: dims.classes,
        }
        .into());
    }
    if let Some(d) = expect.input_dim.filter(|&d| d != dims.input_dim) {
        return Err(CheckpointError::DimMismatch {
            what: "input_dim",
            expected: d,
            found: dims.input_dim,
        }
        .into());
    }
    Ok(model)
}
