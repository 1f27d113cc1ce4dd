//! Binary container for neutralizer models.
//!
//! All integers are little-endian `u32`, all weights little-endian `f32`.
//!
//! ```text
//! magic "LENZ" | version | dimension
//! n_au | (len, utf-8 bytes) per AU name
//! n_static | (len, utf-8 bytes) per static name
//! n_layers | per layer: inputs, outputs, activation (u8),
//!            weights (outputs x inputs, row-major), bias (outputs)
//! ```

use std::path::Path;

use latent_edit_core::neutralizer::NeutralizerModel;
use latent_edit_core::nn::{Activation, Dense};

use crate::error::{Error, Result};
use crate::files;

pub const MAGIC: &[u8; 4] = b"LENZ";
pub const VERSION: u32 = 1;

pub fn to_bytes(model: &NeutralizerModel) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + model.n_params() * 4);
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, VERSION);
    put_u32(&mut out, model.dimension() as u32);
    for names in [model.au_names(), model.static_names()] {
        put_u32(&mut out, names.len() as u32);
        for n in names {
            put_u32(&mut out, n.len() as u32);
            out.extend_from_slice(n.as_bytes());
        }
    }
    let layers = model.layers();
    put_u32(&mut out, layers.len() as u32);
    for l in layers {
        put_u32(&mut out, l.inputs as u32);
        put_u32(&mut out, l.outputs as u32);
        out.push(l.activation.code());
        for v in l.weights.iter().chain(&l.bias) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    origin: &'a str,
}

impl Reader<'_> {
    fn err(&self, message: impl Into<String>) -> Error {
        Error::format(self.origin, 0, format!("byte {}: {}", self.pos, message.into()))
    }

    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(self.err("unexpected end of file"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()?;
        let b = self.take(n)?.to_vec();
        String::from_utf8(b).map_err(|_| self.err("name is not UTF-8"))
    }

    fn floats(&mut self, n: usize) -> Result<Vec<f32>> {
        let len = n.checked_mul(4).ok_or_else(|| self.err("layer too large"))?;
        Ok(self.take(len)?.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect())
    }
}

pub fn from_bytes(bytes: &[u8], origin: &str) -> Result<NeutralizerModel> {
    let mut r = Reader { bytes, pos: 0, origin };
    if r.take(4)? != MAGIC {
        return Err(r.err("not a neutralizer model (bad magic)"));
    }
    let version = r.u32()?;
    if version != VERSION as usize {
        return Err(r.err(format!("unsupported model version {version}")));
    }
    let dimension = r.u32()?;
    let mut names = [Vec::new(), Vec::new()];
    for list in names.iter_mut() {
        let n = r.u32()?;
        for _ in 0..n {
            list.push(r.string()?);
        }
    }
    let n_layers = r.u32()?;
    let mut layers = Vec::new();
    for _ in 0..n_layers {
        let inputs = r.u32()?;
        let outputs = r.u32()?;
        let code = r.take(1)?[0];
        let activation = Activation::from_code(code).ok_or_else(|| r.err(format!("unknown activation code {code}")))?;
        let count = inputs.checked_mul(outputs).ok_or_else(|| r.err("layer too large"))?;
        let weights = r.floats(count)?;
        let bias = r.floats(outputs)?;
        layers.push(Dense { inputs, outputs, activation, weights, bias });
    }
    if r.pos != bytes.len() {
        return Err(r.err("trailing bytes after the last layer"));
    }
    let [au, st] = names;
    NeutralizerModel::from_layers(dimension, au, st, layers).map_err(|e| Error::format(origin, 0, e.to_string()))
}

pub fn load(path: &Path) -> Result<NeutralizerModel> {
    from_bytes(&files::read_bytes(path)?, &path.display().to_string())
}

pub fn save(model: &NeutralizerModel, path: &Path) -> Result<()> {
    files::write(path, &to_bytes(model))
}
