//! `LMNW` weights file:
//!
//! ```text
//! magic    4 bytes  "LMNW"
//! version  u32 LE   currently 1
//! meta_len u32 LE   length of the metadata document
//! meta     JSON     {id, architecture, input_shape, class_map, seed}
//! params   f32 LE   weights then bias of every Dense/Conv layer, in order
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::network::{Architecture, Network, CLASS_MAP};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub const WEIGHTS_MAGIC: &[u8; 4] = b"LMNW";
pub const WEIGHTS_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Metadata {
    id: String,
    architecture: Architecture,
    input_shape: [usize; 3],
    class_map: BTreeMap<String, String>,
    seed: u64,
}

fn class_map() -> BTreeMap<String, String> {
    CLASS_MAP
        .iter()
        .map(|(code, label)| (code.to_string(), label.name().to_string()))
        .collect()
}

/// Serializes a network; parameters are stored as 32-bit floats.
pub fn write_weights(network: &Network) -> Result<Vec<u8>> {
    let meta = serde_json::to_vec(&Metadata {
        id: network.id.clone(),
        architecture: network.architecture(),
        input_shape: network.input_shape(),
        class_map: class_map(),
        seed: network.seed(),
    })
    .map_err(|e| Error::Data(format!("cannot encode weights metadata: {e}")))?;
    let mut out = Vec::with_capacity(12 + meta.len() + 4 * network.parameter_count());
    out.extend_from_slice(WEIGHTS_MAGIC);
    out.extend_from_slice(&WEIGHTS_VERSION.to_le_bytes());
    out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
    out.extend_from_slice(&meta);
    for (w, b) in network.layers().iter().filter_map(|l| l.params()) {
        for v in w.data().iter().chain(b.data()) {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Format {
                offset: self.pos as u64,
                message: format!(
                    "truncated {what}: need {n} bytes, {} left",
                    self.bytes.len() - self.pos
                ),
            });
        }
        let slice = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn format_error(&self, offset: usize, message: String) -> Error {
        Error::Format {
            offset: offset as u64,
            message,
        }
    }
}

pub fn read_weights(bytes: &[u8]) -> Result<Network> {
    let mut r = Reader { bytes, pos: 0 };
    let magic = r.take(4, "magic")?;
    if magic != WEIGHTS_MAGIC {
        return Err(r.format_error(0, format!("bad magic {magic:?}, expected \"LMNW\"")));
    }
    let version = r.u32("version")?;
    if version != WEIGHTS_VERSION {
        return Err(r.format_error(4, format!("unsupported version {version}")));
    }
    let meta_len = r.u32("metadata length")? as usize;
    let meta_at = r.pos;
    let meta: Metadata = serde_json::from_slice(r.take(meta_len, "metadata")?)
        .map_err(|e| r.format_error(meta_at, format!("invalid metadata: {e}")))?;
    if meta.class_map != class_map() {
        return Err(r.format_error(meta_at, format!("unexpected class map {:?}", meta.class_map)));
    }

    let mut network = Network::build(meta.architecture, meta.input_shape, meta.seed)
        .map_err(|e| r.format_error(meta_at, e.to_string()))?;
    network.id = meta.id;
    let mut params = Vec::new();
    for (w, b) in network.layers().iter().filter_map(|l| l.params()) {
        let mut read = |shape: &[usize], what: &str| -> Result<Tensor> {
            let n: usize = shape.iter().product();
            let at = r.pos;
            let raw = r.take(4 * n, what)?;
            let data: Vec<f64> = raw
                .chunks_exact(4)
                .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
                .collect();
            if let Some(i) = data.iter().position(|v| !v.is_finite()) {
                return Err(r.format_error(at + 4 * i, format!("non-finite {what} value")));
            }
            Ok(Tensor::new(shape.to_vec(), data).expect("checked"))
        };
        params.push((read(w.shape(), "weights")?, read(b.shape(), "bias")?));
    }
    if r.pos != bytes.len() {
        return Err(r.format_error(r.pos, format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    network.set_parameters(params)?;
    Ok(network)
}

pub fn save_weights(network: &Network, path: &Path) -> Result<()> {
    let bytes = write_weights(network)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_weights(path: &Path) -> Result<Network> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    read_weights(&bytes)
}
