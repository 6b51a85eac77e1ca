//! Single-file checkpoints.
//!
//! Layout (all integers little-endian `u64`):
//!
//! ```text
//! b"MVRECKPT" | header_len | header JSON (UTF-8)
//! n_arrays | { name_len | name | rows | cols | rows·cols f64 LE }*
//! ```
//!
//! The header always carries a `"model"` key with the [`ModelConfig`]; callers
//! may attach further metadata under other keys.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde_json::Value;

use super::model::{MlmModel, ModelConfig};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Arrays stored next to the model parameters, in file order.
pub type NamedArrays = Vec<(String, Tensor)>;

const MAGIC: &[u8; 8] = b"MVRECKPT";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub header: Value,
    pub arrays: Vec<(String, Tensor)>,
}

impl Checkpoint {
    /// Header `{"model": config, ..metadata}` plus the model's arrays and any extras.
    pub fn from_model(
        model: &MlmModel,
        metadata: serde_json::Map<String, Value>,
        extra_arrays: Vec<(String, Tensor)>,
    ) -> Result<Self> {
        let mut header = serde_json::Map::new();
        header.insert("model".into(), serde_json::to_value(model.config())?);
        for (k, v) in metadata {
            header.insert(k, v);
        }
        let mut arrays = model.to_arrays();
        arrays.extend(extra_arrays);
        Ok(Checkpoint {
            header: Value::Object(header),
            arrays,
        })
    }

    /// Splits the checkpoint into the model (shape-validated) and the arrays
    /// that are not model parameters.
    pub fn into_model(self) -> Result<(MlmModel, Value, NamedArrays)> {
        let config: ModelConfig = serde_json::from_value(
            self.header
                .get("model")
                .cloned()
                .ok_or_else(|| Error::Checkpoint("header has no `model` entry".into()))?,
        )
        .map_err(|e| Error::Checkpoint(format!("model config: {e}")))?;
        let template = MlmModel::zeros(config.clone())?;
        let (mine, rest): (Vec<_>, Vec<_>) = self
            .arrays
            .into_iter()
            .partition(|(name, _)| template.params().id_of(name).is_some());
        let model = MlmModel::from_arrays(config, mine)?;
        Ok((model, self.header, rest))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        let header = serde_json::to_vec(&self.header)?;
        w.write_all(MAGIC)?;
        w.write_all(&(header.len() as u64).to_le_bytes())?;
        w.write_all(&header)?;
        w.write_all(&(self.arrays.len() as u64).to_le_bytes())?;
        for (name, t) in &self.arrays {
            w.write_all(&(name.len() as u64).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            w.write_all(&(t.rows() as u64).to_le_bytes())?;
            w.write_all(&(t.cols() as u64).to_le_bytes())?;
            for v in t.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Checkpoint(format!("{}: bad magic", path.display())));
        }
        let header_len = read_u64(&mut r)? as usize;
        let mut header = vec![0u8; header_len];
        r.read_exact(&mut header)?;
        let header: Value = serde_json::from_slice(&header)?;
        let n = read_u64(&mut r)? as usize;
        let mut arrays = Vec::with_capacity(n);
        for _ in 0..n {
            let name_len = read_u64(&mut r)? as usize;
            let mut name = vec![0u8; name_len];
            r.read_exact(&mut name)?;
            let name = String::from_utf8(name)
                .map_err(|_| Error::Checkpoint("array name is not UTF-8".into()))?;
            let rows = read_u64(&mut r)? as usize;
            let cols = read_u64(&mut r)? as usize;
            let mut data = Vec::with_capacity(rows * cols);
            let mut buf = [0u8; 8];
            for _ in 0..rows * cols {
                r.read_exact(&mut buf)?;
                data.push(f64::from_le_bytes(buf));
            }
            arrays.push((name, Tensor::from_vec(rows, cols, data)?));
        }
        let mut rest = Vec::new();
        if r.read_to_end(&mut rest)? != 0 {
            return Err(Error::Checkpoint("trailing bytes after last array".into()));
        }
        Ok(Checkpoint { header, arrays })
    }
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}
