//! Checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! b"HNETCKPT"            8 bytes
//! version: u32           currently 1
//! header_len: u32
//! header: UTF-8 TOML     network spec, parameter name/shape table, optional metadata
//! payload                f32 values of every parameter, in table order
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{ModelState, NetworkSpec, NnError};
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"HNETCKPT";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("malformed header: {0}")]
    Header(String),
    #[error(transparent)]
    Model(#[from] NnError),
}

#[derive(Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    spec: NetworkSpec,
    params: Vec<ParamEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    metadata: Option<toml::Table>,
}

pub fn write_checkpoint<W: Write>(
    mut w: W,
    model: &ModelState,
    metadata: Option<&toml::Table>,
) -> Result<(), CheckpointError> {
    let header = Header {
        spec: model.spec().clone(),
        params: model
            .params()
            .iter()
            .map(|(name, t)| ParamEntry {
                name: name.clone(),
                shape: t.shape().to_vec(),
            })
            .collect(),
        metadata: metadata.cloned(),
    };
    let text = toml::to_string(&header).map_err(|e| CheckpointError::Header(e.to_string()))?;
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(text.len() as u32).to_le_bytes())?;
    w.write_all(text.as_bytes())?;
    for t in model.params().values() {
        for v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<(ModelState, Option<toml::Table>), CheckpointError> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let mut word = [0u8; 4];
    r.read_exact(&mut word)?;
    let version = u32::from_le_bytes(word);
    if version != VERSION {
        return Err(CheckpointError::Version(version));
    }
    r.read_exact(&mut word)?;
    let mut text = vec![0u8; u32::from_le_bytes(word) as usize];
    r.read_exact(&mut text)?;
    let text = String::from_utf8(text).map_err(|e| CheckpointError::Header(e.to_string()))?;
    let header: Header = toml::from_str(&text).map_err(|e| CheckpointError::Header(e.to_string()))?;

    let mut params = IndexMap::with_capacity(header.params.len());
    for entry in header.params {
        let n: usize = entry.shape.iter().product();
        let mut bytes = vec![0u8; n * 4];
        r.read_exact(&mut bytes)?;
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let t = Tensor::new(entry.shape, data).map_err(NnError::from)?;
        params.insert(entry.name, t);
    }
    let mut rest = Vec::new();
    r.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(CheckpointError::Header(format!("{} trailing bytes after payload", rest.len())));
    }
    Ok((ModelState::from_params(header.spec, params)?, header.metadata))
}

pub fn save_checkpoint(
    path: impl AsRef<Path>,
    model: &ModelState,
    metadata: Option<&toml::Table>,
) -> Result<(), CheckpointError> {
    write_checkpoint(BufWriter::new(File::create(path)?), model, metadata)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<(ModelState, Option<toml::Table>), CheckpointError> {
    read_checkpoint(BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let mut model = ModelState::build(NetworkSpec::desk(16, 4, 12, 4), 17).unwrap();
        let mut flat = model.flatten();
        flat[0] = f32::MIN_POSITIVE / 3.0;
        flat[1] = -0.0;
        model.unflatten(&flat).unwrap();
        let mut meta = toml::Table::new();
        meta.insert("note".into(), toml::Value::String("x".into()));

        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &model, Some(&meta)).unwrap();
        let (back, back_meta) = read_checkpoint(buf.as_slice()).unwrap();
        assert_eq!(back.spec(), model.spec());
        assert_eq!(back.params().keys().collect::<Vec<_>>(), model.params().keys().collect::<Vec<_>>());
        let bits = |m: &ModelState| m.flatten().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back), bits(&model));
        assert_eq!(back_meta, Some(meta));

        let mut again = Vec::new();
        write_checkpoint(&mut again, &back, back_meta.as_ref()).unwrap();
        assert_eq!(again, buf);
    }

    #[test]
    fn rejects_garbage() {
        assert!(matches!(read_checkpoint(&b"NOTACKPTxxxxxxxx"[..]), Err(CheckpointError::BadMagic)));
        let model = ModelState::build(NetworkSpec::desk(16, 4, 3, 1), 1).unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &model, None).unwrap();
        buf.truncate(buf.len() - 2);
        assert!(read_checkpoint(buf.as_slice()).is_err());
    }
}
