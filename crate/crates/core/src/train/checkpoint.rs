//! Single-file binary checkpoints.
//!
//! Layout, all integers little-endian:
//! `MAGIC`, `u32` version, `u64` JSON length, JSON header, `u64` tensor
//! count, then per tensor `u32` name length, name, `u32` rank, `u64` dims,
//! `f64` data.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::encoding::Preprocessor;
use crate::error::{Error, Result};
use crate::model::{InputLayout, Mambular, ModelConfig};
use crate::numerics::Tensor;

pub const MAGIC: &[u8; 8] = b"MAMBULAR";
pub const FORMAT_VERSION: u32 = 1;

/// A trained model together with the preprocessing fitted on its training split.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: Mambular,
    pub preprocessor: Preprocessor,
}

#[derive(Serialize, Deserialize)]
struct Header {
    model: ModelConfig,
    layout: InputLayout,
    preprocessor: Preprocessor,
}

pub fn save_checkpoint(path: &Path, model: &Mambular, pre: &Preprocessor) -> Result<()> {
    let header = serde_json::to_vec(&Header {
        model: model.config.clone(),
        layout: model.layout.clone(),
        preprocessor: pre.clone(),
    })?;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&(header.len() as u64).to_le_bytes())?;
    w.write_all(&header)?;
    w.write_all(&(model.params.len() as u64).to_le_bytes())?;
    for (_, name, t) in model.params.iter() {
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name.as_bytes())?;
        w.write_all(&(t.rank() as u32).to_le_bytes())?;
        for &d in t.shape() {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for &v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

struct Reader<R> {
    inner: R,
}

impl<R: Read> Reader<R> {
    fn bytes(&mut self, n: usize) -> Result<Vec<u8>> {
        let mut buf = vec![0; n];
        self.inner.read_exact(&mut buf).map_err(|e| match e.kind() {
            std::io::ErrorKind::UnexpectedEof => Error::Checkpoint("file is truncated".into()),
            _ => Error::Io(e),
        })?;
        Ok(buf)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.bytes(N)?.try_into().expect("requested length"))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    /// A length field, rejected when larger than `limit`.
    fn len(&mut self, wide: bool, limit: u64, what: &str) -> Result<usize> {
        let n = if wide { self.u64()? } else { u64::from(self.u32()?) };
        if n > limit {
            return Err(Error::Checkpoint(format!("implausible {what} {n}")));
        }
        Ok(n as usize)
    }
}

const MAX_HEADER: u64 = 1 << 30;
const MAX_ELEMENTS: u64 = 1 << 32;

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let mut r = Reader {
        inner: BufReader::new(File::open(path)?),
    };
    if &r.array::<8>()? != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file".into()));
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "format version {version}, expected {FORMAT_VERSION}"
        )));
    }
    let header_len = r.len(true, MAX_HEADER, "header length")?;
    let header: Header = serde_json::from_slice(&r.bytes(header_len)?)
        .map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;
    let mut model = Mambular::new(header.model, header.layout, 0)?;
    let count = r.len(true, MAX_ELEMENTS, "tensor count")?;
    if count != model.params.len() {
        return Err(Error::Checkpoint(format!(
            "{count} tensors stored, model has {}",
            model.params.len()
        )));
    }
    let mut seen = std::collections::HashSet::new();
    for _ in 0..count {
        let name_len = r.len(false, 4096, "name length")?;
        let name = String::from_utf8(r.bytes(name_len)?)
            .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?;
        if !seen.insert(name.clone()) {
            return Err(Error::Checkpoint(format!("tensor `{name}` stored twice")));
        }
        let rank = r.len(false, 16, "rank")?;
        let shape = (0..rank)
            .map(|_| r.len(true, MAX_ELEMENTS, "dimension"))
            .collect::<Result<Vec<usize>>>()?;
        let target = model
            .params
            .by_name_mut(&name)
            .ok_or_else(|| Error::Checkpoint(format!("unknown tensor `{name}`")))?;
        if target.shape() != shape.as_slice() {
            return Err(Error::Checkpoint(format!(
                "tensor `{name}` has shape {shape:?}, model expects {:?}",
                target.shape()
            )));
        }
        let raw = r.bytes(target.len() * 8)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        *target = Tensor::new(shape, data)?;
    }
    let mut rest = [0u8; 1];
    if r.inner.read(&mut rest)? != 0 {
        return Err(Error::Checkpoint("trailing bytes after last tensor".into()));
    }
    Ok(Checkpoint {
        model,
        preprocessor: header.preprocessor,
    })
}
