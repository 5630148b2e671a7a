//! Checkpoint file layout:
//!
//! ```text
//! b"DMBPNCKP"            magic
//! u32 LE                 format version (1)
//! u32 LE, bytes          JSON fingerprint
//! registry payload       see ParamRegistry::serialize
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use numkernel::ParamRegistry;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::memory::MemoryUpdateKind;
use crate::model::{Metric, ModelConfig};

const MAGIC: &[u8; 8] = b"DMBPNCKP";
const VERSION: u32 = 1;

/// Everything that decides the parameter layout.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fingerprint {
    pub d_w: usize,
    pub d_p: usize,
    pub hidden: usize,
    pub n_h: usize,
    pub pos_rows: usize,
    pub metric: Metric,
    pub memory_update: MemoryUpdateKind,
    pub vocab_size: usize,
}

impl Fingerprint {
    pub fn new(model: &ModelConfig, vocab_size: usize) -> Self {
        let d = model.dims;
        Self {
            d_w: d.d_w,
            d_p: d.d_p,
            hidden: d.hidden,
            n_h: d.n_h,
            pos_rows: d.pos_rows,
            metric: model.metric,
            memory_update: model.update,
            vocab_size,
        }
    }
}

pub fn write_checkpoint<W: Write>(w: &mut W, reg: &ParamRegistry, fp: &Fingerprint) -> Result<()> {
    let json = serde_json::to_vec(fp)?;
    let io = |e| Error::Checkpoint(format!("write failed: {e}"));
    w.write_all(MAGIC).map_err(io)?;
    w.write_all(&VERSION.to_le_bytes()).map_err(io)?;
    w.write_all(&(json.len() as u32).to_le_bytes()).map_err(io)?;
    w.write_all(&json).map_err(io)?;
    reg.serialize(w).map_err(io)?;
    Ok(())
}

pub fn read_checkpoint<R: Read>(r: &mut R) -> Result<(Fingerprint, ParamRegistry)> {
    let io = |e: std::io::Error| Error::Checkpoint(format!("truncated or unreadable: {e}"));
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(io)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file".into()));
    }
    let mut word = [0u8; 4];
    r.read_exact(&mut word).map_err(io)?;
    let version = u32::from_le_bytes(word);
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported checkpoint version {version}")));
    }
    r.read_exact(&mut word).map_err(io)?;
    let mut json = vec![0u8; u32::from_le_bytes(word) as usize];
    r.read_exact(&mut json).map_err(io)?;
    let fp: Fingerprint =
        serde_json::from_slice(&json).map_err(|e| Error::Checkpoint(format!("bad fingerprint: {e}")))?;
    let reg = ParamRegistry::deserialize(r).map_err(|e| Error::Checkpoint(e.to_string()))?;
    Ok((fp, reg))
}

pub fn save_checkpoint(path: impl AsRef<Path>, reg: &ParamRegistry, fp: &Fingerprint) -> Result<()> {
    let path = path.as_ref();
    let mut w = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
    write_checkpoint(&mut w, reg, fp)?;
    w.flush().map_err(|e| Error::io(path, e))
}

/// Loads and checks the fingerprint against `expected`.
pub fn load_checkpoint(path: impl AsRef<Path>, expected: &Fingerprint) -> Result<ParamRegistry> {
    let path = path.as_ref();
    let mut r = BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?);
    let (fp, reg) = read_checkpoint(&mut r)?;
    if &fp != expected {
        return Err(Error::Checkpoint(format!(
            "fingerprint mismatch: file has {fp:?}, configuration expects {expected:?}"
        )));
    }
    Ok(reg)
}
