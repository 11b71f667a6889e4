//! Binary checkpoint container.
//!
//! ```text
//! magic    "CGSNNCKP"
//! version  u32
//! block    topology text            (u32 length + UTF-8)
//! block    model config, key=value  (u32 length + UTF-8)
//! block    free-form metadata       (u32 length + UTF-8)
//! count    u64
//! records  path (u32 length + UTF-8), kind u8, rank u32, dims u64..., values f64...
//! ```
//!
//! All integers and floats are little-endian. Record kind 0 is a learnable
//! value, 1 a running mean and 2 a running variance.

use std::collections::BTreeMap;
use std::path::Path as FsPath;

use super::params::ModelParams;
use super::{CogniSnn, ModelConfig};
use crate::error::{Error, Result};
use crate::tensor::{RunningStats, Tensor};
use crate::topology::DagTopology;

pub const CHECKPOINT_VERSION: u32 = 1;
const MAGIC: &[u8; 8] = b"CGSNNCKP";

const KIND_VALUE: u8 = 0;
const KIND_MEAN: u8 = 1;
const KIND_VAR: u8 = 2;

fn kv_text(kv: &BTreeMap<String, String>) -> Result<String> {
    let mut s = String::new();
    for (k, v) in kv {
        if k.contains(['=', '\n']) || v.contains('\n') {
            return Err(Error::invalid(format!("metadata entry `{k}` cannot be stored")));
        }
        s.push_str(&format!("{k}={v}\n"));
    }
    Ok(s)
}

fn put_block(out: &mut Vec<u8>, text: &str) {
    out.extend_from_slice(&(text.len() as u32).to_le_bytes());
    out.extend_from_slice(text.as_bytes());
}

fn put_record(out: &mut Vec<u8>, path: &str, kind: u8, shape: &[usize], values: &[f64]) {
    put_block(out, path);
    out.push(kind);
    out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
    for d in shape {
        out.extend_from_slice(&(*d as u64).to_le_bytes());
    }
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

/// Serializes `model` together with caller-supplied metadata.
pub fn save_checkpoint(model: &CogniSnn, metadata: &BTreeMap<String, String>) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    put_block(&mut out, &model.topology.to_text());
    put_block(&mut out, &kv_text(&model.config.to_kv())?);
    put_block(&mut out, &kv_text(metadata)?);
    let values = model.params.values();
    let stats = model.params.all_stats();
    out.extend_from_slice(&((values.len() + 2 * stats.len()) as u64).to_le_bytes());
    for (path, t) in values {
        put_record(&mut out, path, KIND_VALUE, t.shape(), t.data());
    }
    for (triplet, s) in stats {
        put_record(&mut out, triplet, KIND_MEAN, &[s.mean.len()], &s.mean);
        put_record(&mut out, triplet, KIND_VAR, &[s.var.len()], &s.var);
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn fail(&self, message: impl Into<String>) -> Error {
        Error::Format {
            offset: self.pos,
            message: message.into(),
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(self.fail(format!("truncated: needed {n} more bytes")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn text(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        let at = self.pos;
        let raw = self.take(n)?;
        String::from_utf8(raw.to_vec()).map_err(|_| Error::Format {
            offset: at,
            message: "text block is not UTF-8".into(),
        })
    }

    fn kv(&mut self) -> Result<BTreeMap<String, String>> {
        let at = self.pos;
        let text = self.text()?;
        text.lines()
            .map(|l| {
                l.split_once('=')
                    .map(|(k, v)| (k.to_string(), v.to_string()))
                    .ok_or_else(|| Error::Format {
                        offset: at,
                        message: format!("bad metadata line `{l}`"),
                    })
            })
            .collect()
    }
}

/// Inverse of [`save_checkpoint`]. Returns the model and its metadata.
pub fn load_checkpoint(bytes: &[u8]) -> Result<(CogniSnn, BTreeMap<String, String>)> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(MAGIC.len())? != MAGIC {
        return Err(Error::Format {
            offset: 0,
            message: "not a checkpoint file".into(),
        });
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(r.fail(format!("unsupported checkpoint version {version}")));
    }
    let topology = DagTopology::from_text(&r.text()?)?;
    let config = ModelConfig::from_kv(&r.kv()?)?;
    let metadata = r.kv()?;
    let count = r.u64()?;
    let mut values = BTreeMap::new();
    let mut means: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let mut vars: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for _ in 0..count {
        let path = r.text()?;
        let kind = r.u8()?;
        let rank = r.u32()? as usize;
        let mut shape = Vec::with_capacity(rank.min(8));
        for _ in 0..rank {
            shape.push(usize::try_from(r.u64()?).map_err(|_| r.fail("dimension too large"))?);
        }
        let len = shape
            .iter()
            .try_fold(1usize, |a, d| a.checked_mul(*d))
            .filter(|n| n.checked_mul(8).is_some_and(|b| b <= bytes.len()))
            .ok_or_else(|| r.fail(format!("record `{path}` is larger than the file")))?;
        let raw = r.take(len * 8)?;
        let data: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        match kind {
            KIND_VALUE => {
                values.insert(path, Tensor::new(shape, data)?);
            }
            KIND_MEAN => {
                means.insert(path, data);
            }
            KIND_VAR => {
                vars.insert(path, data);
            }
            _ => return Err(r.fail(format!("unknown record kind {kind}"))),
        }
    }
    if r.pos != bytes.len() {
        return Err(r.fail("trailing bytes after the last record"));
    }
    let mut stats = BTreeMap::new();
    for (triplet, mean) in means {
        let var = vars
            .remove(&triplet)
            .ok_or_else(|| Error::invalid(format!("`{triplet}` has a running mean but no variance")))?;
        let mut s = RunningStats::new(mean.len());
        s.mean = mean;
        s.var = var;
        stats.insert(triplet, s);
    }
    let params = ModelParams::from_parts(values, stats);
    // the stored parameters must match what this architecture expects
    let fresh = ModelParams::init(&config, &topology, 0)?;
    for (path, t) in fresh.values() {
        let got = params.get(path)?;
        if got.shape() != t.shape() {
            return Err(Error::dim(
                "checkpoint",
                format!("`{path}` has shape {:?}, expected {:?}", got.shape(), t.shape()),
            ));
        }
    }
    for triplet in fresh.all_stats().keys() {
        params.stats(triplet)?;
    }
    Ok((
        CogniSnn {
            config,
            topology,
            params,
        },
        metadata,
    ))
}

pub fn write_checkpoint(path: &FsPath, model: &CogniSnn, metadata: &BTreeMap<String, String>) -> Result<()> {
    std::fs::write(path, save_checkpoint(model, metadata)?)?;
    Ok(())
}

pub fn read_checkpoint(path: &FsPath) -> Result<(CogniSnn, BTreeMap<String, String>)> {
    load_checkpoint(&std::fs::read(path)?)
}
