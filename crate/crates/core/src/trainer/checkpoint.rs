//! Versioned binary checkpoint container.
//!
//! Layout (little-endian):
//!
//! ```text
//! b"PFCK"  u32 format_version
//! u32 header_len   header JSON
//! u32 tensor_count
//! per tensor: u32 name_len, name, u32 ndim, u64 dims…, f64 values…
//! 32-byte SHA-256 of everything above
//! ```
//!
//! Tensor names are the model parameter names, with `adam.m.` / `adam.v.`
//! prefixes for optimizer moments and `ref.` for a DPO reference snapshot.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::adamw::{AdamWHyper, Moments, OptimizerState};
use super::train::Objective;
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::ifmodel::{ModelDims, ModelParameters};

pub const MAGIC: &[u8; 4] = b"PFCK";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub format_version: u32,
    pub dims: ModelDims,
    pub frozen: Vec<String>,
    pub objective: Objective,
    pub seed: u64,
    /// Completed epochs.
    pub epoch: usize,
    pub optimizer_step: u64,
    pub adamw: AdamWHyper,
    pub config_fingerprint: String,
    /// Best validation selection metric seen so far.
    pub best_val: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub params: ModelParameters,
    pub optimizer: Option<OptimizerState>,
    pub reference: Option<ModelParameters>,
}

fn corrupt(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| corrupt(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

fn put_tensor(out: &mut Vec<u8>, name: &str, t: &Tensor) {
    out.extend((name.len() as u32).to_le_bytes());
    out.extend(name.as_bytes());
    out.extend((t.shape().len() as u32).to_le_bytes());
    for d in t.shape() {
        out.extend((*d as u64).to_le_bytes());
    }
    for v in t.data() {
        out.extend(v.to_le_bytes());
    }
}

/// Builds a parameter set of `dims` from named tensors; every layout name
/// must be present with its exact shape.
fn assemble(dims: ModelDims, tensors: &mut BTreeMap<String, Tensor>, prefix: &str) -> Result<ModelParameters> {
    let mut p = ModelParameters::zeros(dims)?;
    let names: Vec<String> = p.iter().map(|n| n.name.clone()).collect();
    for name in names {
        let t = tensors
            .remove(&format!("{prefix}{name}"))
            .ok_or_else(|| corrupt(format!("missing tensor {prefix}{name}")))?;
        p.set(&name, t)?;
    }
    Ok(p)
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend(MAGIC);
        out.extend(FORMAT_VERSION.to_le_bytes());
        let header = serde_json::to_vec(&self.header)?;
        out.extend((header.len() as u32).to_le_bytes());
        out.extend(&header);
        let mut tensors: Vec<(String, &Tensor)> = self.params.iter().map(|p| (p.name.clone(), &p.tensor)).collect();
        if let Some(opt) = &self.optimizer {
            for (name, mo) in &opt.moments {
                tensors.push((format!("adam.m.{name}"), &mo.m));
                tensors.push((format!("adam.v.{name}"), &mo.v));
            }
        }
        if let Some(r) = &self.reference {
            tensors.extend(r.iter().map(|p| (format!("ref.{}", p.name), &p.tensor)));
        }
        out.extend((tensors.len() as u32).to_le_bytes());
        for (name, t) in tensors {
            put_tensor(&mut out, &name, t);
        }
        let digest = Sha256::digest(&out);
        out.extend(digest);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 + 4 + 32 {
            return Err(corrupt("file too short"));
        }
        let (body, trailer) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != trailer {
            return Err(corrupt("checksum mismatch (corrupt or truncated file)"));
        }
        let mut r = Reader { buf: body, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(corrupt("bad magic"));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(corrupt(format!("unsupported format version {version}")));
        }
        let hlen = r.u32()? as usize;
        let header: CheckpointHeader =
            serde_json::from_slice(r.take(hlen)?).map_err(|e| corrupt(format!("bad header: {e}")))?;
        let count = r.u32()? as usize;
        let mut tensors = BTreeMap::new();
        for _ in 0..count {
            let nlen = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(nlen)?)
                .map_err(|_| corrupt("tensor name is not UTF-8"))?
                .to_string();
            let ndim = r.u32()? as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(r.u64()? as usize);
            }
            let n: usize = shape.iter().product();
            let raw = r.take(n.checked_mul(8).ok_or_else(|| corrupt("tensor too large"))?)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            tensors.insert(name, Tensor::new(shape, data)?);
        }
        if r.pos != body.len() {
            return Err(corrupt("trailing bytes after tensors"));
        }
        let params = assemble(header.dims, &mut tensors, "")?;
        let reference = if tensors.keys().any(|k| k.starts_with("ref.")) {
            Some(assemble(header.dims, &mut tensors, "ref.")?)
        } else {
            None
        };
        let mut moments = BTreeMap::new();
        let m_names: Vec<String> = tensors
            .keys()
            .filter_map(|k| k.strip_prefix("adam.m.").map(str::to_string))
            .collect();
        for name in m_names {
            let m = tensors.remove(&format!("adam.m.{name}")).expect("listed");
            let v = tensors
                .remove(&format!("adam.v.{name}"))
                .ok_or_else(|| corrupt(format!("missing tensor adam.v.{name}")))?;
            let expected = params
                .get(&name)
                .ok_or_else(|| corrupt(format!("optimizer moments for unknown parameter {name}")))?;
            for t in [&m, &v] {
                if t.shape() != expected.shape() {
                    return Err(Error::TensorShape {
                        name: name.clone(),
                        expected: expected.shape().to_vec(),
                        found: t.shape().to_vec(),
                    });
                }
            }
            moments.insert(name, Moments { m, v });
        }
        if let Some(extra) = tensors.keys().next() {
            return Err(corrupt(format!("unexpected tensor {extra}")));
        }
        let optimizer = (!moments.is_empty() || header.optimizer_step > 0).then(|| OptimizerState {
            hyper: header.adamw,
            step: header.optimizer_step,
            moments,
        });
        Ok(Self {
            header,
            params,
            optimizer,
            reference,
        })
    }

    /// Writes via a temporary sibling file and rename.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let tmp = path.with_extension("ckpt.tmp");
        std::fs::write(&tmp, self.to_bytes()?).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// Loads and compares the stored config fingerprint with `expected`;
    /// a mismatch is logged and returned as a warning, not an error.
    pub fn load_checked(path: impl AsRef<Path>, expected_fingerprint: &str) -> Result<(Self, Option<String>)> {
        let ck = Self::load(path)?;
        let warning = (ck.header.config_fingerprint != expected_fingerprint).then(|| {
            let w = format!(
                "checkpoint config fingerprint {} differs from current {}",
                ck.header.config_fingerprint, expected_fingerprint
            );
            log::warn!("{w}");
            w
        });
        Ok((ck, warning))
    }

    /// Copies stored parameters into `target`, which may have different
    /// dims; the first shape mismatch is reported by tensor name.
    pub fn restore_into(&self, target: &mut ModelParameters) -> Result<()> {
        for p in self.params.iter() {
            target.set(&p.name, p.tensor.clone())?;
        }
        Ok(())
    }

    /// SHA-256 of the serialized bytes.
    pub fn hash(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(self.to_bytes()?)))
    }
}
