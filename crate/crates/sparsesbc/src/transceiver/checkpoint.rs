//! Checkpoint container: a self-describing binary file holding named
//! parameter arrays plus a JSON metadata block.
//!
//! Layout: `"SSBC"` magic, u32 version, u64 metadata length, metadata JSON,
//! u32 tensor count, then per tensor a length-prefixed name, dtype tag,
//! dimension list, and little-endian f64 data. Arrays are stored at full
//! f64 precision so a resumed run continues from bit-identical parameters.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ArchConfig, DecoderParams, EncoderParams};
use crate::error::{Error, Result};
use crate::nn::Tensor;

const MAGIC: &[u8; 4] = b"SSBC";
const VERSION: u32 = 1;
const DTYPE_F64: u8 = 1;

/// Everything needed to resume or evaluate a run, minus the arrays.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub arch: ArchConfig,
    /// Last completed epoch (0 = freshly initialized).
    pub epoch: usize,
    /// Base seed; together with `epoch` this determines every RNG stream
    /// of the remaining epochs.
    pub base_seed: u64,
    /// Receiver-side (shared) optimizer kind.
    pub optimizer: String,
    /// Transmitter-side optimizer kind when it differs.
    #[serde(default)]
    pub tx_optimizer: Option<String>,
    /// Adam step counters where the respective side uses adam.
    #[serde(default)]
    pub adam_step_enc: Option<u64>,
    #[serde(default)]
    pub adam_step_dec: Option<u64>,
}

pub fn save_checkpoint(
    path: &Path,
    enc: &EncoderParams,
    dec: &DecoderParams,
    meta: &CheckpointMeta,
    extra: &[(String, &Tensor)],
) -> Result<()> {
    let meta_json =
        serde_json::to_vec(meta).map_err(|e| Error::Checkpoint(format!("meta encode: {e}")))?;

    let mut named: Vec<(String, &Tensor)> = enc.tensors();
    named.extend(dec.tensors());
    named.extend(extra.iter().map(|(n, t)| (n.clone(), *t)));

    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(meta_json.len() as u64).to_le_bytes());
    out.extend_from_slice(&meta_json);
    out.extend_from_slice(&(named.len() as u32).to_le_bytes());
    for (name, tensor) in &named {
        let name_bytes = name.as_bytes();
        out.extend_from_slice(&(name_bytes.len() as u16).to_le_bytes());
        out.extend_from_slice(name_bytes);
        out.push(DTYPE_F64);
        out.push(tensor.shape().len() as u8);
        for &dim in tensor.shape() {
            out.extend_from_slice(&(dim as u32).to_le_bytes());
        }
        for v in tensor.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }

    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&out).map_err(|e| Error::io(path, e))?;
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Checkpoint("truncated checkpoint".into()));
        }
        let slice = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("length checked")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("length checked")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("length checked")))
    }
}

pub fn load_checkpoint(
    path: &Path,
) -> Result<(EncoderParams, DecoderParams, CheckpointMeta, Vec<(String, Tensor)>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = Reader {
        bytes: &bytes,
        pos: 0,
    };
    if r.take(4)? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported version {version}, expected {VERSION}"
        )));
    }
    let meta_len = r.u64()? as usize;
    let meta: CheckpointMeta = serde_json::from_slice(r.take(meta_len)?)
        .map_err(|e| Error::Checkpoint(format!("meta decode: {e}")))?;
    meta.arch
        .validate()
        .map_err(|e| Error::Checkpoint(format!("invalid arch in checkpoint: {e}")))?;

    let count = r.u32()? as usize;
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = r.u16()? as usize;
        let name = String::from_utf8(r.take(name_len)?.to_vec())
            .map_err(|_| Error::Checkpoint("non-utf8 tensor name".into()))?;
        let dtype = r.u8()?;
        if dtype != DTYPE_F64 {
            return Err(Error::Checkpoint(format!("unsupported dtype {dtype}")));
        }
        let ndim = r.u8()? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(r.u32()? as usize);
        }
        let len: usize = shape.iter().product();
        let raw = r.take(len * 8)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunked by 8")))
            .collect();
        tensors.push((name, Tensor::from_vec(&shape, data)));
    }

    let (enc, dec, extra) = assemble(&meta.arch, tensors)?;
    Ok((enc, dec, meta, extra))
}

/// Rebuilds parameter structs from named arrays, verifying every shape
/// against the architecture; unknown names are returned as extras.
fn assemble(
    arch: &ArchConfig,
    tensors: Vec<(String, Tensor)>,
) -> Result<(EncoderParams, DecoderParams, Vec<(String, Tensor)>)> {
    let (mut enc, mut dec) = super::init_params(arch, 0)?;
    let mut expected: std::collections::HashMap<String, &mut Tensor> = enc
        .tensors_mut()
        .into_iter()
        .zip(template_names(arch, "enc"))
        .map(|(t, n)| (n, t))
        .chain(
            dec.tensors_mut()
                .into_iter()
                .zip(template_names(arch, "dec"))
                .map(|(t, n)| (n, t)),
        )
        .collect();

    let mut seen = std::collections::HashSet::new();
    let mut extra = Vec::new();
    for (name, tensor) in tensors {
        match expected.get_mut(&name) {
            Some(slot) => {
                if slot.shape() != tensor.shape() {
                    return Err(Error::Checkpoint(format!(
                        "tensor {name} has shape {:?}, architecture expects {:?}",
                        tensor.shape(),
                        slot.shape()
                    )));
                }
                **slot = tensor;
                seen.insert(name);
            }
            None => extra.push((name, tensor)),
        }
    }
    let missing: Vec<&String> = expected.keys().filter(|k| !seen.contains(*k)).collect();
    if !missing.is_empty() {
        let mut names: Vec<String> = missing.iter().map(|s| s.to_string()).collect();
        names.sort();
        return Err(Error::Checkpoint(format!(
            "checkpoint missing tensors: {}",
            names.join(", ")
        )));
    }
    Ok((enc, dec, extra))
}

fn template_names(arch: &ArchConfig, side: &str) -> Vec<String> {
    let mut names = Vec::new();
    match side {
        "enc" => {
            for i in 0..arch.conv_channels.len() {
                names.push(format!("enc.conv{i}.w"));
                names.push(format!("enc.conv{i}.b"));
            }
            names.push("enc.quantizer.w".into());
            names.push("enc.quantizer.b".into());
        }
        _ => {
            names.push("dec.dequantizer.w".into());
            names.push("dec.dequantizer.b".into());
            for i in 0..arch.conv_channels.len() {
                names.push(format!("dec.deconv{i}.w"));
                names.push(format!("dec.deconv{i}.b"));
            }
        }
    }
    names
}

/// Rejects a checkpoint whose architecture differs from the expected one.
pub fn ensure_arch(actual: &ArchConfig, expected: &ArchConfig) -> Result<()> {
    if actual != expected {
        return Err(Error::Checkpoint(format!(
            "architecture mismatch: checkpoint has {actual:?}, expected {expected:?}"
        )));
    }
    Ok(())
}
