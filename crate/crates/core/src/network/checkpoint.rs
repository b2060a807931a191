//! Checkpoint archive: named f32 tensors with a shape manifest and a config
//! echo, designed so any runtime can read it.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic   b"LBCK"
//! version u32 (currently 1)
//! step    u64 (training step counter)
//! config  frame_count u32, input_channels_per_frame u32,
//!         descriptor_dim u32, weight_init_seed u64,
//!         n_stages u32, then per stage: width u32, dilation u32
//! count   u32 (number of tensors)
//! tensor  name_len u16, name bytes (utf-8),
//!         dtype u8 (0 = f32), ndim u8, dims u32 * ndim,
//!         data f32 * prod(dims), row-major
//! ```
//!
//! Model tensors use the names from [`Weights::named_tensors`]; callers may
//! append extra tensors (e.g. optimizer state under `opt.*`), which load
//! back as a side table.

use super::{init_model, ModelConfig, Weights};
use crate::error::{Error, Result};
use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

pub const MAGIC: [u8; 4] = *b"LBCK";
pub const VERSION: u32 = 1;

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::format(
                self.path,
                format!(
                    "truncated checkpoint: needed {} bytes at offset {}, file has {}",
                    n,
                    self.pos,
                    self.buf.len()
                ),
            ));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let raw = self.take(4 * n)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

/// Serialize weights plus optional extra named tensors.
pub fn save_checkpoint(
    path: &Path,
    weights: &Weights,
    extra: &[(String, Vec<usize>, &[f32])],
) -> Result<()> {
    let mut out: Vec<u8> = Vec::new();
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&weights.step.to_le_bytes());
    let cfg = &weights.config;
    out.extend_from_slice(&(cfg.frame_count as u32).to_le_bytes());
    out.extend_from_slice(&(cfg.input_channels_per_frame as u32).to_le_bytes());
    out.extend_from_slice(&(cfg.descriptor_dim as u32).to_le_bytes());
    out.extend_from_slice(&cfg.weight_init_seed.to_le_bytes());
    out.extend_from_slice(&(cfg.backbone_widths.len() as u32).to_le_bytes());
    for (w, d) in cfg.backbone_widths.iter().zip(&cfg.dilation_schedule) {
        out.extend_from_slice(&(*w as u32).to_le_bytes());
        out.extend_from_slice(&(*d as u32).to_le_bytes());
    }
    let named = weights.named_tensors();
    let total = named.len() + extra.len();
    out.extend_from_slice(&(total as u32).to_le_bytes());
    let all = named
        .iter()
        .map(|(n, s, d)| (n.as_str(), s.as_slice(), *d))
        .chain(extra.iter().map(|(n, s, d)| (n.as_str(), s.as_slice(), *d)));
    for (name, shape, data) in all {
        let nb = name.as_bytes();
        out.extend_from_slice(&(nb.len() as u16).to_le_bytes());
        out.extend_from_slice(nb);
        out.push(0); // dtype f32
        out.push(shape.len() as u8);
        for &d in shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        for &v in data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let tmp = path.with_extension("tmp");
    let mut file = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    file.write_all(&out).map_err(|e| Error::io(&tmp, e))?;
    file.sync_all().map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Deserialize a checkpoint. Returns the weights and any extra tensors
/// (names that do not belong to the model, e.g. optimizer state).
pub fn load_checkpoint(path: &Path) -> Result<(Weights, BTreeMap<String, Vec<f32>>)> {
    let mut buf = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut buf))
        .map_err(|e| Error::io(path, e))?;
    let mut r = Reader { buf: &buf, pos: 0, path };

    let magic = r.take(4)?;
    if magic != MAGIC {
        return Err(Error::format(
            path,
            format!("bad magic {:02x?}, expected {:02x?} (LBCK)", magic, MAGIC),
        ));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::format(
            path,
            format!("unsupported checkpoint version {version}, expected {VERSION}"),
        ));
    }
    let step = r.u64()?;
    let frame_count = r.u32()? as usize;
    let input_channels_per_frame = r.u32()? as usize;
    let descriptor_dim = r.u32()? as usize;
    let weight_init_seed = r.u64()?;
    let n_stages = r.u32()? as usize;
    let mut backbone_widths = Vec::with_capacity(n_stages);
    let mut dilation_schedule = Vec::with_capacity(n_stages);
    for _ in 0..n_stages {
        backbone_widths.push(r.u32()? as usize);
        dilation_schedule.push(r.u32()? as usize);
    }
    let config = ModelConfig {
        frame_count,
        input_channels_per_frame,
        descriptor_dim,
        backbone_widths,
        dilation_schedule,
        weight_init_seed,
    };
    let mut weights = init_model(&config)?;
    weights.step = step;
    weights.version = version;

    let count = r.u32()? as usize;
    let mut extra = BTreeMap::new();
    let mut seen = 0usize;
    for _ in 0..count {
        let name_len = r.u16()? as usize;
        let name = String::from_utf8(r.take(name_len)?.to_vec())
            .map_err(|_| Error::format(path, "tensor name is not utf-8"))?;
        let dtype = r.take(1)?[0];
        if dtype != 0 {
            return Err(Error::format(path, format!("tensor {name}: unsupported dtype {dtype}")));
        }
        let ndim = r.take(1)?[0] as usize;
        let mut len = 1usize;
        for _ in 0..ndim {
            len *= r.u32()? as usize;
        }
        let data = r.f32s(len)?;
        match weights.tensor_slot_mut(&name) {
            Some(slot) => {
                if slot.len() != data.len() {
                    return Err(Error::format(
                        path,
                        format!(
                            "tensor {name}: expected {} values for this config, file has {}",
                            slot.len(),
                            data.len()
                        ),
                    ));
                }
                *slot = data;
                seen += 1;
            }
            None => {
                extra.insert(name, data);
            }
        }
    }
    let expected = weights.named_tensors().len();
    if seen != expected {
        return Err(Error::format(
            path,
            format!("checkpoint holds {seen} model tensors, the config requires {expected}"),
        ));
    }
    Ok((weights, extra))
}
