//! Checkpoint format.
//!
//! Little-endian throughout:
//!
//! ```text
//! magic            4 bytes  "PSM1"
//! width count      u32
//! widths           u32 × width count
//! time_conditioned u8 (0 or 1)
//! per layer        weight rows (out × in f64, row-major), then bias (out f64)
//! ```

use std::fs;
use std::path::Path;

use super::{Mlp, MlpParams, MlpSpec};
use crate::{Error, Result};

pub const MAGIC: &[u8; 4] = b"PSM1";

pub fn encode(net: &Mlp) -> Vec<u8> {
    let spec = net.spec();
    let mut out = Vec::with_capacity(9 + 4 * spec.widths.len() + 8 * spec.num_params());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(spec.widths.len() as u32).to_le_bytes());
    for &w in &spec.widths {
        out.extend_from_slice(&(w as u32).to_le_bytes());
    }
    out.push(spec.time_conditioned as u8);
    for v in net.params().iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(format!("truncated at byte {}", self.pos)),
        }
    }

    fn u32(&mut self) -> std::result::Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> std::result::Result<f64, String> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn decode(bytes: &[u8]) -> std::result::Result<Mlp, String> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err("bad magic".into());
    }
    let count = r.u32()? as usize;
    if count < 2 || count > 1024 {
        return Err(format!("implausible width count {count}"));
    }
    let widths = (0..count)
        .map(|_| r.u32().map(|w| w as usize))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let time_conditioned = match r.take(1)?[0] {
        0 => false,
        1 => true,
        other => return Err(format!("bad time_conditioned flag {other}")),
    };
    let spec = MlpSpec::new(widths, time_conditioned).map_err(|e| e.to_string())?;
    let needed = spec.num_params().checked_mul(8).ok_or("parameter count overflow")?;
    if bytes.len() - r.pos != needed {
        return Err(format!(
            "expected {needed} parameter bytes, found {}",
            bytes.len() - r.pos
        ));
    }
    let mut params = MlpParams::zeros(&spec);
    for layer in &mut params.layers {
        for w in layer.weight.iter_mut() {
            *w = r.f64()?;
        }
        for b in layer.bias.iter_mut() {
            *b = r.f64()?;
        }
    }
    if !params.is_finite() {
        return Err("non-finite parameter".into());
    }
    Mlp::new(spec, params).map_err(|e| e.to_string())
}

pub fn write_checkpoint(path: &Path, net: &Mlp) -> Result<()> {
    fs::write(path, encode(net)).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: &Path) -> Result<Mlp> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes).map_err(|reason| Error::format(path, reason))
}
