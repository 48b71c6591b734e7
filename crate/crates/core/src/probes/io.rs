// SPDX-License-Identifier: MIT OR Apache-2.0

//! `ATRP` probe files.
//!
//! ```text
//! magic    "ATRP"
//! version  u32 (1)
//! variant  u8   0 = final-lr, 1 = layer-lr, 2 = layer-mlp
//! layers   u32  (0 for final-lr)
//! hidden   u32
//! m        u32  (0 unless layer-mlp)
//! arrays   f64 little-endian:
//!   final-lr   w[H] b mean[H] std[H]
//!   layer-lr   theta[L] w[H] b
//!   layer-mlp  theta[L] w1[m*H] w2[m] b
//! ```

use std::fs;
use std::path::Path;

use super::model::{FinalLRParams, LayerLRParams, LayerMLPParams, Probe, Variant};
use crate::error::{Error, Result};

pub const PROBE_MAGIC: [u8; 4] = *b"ATRP";
pub const PROBE_VERSION: u32 = 1;

fn put_f64s(buf: &mut Vec<u8>, xs: &[f64]) {
    for x in xs {
        buf.extend_from_slice(&x.to_le_bytes());
    }
}

pub fn encode_probe(probe: &Probe) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(&PROBE_MAGIC);
    buf.extend_from_slice(&PROBE_VERSION.to_le_bytes());
    buf.push(probe.variant().tag());
    let layers = probe.layers().unwrap_or(0) as u32;
    let m = probe.bottleneck().unwrap_or(0) as u32;
    buf.extend_from_slice(&layers.to_le_bytes());
    buf.extend_from_slice(&(probe.hidden() as u32).to_le_bytes());
    buf.extend_from_slice(&m.to_le_bytes());
    match probe {
        Probe::FinalLr(p) => {
            put_f64s(&mut buf, &p.w);
            put_f64s(&mut buf, &[p.b]);
            put_f64s(&mut buf, &p.scaler_mean);
            put_f64s(&mut buf, &p.scaler_std);
        }
        Probe::LayerLr(p) => {
            put_f64s(&mut buf, &p.theta);
            put_f64s(&mut buf, &p.w);
            put_f64s(&mut buf, &[p.b]);
        }
        Probe::LayerMlp(p) => {
            put_f64s(&mut buf, &p.theta);
            put_f64s(&mut buf, &p.w1);
            put_f64s(&mut buf, &p.w2);
            put_f64s(&mut buf, &[p.b]);
        }
    }
    buf
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Corruption(format!("probe file truncated at byte {}", self.pos)));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n.checked_mul(8).ok_or_else(|| Error::Corruption("size overflow".into()))?)?;
        let v: Vec<f64> = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::Validation("probe parameters contain non-finite values".into()));
        }
        Ok(v)
    }
}

pub fn decode_probe(bytes: &[u8]) -> Result<Probe> {
    let mut c = Cursor { bytes, pos: 0 };
    if c.take(4).map_err(|_| Error::Format("file too short for magic".into()))? != PROBE_MAGIC {
        return Err(Error::Format("bad probe magic, expected \"ATRP\"".into()));
    }
    let version = c.u32()?;
    if version != PROBE_VERSION as usize {
        return Err(Error::Format(format!("unsupported probe version {version}")));
    }
    let tag = c.take(1)?[0];
    let variant = Variant::from_tag(tag).ok_or_else(|| Error::Format(format!("unknown variant tag {tag}")))?;
    let layers = c.u32()?;
    let hidden = c.u32()?;
    let m = c.u32()?;
    if hidden == 0 {
        return Err(Error::Validation("probe hidden size is zero".into()));
    }
    let probe = match variant {
        Variant::FinalLr => {
            let w = c.f64s(hidden)?;
            let b = c.f64s(1)?[0];
            let scaler_mean = c.f64s(hidden)?;
            let scaler_std = c.f64s(hidden)?;
            if scaler_std.iter().any(|s| *s <= 0.0) {
                return Err(Error::Validation("scaler std must be positive".into()));
            }
            Probe::FinalLr(FinalLRParams { w, b, scaler_mean, scaler_std })
        }
        Variant::LayerLr => {
            if layers == 0 {
                return Err(Error::Validation("layer-lr probe with zero layers".into()));
            }
            let theta = c.f64s(layers)?;
            let w = c.f64s(hidden)?;
            let b = c.f64s(1)?[0];
            Probe::LayerLr(LayerLRParams { theta, w, b })
        }
        Variant::LayerMlp => {
            if layers == 0 || m == 0 {
                return Err(Error::Validation("layer-mlp probe with zero layers or bottleneck".into()));
            }
            let theta = c.f64s(layers)?;
            let w1 = c.f64s(m * hidden)?;
            let w2 = c.f64s(m)?;
            let b = c.f64s(1)?[0];
            Probe::LayerMlp(LayerMLPParams { theta, w1, w2, b, m })
        }
    };
    if c.pos != bytes.len() {
        return Err(Error::Corruption(format!("{} trailing bytes in probe file", bytes.len() - c.pos)));
    }
    Ok(probe)
}

pub fn write_probe(probe: &Probe, path: &Path) -> Result<()> {
    fs::write(path, encode_probe(probe))?;
    Ok(())
}

pub fn read_probe(path: &Path) -> Result<Probe> {
    decode_probe(&fs::read(path)?)
}
