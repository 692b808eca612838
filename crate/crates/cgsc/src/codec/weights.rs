//! Model weight serialization ("CGSM" files).
//!
//! A flat little-endian f32 dump in a fixed field order: per-net trunk and
//! head matrices, then the factorized-density channels, then (optionally)
//! the per-anchor hyperprior table. The same blob is embedded verbatim in
//! the codec bitstream so a stream decodes without side files.

use crate::entropy::{FactorizedChannel, FactorizedDensity, HyperpriorTable, Mlp, ModelConfig, Models};
use crate::error::{Error, Result};

pub const MODEL_MAGIC: &[u8; 4] = b"CGSM";
pub const MODEL_VERSION: u16 = 1;

const FLAG_INCLUDE_Z: u8 = 1;
const FLAG_SHARED_POSITION_ONLY: u8 = 2;

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Truncated("model weights"));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
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

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32s(&mut self, n: usize, out: &mut Vec<f64>) -> Result<()> {
        let bytes = self.take(4 * n)?;
        out.clear();
        out.reserve(n);
        for c in bytes.chunks_exact(4) {
            out.push(f32::from_le_bytes(c.try_into().unwrap()) as f64);
        }
        Ok(())
    }
}

fn push_f32s(out: &mut Vec<u8>, values: &[f64]) {
    for &v in values {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
}

/// Serializes models. Parameters are written as f32; callers that intend
/// to keep coding with the same models afterwards must snap them first so
/// memory and file agree.
pub fn write_models(models: &Models, include_z: bool) -> Vec<u8> {
    let cfg = &models.config;
    let mut out = Vec::new();
    out.extend_from_slice(MODEL_MAGIC);
    out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
    let mut flags = 0u8;
    if include_z {
        flags |= FLAG_INCLUDE_Z;
    }
    if cfg.shared_position_only {
        flags |= FLAG_SHARED_POSITION_ONLY;
    }
    out.push(flags);
    out.push(cfg.levels as u8);
    out.extend_from_slice(&(cfg.hidden as u16).to_le_bytes());
    out.extend_from_slice(&(cfg.feature_dim as u16).to_le_bytes());
    out.extend_from_slice(&(cfg.scaling_dim as u16).to_le_bytes());
    out.extend_from_slice(&(cfg.offset_count as u16).to_le_bytes());
    out.extend_from_slice(&(cfg.hyper_dim as u16).to_le_bytes());
    for &d in &cfg.delta0 {
        out.extend_from_slice(&(d as f32).to_le_bytes());
    }
    out.push(models.nets.len() as u8);
    for net in &models.nets {
        out.extend_from_slice(&(net.input_dim as u32).to_le_bytes());
        push_f32s(&mut out, &net.w1);
        push_f32s(&mut out, &net.b1);
        push_f32s(&mut out, &net.w2);
        push_f32s(&mut out, &net.b2);
        push_f32s(&mut out, &net.w3);
        push_f32s(&mut out, &net.b3);
    }
    for ch in &models.hyper.theta.channels {
        let mut vals = Vec::with_capacity(FactorizedChannel::PARAM_COUNT);
        ch.for_each_param(&mut |v| vals.push(v));
        push_f32s(&mut out, &vals);
    }
    if include_z {
        let anchors = if cfg.hyper_dim == 0 {
            0
        } else {
            models.hyper.z.len() / cfg.hyper_dim
        };
        out.extend_from_slice(&(anchors as u64).to_le_bytes());
        push_f32s(&mut out, &models.hyper.z);
    }
    out
}

/// Inverse of [`write_models`]. When the blob has no hyperprior table the
/// returned `z` is empty; the codec resizes it after decoding.
pub fn read_models(bytes: &[u8]) -> Result<Models> {
    let mut r = Reader::new(bytes);
    if r.take(4)? != MODEL_MAGIC {
        return Err(Error::BadHeader("not a CGSM model blob".into()));
    }
    let version = r.u16()?;
    if version != MODEL_VERSION {
        return Err(Error::BadHeader(format!(
            "unsupported model version {version}"
        )));
    }
    let flags = r.u8()?;
    let levels = r.u8()? as usize;
    let hidden = r.u16()? as usize;
    let feature_dim = r.u16()? as usize;
    let scaling_dim = r.u16()? as usize;
    let offset_count = r.u16()? as usize;
    let hyper_dim = r.u16()? as usize;
    let mut delta0 = [0.0f64; 3];
    for d in &mut delta0 {
        *d = r.f32()? as f64;
    }
    let cfg = ModelConfig {
        feature_dim,
        scaling_dim,
        offset_count,
        hyper_dim,
        hidden,
        delta0,
        levels,
        shared_position_only: flags & FLAG_SHARED_POSITION_ONLY != 0,
    };
    cfg.validate()?;
    let net_count = r.u8()? as usize;
    if net_count != cfg.net_count() {
        return Err(Error::BadHeader(format!(
            "model blob has {net_count} nets, config implies {}",
            cfg.net_count()
        )));
    }
    let out_dim = 3 * cfg.group_channels();
    let mut nets = Vec::with_capacity(net_count);
    for k in 0..net_count {
        let input_dim = r.u32()? as usize;
        if input_dim != cfg.context_len(k) {
            return Err(Error::BadHeader(format!(
                "net {k} input dim {input_dim} does not match context length {}",
                cfg.context_len(k)
            )));
        }
        let mut net = Mlp::zeros(input_dim, hidden, out_dim);
        r.f32s(hidden * input_dim, &mut net.w1)?;
        r.f32s(hidden, &mut net.b1)?;
        r.f32s(hidden * hidden, &mut net.w2)?;
        r.f32s(hidden, &mut net.b2)?;
        r.f32s(out_dim * hidden, &mut net.w3)?;
        r.f32s(out_dim, &mut net.b3)?;
        nets.push(net);
    }
    let mut channels = Vec::with_capacity(hyper_dim);
    for _ in 0..hyper_dim {
        let mut vals = Vec::new();
        r.f32s(FactorizedChannel::PARAM_COUNT, &mut vals)?;
        let mut ch = FactorizedChannel::zeros();
        let mut it = vals.into_iter();
        ch.for_each_param_mut(&mut |v| *v = it.next().unwrap());
        channels.push(ch);
    }
    let z = if flags & FLAG_INCLUDE_Z != 0 {
        let anchors = r.u64()? as usize;
        let mut z = Vec::new();
        r.f32s(anchors * hyper_dim, &mut z)?;
        z
    } else {
        Vec::new()
    };
    Ok(Models {
        config: cfg,
        nets,
        hyper: HyperpriorTable {
            z,
            theta: FactorizedDensity { channels },
        },
    })
}

/// Writes a standalone model file.
pub fn save_models(models: &Models, path: &std::path::Path) -> Result<()> {
    std::fs::write(path, write_models(models, true))?;
    Ok(())
}

/// Reads a standalone model file.
pub fn load_models(path: &std::path::Path) -> Result<Models> {
    read_models(&std::fs::read(path)?)
}
