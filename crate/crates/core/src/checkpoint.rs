//! `SPW1` binary container for composer parameters and place indexes.
//!
//! Every container starts with the magic `SPW1` and a one-byte kind tag.
//! Composer checkpoints then carry, little-endian:
//!
//! ```text
//! u64 trained_steps | u32 n | u8 normalize
//! grouping (1):  u32 head_d_in | u32 head_d_out | u8 activation | W | b   (d_in = 0: no head)
//! fusion (2):    u32 d_in | u32 d_out | u8 activation | W | b
//! recurrent (3): u32 d_in | u32 hidden | W | U | b
//! ```
//!
//! Arrays are `f32` in row-major declaration order; LSTM gate blocks are
//! ordered input, forget, output, candidate.

use std::path::Path;

use crate::composer::{Activation, Composer, ComposerKind, ComposerParams, FusionParams, LstmParams};
use crate::error::{Error, Result};
use crate::fsio::{self, put_f32, put_u32, ByteReader};

pub const PARAMS_MAGIC: &[u8; 4] = b"SPW1";
pub const INDEX_TAG: u8 = 0x10;

pub(crate) fn header_error(offset: u64, reason: impl Into<String>) -> Error {
    Error::Header {
        offset,
        reason: reason.into(),
    }
}

pub(crate) fn read_magic(r: &mut ByteReader<'_>) -> Result<u8> {
    match r.take(4) {
        Some(m) if m == PARAMS_MAGIC => {}
        Some(m) => return Err(header_error(0, format!("bad magic {m:?}"))),
        None => return Err(header_error(0, "file shorter than magic")),
    }
    r.u8().ok_or_else(|| header_error(4, "missing kind tag"))
}

pub(crate) fn read_u32(r: &mut ByteReader<'_>) -> Result<u32> {
    let at = r.offset();
    r.u32().ok_or_else(|| header_error(at, "header ends early"))
}

pub(crate) fn read_f32s(r: &mut ByteReader<'_>, len: usize, record: usize) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(len.min(r.remaining() / 4));
    for _ in 0..len {
        let at = r.offset();
        let v = r.f32().ok_or(Error::Truncated { offset: at, record })?;
        if !v.is_finite() {
            return Err(Error::NonFinite { offset: at, record });
        }
        out.push(v as f64);
    }
    Ok(out)
}

fn put_all(out: &mut Vec<u8>, values: &[f64]) {
    for &v in values {
        put_f32(out, v as f32);
    }
}

pub fn encode_composer(c: &Composer) -> Vec<u8> {
    let mut out = PARAMS_MAGIC.to_vec();
    out.push(c.kind().tag());
    out.extend_from_slice(&c.trained_steps.to_le_bytes());
    put_u32(&mut out, c.n as u32);
    out.push(c.normalize as u8);
    match &c.params {
        ComposerParams::Grouping { head: None } => {
            put_u32(&mut out, 0);
            put_u32(&mut out, 0);
            out.push(0);
        }
        ComposerParams::Grouping { head: Some(p) } | ComposerParams::Fusion(p) => {
            put_u32(&mut out, p.d_in as u32);
            put_u32(&mut out, p.d_out as u32);
            out.push(p.activation.tag());
            put_all(&mut out, &p.weights);
            put_all(&mut out, &p.bias);
        }
        ComposerParams::Recurrent(p) => {
            put_u32(&mut out, p.d_in as u32);
            put_u32(&mut out, p.hidden as u32);
            put_all(&mut out, &p.w);
            put_all(&mut out, &p.u);
            put_all(&mut out, &p.b);
        }
    }
    out
}

pub fn decode_composer(bytes: &[u8]) -> Result<Composer> {
    let mut r = ByteReader::new(bytes);
    let tag = read_magic(&mut r)?;
    let kind = ComposerKind::ALL
        .into_iter()
        .find(|k| k.tag() == tag)
        .ok_or_else(|| header_error(4, format!("unknown composer tag {tag}")))?;
    let trained_steps = r.u64().ok_or_else(|| header_error(5, "header ends early"))?;
    let n = read_u32(&mut r)? as usize;
    let normalize = match r.u8() {
        Some(0) => false,
        Some(1) => true,
        _ => return Err(header_error(r.offset(), "bad normalize flag")),
    };
    let d_in = read_u32(&mut r)? as usize;
    let d_out = read_u32(&mut r)? as usize;
    let params = match kind {
        ComposerKind::Grouping | ComposerKind::Fusion => {
            let at = r.offset();
            let activation = r
                .u8()
                .and_then(Activation::from_tag)
                .ok_or_else(|| header_error(at, "bad activation tag"))?;
            let frames = if kind == ComposerKind::Fusion { n } else { 1 };
            if kind == ComposerKind::Grouping && d_in == 0 {
                ComposerParams::Grouping { head: None }
            } else {
                let weights = read_f32s(&mut r, d_out * frames * d_in, 0)?;
                let bias = read_f32s(&mut r, d_out, 1)?;
                let p = FusionParams {
                    n: frames,
                    d_in,
                    d_out,
                    weights,
                    bias,
                    activation,
                };
                if kind == ComposerKind::Fusion {
                    ComposerParams::Fusion(p)
                } else {
                    ComposerParams::Grouping { head: Some(p) }
                }
            }
        }
        ComposerKind::Recurrent => {
            let w = read_f32s(&mut r, 4 * d_out * d_in, 0)?;
            let u = read_f32s(&mut r, 4 * d_out * d_out, 1)?;
            let b = read_f32s(&mut r, 4 * d_out, 2)?;
            ComposerParams::Recurrent(LstmParams {
                d_in,
                hidden: d_out,
                w,
                u,
                b,
            })
        }
    };
    if r.remaining() != 0 {
        return Err(header_error(r.offset(), "trailing bytes after parameters"));
    }
    let mut c = Composer::new(n, params)?;
    c.normalize = normalize;
    c.trained_steps = trained_steps;
    Ok(c)
}

pub fn save_composer(c: &Composer, path: &Path) -> Result<()> {
    let bytes = encode_composer(c);
    fsio::write_atomic(path, |w| w.write_all(&bytes))
}

pub fn load_composer(path: &Path) -> Result<Composer> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_composer(&bytes)
}
