//! Network checkpoint container: config, seed, provenance and the flat
//! parameter vector, with a SHA-256 checksum. Round-trips are bit-exact.

use super::reader::{put_f64, put_u32, put_u64, Cursor};
use super::{finalize_with_checksum, verify_checksum, FormatError, FORMAT_VERSION};
use crate::network::{NetworkConfig, NetworkParameters, Provenance};
use std::path::Path;

const MAGIC: &[u8; 4] = b"MNCK";

/// A parameter vector with the metadata needed to reproduce it.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: NetworkParameters,
    /// Seed of the run that produced these parameters.
    pub seed: u64,
}

fn provenance_tag(p: Provenance) -> u8 {
    match p {
        Provenance::StandardInit => 0,
        Provenance::MetaLearned => 1,
        Provenance::Pretrained => 2,
    }
}

fn provenance_from_tag(t: u8) -> Option<Provenance> {
    match t {
        0 => Some(Provenance::StandardInit),
        1 => Some(Provenance::MetaLearned),
        2 => Some(Provenance::Pretrained),
        _ => None,
    }
}

pub fn encode(ckpt: &Checkpoint) -> Vec<u8> {
    let cfg = &ckpt.params.config;
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    put_u32(&mut buf, FORMAT_VERSION);
    buf.push(cfg.conditioned as u8);
    put_u32(&mut buf, cfg.hidden_width as u32);
    put_u32(&mut buf, cfg.hidden_layers as u32);
    put_f64(&mut buf, cfg.omega0);
    put_u64(&mut buf, ckpt.seed);
    buf.push(provenance_tag(ckpt.params.provenance));
    put_u64(&mut buf, ckpt.params.values.len() as u64);
    for &v in &ckpt.params.values {
        put_f64(&mut buf, v);
    }
    finalize_with_checksum(buf)
}

pub fn decode(buf: &[u8]) -> Result<Checkpoint, FormatError> {
    let payload = verify_checksum(buf)?;
    let mut c = Cursor::new(payload);
    c.expect_magic(MAGIC)?;
    c.version()?;
    let conditioned = match c.u8()? {
        0 => false,
        1 => true,
        t => return Err(FormatError::Invalid(format!("bad conditioned flag {t}"))),
    };
    let hidden_width = c.u32()? as usize;
    let hidden_layers = c.u32()? as usize;
    let omega0 = c.f64()?;
    if hidden_width == 0 {
        return Err(FormatError::Invalid("zero hidden width".into()));
    }
    if !(omega0.is_finite() && omega0 > 0.0) {
        return Err(FormatError::Invalid("omega0 must be positive".into()));
    }
    let seed = c.u64()?;
    let provenance = provenance_from_tag(c.u8()?)
        .ok_or_else(|| FormatError::Invalid("unknown provenance tag".into()))?;
    let count = c.u64()? as usize;

    let cfg = NetworkConfig {
        conditioned,
        hidden_width,
        hidden_layers,
        omega0,
    };
    // overflow-safe expected count
    let input = if conditioned { 3usize } else { 2 };
    let expected = (|| -> Option<usize> {
        let w = hidden_width;
        let a = input.checked_mul(w)?.checked_add(w)?;
        let b = w.checked_mul(w)?.checked_add(w)?.checked_mul(hidden_layers)?;
        a.checked_add(b)?.checked_add(w + 1)
    })()
    .ok_or_else(|| FormatError::Invalid("parameter count overflow".into()))?;
    if count != expected {
        return Err(FormatError::Invalid(format!(
            "parameter count {count} does not match config ({expected})"
        )));
    }
    let values = c.f64_vec(count)?;
    if values.iter().any(|v| !v.is_finite()) {
        return Err(FormatError::Invalid("non-finite parameter value".into()));
    }
    if !c.is_exhausted() {
        return Err(FormatError::Invalid("trailing bytes".into()));
    }
    Ok(Checkpoint {
        params: NetworkParameters {
            config: cfg,
            provenance,
            values,
        },
        seed,
    })
}

pub fn write(path: &Path, ckpt: &Checkpoint) -> Result<(), FormatError> {
    std::fs::write(path, encode(ckpt))?;
    Ok(())
}

pub fn read(path: &Path) -> Result<Checkpoint, FormatError> {
    decode(&std::fs::read(path)?)
}
