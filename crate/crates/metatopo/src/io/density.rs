//! Density-field container: stage tag, mesh dims and per-element values.

use super::reader::{put_f64, put_u32, Cursor};
use super::{finalize_with_checksum, verify_checksum, FormatError, FORMAT_VERSION};
use crate::filters::{DensityField, DensityStage};
use std::path::Path;

const MAGIC: &[u8; 4] = b"MNRD";

fn stage_tag(stage: DensityStage) -> u8 {
    match stage {
        DensityStage::Raw => 0,
        DensityStage::Filtered => 1,
        DensityStage::Projected => 2,
        DensityStage::Binary => 3,
    }
}

fn stage_from_tag(t: u8) -> Option<DensityStage> {
    match t {
        0 => Some(DensityStage::Raw),
        1 => Some(DensityStage::Filtered),
        2 => Some(DensityStage::Projected),
        3 => Some(DensityStage::Binary),
        _ => None,
    }
}

pub fn encode(field: &DensityField, nelx: usize, nely: usize) -> Vec<u8> {
    assert_eq!(field.values.len(), nelx * nely, "field/mesh size mismatch");
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    put_u32(&mut buf, FORMAT_VERSION);
    buf.push(stage_tag(field.stage));
    put_u32(&mut buf, nelx as u32);
    put_u32(&mut buf, nely as u32);
    for &v in &field.values {
        put_f64(&mut buf, v);
    }
    finalize_with_checksum(buf)
}

/// Returns the field and its mesh dims.
pub fn decode(buf: &[u8]) -> Result<(DensityField, usize, usize), FormatError> {
    let payload = verify_checksum(buf)?;
    let mut c = Cursor::new(payload);
    c.expect_magic(MAGIC)?;
    c.version()?;
    let stage = stage_from_tag(c.u8()?)
        .ok_or_else(|| FormatError::Invalid("unknown stage tag".into()))?;
    let nelx = c.u32()? as usize;
    let nely = c.u32()? as usize;
    if nelx == 0 || nely == 0 {
        return Err(FormatError::Invalid("zero mesh dimension".into()));
    }
    let n = nelx
        .checked_mul(nely)
        .ok_or_else(|| FormatError::Invalid("mesh dimension overflow".into()))?;
    let values = c.f64_vec(n)?;
    if values.iter().any(|v| !v.is_finite()) {
        return Err(FormatError::Invalid("non-finite density value".into()));
    }
    if !c.is_exhausted() {
        return Err(FormatError::Invalid("trailing bytes".into()));
    }
    Ok((DensityField::new(values, stage), nelx, nely))
}

pub fn write(path: &Path, field: &DensityField, nelx: usize, nely: usize) -> Result<(), FormatError> {
    std::fs::write(path, encode(field, nelx, nely))?;
    Ok(())
}

pub fn read(path: &Path) -> Result<(DensityField, usize, usize), FormatError> {
    decode(&std::fs::read(path)?)
}

/// Renders a density field as a binary PGM image, one pixel per element:
/// 0 = solid, 255 = void. Image rows run top to bottom, so pixel row `r`
/// holds element row `nely - 1 - r`.
pub fn to_pgm(field: &DensityField, nelx: usize, nely: usize) -> Vec<u8> {
    assert_eq!(field.values.len(), nelx * nely, "field/mesh size mismatch");
    let mut out = format!("P5\n{nelx} {nely}\n255\n").into_bytes();
    for r in 0..nely {
        let ey = nely - 1 - r;
        for ex in 0..nelx {
            let rho = field.values[ex * nely + ey].clamp(0.0, 1.0);
            out.push(((1.0 - rho) * 255.0).round() as u8);
        }
    }
    out
}
