//! Dataset container: manifest header plus per-task records.
//!
//! Layout after the magic `MNTD` and version: regime tag (u8), seed (u64),
//! mesh dims (2 x u32), task count (u32), rejection counters (5 x u64), then
//! per task: id (u64), vstar (f64), fixed-DOF list (u32 count + u32 each),
//! load list (u32 count + (u32, f64) each), c_ref (f64) and the energy
//! vector (N x f64). A SHA-256 checksum closes the file. A lossless JSON
//! export exists for debugging.

use super::reader::{put_f64, put_u32, put_u64, Cursor};
use super::{finalize_with_checksum, verify_checksum, FormatError, FORMAT_VERSION};
use crate::fem::{BoundaryConditions, Discretization};
use crate::taskgen::{Dataset, DatasetManifest, Regime, RejectionStats, Task};
use std::path::Path;

const MAGIC: &[u8; 4] = b"MNTD";

pub fn encode(dataset: &Dataset) -> Vec<u8> {
    let m = &dataset.manifest;
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    put_u32(&mut buf, FORMAT_VERSION);
    buf.push(m.regime.tag());
    put_u64(&mut buf, m.seed);
    put_u32(&mut buf, m.nelx);
    put_u32(&mut buf, m.nely);
    put_u32(&mut buf, m.n);
    put_u64(&mut buf, m.rejections.singular);
    put_u64(&mut buf, m.rejections.solver_failure);
    put_u64(&mut buf, m.rejections.non_finite);
    put_u64(&mut buf, m.rejections.degenerate);
    put_u64(&mut buf, m.rejections.too_large);
    for task in &dataset.tasks {
        put_u64(&mut buf, task.id);
        put_f64(&mut buf, task.vstar);
        put_u32(&mut buf, task.bc.fixed_dofs.len() as u32);
        for &d in &task.bc.fixed_dofs {
            put_u32(&mut buf, d as u32);
        }
        put_u32(&mut buf, task.bc.loads.len() as u32);
        for &(d, v) in &task.bc.loads {
            put_u32(&mut buf, d as u32);
            put_f64(&mut buf, v);
        }
        put_f64(&mut buf, task.c_ref);
        for &e in &task.energy {
            put_f64(&mut buf, e);
        }
    }
    finalize_with_checksum(buf)
}

pub fn decode(buf: &[u8]) -> Result<Dataset, FormatError> {
    let payload = verify_checksum(buf)?;
    let mut c = Cursor::new(payload);
    c.expect_magic(MAGIC)?;
    c.version()?;
    let regime = Regime::from_tag(c.u8()?)
        .ok_or_else(|| FormatError::Invalid("unknown regime tag".into()))?;
    let seed = c.u64()?;
    let nelx = c.u32()?;
    let nely = c.u32()?;
    if nelx == 0 || nely == 0 {
        return Err(FormatError::Invalid("zero mesh dimension".into()));
    }
    let nel = (nelx as usize)
        .checked_mul(nely as usize)
        .ok_or_else(|| FormatError::Invalid("mesh dimension overflow".into()))?;
    let n = c.u32()?;
    let rejections = RejectionStats {
        singular: c.u64()?,
        solver_failure: c.u64()?,
        non_finite: c.u64()?,
        degenerate: c.u64()?,
        too_large: c.u64()?,
    };
    let disc = Discretization::new(nelx as usize, nely as usize);
    let ndof = disc.num_dofs();

    let mut tasks = Vec::new();
    for _ in 0..n {
        let id = c.u64()?;
        let vstar = c.f64()?;
        if !(vstar > 0.0 && vstar < 1.0) {
            return Err(FormatError::Invalid(format!("vstar {vstar} outside (0,1)")));
        }
        let n_fixed = c.u32()? as usize;
        if n_fixed > c.remaining() / 4 {
            return Err(FormatError::UnexpectedEof);
        }
        let mut fixed = Vec::with_capacity(n_fixed);
        for _ in 0..n_fixed {
            let d = c.u32()? as usize;
            if d >= ndof {
                return Err(FormatError::Invalid(format!("fixed DOF {d} out of range")));
            }
            fixed.push(d);
        }
        let n_loads = c.u32()? as usize;
        if n_loads > c.remaining() / 12 {
            return Err(FormatError::UnexpectedEof);
        }
        let mut loads = Vec::with_capacity(n_loads);
        for _ in 0..n_loads {
            let d = c.u32()? as usize;
            if d >= ndof {
                return Err(FormatError::Invalid(format!("loaded DOF {d} out of range")));
            }
            let v = c.f64()?;
            if !v.is_finite() {
                return Err(FormatError::Invalid("non-finite load value".into()));
            }
            loads.push((d, v));
        }
        let c_ref = c.f64()?;
        if !(c_ref.is_finite() && c_ref > 0.0) {
            return Err(FormatError::Invalid("non-positive reference compliance".into()));
        }
        let energy = c.f64_vec(nel)?;
        if energy.iter().any(|e| !e.is_finite()) {
            return Err(FormatError::Invalid("non-finite energy value".into()));
        }
        tasks.push(Task {
            id,
            disc,
            bc: BoundaryConditions::new(fixed, loads),
            vstar,
            energy,
            c_ref,
            regime,
        });
    }
    if !c.is_exhausted() {
        return Err(FormatError::Invalid("trailing bytes after last task".into()));
    }
    Ok(Dataset {
        manifest: DatasetManifest {
            format_version: FORMAT_VERSION,
            regime,
            seed,
            nelx,
            nely,
            n,
            rejections,
        },
        tasks,
    })
}

pub fn write(path: &Path, dataset: &Dataset) -> Result<(), FormatError> {
    std::fs::write(path, encode(dataset))?;
    Ok(())
}

pub fn read(path: &Path) -> Result<Dataset, FormatError> {
    decode(&std::fs::read(path)?)
}

/// Lossless textual form for debugging; floats round-trip exactly.
pub fn to_json(dataset: &Dataset) -> String {
    serde_json::to_string_pretty(dataset).expect("dataset serialization cannot fail")
}

pub fn from_json(text: &str) -> Result<Dataset, FormatError> {
    serde_json::from_str(text).map_err(|e| FormatError::Invalid(e.to_string()))
}
