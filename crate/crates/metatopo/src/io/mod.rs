//! Portable on-disk formats.
//!
//! Binary containers (datasets, checkpoints, density fields) share a common
//! layout: magic, format version, typed payload, and a trailing SHA-256
//! checksum over everything before it. All integers and floats are
//! little-endian. Decoders never panic on malformed input and never allocate
//! more than the input length implies.

pub mod checkpoint;
pub mod dataset;
pub mod density;
pub mod results;

mod reader;

pub use reader::FormatError;

/// Version stamped into every container written by this crate.
pub const FORMAT_VERSION: u32 = 1;

pub(crate) fn finalize_with_checksum(mut payload: Vec<u8>) -> Vec<u8> {
    use sha2::{Digest, Sha256};
    let digest = Sha256::digest(&payload);
    payload.extend_from_slice(&digest);
    payload
}

/// Splits a container into payload and verified checksum.
pub(crate) fn verify_checksum(buf: &[u8]) -> Result<&[u8], FormatError> {
    use sha2::{Digest, Sha256};
    if buf.len() < 32 {
        return Err(FormatError::UnexpectedEof);
    }
    let (payload, digest) = buf.split_at(buf.len() - 32);
    let expected = Sha256::digest(payload);
    if digest != expected.as_slice() {
        return Err(FormatError::ChecksumMismatch);
    }
    Ok(payload)
}
