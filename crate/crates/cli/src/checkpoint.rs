//! Versioned binary checkpoints: magic bytes, a format version, then the complete trainer
//! state (configuration, networks, optimizer accumulators, scalars, buffers, environment,
//! random streams and counters) in the core codec.

use std::path::Path;

use metasaclag::codec::{Decode, Decoder, Encode, Encoder};
use metasaclag::trainer::Trainer;

use crate::error::{CliError, CliResult};

pub const MAGIC: &[u8; 8] = b"MSLCKPT\0";
pub const FORMAT_VERSION: u32 = 1;

pub fn to_bytes(trainer: &Trainer) -> Vec<u8> {
    let mut enc = Encoder::new();
    enc.bytes(MAGIC);
    enc.u32(FORMAT_VERSION);
    trainer.encode(&mut enc);
    enc.into_bytes()
}

pub fn from_bytes(bytes: &[u8]) -> CliResult<Trainer> {
    let bad = |msg: String| CliError::Config(format!("invalid checkpoint: {msg}"));
    let mut dec = Decoder::new(bytes);
    let magic = dec.bytes().map_err(|e| bad(e.to_string()))?;
    if magic != MAGIC {
        return Err(bad("not a metasaclag checkpoint".into()));
    }
    let version = dec.u32()?;
    if version != FORMAT_VERSION {
        return Err(bad(format!("format version {version}, expected {FORMAT_VERSION}")));
    }
    let trainer = Trainer::decode(&mut dec).map_err(|e| bad(e.to_string()))?;
    if !dec.is_empty() {
        return Err(bad("trailing bytes".into()));
    }
    Ok(trainer)
}

/// Writes via a temporary file and a rename, so a crash never leaves a torn checkpoint.
pub fn save(path: &Path, trainer: &Trainer) -> CliResult<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, to_bytes(trainer)).map_err(CliError::io(&tmp))?;
    std::fs::rename(&tmp, path).map_err(CliError::io(path))
}

pub fn load(path: &Path) -> CliResult<Trainer> {
    let bytes = std::fs::read(path).map_err(CliError::io(path))?;
    from_bytes(&bytes)
}
