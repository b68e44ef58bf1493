//! On-disk formats: MVSNet-style camera text files, pair-set JSON, PPM
//! images and the binary feature / weight containers.

mod camfile;
mod feature_file;
mod pairs_json;
mod ppm;
mod weight_file;

pub use camfile::{format_cam_file, parse_cam_file, parse_cam_str, CamFile, CamFileError};
pub use feature_file::{load_feature_map, read_feature_map, save_feature_map, write_feature_map, FEATURE_MAGIC};
pub use pairs_json::{pairs_from_json, pairs_to_json, PairSetJson, PairsJsonError, PAIRS_SCHEMA_VERSION};
pub use ppm::{cluster_color, render_pairs, write_ppm, RgbImage};
pub use weight_file::{load_weights, read_weights, save_weights, write_weights, WEIGHT_MAGIC};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum BinaryFormatError {
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },
    #[error("file truncated: {0}")]
    Truncated(String),
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub(crate) fn read_u32(r: &mut impl std::io::Read) -> Result<u32, BinaryFormatError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(|e| truncated(e, "u32 field"))?;
    Ok(u32::from_le_bytes(b))
}

pub(crate) fn read_f32s(r: &mut impl std::io::Read, n: usize, what: &str) -> Result<Vec<f32>, BinaryFormatError> {
    let mut buf = vec![0u8; n * 4];
    r.read_exact(&mut buf).map_err(|e| truncated(e, what))?;
    Ok(buf.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect())
}

pub(crate) fn read_magic(r: &mut impl std::io::Read, expected: [u8; 4]) -> Result<(), BinaryFormatError> {
    let mut found = [0u8; 4];
    r.read_exact(&mut found).map_err(|e| truncated(e, "magic"))?;
    if found != expected {
        return Err(BinaryFormatError::BadMagic { expected, found });
    }
    Ok(())
}

fn truncated(e: std::io::Error, what: &str) -> BinaryFormatError {
    if e.kind() == std::io::ErrorKind::UnexpectedEof {
        BinaryFormatError::Truncated(what.to_string())
    } else {
        BinaryFormatError::Io(e)
    }
}
