//! `EPFM` feature maps: magic, `u32` height, width and channels (little
//! endian), then row-major `f32` values.

use std::io::{Read, Write};
use std::path::Path;

use super::{read_f32s, read_magic, read_u32, BinaryFormatError};
use crate::sequence::FeatureMap;

pub const FEATURE_MAGIC: [u8; 4] = *b"EPFM";

pub fn write_feature_map(w: &mut impl Write, map: &FeatureMap) -> Result<(), BinaryFormatError> {
    w.write_all(&FEATURE_MAGIC)?;
    for v in [map.height(), map.width(), map.channels()] {
        let v = u32::try_from(v).map_err(|_| BinaryFormatError::Invalid("dimension exceeds u32".into()))?;
        w.write_all(&v.to_le_bytes())?;
    }
    let mut buf = Vec::with_capacity(map.data().len() * 4);
    for &v in map.data() {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_feature_map(r: &mut impl Read) -> Result<FeatureMap, BinaryFormatError> {
    read_magic(r, FEATURE_MAGIC)?;
    let h = read_u32(r)? as usize;
    let w = read_u32(r)? as usize;
    let c = read_u32(r)? as usize;
    let data = read_f32s(r, h * w * c, "feature data")?;
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(BinaryFormatError::Invalid("trailing bytes after feature data".into()));
    }
    FeatureMap::new(h, w, c, data.into_iter().map(f64::from).collect())
        .map_err(|e| BinaryFormatError::Invalid(e.to_string()))
}

pub fn save_feature_map(path: impl AsRef<Path>, map: &FeatureMap) -> Result<(), BinaryFormatError> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_feature_map(&mut f, map)?;
    f.flush()?;
    Ok(())
}

pub fn load_feature_map(path: impl AsRef<Path>) -> Result<FeatureMap, BinaryFormatError> {
    let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
    read_feature_map(&mut f)
}
