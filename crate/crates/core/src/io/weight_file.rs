//! `EPWT` weight containers.
//!
//! Header: magic, then `u32` n_blocks, channels, heads, ffn_ratio and
//! la_kernel, little endian. Payload is `f32`, matrices row-major as
//! `in × out`:
//!
//! ```text
//! per block:
//!   intra  q.w q.b k.w k.b v.w v.b o.w o.b      (c×c, c)
//!   cross  q.w q.b k.w k.b v.w v.b o.w o.b      (c×c, c)
//!   ffn    w1 b1 w2 b2                          (c×hc, hc, hc×c, c)
//! local conv kernel [ky][kx][c_in][c_out], bias (c)
//! u32 pe_rows, then pe_rows × c positional table (pe_rows may be 0)
//! ```
//!
//! `hc = ffn_ratio · c`. The positional mode is a runtime choice and is not stored.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, RowDVector};

use super::{read_f32s, read_magic, read_u32, BinaryFormatError};
use crate::attention::{
    AttentionConfig, AttentionLayer, AttentionWeights, BlockWeights, ConvWeights, FeedForward, Linear, PeMode,
};

pub const WEIGHT_MAGIC: [u8; 4] = *b"EPWT";

fn put_u32(w: &mut Vec<u8>, v: usize) -> Result<(), BinaryFormatError> {
    let v = u32::try_from(v).map_err(|_| BinaryFormatError::Invalid("value exceeds u32".into()))?;
    w.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

fn put_f32s<'a>(w: &mut Vec<u8>, values: impl IntoIterator<Item = &'a f64>) {
    for v in values {
        w.extend_from_slice(&(*v as f32).to_le_bytes());
    }
}

fn put_matrix(w: &mut Vec<u8>, m: &DMatrix<f64>) {
    for row in m.row_iter() {
        put_f32s(w, row.iter());
    }
}

fn put_linear(w: &mut Vec<u8>, l: &Linear) {
    put_matrix(w, &l.weight);
    put_f32s(w, l.bias.iter());
}

fn put_layer(w: &mut Vec<u8>, l: &AttentionLayer) {
    for p in [&l.q, &l.k, &l.v, &l.o] {
        put_linear(w, p);
    }
}

pub fn write_weights(
    out: &mut impl Write,
    config: &AttentionConfig,
    weights: &AttentionWeights,
) -> Result<(), BinaryFormatError> {
    config.validate().map_err(|e| BinaryFormatError::Invalid(e.to_string()))?;
    weights.check(config).map_err(|e| BinaryFormatError::Invalid(e.to_string()))?;
    let mut buf = WEIGHT_MAGIC.to_vec();
    for v in [config.n_blocks, config.channels, config.heads, config.ffn_ratio, config.la_kernel] {
        put_u32(&mut buf, v)?;
    }
    for b in &weights.blocks {
        put_layer(&mut buf, &b.intra);
        put_layer(&mut buf, &b.cross);
        put_linear(&mut buf, &b.ffn.w1);
        put_linear(&mut buf, &b.ffn.w2);
    }
    put_f32s(&mut buf, weights.local.kernel.iter());
    put_f32s(&mut buf, weights.local.bias.iter());
    match &weights.pe_table {
        Some(t) => {
            put_u32(&mut buf, t.nrows())?;
            put_matrix(&mut buf, t);
        }
        None => put_u32(&mut buf, 0)?,
    }
    out.write_all(&buf)?;
    Ok(())
}

struct Reader<'a, R: Read> {
    r: &'a mut R,
}

impl<R: Read> Reader<'_, R> {
    fn matrix(&mut self, rows: usize, cols: usize, what: &str) -> Result<DMatrix<f64>, BinaryFormatError> {
        let v = read_f32s(self.r, rows * cols, what)?;
        Ok(DMatrix::from_row_iterator(rows, cols, v.into_iter().map(f64::from)))
    }

    fn vector(&mut self, n: usize, what: &str) -> Result<Vec<f64>, BinaryFormatError> {
        Ok(read_f32s(self.r, n, what)?.into_iter().map(f64::from).collect())
    }

    fn linear(&mut self, inputs: usize, outputs: usize, what: &str) -> Result<Linear, BinaryFormatError> {
        let weight = self.matrix(inputs, outputs, what)?;
        let bias = RowDVector::from_vec(self.vector(outputs, what)?);
        Ok(Linear { weight, bias })
    }

    fn layer(&mut self, c: usize, what: &str) -> Result<AttentionLayer, BinaryFormatError> {
        Ok(AttentionLayer {
            q: self.linear(c, c, what)?,
            k: self.linear(c, c, what)?,
            v: self.linear(c, c, what)?,
            o: self.linear(c, c, what)?,
        })
    }
}

const MAX_DIM: usize = 1 << 16;

/// Reads a container; the returned config uses sine encoding.
pub fn read_weights(r: &mut impl Read) -> Result<(AttentionConfig, AttentionWeights), BinaryFormatError> {
    read_magic(r, WEIGHT_MAGIC)?;
    let mut header = [0usize; 5];
    for h in header.iter_mut() {
        *h = read_u32(r)? as usize;
        if *h > MAX_DIM {
            return Err(BinaryFormatError::Invalid(format!("header value {h} is implausibly large")));
        }
    }
    let [n_blocks, channels, heads, ffn_ratio, la_kernel] = header;
    let config = AttentionConfig { channels, heads, ffn_ratio, n_blocks, pe_mode: PeMode::Sine, la_kernel };
    config
        .validate()
        .or_else(|e| match e {
            crate::attention::AttentionError::OddChannels(_) => Ok(()),
            e => Err(e),
        })
        .map_err(|e| BinaryFormatError::Invalid(e.to_string()))?;
    let c = channels;
    let hidden = c * ffn_ratio;
    let mut rd = Reader { r };
    let mut blocks = Vec::with_capacity(n_blocks);
    for i in 0..n_blocks {
        let intra = rd.layer(c, &format!("block {i} intra"))?;
        let cross = rd.layer(c, &format!("block {i} cross"))?;
        let w1 = rd.linear(c, hidden, &format!("block {i} ffn"))?;
        let w2 = rd.linear(hidden, c, &format!("block {i} ffn"))?;
        blocks.push(BlockWeights { intra, cross, ffn: FeedForward { w1, w2 } });
    }
    let kernel = rd.vector(la_kernel * la_kernel * c * c, "local kernel")?;
    let bias = rd.vector(c, "local bias")?;
    let pe_rows = read_u32(rd.r)? as usize;
    let pe_table = if pe_rows > 0 { Some(rd.matrix(pe_rows, c, "positional table")?) } else { None };
    let mut rest = [0u8; 1];
    if rd.r.read(&mut rest)? != 0 {
        return Err(BinaryFormatError::Invalid("trailing bytes after weights".into()));
    }
    let weights = AttentionWeights {
        blocks,
        local: ConvWeights { kernel_size: la_kernel, channels: c, kernel, bias },
        pe_table,
    };
    Ok((config, weights))
}

pub fn save_weights(path: impl AsRef<Path>, config: &AttentionConfig, weights: &AttentionWeights) -> Result<(), BinaryFormatError> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_weights(&mut f, config, weights)?;
    f.flush()?;
    Ok(())
}

pub fn load_weights(path: impl AsRef<Path>) -> Result<(AttentionConfig, AttentionWeights), BinaryFormatError> {
    let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
    read_weights(&mut f)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn to_f32_precision(w: &AttentionWeights, config: &AttentionConfig) -> AttentionWeights {
        let mut buf = Vec::new();
        write_weights(&mut buf, config, w).unwrap();
        read_weights(&mut buf.as_slice()).unwrap().1
    }

    #[test]
    fn round_trip_is_f32_exact() {
        let config = AttentionConfig { n_blocks: 2, ..AttentionConfig::new(8, 2) };
        let mut w = AttentionWeights::seeded(&config, 3);
        w.pe_table = Some(DMatrix::from_fn(5, 8, |i, j| (i * 8 + j) as f64 * 0.5));
        let once = to_f32_precision(&w, &config);
        assert_eq!(to_f32_precision(&once, &config), once);
        let mut buf = Vec::new();
        write_weights(&mut buf, &config, &w).unwrap();
        let (cfg2, _) = read_weights(&mut buf.as_slice()).unwrap();
        assert_eq!((cfg2.n_blocks, cfg2.channels, cfg2.heads, cfg2.ffn_ratio, cfg2.la_kernel), (2, 8, 2, 4, 3));
        let c = 8;
        let per_block = 2 * 4 * (c * c + c) + (c * 4 * c + 4 * c) + (4 * c * c + c);
        let expected = 4 + 20 + 4 * (2 * per_block + 9 * c * c + c) + 4 + 4 * 5 * c;
        assert_eq!(buf.len(), expected);
    }

    #[test]
    fn truncated_payload() {
        let config = AttentionConfig::new(4, 1);
        let mut buf = Vec::new();
        write_weights(&mut buf, &config, &AttentionWeights::zeros(&config)).unwrap();
        assert!(matches!(read_weights(&mut &buf[..buf.len() - 8]), Err(BinaryFormatError::Truncated(_))));
    }
}
