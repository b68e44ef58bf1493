use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{ImageSize, Orientation};
use crate::pair_search::{EpipolarPair, EpipolarPairSet, HoleMask, Pixel, QuantizedLineKey, SearchConfig};

pub const PAIRS_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum PairsJsonError {
    #[error("unsupported schema version {0}")]
    Schema(u32),
    #[error("invalid pair set: {0}")]
    Invalid(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairJson {
    pub orientation: Orientation,
    pub qk: i64,
    pub qb: i64,
    /// Dequantized slope.
    pub k: f64,
    /// Dequantized intercept.
    pub b: f64,
    pub ref_pixels: Vec<Pixel>,
    pub src_pixels: Vec<Pixel>,
}

/// Run-length encoded hole mask; `runs` alternate non-hole / hole starting
/// with non-hole, raster order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskJson {
    pub height: usize,
    pub width: usize,
    pub runs: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairSetJson {
    pub schema: u32,
    /// `[height, width]`.
    pub ref_size: [usize; 2],
    pub src_size: [usize; 2],
    pub config: SearchConfig,
    pub pairs: Vec<PairJson>,
    pub ref_holes: MaskJson,
    pub src_holes: MaskJson,
}

fn mask_json(m: &HoleMask) -> MaskJson {
    MaskJson { height: m.size().height, width: m.size().width, runs: m.run_lengths() }
}

impl From<&EpipolarPairSet> for PairSetJson {
    fn from(set: &EpipolarPairSet) -> Self {
        Self {
            schema: PAIRS_SCHEMA_VERSION,
            ref_size: [set.ref_size.height, set.ref_size.width],
            src_size: [set.src_size.height, set.src_size.width],
            config: set.config,
            pairs: set
                .pairs
                .iter()
                .map(|p| PairJson {
                    orientation: p.key.orientation,
                    qk: p.key.qk,
                    qb: p.key.qb,
                    k: p.line.slope,
                    b: p.line.intercept,
                    ref_pixels: p.ref_pixels.clone(),
                    src_pixels: p.src_pixels.clone(),
                })
                .collect(),
            ref_holes: mask_json(&set.ref_hole_mask),
            src_holes: mask_json(&set.src_hole_mask),
        }
    }
}

impl PairSetJson {
    pub fn into_pair_set(self) -> Result<EpipolarPairSet, PairsJsonError> {
        if self.schema != PAIRS_SCHEMA_VERSION {
            return Err(PairsJsonError::Schema(self.schema));
        }
        let size = |s: [usize; 2]| {
            ImageSize::new(s[0], s[1]).map_err(|e| PairsJsonError::Invalid(e.to_string()))
        };
        let ref_size = size(self.ref_size)?;
        let src_size = size(self.src_size)?;
        self.config.validate().map_err(|e| PairsJsonError::Invalid(e.to_string()))?;
        let mask = |m: MaskJson, expected: ImageSize| {
            let s = ImageSize { height: m.height, width: m.width };
            if s != expected {
                return Err(PairsJsonError::Invalid(format!("hole mask is {s}, expected {expected}")));
            }
            HoleMask::from_run_lengths(s, &m.runs)
                .ok_or_else(|| PairsJsonError::Invalid("hole mask runs do not cover the image".into()))
        };
        let ref_hole_mask = mask(self.ref_holes, ref_size)?;
        let src_hole_mask = mask(self.src_holes, src_size)?;
        let in_bounds = |p: &Pixel, s: ImageSize| p.x < s.width && p.y < s.height;
        let mut pairs = Vec::with_capacity(self.pairs.len());
        for p in self.pairs {
            if !p.ref_pixels.iter().all(|q| in_bounds(q, ref_size))
                || !p.src_pixels.iter().all(|q| in_bounds(q, src_size))
            {
                return Err(PairsJsonError::Invalid(format!("pair ({}, {}) has out-of-range pixels", p.qk, p.qb)));
            }
            let key = QuantizedLineKey { orientation: p.orientation, qk: p.qk, qb: p.qb };
            pairs.push(EpipolarPair {
                key,
                line: key.dequantize(&self.config),
                ref_pixels: p.ref_pixels,
                src_pixels: p.src_pixels,
            });
        }
        Ok(EpipolarPairSet { ref_size, src_size, config: self.config, pairs, ref_hole_mask, src_hole_mask })
    }
}

/// Pretty-printed JSON document followed by a newline.
pub fn pairs_to_json(set: &EpipolarPairSet) -> String {
    let mut s = serde_json::to_string_pretty(&PairSetJson::from(set)).expect("serializable");
    s.push('\n');
    s
}

pub fn pairs_from_json(text: &str) -> Result<EpipolarPairSet, PairsJsonError> {
    let doc: PairSetJson = serde_json::from_str(text)?;
    doc.into_pair_set()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pair_search::search_pairs;
    use crate::synthetic::rectified_rig;

    #[test]
    fn json_round_trip() {
        let size = ImageSize::new(8, 8).unwrap();
        let set = search_pairs(&rectified_rig(size, 100.0, 0.2), &SearchConfig::new(0.1, 2.0, 1.0, 2).unwrap())
            .unwrap();
        let text = pairs_to_json(&set);
        let value: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(value["schema"], 1);
        assert_eq!(value["pairs"][0]["orientation"], "standard");
        assert_eq!(value["pairs"][0]["ref_pixels"][1], serde_json::json!([1, 0]));
        assert_eq!(pairs_from_json(&text).unwrap(), set);
    }

    #[test]
    fn rejects_wrong_schema() {
        let size = ImageSize::new(2, 2).unwrap();
        let set = search_pairs(&rectified_rig(size, 10.0, 0.2), &SearchConfig::default()).unwrap();
        let text = pairs_to_json(&set).replace("\"schema\": 1", "\"schema\": 2");
        assert!(matches!(pairs_from_json(&text), Err(PairsJsonError::Schema(2))));
    }
}
