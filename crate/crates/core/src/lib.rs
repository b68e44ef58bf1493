//! Epipolar line-pair search and line-constrained feature aggregation for
//! multi-view stereo.
//!
//! The crate runs from calibrated geometry to enhanced features:
//!
//! - [`geometry`]: camera pairs, depth-parameterized pixel transfer, closed-form epipolar lines
//! - [`pair_search`]: quantized clustering of reference pixels into line pairs
//! - [`sequence`]: gather/scatter between dense maps and per-line token sequences
//! - [`attention`]: intra-line self-attention, cross-line attention, local smoothing
//! - [`complexity`]: analytic MAC model and wall-clock comparison of aggregation strategies
//! - [`io`]: camera files, pair-set JSON, PPM, binary feature and weight containers
//! - [`verify`]: independent oracle suites used by tests and the `verify` command

pub mod attention;
pub mod complexity;
pub mod geometry;
pub mod io;
pub mod pair_search;
pub mod sequence;
pub mod synthetic;
pub mod verify;

pub use attention::{AttentionConfig, AttentionWeights, PeMode};
pub use complexity::{CostReport, Strategy, StrategyShape, ThreadMode};
pub use geometry::{CameraExtrinsics, CameraIntrinsics, CameraPair, EpipolarLine, ImageSize, Orientation};
pub use pair_search::{EpipolarPairSet, Pixel, QuantizedLineKey, SearchConfig};
pub use sequence::{FeatureMap, LineSequence, Side};
