//! Rate-distortion benchmarking for lossy compression of pathology tiles.
//!
//! The crate bundles everything needed to compare codecs on tile corpora
//! without external tooling: a reference transform codec, pixel and
//! feature-space quality metrics, a small convolutional feature extractor,
//! bitrate targeting, a timing harness, and report emission. External codecs
//! and pretrained extractors plug in through the subprocess protocol in
//! [`adapters`].

pub mod adapters;
pub mod bench;
pub mod codec;
pub mod error;
pub mod extractor;
pub mod imagecore;
pub mod metrics;
pub mod par;
pub mod ratecontrol;
pub mod refcodec;
pub mod rng;
pub mod runner;
pub mod synth;
pub mod tiling;

pub use codec::{Codec, QualityKind, QualityRange};
pub use error::{Error, Result};
pub use imagecore::{CompressedBlob, Plane, Tile};
pub use par::Exec;
