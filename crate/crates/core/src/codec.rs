//! The codec abstraction shared by the reference codec and subprocess adapters.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::imagecore::{CompressedBlob, Tile};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QualityKind {
    Int,
    Float,
}

/// The span of a codec's quality knob. Higher quality means more bits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QualityRange {
    pub min: f64,
    pub max: f64,
    pub kind: QualityKind,
}

impl QualityRange {
    pub fn contains(&self, q: f64) -> bool {
        q >= self.min && q <= self.max
    }

    /// Snaps `q` onto the range, rounding for integer-kind codecs.
    pub fn normalize(&self, q: f64) -> f64 {
        let q = q.clamp(self.min, self.max);
        match self.kind {
            QualityKind::Int => q.round(),
            QualityKind::Float => q,
        }
    }
}

pub trait Codec: Send + Sync {
    fn id(&self) -> &str;

    fn quality_range(&self) -> QualityRange;

    fn encode(&self, tile: &Tile, quality: f64) -> Result<CompressedBlob>;

    fn decode(&self, blob: &CompressedBlob) -> Result<Tile>;

    /// Encodes then decodes, returning the reconstruction and the blob.
    fn round_trip(&self, tile: &Tile, quality: f64) -> Result<(Tile, CompressedBlob)> {
        let blob = self.encode(tile, quality)?;
        let decoded = self.decode(&blob)?;
        Ok((decoded, blob))
    }
}

impl<C: Codec + ?Sized> Codec for std::sync::Arc<C> {
    fn id(&self) -> &str {
        (**self).id()
    }

    fn quality_range(&self) -> QualityRange {
        (**self).quality_range()
    }

    fn encode(&self, tile: &Tile, quality: f64) -> Result<CompressedBlob> {
        (**self).encode(tile, quality)
    }

    fn decode(&self, blob: &CompressedBlob) -> Result<Tile> {
        (**self).decode(blob)
    }
}
