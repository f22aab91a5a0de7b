//! Reference lossy codec: YCbCr, optional 4:2:0 chroma, 8×8 DCT, flat
//! uniform quantization, zigzag, and canonical prefix coding.
//!
//! Container layout (little-endian):
//!
//! ```text
//! "PBC1"  u16 width  u16 height  u8 quality  u8 flags (bit0 = 4:2:0)
//! 3 × coded section (Y, Cb, Cr), see [`huffman`]
//! ```
//!
//! Before prefix coding each channel's zigzagged levels are tokenized: the DC
//! level becomes a difference from the previous block's DC, and zero runs in
//! the AC part collapse into run tokens with an end-of-block marker.

pub mod dct;
pub mod huffman;
pub mod quant;

use crate::codec::{Codec, QualityKind, QualityRange};
use crate::error::{Error, Result};
use crate::imagecore::{clamp_u8, rgb_to_ycbcr, ycbcr_to_rgb, CompressedBlob, Plane, Tile};

pub use dct::{dct2_8x8, idct2_8x8};
pub use huffman::{entropy_bound, entropy_decode, entropy_encode, entropy_encode_with_stats};
pub use quant::{dequantize, quantize, unzigzag, zigzag, QualityParam};

pub const MAGIC: &[u8; 4] = b"PBC1";
const FLAG_SUBSAMPLE: u8 = 1;
const CONTAINER_HEADER: usize = 10;

/// End-of-block token; `EOB + r` stands for a run of `r` zero AC levels.
const EOB: i32 = 4096;

/// Quantized levels of one channel in zigzag order, 64 per block.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SymbolStream {
    pub width: usize,
    pub height: usize,
    pub levels: Vec<i32>,
}

impl SymbolStream {
    pub fn blocks(&self) -> usize {
        self.levels.len() / 64
    }
}

fn ceil8(n: usize) -> usize {
    n.div_ceil(8) * 8
}

fn subsample_420(p: &Plane<u8>) -> Plane<u8> {
    let (w, h) = (p.width.div_ceil(2), p.height.div_ceil(2));
    let mut samples = Vec::with_capacity(w * h);
    for y in 0..h {
        let (y0, y1) = (2 * y, (2 * y + 1).min(p.height - 1));
        for x in 0..w {
            let (x0, x1) = (2 * x, (2 * x + 1).min(p.width - 1));
            let sum = p.get(x0, y0) as u32
                + p.get(x1, y0) as u32
                + p.get(x0, y1) as u32
                + p.get(x1, y1) as u32;
            samples.push(((sum + 2) / 4) as u8);
        }
    }
    Plane {
        width: w,
        height: h,
        samples,
    }
}

fn upsample_420(p: &Plane<u8>, width: usize, height: usize) -> Plane<u8> {
    let mut samples = Vec::with_capacity(width * height);
    for y in 0..height {
        for x in 0..width {
            samples.push(p.get(x / 2, y / 2));
        }
    }
    Plane {
        width,
        height,
        samples,
    }
}

/// Quantized zigzag levels for one plane, blocks in raster order with edge
/// replication past the right and bottom borders.
fn plane_levels(plane: &Plane<u8>, q: QualityParam) -> SymbolStream {
    let (bw, bh) = (ceil8(plane.width) / 8, ceil8(plane.height) / 8);
    let mut levels = Vec::with_capacity(bw * bh * 64);
    let mut block = [0.0; 64];
    for by in 0..bh {
        for bx in 0..bw {
            for y in 0..8 {
                let sy = (by * 8 + y).min(plane.height - 1);
                for x in 0..8 {
                    let sx = (bx * 8 + x).min(plane.width - 1);
                    block[8 * y + x] = plane.get(sx, sy) as f64 - 128.0;
                }
            }
            let coeffs = dct2_8x8(&block);
            levels.extend_from_slice(&zigzag(&quantize(&coeffs, q)));
        }
    }
    SymbolStream {
        width: plane.width,
        height: plane.height,
        levels,
    }
}

fn plane_from_levels(stream: &SymbolStream, q: QualityParam) -> Plane<u8> {
    let bw = ceil8(stream.width) / 8;
    let mut out = Plane::filled(stream.width, stream.height, 0u8);
    for (i, chunk) in stream.levels.chunks_exact(64).enumerate() {
        let (bx, by) = (i % bw, i / bw);
        let seq: [i32; 64] = chunk.try_into().unwrap();
        let pixels = idct2_8x8(&dequantize(&unzigzag(&seq), q));
        for y in 0..8 {
            let oy = by * 8 + y;
            if oy >= stream.height {
                break;
            }
            for x in 0..8 {
                let ox = bx * 8 + x;
                if ox >= stream.width {
                    break;
                }
                out.samples[oy * stream.width + ox] = clamp_u8(pixels[8 * y + x] + 128.0);
            }
        }
    }
    out
}

fn tokenize(levels: &[i32]) -> Result<Vec<i32>> {
    let mut tokens = Vec::with_capacity(levels.len() / 4);
    let mut prev_dc = 0;
    for block in levels.chunks_exact(64) {
        let dc_diff = block[0] - prev_dc;
        prev_dc = block[0];
        if dc_diff.abs() >= EOB {
            return Err(Error::domain(format!(
                "DC delta {dc_diff} exceeds the token range"
            )));
        }
        tokens.push(dc_diff);
        let mut run = 0;
        for &v in &block[1..] {
            if v == 0 {
                run += 1;
                continue;
            }
            if run > 0 {
                tokens.push(EOB + run);
                run = 0;
            }
            if v.abs() >= EOB {
                return Err(Error::domain(format!("level {v} exceeds the token range")));
            }
            tokens.push(v);
        }
        if run > 0 {
            tokens.push(EOB);
        }
    }
    Ok(tokens)
}

fn detokenize(tokens: &[i32], blocks: usize) -> Result<Vec<i32>> {
    let mut levels = Vec::with_capacity(blocks * 64);
    let mut it = tokens.iter().copied();
    let mut prev_dc = 0i32;
    for _ in 0..blocks {
        let dc_diff = it
            .next()
            .ok_or_else(|| Error::format("token stream ends inside a block"))?;
        if dc_diff.abs() >= EOB {
            return Err(Error::format("run token where a DC level was expected"));
        }
        prev_dc += dc_diff;
        levels.push(prev_dc);
        let mut filled = 1;
        while filled < 64 {
            let t = it
                .next()
                .ok_or_else(|| Error::format("token stream ends inside a block"))?;
            if t == EOB {
                levels.resize(levels.len() + 64 - filled, 0);
                filled = 64;
            } else if t > EOB {
                let run = (t - EOB) as usize;
                // A run is always followed by a nonzero level in this block.
                if filled + run >= 64 {
                    return Err(Error::format("zero run overflows the block"));
                }
                levels.resize(levels.len() + run, 0);
                filled += run;
            } else if t <= -EOB || t == 0 {
                return Err(Error::format(format!("invalid AC token {t}")));
            } else {
                levels.push(t);
                filled += 1;
            }
        }
    }
    if it.next().is_some() {
        return Err(Error::format("trailing tokens after the last block"));
    }
    Ok(levels)
}

fn channel_planes(tile: &Tile, subsample: bool) -> [Plane<u8>; 3] {
    let [y, cb, cr] = rgb_to_ycbcr(tile);
    if subsample {
        [y, subsample_420(&cb), subsample_420(&cr)]
    } else {
        [y, cb, cr]
    }
}

/// Quantized zigzag levels of each channel, the input to entropy coding.
pub fn symbol_streams(tile: &Tile, q: QualityParam, subsample: bool) -> [SymbolStream; 3] {
    channel_planes(tile, subsample).map(|p| plane_levels(&p, q))
}

/// Encodes a tile into the `PBC1` container.
pub fn encode(tile: &Tile, q: QualityParam, subsample: bool) -> Result<Vec<u8>> {
    let (w, h) = (
        u16::try_from(tile.width()).map_err(|_| Error::domain("tile wider than 65535"))?,
        u16::try_from(tile.height()).map_err(|_| Error::domain("tile taller than 65535"))?,
    );
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&w.to_le_bytes());
    out.extend_from_slice(&h.to_le_bytes());
    out.push(q.get());
    out.push(if subsample { FLAG_SUBSAMPLE } else { 0 });
    for stream in symbol_streams(tile, q, subsample) {
        out.extend_from_slice(&entropy_encode(&tokenize(&stream.levels)?)?);
    }
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<Tile> {
    if bytes.len() < CONTAINER_HEADER || &bytes[..4] != MAGIC {
        return Err(Error::format("not a PBC1 container"));
    }
    let width = u16::from_le_bytes([bytes[4], bytes[5]]) as usize;
    let height = u16::from_le_bytes([bytes[6], bytes[7]]) as usize;
    let q = QualityParam::new(bytes[8]).map_err(|e| e.context("container quality byte"))?;
    let flags = bytes[9];
    if flags & !FLAG_SUBSAMPLE != 0 {
        return Err(Error::format(format!("unknown flag bits {flags:#04x}")));
    }
    if width == 0 || height == 0 {
        return Err(Error::format("zero-sized container"));
    }
    let subsample = flags & FLAG_SUBSAMPLE != 0;
    let mut pos = CONTAINER_HEADER;
    let mut planes = Vec::with_capacity(3);
    for c in 0..3 {
        let (pw, ph) = if c > 0 && subsample {
            (width.div_ceil(2), height.div_ceil(2))
        } else {
            (width, height)
        };
        let blocks = (ceil8(pw) / 8) * (ceil8(ph) / 8);
        let (tokens, used) = huffman::entropy_decode_prefix(&bytes[pos..], blocks * 64)
            .map_err(|e| e.context(format!("channel {c}")))?;
        pos += used;
        let levels = detokenize(&tokens, blocks).map_err(|e| e.context(format!("channel {c}")))?;
        let stream = SymbolStream {
            width: pw,
            height: ph,
            levels,
        };
        let plane = plane_from_levels(&stream, q);
        planes.push(if pw != width {
            upsample_420(&plane, width, height)
        } else {
            plane
        });
    }
    if pos != bytes.len() {
        return Err(Error::format(format!(
            "{} trailing bytes after the last channel",
            bytes.len() - pos
        )));
    }
    let planes: [Plane<u8>; 3] = planes.try_into().unwrap();
    ycbcr_to_rgb(&planes)
}

/// The reference codec behind the [`Codec`] interface.
#[derive(Debug, Clone)]
pub struct RefCodec {
    id: String,
    subsample: bool,
}

impl RefCodec {
    pub fn new(subsample: bool) -> Self {
        let id = if subsample {
            "refcodec-420"
        } else {
            "refcodec"
        };
        Self {
            id: id.to_string(),
            subsample,
        }
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = id.into();
        self
    }

    pub fn subsample(&self) -> bool {
        self.subsample
    }
}

impl Default for RefCodec {
    fn default() -> Self {
        Self::new(false)
    }
}

impl Codec for RefCodec {
    fn id(&self) -> &str {
        &self.id
    }

    fn quality_range(&self) -> QualityRange {
        QualityRange {
            min: 1.0,
            max: 100.0,
            kind: QualityKind::Int,
        }
    }

    fn encode(&self, tile: &Tile, quality: f64) -> Result<CompressedBlob> {
        let q = QualityParam::from_f64(quality)?;
        Ok(CompressedBlob {
            bytes: encode(tile, q, self.subsample)?,
            codec_id: self.id.clone(),
            quality: q.get() as f64,
            source_width: tile.width(),
            source_height: tile.height(),
        })
    }

    fn decode(&self, blob: &CompressedBlob) -> Result<Tile> {
        let tile = decode(&blob.bytes)?;
        if tile.width() != blob.source_width || tile.height() != blob.source_height {
            return Err(Error::validation(format!(
                "decoded {}x{} but blob records {}x{}",
                tile.width(),
                tile.height(),
                blob.source_width,
                blob.source_height
            )));
        }
        Ok(tile)
    }
}
