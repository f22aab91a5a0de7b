//! Raster types, binary PPM I/O, color transforms and bitrate accounting.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// An 8-bit RGB raster patch, row-major, three interleaved channels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tile {
    width: u32,
    height: u32,
    pixels: Vec<u8>,
    pub id: String,
}

impl Tile {
    pub fn new(width: u32, height: u32, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::domain(format!(
                "tile dimensions must be nonzero, got {width}x{height}"
            )));
        }
        let expected = width as usize * height as usize * 3;
        if pixels.len() != expected {
            return Err(Error::domain(format!(
                "pixel buffer holds {} bytes, {width}x{height} RGB needs {expected}",
                pixels.len()
            )));
        }
        Ok(Self {
            width,
            height,
            pixels,
            id: String::new(),
        })
    }

    pub fn filled(width: u32, height: u32, rgb: [u8; 3]) -> Result<Self> {
        let n = width as usize * height as usize;
        Self::new(width, height, rgb.repeat(n))
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = id.into();
        self
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<u8> {
        self.pixels
    }

    pub fn pixel(&self, x: u32, y: u32) -> [u8; 3] {
        let i = (y as usize * self.width as usize + x as usize) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    pub fn same_dims(&self, other: &Tile) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// Copies out the `w`×`h` window whose top-left corner is `(x, y)`.
    pub fn crop(&self, x: u32, y: u32, w: u32, h: u32) -> Result<Tile> {
        if w == 0 || h == 0 || x + w > self.width || y + h > self.height {
            return Err(Error::domain(format!(
                "crop {w}x{h}+{x}+{y} exceeds {}x{}",
                self.width, self.height
            )));
        }
        let mut out = Vec::with_capacity(w as usize * h as usize * 3);
        for row in y..y + h {
            let start = (row as usize * self.width as usize + x as usize) * 3;
            out.extend_from_slice(&self.pixels[start..start + w as usize * 3]);
        }
        Tile::new(w, h, out)
    }
}

/// A single-channel raster.
#[derive(Debug, Clone, PartialEq)]
pub struct Plane<T> {
    pub width: usize,
    pub height: usize,
    pub samples: Vec<T>,
}

impl<T: Copy> Plane<T> {
    pub fn new(width: usize, height: usize, samples: Vec<T>) -> Result<Self> {
        if samples.len() != width * height {
            return Err(Error::domain(format!(
                "plane buffer holds {} samples, {width}x{height} needs {}",
                samples.len(),
                width * height
            )));
        }
        Ok(Self {
            width,
            height,
            samples,
        })
    }

    pub fn filled(width: usize, height: usize, value: T) -> Self {
        Self {
            width,
            height,
            samples: vec![value; width * height],
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> T {
        self.samples[y * self.width + x]
    }

    pub fn map<U: Copy>(&self, mut f: impl FnMut(T) -> U) -> Plane<U> {
        Plane {
            width: self.width,
            height: self.height,
            samples: self.samples.iter().map(|&s| f(s)).collect(),
        }
    }
}

/// An encoded payload together with what is needed to account for its rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompressedBlob {
    pub bytes: Vec<u8>,
    pub codec_id: String,
    pub quality: f64,
    pub source_width: u32,
    pub source_height: u32,
}

impl CompressedBlob {
    pub fn bpp(&self) -> f64 {
        // Blobs always describe a nonempty source raster.
        bits_per_pixel(self.bytes.len(), self.source_width, self.source_height).unwrap_or(0.0)
    }
}

/// `8 · payload_len / (width · height)`.
pub fn bits_per_pixel(payload_len: usize, width: u32, height: u32) -> Result<f64> {
    let pixels = width as u64 * height as u64;
    if pixels == 0 {
        return Err(Error::domain("bits per pixel of an empty raster"));
    }
    Ok(8.0 * payload_len as f64 / pixels as f64)
}

fn is_pnm_space(b: u8) -> bool {
    matches!(b, b' ' | b'\t' | b'\n' | b'\r' | b'\x0b' | b'\x0c')
}

/// Parsed P6 header plus the offset where the raster starts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PnmHeader {
    pub width: u32,
    pub height: u32,
    pub data_offset: usize,
}

/// Parses the header of a binary PPM. Comments (`#` to end of line) are
/// accepted between tokens.
pub fn read_pnm_header(data: &[u8]) -> Result<PnmHeader> {
    if data.len() < 2 {
        return Err(Error::Parse {
            offset: 0,
            message: "truncated magic".into(),
        });
    }
    if &data[..2] != b"P6" {
        return Err(Error::Parse {
            offset: 0,
            message: format!(
                "unsupported magic {:?}",
                String::from_utf8_lossy(&data[..2])
            ),
        });
    }
    let mut pos = 2;
    let mut fields = [0u32; 3];
    for (i, field) in fields.iter_mut().enumerate() {
        let had_space = pos < data.len() && is_pnm_space(data[pos]);
        loop {
            while pos < data.len() && is_pnm_space(data[pos]) {
                pos += 1;
            }
            if pos < data.len() && data[pos] == b'#' {
                while pos < data.len() && data[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        if i == 0 && !had_space {
            return Err(Error::Parse {
                offset: pos,
                message: "expected whitespace after magic".into(),
            });
        }
        let start = pos;
        while pos < data.len() && data[pos].is_ascii_digit() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Parse {
                offset: pos,
                message: "expected decimal header field".into(),
            });
        }
        *field = std::str::from_utf8(&data[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or(Error::Parse {
                offset: start,
                message: "header field out of range".into(),
            })?;
    }
    if pos >= data.len() || !is_pnm_space(data[pos]) {
        return Err(Error::Parse {
            offset: pos,
            message: "expected single whitespace before raster".into(),
        });
    }
    let [width, height, maxval] = fields;
    if maxval != 255 {
        return Err(Error::Parse {
            offset: pos,
            message: format!("maxval {maxval} unsupported, only 255"),
        });
    }
    if width == 0 || height == 0 {
        return Err(Error::Parse {
            offset: pos,
            message: "zero image dimension".into(),
        });
    }
    Ok(PnmHeader {
        width,
        height,
        data_offset: pos + 1,
    })
}

pub fn read_pnm(data: &[u8]) -> Result<Tile> {
    let header = read_pnm_header(data)?;
    let need = header.width as usize * header.height as usize * 3;
    let avail = data.len() - header.data_offset;
    if avail < need {
        return Err(Error::Parse {
            offset: data.len(),
            message: format!("truncated raster: {avail} of {need} bytes"),
        });
    }
    Tile::new(
        header.width,
        header.height,
        data[header.data_offset..header.data_offset + need].to_vec(),
    )
}

pub fn write_pnm(tile: &Tile) -> Vec<u8> {
    let header = format!("P6\n{} {}\n255\n", tile.width, tile.height);
    let mut out = Vec::with_capacity(header.len() + tile.pixels.len());
    out.extend_from_slice(header.as_bytes());
    out.extend_from_slice(&tile.pixels);
    out
}

#[inline]
pub(crate) fn clamp_u8(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

/// BT.601 luma, rounded.
pub fn to_luma(tile: &Tile) -> Plane<u8> {
    let samples = tile
        .pixels
        .chunks_exact(3)
        .map(|p| clamp_u8(0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64))
        .collect();
    Plane {
        width: tile.width as usize,
        height: tile.height as usize,
        samples,
    }
}

#[inline]
pub fn rgb_to_ycbcr_pixel(r: u8, g: u8, b: u8) -> [u8; 3] {
    let (r, g, b) = (r as f64, g as f64, b as f64);
    [
        clamp_u8(0.299 * r + 0.587 * g + 0.114 * b),
        clamp_u8(128.0 - 0.168736 * r - 0.331264 * g + 0.5 * b),
        clamp_u8(128.0 + 0.5 * r - 0.418688 * g - 0.081312 * b),
    ]
}

#[inline]
pub fn ycbcr_to_rgb_pixel(y: u8, cb: u8, cr: u8) -> [u8; 3] {
    let (y, cb, cr) = (y as f64, cb as f64 - 128.0, cr as f64 - 128.0);
    [
        clamp_u8(y + 1.402 * cr),
        clamp_u8(y - 0.344136 * cb - 0.714136 * cr),
        clamp_u8(y + 1.772 * cb),
    ]
}

/// Full-range (JFIF) RGB to YCbCr.
pub fn rgb_to_ycbcr(tile: &Tile) -> [Plane<u8>; 3] {
    let n = tile.pixel_count();
    let mut planes = [
        Vec::with_capacity(n),
        Vec::with_capacity(n),
        Vec::with_capacity(n),
    ];
    for p in tile.pixels.chunks_exact(3) {
        let ycc = rgb_to_ycbcr_pixel(p[0], p[1], p[2]);
        for (plane, v) in planes.iter_mut().zip(ycc) {
            plane.push(v);
        }
    }
    let (w, h) = (tile.width as usize, tile.height as usize);
    planes.map(|samples| Plane {
        width: w,
        height: h,
        samples,
    })
}

pub fn ycbcr_to_rgb(planes: &[Plane<u8>; 3]) -> Result<Tile> {
    let [y, cb, cr] = planes;
    if cb.width != y.width || cb.height != y.height || cr.width != y.width || cr.height != y.height
    {
        return Err(Error::domain("YCbCr planes differ in size"));
    }
    let mut pixels = Vec::with_capacity(y.samples.len() * 3);
    for ((&l, &b), &r) in y.samples.iter().zip(&cb.samples).zip(&cr.samples) {
        pixels.extend_from_slice(&ycbcr_to_rgb_pixel(l, b, r));
    }
    Tile::new(y.width as u32, y.height as u32, pixels)
}
