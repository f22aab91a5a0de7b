//! Uniform quantization driven by the quality knob, and zigzag ordering.

use crate::error::{Error, Result};

/// Quality setting of the reference codec, an integer in `[1, 100]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct QualityParam(u8);

impl QualityParam {
    pub fn new(q: u8) -> Result<Self> {
        if (1..=100).contains(&q) {
            Ok(Self(q))
        } else {
            Err(Error::domain(format!("quality {q} outside [1, 100]")))
        }
    }

    pub fn from_f64(q: f64) -> Result<Self> {
        if !q.is_finite() || !(0.5..100.5).contains(&q) {
            return Err(Error::domain(format!("quality {q} outside [1, 100]")));
        }
        Self::new(q.round() as u8)
    }

    pub fn get(self) -> u8 {
        self.0
    }

    /// JPEG-style scale factor applied to the flat base step of 16.
    pub fn scale(self) -> f64 {
        let q = self.0 as f64;
        if self.0 < 50 {
            5000.0 / q
        } else {
            200.0 - 2.0 * q
        }
    }

    /// Quantizer step: `max(1, round(16 · S / 100))`.
    pub fn step(self) -> u32 {
        ((16.0 * self.scale() / 100.0).round() as u32).max(1)
    }
}

pub fn quantize(coeffs: &[f64; 64], q: QualityParam) -> [i32; 64] {
    let step = q.step() as f64;
    coeffs.map(|c| (c / step).round() as i32)
}

pub fn dequantize(levels: &[i32; 64], q: QualityParam) -> [f64; 64] {
    let step = q.step() as f64;
    levels.map(|l| l as f64 * step)
}

/// Row-major index visited at each zigzag position.
pub const ZIGZAG: [usize; 64] = [
    0, 1, 8, 16, 9, 2, 3, 10, 17, 24, 32, 25, 18, 11, 4, 5, 12, 19, 26, 33, 40, 48, 41, 34, 27, 20,
    13, 6, 7, 14, 21, 28, 35, 42, 49, 56, 57, 50, 43, 36, 29, 22, 15, 23, 30, 37, 44, 51, 58, 59,
    52, 45, 38, 31, 39, 46, 53, 60, 61, 54, 47, 55, 62, 63,
];

/// Coordinates are `(row, column)`; index `8 · row + column` in the block.
pub fn zigzag(block: &[i32; 64]) -> [i32; 64] {
    let mut out = [0; 64];
    for (pos, &idx) in ZIGZAG.iter().enumerate() {
        out[pos] = block[idx];
    }
    out
}

pub fn unzigzag(seq: &[i32; 64]) -> [i32; 64] {
    let mut out = [0; 64];
    for (pos, &idx) in ZIGZAG.iter().enumerate() {
        out[idx] = seq[pos];
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn q(v: u8) -> QualityParam {
        QualityParam::new(v).unwrap()
    }

    #[test]
    fn step_mapping() {
        assert_eq!(q(100).scale(), 0.0);
        assert_eq!(q(100).step(), 1);
        assert_eq!(q(50).scale(), 100.0);
        assert_eq!(q(50).step(), 16);
        assert_eq!(q(95).step(), 2);
        assert_eq!(q(80).step(), 6);
        assert_eq!(q(30).step(), 27);
        assert_eq!(q(10).step(), 80);
        assert_eq!(q(1).step(), 800);
    }

    #[test]
    fn steps_never_grow_with_quality() {
        for v in 1..100 {
            assert!(q(v).step() >= q(v + 1).step());
        }
    }

    #[test]
    fn quality_bounds() {
        assert!(QualityParam::new(0).is_err());
        assert!(QualityParam::new(101).is_err());
        assert_eq!(QualityParam::from_f64(79.6).unwrap().get(), 80);
        assert!(QualityParam::from_f64(f64::NAN).is_err());
    }

    #[test]
    fn q100_is_pure_rounding() {
        let mut c = [0.0; 64];
        c[0] = 12.4;
        c[1] = -3.6;
        c[63] = 0.5;
        let l = quantize(&c, q(100));
        assert_eq!((l[0], l[1], l[63]), (12, -4, 1));
    }

    #[test]
    fn zero_block_stays_zero() {
        for v in [1, 30, 50, 100] {
            assert_eq!(quantize(&[0.0; 64], q(v)), [0; 64]);
        }
    }

    #[test]
    fn zigzag_order() {
        let first: Vec<(usize, usize)> = ZIGZAG[..4].iter().map(|i| (i / 8, i % 8)).collect();
        assert_eq!(first, vec![(0, 0), (0, 1), (1, 0), (2, 0)]);
        let mut b = [0; 64];
        b[1] = 1;
        let z = zigzag(&b);
        assert_eq!(z.iter().position(|&v| v == 1), Some(1));
        let mut seen = [false; 64];
        for &i in &ZIGZAG {
            assert!(!seen[i]);
            seen[i] = true;
        }
    }

    #[test]
    fn zigzag_inverse() {
        let b: [i32; 64] = std::array::from_fn(|i| i as i32 * 7 - 100);
        assert_eq!(unzigzag(&zigzag(&b)), b);
    }
}
