//! Orthonormal 8×8 DCT-II and its inverse.

use std::sync::OnceLock;

pub type Block = [f64; 64];

/// `basis[u][i] = c(u) · cos((2i + 1)uπ / 16)` with `c(0) = √(1/8)`, `c(u) = 1/2`.
fn basis() -> &'static [[f64; 8]; 8] {
    static BASIS: OnceLock<[[f64; 8]; 8]> = OnceLock::new();
    BASIS.get_or_init(|| {
        let mut m = [[0.0; 8]; 8];
        for (u, row) in m.iter_mut().enumerate() {
            let c = if u == 0 { (1.0f64 / 8.0).sqrt() } else { 0.5 };
            for (i, v) in row.iter_mut().enumerate() {
                *v = c * (((2 * i + 1) * u) as f64 * std::f64::consts::PI / 16.0).cos();
            }
        }
        m
    })
}

/// Forward transform of a row-major block. Coefficient `(u, v)` lands at
/// index `8u + v`, `u` being the vertical frequency.
pub fn dct2_8x8(block: &Block) -> Block {
    let m = basis();
    let mut tmp = [0.0; 64];
    // Rows: tmp[y][v] = Σ_x m[v][x] · block[y][x]
    for y in 0..8 {
        for v in 0..8 {
            let mut acc = 0.0;
            for x in 0..8 {
                acc += m[v][x] * block[8 * y + x];
            }
            tmp[8 * y + v] = acc;
        }
    }
    let mut out = [0.0; 64];
    for u in 0..8 {
        for v in 0..8 {
            let mut acc = 0.0;
            for y in 0..8 {
                acc += m[u][y] * tmp[8 * y + v];
            }
            out[8 * u + v] = acc;
        }
    }
    out
}

pub fn idct2_8x8(coeffs: &Block) -> Block {
    let m = basis();
    let mut tmp = [0.0; 64];
    // Columns first: tmp[y][v] = Σ_u m[u][y] · coeffs[u][v]
    for y in 0..8 {
        for v in 0..8 {
            let mut acc = 0.0;
            for u in 0..8 {
                acc += m[u][y] * coeffs[8 * u + v];
            }
            tmp[8 * y + v] = acc;
        }
    }
    let mut out = [0.0; 64];
    for y in 0..8 {
        for x in 0..8 {
            let mut acc = 0.0;
            for v in 0..8 {
                acc += m[v][x] * tmp[8 * y + v];
            }
            out[8 * y + x] = acc;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;

    fn random_block(rng: &mut SplitMix64) -> Block {
        let mut b = [0.0; 64];
        for v in b.iter_mut() {
            *v = rng.next_f64() * 255.0 - 128.0;
        }
        b
    }

    /// Direct quadruple-sum definition, independent of the separable path.
    fn naive_dct(block: &Block) -> Block {
        let pi = std::f64::consts::PI;
        let c = |k: usize| if k == 0 { (0.125f64).sqrt() } else { 0.5 };
        let mut out = [0.0; 64];
        for u in 0..8 {
            for v in 0..8 {
                let mut acc = 0.0;
                for y in 0..8 {
                    for x in 0..8 {
                        acc += block[8 * y + x]
                            * ((2 * y + 1) as f64 * u as f64 * pi / 16.0).cos()
                            * ((2 * x + 1) as f64 * v as f64 * pi / 16.0).cos();
                    }
                }
                out[8 * u + v] = c(u) * c(v) * acc;
            }
        }
        out
    }

    #[test]
    fn constant_block_has_only_dc() {
        let c = 37.5;
        let out = dct2_8x8(&[c; 64]);
        assert!((out[0] - 8.0 * c).abs() < 1e-10);
        for &ac in &out[1..] {
            assert!(ac.abs() < 1e-10);
        }
    }

    #[test]
    fn inverse_and_parseval() {
        let mut rng = SplitMix64::new(5);
        for _ in 0..200 {
            let b = random_block(&mut rng);
            let coeffs = dct2_8x8(&b);
            let back = idct2_8x8(&coeffs);
            for (a, r) in b.iter().zip(back.iter()) {
                assert!((a - r).abs() < 1e-10);
            }
            let e_in: f64 = b.iter().map(|v| v * v).sum();
            let e_out: f64 = coeffs.iter().map(|v| v * v).sum();
            assert!(
                (e_in - e_out).abs() < 1e-8 * e_in.max(1.0),
                "{e_in} vs {e_out}"
            );
        }
    }

    #[test]
    fn matches_direct_definition() {
        let mut rng = SplitMix64::new(6);
        let b = random_block(&mut rng);
        let fast = dct2_8x8(&b);
        let slow = naive_dct(&b);
        for (f, s) in fast.iter().zip(slow.iter()) {
            assert!((f - s).abs() < 1e-9);
        }
    }
}
