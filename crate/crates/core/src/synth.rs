//! Seeded synthetic tiles with stain-like texture.
//!
//! Real corpora are external inputs; these tiles exist so that tests,
//! benchmarks and demo configs have natural-looking content to compress: a
//! pink stroma background with slow intensity drift, dark purple nuclei with
//! soft borders, and sensor noise.

use crate::imagecore::Tile;
use crate::rng::SplitMix64;

const STROMA: [f64; 3] = [232.0, 170.0, 198.0];
const NUCLEUS: [f64; 3] = [96.0, 58.0, 138.0];
const LUMEN: [f64; 3] = [246.0, 242.0, 244.0];

struct Wave {
    fx: f64,
    fy: f64,
    phase: f64,
    amp: [f64; 3],
}

/// Generates a `width`×`height` tile. Same arguments, same pixels.
pub fn tile(seed: u64, width: u32, height: u32) -> Tile {
    let mut rng = SplitMix64::new(seed ^ 0x5E_ED0F_711E);
    let (w, h) = (width as usize, height as usize);
    let waves: Vec<Wave> = (0..4)
        .map(|_| {
            let angle = rng.next_f64() * std::f64::consts::TAU;
            let freq = 0.02 + 0.08 * rng.next_f64();
            let a = 6.0 + 10.0 * rng.next_f64();
            Wave {
                fx: freq * angle.cos(),
                fy: freq * angle.sin(),
                phase: rng.next_f64() * std::f64::consts::TAU,
                amp: [a, a * 1.3, a * 0.8],
            }
        })
        .collect();

    let mut img = vec![[0.0f64; 3]; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut px = STROMA;
            for wave in &waves {
                let s = (wave.fx * x as f64 + wave.fy * y as f64 + wave.phase).sin();
                for (p, a) in px.iter_mut().zip(wave.amp) {
                    *p += a * s;
                }
            }
            img[y * w + x] = px;
        }
    }

    // Occasional lumen / background region with a soft edge.
    if rng.next_f64() < 0.3 {
        let cx = rng.next_f64() * w as f64;
        let cy = rng.next_f64() * h as f64;
        let r = (0.15 + 0.25 * rng.next_f64()) * w.min(h) as f64;
        for y in 0..h {
            for x in 0..w {
                let d = ((x as f64 - cx).powi(2) + (y as f64 - cy).powi(2)).sqrt();
                let t = ((r - d) / 4.0).clamp(0.0, 1.0);
                let px = &mut img[y * w + x];
                for c in 0..3 {
                    px[c] = px[c] * (1.0 - t) + LUMEN[c] * t;
                }
            }
        }
    }

    let area = (w * h) as f64;
    let nuclei = (area / 900.0 * (0.5 + rng.next_f64())).round() as usize;
    for _ in 0..nuclei {
        let cx = rng.next_f64() * w as f64;
        let cy = rng.next_f64() * h as f64;
        let rx = 2.5 + 5.0 * rng.next_f64();
        let ry = rx * (0.6 + 0.6 * rng.next_f64());
        let theta = rng.next_f64() * std::f64::consts::PI;
        let darkness = 0.7 + 0.3 * rng.next_f64();
        let (ct, st) = (theta.cos(), theta.sin());
        let reach = rx.max(ry) + 2.0;
        let x0 = (cx - reach).floor().max(0.0) as usize;
        let x1 = ((cx + reach).ceil() as usize).min(w);
        let y0 = (cy - reach).floor().max(0.0) as usize;
        let y1 = ((cy + reach).ceil() as usize).min(h);
        for y in y0..y1 {
            for x in x0..x1 {
                let dx = x as f64 - cx;
                let dy = y as f64 - cy;
                let u = (dx * ct + dy * st) / rx;
                let v = (-dx * st + dy * ct) / ry;
                let r = (u * u + v * v).sqrt();
                let t = ((1.0 - r) * 3.0).clamp(0.0, 1.0) * darkness;
                if t > 0.0 {
                    let px = &mut img[y * w + x];
                    for c in 0..3 {
                        px[c] = px[c] * (1.0 - t) + NUCLEUS[c] * t;
                    }
                }
            }
        }
    }

    let sigma = 2.0 + 3.0 * rng.next_f64();
    let mut pixels = Vec::with_capacity(w * h * 3);
    for px in &img {
        let shared = rng.next_gaussian() * sigma;
        for &v in px {
            let n = shared + 0.5 * sigma * rng.next_gaussian();
            pixels.push((v + n).round().clamp(0.0, 255.0) as u8);
        }
    }
    Tile::new(width, height, pixels)
        .expect("dimensions are consistent")
        .with_id(format!("synth-{seed}"))
}

/// `count` square tiles derived from `seed`, with ids `synth-<seed>-<i>`.
pub fn corpus(seed: u64, count: usize, size: u32) -> Vec<Tile> {
    (0..count)
        .map(|i| {
            let s = seed
                .wrapping_mul(SplitMix64::GOLDEN_GAMMA)
                .wrapping_add(i as u64);
            tile(s, size, size).with_id(format!("synth-{seed}-{i}"))
        })
        .collect()
}

/// Uniform random pixels, the worst case for any codec.
pub fn noise_tile(seed: u64, width: u32, height: u32) -> Tile {
    let mut rng = SplitMix64::new(seed);
    let pixels = (0..width as usize * height as usize * 3)
        .map(|_| rng.next_u64() as u8)
        .collect();
    Tile::new(width, height, pixels)
        .expect("dimensions are consistent")
        .with_id(format!("noise-{seed}"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_seed_dependent() {
        assert_eq!(tile(5, 40, 30), tile(5, 40, 30));
        assert_ne!(tile(5, 40, 30).pixels(), tile(6, 40, 30).pixels());
    }

    #[test]
    fn corpus_ids_are_distinct() {
        let c = corpus(1, 4, 32);
        assert_eq!(c.len(), 4);
        assert_eq!(c[2].id, "synth-1-2");
        assert_ne!(c[0].pixels(), c[1].pixels());
    }
}
