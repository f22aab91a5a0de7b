//! Acceptance checks, one PASS/FAIL line per criterion.
//!
//! Runs as a plain binary (`harness = false`) so the report prints even when
//! test output is captured. Exits non-zero if any criterion fails.

mod common;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::{Duration, Instant};

use slidebench::adapters::{conformance_check, CheckStatus};
use slidebench::bench::{time_decode, time_encode, TimingOptions};
use slidebench::extractor::{Extractor, FeatureExtractor, TAP_IDS};
use slidebench::imagecore::CompressedBlob;
use slidebench::metrics::{
    cosine_similarity, distance_from_features, ms_ssim, profile_from_features, psnr, FeatureVector,
    MS_SSIM_WEIGHTS,
};
use slidebench::ratecontrol::{mean_bpp, target_bpp, TargetOptions};
use slidebench::refcodec::{self, huffman, quant::QualityParam, RefCodec};
use slidebench::rng::SplitMix64;
use slidebench::runner::{emit_reports, load_config, run_experiment};
use slidebench::{synth, Codec, Exec, QualityKind, QualityRange, Tile};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within_time(start: Instant, limit: Duration) -> Result<(), String> {
    let t = start.elapsed();
    ensure(t < limit, || format!("took {t:.1?}, limit {limit:?}"))
}

fn random_tiles(seed: u64, n: usize, side: u32) -> Vec<Tile> {
    (0..n as u64)
        .map(|i| synth::noise_tile(seed.wrapping_add(i), side, side))
        .collect()
}

/// The 50-tile corpus shared by the corpus-level criteria.
fn he_corpus() -> Vec<Tile> {
    synth::corpus(2024, 50, 224)
}

fn metric_identity() -> Outcome {
    let start = Instant::now();
    let x = Extractor::seeded(1);
    let tiles = random_tiles(100, 100, 224);
    let mut worst_ms = 1.0f64;
    let mut worst_cos = 0.0f64;
    let mut worst_dist = 0.0f64;
    for t in &tiles {
        let p = psnr(t, t).map_err(|e| e.to_string())?;
        ensure(p == f64::INFINITY, || {
            format!("PSNR(x,x) = {p} on {}", t.id)
        })?;
        let m = ms_ssim(t, t).map_err(|e| e.to_string())?;
        ensure((1.0 - 1e-9..=1.0).contains(&m), || {
            format!("MS-SSIM(x,x) = {m}")
        })?;
        worst_ms = worst_ms.min(m);
        let a = x.extract(t).map_err(|e| e.to_string())?;
        let b = x.extract(t).map_err(|e| e.to_string())?;
        let profile = profile_from_features(&a, &b).map_err(|e| e.to_string())?;
        ensure(profile.len() == TAP_IDS.len(), || "tap count".into())?;
        for (tap, c) in &profile {
            ensure((c - 1.0).abs() <= 1e-9, || format!("cosine {c} at {tap}"))?;
            worst_cos = worst_cos.max((c - 1.0).abs());
        }
        let d = distance_from_features(&a, &b).map_err(|e| e.to_string())?;
        ensure(d <= 1e-9, || format!("deep distance {d}"))?;
        worst_dist = worst_dist.max(d);
    }
    within_time(start, Duration::from_secs(60))?;
    Ok(format!(
        "100 tiles; min MS-SSIM {worst_ms}, max |cos-1| {worst_cos:.1e}, max distance {worst_dist:.1e}, {:.1?}",
        start.elapsed()
    ))
}

fn cosine_hand_oracle() -> Outcome {
    let fv = |v: &[f32]| FeatureVector::new("t", v.to_vec()).unwrap();
    let s = cosine_similarity(&fv(&[1.0, 2.0, 2.0]), &fv(&[2.0, 1.0, 2.0]))
        .map_err(|e| e.to_string())?;
    ensure((s - 8.0 / 9.0).abs() <= 1e-12, || format!("got {s}"))?;
    let mut rng = SplitMix64::new(77);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        // Integer-valued inputs and scalars keep the scaled vectors exact in f32.
        let x: Vec<f32> = (0..32).map(|_| rng.below(201) as f32 - 100.0).collect();
        let y: Vec<f32> = (0..32).map(|_| rng.below(201) as f32 - 100.0).collect();
        if x.iter().all(|v| *v == 0.0) || y.iter().all(|v| *v == 0.0) {
            continue;
        }
        let base = cosine_similarity(&fv(&x), &fv(&y)).unwrap();
        let (a, b) = (1 + rng.below(1000), 1 + rng.below(1000));
        let xs: Vec<f32> = x.iter().map(|v| v * a as f32).collect();
        let ys: Vec<f32> = y.iter().map(|v| v * b as f32).collect();
        let scaled = cosine_similarity(&fv(&xs), &fv(&ys)).unwrap();
        worst = worst.max((scaled - base).abs());
    }
    ensure(worst <= 1e-9, || format!("scale drift {worst:.2e}"))?;
    let zero = cosine_similarity(&fv(&[0.0, 0.0, 0.0]), &fv(&[1.0, 2.0, 3.0]));
    ensure(matches!(zero, Err(slidebench::Error::Domain(_))), || {
        format!("zero vector gave {zero:?}")
    })?;
    Ok(format!(
        "8/9 exact to 1e-12; scale drift {worst:.1e}; zero vector rejected"
    ))
}

/// Direct MS-SSIM: per-pixel 2-D window sums, no separable filtering and no
/// shared code with the toolkit beyond the published constants.
mod oracle {
    use super::*;

    pub fn luma(t: &Tile) -> Vec<f64> {
        t.pixels()
            .chunks_exact(3)
            .map(|p| {
                let y = 0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64;
                y.round().clamp(0.0, 255.0)
            })
            .collect()
    }

    fn window() -> Vec<f64> {
        let mut w = vec![0.0; 121];
        for i in 0..11 {
            for j in 0..11 {
                let (di, dj) = (i as f64 - 5.0, j as f64 - 5.0);
                w[i * 11 + j] = (-(di * di + dj * dj) / (2.0 * 1.5 * 1.5)).exp();
            }
        }
        let s: f64 = w.iter().sum();
        w.iter().map(|v| v / s).collect()
    }

    fn ssim_cs(a: &[f64], b: &[f64], w: usize, h: usize) -> (f64, f64) {
        let g = window();
        let c1 = (0.01f64 * 255.0).powi(2);
        let c2 = (0.03f64 * 255.0).powi(2);
        let (mut ssim, mut cs, mut n) = (0.0, 0.0, 0.0);
        for y in 0..=h - 11 {
            for x in 0..=w - 11 {
                let (mut ma, mut mb, mut aa, mut bb, mut ab) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for i in 0..11 {
                    for j in 0..11 {
                        let k = g[i * 11 + j];
                        let p = a[(y + i) * w + x + j];
                        let q = b[(y + i) * w + x + j];
                        ma += k * p;
                        mb += k * q;
                        aa += k * p * p;
                        bb += k * q * q;
                        ab += k * p * q;
                    }
                }
                let (va, vb, cov) = (aa - ma * ma, bb - mb * mb, ab - ma * mb);
                let c = (2.0 * cov + c2) / (va + vb + c2);
                let l = (2.0 * ma * mb + c1) / (ma * ma + mb * mb + c1);
                ssim += l * c;
                cs += c;
                n += 1.0;
            }
        }
        (ssim / n, cs / n)
    }

    fn halve(a: &[f64], w: usize, h: usize) -> (Vec<f64>, usize, usize) {
        let (nw, nh) = (w / 2, h / 2);
        let mut out = Vec::with_capacity(nw * nh);
        for y in 0..nh {
            for x in 0..nw {
                let s = a[2 * y * w + 2 * x]
                    + a[2 * y * w + 2 * x + 1]
                    + a[(2 * y + 1) * w + 2 * x]
                    + a[(2 * y + 1) * w + 2 * x + 1];
                out.push(s / 4.0);
            }
        }
        (out, nw, nh)
    }

    pub fn ms_ssim(x: &Tile, y: &Tile) -> f64 {
        let (mut a, mut b) = (luma(x), luma(y));
        let (mut w, mut h) = (x.width() as usize, x.height() as usize);
        let mut out = 1.0;
        for (s, wt) in MS_SSIM_WEIGHTS.iter().enumerate() {
            let (ssim, cs) = ssim_cs(&a, &b, w, h);
            let term = if s == MS_SSIM_WEIGHTS.len() - 1 {
                ssim
            } else {
                cs
            };
            out *= term.max(0.0).powf(*wt);
            let (na, nw, nh) = halve(&a, w, h);
            let (nb, _, _) = halve(&b, w, h);
            (a, b, w, h) = (na, nb, nw, nh);
        }
        out
    }
}

fn ms_ssim_oracle() -> Outcome {
    let start = Instant::now();
    let mut worst = 0.0f64;
    let mut rng = SplitMix64::new(4242);
    for i in 0..10u64 {
        let x = synth::tile(500 + i, 224, 224);
        // Distort with seeded noise of varying strength.
        let sigma = 2.0 + 6.0 * i as f64;
        let px: Vec<u8> = x
            .pixels()
            .iter()
            .map(|&v| {
                (v as f64 + sigma * rng.next_gaussian())
                    .round()
                    .clamp(0.0, 255.0) as u8
            })
            .collect();
        let y = Tile::new(224, 224, px).unwrap();
        let got = ms_ssim(&x, &y).map_err(|e| e.to_string())?;
        let want = oracle::ms_ssim(&x, &y);
        worst = worst.max((got - want).abs());
        ensure((got - want).abs() <= 1e-6, || {
            format!("pair {i}: toolkit {got}, oracle {want}")
        })?;
    }
    within_time(start, Duration::from_secs(120))?;
    Ok(format!(
        "10 pairs; max |diff| {worst:.1e}, {:.1?}",
        start.elapsed()
    ))
}

fn reference_codec() -> Outcome {
    let mut rng = SplitMix64::new(99);
    let mut worst_slack = f64::INFINITY;
    for k in 0..1000 {
        let n = 1 + rng.below(3000) as usize;
        let alphabet = 1 + rng.below(if k % 10 == 0 { 1 } else { 300 }) as i64;
        // Skewed draws: squaring a uniform favours small symbols.
        let symbols: Vec<i32> = (0..n)
            .map(|_| {
                let u = rng.next_f64();
                ((u * u * alphabet as f64) as i64 - alphabet / 2) as i32
            })
            .collect();
        let (bytes, stats) =
            huffman::entropy_encode_with_stats(&symbols).map_err(|e| e.to_string())?;
        let back = huffman::entropy_decode(&bytes).map_err(|e| e.to_string())?;
        ensure(back == symbols, || {
            format!("stream {k}: round trip differs")
        })?;

        let mut counts = std::collections::HashMap::new();
        for s in &symbols {
            *counts.entry(*s).or_insert(0usize) += 1;
        }
        let h: f64 = counts
            .values()
            .map(|&c| {
                let p = c as f64 / n as f64;
                -p * p.log2()
            })
            .sum();
        let per_symbol = stats.code_bits as f64 / n as f64;
        let upper = h + 1.0 + stats.header_bits as f64 / n as f64;
        ensure(per_symbol >= h - 1e-9, || {
            format!("stream {k}: {per_symbol} below entropy {h}")
        })?;
        let total = stats.total_bits() as f64 / n as f64;
        ensure(total <= upper + 1e-9, || {
            format!("stream {k}: {total} above bound {upper}")
        })?;
        ensure(bytes.len() as u64 * 8 == stats.total_bits(), || {
            format!("stream {k}: bit accounting")
        })?;
        worst_slack = worst_slack.min(upper - total);
    }

    let mut tiles = synth::corpus(31, 20, 64);
    tiles.extend(random_tiles(900, 5, 64));
    let mut worst = Vec::new();
    for q in [50u8, 80, 95] {
        let qp = QualityParam::new(q).unwrap();
        let bound = 8.0 * qp.step() as f64 / 2.0 + 2.0;
        let mut max_err = 0u8;
        for t in &tiles {
            let bytes = refcodec::encode(t, qp, false).map_err(|e| e.to_string())?;
            let again = refcodec::encode(t, qp, false).map_err(|e| e.to_string())?;
            ensure(bytes == again, || {
                format!("q{q}: encoding not byte-deterministic")
            })?;
            let d = refcodec::decode(&bytes).map_err(|e| e.to_string())?;
            let e = t
                .pixels()
                .iter()
                .zip(d.pixels())
                .map(|(a, b)| a.abs_diff(*b))
                .max()
                .unwrap();
            max_err = max_err.max(e);
        }
        ensure(max_err as f64 <= bound, || {
            format!("q{q}: max error {max_err} > {bound}")
        })?;
        worst.push(format!("q{q} err {max_err}/{bound}"));
    }
    Ok(format!(
        "1000 streams round-trip, min bound slack {worst_slack:.3} bit; {}",
        worst.join(", ")
    ))
}

fn monotonicity() -> Outcome {
    let start = Instant::now();
    let tiles = he_corpus();
    let codec = RefCodec::default();
    let mut rows = Vec::new();
    for q in 10..=100 {
        let (mut bpp, mut p) = (0.0, 0.0);
        for t in &tiles {
            let (d, blob) = codec.round_trip(t, q as f64).map_err(|e| e.to_string())?;
            bpp += blob.bpp();
            p += psnr(t, &d).map_err(|e| e.to_string())?.min(100.0);
        }
        rows.push((q, bpp / 50.0, p / 50.0));
    }
    for w in rows.windows(2) {
        ensure(w[1].1 >= w[0].1, || {
            format!("bpp falls from q{} to q{}", w[0].0, w[1].0)
        })?;
        ensure(w[1].2 >= w[0].2, || {
            format!("PSNR falls from q{} to q{}", w[0].0, w[1].0)
        })?;
    }
    within_time(start, Duration::from_secs(300))?;
    Ok(format!(
        "{} qualities; bpp {:.3}..{:.3}, PSNR {:.2}..{:.2} dB, {:.1?}",
        rows.len(),
        rows[0].1,
        rows[rows.len() - 1].1,
        rows[0].2,
        rows[rows.len() - 1].2,
        start.elapsed()
    ))
}

struct Linear;

impl Codec for Linear {
    fn id(&self) -> &str {
        "linear"
    }

    fn quality_range(&self) -> QualityRange {
        QualityRange {
            min: 1.0,
            max: 100.0,
            kind: QualityKind::Int,
        }
    }

    fn encode(&self, tile: &Tile, quality: f64) -> slidebench::Result<CompressedBlob> {
        // bpp = q / 100 exactly for tiles whose pixel count is a multiple of 800.
        let bytes = (quality / 100.0 * tile.pixel_count() as f64 / 8.0).round() as usize;
        Ok(CompressedBlob {
            bytes: vec![0; bytes],
            codec_id: "linear".into(),
            quality,
            source_width: tile.width(),
            source_height: tile.height(),
        })
    }

    fn decode(&self, blob: &CompressedBlob) -> slidebench::Result<Tile> {
        Tile::filled(blob.source_width, blob.source_height, [0; 3])
    }
}

fn rate_targeting() -> Outcome {
    let tiles = he_corpus();
    let codec = RefCodec::default();
    let opts = TargetOptions::default();
    let lo = mean_bpp(&codec, &tiles, 1.0, Exec::default()).map_err(|e| e.to_string())?;
    let hi = mean_bpp(&codec, &tiles, 100.0, Exec::default()).map_err(|e| e.to_string())?;
    let mut notes = Vec::new();
    for target in [0.25, 0.5, 1.0, 1.75] {
        let r = target_bpp(&codec, &tiles, target, &opts, Exec::default())
            .map_err(|e| e.to_string())?;
        let achieved =
            mean_bpp(&codec, &tiles, r.quality, Exec::default()).map_err(|e| e.to_string())?;
        ensure((achieved - r.achieved_bpp).abs() < 1e-12, || {
            "reported bpp differs from re-measured".into()
        })?;
        let outside = target < lo || target > hi;
        ensure(r.target_unreachable == outside, || {
            format!(
                "{target}: unreachable flag {} but span is [{lo}, {hi}]",
                r.target_unreachable
            )
        })?;
        if !outside {
            ensure((achieved - target).abs() <= 0.05 * target, || {
                format!("{target}: achieved {achieved} at q{}", r.quality)
            })?;
        }
        notes.push(format!("{target}->{achieved:.3}@q{}", r.quality));
    }
    let one = vec![Tile::filled(80, 80, [9, 9, 9]).unwrap()];
    let r = target_bpp(
        &Linear,
        &one,
        0.5,
        &TargetOptions {
            tol: 0.01,
            max_iter: 20,
        },
        Exec::Sequential,
    )
    .map_err(|e| e.to_string())?;
    ensure(r.quality == 50.0, || {
        format!("linear codec settled at q{}", r.quality)
    })?;
    Ok(format!("{}; linear codec q{}", notes.join(" "), r.quality))
}

fn degradation_ordering() -> Outcome {
    let start = Instant::now();
    let tiles = he_corpus();
    let codec = RefCodec::default();
    let x = Extractor::seeded(7);
    let n = tiles.len() as f64;
    struct Sums {
        psnr: f64,
        ms: f64,
        dist: f64,
        cos: Vec<f64>,
    }
    let mut sums: Vec<Sums> = (0..2)
        .map(|_| Sums {
            psnr: 0.0,
            ms: 0.0,
            dist: 0.0,
            cos: vec![0.0; TAP_IDS.len()],
        })
        .collect();
    for t in &tiles {
        let f0 = x.extract(t).map_err(|e| e.to_string())?;
        for (k, q) in [95.0, 30.0].into_iter().enumerate() {
            let (d, _) = codec.round_trip(t, q).map_err(|e| e.to_string())?;
            let f = x.extract(&d).map_err(|e| e.to_string())?;
            let s = &mut sums[k];
            s.psnr += psnr(t, &d).map_err(|e| e.to_string())?.min(100.0) / n;
            s.ms += ms_ssim(t, &d).map_err(|e| e.to_string())? / n;
            s.dist += distance_from_features(&f0, &f).map_err(|e| e.to_string())? / n;
            for (i, (_, c)) in profile_from_features(&f0, &f)
                .map_err(|e| e.to_string())?
                .iter()
                .enumerate()
            {
                s.cos[i] += c / n;
            }
        }
    }
    let (hq, lq) = (&sums[0], &sums[1]);
    ensure(hq.psnr > lq.psnr, || {
        format!("PSNR {} vs {}", hq.psnr, lq.psnr)
    })?;
    ensure(hq.ms > lq.ms, || format!("MS-SSIM {} vs {}", hq.ms, lq.ms))?;
    ensure(hq.dist < lq.dist, || {
        format!("distance {} vs {}", hq.dist, lq.dist)
    })?;
    for (i, tap) in TAP_IDS.iter().enumerate() {
        ensure(hq.cos[i] > lq.cos[i], || {
            format!("{tap}: cosine {} vs {}", hq.cos[i], lq.cos[i])
        })?;
    }
    Ok(format!(
        "q95 vs q30: PSNR {:.2}/{:.2}, MS-SSIM {:.4}/{:.4}, distance {:.2e}/{:.2e}, all 6 taps ordered, {:.1?}",
        hq.psnr,
        lq.psnr,
        hq.ms,
        lq.ms,
        hq.dist,
        lq.dist,
        start.elapsed()
    ))
}

fn generation_loss() -> Outcome {
    let tiles = he_corpus();
    let codec = RefCodec::default();
    let (mut once, mut twice) = (0.0, 0.0);
    for t in &tiles {
        let (d1, _) = codec.round_trip(t, 80.0).map_err(|e| e.to_string())?;
        let (d2, _) = codec.round_trip(&d1, 80.0).map_err(|e| e.to_string())?;
        once += psnr(t, &d1).map_err(|e| e.to_string())?.min(100.0) / 50.0;
        twice += psnr(t, &d2).map_err(|e| e.to_string())?.min(100.0) / 50.0;
    }
    ensure(twice <= once, || {
        format!("two passes {twice} > one pass {once}")
    })?;
    Ok(format!(
        "mean PSNR one pass {once:.3} dB, two passes {twice:.3} dB"
    ))
}

fn end_to_end_determinism() -> Outcome {
    let dir = common::tempdir();
    let text = r#"
seed = 11
[corpus]
synthetic = { count = 3, size = 224, seed = 5 }
[[codecs]]
name = "ref"
kind = "refcodec"
[[codecs]]
name = "ref420"
kind = "refcodec"
subsample = true
[targets]
bpp = [0.5, 1.0]
[metrics]
psnr = true
ms_ssim = true
cosine = true
deep_distance = true
[extractor]
kind = "seeded"
seed = 3
"#;
    let plan = load_config(text, dir.path()).map_err(|e| e.to_string())?;
    let mut outputs = Vec::new();
    for run in ["a", "b"] {
        let bundle = run_experiment(&plan).map_err(|e| e.to_string())?;
        ensure(!bundle.is_partial(), || format!("{:?}", bundle.failures))?;
        let out = dir.path().join(run);
        emit_reports(&bundle, &out, false).map_err(|e| e.to_string())?;
        outputs.push(std::fs::read(out.join("rd_points.csv")).map_err(|e| e.to_string())?);
    }
    ensure(outputs[0] == outputs[1], || {
        "rd_points.csv differs between runs".into()
    })?;
    let rows = outputs[0].iter().filter(|&&b| b == b'\n').count() - 1;
    Ok(format!("{rows} rows, {} bytes identical", outputs[0].len()))
}

/// Counts calls and sleeps through the first `slow_calls` of them.
struct Instrumented {
    inner: RefCodec,
    encodes: AtomicUsize,
    decodes: AtomicUsize,
    slow_calls: usize,
    delay: Duration,
}

impl Codec for Instrumented {
    fn id(&self) -> &str {
        "instrumented"
    }

    fn quality_range(&self) -> QualityRange {
        self.inner.quality_range()
    }

    fn encode(&self, tile: &Tile, quality: f64) -> slidebench::Result<CompressedBlob> {
        if self.encodes.fetch_add(1, Ordering::SeqCst) < self.slow_calls {
            std::thread::sleep(self.delay);
        }
        self.inner.encode(tile, quality)
    }

    fn decode(&self, blob: &CompressedBlob) -> slidebench::Result<Tile> {
        if self.decodes.fetch_add(1, Ordering::SeqCst) < self.slow_calls {
            std::thread::sleep(self.delay);
        }
        self.inner.decode(blob)
    }
}

fn timing_harness() -> Outcome {
    let tiles = synth::corpus(8, 4, 64);
    let n = tiles.len();
    let opts = TimingOptions { warmup: 2, reps: 3 };
    let delay = Duration::from_millis(100);
    // Only the warmup passes are slow, so any leak into the measured time
    // shows up as at least 100 ms per slow call.
    let codec = Instrumented {
        inner: RefCodec::default(),
        encodes: AtomicUsize::new(0),
        decodes: AtomicUsize::new(0),
        slow_calls: opts.warmup * n,
        delay,
    };
    let (enc, blobs) = time_encode(&codec, &tiles, 80.0, &opts).map_err(|e| e.to_string())?;
    let dec = time_decode(&codec, &blobs, &opts).map_err(|e| e.to_string())?;
    ensure(
        codec.encodes.load(Ordering::SeqCst) == (opts.warmup + opts.reps) * n,
        || format!("{} encodes", codec.encodes.load(Ordering::SeqCst)),
    )?;
    ensure(
        codec.decodes.load(Ordering::SeqCst) == (opts.warmup + opts.reps) * n,
        || format!("{} decodes", codec.decodes.load(Ordering::SeqCst)),
    )?;
    for r in [&enc, &dec] {
        ensure(r.per_rep_seconds.len() == opts.reps, || {
            "per-rep length".into()
        })?;
        let sum: f64 = r.per_rep_seconds.iter().sum();
        ensure(
            (sum - r.total_seconds).abs() <= 1e-9 * r.total_seconds,
            || "total != sum of reps".into(),
        )?;
        let expect = (n * opts.reps) as f64 / r.total_seconds;
        ensure((r.tiles_per_second - expect).abs() <= 1e-9 * expect, || {
            format!("tiles/s {} vs {expect}", r.tiles_per_second)
        })?;
        ensure(r.total_seconds < delay.as_secs_f64(), || {
            format!(
                "{:?} measured {}s, warmup leaked in",
                r.phase, r.total_seconds
            )
        })?;
    }
    Ok(format!(
        "encode {:.1} tiles/s, decode {:.1} tiles/s; {} warmup calls each excluded",
        enc.tiles_per_second,
        dec.tiles_per_second,
        opts.warmup * n
    ))
}

fn adapter_fixtures() -> Outcome {
    let dir = common::tempdir();
    let identity = conformance_check(&common::identity_codec(dir.path()));
    ensure(identity.passed(), || identity.to_string())?;
    let broken = conformance_check(&common::broken_decoder(dir.path()));
    let failed: Vec<&str> = broken
        .checks
        .iter()
        .filter(|c| c.status == CheckStatus::Fail)
        .map(|c| c.name.as_str())
        .collect();
    ensure(failed == ["roundtrip"], || {
        format!("broken decoder failed {failed:?}")
    })?;
    Ok("identity passes; broken decoder fails only roundtrip".into())
}

fn main() {
    let criteria: [Criterion; 11] = [
        ("metric identity", metric_identity),
        ("cosine hand oracle", cosine_hand_oracle),
        ("MS-SSIM oracle equivalence", ms_ssim_oracle),
        ("reference codec", reference_codec),
        ("rate/quality monotonicity", monotonicity),
        ("rate targeting", rate_targeting),
        ("degradation ordering", degradation_ordering),
        ("recompression generation loss", generation_loss),
        ("end-to-end determinism", end_to_end_determinism),
        ("timing harness", timing_harness),
        ("adapter protocol fixtures", adapter_fixtures),
    ];
    let mut failures = 0;
    for (name, check) in criteria {
        let start = Instant::now();
        let outcome =
            std::panic::catch_unwind(check).unwrap_or_else(|_| Err("panicked".to_string()));
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS  {name:<32} {detail} [{secs:.1}s]"),
            Err(why) => {
                failures += 1;
                println!("FAIL  {name:<32} {why} [{secs:.1}s]");
            }
        }
    }
    println!("acceptance: {failures} failed");
    if failures > 0 {
        std::process::exit(1);
    }
}
