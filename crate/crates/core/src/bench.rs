//! Wall-clock encode/decode timing.
//!
//! Measurement loops are sequential on the calling thread: the point is the
//! cost of a codec, not how well it scales across cores.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::codec::Codec;
use crate::error::{Error, Result};
use crate::imagecore::{CompressedBlob, Tile};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Encode,
    Decode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingReport {
    pub codec_id: String,
    pub quality: f64,
    pub phase: Phase,
    pub tile_count: usize,
    pub reps: usize,
    /// Sum of the measured repetitions; warmup passes are excluded.
    pub total_seconds: f64,
    pub tiles_per_second: f64,
    pub per_rep_seconds: Vec<f64>,
    pub median_rep_seconds: f64,
    pub warmup_reps: usize,
    pub host: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TimingOptions {
    pub warmup: usize,
    pub reps: usize,
}

impl Default for TimingOptions {
    fn default() -> Self {
        Self { warmup: 1, reps: 3 }
    }
}

/// Free-form description of the measuring machine.
pub fn host_descriptor() -> String {
    let cpus = std::thread::available_parallelism().map_or(1, |n| n.get());
    format!(
        "{}-{} cpus={} slidebench={}",
        std::env::consts::OS,
        std::env::consts::ARCH,
        cpus,
        env!("CARGO_PKG_VERSION")
    )
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

fn report(
    codec: &dyn Codec,
    quality: f64,
    phase: Phase,
    tile_count: usize,
    opts: &TimingOptions,
    per_rep: Vec<f64>,
) -> TimingReport {
    // A pass over a trivially cheap codec can read as zero on coarse clocks.
    let per_rep: Vec<f64> = per_rep.into_iter().map(|s| s.max(1e-9)).collect();
    let total: f64 = per_rep.iter().sum();
    TimingReport {
        codec_id: codec.id().to_string(),
        quality,
        phase,
        tile_count,
        reps: opts.reps,
        total_seconds: total,
        tiles_per_second: (tile_count * opts.reps) as f64 / total,
        median_rep_seconds: median(&per_rep),
        per_rep_seconds: per_rep,
        warmup_reps: opts.warmup,
        host: host_descriptor(),
    }
}

fn check(corpus_len: usize, opts: &TimingOptions) -> Result<()> {
    if opts.reps == 0 {
        return Err(Error::domain("timing needs at least one repetition"));
    }
    if corpus_len == 0 {
        return Err(Error::domain("timing over an empty corpus"));
    }
    Ok(())
}

/// Times tile-wise encoding of `corpus`. The blobs of the last pass are
/// returned for a paired decode measurement.
pub fn time_encode(
    codec: &dyn Codec,
    corpus: &[Tile],
    quality: f64,
    opts: &TimingOptions,
) -> Result<(TimingReport, Vec<CompressedBlob>)> {
    check(corpus.len(), opts)?;
    let pass = || -> Result<Vec<CompressedBlob>> {
        corpus
            .iter()
            .enumerate()
            .map(|(i, t)| {
                codec
                    .encode(t, quality)
                    .map_err(|e| e.context(format!("encoding tile {i} ({})", t.id)))
            })
            .collect()
    };
    for _ in 0..opts.warmup {
        pass()?;
    }
    let mut per_rep = Vec::with_capacity(opts.reps);
    let mut blobs = Vec::new();
    for _ in 0..opts.reps {
        let start = Instant::now();
        blobs = pass()?;
        per_rep.push(start.elapsed().as_secs_f64());
    }
    Ok((
        report(codec, quality, Phase::Encode, corpus.len(), opts, per_rep),
        blobs,
    ))
}

/// Times decoding of `blobs`, checking each reconstruction's dimensions.
pub fn time_decode(
    codec: &dyn Codec,
    blobs: &[CompressedBlob],
    opts: &TimingOptions,
) -> Result<TimingReport> {
    check(blobs.len(), opts)?;
    let pass = || -> Result<()> {
        for (i, b) in blobs.iter().enumerate() {
            let t = codec
                .decode(b)
                .map_err(|e| e.context(format!("decoding tile {i}")))?;
            if t.width() != b.source_width || t.height() != b.source_height {
                return Err(Error::validation(format!(
                    "tile {i} decoded to {}x{}, expected {}x{}",
                    t.width(),
                    t.height(),
                    b.source_width,
                    b.source_height
                )));
            }
        }
        Ok(())
    };
    for _ in 0..opts.warmup {
        pass()?;
    }
    let mut per_rep = Vec::with_capacity(opts.reps);
    for _ in 0..opts.reps {
        let start = Instant::now();
        pass()?;
        per_rep.push(start.elapsed().as_secs_f64());
    }
    let quality = blobs[0].quality;
    Ok(report(
        codec,
        quality,
        Phase::Decode,
        blobs.len(),
        opts,
        per_rep,
    ))
}
