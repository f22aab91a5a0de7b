//! Bitrate targeting, rate-distortion sweeps and recompression chains.

use std::fmt;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::codec::{Codec, QualityKind};
use crate::error::{Error, Result};
use crate::extractor::FeatureExtractor;
use crate::imagecore::{CompressedBlob, Tile};
use crate::metrics::{evaluate_pair, FeatureSet, MetricReport, MetricSelection};
use crate::par::{self, Exec};
use crate::rng::SplitMix64;

/// Infinite PSNR (identical tiles) enters aggregates as this value.
pub const PSNR_CAP: f64 = 100.0;
pub const DEFAULT_TOL: f64 = 0.05;
pub const DEFAULT_MAX_ITER: usize = 20;
pub const DEFAULT_RATE_SAMPLE: usize = 50;
const PROBE_POINTS: usize = 5;
const GRID_POINTS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    pub n: usize,
}

pub fn aggregate(values: &[f64]) -> Result<Aggregate> {
    if values.is_empty() {
        return Err(Error::domain("aggregate of an empty list"));
    }
    if let Some(v) = values.iter().find(|v| !v.is_finite()) {
        return Err(Error::domain(format!("aggregate of non-finite value {v}")));
    }
    if values.iter().all(|&v| v == values[0]) {
        return Ok(Aggregate {
            mean: values[0],
            std: 0.0,
            n: values.len(),
        });
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    Ok(Aggregate {
        mean,
        std: var.sqrt(),
        n: values.len(),
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PointFlags {
    pub target_unreachable: bool,
    pub psnr_capped: bool,
    pub scale_reduced: bool,
    /// bpp(q) was not monotone and grid search replaced bisection.
    pub grid_search: bool,
}

impl PointFlags {
    pub fn labels(&self) -> Vec<&'static str> {
        let mut out = Vec::new();
        if self.target_unreachable {
            out.push("target_unreachable");
        }
        if self.psnr_capped {
            out.push("psnr_capped");
        }
        if self.scale_reduced {
            out.push("scale_reduced");
        }
        if self.grid_search {
            out.push("grid_search");
        }
        out
    }
}

impl fmt::Display for PointFlags {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.labels().join(";"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricAggregate {
    pub metric: String,
    #[serde(flatten)]
    pub aggregate: Aggregate,
}

/// Per-tile outcome retained for raw dumps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TileOutcome {
    pub tile_id: String,
    pub bpp: f64,
    pub metrics: MetricReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateDistortionPoint {
    pub codec_id: String,
    pub target_bpp: f64,
    /// Corpus-mean bpp of the blobs actually measured.
    pub achieved_bpp: f64,
    pub quality: f64,
    pub metrics: Vec<MetricAggregate>,
    pub tile_count: usize,
    pub flags: PointFlags,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub tiles: Vec<TileOutcome>,
}

impl RateDistortionPoint {
    pub fn metric(&self, name: &str) -> Option<&Aggregate> {
        self.metrics
            .iter()
            .find(|m| m.metric == name)
            .map(|m| &m.aggregate)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TargetOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for TargetOptions {
    fn default() -> Self {
        Self {
            tol: DEFAULT_TOL,
            max_iter: DEFAULT_MAX_ITER,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TargetResult {
    pub quality: f64,
    pub achieved_bpp: f64,
    pub target_unreachable: bool,
    pub grid_search: bool,
    /// Every (quality, corpus-mean bpp) pair evaluated, in evaluation order.
    pub evaluated: Vec<(f64, f64)>,
}

/// Corpus-mean bpp of `codec` at `quality` over `tiles`.
pub fn mean_bpp(codec: &dyn Codec, tiles: &[Tile], quality: f64, exec: Exec) -> Result<f64> {
    if tiles.is_empty() {
        return Err(Error::domain("bitrate of an empty corpus"));
    }
    let bpps = par::try_map(exec, tiles, |t| {
        codec
            .encode(t, quality)
            .map(|b| b.bpp())
            .map_err(|e| e.context(format!("encoding tile {} at quality {quality}", t.id)))
    })?;
    Ok(bpps.iter().sum::<f64>() / bpps.len() as f64)
}

struct Search<'a> {
    codec: &'a dyn Codec,
    sample: &'a [Tile],
    exec: Exec,
    target: f64,
    tol: f64,
    evaluated: Vec<(f64, f64)>,
}

impl Search<'_> {
    fn eval(&mut self, q: f64) -> Result<f64> {
        let q = self.codec.quality_range().normalize(q);
        if let Some(&(_, b)) = self.evaluated.iter().find(|(eq, _)| *eq == q) {
            return Ok(b);
        }
        let b = mean_bpp(self.codec, self.sample, q, self.exec)?;
        self.evaluated.push((q, b));
        Ok(b)
    }

    fn within(&self, bpp: f64) -> bool {
        (bpp - self.target).abs() <= self.tol * self.target
    }

    fn result(&self, q: f64, unreachable: bool, grid: bool) -> TargetResult {
        let q = self.codec.quality_range().normalize(q);
        let bpp = self
            .evaluated
            .iter()
            .find(|(eq, _)| *eq == q)
            .map(|&(_, b)| b)
            .expect("result quality was evaluated");
        TargetResult {
            quality: q,
            achieved_bpp: bpp,
            target_unreachable: unreachable,
            grid_search: grid,
            evaluated: self.evaluated.clone(),
        }
    }

    /// Closest evaluated quality; ties go to the lower quality.
    fn closest(&self) -> f64 {
        let mut best = self.evaluated[0];
        for &(q, b) in &self.evaluated[1..] {
            let (d, bd) = ((b - self.target).abs(), (best.1 - self.target).abs());
            if d < bd || (d == bd && q < best.0) {
                best = (q, b);
            }
        }
        best.0
    }
}

fn spaced(min: f64, max: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| min + (max - min) * i as f64 / (n - 1) as f64)
        .collect()
}

/// Searches the quality whose corpus-mean bpp over `sample` is within
/// `tol · target` of `target`.
///
/// Targets outside the bpp span of the quality endpoints return the closer
/// endpoint flagged unreachable. A five-point probe checks that bpp rises
/// with quality; if it does not, a 20-point grid replaces bisection.
pub fn target_bpp(
    codec: &dyn Codec,
    sample: &[Tile],
    target: f64,
    opts: &TargetOptions,
    exec: Exec,
) -> Result<TargetResult> {
    if !(target > 0.0 && target.is_finite()) {
        return Err(Error::domain(format!(
            "target bpp must be positive, got {target}"
        )));
    }
    if !(opts.tol > 0.0 && opts.tol.is_finite()) {
        return Err(Error::domain(format!(
            "tolerance must be positive, got {}",
            opts.tol
        )));
    }
    if sample.is_empty() {
        return Err(Error::domain("rate targeting over an empty corpus"));
    }
    let range = codec.quality_range();
    let mut s = Search {
        codec,
        sample,
        exec,
        target,
        tol: opts.tol,
        evaluated: Vec::new(),
    };

    let b_min = s.eval(range.min)?;
    if s.within(b_min) {
        return Ok(s.result(range.min, false, false));
    }
    let b_max = s.eval(range.max)?;
    if s.within(b_max) {
        return Ok(s.result(range.max, false, false));
    }
    let (lo_b, hi_b) = (b_min.min(b_max), b_min.max(b_max));
    if target < lo_b || target > hi_b {
        let q = if (b_min - target).abs() <= (b_max - target).abs() {
            range.min
        } else {
            range.max
        };
        return Ok(s.result(q, true, false));
    }

    let mut probe = Vec::with_capacity(PROBE_POINTS);
    for q in spaced(range.min, range.max, PROBE_POINTS) {
        let b = s.eval(q)?;
        let q = range.normalize(q);
        if s.within(b) {
            return Ok(s.result(q, false, false));
        }
        probe.push(b);
    }
    if probe.windows(2).any(|w| w[1] < w[0]) {
        for q in spaced(range.min, range.max, GRID_POINTS) {
            let b = s.eval(q)?;
            if s.within(b) {
                return Ok(s.result(q, false, true));
            }
        }
        return Ok(s.result(s.closest(), false, true));
    }

    // Narrow the bracket with the probe points before bisecting.
    let (mut lo, mut hi) = (range.min, range.max);
    for q in spaced(range.min, range.max, PROBE_POINTS) {
        let q = range.normalize(q);
        let b = s.eval(q)?;
        if b < target {
            lo = lo.max(q);
        } else {
            hi = hi.min(q);
        }
    }
    for _ in 0..opts.max_iter {
        let mid = match range.kind {
            QualityKind::Int => {
                if hi - lo <= 1.0 {
                    break;
                }
                ((lo + hi) / 2.0).floor()
            }
            QualityKind::Float => {
                if hi - lo <= f64::EPSILON * hi.abs().max(1.0) {
                    break;
                }
                (lo + hi) / 2.0
            }
        };
        let b = s.eval(mid)?;
        if s.within(b) {
            return Ok(s.result(mid, false, false));
        }
        if b < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(s.result(s.closest(), false, false))
}

/// Indices of a seeded subsample of `n` items out of `len`, in ascending order.
pub fn sample_indices(len: usize, n: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..len).collect();
    if n >= len {
        return idx;
    }
    SplitMix64::new(seed).shuffle(&mut idx);
    idx.truncate(n);
    idx.sort_unstable();
    idx
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepOptions {
    pub selection: MetricSelection,
    pub target: TargetOptions,
    /// Tiles used for rate targeting; `None` targets over the whole corpus.
    pub rate_sample: Option<usize>,
    pub seed: u64,
    pub exec: Exec,
    /// Keep per-tile outcomes on each point.
    pub keep_tiles: bool,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self {
            selection: MetricSelection::default(),
            target: TargetOptions::default(),
            rate_sample: Some(DEFAULT_RATE_SAMPLE),
            seed: 0,
            exec: Exec::default(),
            keep_tiles: false,
        }
    }
}

/// Originals for metric computation, the tiles the codec actually sees
/// (equal to the originals unless precompressed), and optional features of
/// the originals.
#[derive(Debug, Clone, Copy)]
pub struct SweepInput<'a> {
    pub originals: &'a [Tile],
    pub inputs: &'a [Tile],
    pub reference_features: Option<&'a [FeatureSet]>,
}

impl<'a> SweepInput<'a> {
    pub fn new(corpus: &'a [Tile]) -> Self {
        Self {
            originals: corpus,
            inputs: corpus,
            reference_features: None,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.originals.is_empty() {
            return Err(Error::domain("sweep over an empty corpus"));
        }
        if self.inputs.len() != self.originals.len() {
            return Err(Error::validation(
                "codec inputs and originals differ in length",
            ));
        }
        if let Some(f) = self.reference_features {
            if f.len() != self.originals.len() {
                return Err(Error::validation(
                    "reference features and originals differ in length",
                ));
            }
        }
        Ok(())
    }
}

fn collect_metrics(
    outcomes: &[TileOutcome],
    flags: &mut PointFlags,
) -> Result<Vec<MetricAggregate>> {
    let mut names: Vec<String> = Vec::new();
    let first = &outcomes[0].metrics;
    if first.psnr.is_some() {
        names.push("psnr".into());
    }
    if first.ms_ssim.is_some() {
        names.push("ms_ssim".into());
    }
    if first.deep_distance.is_some() {
        names.push("deep_distance".into());
    }
    if let Some(p) = &first.cosine_per_tap {
        names.extend(p.iter().map(|(tap, _)| format!("cosine:{tap}")));
    }
    flags.scale_reduced = outcomes.iter().any(|o| !o.metrics.warnings.is_empty());

    let mut out = Vec::with_capacity(names.len());
    for name in names {
        let mut values = Vec::with_capacity(outcomes.len());
        for o in outcomes {
            let m = &o.metrics;
            let v = match name.as_str() {
                "psnr" => m.psnr.map(|p| {
                    if p.is_infinite() {
                        flags.psnr_capped = true;
                        PSNR_CAP
                    } else {
                        p.min(PSNR_CAP)
                    }
                }),
                "ms_ssim" => m.ms_ssim,
                "deep_distance" => m.deep_distance,
                tap => m.cosine_per_tap.as_ref().and_then(|p| {
                    let id = tap.strip_prefix("cosine:")?;
                    p.iter().find(|(t, _)| t == id).map(|&(_, v)| v)
                }),
            };
            let v = v.ok_or_else(|| {
                Error::validation(format!("tile {} lacks metric {name}", o.tile_id))
            })?;
            values.push(v);
        }
        out.push(MetricAggregate {
            aggregate: aggregate(&values)?,
            metric: name,
        });
    }
    Ok(out)
}

/// Encodes and decodes every input tile at `quality` and aggregates the
/// requested metrics against the originals.
pub fn evaluate_at_quality(
    codec: &dyn Codec,
    input: &SweepInput<'_>,
    quality: f64,
    opts: &SweepOptions,
    extractor: Option<&dyn FeatureExtractor>,
) -> Result<(f64, Vec<MetricAggregate>, PointFlags, Vec<TileOutcome>)> {
    input.validate()?;
    let idx: Vec<usize> = (0..input.originals.len()).collect();
    let outcomes = par::try_map(opts.exec, &idx, |&i| {
        let original = &input.originals[i];
        let (decoded, blob) = codec
            .round_trip(&input.inputs[i], quality)
            .map_err(|e| e.context(format!("tile {}", original.id)))?;
        let feats = input.reference_features.map(|f| &f[i]);
        let metrics = evaluate_pair(original, &decoded, &opts.selection, extractor, feats)
            .map_err(|e| e.context(format!("metrics for tile {}", original.id)))?;
        Ok::<_, Error>(TileOutcome {
            tile_id: original.id.clone(),
            bpp: blob.bpp(),
            metrics,
        })
    })?;
    let mut flags = PointFlags::default();
    let metrics = collect_metrics(&outcomes, &mut flags)?;
    let achieved = outcomes.iter().map(|o| o.bpp).sum::<f64>() / outcomes.len() as f64;
    Ok((achieved, metrics, flags, outcomes))
}

/// One rate-distortion point: rate targeting on the configured subsample,
/// then a full-corpus encode, decode and metric pass.
pub fn sweep_point(
    codec: &dyn Codec,
    input: &SweepInput<'_>,
    target: f64,
    opts: &SweepOptions,
    extractor: Option<&dyn FeatureExtractor>,
) -> Result<RateDistortionPoint> {
    input.validate()?;
    let n = input.inputs.len();
    let picked = sample_indices(n, opts.rate_sample.unwrap_or(n), opts.seed);
    let sample: Vec<Tile> = picked.iter().map(|&i| input.inputs[i].clone()).collect();
    let t = target_bpp(codec, &sample, target, &opts.target, opts.exec)
        .map_err(|e| e.context(format!("{} rate targeting at {target} bpp", codec.id())))?;
    let (achieved, metrics, mut flags, tiles) =
        evaluate_at_quality(codec, input, t.quality, opts, extractor)
            .map_err(|e| e.context(format!("{} at {target} bpp", codec.id())))?;
    flags.target_unreachable = t.target_unreachable;
    flags.grid_search = t.grid_search;
    Ok(RateDistortionPoint {
        codec_id: codec.id().to_string(),
        target_bpp: target,
        achieved_bpp: achieved,
        quality: t.quality,
        metrics,
        tile_count: n,
        flags,
        tiles: if opts.keep_tiles { tiles } else { Vec::new() },
    })
}

/// Rate-distortion points for ascending `targets`.
pub fn sweep(
    codec: &dyn Codec,
    input: &SweepInput<'_>,
    targets: &[f64],
    opts: &SweepOptions,
    extractor: Option<&dyn FeatureExtractor>,
) -> Result<Vec<RateDistortionPoint>> {
    if targets
        .windows(2)
        .any(|w| w[0].partial_cmp(&w[1]).is_none_or(|o| o.is_gt()))
    {
        return Err(Error::validation("sweep targets must be sorted ascending"));
    }
    targets
        .iter()
        .map(|&t| sweep_point(codec, input, t, opts, extractor))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StageSetting {
    Quality(f64),
    TargetBpp(f64),
}

#[derive(Clone)]
pub struct ChainStage {
    pub codec: Arc<dyn Codec>,
    pub setting: StageSetting,
}

impl fmt::Debug for ChainStage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ChainStage")
            .field("codec", &self.codec.id())
            .field("setting", &self.setting)
            .finish()
    }
}

/// Codecs applied one after another, each to the previous stage's output.
#[derive(Debug, Clone)]
pub struct ChainSpec {
    stages: Vec<ChainStage>,
}

impl ChainSpec {
    pub fn new(stages: Vec<ChainStage>) -> Result<Self> {
        if stages.is_empty() {
            return Err(Error::validation("a chain needs at least one stage"));
        }
        Ok(Self { stages })
    }

    pub fn stages(&self) -> &[ChainStage] {
        &self.stages
    }

    /// Replaces bitrate targets with qualities found on `sample`, passing the
    /// sample through each resolved stage in turn.
    pub fn resolve(&self, sample: &[Tile], opts: &TargetOptions, exec: Exec) -> Result<ChainSpec> {
        let mut current: Vec<Tile> = sample.to_vec();
        let mut stages = Vec::with_capacity(self.stages.len());
        for (i, stage) in self.stages.iter().enumerate() {
            let quality = match stage.setting {
                StageSetting::Quality(q) => q,
                StageSetting::TargetBpp(t) => {
                    target_bpp(stage.codec.as_ref(), &current, t, opts, exec)
                        .map_err(|e| e.context(format!("chain stage {i}")))?
                        .quality
                }
            };
            if i + 1 < self.stages.len() {
                current = par::try_map(exec, &current, |t| {
                    stage
                        .codec
                        .round_trip(t, quality)
                        .map(|(d, _)| d.with_id(t.id.clone()))
                        .map_err(|e| e.context(format!("chain stage {i}")))
                })?;
            }
            stages.push(ChainStage {
                codec: Arc::clone(&stage.codec),
                setting: StageSetting::Quality(quality),
            });
        }
        Ok(ChainSpec { stages })
    }
}

/// Runs every stage on `tile`. The returned blob is the last stage's, so its
/// bpp is the effective rate of the whole chain.
pub fn chain_compress(chain: &ChainSpec, tile: &Tile) -> Result<(Tile, CompressedBlob)> {
    let mut current = tile.clone();
    let mut last = None;
    for (i, stage) in chain.stages.iter().enumerate() {
        let q = match stage.setting {
            StageSetting::Quality(q) => q,
            StageSetting::TargetBpp(_) => {
                return Err(Error::validation(format!(
                    "chain stage {i} has an unresolved bitrate target"
                )))
            }
        };
        let (decoded, blob) = stage
            .codec
            .round_trip(&current, q)
            .map_err(|e| e.context(format!("chain stage {i} ({})", stage.codec.id())))?;
        current = decoded.with_id(tile.id.clone());
        last = Some(blob);
    }
    Ok((current, last.expect("chain has at least one stage")))
}

/// A codec wrapper counting encode calls, handy for checking evaluation
/// budgets.
#[derive(Debug)]
pub struct CountingCodec<C> {
    pub inner: C,
    encodes: Mutex<usize>,
}

impl<C> CountingCodec<C> {
    pub fn new(inner: C) -> Self {
        Self {
            inner,
            encodes: Mutex::new(0),
        }
    }

    pub fn encodes(&self) -> usize {
        *self.encodes.lock().unwrap()
    }
}

impl<C: Codec> Codec for CountingCodec<C> {
    fn id(&self) -> &str {
        self.inner.id()
    }

    fn quality_range(&self) -> crate::codec::QualityRange {
        self.inner.quality_range()
    }

    fn encode(&self, tile: &Tile, quality: f64) -> Result<CompressedBlob> {
        *self.encodes.lock().unwrap() += 1;
        self.inner.encode(tile, quality)
    }

    fn decode(&self, blob: &CompressedBlob) -> Result<Tile> {
        self.inner.decode(blob)
    }
}
