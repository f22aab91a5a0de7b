//! Experiment orchestration: configuration, scenario execution and
//! aggregation. Report files are written by [`emit_reports`].
//!
//! A configuration is TOML. Unknown keys are rejected. A minimal one:
//!
//! ```toml
//! seed = 7
//!
//! [corpus]
//! synthetic = { count = 8, size = 224 }
//!
//! [[codecs]]
//! name = "ref"
//! kind = "refcodec"
//!
//! [targets]
//! bpp = [0.5, 1.0]
//! ```
//!
//! Further sections: `[metrics]` (booleans `psnr`, `ms_ssim`,
//! `deep_distance`, `cosine`, `allow_scale_reduction`), `[extractor]`
//! (`kind = "seeded" | "weights" | "adapter"`), `[[chains]]` (named stage
//! lists whose last stage is rate-targeted), `[similarity]` (`target_bpp`)
//! and `[timing]` (`enabled`, `quality`, `warmup`, `reps`).

mod report;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::adapters::{AdapterCodec, AdapterExtractor, AdapterHandle, ProcessLimiter};
use crate::bench::{self, TimingOptions, TimingReport};
use crate::codec::Codec;
use crate::error::{Error, Result};
use crate::extractor::{load_weights, Extractor, FeatureExtractor};
use crate::imagecore::{read_pnm, Tile};
use crate::metrics::{FeatureSet, MetricSelection};
use crate::par::{self, Exec};
use crate::ratecontrol::{
    self, aggregate, chain_compress, sample_indices, sweep_point, ChainSpec, ChainStage,
    RateDistortionPoint, StageSetting, SweepInput, SweepOptions, TargetOptions,
};
use crate::refcodec::RefCodec;
use crate::synth;
use crate::tiling::{build_manifest, CorpusManifest, ManifestSpec};

pub use report::{
    emit_reports, rd_points_csv, render_rd_svg, render_similarity_svg, similarity_csv,
};

pub const MAX_TARGET_BPP: f64 = 24.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticCorpus {
    pub count: usize,
    #[serde(default = "default_tile_size")]
    pub size: u32,
    #[serde(default)]
    pub seed: u64,
}

fn default_tile_size() -> u32 {
    224
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusConfig {
    /// JSON-lines manifest; relative tile paths resolve against its folder.
    pub manifest: Option<PathBuf>,
    /// Directory scanned for PPM tiles, one subject per subfolder.
    pub dir: Option<PathBuf>,
    pub synthetic: Option<SyntheticCorpus>,
    /// Keep only the first `limit` tiles in manifest order.
    pub limit: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CodecKind {
    Refcodec,
    Adapter,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CodecConfig {
    pub name: String,
    pub kind: CodecKind,
    /// 4:2:0 chroma subsampling for the reference codec.
    #[serde(default)]
    pub subsample: bool,
    pub exe: Option<PathBuf>,
    #[serde(default)]
    pub args: Vec<String>,
    pub timeout_secs: Option<f64>,
    /// Whether the codec gets its own rate-distortion points; codecs used
    /// only inside chains can opt out.
    #[serde(default = "yes")]
    pub sweep: bool,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageConfig {
    pub codec: String,
    pub quality: Option<f64>,
    pub target_bpp: Option<f64>,
}

/// Stages run in order; the last one carries no setting and is rate-targeted
/// at every sweep target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainConfig {
    pub name: String,
    pub stages: Vec<StageConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetsConfig {
    pub bpp: Vec<f64>,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    /// Tiles used for rate targeting; 0 means the whole corpus.
    #[serde(default = "default_rate_sample")]
    pub rate_sample: usize,
}

fn default_tol() -> f64 {
    ratecontrol::DEFAULT_TOL
}

fn default_max_iter() -> usize {
    ratecontrol::DEFAULT_MAX_ITER
}

fn default_rate_sample() -> usize {
    ratecontrol::DEFAULT_RATE_SAMPLE
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum ExtractorConfig {
    Seeded {
        #[serde(default)]
        seed: u64,
    },
    Weights {
        path: PathBuf,
    },
    Adapter {
        exe: PathBuf,
        #[serde(default)]
        args: Vec<String>,
        timeout_secs: Option<f64>,
    },
}

impl Default for ExtractorConfig {
    fn default() -> Self {
        ExtractorConfig::Seeded { seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimilarityConfig {
    #[serde(default = "default_similarity_bpp")]
    pub target_bpp: f64,
}

fn default_similarity_bpp() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimingConfig {
    #[serde(default = "yes")]
    pub enabled: bool,
    #[serde(default = "default_timing_quality")]
    pub quality: f64,
    #[serde(default = "default_warmup")]
    pub warmup: usize,
    #[serde(default = "default_reps")]
    pub reps: usize,
}

fn default_timing_quality() -> f64 {
    80.0
}

fn default_warmup() -> usize {
    TimingOptions::default().warmup
}

fn default_reps() -> usize {
    TimingOptions::default().reps
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub jobs: Option<usize>,
    pub max_adapter_processes: Option<usize>,
    #[serde(default)]
    pub dump_raw: bool,
    pub corpus: CorpusConfig,
    pub codecs: Vec<CodecConfig>,
    #[serde(default)]
    pub chains: Vec<ChainConfig>,
    pub targets: TargetsConfig,
    #[serde(default)]
    pub metrics: MetricSelection,
    pub extractor: Option<ExtractorConfig>,
    pub similarity: Option<SimilarityConfig>,
    pub timing: Option<TimingConfig>,
}

/// A validated configuration together with the folder its relative paths
/// resolve against.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentPlan {
    pub config: ExperimentConfig,
    pub base_dir: PathBuf,
}

fn invalid(path: &str, msg: impl std::fmt::Display) -> Error {
    Error::validation(format!("{path}: {msg}"))
}

/// Parses and validates a configuration. Relative paths resolve against
/// `base_dir`.
pub fn load_config(text: &str, base_dir: &Path) -> Result<ExperimentPlan> {
    let config: ExperimentConfig =
        toml::from_str(text).map_err(|e| Error::validation(format!("config: {e}")))?;
    ExperimentPlan::new(config, base_dir)
}

impl ExperimentPlan {
    pub fn new(config: ExperimentConfig, base_dir: &Path) -> Result<Self> {
        let plan = Self {
            config,
            base_dir: base_dir.to_path_buf(),
        };
        plan.validate()?;
        Ok(plan)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    fn check_exe(&self, key: &str, exe: &Path) -> Result<()> {
        // Bare names are looked up on PATH when the adapter is spawned.
        if exe.components().count() > 1 && !self.resolve(exe).exists() {
            return Err(invalid(key, format!("{} does not exist", exe.display())));
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let c = &self.config;
        let sources = [
            c.corpus.manifest.is_some(),
            c.corpus.dir.is_some(),
            c.corpus.synthetic.is_some(),
        ];
        if sources.iter().filter(|&&s| s).count() != 1 {
            return Err(invalid(
                "corpus",
                "exactly one of manifest, dir or synthetic is required",
            ));
        }
        if let Some(m) = &c.corpus.manifest {
            if !self.resolve(m).is_file() {
                return Err(invalid(
                    "corpus.manifest",
                    format!("{} does not exist", m.display()),
                ));
            }
        }
        if let Some(d) = &c.corpus.dir {
            if !self.resolve(d).is_dir() {
                return Err(invalid(
                    "corpus.dir",
                    format!("{} is not a directory", d.display()),
                ));
            }
        }
        if let Some(s) = &c.corpus.synthetic {
            if s.count == 0 || s.size == 0 {
                return Err(invalid(
                    "corpus.synthetic",
                    "count and size must be positive",
                ));
            }
        }
        if c.corpus.limit == Some(0) {
            return Err(invalid("corpus.limit", "must be positive"));
        }
        if c.codecs.is_empty() {
            return Err(invalid("codecs", "at least one codec is required"));
        }
        if c.jobs == Some(0) {
            return Err(invalid("jobs", "must be positive"));
        }
        for (i, codec) in c.codecs.iter().enumerate() {
            let key = format!("codecs[{i}]");
            if codec.name.is_empty() {
                return Err(invalid(&format!("{key}.name"), "must not be empty"));
            }
            if c.codecs[..i].iter().any(|o| o.name == codec.name) {
                return Err(invalid(
                    &format!("{key}.name"),
                    format!("duplicate codec {}", codec.name),
                ));
            }
            if let Some(t) = codec.timeout_secs {
                if !(t > 0.0 && t.is_finite()) {
                    return Err(invalid(&format!("{key}.timeout_secs"), "must be positive"));
                }
            }
            match codec.kind {
                CodecKind::Adapter => {
                    let exe = codec
                        .exe
                        .as_ref()
                        .ok_or_else(|| invalid(&format!("{key}.exe"), "required for adapters"))?;
                    self.check_exe(&format!("{key}.exe"), exe)?;
                }
                CodecKind::Refcodec => {
                    if codec.exe.is_some() || !codec.args.is_empty() {
                        return Err(invalid(&key, "exe and args only apply to adapters"));
                    }
                }
            }
        }
        for (i, chain) in c.chains.iter().enumerate() {
            let key = format!("chains[{i}]");
            if chain.stages.is_empty() {
                return Err(invalid(
                    &format!("{key}.stages"),
                    "at least one stage is required",
                ));
            }
            if c.codecs.iter().any(|o| o.name == chain.name)
                || c.chains[..i].iter().any(|o| o.name == chain.name)
            {
                return Err(invalid(
                    &format!("{key}.name"),
                    format!("duplicate name {}", chain.name),
                ));
            }
            let last = chain.stages.len() - 1;
            for (j, s) in chain.stages.iter().enumerate() {
                let skey = format!("{key}.stages[{j}]");
                if !c.codecs.iter().any(|o| o.name == s.codec) {
                    return Err(invalid(&skey, format!("unknown codec {}", s.codec)));
                }
                match (j == last, s.quality, s.target_bpp) {
                    (true, None, None) => {}
                    (true, _, _) => {
                        return Err(invalid(
                            &skey,
                            "the last stage is rate-targeted and takes no setting",
                        ))
                    }
                    (false, Some(_), None) => {}
                    (false, None, Some(t)) => check_target(&format!("{skey}.target_bpp"), t)?,
                    (false, _, _) => {
                        return Err(invalid(&skey, "set exactly one of quality or target_bpp"))
                    }
                }
            }
        }
        if c.targets.bpp.is_empty() {
            return Err(invalid("targets.bpp", "at least one target is required"));
        }
        for (i, &t) in c.targets.bpp.iter().enumerate() {
            check_target(&format!("targets.bpp[{i}]"), t)?;
        }
        if c.targets.bpp.windows(2).any(|w| w[0] >= w[1]) {
            return Err(invalid("targets.bpp", "targets must be strictly ascending"));
        }
        if !(c.targets.tol > 0.0 && c.targets.tol < 1.0) {
            return Err(invalid("targets.tol", "must lie in (0, 1)"));
        }
        if c.targets.max_iter == 0 {
            return Err(invalid("targets.max_iter", "must be positive"));
        }
        if let Some(s) = &c.similarity {
            check_target("similarity.target_bpp", s.target_bpp)?;
        }
        if let Some(t) = &c.timing {
            if t.reps == 0 {
                return Err(invalid("timing.reps", "must be positive"));
            }
        }
        match &c.extractor {
            Some(ExtractorConfig::Weights { path }) if !self.resolve(path).is_file() => {
                return Err(invalid(
                    "extractor.path",
                    format!("{} does not exist", path.display()),
                ));
            }
            Some(ExtractorConfig::Adapter {
                exe, timeout_secs, ..
            }) => {
                self.check_exe("extractor.exe", exe)?;
                if let Some(t) = timeout_secs {
                    if !(*t > 0.0 && t.is_finite()) {
                        return Err(invalid("extractor.timeout_secs", "must be positive"));
                    }
                }
            }
            _ => {}
        }
        Ok(())
    }

    /// SHA-256 over the canonical JSON form of the configuration.
    pub fn config_hash(&self) -> String {
        let json = serde_json::to_vec(&self.config).expect("config serializes");
        Sha256::digest(&json)
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    pub fn exec(&self) -> Exec {
        match self.config.jobs {
            Some(1) => Exec::Sequential,
            _ => Exec::default(),
        }
    }

    pub fn needs_extractor(&self) -> bool {
        self.config.metrics.needs_extractor() || self.config.similarity.is_some()
    }
}

fn check_target(key: &str, t: f64) -> Result<()> {
    if !(t > 0.0 && t < MAX_TARGET_BPP) {
        return Err(invalid(
            key,
            format!("target {t} bpp outside (0, {MAX_TARGET_BPP})"),
        ));
    }
    Ok(())
}

/// Reads every tile listed in `manifest`; ids are the record paths.
pub fn load_manifest_tiles(manifest: &CorpusManifest, base: &Path) -> Result<Vec<Tile>> {
    manifest
        .records
        .iter()
        .map(|r| {
            let p = Path::new(&r.path);
            let full = if p.is_absolute() {
                p.to_path_buf()
            } else {
                base.join(p)
            };
            let bytes = std::fs::read(&full).map_err(|e| Error::io(&full, e))?;
            let tile = read_pnm(&bytes).map_err(|e| e.context(full.display().to_string()))?;
            Ok(tile.with_id(r.path.clone()))
        })
        .collect()
}

pub fn load_corpus(plan: &ExperimentPlan) -> Result<Vec<Tile>> {
    let c = &plan.config.corpus;
    let mut tiles = if let Some(s) = &c.synthetic {
        synth::corpus(s.seed, s.count, s.size)
    } else if let Some(m) = &c.manifest {
        let path = plan.resolve(m);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let name = path
            .file_stem()
            .map_or_else(String::new, |s| s.to_string_lossy().into_owned());
        let manifest = CorpusManifest::from_jsonl(name, &text)?;
        let base = path.parent().map_or_else(PathBuf::new, Path::to_path_buf);
        load_manifest_tiles(&manifest, &base)?
    } else if let Some(d) = &c.dir {
        let root = plan.resolve(d);
        let manifest = build_manifest(&ManifestSpec::new(&root))?;
        load_manifest_tiles(&manifest, &root)?
    } else {
        unreachable!("validated corpus source")
    };
    if let Some(limit) = c.limit {
        tiles.truncate(limit);
    }
    if tiles.is_empty() {
        return Err(Error::validation("corpus is empty"));
    }
    Ok(tiles)
}

fn timeout(secs: Option<f64>) -> Duration {
    secs.map_or(crate::adapters::DEFAULT_TIMEOUT, Duration::from_secs_f64)
}

pub fn build_codec(
    plan: &ExperimentPlan,
    cfg: &CodecConfig,
    limiter: &Arc<ProcessLimiter>,
) -> Result<Arc<dyn Codec>> {
    Ok(match cfg.kind {
        CodecKind::Refcodec => Arc::new(RefCodec::new(cfg.subsample).with_id(&cfg.name)),
        CodecKind::Adapter => {
            let exe = cfg.exe.as_ref().expect("validated adapter exe");
            let exe = if exe.components().count() > 1 {
                plan.resolve(exe)
            } else {
                exe.clone()
            };
            let handle = AdapterHandle::new(exe)
                .with_args(cfg.args.iter().cloned())
                .with_timeout(timeout(cfg.timeout_secs))?
                .with_limiter(Arc::clone(limiter));
            Arc::new(AdapterCodec::probe(handle)?.with_id(&cfg.name))
        }
    })
}

pub fn build_extractor(
    plan: &ExperimentPlan,
    limiter: &Arc<ProcessLimiter>,
) -> Result<Arc<dyn FeatureExtractor>> {
    Ok(match plan.config.extractor.clone().unwrap_or_default() {
        ExtractorConfig::Seeded { seed } => Arc::new(Extractor::seeded(seed)),
        ExtractorConfig::Weights { path } => {
            let path = plan.resolve(&path);
            let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
            Arc::new(load_weights(&bytes)?)
        }
        ExtractorConfig::Adapter {
            exe,
            args,
            timeout_secs,
        } => {
            let exe = if exe.components().count() > 1 {
                plan.resolve(&exe)
            } else {
                exe
            };
            let handle = AdapterHandle::new(exe)
                .with_args(args)
                .with_timeout(timeout(timeout_secs))?
                .with_limiter(Arc::clone(limiter));
            Arc::new(AdapterExtractor::probe(handle)?)
        }
    })
}

/// Per codec and tap aggregate of cosine similarity at a fixed bitrate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityRow {
    pub codec: String,
    pub tap_id: String,
    pub target_bpp: f64,
    pub achieved_bpp: f64,
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

/// A scenario that failed; the rest of the bundle is still valid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub codec: String,
    pub scenario: String,
    pub target_bpp: Option<f64>,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub config_hash: String,
    pub seed: u64,
    pub toolkit_version: String,
    pub tile_count: usize,
    pub extractor: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportBundle {
    pub rd_points: Vec<RateDistortionPoint>,
    pub similarity: Vec<SimilarityRow>,
    pub timing: Vec<TimingReport>,
    pub failures: Vec<Failure>,
    pub metadata: Metadata,
}

impl ReportBundle {
    pub fn empty(metadata: Metadata) -> Self {
        Self {
            rd_points: Vec::new(),
            similarity: Vec::new(),
            timing: Vec::new(),
            failures: Vec::new(),
            metadata,
        }
    }

    /// Some scenario failed and the bundle is incomplete.
    pub fn is_partial(&self) -> bool {
        !self.failures.is_empty()
    }
}

/// A codec to sweep: either a plain codec or a chain whose leading stages
/// precompress the corpus.
struct Subject {
    name: String,
    codec: Arc<dyn Codec>,
    pre: Option<ChainSpec>,
}

struct Context<'a> {
    plan: &'a ExperimentPlan,
    tiles: &'a [Tile],
    extractor: Option<Arc<dyn FeatureExtractor>>,
    features: Option<Vec<FeatureSet>>,
    exec: Exec,
}

impl Context<'_> {
    fn sweep_options(&self, selection: MetricSelection) -> SweepOptions {
        let t = &self.plan.config.targets;
        SweepOptions {
            selection,
            target: TargetOptions {
                tol: t.tol,
                max_iter: t.max_iter,
            },
            rate_sample: (t.rate_sample > 0).then_some(t.rate_sample),
            seed: self.plan.config.seed,
            exec: self.exec,
            keep_tiles: self.plan.config.dump_raw,
        }
    }

    fn rate_sample(&self) -> Vec<Tile> {
        let n = self.plan.config.targets.rate_sample;
        let n = if n == 0 { self.tiles.len() } else { n };
        sample_indices(self.tiles.len(), n, self.plan.config.seed)
            .into_iter()
            .map(|i| self.tiles[i].clone())
            .collect()
    }

    /// The tiles the subject's final codec receives.
    fn inputs(&self, subject: &Subject) -> Result<Vec<Tile>> {
        match &subject.pre {
            None => Ok(self.tiles.to_vec()),
            Some(pre) => {
                let t = &self.plan.config.targets;
                let opts = TargetOptions {
                    tol: t.tol,
                    max_iter: t.max_iter,
                };
                let resolved = pre.resolve(&self.rate_sample(), &opts, self.exec)?;
                par::try_map(self.exec, self.tiles, |tile| {
                    chain_compress(&resolved, tile)
                        .map(|(d, _)| d)
                        .map_err(|e| e.context(format!("precompressing tile {}", tile.id)))
                })
            }
        }
    }

    fn input<'b>(&'b self, inputs: &'b [Tile]) -> SweepInput<'b> {
        SweepInput {
            originals: self.tiles,
            inputs,
            reference_features: self.features.as_deref(),
        }
    }
}

fn build_subjects(
    plan: &ExperimentPlan,
    limiter: &Arc<ProcessLimiter>,
    failures: &mut Vec<Failure>,
) -> Vec<Subject> {
    let mut codecs: BTreeMap<String, Arc<dyn Codec>> = BTreeMap::new();
    let mut subjects = Vec::new();
    for cfg in &plan.config.codecs {
        match build_codec(plan, cfg, limiter) {
            Ok(c) => {
                codecs.insert(cfg.name.clone(), Arc::clone(&c));
                if cfg.sweep {
                    subjects.push(Subject {
                        name: cfg.name.clone(),
                        codec: c,
                        pre: None,
                    });
                }
            }
            Err(e) => failures.push(Failure {
                codec: cfg.name.clone(),
                scenario: "setup".into(),
                target_bpp: None,
                message: e.to_string(),
            }),
        }
    }
    'chains: for chain in &plan.config.chains {
        let mut stages = Vec::new();
        for s in &chain.stages {
            let Some(codec) = codecs.get(&s.codec) else {
                failures.push(Failure {
                    codec: chain.name.clone(),
                    scenario: "setup".into(),
                    target_bpp: None,
                    message: format!("codec {} is unavailable", s.codec),
                });
                continue 'chains;
            };
            let setting = match (s.quality, s.target_bpp) {
                (Some(q), _) => StageSetting::Quality(q),
                (None, Some(t)) => StageSetting::TargetBpp(t),
                (None, None) => StageSetting::TargetBpp(f64::NAN),
            };
            stages.push(ChainStage {
                codec: Arc::clone(codec),
                setting,
            });
        }
        let last = stages.pop().expect("validated chain has stages");
        let pre = if stages.is_empty() {
            None
        } else {
            Some(ChainSpec::new(stages).expect("nonempty"))
        };
        subjects.push(Subject {
            name: chain.name.clone(),
            codec: Arc::new(Renamed {
                inner: last.codec,
                id: chain.name.clone(),
            }),
            pre,
        });
    }
    subjects
}

/// Reports a codec under another id.
struct Renamed {
    inner: Arc<dyn Codec>,
    id: String,
}

impl Codec for Renamed {
    fn id(&self) -> &str {
        &self.id
    }

    fn quality_range(&self) -> crate::codec::QualityRange {
        self.inner.quality_range()
    }

    fn encode(&self, tile: &Tile, quality: f64) -> Result<crate::imagecore::CompressedBlob> {
        let mut b = self.inner.encode(tile, quality)?;
        b.codec_id = self.id.clone();
        Ok(b)
    }

    fn decode(&self, blob: &crate::imagecore::CompressedBlob) -> Result<Tile> {
        self.inner.decode(blob)
    }
}

fn similarity_rows(point: &RateDistortionPoint) -> Vec<SimilarityRow> {
    point
        .metrics
        .iter()
        .filter_map(|m| {
            let tap = m.metric.strip_prefix("cosine:")?;
            Some(SimilarityRow {
                codec: point.codec_id.clone(),
                tap_id: tap.to_string(),
                target_bpp: point.target_bpp,
                achieved_bpp: point.achieved_bpp,
                mean: m.aggregate.mean,
                std: m.aggregate.std,
                n: m.aggregate.n,
            })
        })
        .collect()
}

/// Which scenarios of a plan to execute.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunScope {
    pub sweep: bool,
    pub similarity: bool,
    /// Timing runs when the plan enables it, or with default settings when
    /// the plan has no `[timing]` section and `force_timing` is set.
    pub timing: bool,
    pub force_timing: bool,
}

impl RunScope {
    pub fn all() -> Self {
        Self {
            sweep: true,
            similarity: true,
            timing: true,
            force_timing: false,
        }
    }

    pub fn timing_only() -> Self {
        Self {
            sweep: false,
            similarity: false,
            timing: true,
            force_timing: true,
        }
    }

    pub fn similarity_only() -> Self {
        Self {
            sweep: false,
            similarity: true,
            timing: false,
            force_timing: false,
        }
    }
}

/// Runs every scenario in the plan. Failures of individual points are
/// recorded in the bundle; only problems loading the corpus abort the run.
pub fn run_experiment(plan: &ExperimentPlan) -> Result<ReportBundle> {
    run_scoped(plan, RunScope::all())
}

pub fn run_scoped(plan: &ExperimentPlan, scope: RunScope) -> Result<ReportBundle> {
    par::with_jobs(plan.config.jobs, || run_inner(plan, scope))
}

fn run_inner(plan: &ExperimentPlan, scope: RunScope) -> Result<ReportBundle> {
    let cfg = &plan.config;
    let tiles = load_corpus(plan)?;
    let limiter = ProcessLimiter::new(
        cfg.max_adapter_processes
            .or(cfg.jobs)
            .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get())),
    );
    let exec = plan.exec();
    let mut bundle = ReportBundle::empty(Metadata {
        config_hash: plan.config_hash(),
        seed: cfg.seed,
        toolkit_version: env!("CARGO_PKG_VERSION").to_string(),
        tile_count: tiles.len(),
        extractor: None,
    });

    let mut extractor = None;
    let mut features = None;
    let wants_features = (scope.sweep && cfg.metrics.needs_extractor())
        || (scope.similarity && cfg.similarity.is_some());
    if wants_features {
        match build_extractor(plan, &limiter).and_then(|x| {
            let f = par::try_map(exec, &tiles, |t| {
                x.extract(t)
                    .map_err(|e| e.context(format!("features of tile {}", t.id)))
            })?;
            Ok((x, f))
        }) {
            Ok((x, f)) => {
                bundle.metadata.extractor = Some(x.name().to_string());
                extractor = Some(x);
                features = Some(f);
            }
            Err(e) => bundle.failures.push(Failure {
                codec: String::new(),
                scenario: "extractor".into(),
                target_bpp: None,
                message: e.to_string(),
            }),
        }
    }
    let ctx = Context {
        plan,
        tiles: &tiles,
        extractor,
        features,
        exec,
    };
    let subjects = build_subjects(plan, &limiter, &mut bundle.failures);

    let mut selection = cfg.metrics;
    if ctx.extractor.is_none() {
        selection.cosine = false;
        selection.deep_distance = false;
    }
    let opts = ctx.sweep_options(selection);
    let x = ctx.extractor.as_deref();
    for subject in subjects.iter().filter(|_| scope.sweep || scope.similarity) {
        let inputs = match ctx.inputs(subject) {
            Ok(i) => i,
            Err(e) => {
                bundle.failures.push(Failure {
                    codec: subject.name.clone(),
                    scenario: "precompress".into(),
                    target_bpp: None,
                    message: e.to_string(),
                });
                continue;
            }
        };
        let input = ctx.input(&inputs);
        for &target in cfg.targets.bpp.iter().filter(|_| scope.sweep) {
            match sweep_point(subject.codec.as_ref(), &input, target, &opts, x) {
                Ok(p) => bundle.rd_points.push(p),
                Err(e) => bundle.failures.push(Failure {
                    codec: subject.name.clone(),
                    scenario: "sweep".into(),
                    target_bpp: Some(target),
                    message: e.to_string(),
                }),
            }
        }
        if let (Some(sim), Some(_), true) = (&cfg.similarity, x, scope.similarity) {
            let sel = MetricSelection {
                psnr: false,
                ms_ssim: false,
                deep_distance: false,
                cosine: true,
                allow_scale_reduction: true,
            };
            let mut sopts = ctx.sweep_options(sel);
            sopts.keep_tiles = false;
            match sweep_point(subject.codec.as_ref(), &input, sim.target_bpp, &sopts, x) {
                Ok(p) => bundle.similarity.extend(similarity_rows(&p)),
                Err(e) => bundle.failures.push(Failure {
                    codec: subject.name.clone(),
                    scenario: "similarity".into(),
                    target_bpp: Some(sim.target_bpp),
                    message: e.to_string(),
                }),
            }
        }
    }

    let default_timing = TimingConfig {
        enabled: true,
        quality: default_timing_quality(),
        warmup: default_warmup(),
        reps: default_reps(),
    };
    let timing = match &cfg.timing {
        Some(t) => Some(t).filter(|t| t.enabled),
        None => scope.force_timing.then_some(&default_timing),
    };
    if let Some(t) = timing.filter(|_| scope.timing) {
        let topts = TimingOptions {
            warmup: t.warmup,
            reps: t.reps,
        };
        for subject in subjects.iter().filter(|s| s.pre.is_none()) {
            let quality = subject.codec.quality_range().normalize(t.quality);
            let run = bench::time_encode(subject.codec.as_ref(), &tiles, quality, &topts).and_then(
                |(enc, blobs)| {
                    let dec = bench::time_decode(subject.codec.as_ref(), &blobs, &topts)?;
                    Ok([enc, dec])
                },
            );
            match run {
                Ok(r) => bundle.timing.extend(r),
                Err(e) => bundle.failures.push(Failure {
                    codec: subject.name.clone(),
                    scenario: "timing".into(),
                    target_bpp: None,
                    message: e.to_string(),
                }),
            }
        }
    }
    Ok(bundle)
}

/// Mean and population standard deviation, as `(mean, std)`.
pub fn mean_std(values: &[f64]) -> Result<(f64, f64)> {
    aggregate(values).map(|a| (a.mean, a.std))
}
