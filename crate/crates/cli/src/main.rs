//! `slidebench` command-line interface.
//!
//! Exit status: 0 on success, 1 for invalid input or configuration, 2 for
//! runtime failures (reports written so far are kept).

mod serve;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};

use slidebench::adapters::{conformance_check, AdapterCodec, AdapterHandle};
use slidebench::extractor::{load_weights, Extractor, FeatureExtractor};
use slidebench::imagecore::{read_pnm, write_pnm};
use slidebench::metrics::{evaluate_pair, feature_similarity_profile, MetricSelection};
use slidebench::refcodec::{self, RefCodec};
use slidebench::runner::{
    emit_reports, load_config, run_scoped, ExperimentPlan, ReportBundle, RunScope,
};
use slidebench::tiling::{foreground_mask, sample_tiles, CorpusManifest, Mask, TileRecord};
use slidebench::{Codec, Error, Result};

#[derive(Parser)]
#[command(
    name = "slidebench",
    version,
    about = "Rate-distortion benchmarking for pathology tiles"
)]
struct Cli {
    /// Experiment configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Also write per-tile values (raw.csv).
    #[arg(long, global = true)]
    dump_raw: bool,
    /// Worker threads.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CodecOpts {
    /// Built-in codec: refcodec or refcodec-420.
    #[arg(long, default_value = "refcodec", conflicts_with = "adapter")]
    codec: String,
    /// External codec adapter executable.
    #[arg(long)]
    adapter: Option<PathBuf>,
    /// Extra adapter argument, passed before the verb. Repeatable.
    #[arg(long = "adapter-arg", allow_hyphen_values = true)]
    adapter_args: Vec<String>,
}

#[derive(Args, Clone)]
struct ExtractorOpts {
    /// Weights file for the built-in extractor.
    #[arg(long)]
    weights: Option<PathBuf>,
    /// Seed of the built-in extractor when no weights are given.
    #[arg(long, default_value_t = 0)]
    extractor_seed: u64,
}

#[derive(Subcommand)]
enum Command {
    /// Cut tissue tiles from a slide image.
    Tile {
        image: PathBuf,
        /// Annotation image; non-black pixels mark the region to sample.
        #[arg(long)]
        annotation: Option<PathBuf>,
        #[arg(long, default_value_t = 224)]
        size: u32,
        #[arg(long, default_value_t = 100)]
        count: usize,
        /// Minimum foreground fraction of an accepted tile.
        #[arg(long, default_value_t = 0.5)]
        coverage: f64,
        /// Pixels with every channel at or above this are background.
        #[arg(long, default_value_t = 220)]
        white_threshold: u8,
        /// Subject id written to the manifest; defaults to the image stem.
        #[arg(long)]
        subject: Option<String>,
    },
    /// Encode one PPM tile.
    Compress {
        input: PathBuf,
        output: PathBuf,
        #[arg(long)]
        quality: f64,
        #[command(flatten)]
        codec: CodecOpts,
    },
    /// Decode a payload back to PPM.
    Decompress {
        input: PathBuf,
        output: PathBuf,
        #[command(flatten)]
        codec: CodecOpts,
    },
    /// Compare two tiles and print the metrics as JSON.
    Evaluate {
        reference: PathBuf,
        test: PathBuf,
        /// Comma-separated: psnr, ms_ssim, deep_distance, cosine.
        #[arg(long, default_value = "psnr,ms_ssim")]
        metrics: String,
        #[arg(long)]
        allow_scale_reduction: bool,
        #[command(flatten)]
        extractor: ExtractorOpts,
    },
    /// Run the rate-distortion sweep of a configuration and write reports.
    Sweep,
    /// Per-tap feature similarity: of two tiles, or of a configuration's
    /// codecs at its similarity bitrate.
    Similarity {
        reference: Option<PathBuf>,
        test: Option<PathBuf>,
        #[command(flatten)]
        extractor: ExtractorOpts,
    },
    /// Time encoding and decoding of a configuration's codecs.
    Time,
    /// Re-emit report files from a bundle.json.
    Report { bundle: PathBuf },
    /// Check that an adapter follows the codec protocol.
    Conformance {
        exe: PathBuf,
        /// Extra adapter argument, passed before the verb. Repeatable.
        #[arg(long = "adapter-arg", allow_hyphen_values = true)]
        adapter_args: Vec<String>,
        #[arg(long, default_value_t = 120.0)]
        timeout_secs: f64,
    },
    /// Serve a built-in component over the adapter protocol.
    #[command(hide = true)]
    AdapterServe {
        /// refcodec or extractor.
        role: String,
        verb: String,
        #[arg(long)]
        quality: Option<f64>,
        #[arg(long)]
        subsample: bool,
        #[arg(long, default_value_t = 0)]
        extractor_seed: u64,
        /// Tile side the extractor declares tap dimensions for.
        #[arg(long, default_value_t = 224)]
        size: u32,
    },
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    std::fs::write(path, bytes).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn read_tile(path: &Path) -> Result<slidebench::Tile> {
    read_pnm(&read_file(path)?).map_err(|e| e.context(path.display().to_string()))
}

fn builtin_codec(name: &str) -> Result<RefCodec> {
    match name {
        "refcodec" => Ok(RefCodec::new(false)),
        "refcodec-420" => Ok(RefCodec::new(true)),
        other => Err(Error::Validation(format!("unknown built-in codec {other}"))),
    }
}

fn adapter_handle(opts: &CodecOpts) -> Option<AdapterHandle> {
    opts.adapter
        .as_ref()
        .map(|exe| AdapterHandle::new(exe).with_args(opts.adapter_args.iter().cloned()))
}

fn build_extractor(opts: &ExtractorOpts) -> Result<Extractor> {
    match &opts.weights {
        Some(p) => load_weights(&read_file(p)?),
        None => Ok(Extractor::seeded(opts.extractor_seed)),
    }
}

fn parse_metrics(list: &str, allow_scale_reduction: bool) -> Result<MetricSelection> {
    let mut sel = MetricSelection {
        psnr: false,
        ms_ssim: false,
        deep_distance: false,
        cosine: false,
        allow_scale_reduction,
    };
    for m in list.split(',').map(str::trim).filter(|m| !m.is_empty()) {
        match m {
            "psnr" => sel.psnr = true,
            "ms_ssim" => sel.ms_ssim = true,
            "deep_distance" => sel.deep_distance = true,
            "cosine" => sel.cosine = true,
            other => return Err(Error::Validation(format!("unknown metric {other}"))),
        }
    }
    Ok(sel)
}

fn load_plan(cli: &Cli) -> Result<ExperimentPlan> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| Error::Validation("this command needs --config".into()))?;
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.clone(),
        source: e,
    })?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut plan = load_config(&text, base).map_err(|e| e.context(path.display().to_string()))?;
    if let Some(seed) = cli.seed {
        plan.config.seed = seed;
    }
    if cli.jobs.is_some() {
        plan.config.jobs = cli.jobs;
    }
    if cli.dump_raw {
        plan.config.dump_raw = true;
    }
    plan.validate()?;
    Ok(plan)
}

fn out_dir(cli: &Cli, plan: Option<&ExperimentPlan>) -> PathBuf {
    cli.out
        .clone()
        .or_else(|| plan.and_then(|p| p.config.out.as_ref().map(|o| p.resolve(o))))
        .unwrap_or_else(|| PathBuf::from("results"))
}

/// Writes the bundle and reports partial failures through the exit code.
fn finish(bundle: &ReportBundle, dir: &Path, dump_raw: bool) -> Result<ExitCode> {
    let files = emit_reports(bundle, dir, dump_raw)?;
    for f in &files {
        println!("{}", f.display());
    }
    if bundle.is_partial() {
        for f in &bundle.failures {
            eprintln!(
                "failed: {} {} {:?}: {}",
                f.codec, f.scenario, f.target_bpp, f.message
            );
        }
        return Ok(ExitCode::from(2));
    }
    Ok(ExitCode::SUCCESS)
}

fn run_plan(cli: &Cli, scope: RunScope) -> Result<ExitCode> {
    let plan = load_plan(cli)?;
    let bundle = run_scoped(&plan, scope)?;
    finish(&bundle, &out_dir(cli, Some(&plan)), plan.config.dump_raw)
}

fn run(cli: &Cli) -> Result<ExitCode> {
    match &cli.command {
        Command::Tile {
            image,
            annotation,
            size,
            count,
            coverage,
            white_threshold,
            subject,
        } => {
            let slide = read_tile(image)?;
            let mask = match annotation {
                Some(a) => Mask::from_annotation(&read_tile(a)?),
                None => foreground_mask(&slide, *white_threshold),
            };
            let seed = cli.seed.unwrap_or(0);
            let sampled = sample_tiles(&slide, &mask, *size, *count, *coverage, seed)?;
            let dir = out_dir(cli, None);
            std::fs::create_dir_all(&dir).map_err(|e| Error::Io {
                path: dir.clone(),
                source: e,
            })?;
            let subject = subject.clone().unwrap_or_else(|| {
                image
                    .file_stem()
                    .map_or_else(|| "slide".into(), |s| s.to_string_lossy().into_owned())
            });
            let mut records = Vec::new();
            for &(x, y) in &sampled.origins {
                let name = format!("{subject}_{x}_{y}.ppm");
                let tile = slide.crop(x, y, *size, *size)?;
                write_file(&dir.join(&name), &write_pnm(&tile))?;
                records.push(TileRecord {
                    subject_id: subject.clone(),
                    class_label: None,
                    path: name,
                    width: *size,
                    height: *size,
                });
            }
            let manifest = CorpusManifest::new(subject, records)?;
            write_file(&dir.join("manifest.jsonl"), manifest.to_jsonl()?.as_bytes())?;
            println!(
                "{} tiles written to {}",
                sampled.origins.len(),
                dir.display()
            );
            if sampled.shortfall {
                eprintln!(
                    "warning: only {} of {count} tiles could be placed",
                    sampled.origins.len()
                );
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Compress {
            input,
            output,
            quality,
            codec,
        } => {
            let tile = read_tile(input)?;
            let blob = match adapter_handle(codec) {
                Some(h) => AdapterCodec::probe(h)?.encode(&tile, *quality)?,
                None => builtin_codec(&codec.codec)?.encode(&tile, *quality)?,
            };
            write_file(output, &blob.bytes)?;
            println!("{:.6} bpp", blob.bpp());
            Ok(ExitCode::SUCCESS)
        }
        Command::Decompress {
            input,
            output,
            codec,
        } => {
            let bytes = read_file(input)?;
            let tile = match adapter_handle(codec) {
                Some(h) => read_pnm(&h.call(&["decode"], &bytes)?)?,
                None => {
                    // The container header carries the dimensions and the
                    // chroma layout, so both built-in ids decode alike.
                    builtin_codec(&codec.codec)?;
                    refcodec::decode(&bytes)?
                }
            };
            write_file(output, &write_pnm(&tile))?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Evaluate {
            reference,
            test,
            metrics,
            allow_scale_reduction,
            extractor,
        } => {
            let sel = parse_metrics(metrics, *allow_scale_reduction)?;
            let (a, b) = (read_tile(reference)?, read_tile(test)?);
            let x = if sel.needs_extractor() {
                Some(build_extractor(extractor)?)
            } else {
                None
            };
            let report = evaluate_pair(
                &a,
                &b,
                &sel,
                x.as_ref().map(|x| x as &dyn FeatureExtractor),
                None,
            )?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            Ok(ExitCode::SUCCESS)
        }
        Command::Sweep => run_plan(
            cli,
            RunScope {
                timing: false,
                ..RunScope::all()
            },
        ),
        Command::Similarity {
            reference,
            test,
            extractor,
        } => match (reference, test) {
            (Some(r), Some(t)) => {
                let x = Arc::new(build_extractor(extractor)?);
                let profile =
                    feature_similarity_profile(&read_tile(r)?, &read_tile(t)?, x.as_ref())?;
                let map: serde_json::Map<String, serde_json::Value> = profile
                    .into_iter()
                    .map(|(tap, v)| (tap, serde_json::Value::from(v)))
                    .collect();
                println!("{}", serde_json::to_string_pretty(&map)?);
                Ok(ExitCode::SUCCESS)
            }
            (None, None) => run_plan(cli, RunScope::similarity_only()),
            _ => Err(Error::Validation(
                "give both a reference and a test tile".into(),
            )),
        },
        Command::Time => run_plan(cli, RunScope::timing_only()),
        Command::Report { bundle } => {
            let b: ReportBundle = serde_json::from_slice(&read_file(bundle)?)?;
            let dir = out_dir(cli, None);
            emit_reports(&b, &dir, false)?;
            println!("{}", dir.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Conformance {
            exe,
            adapter_args,
            timeout_secs,
        } => {
            if !(*timeout_secs > 0.0 && timeout_secs.is_finite()) {
                return Err(Error::Validation("--timeout-secs must be positive".into()));
            }
            let handle = AdapterHandle::new(exe)
                .with_args(adapter_args.iter().cloned())
                .with_timeout(Duration::from_secs_f64(*timeout_secs))?;
            let report = conformance_check(&handle);
            print!("{report}");
            Ok(if report.passed() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            })
        }
        Command::AdapterServe {
            role,
            verb,
            quality,
            subsample,
            extractor_seed,
            size,
        } => {
            match role.as_str() {
                "refcodec" => serve::refcodec(verb, *quality, *subsample)?,
                "extractor" => serve::extractor(verb, *extractor_seed, *size)?,
                other => return Err(Error::Validation(format!("unknown role {other}"))),
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_validation() {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}
