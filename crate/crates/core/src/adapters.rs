//! Subprocess protocols for external codecs and feature extractors.
//!
//! Codec adapters answer three verbs:
//!
//! * `<exe> capabilities` prints one line of JSON describing a [`CodecInfo`];
//! * `<exe> encode --quality <q>` reads a binary PPM on stdin and writes the
//!   compressed payload to stdout;
//! * `<exe> decode` reads a payload on stdin and writes a binary PPM.
//!
//! Extractor adapters answer `capabilities` with
//! `{"name": …, "taps": [{"id": …, "dim": …}, …]}` and `extract`, which maps
//! a PPM to a `FEAT` stream: magic `FEAT`, u32 tap count, then per tap a u32
//! id length, the id bytes, a u32 dimension and that many little-endian f32.
//!
//! Exit status 0 means success; diagnostics go to stderr. Any extra handle
//! arguments are passed before the verb.

use std::fmt;
use std::io::{Read, Write};
use std::path::PathBuf;
use std::process::{Command, Stdio};
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use wait_timeout::ChildExt;

use crate::codec::{Codec, QualityKind, QualityRange};
use crate::error::{Error, Result};
use crate::extractor::FeatureExtractor;
use crate::imagecore::{read_pnm, write_pnm, CompressedBlob, Tile};
use crate::metrics::{FeatureSet, FeatureVector};
use crate::synth;

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(120);
const STDERR_LIMIT: usize = 4096;
pub const FEAT_MAGIC: &[u8; 4] = b"FEAT";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Spawn,
    Write,
    Read,
    Wait,
    Protocol,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Phase::Spawn => "spawn",
            Phase::Write => "write",
            Phase::Read => "read",
            Phase::Wait => "wait",
            Phase::Protocol => "protocol",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AdapterError {
    pub exe: String,
    pub verb: String,
    pub phase: Phase,
    /// Exit code when the process finished, `None` if it never did or was
    /// killed by a signal.
    pub status: Option<i32>,
    /// At most 4 KiB of the adapter's stderr.
    pub stderr: String,
    pub message: String,
}

impl fmt::Display for AdapterError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "adapter {} {} failed during {}: {}",
            self.exe, self.verb, self.phase, self.message
        )?;
        if let Some(code) = self.status {
            write!(f, " (exit {code})")?;
        }
        if !self.stderr.is_empty() {
            write!(f, "; stderr: {}", self.stderr.trim_end())?;
        }
        Ok(())
    }
}

impl std::error::Error for AdapterError {}

/// Caps how many adapter processes run at once.
#[derive(Debug)]
pub struct ProcessLimiter {
    max: usize,
    running: Mutex<usize>,
    freed: Condvar,
}

impl ProcessLimiter {
    pub fn new(max: usize) -> Arc<Self> {
        Arc::new(Self {
            max: max.max(1),
            running: Mutex::new(0),
            freed: Condvar::new(),
        })
    }

    fn acquire(self: &Arc<Self>) -> Permit {
        let mut n = self.running.lock().unwrap();
        while *n >= self.max {
            n = self.freed.wait(n).unwrap();
        }
        *n += 1;
        Permit(Arc::clone(self))
    }
}

struct Permit(Arc<ProcessLimiter>);

impl Drop for Permit {
    fn drop(&mut self) {
        *self.0.running.lock().unwrap() -= 1;
        self.0.freed.notify_one();
    }
}

#[derive(Debug, Clone)]
pub struct AdapterHandle {
    pub exe: PathBuf,
    pub args: Vec<String>,
    pub timeout: Duration,
    pub limiter: Option<Arc<ProcessLimiter>>,
}

impl AdapterHandle {
    pub fn new(exe: impl Into<PathBuf>) -> Self {
        Self {
            exe: exe.into(),
            args: Vec::new(),
            timeout: DEFAULT_TIMEOUT,
            limiter: None,
        }
    }

    pub fn with_args<I, S>(mut self, args: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.args = args.into_iter().map(Into::into).collect();
        self
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Result<Self> {
        if timeout.is_zero() {
            return Err(Error::validation("adapter timeout must be positive"));
        }
        self.timeout = timeout;
        Ok(self)
    }

    pub fn with_limiter(mut self, limiter: Arc<ProcessLimiter>) -> Self {
        self.limiter = Some(limiter);
        self
    }

    /// Runs one verb, feeding `input` on stdin and returning all of stdout.
    pub fn call(&self, verb: &[&str], input: &[u8]) -> std::result::Result<Vec<u8>, AdapterError> {
        let _permit = self.limiter.as_ref().map(|l| l.acquire());
        let fail = |phase, status, stderr: &[u8], message: String| AdapterError {
            exe: self.exe.display().to_string(),
            verb: verb.join(" "),
            phase,
            status,
            stderr: String::from_utf8_lossy(&stderr[..stderr.len().min(STDERR_LIMIT)]).into_owned(),
            message,
        };
        let mut cmd = Command::new(&self.exe);
        cmd.args(&self.args)
            .args(verb)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped());
        // A group of its own lets a timeout kill helpers the adapter spawned,
        // which would otherwise keep the output pipes open.
        #[cfg(unix)]
        std::os::unix::process::CommandExt::process_group(&mut cmd, 0);
        let mut child = cmd
            .spawn()
            .map_err(|e| fail(Phase::Spawn, None, &[], e.to_string()))?;

        let mut stdin = child.stdin.take().expect("piped stdin");
        let mut stdout = child.stdout.take().expect("piped stdout");
        let mut stderr = child.stderr.take().expect("piped stderr");
        let (write_res, out_res, err_res, wait_res) = std::thread::scope(|s| {
            let writer = s.spawn(move || {
                let r = stdin.write_all(input);
                drop(stdin);
                r
            });
            let out_reader = s.spawn(move || {
                let mut buf = Vec::new();
                stdout.read_to_end(&mut buf).map(|_| buf)
            });
            let err_reader = s.spawn(move || {
                let mut buf = Vec::new();
                let _ = stderr.read_to_end(&mut buf);
                buf
            });
            let wait = match child.wait_timeout(self.timeout) {
                Ok(Some(status)) => Ok(status),
                Ok(None) => {
                    kill_tree(&mut child);
                    let _ = child.wait();
                    Err(format!("timed out after {:?}", self.timeout))
                }
                Err(e) => Err(e.to_string()),
            };
            (
                writer.join().expect("writer thread"),
                out_reader.join().expect("stdout thread"),
                err_reader.join().expect("stderr thread"),
                wait,
            )
        });

        let status = wait_res.map_err(|m| fail(Phase::Wait, None, &err_res, m))?;
        let out = out_res.map_err(|e| fail(Phase::Read, status.code(), &err_res, e.to_string()))?;
        if !status.success() {
            let message = match status.code() {
                Some(_) => "nonzero exit status".to_string(),
                None => "terminated by signal".to_string(),
            };
            return Err(fail(Phase::Wait, status.code(), &err_res, message));
        }
        if let Err(e) = write_res {
            return Err(fail(Phase::Write, status.code(), &err_res, e.to_string()));
        }
        Ok(out)
    }

    fn protocol_error(&self, verb: &str, message: impl Into<String>) -> AdapterError {
        AdapterError {
            exe: self.exe.display().to_string(),
            verb: verb.to_string(),
            phase: Phase::Protocol,
            status: Some(0),
            stderr: String::new(),
            message: message.into(),
        }
    }
}

fn kill_tree(child: &mut std::process::Child) {
    #[cfg(unix)]
    if let Ok(pid) = i32::try_from(child.id()) {
        // SAFETY: signalling a process group we created has no memory effects.
        unsafe {
            libc::kill(-pid, libc::SIGKILL);
        }
    }
    let _ = child.kill();
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Encode,
    Decode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodecInfo {
    pub name: String,
    pub version: String,
    pub quality_min: f64,
    pub quality_max: f64,
    pub quality_kind: QualityKind,
    pub modes: Vec<Mode>,
}

impl CodecInfo {
    pub fn validate(&self) -> Result<()> {
        if self.name.is_empty() {
            return Err(Error::validation("codec name is empty"));
        }
        if self.quality_min.partial_cmp(&self.quality_max) != Some(std::cmp::Ordering::Less) {
            return Err(Error::validation(format!(
                "quality_min {} is not below quality_max {}",
                self.quality_min, self.quality_max
            )));
        }
        if self.modes.is_empty() {
            return Err(Error::validation("codec declares no modes"));
        }
        Ok(())
    }

    pub fn quality_range(&self) -> QualityRange {
        QualityRange {
            min: self.quality_min,
            max: self.quality_max,
            kind: self.quality_kind,
        }
    }

    pub fn supports(&self, mode: Mode) -> bool {
        self.modes.contains(&mode)
    }
}

fn parse_json_line<T: serde::de::DeserializeOwned>(
    handle: &AdapterHandle,
    out: &[u8],
) -> Result<T> {
    let text = String::from_utf8_lossy(out);
    let line = text.lines().find(|l| !l.trim().is_empty()).unwrap_or("");
    serde_json::from_str(line).map_err(|e| {
        handle
            .protocol_error("capabilities", format!("malformed capabilities JSON: {e}"))
            .into()
    })
}

pub fn probe_capabilities(handle: &AdapterHandle) -> Result<CodecInfo> {
    let out = handle.call(&["capabilities"], &[])?;
    let info: CodecInfo = parse_json_line(handle, &out)?;
    info.validate()
        .map_err(|e| e.context(format!("capabilities of {}", handle.exe.display())))?;
    Ok(info)
}

/// Formats a quality value for the command line.
pub fn quality_arg(kind: QualityKind, q: f64) -> String {
    match kind {
        QualityKind::Int => format!("{}", q.round() as i64),
        QualityKind::Float => format!("{q}"),
    }
}

pub fn adapter_encode(
    handle: &AdapterHandle,
    info: &CodecInfo,
    tile: &Tile,
    quality: f64,
) -> Result<CompressedBlob> {
    if !info.supports(Mode::Encode) {
        return Err(Error::validation(format!("{} cannot encode", info.name)));
    }
    let range = info.quality_range();
    if !range.contains(quality) {
        return Err(Error::domain(format!(
            "quality {quality} outside [{}, {}] of {}",
            range.min, range.max, info.name
        )));
    }
    let q = range.normalize(quality);
    let arg = quality_arg(info.quality_kind, q);
    let bytes = handle.call(&["encode", "--quality", &arg], &write_pnm(tile))?;
    if bytes.is_empty() {
        return Err(handle.protocol_error("encode", "empty output").into());
    }
    Ok(CompressedBlob {
        bytes,
        codec_id: info.name.clone(),
        quality: q,
        source_width: tile.width(),
        source_height: tile.height(),
    })
}

pub fn adapter_decode(
    handle: &AdapterHandle,
    info: &CodecInfo,
    blob: &CompressedBlob,
) -> Result<Tile> {
    if !info.supports(Mode::Decode) {
        return Err(Error::validation(format!("{} cannot decode", info.name)));
    }
    let out = handle.call(&["decode"], &blob.bytes)?;
    if out.is_empty() {
        return Err(handle.protocol_error("decode", "empty output").into());
    }
    let tile = read_pnm(&out).map_err(|e| e.context("adapter decode output"))?;
    if tile.width() != blob.source_width || tile.height() != blob.source_height {
        return Err(Error::validation(format!(
            "adapter decoded {}x{}, blob source is {}x{}",
            tile.width(),
            tile.height(),
            blob.source_width,
            blob.source_height
        )));
    }
    Ok(tile)
}

/// An external codec reached through the adapter protocol.
#[derive(Debug, Clone)]
pub struct AdapterCodec {
    handle: AdapterHandle,
    info: CodecInfo,
    id: String,
}

impl AdapterCodec {
    pub fn probe(handle: AdapterHandle) -> Result<Self> {
        let info = probe_capabilities(&handle)?;
        let id = info.name.clone();
        Ok(Self { handle, info, id })
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = id.into();
        self
    }

    pub fn info(&self) -> &CodecInfo {
        &self.info
    }

    pub fn handle(&self) -> &AdapterHandle {
        &self.handle
    }
}

impl Codec for AdapterCodec {
    fn id(&self) -> &str {
        &self.id
    }

    fn quality_range(&self) -> QualityRange {
        self.info.quality_range()
    }

    fn encode(&self, tile: &Tile, quality: f64) -> Result<CompressedBlob> {
        let mut blob = adapter_encode(&self.handle, &self.info, tile, quality)?;
        blob.codec_id = self.id.clone();
        Ok(blob)
    }

    fn decode(&self, blob: &CompressedBlob) -> Result<Tile> {
        adapter_decode(&self.handle, &self.info, blob)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TapDecl {
    pub id: String,
    pub dim: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractorInfo {
    pub name: String,
    pub taps: Vec<TapDecl>,
}

impl ExtractorInfo {
    pub fn validate(&self) -> Result<()> {
        if self.taps.is_empty() {
            return Err(Error::validation("extractor declares zero taps"));
        }
        for (i, t) in self.taps.iter().enumerate() {
            if t.dim == 0 {
                return Err(Error::validation(format!(
                    "tap {} declares dimension 0",
                    t.id
                )));
            }
            if self.taps[..i].iter().any(|o| o.id == t.id) {
                return Err(Error::validation(format!("tap {} declared twice", t.id)));
            }
        }
        Ok(())
    }
}

pub fn probe_extractor(handle: &AdapterHandle) -> Result<ExtractorInfo> {
    let out = handle.call(&["capabilities"], &[])?;
    let info: ExtractorInfo = parse_json_line(handle, &out)?;
    info.validate()?;
    Ok(info)
}

pub fn write_feat(features: &FeatureSet) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(FEAT_MAGIC);
    out.extend_from_slice(&(features.len() as u32).to_le_bytes());
    for t in features.taps() {
        out.extend_from_slice(&(t.tap_id.len() as u32).to_le_bytes());
        out.extend_from_slice(t.tap_id.as_bytes());
        out.extend_from_slice(&(t.values.len() as u32).to_le_bytes());
        for v in &t.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

/// Parses a `FEAT` stream and checks it against the declared taps.
pub fn parse_feat(data: &[u8], declared: &[TapDecl]) -> Result<FeatureSet> {
    let mut pos = 0usize;
    let mut take = |n: usize, what: &str| -> Result<&[u8]> {
        let end = pos
            .checked_add(n)
            .filter(|&e| e <= data.len())
            .ok_or_else(|| Error::format(format!("FEAT stream truncated reading {what}")))?;
        let s = &data[pos..end];
        pos = end;
        Ok(s)
    };
    if take(4, "magic")? != FEAT_MAGIC {
        return Err(Error::format("FEAT magic missing"));
    }
    let count = u32::from_le_bytes(take(4, "tap count")?.try_into().unwrap()) as usize;
    if count != declared.len() {
        return Err(Error::validation(format!(
            "stream carries {count} taps, capabilities declare {}",
            declared.len()
        )));
    }
    let mut taps = Vec::with_capacity(count);
    for decl in declared {
        let len = u32::from_le_bytes(take(4, "id length")?.try_into().unwrap()) as usize;
        let id = String::from_utf8(take(len, "tap id")?.to_vec())
            .map_err(|_| Error::format("tap id is not UTF-8"))?;
        if id != decl.id {
            return Err(Error::validation(format!(
                "expected tap {}, stream has {id}",
                decl.id
            )));
        }
        let dim = u32::from_le_bytes(take(4, "dimension")?.try_into().unwrap()) as usize;
        if dim != decl.dim {
            return Err(Error::validation(format!(
                "tap {id}: stream dimension {dim}, declared {}",
                decl.dim
            )));
        }
        let raw = take(dim * 4, &id)?;
        let values = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        taps.push(FeatureVector::new(id, values)?);
    }
    if pos != data.len() {
        return Err(Error::format("trailing bytes after the last tap"));
    }
    FeatureSet::new(taps)
}

#[derive(Debug, Clone)]
pub struct AdapterExtractor {
    handle: AdapterHandle,
    info: ExtractorInfo,
}

impl AdapterExtractor {
    pub fn probe(handle: AdapterHandle) -> Result<Self> {
        let info = probe_extractor(&handle)?;
        Ok(Self { handle, info })
    }

    pub fn info(&self) -> &ExtractorInfo {
        &self.info
    }
}

pub fn adapter_extract(
    handle: &AdapterHandle,
    info: &ExtractorInfo,
    tile: &Tile,
) -> Result<FeatureSet> {
    let out = handle.call(&["extract"], &write_pnm(tile))?;
    parse_feat(&out, &info.taps).map_err(|e| e.context(format!("features from {}", info.name)))
}

impl FeatureExtractor for AdapterExtractor {
    fn name(&self) -> &str {
        &self.info.name
    }

    fn extract(&self, tile: &Tile) -> Result<FeatureSet> {
        adapter_extract(&self.handle, &self.info, tile)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckStatus {
    Pass,
    Fail,
    NotApplicable,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ConformanceCheck {
    pub name: String,
    pub status: CheckStatus,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ConformanceReport {
    pub adapter: String,
    pub checks: Vec<ConformanceCheck>,
}

impl ConformanceReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.status != CheckStatus::Fail)
    }

    pub fn status_of(&self, name: &str) -> Option<&CheckStatus> {
        self.checks
            .iter()
            .find(|c| c.name == name)
            .map(|c| &c.status)
    }
}

impl fmt::Display for ConformanceReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "conformance: {}", self.adapter)?;
        for c in &self.checks {
            let s = match c.status {
                CheckStatus::Pass => "PASS",
                CheckStatus::Fail => "FAIL",
                CheckStatus::NotApplicable => "N/A ",
            };
            writeln!(f, "  [{s}] {:<12} {}", c.name, c.detail)?;
        }
        Ok(())
    }
}

fn check(name: &str, status: CheckStatus, detail: impl Into<String>) -> ConformanceCheck {
    ConformanceCheck {
        name: name.to_string(),
        status,
        detail: detail.into(),
    }
}

/// Exercises capabilities, an encode/decode round trip at the minimum, middle
/// and maximum quality, and a bitrate monotonicity spot check.
pub fn conformance_check(handle: &AdapterHandle) -> ConformanceReport {
    let mut report = ConformanceReport {
        adapter: handle.exe.display().to_string(),
        checks: Vec::new(),
    };
    let codec = match AdapterCodec::probe(handle.clone()) {
        Ok(c) => {
            report.checks.push(check(
                "capabilities",
                CheckStatus::Pass,
                format!("{} {}", c.info.name, c.info.version),
            ));
            c
        }
        Err(e) => {
            report
                .checks
                .push(check("capabilities", CheckStatus::Fail, e.to_string()));
            for name in ["roundtrip", "monotone_bpp"] {
                report.checks.push(check(
                    name,
                    CheckStatus::NotApplicable,
                    "capabilities unavailable",
                ));
            }
            return report;
        }
    };
    let info = codec.info().clone();
    let range = info.quality_range();
    let qualities = [
        range.normalize(range.min),
        range.normalize((range.min + range.max) / 2.0),
        range.normalize(range.max),
    ];
    let tile = synth::tile(0xC0FFEE, 64, 64);

    if !info.supports(Mode::Encode) {
        report.checks.push(check(
            "roundtrip",
            CheckStatus::NotApplicable,
            "no encode mode",
        ));
        report.checks.push(check(
            "monotone_bpp",
            CheckStatus::NotApplicable,
            "no encode mode",
        ));
        return report;
    }
    let blobs: Vec<Result<CompressedBlob>> =
        qualities.iter().map(|&q| codec.encode(&tile, q)).collect();

    if !info.supports(Mode::Decode) {
        report.checks.push(check(
            "roundtrip",
            CheckStatus::NotApplicable,
            "no decode mode",
        ));
    } else {
        let failures: Vec<String> = qualities
            .iter()
            .zip(&blobs)
            .filter_map(|(q, blob)| {
                let res = blob.as_ref().map_err(|e| e.to_string()).and_then(|b| {
                    codec.decode(b).map_err(|e| e.to_string()).and_then(|t| {
                        if t.same_dims(&tile) {
                            Ok(())
                        } else {
                            Err("dimension mismatch".to_string())
                        }
                    })
                });
                res.err().map(|e| format!("q={q}: {e}"))
            })
            .collect();
        report.checks.push(if failures.is_empty() {
            check(
                "roundtrip",
                CheckStatus::Pass,
                format!("qualities {qualities:?}"),
            )
        } else {
            check("roundtrip", CheckStatus::Fail, failures.join("; "))
        });
    }

    let bpps: std::result::Result<Vec<f64>, String> = blobs
        .iter()
        .map(|b| b.as_ref().map(|b| b.bpp()).map_err(|e| e.to_string()))
        .collect();
    report.checks.push(match bpps {
        Err(e) => check("monotone_bpp", CheckStatus::Fail, e),
        Ok(b) if b[0] == b[1] && b[1] == b[2] => check(
            "monotone_bpp",
            CheckStatus::NotApplicable,
            format!("constant bpp {}", b[0]),
        ),
        Ok(b) if b[0] <= b[1] && b[1] <= b[2] => {
            check("monotone_bpp", CheckStatus::Pass, format!("bpp {b:?}"))
        }
        Ok(b) => check(
            "monotone_bpp",
            CheckStatus::Fail,
            format!("bpp {b:?} not non-decreasing"),
        ),
    });
    report
}
