//! Report files: CSV tables, JSON dumps and fixed-viewport SVG plots.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::ratecontrol::RateDistortionPoint;

use super::{ReportBundle, SimilarityRow};

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 600.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 160.0;
const TOP: f64 = 50.0;
const BOTTOM: f64 = 70.0;
const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

pub const RD_COLUMNS: [&str; 9] = [
    "codec",
    "target_bpp",
    "achieved_bpp",
    "quality",
    "metric",
    "mean",
    "std",
    "n",
    "flags",
];
pub const SIMILARITY_COLUMNS: [&str; 4] = ["codec", "tap_id", "mean", "std"];

fn csv_bytes(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.into_inner()
        .map_err(|e| Error::format(format!("CSV buffer: {e}")))
}

/// Long format: one row per point and metric.
pub fn rd_points_csv(points: &[RateDistortionPoint]) -> Result<Vec<u8>> {
    let rows = points.iter().flat_map(|p| {
        p.metrics.iter().map(move |m| {
            vec![
                p.codec_id.clone(),
                p.target_bpp.to_string(),
                p.achieved_bpp.to_string(),
                p.quality.to_string(),
                m.metric.clone(),
                m.aggregate.mean.to_string(),
                m.aggregate.std.to_string(),
                m.aggregate.n.to_string(),
                p.flags.to_string(),
            ]
        })
    });
    csv_bytes(&RD_COLUMNS, rows)
}

pub fn similarity_csv(rows: &[SimilarityRow]) -> Result<Vec<u8>> {
    csv_bytes(
        &SIMILARITY_COLUMNS,
        rows.iter().map(|r| {
            vec![
                r.codec.clone(),
                r.tap_id.clone(),
                r.mean.to_string(),
                r.std.to_string(),
            ]
        }),
    )
}

fn raw_csv(points: &[RateDistortionPoint]) -> Result<Vec<u8>> {
    let mut rows = Vec::new();
    for p in points {
        for t in &p.tiles {
            let m = &t.metrics;
            let mut push = |metric: &str, v: f64| {
                rows.push(vec![
                    p.codec_id.clone(),
                    p.target_bpp.to_string(),
                    t.tile_id.clone(),
                    t.bpp.to_string(),
                    metric.to_string(),
                    v.to_string(),
                ]);
            };
            if let Some(v) = m.psnr {
                push("psnr", v);
            }
            if let Some(v) = m.ms_ssim {
                push("ms_ssim", v);
            }
            if let Some(v) = m.deep_distance {
                push("deep_distance", v);
            }
            for (tap, v) in m.cosine_per_tap.iter().flatten() {
                push(&format!("cosine:{tap}"), *v);
            }
        }
    }
    csv_bytes(
        &["codec", "target_bpp", "tile_id", "bpp", "metric", "value"],
        rows,
    )
}

fn write(dir: &Path, name: &str, bytes: &[u8], written: &mut Vec<PathBuf>) -> Result<()> {
    let path = dir.join(name);
    std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
    written.push(path);
    Ok(())
}

fn file_stem(metric: &str) -> String {
    metric
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

/// Writes the report files into `dir` and returns their paths. The raw
/// per-tile table is written only with `dump_raw`.
pub fn emit_reports(bundle: &ReportBundle, dir: &Path, dump_raw: bool) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    write(
        dir,
        "rd_points.csv",
        &rd_points_csv(&bundle.rd_points)?,
        &mut written,
    )?;
    write(
        dir,
        "similarity.csv",
        &similarity_csv(&bundle.similarity)?,
        &mut written,
    )?;
    write(
        dir,
        "timing.json",
        &serde_json::to_vec_pretty(&bundle.timing)?,
        &mut written,
    )?;
    write(
        dir,
        "metadata.json",
        &serde_json::to_vec_pretty(&bundle.metadata)?,
        &mut written,
    )?;
    let mut summary = bundle.clone();
    for p in &mut summary.rd_points {
        p.tiles.clear();
    }
    write(
        dir,
        "bundle.json",
        &serde_json::to_vec_pretty(&summary)?,
        &mut written,
    )?;
    if dump_raw {
        write(dir, "raw.csv", &raw_csv(&bundle.rd_points)?, &mut written)?;
    }

    let metrics: BTreeSet<&str> = bundle
        .rd_points
        .iter()
        .flat_map(|p| p.metrics.iter().map(|m| m.metric.as_str()))
        .collect();
    for metric in metrics {
        let svg = render_rd_svg(&bundle.rd_points, metric);
        write(
            dir,
            &format!("rd_{}.svg", file_stem(metric)),
            svg.as_bytes(),
            &mut written,
        )?;
    }
    if !bundle.similarity.is_empty() {
        let svg = render_similarity_svg(&bundle.similarity);
        write(dir, "similarity.svg", svg.as_bytes(), &mut written)?;
    }
    Ok(written)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// A linear map from data range onto pixel range, padded when degenerate.
struct Axis {
    lo: f64,
    hi: f64,
    px_lo: f64,
    px_hi: f64,
}

impl Axis {
    fn new(values: impl IntoIterator<Item = f64>, px_lo: f64, px_hi: f64) -> Self {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for v in values {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if !lo.is_finite() || !hi.is_finite() {
            (lo, hi) = (0.0, 1.0);
        }
        let pad = if hi > lo {
            (hi - lo) * 0.05
        } else {
            lo.abs().max(1.0) * 0.05
        };
        Self {
            lo: lo - pad,
            hi: hi + pad,
            px_lo,
            px_hi,
        }
    }

    fn map(&self, v: f64) -> f64 {
        self.px_lo + (v - self.lo) / (self.hi - self.lo) * (self.px_hi - self.px_lo)
    }

    fn ticks(&self) -> Vec<f64> {
        (0..=4)
            .map(|i| self.lo + (self.hi - self.lo) * i as f64 / 4.0)
            .collect()
    }
}

fn frame(out: &mut String, title: &str, x: &Axis, y: &Axis, x_label: &str, y_label: &str) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(
        out,
        r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#
    );
    let _ = writeln!(
        out,
        r#"<text x="{}" y="28" text-anchor="middle" font-size="16">{}</text>"#,
        (LEFT + WIDTH - RIGHT) / 2.0,
        escape(title)
    );
    let (x0, x1, y0, y1) = (LEFT, WIDTH - RIGHT, HEIGHT - BOTTOM, TOP);
    let _ = writeln!(
        out,
        r#"<path d="M{x0},{y1} L{x0},{y0} L{x1},{y0}" fill="none" stroke="black"/>"#
    );
    for t in x.ticks() {
        let px = x.map(t);
        let _ = writeln!(
            out,
            r#"<line x1="{px:.1}" y1="{y0}" x2="{px:.1}" y2="{}" stroke="black"/><text x="{px:.1}" y="{}" text-anchor="middle">{t:.3}</text>"#,
            y0 + 5.0,
            y0 + 20.0
        );
    }
    for t in y.ticks() {
        let py = y.map(t);
        let _ = writeln!(
            out,
            r#"<line x1="{}" y1="{py:.1}" x2="{x0}" y2="{py:.1}" stroke="black"/><text x="{}" y="{:.1}" text-anchor="end">{t:.3}</text>"#,
            x0 - 5.0,
            x0 - 8.0,
            py + 4.0
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        (x0 + x1) / 2.0,
        HEIGHT - 25.0,
        escape(x_label)
    );
    let _ = writeln!(
        out,
        r#"<text x="20" y="{}" text-anchor="middle" transform="rotate(-90 20 {})">{}</text>"#,
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0,
        escape(y_label)
    );
}

fn legend(out: &mut String, entries: &[String]) {
    for (i, name) in entries.iter().enumerate() {
        let y = TOP + 10.0 + 20.0 * i as f64;
        let x = WIDTH - RIGHT + 15.0;
        let _ = writeln!(
            out,
            r#"<rect x="{x}" y="{}" width="12" height="12" fill="{}"/><text x="{}" y="{}">{}</text>"#,
            y - 10.0,
            PALETTE[i % PALETTE.len()],
            x + 18.0,
            y,
            escape(name)
        );
    }
}

fn codecs_in_order<'a>(names: impl Iterator<Item = &'a str>) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for n in names {
        if !out.iter().any(|o| o == n) {
            out.push(n.to_string());
        }
    }
    out
}

/// Rate-distortion polylines of `metric` against achieved bpp, one per codec.
pub fn render_rd_svg(points: &[RateDistortionPoint], metric: &str) -> String {
    let series: Vec<(String, Vec<(f64, f64)>)> =
        codecs_in_order(points.iter().map(|p| p.codec_id.as_str()))
            .into_iter()
            .map(|codec| {
                let mut pts: Vec<(f64, f64)> = points
                    .iter()
                    .filter(|p| p.codec_id == codec)
                    .filter_map(|p| p.metric(metric).map(|a| (p.achieved_bpp, a.mean)))
                    .collect();
                pts.sort_by(|a, b| a.0.total_cmp(&b.0));
                (codec, pts)
            })
            .filter(|(_, pts)| !pts.is_empty())
            .collect();
    let all = series.iter().flat_map(|(_, p)| p.iter().copied());
    let x = Axis::new(all.clone().map(|p| p.0), LEFT, WIDTH - RIGHT);
    let y = Axis::new(all.map(|p| p.1), HEIGHT - BOTTOM, TOP);
    let mut out = String::new();
    frame(
        &mut out,
        &format!("{metric} vs bitrate"),
        &x,
        &y,
        "bpp",
        metric,
    );
    for (i, (_, pts)) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let coords: Vec<String> = pts
            .iter()
            .map(|&(bx, my)| format!("{:.2},{:.2}", x.map(bx), y.map(my)))
            .collect();
        let _ = writeln!(
            out,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
            coords.join(" ")
        );
        for &(bx, my) in pts {
            let _ = writeln!(
                out,
                r#"<circle cx="{:.2}" cy="{:.2}" r="3.5" fill="{color}"/>"#,
                x.map(bx),
                y.map(my)
            );
        }
    }
    legend(
        &mut out,
        &series.iter().map(|(c, _)| c.clone()).collect::<Vec<_>>(),
    );
    out.push_str("</svg>\n");
    out
}

/// Per-tap groups of mean ± std whiskers, one whisker per codec.
pub fn render_similarity_svg(rows: &[SimilarityRow]) -> String {
    let codecs = codecs_in_order(rows.iter().map(|r| r.codec.as_str()));
    let taps = codecs_in_order(rows.iter().map(|r| r.tap_id.as_str()));
    let x = Axis {
        lo: 0.0,
        hi: taps.len() as f64,
        px_lo: LEFT,
        px_hi: WIDTH - RIGHT,
    };
    let y = Axis::new(
        rows.iter()
            .flat_map(|r| [r.mean - r.std, r.mean + r.std])
            .chain([1.0]),
        HEIGHT - BOTTOM,
        TOP,
    );
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(
        out,
        r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#
    );
    let _ = writeln!(
        out,
        r#"<text x="{}" y="28" text-anchor="middle" font-size="16">feature cosine similarity per tap</text>"#,
        (LEFT + WIDTH - RIGHT) / 2.0
    );
    let (x0, x1, y0, y1) = (LEFT, WIDTH - RIGHT, HEIGHT - BOTTOM, TOP);
    let _ = writeln!(
        out,
        r#"<path d="M{x0},{y1} L{x0},{y0} L{x1},{y0}" fill="none" stroke="black"/>"#
    );
    for t in y.ticks() {
        let py = y.map(t);
        let _ = writeln!(
            out,
            r#"<line x1="{}" y1="{py:.1}" x2="{x0}" y2="{py:.1}" stroke="black"/><text x="{}" y="{:.1}" text-anchor="end">{t:.3}</text>"#,
            x0 - 5.0,
            x0 - 8.0,
            py + 4.0
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="20" y="{}" text-anchor="middle" transform="rotate(-90 20 {})">cosine similarity</text>"#,
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0
    );
    let slot = 1.0 / (codecs.len() as f64 + 1.0);
    for (ti, tap) in taps.iter().enumerate() {
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{}" text-anchor="middle">{}</text>"#,
            x.map(ti as f64 + 0.5),
            y0 + 20.0,
            escape(tap)
        );
        for (ci, codec) in codecs.iter().enumerate() {
            let Some(r) = rows.iter().find(|r| &r.codec == codec && &r.tap_id == tap) else {
                continue;
            };
            let color = PALETTE[ci % PALETTE.len()];
            let px = x.map(ti as f64 + slot * (ci as f64 + 1.0));
            let _ = writeln!(
                out,
                r#"<line x1="{px:.2}" y1="{:.2}" x2="{px:.2}" y2="{:.2}" stroke="{color}" stroke-width="2"/><circle cx="{px:.2}" cy="{:.2}" r="4" fill="{color}"/>"#,
                y.map(r.mean - r.std),
                y.map(r.mean + r.std),
                y.map(r.mean)
            );
        }
    }
    legend(&mut out, &codecs);
    out.push_str("</svg>\n");
    out
}
