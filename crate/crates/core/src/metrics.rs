//! Pixel-space and feature-space quality metrics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::extractor::FeatureExtractor;
use crate::imagecore::{to_luma, Plane, Tile};

/// Flattened features captured at one tap point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub tap_id: String,
    pub values: Vec<f32>,
}

impl FeatureVector {
    pub fn new(tap_id: impl Into<String>, values: Vec<f32>) -> Result<Self> {
        let tap_id = tap_id.into();
        if values.is_empty() {
            return Err(Error::domain(format!("tap {tap_id} has no features")));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain(format!(
                "tap {tap_id} has non-finite features"
            )));
        }
        Ok(Self { tap_id, values })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    fn norm(&self) -> f64 {
        self.values
            .iter()
            .map(|&v| v as f64 * v as f64)
            .sum::<f64>()
            .sqrt()
    }
}

/// One feature vector per tap, ordered shallow to deep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSet {
    taps: Vec<FeatureVector>,
}

impl FeatureSet {
    pub fn new(taps: Vec<FeatureVector>) -> Result<Self> {
        for (i, t) in taps.iter().enumerate() {
            if taps[..i].iter().any(|o| o.tap_id == t.tap_id) {
                return Err(Error::validation(format!("duplicate tap id {}", t.tap_id)));
            }
        }
        Ok(Self { taps })
    }

    pub fn taps(&self) -> &[FeatureVector] {
        &self.taps
    }

    pub fn get(&self, tap_id: &str) -> Option<&FeatureVector> {
        self.taps.iter().find(|t| t.tap_id == tap_id)
    }

    pub fn len(&self) -> usize {
        self.taps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.taps.is_empty()
    }
}

/// Peak signal-to-noise ratio over all RGB samples; `+∞` for identical tiles.
pub fn psnr(reference: &Tile, test: &Tile) -> Result<f64> {
    if !reference.same_dims(test) {
        return Err(Error::domain(format!(
            "PSNR of {}x{} against {}x{}",
            reference.width(),
            reference.height(),
            test.width(),
            test.height()
        )));
    }
    let sse: u64 = reference
        .pixels()
        .iter()
        .zip(test.pixels())
        .map(|(&a, &b)| {
            let d = a as i64 - b as i64;
            (d * d) as u64
        })
        .sum();
    if sse == 0 {
        return Ok(f64::INFINITY);
    }
    let mse = sse as f64 / reference.pixels().len() as f64;
    Ok(10.0 * (255.0f64 * 255.0 / mse).log10())
}

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = (0.01 * 255.0) * (0.01 * 255.0);
pub const SSIM_C2: f64 = (0.03 * 255.0) * (0.03 * 255.0);
/// Per-scale exponents, finest scale first.
pub const MS_SSIM_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];

/// Normalized 1-D Gaussian taps of the SSIM window.
pub fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let half = (SSIM_WINDOW / 2) as f64;
    let mut g = [0.0; SSIM_WINDOW];
    for (i, v) in g.iter_mut().enumerate() {
        let d = i as f64 - half;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let sum: f64 = g.iter().sum();
    g.map(|v| v / sum)
}

/// Separable "valid" filtering with the SSIM window.
fn filter_valid(src: &[f64], w: usize, h: usize, g: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let ow = w - SSIM_WINDOW + 1;
    let oh = h - SSIM_WINDOW + 1;
    let mut rows = vec![0.0; ow * h];
    for y in 0..h {
        let line = &src[y * w..(y + 1) * w];
        for x in 0..ow {
            rows[y * ow + x] = line[x..x + SSIM_WINDOW]
                .iter()
                .zip(g)
                .map(|(a, b)| a * b)
                .sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for (k, gk) in g.iter().enumerate() {
            let line = &rows[(y + k) * ow..(y + k + 1) * ow];
            let dst = &mut out[y * ow..(y + 1) * ow];
            for (d, s) in dst.iter_mut().zip(line) {
                *d += gk * s;
            }
        }
    }
    out
}

/// SSIM at one scale: returns `(mean SSIM map, mean contrast-structure map)`.
pub fn ssim_scale(reference: &Plane<f64>, test: &Plane<f64>) -> Result<(f64, f64)> {
    if reference.width != test.width || reference.height != test.height {
        return Err(Error::domain("SSIM planes differ in size"));
    }
    let (w, h) = (reference.width, reference.height);
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(Error::domain(format!(
            "{w}x{h} plane is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window"
        )));
    }
    let g = gaussian_window();
    let x = &reference.samples;
    let y = &test.samples;
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(y).map(|(a, b)| a * b).collect();
    let mu_x = filter_valid(x, w, h, &g);
    let mu_y = filter_valid(y, w, h, &g);
    let e_xx = filter_valid(&xx, w, h, &g);
    let e_yy = filter_valid(&yy, w, h, &g);
    let e_xy = filter_valid(&xy, w, h, &g);

    let mut ssim_sum = 0.0;
    let mut cs_sum = 0.0;
    for i in 0..mu_x.len() {
        let (mx, my) = (mu_x[i], mu_y[i]);
        let sxx = e_xx[i] - mx * mx;
        let syy = e_yy[i] - my * my;
        let sxy = e_xy[i] - mx * my;
        let cs = (2.0 * sxy + SSIM_C2) / (sxx + syy + SSIM_C2);
        let l = (2.0 * mx * my + SSIM_C1) / (mx * mx + my * my + SSIM_C1);
        ssim_sum += l * cs;
        cs_sum += cs;
    }
    let n = mu_x.len() as f64;
    Ok((ssim_sum / n, cs_sum / n))
}

/// 2×2 mean pooling; odd trailing rows and columns are dropped.
pub fn downsample_2x(p: &Plane<f64>) -> Plane<f64> {
    let (w, h) = (p.width / 2, p.height / 2);
    let mut samples = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            samples.push(
                (p.get(2 * x, 2 * y)
                    + p.get(2 * x + 1, 2 * y)
                    + p.get(2 * x, 2 * y + 1)
                    + p.get(2 * x + 1, 2 * y + 1))
                    / 4.0,
            );
        }
    }
    Plane {
        width: w,
        height: h,
        samples,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MsSsim {
    pub value: f64,
    pub scales: usize,
    /// Fewer than five scales were used and the exponents renormalized.
    pub scale_reduced: bool,
}

fn usable_scales(min_side: usize) -> usize {
    let mut scales = 0;
    let mut side = min_side;
    while scales < MS_SSIM_WEIGHTS.len() && side >= SSIM_WINDOW {
        scales += 1;
        side /= 2;
    }
    scales
}

/// Multi-scale SSIM on BT.601 luma.
///
/// With `allow_scale_reduction`, images too small for five scales use as many
/// as fit and renormalize the exponents; otherwise they are a domain error.
pub fn ms_ssim_with(reference: &Tile, test: &Tile, allow_scale_reduction: bool) -> Result<MsSsim> {
    if !reference.same_dims(test) {
        return Err(Error::domain("MS-SSIM of tiles with different dimensions"));
    }
    let min_side = reference.width().min(reference.height()) as usize;
    let scales = usable_scales(min_side);
    let full = MS_SSIM_WEIGHTS.len();
    if scales < full && !allow_scale_reduction {
        return Err(Error::domain(format!(
            "MS-SSIM needs a side of at least {}, got {min_side}",
            SSIM_WINDOW << (full - 1)
        )));
    }
    if scales == 0 {
        return Err(Error::domain(format!(
            "image side {min_side} is smaller than the SSIM window"
        )));
    }
    let weights = &MS_SSIM_WEIGHTS[..scales];
    // The published exponents sum to 1.0001 and are used as-is at full depth.
    let total: f64 = if scales == full {
        1.0
    } else {
        weights.iter().sum()
    };

    let mut x = to_luma(reference).map(f64::from);
    let mut y = to_luma(test).map(f64::from);
    let mut value = 1.0;
    for (j, &wj) in weights.iter().enumerate() {
        let (ssim, cs) = ssim_scale(&x, &y)?;
        let term = if j + 1 == scales { ssim } else { cs };
        // A negative mean term has no real fractional power.
        value *= term.max(0.0).powf(wj / total);
        if j + 1 < scales {
            x = downsample_2x(&x);
            y = downsample_2x(&y);
        }
    }
    Ok(MsSsim {
        value: value.clamp(0.0, 1.0),
        scales,
        scale_reduced: scales < full,
    })
}

pub fn ms_ssim(reference: &Tile, test: &Tile) -> Result<f64> {
    ms_ssim_with(reference, test, false).map(|m| m.value)
}

/// Cosine similarity of two flattened feature vectors.
pub fn cosine_similarity(x: &FeatureVector, y: &FeatureVector) -> Result<f64> {
    if x.dim() != y.dim() {
        return Err(Error::domain(format!(
            "tap {}: dimension {} vs {}",
            x.tap_id,
            x.dim(),
            y.dim()
        )));
    }
    let (mut dot, mut xx, mut yy) = (0.0f64, 0.0f64, 0.0f64);
    for (&a, &b) in x.values.iter().zip(&y.values) {
        let (a, b) = (a as f64, b as f64);
        dot += a * b;
        xx += a * a;
        yy += b * b;
    }
    if xx == 0.0 || yy == 0.0 {
        return Err(Error::domain(format!(
            "tap {}: cosine similarity of a zero vector",
            x.tap_id
        )));
    }
    Ok((dot / (xx * yy).sqrt()).clamp(-1.0, 1.0))
}

/// Per-tap cosine similarities, in tap order.
pub type SimilarityProfile = Vec<(String, f64)>;

fn check_matching_taps(a: &FeatureSet, b: &FeatureSet) -> Result<()> {
    let same = a.len() == b.len()
        && a.taps()
            .iter()
            .zip(b.taps())
            .all(|(x, y)| x.tap_id == y.tap_id);
    if same {
        Ok(())
    } else {
        Err(Error::validation("feature sets expose different taps"))
    }
}

pub fn profile_from_features(a: &FeatureSet, b: &FeatureSet) -> Result<SimilarityProfile> {
    check_matching_taps(a, b)?;
    a.taps()
        .iter()
        .zip(b.taps())
        .map(|(x, y)| Ok((x.tap_id.clone(), cosine_similarity(x, y)?)))
        .collect()
}

/// Mean over taps of the squared distance between unit-normalized features.
pub fn distance_from_features(a: &FeatureSet, b: &FeatureSet) -> Result<f64> {
    check_matching_taps(a, b)?;
    if a.is_empty() {
        return Err(Error::domain("deep distance over zero taps"));
    }
    let mut total = 0.0;
    for (x, y) in a.taps().iter().zip(b.taps()) {
        if x.dim() != y.dim() {
            return Err(Error::domain(format!(
                "tap {}: dimension mismatch",
                x.tap_id
            )));
        }
        let (nx, ny) = (x.norm(), y.norm());
        if nx == 0.0 || ny == 0.0 {
            return Err(Error::domain(format!(
                "tap {}: cannot normalize a zero vector",
                x.tap_id
            )));
        }
        total += x
            .values
            .iter()
            .zip(&y.values)
            .map(|(&a, &b)| {
                let d = a as f64 / nx - b as f64 / ny;
                d * d
            })
            .sum::<f64>();
    }
    Ok(total / a.len() as f64)
}

fn extract_both(
    reference: &Tile,
    test: &Tile,
    extractor: &dyn FeatureExtractor,
) -> Result<(FeatureSet, FeatureSet)> {
    if !reference.same_dims(test) {
        return Err(Error::domain(
            "feature comparison of tiles with different dimensions",
        ));
    }
    let a = extractor
        .extract(reference)
        .map_err(|e| e.context("extracting reference features"))?;
    let b = extractor
        .extract(test)
        .map_err(|e| e.context("extracting test features"))?;
    Ok((a, b))
}

pub fn feature_similarity_profile(
    reference: &Tile,
    test: &Tile,
    extractor: &dyn FeatureExtractor,
) -> Result<SimilarityProfile> {
    let (a, b) = extract_both(reference, test, extractor)?;
    profile_from_features(&a, &b)
}

pub fn deep_feature_distance(
    reference: &Tile,
    test: &Tile,
    extractor: &dyn FeatureExtractor,
) -> Result<f64> {
    let (a, b) = extract_both(reference, test, extractor)?;
    distance_from_features(&a, &b)
}

/// Which metrics to compute for a pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricSelection {
    pub psnr: bool,
    pub ms_ssim: bool,
    pub deep_distance: bool,
    pub cosine: bool,
    pub allow_scale_reduction: bool,
}

impl Default for MetricSelection {
    fn default() -> Self {
        Self {
            psnr: true,
            ms_ssim: true,
            deep_distance: false,
            cosine: false,
            allow_scale_reduction: false,
        }
    }
}

impl MetricSelection {
    pub fn all() -> Self {
        Self {
            psnr: true,
            ms_ssim: true,
            deep_distance: true,
            cosine: true,
            allow_scale_reduction: false,
        }
    }

    pub fn needs_extractor(&self) -> bool {
        self.deep_distance || self.cosine
    }
}

/// Metrics for one (reference, test) pair; a field is set iff requested.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    #[serde(skip_serializing_if = "Option::is_none", with = "inf_as_string")]
    pub psnr: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ms_ssim: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub deep_distance: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cosine_per_tap: Option<SimilarityProfile>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

/// PSNR infinity travels as the string `"inf"` in JSON.
mod inf_as_string {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            Some(x) if x.is_infinite() => s.serialize_str("inf"),
            Some(x) => s.serialize_f64(*x),
            None => s.serialize_none(),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Str(String),
        }
        match Option::<Raw>::deserialize(d)? {
            None => Ok(None),
            Some(Raw::Num(x)) => Ok(Some(x)),
            Some(Raw::Str(s)) if s == "inf" => Ok(Some(f64::INFINITY)),
            Some(Raw::Str(s)) => Err(serde::de::Error::custom(format!("bad PSNR value {s:?}"))),
        }
    }
}

/// Computes the selected metrics. `reference_features` may carry features
/// already extracted from `reference` so corpora are not re-extracted per
/// operating point.
pub fn evaluate_pair(
    reference: &Tile,
    test: &Tile,
    selection: &MetricSelection,
    extractor: Option<&dyn FeatureExtractor>,
    reference_features: Option<&FeatureSet>,
) -> Result<MetricReport> {
    let mut report = MetricReport::default();
    if selection.psnr {
        report.psnr = Some(psnr(reference, test)?);
    }
    if selection.ms_ssim {
        let m = ms_ssim_with(reference, test, selection.allow_scale_reduction)?;
        if m.scale_reduced {
            report
                .warnings
                .push(format!("ms_ssim used {} scales", m.scales));
        }
        report.ms_ssim = Some(m.value);
    }
    if selection.needs_extractor() {
        let extractor = extractor
            .ok_or_else(|| Error::validation("feature metrics requested without an extractor"))?;
        if !reference.same_dims(test) {
            return Err(Error::domain(
                "feature comparison of tiles with different dimensions",
            ));
        }
        let owned;
        let a = match reference_features {
            Some(f) => f,
            None => {
                owned = extractor
                    .extract(reference)
                    .map_err(|e| e.context("extracting reference features"))?;
                &owned
            }
        };
        let b = extractor
            .extract(test)
            .map_err(|e| e.context("extracting test features"))?;
        if selection.cosine {
            report.cosine_per_tap = Some(profile_from_features(a, &b)?);
        }
        if selection.deep_distance {
            report.deep_distance = Some(distance_from_features(a, &b)?);
        }
    }
    Ok(report)
}
