//! Foreground detection, non-overlapping tile sampling, corpus manifests and
//! subject-grouped folds.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imagecore::{read_pnm_header, Tile};
use crate::rng::SplitMix64;

pub const DEFAULT_WHITE_THRESHOLD: u8 = 220;
pub const DEFAULT_TILE_SIZE: u32 = 224;
pub const DEFAULT_MIN_COVERAGE: f64 = 0.30;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    pub width: u32,
    pub height: u32,
    pub bits: Vec<bool>,
}

impl Mask {
    pub fn new(width: u32, height: u32, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != width as usize * height as usize {
            return Err(Error::domain("mask buffer does not match its dimensions"));
        }
        Ok(Self {
            width,
            height,
            bits,
        })
    }

    pub fn full(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            bits: vec![true; width as usize * height as usize],
        }
    }

    /// Nonzero pixels of an annotation raster are foreground.
    pub fn from_annotation(tile: &Tile) -> Self {
        Self {
            width: tile.width(),
            height: tile.height(),
            bits: tile
                .pixels()
                .chunks_exact(3)
                .map(|p| p.iter().any(|&v| v > 0))
                .collect(),
        }
    }

    fn integral(&self) -> Vec<u64> {
        let (w, h) = (self.width as usize, self.height as usize);
        let mut sum = vec![0u64; (w + 1) * (h + 1)];
        for y in 0..h {
            let mut row = 0u64;
            for x in 0..w {
                row += self.bits[y * w + x] as u64;
                sum[(y + 1) * (w + 1) + x + 1] = sum[y * (w + 1) + x + 1] + row;
            }
        }
        sum
    }
}

/// Background iff every channel is at least `white_threshold`.
pub fn foreground_mask(image: &Tile, white_threshold: u8) -> Mask {
    Mask {
        width: image.width(),
        height: image.height(),
        bits: image
            .pixels()
            .chunks_exact(3)
            .map(|p| p.iter().min().copied().unwrap_or(0) < white_threshold)
            .collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SampleResult {
    pub origins: Vec<(u32, u32)>,
    /// Fewer than the requested count could be placed.
    pub shortfall: bool,
}

/// Draws up to `count` non-overlapping `size`×`size` tiles on a grid of
/// size-aligned cells. Each accepted tile has at least
/// `ceil(min_coverage · size²)` foreground mask pixels. Rejection sampling
/// stops after `100 · count` draws or once every cell has been tried.
pub fn sample_tiles(
    image: &Tile,
    mask: &Mask,
    size: u32,
    count: usize,
    min_coverage: f64,
    seed: u64,
) -> Result<SampleResult> {
    if size == 0 || size > image.width().min(image.height()) {
        return Err(Error::domain(format!(
            "tile size {size} does not fit a {}x{} image",
            image.width(),
            image.height()
        )));
    }
    if !(0.0..=1.0).contains(&min_coverage) {
        return Err(Error::domain(format!(
            "coverage {min_coverage} outside [0, 1]"
        )));
    }
    if mask.width != image.width() || mask.height != image.height() {
        return Err(Error::domain("mask and image dimensions differ"));
    }
    let cols = image.width() / size;
    let rows = image.height() / size;
    let cells = cols as u64 * rows as u64;
    let area = size as u64 * size as u64;
    let required = (min_coverage * area as f64 - 1e-9).ceil().max(0.0) as u64;
    let integral = mask.integral();
    let iw = mask.width as usize + 1;
    let covered = |x: u32, y: u32| -> u64 {
        let (x0, y0, x1, y1) = (
            x as usize,
            y as usize,
            (x + size) as usize,
            (y + size) as usize,
        );
        integral[y1 * iw + x1] + integral[y0 * iw + x0]
            - integral[y0 * iw + x1]
            - integral[y1 * iw + x0]
    };

    let mut rng = SplitMix64::new(seed);
    let mut tried: BTreeSet<u64> = BTreeSet::new();
    let mut origins = Vec::new();
    let max_attempts = 100u64.saturating_mul(count as u64);
    let mut attempts = 0;
    while origins.len() < count && attempts < max_attempts && (tried.len() as u64) < cells {
        attempts += 1;
        let cell = rng.below(cells);
        if !tried.insert(cell) {
            continue;
        }
        let (cx, cy) = ((cell % cols as u64) as u32, (cell / cols as u64) as u32);
        let (x, y) = (cx * size, cy * size);
        if covered(x, y) >= required {
            origins.push((x, y));
        }
    }
    Ok(SampleResult {
        shortfall: origins.len() < count,
        origins,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TileRecord {
    pub subject_id: String,
    pub class_label: Option<String>,
    pub path: String,
    pub width: u32,
    pub height: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct CorpusManifest {
    pub name: String,
    pub records: Vec<TileRecord>,
}

impl CorpusManifest {
    /// Sorts records by `(subject_id, path)` and checks that no subject
    /// carries two class labels.
    pub fn new(name: impl Into<String>, mut records: Vec<TileRecord>) -> Result<Self> {
        for r in &records {
            if r.subject_id.is_empty() {
                return Err(Error::validation(format!(
                    "record {} has an empty subject",
                    r.path
                )));
            }
        }
        records.sort_by(|a, b| (&a.subject_id, &a.path).cmp(&(&b.subject_id, &b.path)));
        let mut classes: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
        for r in &records {
            if let Some(c) = &r.class_label {
                classes.entry(&r.subject_id).or_default().insert(c);
            }
        }
        let offenders: Vec<String> = classes
            .iter()
            .filter(|(_, c)| c.len() > 1)
            .map(|(s, c)| format!("{s} ({})", c.iter().copied().collect::<Vec<_>>().join(", ")))
            .collect();
        if !offenders.is_empty() {
            return Err(Error::validation(format!(
                "subjects with conflicting classes: {}",
                offenders.join("; ")
            )));
        }
        Ok(Self {
            name: name.into(),
            records,
        })
    }

    pub fn subjects(&self) -> BTreeSet<&str> {
        self.records.iter().map(|r| r.subject_id.as_str()).collect()
    }

    /// One JSON object per line.
    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r)?);
            out.push('\n');
        }
        Ok(out)
    }

    pub fn from_jsonl(name: impl Into<String>, text: &str) -> Result<Self> {
        let records = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| {
                serde_json::from_str(l)
                    .map_err(|e| Error::validation(format!("manifest line {}: {e}", i + 1)))
            })
            .collect::<Result<Vec<TileRecord>>>()?;
        Self::new(name, records)
    }
}

/// How subjects (and optionally classes) are read off the directory tree.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Layout {
    /// `root/<subject>/.../tile`
    #[default]
    SubjectDir,
    /// `root/<class>/<subject>/.../tile`
    ClassSubjectDir,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestSpec {
    pub root: PathBuf,
    /// Glob patterns matched against the path relative to `root`.
    pub patterns: Vec<String>,
    pub layout: Layout,
    /// Explicit subject → class labels; overrides directory-derived classes.
    pub labels: BTreeMap<String, String>,
}

impl ManifestSpec {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self {
            root: root.into(),
            patterns: vec!["**/*.ppm".to_string()],
            layout: Layout::SubjectDir,
            labels: BTreeMap::new(),
        }
    }
}

fn read_dims(path: &Path) -> Result<(u32, u32)> {
    use std::io::Read;
    let mut head = Vec::with_capacity(512);
    std::fs::File::open(path)
        .and_then(|f| f.take(512).read_to_end(&mut head))
        .map_err(|e| Error::io(path, e))?;
    let h = read_pnm_header(&head).map_err(|e| e.context(path.display().to_string()))?;
    Ok((h.width, h.height))
}

/// Walks `spec.root` and builds a sorted manifest of matching PPM tiles.
pub fn build_manifest(spec: &ManifestSpec) -> Result<CorpusManifest> {
    if !spec.root.is_dir() {
        return Err(Error::validation(format!(
            "manifest root {} is not a directory",
            spec.root.display()
        )));
    }
    let patterns = spec
        .patterns
        .iter()
        .map(|p| glob::Pattern::new(p).map_err(|e| Error::validation(format!("pattern {p}: {e}"))))
        .collect::<Result<Vec<_>>>()?;
    let opts = glob::MatchOptions {
        require_literal_separator: true,
        ..Default::default()
    };
    let mut records = Vec::new();
    for entry in walkdir::WalkDir::new(&spec.root).sort_by_file_name() {
        let entry = entry
            .map_err(|e| Error::validation(format!("walking {}: {e}", spec.root.display())))?;
        if !entry.file_type().is_file() {
            continue;
        }
        let rel = entry
            .path()
            .strip_prefix(&spec.root)
            .expect("walk stays under root");
        let rel_str = rel.to_string_lossy().replace('\\', "/");
        if !patterns.iter().any(|p| p.matches_with(&rel_str, opts)) {
            continue;
        }
        let parts: Vec<&str> = rel_str.split('/').collect();
        let (class_dir, subject) = match spec.layout {
            Layout::SubjectDir if parts.len() >= 2 => (None, parts[0]),
            Layout::ClassSubjectDir if parts.len() >= 3 => (Some(parts[0]), parts[1]),
            _ => {
                return Err(Error::validation(format!(
                    "{rel_str} is not inside a subject directory"
                )))
            }
        };
        let class_label = spec
            .labels
            .get(subject)
            .cloned()
            .or_else(|| class_dir.map(str::to_string));
        let (width, height) = read_dims(entry.path())?;
        records.push(TileRecord {
            subject_id: subject.to_string(),
            class_label,
            path: rel_str,
            width,
            height,
        });
    }
    let name = spec
        .root
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    CorpusManifest::new(name, records)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FoldAssignment {
    pub k: usize,
    pub assignment: BTreeMap<String, usize>,
}

impl FoldAssignment {
    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in self.assignment.values() {
            sizes[f] += 1;
        }
        sizes
    }

    pub fn subjects_in(&self, fold: usize) -> Vec<&str> {
        self.assignment
            .iter()
            .filter(|(_, &f)| f == fold)
            .map(|(s, _)| s.as_str())
            .collect()
    }
}

/// Seeded shuffle of the distinct subjects, dealt round-robin into `k` folds.
pub fn grouped_folds(manifest: &CorpusManifest, k: usize, seed: u64) -> Result<FoldAssignment> {
    let mut subjects: Vec<&str> = manifest.subjects().into_iter().collect();
    if k == 0 || k > subjects.len() {
        return Err(Error::domain(format!(
            "cannot split {} subjects into {k} folds",
            subjects.len()
        )));
    }
    SplitMix64::new(seed).shuffle(&mut subjects);
    let assignment = subjects
        .into_iter()
        .enumerate()
        .map(|(i, s)| (s.to_string(), i % k))
        .collect();
    Ok(FoldAssignment { k, assignment })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imagecore::write_pnm;
    use proptest::prelude::*;

    fn record(subject: &str, class: Option<&str>, path: &str) -> TileRecord {
        TileRecord {
            subject_id: subject.into(),
            class_label: class.map(Into::into),
            path: path.into(),
            width: 224,
            height: 224,
        }
    }

    #[test]
    fn threshold_rule() {
        let white = Tile::filled(4, 4, [255; 3]).unwrap();
        assert!(foreground_mask(&white, 220).bits.iter().all(|b| !b));
        let tissue = Tile::filled(4, 4, [100, 50, 60]).unwrap();
        assert!(foreground_mask(&tissue, 220).bits.iter().all(|&b| b));
        let edge = Tile::filled(1, 1, [230, 230, 219]).unwrap();
        assert!(foreground_mask(&edge, 220).bits[0]);
        let bg = Tile::filled(1, 1, [220, 230, 221]).unwrap();
        assert!(!foreground_mask(&bg, 220).bits[0]);
    }

    #[test]
    fn single_placement() {
        let img = Tile::filled(224, 224, [10; 3]).unwrap();
        let r = sample_tiles(&img, &Mask::full(224, 224), 224, 1, 0.3, 1).unwrap();
        assert_eq!(r.origins, vec![(0, 0)]);
        assert!(!r.shortfall);
    }

    #[test]
    fn capacity_shortfall() {
        let img = Tile::filled(20, 20, [10; 3]).unwrap();
        let r = sample_tiles(&img, &Mask::full(20, 20), 10, 10, 0.0, 7).unwrap();
        assert_eq!(r.origins.len(), 4);
        assert!(r.shortfall);
    }

    #[test]
    fn same_seed_same_origins() {
        let img = Tile::filled(200, 160, [10; 3]).unwrap();
        let m = Mask::full(200, 160);
        let a = sample_tiles(&img, &m, 32, 8, 0.3, 99).unwrap();
        let b = sample_tiles(&img, &m, 32, 8, 0.3, 99).unwrap();
        assert_eq!(a, b);
        let c = sample_tiles(&img, &m, 32, 8, 0.3, 100).unwrap();
        assert_ne!(a.origins, c.origins);
    }

    #[test]
    fn oversize_tile_rejected() {
        let img = Tile::filled(20, 30, [10; 3]).unwrap();
        assert!(sample_tiles(&img, &Mask::full(20, 30), 21, 1, 0.3, 0).is_err());
        assert!(sample_tiles(&img, &Mask::full(20, 30), 10, 1, 1.5, 0).is_err());
    }

    #[test]
    fn coverage_boundary_is_inclusive() {
        // 10x10 tile needing 30 foreground pixels; left tile has exactly 30.
        let img = Tile::filled(20, 10, [10; 3]).unwrap();
        let mut bits = vec![false; 200];
        for i in 0..30 {
            bits[(i / 10) * 20 + i % 10] = true;
        }
        for i in 0..29 {
            bits[(i / 10) * 20 + 10 + i % 10] = true;
        }
        let m = Mask::new(20, 10, bits).unwrap();
        let r = sample_tiles(&img, &m, 10, 2, 0.3, 3).unwrap();
        assert_eq!(r.origins, vec![(0, 0)]);
        assert!(r.shortfall);
    }

    #[test]
    fn conflicting_classes_rejected() {
        let err = CorpusManifest::new(
            "c",
            vec![
                record("p1", Some("tumor"), "a"),
                record("p1", Some("normal"), "b"),
            ],
        )
        .unwrap_err();
        assert!(err.to_string().contains("p1"), "{err}");
    }

    #[test]
    fn manifest_jsonl_round_trip() {
        let m = CorpusManifest::new(
            "c",
            vec![record("b", None, "x.ppm"), record("a", Some("t"), "y.ppm")],
        )
        .unwrap();
        assert_eq!(m.records[0].subject_id, "a");
        let text = m.to_jsonl().unwrap();
        assert!(text
            .lines()
            .next()
            .unwrap()
            .contains("\"subject_id\":\"a\""));
        assert_eq!(CorpusManifest::from_jsonl("c", &text).unwrap(), m);
    }

    #[test]
    fn manifest_from_directory() {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().join("corpus");
        std::fs::create_dir(&root).unwrap();
        let empty = build_manifest(&ManifestSpec::new(&root)).unwrap();
        assert!(empty.records.is_empty());

        let tile = Tile::filled(8, 6, [1, 2, 3]).unwrap();
        for (subject, file) in [("s2", "b.ppm"), ("s1", "z.ppm"), ("s1", "a.ppm")] {
            std::fs::create_dir_all(root.join(subject)).unwrap();
            std::fs::write(root.join(subject).join(file), write_pnm(&tile)).unwrap();
        }
        std::fs::write(root.join("s1").join("notes.txt"), "skip me").unwrap();
        let m = build_manifest(&ManifestSpec::new(&root)).unwrap();
        assert_eq!(m.records.len(), 3);
        assert_eq!(m.subjects().len(), 2);
        let paths: Vec<&str> = m.records.iter().map(|r| r.path.as_str()).collect();
        assert_eq!(paths, vec!["s1/a.ppm", "s1/z.ppm", "s2/b.ppm"]);
        assert_eq!((m.records[0].width, m.records[0].height), (8, 6));
    }

    #[test]
    fn class_layout_detects_conflicts() {
        let dir = tempfile::tempdir().unwrap();
        let tile = Tile::filled(4, 4, [1, 2, 3]).unwrap();
        for (class, subject) in [("tumor", "p1"), ("normal", "p1"), ("normal", "p2")] {
            let d = dir.path().join(class).join(subject);
            std::fs::create_dir_all(&d).unwrap();
            std::fs::write(d.join("t.ppm"), write_pnm(&tile)).unwrap();
        }
        let mut spec = ManifestSpec::new(dir.path());
        spec.layout = Layout::ClassSubjectDir;
        let err = build_manifest(&spec).unwrap_err();
        assert!(err.to_string().contains("p1"), "{err}");
        assert!(!err.to_string().contains("p2"), "{err}");
    }

    fn manifest_with_subjects(n: usize) -> CorpusManifest {
        let records = (0..n)
            .flat_map(|i| {
                (0..2).map(move |j| record(&format!("subj{i:03}"), None, &format!("{i}/{j}.ppm")))
            })
            .collect();
        CorpusManifest::new("m", records).unwrap()
    }

    #[test]
    fn fold_sizes() {
        let f = grouped_folds(&manifest_with_subjects(5), 5, 1).unwrap();
        assert_eq!(f.fold_sizes(), vec![1; 5]);
        let f = grouped_folds(&manifest_with_subjects(96), 5, 1).unwrap();
        assert_eq!(f.fold_sizes(), vec![20, 19, 19, 19, 19]);
        assert!(grouped_folds(&manifest_with_subjects(3), 4, 1).is_err());
    }

    proptest! {
        #[test]
        fn sampled_tiles_never_overlap_and_meet_coverage(
            w in 16u32..120, h in 16u32..120, size in 4u32..16,
            count in 1usize..20, cov in 0.0f64..1.0, seed in any::<u64>(),
        ) {
            let mut rng = SplitMix64::new(seed);
            let bits: Vec<bool> = (0..w * h).map(|_| rng.next_f64() < 0.6).collect();
            let mask = Mask::new(w, h, bits).unwrap();
            let img = Tile::filled(w, h, [0; 3]).unwrap();
            let r = sample_tiles(&img, &mask, size, count, cov, seed).unwrap();
            prop_assert!(r.origins.len() <= count);
            let need = (cov * (size * size) as f64 - 1e-9).ceil() as usize;
            for (i, &(x, y)) in r.origins.iter().enumerate() {
                prop_assert!(x + size <= w && y + size <= h);
                let n = (y..y + size)
                    .flat_map(|yy| (x..x + size).map(move |xx| (xx, yy)))
                    .filter(|&(xx, yy)| mask.bits[(yy * w + xx) as usize])
                    .count();
                prop_assert!(n >= need);
                for &(x2, y2) in &r.origins[..i] {
                    prop_assert!(x.abs_diff(x2) >= size || y.abs_diff(y2) >= size);
                }
            }
        }

        #[test]
        fn folds_partition_subjects(n in 1usize..60, k in 1usize..8, seed in any::<u64>()) {
            prop_assume!(k <= n);
            let m = manifest_with_subjects(n);
            let f = grouped_folds(&m, k, seed).unwrap();
            prop_assert_eq!(f.assignment.len(), n);
            let sizes = f.fold_sizes();
            let (lo, hi) = (sizes.iter().min().unwrap(), sizes.iter().max().unwrap());
            prop_assert!(hi - lo <= 1);
        }
    }
}
