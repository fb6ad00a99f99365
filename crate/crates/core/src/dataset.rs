//! Dataset manifests: scanning clip directories, trimming, stratified
//! train/val/test splits and per-class statistics.

use std::collections::{BTreeMap, HashSet};
use std::fmt::{self, Write as _};
use std::fs;
use std::path::{Component, Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::clip_io::{self, ClipDescriptor};
use crate::error::{Error, Result};
use crate::model::{ClassLabel, VideoClip};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

/// Where a derived clip came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub source: String,
    #[serde(default)]
    pub transform: Option<String>,
    #[serde(default)]
    pub segment: Option<(usize, usize)>,
}

impl Provenance {
    pub fn transform(source: &str, transform: &str) -> Self {
        Provenance {
            source: source.to_string(),
            transform: Some(transform.to_string()),
            segment: None,
        }
    }

    pub fn segment(source: &str, start: usize, end: usize) -> Self {
        Provenance {
            source: source.to_string(),
            transform: None,
            segment: Some((start, end)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub clip_id: String,
    /// Clip directory, relative to the directory holding the manifest.
    pub path: String,
    pub label: ClassLabel,
    pub frame_count: usize,
    pub width: usize,
    pub height: usize,
    pub fps: f64,
    #[serde(default)]
    pub split: Option<Split>,
    #[serde(default)]
    pub provenance: Option<Provenance>,
}

impl ManifestEntry {
    pub fn from_descriptor(clip_id: &str, path: String, desc: &ClipDescriptor) -> Self {
        ManifestEntry {
            clip_id: clip_id.to_string(),
            path,
            label: desc.label,
            frame_count: desc.frame_count,
            width: desc.width,
            height: desc.height,
            fps: desc.fps,
            split: None,
            provenance: None,
        }
    }

    /// Entry describing `clip` stored at `path`.
    pub fn for_clip(clip: &VideoClip, path: String) -> Self {
        ManifestEntry::from_descriptor(clip.clip_id(), path, &ClipDescriptor::of(clip))
    }

    pub fn duration_secs(&self) -> f64 {
        self.frame_count as f64 / self.fps
    }

    fn validate(&self) -> Result<()> {
        if self.frame_count == 0 || self.width == 0 || self.height == 0 {
            return Err(Error::Clip {
                clip_id: self.clip_id.clone(),
                message: "frame_count, width and height must be at least 1".into(),
            });
        }
        if !(self.fps.is_finite() && self.fps > 0.0) {
            return Err(Error::Clip {
                clip_id: self.clip_id.clone(),
                message: format!("fps must be positive, got {}", self.fps),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub schema_version: u32,
    entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn new(entries: Vec<ManifestEntry>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(entries.len());
        for e in &entries {
            e.validate()?;
            if !seen.insert(e.clip_id.as_str()) {
                return Err(Error::DuplicateId(e.clip_id.clone()));
            }
        }
        Ok(DatasetManifest {
            schema_version: SCHEMA_VERSION,
            entries,
        })
    }

    pub fn empty() -> Self {
        DatasetManifest {
            schema_version: SCHEMA_VERSION,
            entries: Vec::new(),
        }
    }

    pub fn entries(&self) -> &[ManifestEntry] {
        &self.entries
    }

    pub fn into_entries(self) -> Vec<ManifestEntry> {
        self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn count_by_class(&self) -> [usize; ClassLabel::COUNT] {
        let mut counts = [0; ClassLabel::COUNT];
        for e in &self.entries {
            counts[e.label.index()] += 1;
        }
        counts
    }

    pub fn from_json(text: &str, path: &Path) -> Result<Self> {
        let raw: DatasetManifest = serde_json::from_str(text).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })?;
        if raw.schema_version != SCHEMA_VERSION {
            return Err(Error::Format {
                path: path.to_path_buf(),
                message: format!("unsupported schema_version {}", raw.schema_version),
            });
        }
        DatasetManifest::new(raw.entries)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes") + "\n"
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        DatasetManifest::from_json(&text, path)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        clip_io::write_atomic(path, self.to_json().as_bytes())
    }

    /// Rewrites entry paths that are relative to `from` so they are relative
    /// to `to` instead (or absolute when no relative form exists).
    pub fn rebase(mut self, from: &Path, to: &Path) -> Self {
        for e in &mut self.entries {
            let abs = absolute(&from.join(&e.path));
            e.path = path_string(&relative_to(&abs, &absolute(to)));
        }
        self
    }
}

/// Directory of a manifest entry given the directory holding the manifest.
pub fn clip_dir(base: &Path, entry: &ManifestEntry) -> PathBuf {
    base.join(&entry.path)
}

/// Directory containing the manifest file at `manifest_path`.
pub fn manifest_base(manifest_path: &Path) -> PathBuf {
    match manifest_path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

pub(crate) fn path_string(p: &Path) -> String {
    p.components()
        .map(|c| c.as_os_str().to_string_lossy().into_owned())
        .collect::<Vec<_>>()
        .join("/")
        .replace("//", "/")
}

fn absolute(p: &Path) -> PathBuf {
    let p = if p.is_absolute() {
        p.to_path_buf()
    } else {
        std::env::current_dir().unwrap_or_default().join(p)
    };
    let mut out = PathBuf::new();
    for c in p.components() {
        match c {
            Component::CurDir => {}
            Component::ParentDir => {
                out.pop();
            }
            other => out.push(other),
        }
    }
    out
}

fn relative_to(path: &Path, base: &Path) -> PathBuf {
    let p: Vec<_> = path.components().collect();
    let b: Vec<_> = base.components().collect();
    let common = p.iter().zip(&b).take_while(|(x, y)| x == y).count();
    if common == 0 {
        return path.to_path_buf();
    }
    let mut out = PathBuf::new();
    for _ in common..b.len() {
        out.push("..");
    }
    for c in &p[common..] {
        out.push(c);
    }
    if out.as_os_str().is_empty() {
        out.push(".");
    }
    out
}

fn sorted_subdirs(dir: &Path) -> Result<Vec<(String, PathBuf)>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        let name = entry.file_name().to_string_lossy().into_owned();
        if name.starts_with('.') || !path.is_dir() {
            continue;
        }
        out.push((name, path));
    }
    out.sort();
    Ok(out)
}

/// Catalogs `root/<ClassName>/<clip_id>/` directories. Entry paths are
/// relative to `root`.
pub fn scan(root: &Path) -> Result<DatasetManifest> {
    let mut entries = Vec::new();
    for (class_name, class_dir) in sorted_subdirs(root)? {
        let label: ClassLabel = ClassLabel::ALL
            .into_iter()
            .find(|l| l.name() == class_name)
            .ok_or_else(|| Error::UnknownClass(class_name.clone()))?;
        for (clip_id, dir) in sorted_subdirs(&class_dir)? {
            let desc = clip_io::read_descriptor(&dir).map_err(|e| Error::Clip {
                clip_id: clip_id.clone(),
                message: e.to_string(),
            })?;
            if desc.label != label {
                return Err(Error::Clip {
                    clip_id,
                    message: format!("descriptor label {} but stored under {}", desc.label, label),
                });
            }
            entries.push(ManifestEntry::from_descriptor(
                &clip_id,
                format!("{class_name}/{clip_id}"),
                &desc,
            ));
        }
    }
    entries.sort_by(|a, b| a.clip_id.cmp(&b.clip_id));
    DatasetManifest::new(entries)
}

/// Cuts `clip` into the half-open frame ranges `segments`. Output ids are
/// `<source>_s<start>-<end>`.
pub fn trim(clip: &VideoClip, segments: &[(usize, usize)]) -> Result<Vec<(VideoClip, Provenance)>> {
    if segments.is_empty() {
        return Err(Error::arg(format!("clip {}: no segments given", clip.clip_id())));
    }
    let n = clip.frame_count();
    segments
        .iter()
        .map(|&(start, end)| {
            if start >= end || end > n {
                return Err(Error::arg(format!(
                    "clip {}: segment [{start}, {end}) is not within [0, {n})",
                    clip.clip_id()
                )));
            }
            let out = VideoClip::new(
                format!("{}_s{start}-{end}", clip.clip_id()),
                clip.label(),
                clip.fps(),
                clip.frames()[start..end].to_vec(),
            )?;
            Ok((out, Provenance::segment(clip.clip_id(), start, end)))
        })
        .collect()
}

/// Parses `clip_id start_frame end_frame` lines. Blank lines and `#`
/// comments are skipped; a clip may appear on several lines.
pub fn parse_segments(text: &str) -> Result<BTreeMap<String, Vec<(usize, usize)>>> {
    let mut out: BTreeMap<String, Vec<(usize, usize)>> = BTreeMap::new();
    for (k, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        let parsed = match fields.as_slice() {
            [id, s, e] => s.parse::<usize>().ok().zip(e.parse::<usize>().ok()).map(|r| (*id, r)),
            _ => None,
        };
        let (id, range) = parsed.ok_or_else(|| {
            Error::arg(format!("segments line {}: expected `clip_id start end`", k + 1))
        })?;
        out.entry(id.to_string()).or_default().push(range);
    }
    Ok(out)
}

/// Train/val/test fractions plus the shuffle seed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitRatios {
    train: f64,
    val: f64,
    test: f64,
    pub seed: u64,
}

impl SplitRatios {
    pub fn new(train: f64, val: f64, test: f64, seed: u64) -> Result<Self> {
        for (name, v) in [("train", train), ("val", val), ("test", test)] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::arg(format!("{name} fraction {v} is not in (0, 1)")));
            }
        }
        if (train + val + test - 1.0).abs() > 1e-9 {
            return Err(Error::arg(format!(
                "split fractions sum to {}, expected 1",
                train + val + test
            )));
        }
        Ok(SplitRatios {
            train,
            val,
            test,
            seed,
        })
    }

    /// Parses `train:val:test` weights such as `70:15:15`, normalized by
    /// their sum.
    pub fn parse(spec: &str, seed: u64) -> Result<Self> {
        let parts: Vec<f64> = spec
            .split(':')
            .map(|p| p.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|_| Error::arg(format!("bad ratio `{spec}`, expected e.g. 70:15:15")))?;
        let [a, b, c] = parts[..] else {
            return Err(Error::arg(format!("bad ratio `{spec}`, expected three parts")));
        };
        let sum = a + b + c;
        if sum.is_nan() || sum <= 0.0 {
            return Err(Error::arg(format!("bad ratio `{spec}`")));
        }
        SplitRatios::new(a / sum, b / sum, c / sum, seed)
    }

    pub fn train(&self) -> f64 {
        self.train
    }
    pub fn val(&self) -> f64 {
        self.val
    }
    pub fn test(&self) -> f64 {
        self.test
    }

    /// `(train, val, test)` sizes for a class of `n` clips. Train takes the
    /// floor of its share; the remainder is divided between test and val in
    /// proportion, with test rounded up.
    pub fn counts(&self, n: usize) -> (usize, usize, usize) {
        const EPS: f64 = 1e-9;
        let train = ((self.train * n as f64) + EPS).floor() as usize;
        let train = train.min(n);
        let rest = n - train;
        let test_share = self.test / (self.test + self.val);
        let test = ((rest as f64 * test_share) - EPS).ceil().max(0.0) as usize;
        let test = test.min(rest);
        (train, rest - test, test)
    }
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios {
            train: 0.70,
            val: 0.15,
            test: 0.15,
            seed: 0,
        }
    }
}

impl FromStr for SplitRatios {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SplitRatios::parse(s, 0)
    }
}

/// Stratified split: each class is shuffled independently with a seeded
/// generator and cut into train, test and val runs.
pub fn split(manifest: &DatasetManifest, ratios: &SplitRatios, force: bool) -> Result<DatasetManifest> {
    if !force {
        if let Some(e) = manifest.entries.iter().find(|e| e.split.is_some()) {
            return Err(Error::Clip {
                clip_id: e.clip_id.clone(),
                message: "already has a split assignment (use force to reassign)".into(),
            });
        }
    }
    let mut entries = manifest.entries.clone();
    entries.sort_by(|a, b| a.clip_id.cmp(&b.clip_id));
    for label in ClassLabel::ALL {
        let mut members: Vec<usize> = entries
            .iter()
            .enumerate()
            .filter(|(_, e)| e.label == label)
            .map(|(k, _)| k)
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(ratios.seed);
        rng.set_stream(label.index() as u64);
        members.shuffle(&mut rng);
        let (train, _val, test) = ratios.counts(members.len());
        for (rank, &k) in members.iter().enumerate() {
            entries[k].split = Some(if rank < train {
                Split::Train
            } else if rank < train + test {
                Split::Test
            } else {
                Split::Val
            });
        }
    }
    DatasetManifest::new(entries)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Summary {
    pub min: f64,
    pub max: f64,
    pub avg: f64,
}

impl Summary {
    fn of(values: impl IntoIterator<Item = f64>) -> Option<Summary> {
        let mut n = 0usize;
        let (mut min, mut max, mut sum) = (f64::INFINITY, f64::NEG_INFINITY, 0.0);
        for v in values {
            n += 1;
            min = min.min(v);
            max = max.max(v);
            sum += v;
        }
        // clamp guards the mean against summation rounding at the extremes
        (n > 0).then(|| Summary {
            min,
            max,
            avg: (sum / n as f64).clamp(min, max),
        })
    }
}

/// Per-class statistics; every field is `None` for a class with no clips.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassStats {
    pub label: ClassLabel,
    pub videos: usize,
    pub frame_count: Option<Summary>,
    pub width: Option<Summary>,
    pub height: Option<Summary>,
    pub duration_secs: Option<Summary>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StatsTable {
    pub classes: Vec<ClassStats>,
}

pub fn compute_stats(manifest: &DatasetManifest) -> StatsTable {
    let classes = ClassLabel::ALL
        .into_iter()
        .map(|label| {
            let members: Vec<&ManifestEntry> =
                manifest.entries.iter().filter(|e| e.label == label).collect();
            ClassStats {
                label,
                videos: members.len(),
                frame_count: Summary::of(members.iter().map(|e| e.frame_count as f64)),
                width: Summary::of(members.iter().map(|e| e.width as f64)),
                height: Summary::of(members.iter().map(|e| e.height as f64)),
                duration_secs: Summary::of(members.iter().map(|e| e.duration_secs())),
            }
        })
        .collect();
    StatsTable { classes }
}

impl StatsTable {
    pub fn class(&self, label: ClassLabel) -> &ClassStats {
        &self.classes[label.index()]
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("stats serialize") + "\n"
    }

    /// Plain-text table with one column per class.
    pub fn render(&self) -> String {
        fn num(v: f64) -> String {
            if v.fract() == 0.0 {
                format!("{v:.0}")
            } else {
                format!("{v:.2}")
            }
        }
        let cell = |s: Option<String>| s.unwrap_or_else(|| "-".to_string());
        let size = |c: &ClassStats, pick: fn(&Summary) -> f64| {
            c.width
                .zip(c.height)
                .map(|(w, h)| format!("{}X{}", num(pick(&w)), num(pick(&h))))
        };
        let rows: Vec<(&str, Vec<String>)> = vec![
            ("Min Frame Count", self.classes.iter().map(|c| cell(c.frame_count.map(|s| num(s.min)))).collect()),
            ("Max Frame Count", self.classes.iter().map(|c| cell(c.frame_count.map(|s| num(s.max)))).collect()),
            ("Avg Frame Count", self.classes.iter().map(|c| cell(c.frame_count.map(|s| format!("{:.2}", s.avg)))).collect()),
            ("Min Frame Size", self.classes.iter().map(|c| cell(size(c, |s| s.min))).collect()),
            ("Max Frame Size", self.classes.iter().map(|c| cell(size(c, |s| s.max))).collect()),
            ("Avg Frame Size", self.classes.iter().map(|c| cell(size(c, |s| s.avg))).collect()),
            ("Avg video duration", self.classes.iter().map(|c| cell(c.duration_secs.map(|s| format!("{:.2} sec", s.avg)))).collect()),
            ("Number of videos", self.classes.iter().map(|c| c.videos.to_string()).collect()),
        ];
        let mut out = String::new();
        let _ = write!(out, "{:<20}", "");
        for c in &self.classes {
            let _ = write!(out, "{:>18}", c.label.name());
        }
        out.push('\n');
        for (name, cells) in rows {
            let _ = write!(out, "{name:<20}");
            for v in cells {
                let _ = write!(out, "{v:>18}");
            }
            out.push('\n');
        }
        out
    }
}
