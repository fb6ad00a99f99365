use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use rayon::prelude::*;

use stimprep_core::augment::{self, AugmentParams, TransformKind};
use stimprep_core::clip_io;
use stimprep_core::dataset::{self, DatasetManifest, ManifestEntry, SplitRatios};
use stimprep_core::masking::{self, MaskingConfig, ProcessReport};
use stimprep_core::metrics::{self, MetricsReport};
use stimprep_core::tubemask::{self, PatchSpec};
use stimprep_core::ClassLabel;

const OUT_MANIFEST: &str = "manifest.json";

fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    DatasetManifest::load(path).with_context(|| format!("loading manifest {}", path.display()))
}

fn print_counts(what: &str, m: &DatasetManifest) {
    let counts = m.count_by_class();
    let parts: Vec<String> = ClassLabel::ALL
        .iter()
        .map(|l| format!("{} {}", l.name(), counts[l.index()]))
        .collect();
    println!("{what}: {} clips ({})", m.len(), parts.join(", "));
}

/// Prints one line per failed clip and turns any failure into an error.
fn report_failures(failures: &[(String, String)]) -> Result<()> {
    for (id, err) in failures {
        eprintln!("error: clip {id}: {err}");
    }
    if !failures.is_empty() {
        bail!("{} clip(s) failed", failures.len());
    }
    Ok(())
}

pub fn scan(root: &Path, out: &Path) -> Result<()> {
    let manifest = dataset::scan(root).with_context(|| format!("scanning {}", root.display()))?;
    let manifest = manifest.rebase(root, &dataset::manifest_base(out));
    manifest.save(out)?;
    print_counts("scanned", &manifest);
    Ok(())
}

pub fn trim(manifest_path: &Path, segments_path: &Path, out_dir: &Path) -> Result<()> {
    let manifest = load_manifest(manifest_path)?;
    let base = dataset::manifest_base(manifest_path);
    let text = fs::read_to_string(segments_path)
        .with_context(|| format!("reading segments {}", segments_path.display()))?;
    let segments = dataset::parse_segments(&text)?;
    if let Some(id) = segments
        .keys()
        .find(|id| !manifest.entries().iter().any(|e| &e.clip_id == *id))
    {
        bail!("segments file names clip `{id}` which is not in the manifest");
    }

    let results: Vec<Result<Vec<ManifestEntry>>> = manifest
        .entries()
        .par_iter()
        .map(|entry| {
            let clip = clip_io::read_clip(&dataset::clip_dir(&base, entry), &entry.clip_id)?;
            let pieces = match segments.get(&entry.clip_id) {
                Some(segs) => dataset::trim(&clip, segs)?
                    .into_iter()
                    .map(|(c, p)| (c, Some(p)))
                    .collect(),
                None => vec![(clip, entry.provenance.clone())],
            };
            pieces
                .into_iter()
                .map(|(c, prov)| {
                    let rel = format!("{}/{}", c.label().name(), c.clip_id());
                    clip_io::write_clip(&out_dir.join(&rel), &c)?;
                    let mut e = ManifestEntry::for_clip(&c, rel);
                    e.split = entry.split;
                    e.provenance = prov;
                    Ok(e)
                })
                .collect::<stimprep_core::Result<Vec<_>>>()
                .map_err(Into::into)
        })
        .collect();

    let mut entries = Vec::new();
    let mut failures = Vec::new();
    for (entry, r) in manifest.entries().iter().zip(results) {
        match r {
            Ok(es) => entries.extend(es),
            Err(e) => failures.push((entry.clip_id.clone(), format!("{e:#}"))),
        }
    }
    entries.sort_by(|a, b| a.clip_id.cmp(&b.clip_id));
    let out = DatasetManifest::new(entries)?;
    out.save(&out_dir.join(OUT_MANIFEST))?;
    print_counts("trimmed", &out);
    report_failures(&failures)
}

pub fn mask(manifest_path: &Path, detections_dir: &Path, out_dir: &Path, config: &MaskingConfig) -> Result<()> {
    let manifest = load_manifest(manifest_path)?;
    let base = dataset::manifest_base(manifest_path);
    let results: Vec<Result<(ManifestEntry, ProcessReport, usize)>> = manifest
        .entries()
        .par_iter()
        .map(|entry| {
            let clip = clip_io::read_clip(&dataset::clip_dir(&base, entry), &entry.clip_id)?;
            let det_path = detections_dir.join(format!("{}.jsonl", entry.clip_id));
            let text = if det_path.exists() {
                fs::read_to_string(&det_path).with_context(|| format!("reading {}", det_path.display()))?
            } else {
                String::new()
            };
            let track = masking::parse_detections(&text, clip.frame_count())
                .with_context(|| format!("in {}", det_path.display()))?;
            let (masked, report) = masking::process_clip(&clip, &track.per_frame, config)?;
            let rel = format!("{}/{}", entry.label.name(), entry.clip_id);
            clip_io::write_clip(&out_dir.join(&rel), &masked)?;
            let mut e = ManifestEntry::for_clip(&masked, rel);
            e.split = entry.split;
            e.provenance = entry.provenance.clone();
            Ok((e, report, track.dropped))
        })
        .collect();

    let mut entries = Vec::new();
    let mut reports = Vec::new();
    let mut failures = Vec::new();
    let mut dropped = 0;
    for (entry, r) in manifest.entries().iter().zip(results) {
        match r {
            Ok((e, rep, d)) => {
                entries.push(e);
                reports.push(rep);
                dropped += d;
            }
            Err(e) => failures.push((entry.clip_id.clone(), format!("{e:#}"))),
        }
    }
    let out = DatasetManifest::new(entries)?;
    out.save(&out_dir.join(OUT_MANIFEST))?;
    let json = serde_json::to_string_pretty(&reports)? + "\n";
    clip_io::write_atomic(&out_dir.join("mask_report.json"), json.as_bytes())?;
    let (pass, black, skip) = reports.iter().fold((0, 0, 0), |acc, r| {
        (acc.0 + r.passthrough, acc.1 + r.blackout, acc.2 + r.skipped)
    });
    print_counts("masked", &out);
    println!(
        "frames without detections: {pass} passed through, {black} blacked out, {skip} skipped; {dropped} degenerate boxes dropped"
    );
    report_failures(&failures)
}

pub fn augment(
    manifest_path: &Path,
    out_dir: &Path,
    params: &AugmentParams,
    kinds: &[TransformKind],
    include_original: bool,
) -> Result<()> {
    let manifest = load_manifest(manifest_path)?;
    let base = dataset::manifest_base(manifest_path);
    let expansion = augment::expand_selected(&manifest, &base, out_dir, params, kinds, include_original)?;
    expansion.manifest.save(&out_dir.join(OUT_MANIFEST))?;
    print_counts("augmented", &expansion.manifest);
    let failures: Vec<(String, String)> = expansion
        .failures
        .iter()
        .map(|(id, e)| (id.clone(), e.to_string()))
        .collect();
    report_failures(&failures)
}

pub fn split(manifest_path: &Path, out: &Path, ratios: &SplitRatios, force: bool) -> Result<()> {
    let manifest = load_manifest(manifest_path)?;
    let split = dataset::split(&manifest, ratios, force)?;
    let split = split.rebase(&dataset::manifest_base(manifest_path), &dataset::manifest_base(out));
    split.save(out)?;
    for label in ClassLabel::ALL {
        let of = |s: dataset::Split| {
            split
                .entries()
                .iter()
                .filter(|e| e.label == label && e.split == Some(s))
                .count()
        };
        println!(
            "{:<12} train {:>4}  val {:>4}  test {:>4}",
            label.name(),
            of(dataset::Split::Train),
            of(dataset::Split::Val),
            of(dataset::Split::Test)
        );
    }
    Ok(())
}

pub fn stats(manifest_path: &Path, out: &Path) -> Result<()> {
    let manifest = load_manifest(manifest_path)?;
    let table = dataset::compute_stats(&manifest);
    print!("{}", table.render());
    clip_io::write_atomic(out, table.to_json().as_bytes())?;
    Ok(())
}

pub fn eval(predictions: &Path, out: &Path) -> Result<()> {
    let text = fs::read_to_string(predictions)
        .with_context(|| format!("reading predictions {}", predictions.display()))?;
    let records = metrics::parse_predictions(&text)?;
    let report = MetricsReport::from_records(&records)?;
    print!("{}", report.render());
    clip_io::write_atomic(out, report.to_json().as_bytes())?;
    Ok(())
}

pub fn tubemask(dims: (usize, usize, usize), spec: &PatchSpec, rho: f64, seed: u64, out: Option<&Path>) -> Result<()> {
    let grid = tubemask::patch_grid(dims, spec)?;
    let mask = tubemask::gen_tube_mask(grid, rho, seed)?;
    let json = serde_json::to_string_pretty(&mask.summary(spec))? + "\n";
    print!("{json}");
    if let Some(out) = out {
        clip_io::write_atomic(out, json.as_bytes())?;
    }
    Ok(())
}
