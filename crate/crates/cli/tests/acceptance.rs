//! End-to-end acceptance checks. Each criterion prints one PASS/FAIL line;
//! run with `--nocapture` to see them.

mod common;

use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{random_frame, read_json, run, stderr, tree, write_dataset};
use stimprep_core::augment::{downsample_temporal, hflip, invert_color, rotate, vflip};
use stimprep_core::dataset::SplitRatios;
use stimprep_core::masking::{box_area, build_mask, resize_area, select_largest};
use stimprep_core::metrics::{self, PredictionRecord};
use stimprep_core::tubemask::{gen_tube_mask, patch_grid, PatchSpec, TokenGrid};
use stimprep_core::{BoundingBox, ClassLabel, Detection, Frame, VideoClip};

type Check = fn() -> Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(start: Instant, limit: Duration) -> Result<String, String> {
    let took = start.elapsed();
    ensure(took < limit, || format!("took {took:.2?}, limit {limit:?}"))?;
    Ok(format!("{took:.2?}"))
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn augmentation_counts() -> Result<String, String> {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("data");
    write_dataset(&root, [29, 41, 54], 4, 8, 8, 1);
    let o = run(&["scan", path(&root)]);
    ensure(o.status.success(), || stderr(&o))?;
    let out = dir.path().join("aug");
    let o = run(&["augment", path(&root.join("manifest.json")), "--out", path(&out), "--all"]);
    ensure(o.status.success(), || stderr(&o))?;
    let m = read_json(&out.join("manifest.json"));
    let mut counts = [0usize; 3];
    for e in m["entries"].as_array().unwrap() {
        let label: ClassLabel = e["label"].as_str().unwrap().parse().unwrap();
        counts[label.index()] += 1;
    }
    ensure(counts == [203, 287, 378], || format!("got {counts:?}"))?;
    Ok(format!("29/41/54 -> {counts:?} in {}", within(start, Duration::from_secs(60))?))
}

fn split_counts() -> Result<String, String> {
    // (class size, train, test, val)
    let cases = [
        (25, 17, 4, 4),
        (29, 20, 5, 4),
        (41, 28, 7, 6),
        (54, 37, 9, 8),
        (203, 142, 31, 30),
        (287, 200, 44, 43),
        (378, 264, 57, 57),
    ];
    for seed in [0u64, 1, 42, u64::MAX] {
        let ratios = SplitRatios::parse("70:15:15", seed).map_err(|e| e.to_string())?;
        for (n, train, test, val) in cases {
            let (tr, va, te) = ratios.counts(n);
            ensure((tr, te, va) == (train, test, val), || {
                format!("n={n} seed={seed}: got {tr}/{te}/{va}, want {train}/{test}/{val}")
            })?;
        }
    }
    // the same counts must come out of a real split of a class-stratified manifest
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("data");
    write_dataset(&root, [29, 41, 54], 1, 1, 1, 2);
    run(&["scan", path(&root)]);
    let out = dir.path().join("split.json");
    let o = run(&["split", path(&root.join("manifest.json")), "--seed", "9", "--out", path(&out)]);
    ensure(o.status.success(), || stderr(&o))?;
    let m = read_json(&out);
    for (label, want) in ClassLabel::ALL.into_iter().zip([(20, 5, 4), (28, 7, 6), (37, 9, 8)]) {
        let of = |s: &str| {
            m["entries"]
                .as_array()
                .unwrap()
                .iter()
                .filter(|e| e["label"] == label.name() && e["split"] == s)
                .count()
        };
        let got = (of("train"), of("test"), of("val"));
        ensure(got == want, || format!("{label}: got {got:?}, want {want:?}"))?;
    }
    Ok("9 triples exact (train/test/val), 4 seeds".into())
}

/// Records with class 0 as the class under test: `tp` correct, `fp` class-1
/// clips predicted as 0, `fn_` class-0 clips predicted as 1.
fn records_for(tp: usize, fp: usize, fn_: usize) -> Vec<PredictionRecord> {
    let rec = |k: usize, t: ClassLabel, p: ClassLabel| PredictionRecord::new(format!("r{k}"), t, p, None).unwrap();
    let (a, h) = (ClassLabel::ArmFlapping, ClassLabel::HeadBanging);
    (0..tp)
        .map(|_| (a, a))
        .chain((0..fp).map(|_| (h, a)))
        .chain((0..fn_).map(|_| (a, h)))
        .enumerate()
        .map(|(k, (t, p))| rec(k, t, p))
        .collect()
}

fn f1_consistency() -> Result<String, String> {
    // (precision, recall) realised as exact counts, then the reported F1
    let cases = [
        ((1.0, 0.5), (1, 0, 1), 0.667),
        ((0.66, 1.0), (33, 17, 0), 0.795),
        ((1.0, 0.93), (93, 0, 7), 0.964),
        ((0.97, 0.97), (97, 3, 3), 0.97),
    ];
    let mut parts = Vec::new();
    for ((p, r), (tp, fp, fn_), want) in cases {
        let m = metrics::per_class_prf(&records_for(tp, fp, fn_)).map_err(|e| e.to_string())?;
        let c = &m[0];
        ensure((c.precision - p).abs() < 1e-12 && (c.recall - r).abs() < 1e-12, || {
            format!("counts give P={} R={}", c.precision, c.recall)
        })?;
        ensure((c.f1 - want).abs() <= 0.005, || format!("({p},{r}): F1 {} vs {want}", c.f1))?;
        let (direct, _) = metrics::f1_score(p, r);
        ensure((direct - c.f1).abs() < 1e-12, || format!("f1_score disagrees: {direct}"))?;
        parts.push(format!("{:.3}", c.f1));
    }
    Ok(format!("F1 = {}", parts.join(", ")))
}

fn patch_geometry() -> Result<String, String> {
    let g = patch_grid((16, 224, 224), &PatchSpec::default()).map_err(|e| e.to_string())?;
    ensure(g.total() == 1568, || format!("got {}", g.total()))?;
    Ok(format!("{}x{}x{} = {} tokens", g.t_tokens, g.h_tokens, g.w_tokens, g.total()))
}

fn tube_masks() -> Result<String, String> {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for case in 0..200 {
        let grid = TokenGrid::new(rng.gen_range(1..9), rng.gen_range(1..16), rng.gen_range(1..16)).unwrap();
        let pct: usize = rng.gen_range(0..100);
        let rho = pct as f64 / 100.0;
        let seed: u64 = rng.gen();
        let m = gen_tube_mask(grid, rho, seed).map_err(|e| e.to_string())?;
        let n = grid.spatial();
        // round-half-up of pct·n/100 in integer arithmetic
        let want = (pct * n + 50) / 100;
        ensure(m.masked_spatial() == want, || format!("case {case}: masked {} want {want}", m.masked_spatial()))?;
        for t in 0..grid.t_tokens {
            for s in 0..n {
                ensure(m.is_masked_flat(t * n + s) == m.is_masked_flat(s), || {
                    format!("case {case}: position {s} differs at t={t}")
                })?;
            }
        }
        let again = gen_tube_mask(grid, rho, seed).map_err(|e| e.to_string())?;
        ensure(again == m, || format!("case {case}: regeneration differs"))?;
    }
    Ok(format!("200 cases in {}", within(start, Duration::from_secs(10))?))
}

fn max_interior_diff(a: &Frame, b: &Frame, keep: impl Fn(usize, usize) -> bool) -> i32 {
    let mut worst = 0;
    for i in 0..a.height() {
        for j in 0..a.width() {
            if keep(i, j) {
                let (p, q) = (a.get(i, j).unwrap(), b.get(i, j).unwrap());
                for c in 0..3 {
                    worst = worst.max((p[c] as i32 - q[c] as i32).abs());
                }
            }
        }
    }
    worst
}

fn transforms() -> Result<String, String> {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for k in 0..500 {
        let (w, h) = (rng.gen_range(1..40), rng.gen_range(1..40));
        let f = random_frame(&mut rng, w, h);
        ensure(hflip(&hflip(&f)) == f, || format!("frame {k}: hflip"))?;
        ensure(vflip(&vflip(&f)) == f, || format!("frame {k}: vflip"))?;
        ensure(invert_color(&invert_color(&f)) == f, || format!("frame {k}: invert"))?;
        ensure(rotate(&f, 0.0) == f, || format!("frame {k}: rotate(0)"))?;
    }

    // Quarter turns on noise: every pixel away from a 2-pixel border.
    let mut worst = 0;
    for k in 0..100 {
        let n = rng.gen_range(6..40);
        let f = random_frame(&mut rng, n, n);
        for theta in [90.0, 180.0, 270.0, -90.0] {
            let back = rotate(&rotate(&f, theta), -theta);
            let d = max_interior_diff(&f, &back, |i, j| i >= 2 && j >= 2 && i + 2 < n && j + 2 < n);
            ensure(d <= 2, || format!("noise frame {k}, theta {theta}: diff {d}"))?;
            worst = worst.max(d);
        }
    }

    // Arbitrary angles on smooth content: pixels whose whole sampling
    // footprint stays inside the frame for both rotations.
    for k in 0..100 {
        let (w, h) = (rng.gen_range(12..48), rng.gen_range(12..48));
        let theta = rng.gen_range(-180.0..180.0);
        let (gi, gj) = (rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
        let base: f64 = 128.0 - gi * (h as f64 - 1.0) / 2.0 - gj * (w as f64 - 1.0) / 2.0;
        let f = Frame::new(
            w,
            h,
            (0..w * h)
                .map(|p| {
                    let v = base + gi * (p / w) as f64 + gj * (p % w) as f64;
                    let v = v.round().clamp(0.0, 255.0) as u8;
                    [v, 255 - v, v / 2]
                })
                .collect(),
        )
        .unwrap();
        let back = rotate(&rotate(&f, theta), -theta);
        let (ci, cj) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
        let radius = (w.min(h) as f64 - 1.0) / 2.0 - 3.0;
        let d = max_interior_diff(&f, &back, |i, j| {
            ((i as f64 - ci).powi(2) + (j as f64 - cj).powi(2)).sqrt() <= radius
        });
        ensure(d <= 2, || format!("smooth frame {k}, theta {theta:.1}: diff {d}"))?;
        worst = worst.max(d);
    }

    for n in 1usize..60 {
        let frames = (0..n).map(|_| Frame::filled(2, 2, [n as u8; 3]).unwrap()).collect();
        let clip = VideoClip::new("c", ClassLabel::Spinning, 30.0, frames).unwrap();
        let d = downsample_temporal(&clip, 2).map_err(|e| e.to_string())?;
        ensure(d.frame_count() == n.div_ceil(2) && d.fps() == 15.0, || {
            format!("N={n}: {} frames at {} fps", d.frame_count(), d.fps())
        })?;
    }
    Ok(format!(
        "500 frames exact, rotate round trip max diff {worst}, in {}",
        within(start, Duration::from_secs(30))?
    ))
}

fn masking_oracle() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for case in 0..1000 {
        let n = rng.gen_range(0..10);
        let ds: Vec<Detection> = (0..n)
            .map(|_| {
                let (x1, y1) = (rng.gen_range(0..30), rng.gen_range(0..30));
                let (x2, y2) = (x1 + rng.gen_range(1..12), y1 + rng.gen_range(1..12));
                Detection::new(BoundingBox::new(x1, y1, x2, y2).unwrap(), rng.gen(), 0).unwrap()
            })
            .collect();
        // brute force: the first index whose area no other box exceeds
        let area = |d: &Detection| {
            let (x1, y1, x2, y2) = (d.bbox().x1(), d.bbox().y1(), d.bbox().x2(), d.bbox().y2());
            (x2 - x1) as u64 * (y2 - y1) as u64
        };
        let want = (0..ds.len())
            .find(|&k| ds.iter().all(|d| area(d) <= area(&ds[k])))
            .map(|k| ds[k].bbox());
        let got = select_largest(&ds);
        ensure(got == want, || format!("case {case}: got {got:?}, want {want:?}"))?;

        if let Some(b) = got {
            let (w, h) = (rng.gen_range(1..40), rng.gen_range(1..40));
            let m = build_mask(w, h, &b).map_err(|e| e.to_string())?;
            let mut inside = 0u64;
            for i in 0..h {
                for j in 0..w {
                    if (b.x1() as usize..b.x2() as usize).contains(&j) && (b.y1() as usize..b.y2() as usize).contains(&i) {
                        inside += 1;
                    }
                }
            }
            let set = m.count_set() as u64;
            let clamped = b.clamp_to(w, h).map_or(0, |c| box_area(&c));
            ensure(set == inside && set == clamped, || {
                format!("case {case}: mask {set}, brute {inside}, clamped area {clamped}")
            })?;
        }
    }
    Ok("1000 detection sets exact".into())
}

fn metrics_oracle() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for case in 0..100 {
        let n = rng.gen_range(1..80);
        let mut recs = Vec::new();
        for k in 0..n {
            let raw: [f64; 3] = [rng.gen_range(0.01..1.0), rng.gen_range(0.01..1.0), rng.gen_range(0.01..1.0)];
            let s: f64 = raw.iter().sum();
            let p = raw.map(|v| v / s);
            recs.push(PredictionRecord::from_probs(format!("c{k}"), ClassLabel::ALL[rng.gen_range(0..3)], p).unwrap());
        }
        let mut cm = [[0u64; 3]; 3];
        let mut correct = 0;
        let mut nll = 0.0;
        for r in &recs {
            let p = r.probs().unwrap();
            let mut best = 0;
            for k in 1..3 {
                if p[k] > p[best] {
                    best = k;
                }
            }
            cm[r.true_label.index()][best] += 1;
            if best == r.true_label.index() {
                correct += 1;
            }
            nll -= p[r.true_label.index()].max(1e-12).ln();
        }
        let acc = metrics::accuracy(&recs).map_err(|e| e.to_string())?;
        let conf = metrics::confusion_matrix(&recs).map_err(|e| e.to_string())?;
        let cce = metrics::sparse_cce(&recs).map_err(|e| e.to_string())?;
        ensure((acc - correct as f64 / n as f64).abs() <= 1e-9, || format!("case {case}: accuracy {acc}"))?;
        ensure(conf == cm, || format!("case {case}: confusion {conf:?} vs {cm:?}"))?;
        ensure((cce - nll / n as f64).abs() <= 1e-9, || format!("case {case}: cce {cce}"))?;
        let prf = metrics::per_class_prf(&recs).map_err(|e| e.to_string())?;
        let tp: u64 = prf.iter().map(|c| c.tp).sum();
        let fn_: u64 = prf.iter().map(|c| c.fn_).sum();
        let micro_recall = tp as f64 / (tp + fn_) as f64;
        ensure(micro_recall == acc, || format!("case {case}: micro recall {micro_recall} != {acc}"))?;
    }
    Ok("100 prediction sets within 1e-9".into())
}

fn resize_conservation() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst: f64 = 0.0;
    for k in 0..100 {
        let (ow, oh) = (rng.gen_range(1..20), rng.gen_range(1..20));
        let (fx, fy) = (rng.gen_range(1..6), rng.gen_range(1..6));
        let f = random_frame(&mut rng, ow * fx, oh * fy);
        let small = resize_area(&f, (ow, oh)).map_err(|e| e.to_string())?;
        let (a, b) = (f.channel_means(), small.channel_means());
        for c in 0..3 {
            let d = (a[c] - b[c]).abs();
            worst = worst.max(d);
            ensure(d <= 1.0, || format!("frame {k} channel {c}: means {} vs {}", a[c], b[c]))?;
        }
    }
    Ok(format!("100 frames, max mean drift {worst:.3}"))
}

fn pipeline(root: &Path, dets: &Path, out: &Path) -> Result<(), String> {
    let step = |args: &[&str]| {
        let o = run(args);
        ensure(o.status.success(), || format!("{args:?}: {}", stderr(&o)))
    };
    let masked = out.join("masked");
    let aug = out.join("augmented");
    step(&["mask", path(&root.join("manifest.json")), "--detections", path(dets), "--out", path(&masked), "--target-size", "16x12"])?;
    step(&["augment", path(&masked.join("manifest.json")), "--out", path(&aug), "--all"])?;
    let split = aug.join("split.json");
    step(&["split", path(&aug.join("manifest.json")), "--seed", "3", "--out", path(&split)])?;
    step(&["stats", path(&split), "--out", path(&out.join("stats.json"))])
}

fn end_to_end_determinism() -> Result<String, String> {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("data");
    write_dataset(&root, [3, 3, 3], 6, 24, 20, 10);
    run(&["scan", path(&root)]);
    let dets = dir.path().join("dets");
    fs::create_dir(&dets).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let manifest = read_json(&root.join("manifest.json"));
    for e in manifest["entries"].as_array().unwrap() {
        let mut lines = String::new();
        for t in 0..6 {
            if rng.gen_bool(0.2) {
                continue;
            }
            let boxes: Vec<String> = (0..rng.gen_range(1..4))
                .map(|_| {
                    let (x, y) = (rng.gen_range(0..20), rng.gen_range(0..16));
                    format!(
                        "{{\"x1\":{x},\"y1\":{y},\"x2\":{},\"y2\":{},\"conf\":0.8,\"cls\":0}}",
                        x + rng.gen_range(1..10),
                        y + rng.gen_range(1..10)
                    )
                })
                .collect();
            lines += &format!("{{\"frame_index\":{t},\"detections\":[{}]}}\n", boxes.join(","));
        }
        fs::write(dets.join(format!("{}.jsonl", e["clip_id"].as_str().unwrap())), lines).unwrap();
    }
    let (a, b) = (dir.path().join("run_a"), dir.path().join("run_b"));
    pipeline(&root, &dets, &a)?;
    pipeline(&root, &dets, &b)?;
    let (ta, tb) = (tree(&a), tree(&b));
    ensure(!ta.is_empty(), || "no output".into())?;
    ensure(ta.keys().eq(tb.keys()), || "file sets differ".into())?;
    if let Some(k) = ta.keys().find(|k| ta[*k] != tb[*k]) {
        return Err(format!("{} differs", k.display()));
    }
    Ok(format!("{} files identical in {}", ta.len(), within(start, Duration::from_secs(120))?))
}

#[test]
fn acceptance_criteria() {
    let checks: [(&str, Check); 10] = [
        ("1 augmentation counts", augmentation_counts),
        ("2 split counts", split_counts),
        ("3 F1 consistency", f1_consistency),
        ("4 patch geometry", patch_geometry),
        ("5 tube-mask properties", tube_masks),
        ("6 transform properties", transforms),
        ("7 masking oracle", masking_oracle),
        ("8 metrics oracle", metrics_oracle),
        ("9 resize conservation", resize_conservation),
        ("10 end-to-end determinism", end_to_end_determinism),
    ];
    let mut failed = Vec::new();
    for (name, check) in checks {
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            Err(e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_else(|| "panicked".into()))
        });
        match outcome {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(why) => {
                println!("FAIL  {name}: {why}");
                failed.push(name);
            }
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
