//! Synthetic datasets and helpers shared by the CLI test targets.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stimprep_core::{clip_io, ClassLabel, Frame, VideoClip};

pub fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_stimprep"))
}

/// Runs the binary with `args`, returning its output.
pub fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn stimprep")
}

pub fn random_frame(rng: &mut ChaCha8Rng, w: usize, h: usize) -> Frame {
    let px = (0..w * h).map(|_| rng.gen::<[u8; 3]>()).collect();
    Frame::new(w, h, px).unwrap()
}

/// Writes `<root>/<Class>/<id>/` clips with random content, `counts[k]`
/// clips for class `k`, each `frames` frames of `w`×`h`.
pub fn write_dataset(root: &Path, counts: [usize; 3], frames: usize, w: usize, h: usize, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (label, n) in ClassLabel::ALL.into_iter().zip(counts) {
        for k in 0..n {
            let id = format!("{}_{k:03}", label.name().to_lowercase());
            let fs = (0..frames).map(|_| random_frame(&mut rng, w, h)).collect();
            let clip = VideoClip::new(id.clone(), label, 30.0, fs).unwrap();
            clip_io::write_clip(&root.join(label.name()).join(&id), &clip).unwrap();
        }
    }
}

/// Every regular file under `root`, keyed by relative path.
pub fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(base: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for entry in fs::read_dir(dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                walk(base, &p, out);
            } else {
                out.insert(p.strip_prefix(base).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

pub fn read_json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}
