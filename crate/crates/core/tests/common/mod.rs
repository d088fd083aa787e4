#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ctc_asr::cli::RunConfig;
use ctc_asr::corpus::{generate_synthetic_corpus, Manifest, SynthSpec};
use ctc_asr::textmap::Vocabulary;

pub fn synth(root: &Path, name: &str, n: usize, seed: u64) -> (PathBuf, Manifest) {
    let spec = SynthSpec {
        alphabet: "abc".into(),
        num_utterances: n,
        seed,
        ..SynthSpec::default()
    };
    let m = generate_synthetic_corpus(&spec, &root.join(name)).expect("synthetic corpus");
    (root.join(name).join("manifest.csv"), m)
}

/// Writes a toy run config over fresh train/val corpora; returns its path.
pub fn toy_config(root: &Path, train_n: usize, epochs: usize) -> PathBuf {
    let (train, _) = synth(root, "train", train_n, 1);
    let (val, _) = synth(root, "val", 10, 3);
    let vocab = root.join("vocab.txt");
    Vocabulary::new("abc").unwrap().save(&vocab).unwrap();
    let mut cfg = RunConfig::toy(&train, &val, &vocab, &root.join("run"));
    cfg.train.epochs = epochs;
    let path = root.join("toy.json");
    std::fs::write(&path, cfg.to_json()).unwrap();
    path
}

pub fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ctc-asr"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

pub fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}
