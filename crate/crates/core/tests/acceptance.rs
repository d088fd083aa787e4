//! End-to-end acceptance suite. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails. Runs as a plain binary (`harness = false`).

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use ctc_asr::cli::RunConfig;
use ctc_asr::corpus::{generate_synthetic_corpus, load_manifest, SynthSpec};
use ctc_asr::ctc::{ctc_loss_bruteforce, ctc_loss_item};
use ctc_asr::metrics::{edit_ops, wer};
use ctc_asr::net::{grad_check, init_params, FeatureBatch, Mode, ModelConfig};
use ctc_asr::textmap::{LabelSequence, Vocabulary};
use ctc_asr::train::{evaluate, prepare, train_model, OutputSpec, PreparedItem, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn softmax(row: &[f64]) -> Vec<f64> {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = row.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

fn random_instance(rng: &mut ChaCha8Rng) -> (usize, usize, Vec<f64>, Vec<usize>) {
    let frames = rng.gen_range(1..=6);
    let classes = rng.gen_range(2..=4);
    let len = rng.gen_range(0..=3);
    let label = (0..len).map(|_| rng.gen_range(0..classes - 1)).collect();
    let logits = (0..frames * classes)
        .map(|_| rng.gen_range(-3.0..3.0))
        .collect();
    (frames, classes, logits, label)
}

fn ctc_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (mut worst, mut infeasible) = (0.0f64, 0);
    for case in 0..1000 {
        let (frames, classes, logits, label) = random_instance(&mut rng);
        let blank = classes - 1;
        let probs: Vec<Vec<f64>> = logits.chunks(classes).map(softmax).collect();
        let brute = ctc_loss_bruteforce(&probs, &label, blank).map_err(|e| e.to_string())?;
        let lattice = ctc_loss_item(&logits, classes, &label, blank);
        if brute.is_infinite() {
            ensure(
                lattice.loss.is_infinite() && !lattice.feasible,
                format!("case {case}: oracle infeasible, lattice {}", lattice.loss),
            )?;
            infeasible += 1;
            continue;
        }
        let diff = (brute - lattice.loss).abs();
        ensure(
            diff <= 1e-9,
            format!("case {case} (T={frames}, K={classes}, {label:?}): diff {diff:e}"),
        )?;
        worst = worst.max(diff);
    }
    Ok(format!(
        "1000 cases ({infeasible} infeasible), max |diff| {worst:.2e}"
    ))
}

fn ctc_gradient() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let h = 1e-3;
    let (mut worst, mut checked) = (0.0f64, 0);
    for case in 0..300 {
        let (_, classes, mut logits, label) = random_instance(&mut rng);
        let blank = classes - 1;
        let item = ctc_loss_item(&logits, classes, &label, blank);
        if !item.feasible {
            continue;
        }
        let loss = |x: &[f64]| ctc_loss_item(x, classes, &label, blank).loss;
        for j in 0..logits.len() {
            let orig = logits[j];
            let mut at = |d: f64| {
                logits[j] = orig + d;
                loss(&logits)
            };
            // five-point central stencil
            let numeric = (-at(2.0 * h) + 8.0 * at(h) - 8.0 * at(-h) + at(-2.0 * h)) / (12.0 * h);
            logits[j] = orig;
            let a = item.grad[j];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            ensure(
                rel <= 1e-5,
                format!("case {case} coord {j}: analytic {a:e}, numeric {numeric:e}"),
            )?;
            worst = worst.max(rel);
            checked += 1;
        }
    }
    Ok(format!(
        "{checked} coordinates, max relative error {worst:.2e}"
    ))
}

fn tiny_config() -> ModelConfig {
    ModelConfig {
        conv_filters: 2,
        conv1_kernel: (3, 3),
        conv1_stride: (2, 2),
        conv2_kernel: (3, 3),
        conv2_stride: (1, 2),
        rnn_layers: 1,
        rnn_units: 4,
        rnn_bidirectional: true,
        dropout_rate: 0.3,
        vocab_size_with_blank: 4,
        feature_bins: 5,
    }
}

fn model_gradient() -> Check {
    let cfg = tiny_config();
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut worst = 0.0f64;
    let mut coords = 0;
    let runs = [
        (9usize, vec![1usize, 2], Mode::Eval),
        (12, vec![0, 1, 1], Mode::Train { seed: 5 }),
    ];
    for (k, (frames, label, mode)) in runs.into_iter().enumerate() {
        let x: Vec<f64> = (0..frames * 5).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let x2: Vec<f64> = (0..7 * 5).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let batch = FeatureBatch::from_items(&[(&x, frames), (&x2, 7)], 5);
        let labels = [LabelSequence::new(label), LabelSequence::new(vec![2])];
        let r = grad_check(&cfg, &batch, &labels, mode, 20 + k as u64, 1e-5, 200)
            .map_err(|e| e.to_string())?;
        let names: Vec<&str> = r
            .tensors
            .iter()
            .filter(|t| t.checked == 0)
            .map(|t| t.name.as_str())
            .collect();
        ensure(
            names.is_empty(),
            format!("tensors never checked: {names:?}"),
        )?;
        ensure(
            r.coordinates >= 200,
            format!("only {} coordinates", r.coordinates),
        )?;
        ensure(
            r.max_rel_error <= 1e-4,
            format!("{mode:?}: max relative error {:e}", r.max_rel_error),
        )?;
        worst = worst.max(r.max_rel_error);
        coords += r.coordinates;
    }
    Ok(format!(
        "{coords} coordinates over every tensor (eval + dropout), max relative error {worst:.2e}"
    ))
}

fn levenshtein(a: &[u8], b: &[u8]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    for (i, x) in a.iter().enumerate() {
        let mut cur = vec![i + 1];
        for (j, y) in b.iter().enumerate() {
            cur.push(
                (prev[j] + usize::from(x != y))
                    .min(prev[j + 1] + 1)
                    .min(cur[j] + 1),
            );
        }
        prev = cur;
    }
    prev[b.len()]
}

fn wer_correctness() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    for case in 0..10_000 {
        let seq = |rng: &mut ChaCha8Rng| -> Vec<u8> {
            let n = rng.gen_range(0..=12);
            (0..n).map(|_| rng.gen_range(0..4u8)).collect()
        };
        let (r, h) = (seq(&mut rng), seq(&mut rng));
        let e = edit_ops(&r, &h);
        ensure(
            e.s + e.d + e.i == levenshtein(&r, &h),
            format!("case {case}: {r:?} vs {h:?} gives {e:?}"),
        )?;
        ensure(
            e.n == r.len() && e.s + e.d + e.c == e.n,
            format!("case {case}: N identity {e:?}"),
        )?;
        ensure(
            e.s + e.i + e.c == h.len(),
            format!("case {case}: hypothesis length {e:?}"),
        )?;
    }
    let table = [
        (
            "ba re romele di form",
            "ba e romela di form",
            (2, 0, 0, 3, 5),
        ),
        (
            "disturba o sa re wa",
            "disturba o sa re wa",
            (0, 0, 0, 5, 5),
        ),
        ("ke sa le ka go", "ke sa leta go", (1, 1, 0, 3, 5)),
    ];
    for (r, h, want) in table {
        let e = wer(&[(r, h)]).map_err(|e| e.to_string())?.aggregate;
        ensure(
            (e.s, e.d, e.i, e.c, e.n) == want,
            format!("{r:?} / {h:?}: {e:?}"),
        )?;
    }
    Ok("10000 random pairs agree with the DP oracle; sample transcripts score as expected".into())
}

/// Synthetic corpora and the run config shared by the training criteria.
struct Toy {
    root: PathBuf,
    config: PathBuf,
    run: RunConfig,
    heldout: PathBuf,
}

fn toy_setup(root: &Path) -> Toy {
    let synth = |name: &str, seed: u64, tag: &str| {
        let spec = SynthSpec {
            alphabet: "abc".into(),
            num_utterances: 50,
            noise_amplitude: 0.0,
            seed,
            corpus_tag: tag.into(),
            ..SynthSpec::default()
        };
        generate_synthetic_corpus(&spec, &root.join(name)).expect("synthetic corpus");
        root.join(name).join("manifest.csv")
    };
    let train = synth("train", 1, "toy");
    let val = synth("val", 3, "toy");
    let heldout = synth("heldout", 2, "toy");
    let vocab_path = root.join("vocab.txt");
    Vocabulary::new("abc").unwrap().save(&vocab_path).unwrap();
    let run = RunConfig::toy(&train, &val, &vocab_path, &root.join("run"));
    let config = root.join("toy.json");
    std::fs::write(&config, run.to_json()).unwrap();
    Toy {
        root: root.to_path_buf(),
        config,
        run,
        heldout,
    }
}

struct Trained {
    model: ModelConfig,
    params: ctc_asr::net::ModelParams,
    heldout: Vec<PreparedItem>,
    vocab: Vocabulary,
    checkpoint: PathBuf,
}

fn overfit(toy: &Toy, trained: &mut Option<Trained>, window: &mut Option<Check>) -> Check {
    let started = Instant::now();
    let vocab = toy.run.load_vocabulary().map_err(|e| e.to_string())?;
    let model = toy.run.validate(&vocab).map_err(|e| e.to_string())?;
    let feats = &toy.run.features;
    let load = |p: &Path| prepare(&load_manifest(p).unwrap(), feats, &vocab).unwrap();
    let (train, val, heldout) = (
        load(&toy.run.train_manifest),
        load(&toy.run.val_manifest),
        load(&toy.heldout),
    );
    let cfg = TrainConfig {
        epochs: 150,
        ..toy.run.train.clone()
    };
    let out = OutputSpec {
        dir: toy.root.join("overfit"),
        features: feats.clone(),
    };
    let o = train_model(&cfg, &model, &train, &val, &vocab, Some(&out), |_, _| {})
        .map_err(|e| e.to_string())?;
    let train_wer =
        evaluate(&o.params, &model, &train, &vocab, 8, 0, None).map_err(|e| e.to_string())?;
    let held_wer =
        evaluate(&o.params, &model, &heldout, &vocab, 8, 0, None).map_err(|e| e.to_string())?;
    let elapsed = started.elapsed();

    let losses: Vec<f64> = o.history.iter().map(|r| r.train_loss).collect();
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    let mut violations = Vec::new();
    for k in 10..losses.len().saturating_sub(39) {
        let (a, b) = (mean(&losses[k..k + 20]), mean(&losses[k + 20..k + 40]));
        if a < b - 0.01 {
            violations.push(k + 1);
        }
    }
    *window = Some(if violations.is_empty() {
        Ok("windowed train-loss means never rise by more than 0.01 after epoch 10".into())
    } else {
        Err(format!(
            "windows starting at epochs {violations:?} rise by more than 0.01"
        ))
    });

    *trained = Some(Trained {
        model,
        params: o.params,
        heldout,
        vocab,
        checkpoint: out.dir.join("model.ckpt"),
    });
    let detail = format!(
        "train WER {:.2}%, held-out WER {:.2}%, {} epochs in {:.0} s",
        train_wer.report.error_rate,
        held_wer.report.error_rate,
        o.history.len(),
        elapsed.as_secs_f64()
    );
    ensure(
        train_wer.report.error_rate == 0.0,
        format!("{detail}: train WER not 0"),
    )?;
    ensure(
        held_wer.report.error_rate <= 5.0,
        format!("{detail}: held-out WER above 5%"),
    )?;
    ensure(
        elapsed < Duration::from_secs(15 * 60),
        format!("{detail}: too slow"),
    )?;
    Ok(detail)
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ctc-asr"))
}

fn run_bin(args: &[&str]) -> Result<String, String> {
    let out = bin()
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!(
            "`{}` exited with {:?}: {}",
            args.join(" "),
            out.status.code(),
            String::from_utf8_lossy(&out.stderr)
        ));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

fn count_polylines(path: &Path) -> Result<usize, String> {
    let text = std::fs::read_to_string(path).map_err(|e| e.to_string())?;
    let doc = roxmltree::Document::parse(&text).map_err(|e| format!("{}: {e}", path.display()))?;
    Ok(doc
        .descendants()
        .filter(|n| n.has_tag_name("polyline"))
        .count())
}

fn sweep(toy: &Toy) -> Check {
    let out = toy.root.join("sweep");
    let (cfg, out_s) = (toy.config.to_str().unwrap(), out.to_str().unwrap());
    run_bin(&[
        "sweep",
        "--config",
        cfg,
        "--filters",
        "4,8,16",
        "--epochs",
        "3",
        "--out",
        out_s,
    ])?;
    let combined =
        std::fs::read_to_string(out.join("sweep_history.csv")).map_err(|e| e.to_string())?;
    let lines: Vec<&str> = combined.lines().collect();
    ensure(
        lines[0] == "filters,epoch,train_loss,val_loss,val_wer",
        "combined CSV header",
    )?;
    ensure(
        lines.len() == 1 + 9,
        format!("combined CSV has {} rows", lines.len() - 1),
    )?;
    ensure(
        count_polylines(&out.join("loss.svg"))? == 6,
        "loss chart needs train and val per filter count",
    )?;
    ensure(
        count_polylines(&out.join("wer.svg"))? == 3,
        "WER chart needs one line per filter count",
    )?;
    let summary =
        std::fs::read_to_string(out.join("sweep_summary.csv")).map_err(|e| e.to_string())?;
    let rows: Vec<Vec<&str>> = summary
        .lines()
        .skip(1)
        .map(|l| l.split(',').collect())
        .collect();
    let filters: Vec<&str> = rows.iter().map(|r| r[0]).collect();
    ensure(
        filters == ["4", "8", "16"],
        format!("summary rows {filters:?}"),
    )?;
    for r in &rows {
        ensure(
            r[1].parse::<f64>().is_ok() && r[3] == "ok",
            format!("summary row {r:?}"),
        )?;
    }
    Ok(
        "3 runs, combined CSV with 9 rows, loss/WER charts with 6/3 polylines, 3 summary rows"
            .into(),
    )
}

fn batching(trained: &Trained) -> Check {
    let mut worst = 0.0f64;
    let random = init_params(&trained.model, 99);
    for (which, params) in [("trained", &trained.params), ("untrained", &random)] {
        let one = evaluate(
            params,
            &trained.model,
            &trained.heldout,
            &trained.vocab,
            1,
            0,
            None,
        )
        .map_err(|e| e.to_string())?;
        let eight = evaluate(
            params,
            &trained.model,
            &trained.heldout,
            &trained.vocab,
            8,
            0,
            None,
        )
        .map_err(|e| e.to_string())?;
        ensure(
            one.report == eight.report && one.hypotheses == eight.hypotheses,
            format!("{which}: reports differ"),
        )?;
        let diff = (one.mean_loss - eight.mean_loss).abs();
        ensure(diff <= 1e-9, format!("{which}: loss differs by {diff:e}"))?;
        worst = worst.max(diff);
    }
    Ok(format!(
        "identical WER and hypotheses, max loss difference {worst:.1e}"
    ))
}

fn without_seconds(path: &Path) -> Result<Vec<String>, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    Ok(text
        .lines()
        .map(|l| l.rsplit_once(',').map_or(l, |(a, _)| a).to_string())
        .collect())
}

fn determinism(toy: &Toy) -> Check {
    let mut histories = Vec::new();
    let mut checkpoints = Vec::new();
    for k in 0..2 {
        let out = toy.root.join(format!("det{k}"));
        run_bin(&[
            "train",
            "--config",
            toy.config.to_str().unwrap(),
            "--epochs",
            "20",
            "--seed",
            "4",
            "--out",
            out.to_str().unwrap(),
        ])?;
        histories.push(without_seconds(&out.join("history.csv"))?);
        checkpoints.push(std::fs::read(out.join("model.ckpt")).map_err(|e| e.to_string())?);
    }
    ensure(
        histories[0].len() == 21,
        format!("{} history rows", histories[0].len() - 1),
    )?;
    ensure(histories[0] == histories[1], "history CSVs differ")?;
    ensure(checkpoints[0] == checkpoints[1], "final checkpoints differ")?;
    Ok("two 20-epoch runs: identical history CSVs and checkpoints".into())
}

fn counters(row: &[&str]) -> [u64; 5] {
    let mut c = [0; 5];
    for (k, v) in row[1..6].iter().enumerate() {
        c[k] = v.parse().unwrap();
    }
    c
}

fn dual_eval(toy: &Toy, trained: &Trained) -> Check {
    let mut sets = Vec::new();
    for (name, seed, tag) in [("primary", 21, "toy"), ("secondary", 22, "other")] {
        let spec = SynthSpec {
            alphabet: "abc".into(),
            num_utterances: 30,
            seed,
            corpus_tag: tag.into(),
            num_speakers: 6,
            ..SynthSpec::default()
        };
        generate_synthetic_corpus(&spec, &toy.root.join(name)).map_err(|e| e.to_string())?;
        sets.push(format!(
            "{name}={}",
            toy.root.join(name).join("manifest.csv").display()
        ));
    }
    let out = toy.root.join("eval");
    let stdout = run_bin(&[
        "eval",
        "--checkpoint",
        trained.checkpoint.to_str().unwrap(),
        "--test",
        &sets[0],
        "--test",
        &sets[1],
        "--out",
        out.to_str().unwrap(),
    ])?;
    ensure(
        stdout.contains("Target: ") && stdout.contains("Prediction: "),
        "no sample pairs printed",
    )?;
    for name in ["primary", "secondary"] {
        let summary = std::fs::read_to_string(out.join(format!("{name}_summary.csv")))
            .map_err(|e| e.to_string())?;
        let rows: Vec<Vec<&str>> = summary
            .lines()
            .skip(1)
            .map(|l| l.split(',').collect())
            .collect();
        ensure(
            rows[0][0] == "overall",
            format!("{name}: first row {:?}", rows[0]),
        )?;
        let groups: Vec<&str> = rows[1..].iter().map(|r| r[0]).collect();
        ensure(
            groups == ["female", "male"],
            format!("{name}: groups {groups:?}"),
        )?;
        let overall = counters(&rows[0]);
        let mut sum = [0; 5];
        for r in &rows[1..] {
            for (s, v) in sum.iter_mut().zip(counters(r)) {
                *s += v;
            }
        }
        ensure(
            sum == overall,
            format!("{name}: groups sum to {sum:?}, overall {overall:?}"),
        )?;

        let mut rdr = csv::Reader::from_path(out.join(format!("{name}_utterances.csv")))
            .map_err(|e| e.to_string())?;
        let mut utt = [0u64; 5];
        for rec in rdr.records() {
            let rec = rec.map_err(|e| e.to_string())?;
            for (k, u) in utt.iter_mut().enumerate() {
                *u += rec[3 + k].parse::<u64>().map_err(|e| e.to_string())?;
            }
        }
        ensure(
            utt == overall,
            format!("{name}: utterances sum to {utt:?}, overall {overall:?}"),
        )?;
    }
    Ok(
        "both test sets: female + male rows and utterance rows add up to the overall counters"
            .into(),
    )
}

fn main() {
    let started = Instant::now();
    let tmp = tempfile::tempdir().expect("temp dir");
    let toy = toy_setup(tmp.path());
    let mut trained = None;
    let mut window = None;
    let mut results: Vec<(String, Check, f64)> = Vec::new();
    let mut record = |id: &str, name: &str, f: &mut dyn FnMut() -> Check| {
        let t = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = t.elapsed().as_secs_f64();
        let (tag, detail) = match &outcome {
            Ok(d) => ("PASS", d),
            Err(d) => ("FAIL", d),
        };
        println!("{tag} [{id}] {name}: {detail} ({secs:.1} s)");
        results.push((id.to_string(), outcome, secs));
    };

    record("1", "CTC lattice vs brute-force oracle", &mut ctc_oracle);
    record("2", "CTC gradient vs finite differences", &mut ctc_gradient);
    record("3", "full-model gradient check", &mut model_gradient);
    record(
        "4",
        "WER edit operations vs DP oracle",
        &mut wer_correctness,
    );
    record("5", "overfit synthetic tone corpus", &mut || {
        overfit(&toy, &mut trained, &mut window)
    });
    let mut w = window.take();
    record("5b", "training loss windowed decrease", &mut || {
        w.take()
            .unwrap_or_else(|| Err("overfit run did not complete".into()))
    });
    record("6", "filter sweep artifacts", &mut || sweep(&toy));
    record(
        "7",
        "batch size 1 vs 8 invariance",
        &mut || match &trained {
            Some(t) => batching(t),
            None => Err("needs the overfit model".into()),
        },
    );
    record("8", "seeded training determinism", &mut || {
        determinism(&toy)
    });
    record(
        "9",
        "dual test-set evaluation additivity",
        &mut || match &trained {
            Some(t) => dual_eval(&toy, t),
            None => Err("needs the overfit model".into()),
        },
    );

    let limits = [("1", 10.0), ("2", 30.0), ("3", 120.0), ("4", 10.0)];
    let mut failed: Vec<String> = results
        .iter()
        .filter(|r| r.1.is_err())
        .map(|r| r.0.clone())
        .collect();
    for (id, limit) in limits {
        if let Some(r) = results.iter().find(|r| r.0 == id) {
            if r.2 >= limit {
                println!("FAIL [{id}] runtime {:.1} s exceeds {limit} s", r.2);
                failed.push(id.to_string());
            }
        }
    }
    failed.sort();
    failed.dedup();
    println!(
        "acceptance: {} of {} criteria passed in {:.0} s",
        results.len() - failed.len(),
        results.len(),
        started.elapsed().as_secs_f64()
    );
    if !failed.is_empty() {
        println!("failed: {}", failed.join(", "));
        std::process::exit(1);
    }
}
