use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use protomixer::io::{read_matrix, Manifest};
use protomixer::model::{load_checkpoint, MixerConfig};

const SMALL_ARCH: &[&str] = &[
    "--token-hidden",
    "8",
    "--channel-hidden",
    "16",
    "--blocks",
    "2",
    "--domain-hidden",
    "8",
];

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_protomixer"))
        .args(args)
        .output()
        .expect("spawn protomixer")
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn corpus(dir: &Path, name: &str, extra: &[&str]) -> PathBuf {
    let out = dir.join(name);
    let mut args = vec![
        "gen-synthetic",
        "--out",
        s(&out),
        "--bags",
        "30",
        "--classes",
        "3",
        "--n",
        "16",
        "--seed",
        "7",
        "--min-patches",
        "6",
        "--max-patches",
        "12",
    ];
    args.extend_from_slice(extra);
    ok(&args);
    out
}

fn reduce(dir: &Path, manifest: &Path, k: usize, name: &str) -> PathBuf {
    let out = dir.join(name);
    let k = k.to_string();
    ok(&[
        "reduce",
        "--manifest",
        s(manifest),
        "--k",
        &k,
        "--seed",
        "3",
        "--out",
        s(&out),
    ]);
    out
}

/// Content hash of every file under `dir` except run records.
fn tree_digest(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut files = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.file_name().unwrap() != "record.txt" {
                files.push((
                    p.strip_prefix(dir).unwrap().to_path_buf(),
                    fs::read(&p).unwrap(),
                ));
            }
        }
    }
    files.sort();
    files
}

#[test]
fn gen_synthetic_writes_requested_bags_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let a = corpus(dir.path(), "a", &[]);
    let b = corpus(dir.path(), "b", &[]);
    let manifest = Manifest::read(a.join("manifest.tsv")).unwrap();
    assert_eq!(manifest.entries.len(), 30);
    assert_eq!(tree_digest(&a), tree_digest(&b));
    let record = fs::read_to_string(a.join("record.txt")).unwrap();
    assert!(record.contains("seed = 7") && record.contains("input_sha256 = "));
}

#[test]
fn missing_required_flag_is_usage_error() {
    let out = run(&[
        "gen-synthetic",
        "--bags",
        "60",
        "--classes",
        "3",
        "--seed",
        "7",
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--n"));
    assert_eq!(run(&["no-such-command"]).status.code(), Some(2));
}

#[test]
fn reduce_writes_k_by_n_tables_and_flags_small_bags() {
    let dir = tempfile::tempdir().unwrap();
    let c = corpus(dir.path(), "c", &[]);
    let r = reduce(dir.path(), &c.join("manifest.tsv"), 5, "r5");
    let manifest = Manifest::read(r.join("manifest.tsv")).unwrap();
    assert_eq!(manifest.entries.len(), 30);
    for e in &manifest.entries {
        assert_eq!(read_matrix(manifest.resolve(e)).unwrap().shape(), (5, 16));
    }

    // k above the smallest bag (6 patches) pads and flags, still exit 0
    let big = reduce(dir.path(), &c.join("manifest.tsv"), 9, "r9");
    let report = fs::read_to_string(big.join("report.csv")).unwrap();
    let rows: Vec<Vec<&str>> = report
        .lines()
        .skip(1)
        .map(|l| l.split(',').collect())
        .collect();
    assert_eq!(rows.len(), 30);
    let mut padded = 0;
    for r in &rows {
        let instances: usize = r[1].parse().unwrap();
        assert!(r[3].parse::<f64>().unwrap() >= 0.0);
        assert_eq!(r[5] == "padded", instances < 9, "{r:?}");
        padded += usize::from(r[5] == "padded");
    }
    assert!(padded > 0);
}

#[test]
fn crossval_separates_noiseless_corpus_and_reruns_identically() {
    let dir = tempfile::tempdir().unwrap();
    let c = corpus(dir.path(), "c", &["--noise", "0"]);
    let r = reduce(dir.path(), &c.join("manifest.tsv"), 5, "r");
    let args = |out: &Path, jobs: &str| -> Vec<String> {
        let mut a: Vec<String> = [
            "crossval",
            "--manifest",
            s(&r.join("manifest.tsv")),
            "--out",
            s(out),
        ]
        .iter()
        .map(|x| x.to_string())
        .collect();
        a.extend(SMALL_ARCH.iter().map(|x| x.to_string()));
        a.extend(
            ["--epochs", "80", "--folds", "5", "--jobs", jobs]
                .iter()
                .map(|x| x.to_string()),
        );
        a
    };
    let first = dir.path().join("cv1");
    let second = dir.path().join("cv2");
    let a1 = args(&first, "1");
    let a2 = args(&second, "3");
    ok(&a1.iter().map(String::as_str).collect::<Vec<_>>());
    ok(&a2.iter().map(String::as_str).collect::<Vec<_>>());
    let metrics = fs::read_to_string(first.join("metrics.csv")).unwrap();
    assert_eq!(
        metrics,
        fs::read_to_string(second.join("metrics.csv")).unwrap()
    );
    let f1: Vec<f64> = metrics
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(2).unwrap().parse().unwrap())
        .collect();
    assert_eq!(f1.len(), 5);
    let mean = f1.iter().sum::<f64>() / 5.0;
    assert!(mean >= 0.95, "mean macro-F1 {mean}");
    assert!(first.join("losses.csv").is_file() && first.join("record.txt").is_file());
}

#[test]
fn profile_reports_analytic_parameter_count() {
    let dir = tempfile::tempdir().unwrap();
    let c = corpus(dir.path(), "c", &[]);
    let r = reduce(dir.path(), &c.join("manifest.tsv"), 4, "r");
    let manifest = r.join("manifest.tsv");
    let out = dir.path().join("t");
    let mut args = vec!["train", "--manifest", s(&manifest), "--out", s(&out)];
    args.extend_from_slice(SMALL_ARCH);
    args.extend_from_slice(&["--epochs", "2", "--profile"]);
    let stdout = ok(&args);
    // one domain per slide, 30 slides
    let expected = MixerConfig {
        tokens: 4,
        channels: 16,
        token_hidden: 8,
        channel_hidden: 16,
        blocks: 2,
        num_classes: 3,
        num_domains: 30,
        domain_hidden: 8,
        dropout_rate: 0.0,
        final_norm: true,
    }
    .param_count()
    .total();
    assert!(stdout.contains(&format!("params={expected} ")), "{stdout}");
    let record = fs::read_to_string(out.join("record.txt")).unwrap();
    assert!(
        record.contains(&format!("param_count = {expected}\n")),
        "{record}"
    );
    assert!(record.contains("seconds_per_epoch = "));
}

#[test]
fn eval_reproduces_training_metrics_and_rejects_mismatches() {
    let dir = tempfile::tempdir().unwrap();
    let c = corpus(dir.path(), "c", &[]);
    let r = reduce(dir.path(), &c.join("manifest.tsv"), 5, "r");
    let manifest = r.join("manifest.tsv");
    let t = dir.path().join("t");
    let mut args = vec!["train", "--manifest", s(&manifest), "--out", s(&t)];
    args.extend_from_slice(SMALL_ARCH);
    args.extend_from_slice(&["--epochs", "5", "--learning-rate", "1e-3"]);
    ok(&args);
    let ckpt = t.join("checkpoint.pmx");
    assert_eq!(load_checkpoint(&ckpt).unwrap().config().tokens, 5);

    let e = dir.path().join("e");
    ok(&[
        "eval",
        "--checkpoint",
        s(&ckpt),
        "--manifest",
        s(&manifest),
        "--out",
        s(&e),
    ]);
    assert_eq!(
        fs::read_to_string(t.join("metrics.csv")).unwrap(),
        fs::read_to_string(e.join("metrics.csv")).unwrap()
    );

    let r3 = reduce(dir.path(), &c.join("manifest.tsv"), 3, "r3");
    let out = run(&[
        "eval",
        "--checkpoint",
        s(&ckpt),
        "--manifest",
        s(&r3.join("manifest.tsv")),
    ]);
    assert_eq!(out.status.code(), Some(3));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(
        err.contains("tokens=5") && err.contains("tokens=3"),
        "{err}"
    );

    let missing = dir.path().join("missing.pmx");
    let out = run(&[
        "eval",
        "--checkpoint",
        s(&missing),
        "--manifest",
        s(&manifest),
    ]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.pmx"));
}

#[test]
fn config_file_values_yield_to_flags() {
    let dir = tempfile::tempdir().unwrap();
    let c = corpus(dir.path(), "c", &[]);
    let r = reduce(dir.path(), &c.join("manifest.tsv"), 2, "r");
    let cfg = dir.path().join("run.cfg");
    fs::write(
        &cfg,
        "token_hidden=8\nchannel_hidden=16\nblocks=1\ndomain_hidden=8\nepochs=9\nlearning_rate=0.001\n",
    )
    .unwrap();
    let t = dir.path().join("t");
    ok(&[
        "--config",
        s(&cfg),
        "train",
        "--manifest",
        s(&r.join("manifest.tsv")),
        "--out",
        s(&t),
        "--epochs",
        "3",
    ]);
    let record = fs::read_to_string(t.join("record.txt")).unwrap();
    assert!(
        record.contains("epochs = 3\n") && record.contains("blocks = 1\n"),
        "{record}"
    );
    assert_eq!(
        fs::read_to_string(t.join("losses.csv"))
            .unwrap()
            .lines()
            .count(),
        4
    );
}

#[test]
fn sweep_k_writes_one_row_per_k() {
    let dir = tempfile::tempdir().unwrap();
    let c = corpus(dir.path(), "c", &[]);
    let manifest = c.join("manifest.tsv");
    let out = dir.path().join("sweep");
    let mut args = vec!["sweep-k", "--manifest", s(&manifest), "--out", s(&out)];
    args.extend_from_slice(SMALL_ARCH);
    args.extend_from_slice(&["--k-list", "1,3,8", "--epochs", "2", "--folds", "3"]);
    ok(&args);
    let table = fs::read_to_string(out.join("sweep.csv")).unwrap();
    let ks: Vec<&str> = table
        .lines()
        .skip(1)
        .map(|l| l.split(',').next().unwrap())
        .collect();
    assert_eq!(ks, ["1", "3", "8"]);
    assert!(out.join("k1").join("metrics.csv").is_file());
}

#[test]
fn default_k_list_has_the_nine_standard_values() {
    let help = ok(&["sweep-k", "--help"]);
    assert!(help.contains("1,2,4,5,6,8,10,12,16"), "{help}");
}

#[test]
fn non_finite_training_exits_four() {
    let dir = tempfile::tempdir().unwrap();
    let c = corpus(dir.path(), "c", &[]);
    let r = reduce(dir.path(), &c.join("manifest.tsv"), 2, "r");
    let manifest = r.join("manifest.tsv");
    let t = dir.path().join("t");
    let mut args = vec!["train", "--manifest", s(&manifest), "--out", s(&t)];
    args.extend_from_slice(SMALL_ARCH);
    args.extend_from_slice(&["--epochs", "3", "--learning-rate", "1e300"]);
    let out = run(&args);
    assert_eq!(
        out.status.code(),
        Some(4),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}
