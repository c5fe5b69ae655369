//! End-to-end checks of the `swformer` binary: artifact layout,
//! idempotency, exit codes, and the identity behavior of untrained
//! (zero-head) checkpoints.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use swformer::checkpoint::snapshot;
use swformer::cli::RunConfig;
use swformer::network::SwformerNet;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_swformer"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn swformer")
}

fn run_ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "command {:?} failed\nstdout: {}\nstderr: {}",
        args,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn tiny_overrides() -> Vec<String> {
    [
        "model.base_width=8",
        "model.blocks_per_stage=1,1,1,1,1",
        "train.patch=16",
        "train.batch=1",
        "data.n_images=2",
        "data.height=32",
        "data.width=32",
    ]
    .iter()
    .flat_map(|s| ["--set".to_string(), s.to_string()])
    .collect()
}

fn with_tiny(mut args: Vec<String>) -> Vec<String> {
    args.extend(tiny_overrides());
    args
}

fn s(v: &[&str]) -> Vec<String> {
    v.iter().map(|x| x.to_string()).collect()
}

fn run_ok_v(args: Vec<String>) -> String {
    let refs: Vec<&str> = args.iter().map(String::as_str).collect();
    run_ok(&refs)
}

fn tree_bytes(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.push((rel, std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn make_corpus_at(dir: &Path, seed: &str) -> PathBuf {
    let out = dir.to_string_lossy().into_owned();
    run_ok_v(with_tiny(s(&["make-corpus", "--out", &out, "--seed", seed])));
    dir.to_path_buf()
}

/// Zero-head checkpoint: the network adds an exactly-zero residual.
fn identity_ckpt(dir: &Path) -> PathBuf {
    let mut cfg = RunConfig::default();
    cfg.model.base_width = 8;
    cfg.model.blocks_per_stage = [1, 1, 1, 1, 1];
    let net = SwformerNet::<f32>::new(&cfg.model, cfg.seed).unwrap();
    net.zero_init_heads();
    let path = dir.join("identity.swf");
    snapshot(&net, None, cfg.to_toml_string(), cfg.seed).save(&path).unwrap();
    path
}

#[test]
fn make_corpus_is_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let a = make_corpus_at(&dir.path().join("a"), "3");
    let b = make_corpus_at(&dir.path().join("b"), "3");
    let c = make_corpus_at(&dir.path().join("c"), "4");
    assert!(a.join("degraded/img_0000.png").exists());
    assert!(a.join("clean/img_0001.png").exists());
    assert!(a.join("config.toml").exists());
    assert!(a.join("manifest.txt").exists());
    assert_eq!(tree_bytes(&a), tree_bytes(&b), "same seed must reproduce bytes");
    assert_ne!(tree_bytes(&a), tree_bytes(&c), "different seed must differ");
    let manifest = std::fs::read_to_string(a.join("manifest.txt")).unwrap();
    assert!(manifest.contains("command=make-corpus"), "{manifest}");
    assert!(manifest.contains("seed=3"), "{manifest}");
}

#[test]
fn infer_with_zero_heads_reproduces_input_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = make_corpus_at(&dir.path().join("corpus"), "1");
    let ckpt = identity_ckpt(dir.path());
    let out = dir.path().join("restored");
    run_ok_v(s(&[
        "infer",
        "--ckpt",
        ckpt.to_str().unwrap(),
        "--input",
        corpus.join("clean").to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]));
    for stem in ["img_0000", "img_0001"] {
        let src = std::fs::read(corpus.join("clean").join(format!("{stem}.png"))).unwrap();
        let dst = std::fs::read(out.join(format!("{stem}.png"))).unwrap();
        assert_eq!(src, dst, "{stem}: identity restore must round-trip the file");
    }
}

#[test]
fn eval_on_identical_folders_reports_inf_and_honors_y_flag() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = make_corpus_at(&dir.path().join("corpus"), "2");
    // degraded == clean: metrics must hit their ideal sentinels
    for stem in ["img_0000", "img_0001"] {
        std::fs::copy(
            corpus.join("clean").join(format!("{stem}.png")),
            corpus.join("degraded").join(format!("{stem}.png")),
        )
        .unwrap();
    }
    let ckpt = identity_ckpt(dir.path());
    let out = dir.path().join("eval");
    let stdout = run_ok_v(s(&[
        "eval",
        "--ckpt",
        ckpt.to_str().unwrap(),
        "--data",
        corpus.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--workers",
        "2",
    ]));
    assert!(stdout.contains("psnr=inf"), "{stdout}");
    assert!(stdout.contains("y_channel=false"), "{stdout}");
    let metrics = std::fs::read_to_string(out.join("metrics.txt")).unwrap();
    assert_eq!(metrics, stdout);
    assert!(metrics.contains("image=img_0000"));
    assert!(metrics.lines().last().unwrap().contains("mean_ssim=1"), "{metrics}");

    let out_y = dir.path().join("eval_y");
    let stdout_y = run_ok_v(s(&[
        "eval",
        "--ckpt",
        ckpt.to_str().unwrap(),
        "--data",
        corpus.to_str().unwrap(),
        "--out",
        out_y.to_str().unwrap(),
        "--y",
    ]));
    assert!(stdout_y.contains("y_channel=true"), "{stdout_y}");
}

#[test]
fn train_writes_artifacts_and_guards_config_drift() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let base = s(&["train", "--out", out.to_str().unwrap(), "--seed", "5"]);
    let mut args = with_tiny(base.clone());
    args.extend(s(&["--set", "train.steps=4", "--set", "train.log_every=2"]));
    let stdout = run_ok_v(args);
    assert!(stdout.contains("step=3"), "{stdout}");
    assert!(out.join("checkpoint.swf").exists());
    let log = std::fs::read_to_string(out.join("train_log.txt")).unwrap();
    assert_eq!(log.lines().count(), 4, "{log}");
    for (i, line) in log.lines().enumerate() {
        assert!(line.starts_with(&format!("step={i} ")), "{line}");
    }
    let echoed = std::fs::read_to_string(out.join("config.toml")).unwrap();
    let cfg = RunConfig::from_toml(&echoed).unwrap();
    assert_eq!(cfg.train.steps, 4);
    assert_eq!(cfg.seed, 5);

    // same out dir, different steps: the checkpoint belongs to another config
    let mut drift = with_tiny(base);
    drift.extend(s(&["--set", "train.steps=6", "--set", "train.log_every=2"]));
    let refs: Vec<&str> = drift.iter().map(String::as_str).collect();
    let res = run(&refs);
    assert_eq!(res.status.code(), Some(6), "checkpoint mismatch should exit 6");
    let err = String::from_utf8_lossy(&res.stderr);
    assert!(err.starts_with("error kind=checkpoint"), "{err}");
    assert_eq!(err.lines().count(), 1, "single-line errors only: {err}");
}

#[test]
fn analyze_writes_panels_energy_table_and_swaps() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = make_corpus_at(&dir.path().join("corpus"), "6");
    let out = dir.path().join("analysis");
    let stdout = run_ok_v(s(&[
        "analyze",
        "--data",
        corpus.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--swap",
        "ll",
        "--workers",
        "2",
    ]));
    assert!(stdout.contains("pair=img_0000"), "{stdout}");
    assert!(stdout.contains("band_ll="), "{stdout}");
    for f in [
        "img_0000_residual.png",
        "img_0000_spectrum.png",
        "img_0000_band_hh.png",
        "img_0000_energy.txt",
        "img_0000_swap_degraded.png",
        "img_0000_swap_clean.png",
        "energy.txt",
    ] {
        assert!(out.join(f).exists(), "missing {f}");
    }
    let table = std::fs::read_to_string(out.join("energy.txt")).unwrap();
    assert_eq!(table.lines().count(), 2, "{table}");
}

#[test]
fn gradcheck_command_passes_on_tiny_model() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("gc");
    let mut args = with_tiny(s(&["gradcheck", "--out", out.to_str().unwrap()]));
    args.extend(s(&["--coords", "1", "--size", "16"]));
    let stdout = run_ok_v(args);
    assert!(stdout.contains("gradcheck PASS"), "{stdout}");
    let report = std::fs::read_to_string(out.join("gradcheck.txt")).unwrap();
    assert!(report.contains("gradcheck PASS"), "{report}");
}

#[test]
fn errors_are_single_line_with_distinct_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let out_s = out.to_str().unwrap().to_string();

    // unknown config key -> config error
    let res = run(&["make-corpus", "--out", &out_s, "--set", "model.depth=3"]);
    assert_eq!(res.status.code(), Some(3));
    let err = String::from_utf8_lossy(&res.stderr);
    assert!(err.starts_with("error kind=config msg="), "{err}");
    assert_eq!(err.lines().count(), 1);

    // missing data folder -> io error
    let missing = dir.path().join("nope");
    let res = run(&[
        "analyze",
        "--data",
        missing.to_str().unwrap(),
        "--out",
        &out_s,
    ]);
    assert_eq!(res.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&res.stderr).starts_with("error kind=io"), "{res:?}");

    // corrupt checkpoint -> checkpoint error
    let fake = dir.path().join("fake.swf");
    std::fs::write(&fake, b"not a checkpoint").unwrap();
    let res = run(&[
        "infer",
        "--ckpt",
        fake.to_str().unwrap(),
        "--input",
        fake.to_str().unwrap(),
        "--out",
        &out_s,
    ]);
    assert_eq!(res.status.code(), Some(6));
    assert!(String::from_utf8_lossy(&res.stderr).starts_with("error kind=checkpoint"), "{res:?}");

    // unpaired folder -> unpaired error
    let broken = dir.path().join("broken");
    std::fs::create_dir_all(broken.join("degraded")).unwrap();
    std::fs::create_dir_all(broken.join("clean")).unwrap();
    let corpus = make_corpus_at(&dir.path().join("corpus"), "9");
    std::fs::copy(
        corpus.join("degraded/img_0000.png"),
        broken.join("degraded/img_0000.png"),
    )
    .unwrap();
    let res = run(&[
        "analyze",
        "--data",
        broken.to_str().unwrap(),
        "--out",
        &out_s,
    ]);
    assert_eq!(res.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&res.stderr).starts_with("error kind=unpaired"), "{res:?}");
}
