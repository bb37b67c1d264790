use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use probegen::experiment::load_checkpoint;
use probegen::probes::read_pnm;
use probegen::zoo::{save_zoo, Family, ModelZoo};
use probegen_cli::visualize::{pixel_of, BACKGROUND};
use probegen_cli::RESOLVED_FILE;

fn probegen(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_probegen"))
        .args(args)
        .output()
        .expect("spawn probegen")
}

fn ok(args: &[&str]) -> String {
    let out = probegen(args);
    assert!(
        out.status.success(),
        "{:?} failed: {}",
        args,
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn scratch() -> PathBuf {
    PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("cli-tests")
}

/// Small INR zoo shared by the tests; built once per test binary.
fn inr_zoo() -> &'static Path {
    static ZOO: OnceLock<PathBuf> = OnceLock::new();
    ZOO.get_or_init(|| {
        let dir = scratch().join("inr-zoo");
        let _ = std::fs::remove_dir_all(&dir);
        ok(&[
            "zoo",
            "generate",
            "--family",
            "inr",
            "--count",
            "40",
            "--seed",
            "3",
            "--out",
            s(&dir),
        ]);
        dir
    })
}

fn cnn_zoo() -> &'static Path {
    static ZOO: OnceLock<PathBuf> = OnceLock::new();
    ZOO.get_or_init(|| {
        let root = scratch().join("cnn");
        std::fs::create_dir_all(&root).unwrap();
        let cfg = root.join("gen.toml");
        std::fs::write(
            &cfg,
            "seed = 4\n[generate]\nfamily = \"cnn\"\ncount = 10\ntrain_images = 120\ntest_images = 60\n\
             [generate.cnn]\ndepth = [1, 2]\nchannel_choices = [4]\nepochs = [1, 2]\n",
        )
        .unwrap();
        let dir = root.join("zoo");
        let _ = std::fs::remove_dir_all(&dir);
        ok(&["--config", s(&cfg), "--out", s(&dir), "zoo", "generate"]);
        dir
    })
}

fn train(zoo: &Path, out: &Path, extra: &[&str]) -> Output {
    let _ = std::fs::remove_dir_all(out);
    let mut args = vec![
        "--threads",
        "1",
        "--out",
        s(out),
        "train",
        "--zoo",
        s(zoo),
        "--epochs",
        "2",
        "--batch-size",
        "8",
    ];
    args.extend_from_slice(extra);
    probegen(&args)
}

#[test]
fn verify_passes_then_names_the_corrupted_file() {
    let src = inr_zoo();
    let dir = scratch().join("corrupt");
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    for e in std::fs::read_dir(src).unwrap() {
        let e = e.unwrap();
        std::fs::copy(e.path(), dir.join(e.file_name())).unwrap();
    }
    assert!(ok(&["zoo", "verify", s(&dir)]).starts_with("ok: 40"));
    let victim = std::fs::read_dir(&dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .find(|p| p.extension().is_some_and(|x| x == "pgzw"))
        .unwrap();
    let mut bytes = std::fs::read(&victim).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0x01;
    std::fs::write(&victim, bytes).unwrap();
    let out = probegen(&["zoo", "verify", s(&dir)]);
    assert_eq!(out.status.code(), Some(3));
    let err = String::from_utf8_lossy(&out.stderr);
    assert_eq!(err.lines().count(), 1);
    assert!(
        err.contains(victim.file_name().unwrap().to_str().unwrap()),
        "{}",
        err
    );
}

#[test]
fn stats_on_an_empty_zoo() {
    let dir = scratch().join("empty");
    let _ = std::fs::remove_dir_all(&dir);
    save_zoo(&ModelZoo::empty(Family::Inr, 0, 10), &dir).unwrap();
    let text = ok(&["zoo", "stats", s(&dir)]);
    assert!(text.contains("count: 0"), "{}", text);
}

#[test]
fn train_writes_all_artifacts_and_reruns_identically() {
    let a = scratch().join("train-a");
    let out = train(inr_zoo(), &a, &["--probes", "16"]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    for f in [
        "report.toml",
        "report.csv",
        "checkpoint.toml",
        "checkpoint.bin",
        RESOLVED_FILE,
    ] {
        assert!(a.join(f).is_file(), "missing {}", f);
    }
    let b = scratch().join("train-b");
    assert!(train(inr_zoo(), &b, &["--probes", "16"]).status.success());
    let csv = std::fs::read(a.join("report.csv")).unwrap();
    assert_eq!(csv, std::fs::read(b.join("report.csv")).unwrap());

    let c = scratch().join("train-c");
    let _ = std::fs::remove_dir_all(&c);
    ok(&[
        "--config",
        s(&a.join(RESOLVED_FILE)),
        "--out",
        s(&c),
        "train",
    ]);
    assert_eq!(csv, std::fs::read(c.join("report.csv")).unwrap());
}

#[test]
fn statnn_with_probes_is_a_config_error() {
    let dir = scratch().join("statnn-bad");
    let out = train(inr_zoo(), &dir, &["--method", "statnn", "--probes", "8"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!dir.join("report.csv").exists());
    let out = train(inr_zoo(), &dir, &["--method", "boosting"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unknown_config_key_is_a_config_error() {
    let dir = scratch().join("badcfg");
    std::fs::create_dir_all(&dir).unwrap();
    let cfg = dir.join("c.toml");
    std::fs::write(&cfg, "[experiment]\nprobs = 3\n").unwrap();
    let out = probegen(&["--config", s(&cfg), "zoo", "stats", s(inr_zoo())]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn inr_repr_marks_one_pixel_per_distinct_probe_location() {
    let run = scratch().join("inr-vis-train");
    assert!(train(inr_zoo(), &run, &["--probes", "24"]).status.success());
    let out = scratch().join("inr-vis");
    let _ = std::fs::remove_dir_all(&out);
    ok(&[
        "--out",
        s(&out),
        "visualize",
        "inr-repr",
        "--checkpoint",
        s(&run),
        "--zoo",
        s(inr_zoo()),
        "--models",
        "3",
        "--size",
        "28",
    ]);

    let probes = load_checkpoint(&run)
        .unwrap()
        .probes()
        .unwrap()
        .unwrap()
        .probes;
    let cells: BTreeSet<(usize, usize)> = (0..probes.shape()[0])
        .map(|i| pixel_of(probes.row(i)[0], probes.row(i)[1], 28, 28))
        .collect();
    let images: Vec<PathBuf> = std::fs::read_dir(&out)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "pgm"))
        .collect();
    assert_eq!(images.len(), 3);
    let gray = (BACKGROUND * 255.0).round() / 255.0;
    for img in images {
        let px = read_pnm(&img).unwrap();
        assert_eq!(px.shape(), &[1, 28, 28]);
        for y in 0..28 {
            for x in 0..28 {
                if !cells.contains(&(y, x)) {
                    assert_eq!(
                        px.data()[y * 28 + x],
                        gray,
                        "{} at ({}, {})",
                        img.display(),
                        y,
                        x
                    );
                }
            }
        }
    }

    let mismatch = probegen(&[
        "--out",
        s(&out),
        "visualize",
        "inr-repr",
        "--checkpoint",
        s(&run),
        "--zoo",
        s(cnn_zoo()),
    ]);
    assert_eq!(mismatch.status.code(), Some(2));
}

#[test]
fn cnn_visualizations() {
    let run = scratch().join("cnn-vis-train");
    let out = train(cnn_zoo(), &run, &["--probes", "64", "--method", "vanilla"]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );

    let vis = scratch().join("cnn-vis");
    let _ = std::fs::remove_dir_all(&vis);
    ok(&[
        "--out",
        s(&vis),
        "visualize",
        "probes",
        "--checkpoint",
        s(&run),
    ]);
    let grid = read_pnm(&vis.join("probes.pgm")).unwrap();
    assert_eq!(grid.shape(), &[1, 8 * 9 - 1, 8 * 9 - 1]);
    let norms = std::fs::read_to_string(vis.join("probes_normalization.csv")).unwrap();
    assert_eq!(norms.lines().count(), 65);

    ok(&[
        "--out",
        s(&vis),
        "visualize",
        "logit-heatmap",
        "--checkpoint",
        s(&run),
        "--zoo",
        s(cnn_zoo()),
    ]);
    let text = std::fs::read_to_string(vis.join("logit_heatmap.csv")).unwrap();
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(header.len(), 3 + 10);
    let mut last_label = f64::NEG_INFINITY;
    let mut rows = 0;
    for line in lines {
        let f: Vec<&str> = line.split(',').collect();
        let label: f64 = f[1].parse().unwrap();
        assert!(label >= last_label);
        last_label = label;
        let sum: f64 = f[3..].iter().map(|v| v.parse::<f64>().unwrap()).sum();
        assert!((sum - 1.0).abs() <= 1e-5, "row sums to {}", sum);
        rows += 1;
    }
    assert_eq!(rows, 10 * 64);
}

#[test]
fn flops_and_ablation_write_reports() {
    let dir = scratch().join("flops");
    let _ = std::fs::remove_dir_all(&dir);
    let text = ok(&[
        "--out",
        s(&dir),
        "flops",
        "--zoo",
        s(inr_zoo()),
        "--probes",
        "128",
        "--batch-size",
        "64",
    ]);
    assert!(text.contains("probes = 128"), "{}", text);
    assert!(dir.join("flops.toml").is_file());

    let dir = scratch().join("ablate");
    let _ = std::fs::remove_dir_all(&dir);
    ok(&[
        "--threads",
        "1",
        "--out",
        s(&dir),
        "ablate",
        "--zoo",
        s(inr_zoo()),
        "--epochs",
        "1",
        "--axis",
        "probe-count",
        "--values",
        "4,8",
        "--seeds",
        "0",
    ]);
    let csv = std::fs::read_to_string(dir.join("ablation.csv")).unwrap();
    assert!(csv.starts_with("row,axis,value,seed"));
    assert_eq!(csv.lines().count(), 1 + 2 + 2);
}

#[test]
fn shipped_configs_parse() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut n = 0;
    for e in std::fs::read_dir(&dir).unwrap() {
        let path = e.unwrap().path();
        if path.extension().is_some_and(|x| x == "toml") {
            let cfg = probegen_cli::CliConfig::load(&path).unwrap();
            cfg.experiment.validate().unwrap();
            cfg.ablation.axis().unwrap();
            n += 1;
        }
    }
    assert!(n >= 2);
}
