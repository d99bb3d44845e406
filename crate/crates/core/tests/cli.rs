use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_pwtk");

// Desk-scale shapes with a reduced patch budget to keep the smoke run short.
const SMOKE_CONFIG: &str = r#"{ "seed": 11, "preproc": { "patches_per_case": 16 } }"#;

fn pwtk(dir: &Path, args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .current_dir(dir)
        .env_remove("PWTK_SEED")
        .output()
        .expect("spawn pwtk")
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = pwtk(dir, args);
    assert!(
        out.status.success(),
        "pwtk {args:?} exited {:?}\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn code(dir: &Path, args: &[&str]) -> i32 {
    pwtk(dir, args).status.code().expect("exit code")
}

fn files(root: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

/// synth → window → preprocess → train → predict → evaluate in `dir`.
fn smoke(dir: &Path, threads: &str) {
    std::fs::write(dir.join("config.json"), SMOKE_CONFIG).unwrap();
    let t = ["--threads", threads];
    let run = |args: &[&str]| ok(dir, &[args, &t].concat());
    run(&[
        "synth",
        "--out",
        "raw",
        "--cases",
        "4",
        "--config",
        "config.json",
    ]);
    run(&[
        "window",
        "--in",
        "raw/case_000",
        "--out",
        "win/case_000.pwt",
        "--seed",
        "11",
    ]);
    run(&[
        "preprocess",
        "--case",
        "raw",
        "--out",
        "pre",
        "--config",
        "config.json",
    ]);
    run(&[
        "preprocess",
        "--case",
        "raw/case_000",
        "--window",
        "win/case_000.pwt",
        "--out",
        "pre_win",
        "--config",
        "config.json",
    ]);
    run(&[
        "train",
        "--data",
        "pre",
        "--arch",
        "branched",
        "--config",
        "config.json",
        "--out",
        "ck/model.pwck",
        "--epochs",
        "5",
    ]);
    run(&[
        "predict",
        "--model",
        "ck/model.pwck",
        "--case",
        "pre",
        "--out",
        "pred",
    ]);
    run(&[
        "evaluate",
        "--pred",
        "pred",
        "--gt",
        "pre",
        "--report",
        "metrics.csv",
    ]);
}

#[test]
fn usage_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(code(d, &[]), 1);
    assert_eq!(code(d, &["frobnicate"]), 1);
    assert_eq!(code(d, &["train", "--arch", "branched"]), 1);
    assert_eq!(
        code(
            d,
            &["train", "--data", "x", "--arch", "resnet", "--out", "m"]
        ),
        1
    );
    std::fs::write(
        d.join("bad.json"),
        r#"{ "train": { "learning_rat": 0.1 } }"#,
    )
    .unwrap();
    assert_eq!(
        code(d, &["synth", "--out", "raw", "--config", "bad.json"]),
        1
    );
    std::fs::write(d.join("zero.json"), r#"{ "train": { "batch_size": 0 } }"#).unwrap();
    assert_eq!(
        code(d, &["synth", "--out", "raw", "--config", "zero.json"]),
        1
    );
    assert!(!d.join("raw").exists());
}

#[test]
fn data_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(
        code(
            d,
            &["train", "--data", "missing", "--arch", "standard", "--out", "m.pwck"]
        ),
        2
    );
    assert_eq!(
        code(
            d,
            &["evaluate", "--pred", "p", "--gt", "g", "--report", "r.csv"]
        ),
        2
    );
    std::fs::write(d.join("junk.pwck"), b"not a checkpoint").unwrap();
    assert_eq!(
        code(
            d,
            &[
                "predict",
                "--model",
                "junk.pwck",
                "--case",
                ".",
                "--out",
                "o.pwt"
            ]
        ),
        2
    );
}

#[test]
fn help_documents_every_subcommand() {
    let dir = tempfile::tempdir().unwrap();
    let top = String::from_utf8(ok(dir.path(), &["--help"]).stdout).unwrap();
    let subs = [
        "synth",
        "window",
        "preprocess",
        "train",
        "predict",
        "evaluate",
        "nmi",
        "report",
        "selftest",
    ];
    for s in subs {
        assert!(top.contains(s), "{s} missing from top-level help");
        let h = String::from_utf8(ok(dir.path(), &[s, "--help"]).stdout).unwrap();
        assert!(h.contains("--threads") && h.contains("--seed"), "{s}: {h}");
    }
    let synth = String::from_utf8(ok(dir.path(), &["synth", "--help"]).stdout).unwrap();
    assert!(synth.contains("[default: 4]"));
    let nmi = String::from_utf8(ok(dir.path(), &["nmi", "--help"]).stdout).unwrap();
    assert!(nmi.contains("[default: 64]"));
    let window = String::from_utf8(ok(dir.path(), &["window", "--help"]).stdout).unwrap();
    assert!(window.contains("[default: 26]"));
}

#[test]
fn selftest_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(dir.path(), &["selftest"]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.lines().count() > 15);
    assert!(text.lines().all(|l| l.starts_with("[PASS] ")), "{text}");
}

#[test]
fn smoke_pipeline_is_deterministic_across_thread_counts() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    smoke(a.path(), "1");
    smoke(b.path(), "4");

    let csv = std::fs::read_to_string(a.path().join("metrics.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "case_id,dice,hd,assd,precision,recall");
    assert_eq!(lines.len(), 1 + 4 + 2);
    for (i, l) in lines[1..5].iter().enumerate() {
        let f: Vec<&str> = l.split(',').collect();
        assert_eq!(f.len(), 6);
        assert_eq!(f[0], format!("case_{i:03}"));
        for v in [f[1], f[4], f[5]] {
            let x: f64 = v.parse().unwrap();
            assert!((0.0..=1.0).contains(&x), "{l}");
        }
        for v in [f[2], f[3]] {
            assert!(v == "NA" || v.parse::<f64>().unwrap() >= 0.0, "{l}");
        }
    }
    assert!(lines[5].starts_with("mean,") && lines[6].starts_with("sd,"));
    let loss = std::fs::read_to_string(a.path().join("ck/loss.csv")).unwrap();
    assert_eq!(loss.lines().count(), 1 + 5);

    // the pre-cut window reproduces automatic detection
    for f in ["pwi.pwt", "gt.pwt", "brain.pwt", "patches.pwt", "case.json"] {
        assert_eq!(
            std::fs::read(a.path().join("pre_win").join(f)).unwrap(),
            std::fs::read(a.path().join("pre/case_000").join(f)).unwrap(),
            "{f}"
        );
    }

    let fa = files(a.path());
    assert_eq!(fa, files(b.path()));
    assert!(fa.len() > 40);
    for f in &fa {
        assert_eq!(
            std::fs::read(a.path().join(f)).unwrap(),
            std::fs::read(b.path().join(f)).unwrap(),
            "{} differs between --threads 1 and 4",
            f.display()
        );
    }
}
