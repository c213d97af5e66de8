use std::path::Path;
use std::process::{Command, Output};

fn xfer(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_xfer"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("spawn xfer")
}

fn ok(dir: &Path, args: &[&str]) {
    let out = xfer(dir, args);
    assert!(
        out.status.success(),
        "xfer {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn read(dir: &Path, name: &str) -> String {
    std::fs::read_to_string(dir.join(name)).unwrap()
}

const TINY: &[&str] = &[
    "--layers",
    "2",
    "--hidden",
    "16",
    "--heads",
    "2",
    "--ffn",
    "32",
    "--model-max-len",
    "24",
    "--batch-size",
    "8",
    "--lr",
    "1e-3",
];

/// Corpus, task, injection, pretraining and two fine-tuning runs.
fn pipeline(dir: &Path) {
    ok(
        dir,
        &[
            "gen-corpus",
            "--kind",
            "nesting",
            "--lines",
            "200",
            "--max-len",
            "16",
            "--seed",
            "4",
            "--out",
            "c.txt",
        ],
    );
    ok(
        dir,
        &[
            "gen-task",
            "--lines",
            "120",
            "--min-len",
            "10",
            "--max-len",
            "14",
            "--motif-len",
            "3",
            "--seed",
            "1",
            "--out",
            "t.tsv",
        ],
    );
    ok(
        dir,
        &[
            "make-map",
            "--kind",
            "inject",
            "--vocab",
            "t.tsv.vocab",
            "--model-vocab",
            "c.txt.vocab",
            "--avoid-unused",
            "--seed",
            "2",
            "--out",
            "inj.map",
        ],
    );
    ok(
        dir,
        &[
            "remap",
            "--map",
            "inj.map",
            "--data",
            "t.tsv",
            "--model-vocab",
            "c.txt.vocab",
            "--out",
            "task.tsv",
        ],
    );
    let mut pre = vec![
        "pretrain",
        "--corpus",
        "c.txt",
        "--steps",
        "10",
        "--log-every",
        "5",
        "--out",
        "p.ck",
    ];
    pre.extend_from_slice(TINY);
    ok(dir, &pre);
    for (mode, out) in [("checkpoint", "runs/ck"), ("scratch", "runs/sc")] {
        let mut ft = vec![
            "finetune",
            "--data",
            "task.tsv",
            "--ckpt",
            "p.ck",
            "--init-mode",
            mode,
            "--steps",
            "6",
            "--out-dir",
            out,
        ];
        ft.extend_from_slice(TINY);
        ok(dir, &ft);
    }
}

#[test]
fn gen_corpus_writes_requested_lines_and_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    ok(
        tmp.path(),
        &[
            "gen-corpus",
            "--kind",
            "flat",
            "--lines",
            "37",
            "--out",
            "sub/c.txt",
        ],
    );
    assert_eq!(read(tmp.path(), "sub/c.txt").lines().count(), 37);
    let m: serde_json::Value =
        serde_json::from_str(&read(tmp.path(), "sub/c.txt.manifest.json")).unwrap();
    assert_eq!(m["config"]["corpus"]["lines"], 37);
    assert_eq!(m["run_id"].as_str().unwrap().len(), 16);
}

#[test]
fn config_file_then_flags() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(
        tmp.path().join("cfg.json"),
        r#"{"corpus": {"kind": "uniform", "lines": 12, "min_len": 4, "max_len": 6}}"#,
    )
    .unwrap();
    ok(
        tmp.path(),
        &[
            "gen-corpus",
            "--config",
            "cfg.json",
            "--max-len",
            "5",
            "--out",
            "c.txt",
        ],
    );
    let text = read(tmp.path(), "c.txt");
    assert_eq!(text.lines().count(), 12);
    assert!(text
        .lines()
        .all(|l| (4..=5).contains(&l.split(' ').count())));

    std::fs::write(tmp.path().join("bad.json"), r#"{"corpus": {"lenght": 3}}"#).unwrap();
    let out = xfer(
        tmp.path(),
        &["gen-corpus", "--config", "bad.json", "--out", "d.txt"],
    );
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn usage_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(
        xfer(tmp.path(), &["finetune", "--bogus"]).status.code(),
        Some(2)
    );
    assert_eq!(xfer(tmp.path(), &["gen-corpus"]).status.code(), Some(2));
    assert_eq!(xfer(tmp.path(), &["--version"]).status.code(), Some(0));
}

#[test]
fn runtime_errors_exit_1() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::create_dir(tmp.path().join("empty")).unwrap();
    let out = xfer(tmp.path(), &["report", "empty", "--out", "r.csv"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
    assert_eq!(
        xfer(
            tmp.path(),
            &["pretrain", "--corpus", "missing.txt", "--out", "p.ck"]
        )
        .status
        .code(),
        Some(1)
    );
}

#[test]
fn full_pipeline_outputs_and_report() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    pipeline(d);

    let curve = read(d, "p.ck.curve.csv");
    assert_eq!(curve.lines().next(), Some("step,loss"));
    assert_eq!(curve.lines().count(), 1 + 3);
    for f in [
        "metrics.csv",
        "valid_metrics.csv",
        "curve.csv",
        "model.ck",
        "manifest.json",
    ] {
        assert!(d.join("runs/ck").join(f).is_file(), "{f}");
    }
    let metrics = read(d, "runs/ck/metrics.csv");
    assert!(metrics.starts_with("run_id,init_mode,seed,metric,value,n\n"));
    assert_eq!(metrics.lines().count(), 4);

    ok(d, &["report", "runs", "--out", "report.csv"]);
    let report = read(d, "report.csv");
    let mut lines = report.lines();
    assert_eq!(lines.next(), Some("task,init_mode,metric,mean,std,n_runs"));
    let sc_acc: f64 = read(d, "runs/sc/metrics.csv")
        .lines()
        .find(|l| l.contains(",accuracy,"))
        .and_then(|l| l.split(',').nth(4))
        .unwrap()
        .parse()
        .unwrap();
    let row = lines
        .find(|l| l.starts_with("task,scratch,accuracy,"))
        .expect("scratch row");
    let fields: Vec<&str> = row.split(',').collect();
    assert!((fields[3].parse::<f64>().unwrap() - sc_acc).abs() < 1e-12);
    assert_eq!(fields[5], "1");
    assert_eq!(report.lines().count(), 1 + 2 * 3);

    let diag = [
        "diagnose",
        "pwcca",
        "--ckpt-a",
        "p.ck",
        "--ckpt-b",
        "runs/ck/model.ck",
        "--data",
        "task.tsv",
        "--vocab",
        "c.txt.vocab",
        "--n-points",
        "40",
        "--out",
        "pw.csv",
    ];
    ok(d, &diag);
    let pw = read(d, "pw.csv");
    assert!(pw.starts_with("dir,layer,value\n"));
    assert_eq!(pw.lines().count(), 1 + 3 * 2);
    ok(
        d,
        &[
            "diagnose",
            "perturb",
            "--ckpt",
            "runs/ck/model.ck",
            "--data",
            "task.tsv",
            "--vocab",
            "c.txt.vocab",
            "--draws",
            "2",
            "--n-examples",
            "4",
            "--sigmas",
            "0,1e-3",
            "--out",
            "pt.csv",
        ],
    );
    assert!(read(d, "pt.csv").starts_with("sigma,mean_dist,std_dist,n_draws\n0,0,0,2\n"));
}

#[test]
fn pipeline_is_byte_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    pipeline(a.path());
    pipeline(b.path());
    for f in [
        "c.txt",
        "t.tsv",
        "inj.map",
        "task.tsv",
        "p.ck",
        "p.ck.curve.csv",
        "runs/ck/model.ck",
        "runs/ck/metrics.csv",
        "runs/sc/curve.csv",
        "runs/ck/manifest.json",
    ] {
        let x = std::fs::read(a.path().join(f)).unwrap();
        let y = std::fs::read(b.path().join(f)).unwrap();
        assert!(x == y, "{f} differs between identical runs");
    }
}
