use std::path::Path;
use std::process::{Command, Output};

fn omcl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_omcl"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

const QUICK: &[&str] = &[
    "--backbone",
    "mlp",
    "--hidden",
    "8",
    "--embed-dim",
    "4",
    "--epochs",
    "2",
    "--trial",
    "0",
];

fn train(out: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["train", "--out", path(out)];
    args.extend_from_slice(QUICK);
    args.extend_from_slice(extra);
    omcl(&args)
}

#[test]
fn split_writes_five_trials() {
    let dir = tempfile::tempdir().unwrap();
    let out = omcl(&[
        "split",
        "--classes",
        "8",
        "--k",
        "5",
        "--seed",
        "2023",
        "--out",
        path(dir.path()),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout(&out).contains("config digest: "));
    let text = std::fs::read_to_string(dir.path().join("splits.json")).unwrap();
    let file: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(file["trials"].as_array().unwrap().len(), 5);
    assert!(dir.path().join("manifest.json").exists());
}

#[test]
fn usage_errors_exit_with_one() {
    assert_eq!(
        code(&omcl(&["train", "--config", "/no/such/config.toml", "--out", "/tmp/x"])),
        1
    );
    assert_eq!(code(&omcl(&["train", "--no-such-flag"])), 1);
    assert_eq!(
        code(&omcl(&["sweep", "--axis", "bogus", "--values", "1", "--out", "/tmp/x"])),
        1
    );
    assert_eq!(code(&omcl(&["--help"])), 0);
}

#[test]
fn missing_dataset_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = train(dir.path(), &["--dataset", "/no/such/dataset"]);
    assert_eq!(code(&out), 2, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn gradcheck_passes() {
    let out = omcl(&["gradcheck", "--cases", "5"]);
    assert_eq!(code(&out), 0);
    let text = stdout(&out);
    for term in ["cos", "mlas", "oss", "omcl"] {
        assert!(text.contains(term), "{text}");
    }
}

#[test]
fn train_is_idempotent_and_feeds_eval_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for d in [&a, &b] {
        let out = train(d, &[]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    }
    let manifest = |d: &Path| std::fs::read_to_string(d.join("manifest.json")).unwrap();
    assert_eq!(manifest(&a), manifest(&b));
    let m: serde_json::Value = serde_json::from_str(&manifest(&a)).unwrap();
    let files: Vec<&str> = m["files"]
        .as_array()
        .unwrap()
        .iter()
        .map(|f| f["path"].as_str().unwrap())
        .collect();
    for f in [
        "config.toml",
        "log.jsonl",
        "trial0/checkpoint.omcl",
        "trial0/report.json",
        "trial0/record.json",
        "trial0/stats.json",
    ] {
        assert!(files.contains(&f), "{files:?}");
    }
    let log = std::fs::read_to_string(a.join("log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 2);

    let ckpt = a.join("trial0/checkpoint.omcl");
    let ev = dir.path().join("eval");
    let out = omcl(&["eval", "--checkpoint", path(&ckpt), "--out", path(&ev)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let reread =
        |p: &Path| -> serde_json::Value { serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap() };
    assert_eq!(reread(&ev.join("report.json")), reread(&a.join("trial0/report.json")));
    assert!(std::fs::read_to_string(ev.join("oscr.csv"))
        .unwrap()
        .starts_with("threshold,fpr,ccr\n"));
    assert!(std::fs::read_to_string(ev.join("roc.csv"))
        .unwrap()
        .starts_with("threshold,fpr,tpr\n"));

    let emb = dir.path().join("emb");
    let out = omcl(&[
        "export-embeddings",
        "--checkpoint",
        path(&ckpt),
        "--cap",
        "3",
        "--out",
        path(&emb),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(
        std::fs::read_to_string(emb.join("embeddings.csv"))
            .unwrap()
            .lines()
            .count(),
        1 + 8 * 3
    );

    let rep = dir.path().join("rep");
    let out = omcl(&["report", path(&a), "--ablation", "--out", path(&rep)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(std::fs::read_to_string(rep.join("table.txt")).unwrap().contains("omcl"));
}

#[test]
fn corrupt_checkpoint_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.omcl");
    std::fs::write(&bad, b"garbage").unwrap();
    let out = omcl(&["eval", "--checkpoint", path(&bad), "--out", path(&dir.path().join("o"))]);
    assert_eq!(code(&out), 2);
}

#[test]
fn sweep_writes_one_row_per_value() {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec![
        "sweep",
        "--axis",
        "t",
        "--values",
        "-0.1,0.1",
        "--jobs",
        "2",
        "--out",
        path(dir.path()),
    ];
    args.extend_from_slice(QUICK);
    let out = omcl(&args);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
}
