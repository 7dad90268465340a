use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn dfm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dfm")).args(args).env_remove("DFM_THREADS").output().unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = dfm(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn p(dir: &Path, name: &str) -> String {
    dir.join(name).to_string_lossy().into_owned()
}

/// Writes a small planted dataset and its split.
fn prepared() -> (tempfile::TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_path_buf();
    ok(&["synth", "--out", &p(&d, "all.libfm"), "--instances", "600"]);
    ok(&[
        "split", "--input", &p(&d, "all.libfm"), "--train-out", &p(&d, "train.libfm"),
        "--test-out", &p(&d, "test.libfm"), "--seed", "3",
    ]);
    (dir, d)
}

#[test]
fn train_predict_eval_pipeline() {
    let (_guard, d) = prepared();
    let train = p(&d, "train.libfm");
    let test = p(&d, "test.libfm");
    let out = ok(&[
        "train-dfm", "--input", &train, "--k", "8", "--beta", "1e-2", "--alpha", "1e-2", "--seed", "7",
        "--out", &p(&d, "a.dfm"),
    ]);
    let log = String::from_utf8(out.stderr).unwrap();
    let first = log.lines().next().unwrap();
    assert!(first.starts_with("iter=0 obj="), "{first}");
    for line in log.lines() {
        let (i, o) = line.split_once(' ').unwrap();
        assert!(i.strip_prefix("iter=").unwrap().parse::<usize>().is_ok());
        assert!(o.strip_prefix("obj=").unwrap().parse::<f64>().unwrap().is_finite());
    }
    ok(&[
        "train-dfm", "--input", &train, "--k", "8", "--beta", "1e-2", "--alpha", "1e-2", "--seed", "7",
        "--out", &p(&d, "b.dfm"),
    ]);
    assert_eq!(std::fs::read(d.join("a.dfm")).unwrap(), std::fs::read(d.join("b.dfm")).unwrap());

    ok(&["train-fm", "--input", &train, "--k", "8", "--seed", "7", "--out", &p(&d, "a.fm")]);
    ok(&["train-fm", "--input", &train, "--k", "8", "--seed", "7", "--out", &p(&d, "b.fm")]);
    assert_eq!(std::fs::read(d.join("a.fm")).unwrap(), std::fs::read(d.join("b.fm")).unwrap());

    ok(&["predict", "--model", &p(&d, "a.dfm"), "--input", &test, "--out", &p(&d, "preds.txt")]);
    let preds = std::fs::read_to_string(d.join("preds.txt")).unwrap();
    let instances = std::fs::read_to_string(&test).unwrap().lines().filter(|l| !l.starts_with('#')).count();
    assert_eq!(preds.lines().count(), instances);
    assert!(preds.lines().all(|l| l.parse::<f64>().unwrap().is_finite()));
    let stdout = ok(&["predict", "--model", &p(&d, "a.fm"), "--input", &test]).stdout;
    assert_eq!(String::from_utf8(stdout).unwrap().lines().count(), instances);

    let eval = String::from_utf8(ok(&["eval", "--model", &p(&d, "a.dfm"), "--input", &test]).stdout).unwrap();
    assert_eq!(eval.lines().count(), 11);
    let v: f64 = eval.lines().last().unwrap().strip_prefix("ndcg@10=").unwrap().parse().unwrap();
    assert!((0.0..=1.0).contains(&v));

    let bench = String::from_utf8(
        ok(&["bench", "--model-fm", &p(&d, "a.fm"), "--model-dfm", &p(&d, "a.dfm"), "--input", &test, "--reps", "1"])
            .stdout,
    )
    .unwrap();
    let row = |label: &str| -> f64 {
        let line = bench.lines().find(|l| l.starts_with(label)).unwrap();
        line.split_whitespace().last().unwrap().parse().unwrap()
    };
    assert!(row("FM (float)") >= 0.0 && row("DFM (binary)") >= 0.0);
    assert!(row("acceleration ratio") > 0.0, "{bench}");
    assert!(bench.contains("13.19-17.51"));
}

#[test]
fn checkpoint_resume_continues_training() {
    let (_guard, d) = prepared();
    let train = p(&d, "train.libfm");
    let (ck, half, resumed, straight) = (p(&d, "s.ckpt"), p(&d, "half.dfm"), p(&d, "res.dfm"), p(&d, "full.dfm"));
    let run = |extra: &[&str]| {
        let base = ["train-dfm", "--input", train.as_str(), "--k", "8", "--seed", "2", "--tol", "0"];
        ok(&[base.as_slice(), extra].concat())
    };
    run(&["--iters", "6", "--out", &straight]);
    run(&["--iters", "3", "--checkpoint", &ck, "--out", &half]);
    let log = String::from_utf8(run(&["--iters", "6", "--resume", &ck, "--out", &resumed]).stderr).unwrap();
    assert!(log.starts_with("iter=4 "), "{log}");
    assert_eq!(std::fs::read(&resumed).unwrap(), std::fs::read(&straight).unwrap());
}

#[test]
fn grid_writes_csv() {
    let (_guard, d) = prepared();
    let out = p(&d, "grid.csv");
    ok(&[
        "grid", "--train", &p(&d, "train.libfm"), "--test", &p(&d, "test.libfm"), "--betas", "0,0.01",
        "--ks", "8", "--iters", "3", "--out", &out,
    ]);
    let csv = std::fs::read_to_string(&out).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("0,8,ok,") && lines[2].starts_with("0.01,8,ok,"));
}

#[test]
fn synthetic_bench_table() {
    let out = ok(&[
        "bench", "--synthetic", "--features", "2000", "--nnz", "10", "--instances", "2000", "--ks", "8,64",
        "--reps", "1",
    ]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.lines().any(|l| l.starts_with("code length") && l.ends_with("64")), "{text}");
    assert!(text.contains("threads") || text.contains("thread(s)"));
}

#[test]
fn exit_codes() {
    let (_guard, d) = prepared();
    assert_eq!(dfm(&["--help"]).status.code(), Some(0));
    assert_eq!(dfm(&["train-dfm", "--help"]).status.code(), Some(0));
    assert_eq!(dfm(&[]).status.code(), Some(1));
    assert_eq!(dfm(&["train-dfm", "--bogus"]).status.code(), Some(1));
    assert_eq!(dfm(&["train-dfm", "--input", "x", "--out", "y", "--k", "abc"]).status.code(), Some(1));
    let train = p(&d, "train.libfm");
    let o = p(&d, "m");
    assert_eq!(dfm(&["train-dfm", "--input", &train, "--out", &o, "--k", "0"]).status.code(), Some(1));
    assert_eq!(dfm(&["train-dfm", "--input", &train, "--out", &o, "--beta", "-1"]).status.code(), Some(1));
    assert_eq!(dfm(&["split", "--input", &train, "--train-out", &o, "--test-out", &o, "--split-fraction", "1"]).status.code(), Some(1));

    let missing = dfm(&["train-dfm", "--input", &p(&d, "nope.libfm"), "--out", &o]);
    assert_eq!(missing.status.code(), Some(2));
    assert_eq!(String::from_utf8(missing.stderr).unwrap().lines().count(), 1);
    std::fs::write(d.join("bad.libfm"), "1 0:1\n2 0:x\n").unwrap();
    let bad = dfm(&["train-fm", "--input", &p(&d, "bad.libfm"), "--out", &o]);
    assert_eq!(bad.status.code(), Some(2));
    assert!(String::from_utf8(bad.stderr).unwrap().contains("bad.libfm:2:"));
    // k must stay below the feature count
    assert_eq!(dfm(&["train-dfm", "--input", &train, "--out", &o, "--k", "64"]).status.code(), Some(2));
    assert_eq!(dfm(&["predict", "--model", &train, "--input", &train]).status.code(), Some(2));

    // a runaway learning rate overflows the objective
    let diverge = dfm(&["train-fm", "--input", &train, "--out", &o, "--k", "8", "--sgd-rate", "1e6", "--seed", "1"]);
    assert_eq!(diverge.status.code(), Some(3), "{}", String::from_utf8_lossy(&diverge.stderr));
    assert!(!Path::new(&o).exists());
}
