use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use nowcast::data::read_nwds_file;

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nowcast"))
        .current_dir(dir)
        .env("NOWCAST_THREADS", "1")
        .args(args)
        .output()
        .expect("spawn nowcast")
}

fn code(dir: &Path, args: &[&str]) -> i32 {
    let out = run(dir, args);
    out.status.code().expect("exit code")
}

fn ok(dir: &Path, args: &[&str]) {
    let out = run(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

const SYNTH: &[&str] = &[
    "synth", "--seed", "3", "--frames", "90", "--size", "32", "--blobs", "40",
];

fn synth_to(dir: &Path, out: &str) {
    let mut args = SYNTH.to_vec();
    args.extend(["--out", out]);
    ok(dir, &args);
}

#[test]
fn synth_is_reproducible_and_refuses_overwrite() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    synth_to(d, "a.nwds");
    synth_to(d, "b.nwds");
    assert_eq!(fs::read(d.join("a.nwds")).unwrap(), fs::read(d.join("b.nwds")).unwrap());
    assert!(d.join("a.nwds.manifest.json").exists());

    let mut again = SYNTH.to_vec();
    again.extend(["--out", "a.nwds"]);
    assert_eq!(code(d, &again), 2);
    again.push("--force");
    assert_eq!(code(d, &again), 0);

    fs::write(
        d.join("synth.cfg"),
        "# same run\nseed=3\nframes = 90\nsize=32\nblobs=40\n",
    )
    .unwrap();
    ok(d, &["synth", "--config", "synth.cfg", "--out", "c.nwds"]);
    assert_eq!(fs::read(d.join("a.nwds")).unwrap(), fs::read(d.join("c.nwds")).unwrap());
}

#[test]
fn usage_and_data_errors_have_distinct_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    assert_eq!(code(d, &["frobnicate"]), 2);
    assert_eq!(code(d, &["synth", "--out", "x.nwds", "--size", "16"]), 3);
    synth_to(d, "a.nwds");
    let off_grid = run(d, &["train", "--data", "a.nwds", "--out-dir", "r", "--in-frames", "5"]);
    assert_eq!(off_grid.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&off_grid.stderr).contains("valid setups"));
    assert_eq!(code(d, &["train", "--data", "missing.nwds", "--out-dir", "r"]), 3);
    assert_eq!(code(d, &["evaluate", "--data", "a.nwds", "--out-dir", "e"]), 2);
    fs::write(d.join("junk.nwds"), b"not a dataset").unwrap();
    assert_eq!(
        code(
            d,
            &[
                "evaluate",
                "--data",
                "junk.nwds",
                "--baseline",
                "persistence",
                "--out-dir",
                "e"
            ]
        ),
        3
    );
}

#[test]
fn train_evaluate_predict_explain_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    synth_to(d, "a.nwds");
    let common = [
        "--data",
        "a.nwds",
        "--select-fraction",
        "0.05",
        "--in-frames",
        "6",
        "--lead-minutes",
        "30",
        "--stride",
        "2",
    ];
    let mut train = vec![
        "train",
        "--out-dir",
        "sar",
        "--base-channels",
        "4",
        "--epochs",
        "2",
        "--batch-size",
        "8",
    ];
    train.extend(common);
    ok(d, &train);
    for f in [
        "best.ckpt",
        "last.ckpt",
        "history.csv",
        "windows_train.csv",
        "windows_test.csv",
        "manifest.json",
    ] {
        assert!(d.join("sar").join(f).exists(), "{f}");
    }
    let history = fs::read_to_string(d.join("sar/history.csv")).unwrap();
    assert_eq!(history.lines().count(), 3);
    assert_eq!(code(d, &train), 2, "existing run must not be overwritten");

    ok(
        d,
        &[
            "evaluate",
            "--data",
            "a.nwds",
            "--checkpoint",
            "sar/best.ckpt",
            "--baseline",
            "persistence",
            "--out-dir",
            "ev",
        ],
    );
    let report = fs::read_to_string(d.join("ev/report.csv")).unwrap();
    let lines: Vec<&str> = report.lines().collect();
    assert_eq!(lines[0], "model,mse,precision,recall,accuracy,f1");
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("persistence,") && lines[2].starts_with("sar-unet,"));
    assert!(d.join("ev/per_lead.csv").exists() && d.join("ev/report.txt").exists());

    ok(
        d,
        &[
            "predict",
            "--data",
            "a.nwds",
            "--checkpoint",
            "sar/best.ckpt",
            "--window",
            "0",
            "--out",
            "p.nwds",
        ],
    );
    let pred = read_nwds_file(&d.join("p.nwds")).unwrap();
    assert_eq!(pred.len(), 1);
    assert_eq!(pred.frame_size(), Some((32, 32)));
    assert!(pred.frames()[0].data().iter().all(|&v| v >= 0.0 && v.is_finite()));

    ok(
        d,
        &[
            "explain",
            "--checkpoint",
            "sar/best.ckpt",
            "--data",
            "a.nwds",
            "--input-window",
            "0",
            "--out-dir",
            "ex",
            "--ppm",
        ],
    );
    let index = fs::read_to_string(d.join("ex/index.csv")).unwrap();
    assert_eq!(
        index.lines().next().unwrap(),
        "file,target,section,depth,column,raw_max"
    );
    assert_eq!(index.lines().count(), 33);
    let count = |ext: &str| {
        fs::read_dir(d.join("ex"))
            .unwrap()
            .filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == ext))
            .count()
    };
    assert_eq!((count("nwds"), count("ppm")), (32, 32));

    let mut smaat = vec![
        "train",
        "--out-dir",
        "smaat",
        "--variant",
        "smaat",
        "--base-channels",
        "4",
        "--epochs",
        "1",
    ];
    smaat.extend(common);
    ok(d, &smaat);
    let sub = run(
        d,
        &[
            "explain",
            "--checkpoint",
            "smaat/best.ckpt",
            "--data",
            "a.nwds",
            "--input-window",
            "0",
            "--targets",
            "enc1.block.shortcut",
            "--out-dir",
            "ex2",
        ],
    );
    assert_eq!(sub.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&sub.stderr).contains("no shortcuts"));
}
