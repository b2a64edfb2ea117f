//! The full command-line workflow in-process: synth, train, eval.

use std::fs;

fn run(args: &[&str]) -> i32 {
    rafa::cli::run_from(args.iter().map(|s| s.to_string()))
}

#[test]
fn synth_train_eval_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("ds");
    let out = tmp.path().join("run");

    assert_eq!(
        run(&[
            "rafa", "synth",
            "--out", data.to_str().unwrap(),
            "--classes", "2", "--per-class", "6",
            "--val-per-class", "2", "--test-per-class", "2",
            "--seed", "3",
        ]),
        0
    );

    assert_eq!(
        run(&[
            "rafa", "train",
            "--data", data.to_str().unwrap(),
            "--out", out.to_str().unwrap(),
            "--epochs", "2", "--lr-drop-epoch", "1", "--seed", "3",
            "--variant", "full",
        ]),
        0
    );
    let log = fs::read_to_string(out.join("train_log.csv")).unwrap();
    assert!(log.starts_with("epoch,lr,train_loss,train_top1,val_top1\n"));
    assert_eq!(log.lines().count(), 3);
    assert!(out.join("checkpoint.rafa").exists());

    let json_path = out.join("eval_report.json");
    assert_eq!(
        run(&[
            "rafa", "eval",
            "--data", data.join("test").to_str().unwrap(),
            "--checkpoint", out.join("checkpoint.rafa").to_str().unwrap(),
            "--topk", "2",
            "--json", json_path.to_str().unwrap(),
        ]),
        0
    );
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&json_path).unwrap()).unwrap();
    for field in ["top1", "top5", "precision", "recall", "f1", "cir"] {
        assert!(report[field].is_number(), "missing metric field {field}");
    }
    assert_eq!(report["topk"], 2);
    assert!(report["confusion"].is_array());

    // A checkpoint/variant mismatch names the missing tensor.
    let code = run(&[
        "rafa", "eval",
        "--data", data.join("test").to_str().unwrap(),
        "--checkpoint", out.join("checkpoint.rafa").to_str().unwrap(),
        "--variant", "baseline",
    ]);
    assert_eq!(code, 2);
}

#[test]
fn train_is_reproducible_through_the_cli() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("ds");
    run(&[
        "rafa", "synth",
        "--out", data.to_str().unwrap(),
        "--classes", "2", "--per-class", "4",
        "--val-per-class", "2", "--test-per-class", "2",
    ]);
    let mut checkpoints = Vec::new();
    for tag in ["a", "b"] {
        let out = tmp.path().join(tag);
        assert_eq!(
            run(&[
                "rafa", "train",
                "--data", data.to_str().unwrap(),
                "--out", out.to_str().unwrap(),
                "--epochs", "1", "--lr-drop-epoch", "1", "--seed", "9",
            ]),
            0
        );
        checkpoints.push(fs::read(out.join("checkpoint.rafa")).unwrap());
    }
    assert_eq!(checkpoints[0], checkpoints[1]);
}
