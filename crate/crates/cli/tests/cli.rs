use std::fs;

use robustcnn::model::ModelSpec;
use robustcnn_cli::{run_with, EXIT_CONFIG};

fn call(args: &[&str]) -> (i32, String, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let argv = std::iter::once("robustcnn").chain(args.iter().copied());
    let code = run_with(argv, &mut out, &mut err);
    (
        code,
        String::from_utf8(out).unwrap(),
        String::from_utf8(err).unwrap(),
    )
}

#[test]
fn flops_resnet50_tsv_total() {
    let (code, out, _) = call(&["flops", "--preset", "resnet50", "--format", "tsv"]);
    assert_eq!(code, 0);
    let total: f64 = out
        .lines()
        .last()
        .unwrap()
        .split('\t')
        .nth(2)
        .unwrap()
        .parse()
        .unwrap();
    assert!((total / 4.1e9 - 1.0).abs() < 0.02, "{total}");
}

#[test]
fn tune_prints_depth_and_uses_cache() {
    let dir = tempfile::tempdir().unwrap();
    std::env::set_var("ROBUSTCNN_CACHE", dir.path());
    let args = [
        "tune",
        "--preset",
        "robust-up-inverted-dw",
        "--budget",
        "4.6e9",
        "--tol",
        "0.05",
    ];
    let (code, first, err) = call(&args);
    assert_eq!(code, 0, "{err}");
    assert!(first.starts_with("stage-3 depth 15 "), "{first}");
    let (_, second, err) = call(&args);
    assert_eq!(first, second);
    assert!(err.contains("cache hit"));
}

#[test]
fn unreachable_budget_is_a_config_error() {
    let (code, _, err) = call(&["tune", "--preset", "robust-dw", "--budget", "1e6"]);
    assert_eq!(code, EXIT_CONFIG);
    assert!(err.contains("nearest"), "{err}");
}

#[test]
fn eval_without_checkpoint_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty");
    fs::create_dir(&empty).unwrap();
    let (code, _, _) = call(&[
        "eval",
        "--checkpoint",
        "none",
        "--dataset",
        empty.to_str().unwrap(),
    ]);
    assert_eq!(code, EXIT_CONFIG);
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(call(&["frobnicate"]).0, EXIT_CONFIG);
    assert_eq!(call(&["flops"]).0, EXIT_CONFIG);
    assert_eq!(call(&["flops", "--preset", "nope"]).0, EXIT_CONFIG);
}

#[test]
fn every_preset_round_trips_through_the_config_reader() {
    let (code, list, _) = call(&["presets", "--format", "tsv"]);
    assert_eq!(code, 0);
    let names: Vec<&str> = list
        .lines()
        .map(|l| l.split('\t').next().unwrap())
        .collect();
    assert_eq!(names.len(), 14);
    for name in names {
        let (code, text, _) = call(&["presets", "--show", name]);
        assert_eq!(code, 0);
        let spec: ModelSpec = text.parse().unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.cfg");
        fs::write(&path, &text).unwrap();
        let (_, a, _) = call(&[
            "flops",
            "--config",
            path.to_str().unwrap(),
            "--format",
            "tsv",
        ]);
        let (_, b, _) = call(&["flops", "--preset", name, "--format", "tsv"]);
        assert_eq!(a, b, "{name}");
        assert_eq!(
            spec.to_config(),
            text.lines()
                .skip(1)
                .map(|l| format!("{l}\n"))
                .collect::<String>()
        );
    }
}

#[test]
fn synth_train_eval_corrupt_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let p = |s: &str| dir.path().join(s).to_str().unwrap().to_string();
    let cfg = "stem = P4\nblock_kind = up-inverted-dw\nkernel = 3\nnorm_at = 1\nact_at = 2\n\
               widths = 8, 8, 8, 8\ndepths = 1, 1, 1, 1\nstrides = 1, 1, 1, 2\nnum_classes = 3\ninput_resolution = 8\n";
    fs::write(p("m.cfg"), cfg).unwrap();
    fs::write(
        p("t.cfg"),
        "epochs = 2\nbatch_size = 8\nwarmup_epochs = 1\n",
    )
    .unwrap();

    let (code, _, err) = call(&[
        "synth",
        "--out",
        &p("data"),
        "--samples",
        "24",
        "--classes",
        "3",
        "--resolution",
        "8",
    ]);
    assert_eq!(code, 0, "{err}");
    let train_args = [
        "train",
        "--config",
        &p("m.cfg"),
        "--dataset",
        &p("data"),
        "--train-config",
        &p("t.cfg"),
        "--checkpoint",
        &p("m.ckpt"),
        "--log",
        &p("log.tsv"),
        "--seed",
        "3",
    ];
    let (code, out, err) = call(&train_args);
    assert_eq!(code, 0, "{err}");
    assert!(err.contains("RandAugment"));
    assert_eq!(out.lines().count(), 3);
    assert_eq!(fs::read_to_string(p("log.tsv")).unwrap(), out);
    // Same seed, same log.
    let (_, again, _) = call(&train_args);
    assert_eq!(out, again);

    let (code, _, err) = call(&[
        "distill",
        "--config",
        &p("m.cfg"),
        "--dataset",
        &p("data"),
        "--train-config",
        &p("t.cfg"),
        "--checkpoint",
        &p("s.ckpt"),
        "--teacher",
        &p("m.ckpt"),
    ]);
    assert_eq!(code, 0, "{err}");

    let (code, report, err) = call(&[
        "eval",
        "--checkpoint",
        &p("m.ckpt"),
        "--dataset",
        &p("data"),
        "--corruptions",
        "contrast,jpeg",
        "--severities",
        "1,5",
        "--format",
        "tsv",
        "--output",
        &p("r.tsv"),
    ]);
    assert_eq!(code, 0, "{err}");
    assert_eq!(report.lines().count(), 1 + 1 + 4 + 1);
    let (code, out, _) = call(&[
        "eval",
        "--checkpoint",
        &p("m.ckpt"),
        "--dataset",
        &p("data"),
        "--corruptions",
        "contrast,jpeg",
        "--severities",
        "1,5",
        "--normalize-by",
        &p("r.tsv"),
    ]);
    assert_eq!(code, 0);
    assert!(out.contains("normalized corruption error"));

    let (code, out, _) = call(&[
        "corrupt-gen",
        "--dataset",
        &p("data"),
        "--families",
        "pixelate",
        "--severities",
        "2",
        "--out",
        &p("c"),
    ]);
    assert_eq!(code, 0);
    assert_eq!(out.lines().count(), 1);
    assert!(dir.path().join("c/pixelate/2/manifest.tsv").is_file());

    let (code, _, _) = call(&[
        "eval",
        "--checkpoint",
        &p("m.ckpt"),
        "--dataset",
        &p("data"),
        "--corruptions",
        "fog",
    ]);
    assert_eq!(code, EXIT_CONFIG);
}
