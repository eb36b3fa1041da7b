use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use camforge::pnm;
use camforge::tensor::Tensor;
use camforge_core::*;

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

fn camforge(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_camforge"))
        .args(args)
        .current_dir(dir)
        .output()
        .unwrap()
}

fn ok(out: &Output) -> serde_json::Value {
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn write_scores(dir: &Path, name: &str, scores: &ScoreMap) -> String {
    Tensor::from_scores(scores).write(&dir.join(name)).unwrap();
    name.to_string()
}

fn fixture(name: &str) -> String {
    fixtures().join(name).to_str().unwrap().to_string()
}

#[test]
fn all_zero_scores_give_ln2_at_lambda_zero() {
    let d = tempfile::tempdir().unwrap();
    let s = write_scores(d.path(), "s.camt", &ScoreMap::zeros(Shape::new(3, 32, 32)));
    let img = fixture("circle.ppm");
    let mut values = Vec::new();
    for seed in ["1", "2"] {
        let v = ok(&camforge(
            d.path(),
            &["loss", "--scores", &s, "--image", &img, "--labels", "0,1,2", "--lambda", "0", "--seed", seed],
        ));
        values.push(v);
    }
    assert_eq!(values[0]["cls_loss"], values[1]["cls_loss"]);
    assert_eq!(values[0]["ce_loss"].as_f64().unwrap(), std::f64::consts::LN_2);
    assert_eq!(values[0]["cls_loss"], values[0]["ce_loss"]);
}

#[test]
fn loss_matches_the_library() {
    let d = tempfile::tempdir().unwrap();
    let img_path = fixtures().join("circle.ppm");
    let image = pnm::read_ppm(&img_path).unwrap();
    let mask = pnm::read_mask(&fixtures().join("circle_mask.pgm")).unwrap();
    let g = fit_gaussian_cam(&mask, 32, 32).unwrap();
    let mut data = g.as_slice().to_vec();
    data.extend(g.as_slice().iter().map(|v| -v));
    // go through f32 so the library sees the same values as the CLI
    let scores = ScoreMap::new(Shape::new(2, 32, 32), data.iter().map(|&v| f64::from(v as f32)).collect()).unwrap();
    let s = write_scores(d.path(), "s.camt", &scores);
    let v = ok(&camforge(
        d.path(),
        &[
            "loss", "--scores", &s, "--image", img_path.to_str().unwrap(), "--labels", "0", "--lambda", "0.2",
            "--samples", "10", "--seed", "7", "--gating", "binomial", "--fsl-weight", "0.5", "--grad-out", "g.camt",
        ],
    ));
    let y = LabelVector::new(vec![true, false]);
    let post = sigmoid_posterior(&scores);
    let cls = combined_cls_loss(&y, &scores, &post, 10, 0.2, 7).unwrap();
    let params = FslParams {
        gating_input: GatingInput::Binomial,
        ..FslParams::default()
    };
    let fsl = fsl_loss(&scores, &image, &params).unwrap();
    assert_eq!(v["cls_loss"].as_f64().unwrap(), cls.value);
    assert_eq!(v["ce_loss"].as_f64().unwrap(), gap_bce_loss(&y, &scores).unwrap().value);
    assert_eq!(v["fsl_loss"].as_f64().unwrap(), fsl.value);
    let total = cls.combine(1.0, &fsl, 0.5).unwrap();
    assert_eq!(v["total_loss"].as_f64().unwrap(), total.value);
    assert_eq!(v["grad_file"], "g.camt");
    let grad = Tensor::read(&d.path().join("g.camt")).unwrap();
    assert_eq!(grad.dims, vec![2, 32, 32]);
    for (a, b) in grad.data.iter().zip(&total.grad) {
        assert_eq!(*a, *b as f32);
    }
}

#[test]
fn fixed_seed_loss_is_reproducible() {
    let d = tempfile::tempdir().unwrap();
    let s = write_scores(d.path(), "s.camt", &ScoreMap::from_fn(Shape::new(2, 32, 32), |c, i, j| {
        ((c + i * j) % 7) as f64 / 7.0 - 0.5
    }).unwrap());
    let img = fixture("circle.ppm");
    let args = ["loss", "--scores", &s, "--image", &img, "--labels", "1", "--lambda", "1", "--samples", "10", "--seed", "3"];
    let a = camforge(d.path(), &args);
    let b = camforge(d.path(), &args);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    let other = camforge(d.path(), &["loss", "--scores", &s, "--image", &img, "--labels", "1", "--lambda", "1", "--seed", "4"]);
    assert_ne!(ok(&a)["isl_loss"], ok(&other)["isl_loss"]);
}

#[test]
fn parse_errors_exit_2_and_name_the_offset() {
    let d = tempfile::tempdir().unwrap();
    std::fs::write(d.path().join("bad.camt"), b"CAMT\x01\x00\x03\x00\x01\x00").unwrap();
    let img = fixture("circle.ppm");
    let out = camforge(d.path(), &["loss", "--scores", "bad.camt", "--image", &img, "--labels", "0"]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("at byte 10"), "{}", String::from_utf8_lossy(&out.stderr));

    std::fs::write(d.path().join("bad.ppm"), b"P6 32 x").unwrap();
    let s = write_scores(d.path(), "s.camt", &ScoreMap::zeros(Shape::new(1, 32, 32)));
    let out = camforge(d.path(), &["loss", "--scores", &s, "--image", "bad.ppm", "--labels", "0"]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("at byte 6"));

    let out = camforge(d.path(), &["loss", "--scores", &s, "--image", &img, "--labels", "zero"]);
    assert_eq!(code(&out), 2);
    let out = camforge(d.path(), &["loss", "--scores", &s, "--image", &img, "--labels", "0", "--lambda", "2"]);
    assert_eq!(code(&out), 2);
    let out = camforge(d.path(), &["loss", "--scores", &s, "--image", &img, "--labels", "0", "--sigma", "0"]);
    assert_eq!(code(&out), 2);
    let out = camforge(d.path(), &["loss", "--scores", &s, "--image", &img, "--labels", "0", "--samples", "0"]);
    assert_eq!(code(&out), 2);
    let out = camforge(d.path(), &["loss", "--bogus"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn shape_mismatch_exits_3() {
    let d = tempfile::tempdir().unwrap();
    let s = write_scores(d.path(), "s.camt", &ScoreMap::zeros(Shape::new(1, 8, 8)));
    let img = fixture("circle.ppm");
    let out = camforge(d.path(), &["loss", "--scores", &s, "--image", &img, "--labels", "0"]);
    assert_eq!(code(&out), 3);
    // area resampling to the score resolution is opt-in
    let v = ok(&camforge(d.path(), &["loss", "--scores", &s, "--image", &img, "--labels", "0", "--resample-image"]));
    assert!(v["fsl_loss"].is_number());

    pnm::write(&d.path().join("a.pgm"), &pnm::encode_pgm(2, 2, &[0; 4])).unwrap();
    pnm::write(&d.path().join("b.pgm"), &pnm::encode_pgm(2, 3, &[0; 6])).unwrap();
    assert_eq!(code(&camforge(d.path(), &["eval", "a.pgm", "b.pgm"])), 3);
}

#[test]
fn zero_iterations_reproduce_the_input() {
    let d = tempfile::tempdir().unwrap();
    let s = write_scores(d.path(), "s.camt", &ScoreMap::from_fn(Shape::new(2, 32, 32), |c, i, j| {
        (c as f64 - 0.5) * ((i + j) as f64 / 62.0)
    }).unwrap());
    let img = fixture("circle.ppm");
    ok(&camforge(d.path(), &["refine", "--scores", &s, "--image", &img, "--out", "r.camt", "--iterations", "0", "--trace", "t.csv"]));
    assert_eq!(std::fs::read(d.path().join("s.camt")).unwrap(), std::fs::read(d.path().join("r.camt")).unwrap());
    let trace = std::fs::read_to_string(d.path().join("t.csv")).unwrap();
    assert_eq!(trace.lines().count(), 2);
}

#[test]
fn trace_has_one_row_per_loss_evaluation() {
    let d = tempfile::tempdir().unwrap();
    let img = fixture("circle.ppm");
    let m = fixture("circle_mask.pgm");
    let v = ok(&camforge(
        d.path(),
        &["refine", "--gaussian-from", &m, "--image", &img, "--out", "r.camt", "--iterations", "17", "--trace", "t.csv", "--heatmap-dir", "h"],
    ));
    assert_eq!(v["iterations"], 17);
    let trace = std::fs::read_to_string(d.path().join("t.csv")).unwrap();
    let mut lines = trace.lines();
    assert_eq!(lines.next(), Some("iteration,loss"));
    assert_eq!(lines.count(), 18);
    assert!(d.path().join("h/channel_000.pgm").exists());
}

/// Recorded from the oracle run: the 3 px offset Gaussian on the circle
/// fixture starts at mean J 0.6131 and refines to 0.9012.
const CIRCLE_FIXTURE_BAR: f64 = 0.90;

#[test]
fn circle_fixture_refinement_clears_the_bar() {
    let d = tempfile::tempdir().unwrap();
    let img = fixture("circle.ppm");
    let m = fixture("circle_mask.pgm");
    let refine = |iterations: &str, mask: &str| {
        ok(&camforge(
            d.path(),
            &[
                "refine", "--gaussian-from", &m, "--shift", "3,0", "--image", &img, "--out", "r.camt", "--mask-out", mask,
                "--gating", "binomial", "--step", "100", "--iterations", iterations,
            ],
        ))
    };
    refine("0", "m0.pgm");
    let v = refine("200", "m.pgm");
    assert_eq!(v["monotone"], true);
    let before = ok(&camforge(d.path(), &["eval", "m0.pgm", &m]))["mean_j"].as_f64().unwrap();
    let after = ok(&camforge(d.path(), &["eval", "m.pgm", &m]))["mean_j"].as_f64().unwrap();
    assert!(after >= CIRCLE_FIXTURE_BAR, "{after}");
    assert!(after >= before + 0.1, "{before} -> {after}");
}

#[test]
fn divergence_exits_5() {
    let d = tempfile::tempdir().unwrap();
    let mut rgb = Vec::new();
    for k in 0..36 {
        let v = if k % 2 == 0 { 0.0 } else { 1.0 };
        rgb.extend_from_slice(&[v, v, v]);
    }
    pnm::write(&d.path().join("c.ppm"), &pnm::encode_ppm(&RgbImage::new(6, 6, rgb).unwrap())).unwrap();
    let s = write_scores(d.path(), "s.camt", &ScoreMap::from_fn(Shape::new(1, 6, 6), |_, i, j| ((i + j) % 2) as f64).unwrap());
    let out = camforge(
        d.path(),
        &["refine", "--scores", &s, "--image", "c.ppm", "--out", "r.camt", "--gating", "raw", "--step", "1e4", "--iterations", "5000"],
    );
    assert_eq!(code(&out), 5, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("iteration"));
}

#[test]
fn eval_fixtures() {
    let d = tempfile::tempdir().unwrap();
    let m = fixture("circle_mask.pgm");
    let v = ok(&camforge(d.path(), &["eval", &m, &m]));
    assert_eq!((v["mean_j"].as_f64(), v["mean_f"].as_f64(), v["jf"].as_f64()), (Some(1.0), Some(1.0), Some(1.0)));

    let pred: Vec<u8> = (0..16).map(|k| u8::from(k < 8)).collect();
    let gt: Vec<u8> = (0..16).map(|k| u8::from(k < 12)).collect();
    pnm::write(&d.path().join("p.pgm"), &pnm::encode_pgm(4, 4, &pred)).unwrap();
    pnm::write(&d.path().join("g.pgm"), &pnm::encode_pgm(4, 4, &gt)).unwrap();
    let v = ok(&camforge(d.path(), &["eval", "p.pgm", "g.pgm"]));
    assert_eq!(v["per_class_j"][1].as_f64(), Some(2.0 / 3.0));
    assert!(v["per_class_f"][0].is_null());
    let keys: Vec<&String> = v.as_object().unwrap().keys().collect();
    assert_eq!(keys, ["jf", "mean_f", "mean_j", "per_class_f", "per_class_j"]);
}

#[test]
fn label_writes_a_pseudo_label_mask() {
    let d = tempfile::tempdir().unwrap();
    let s = write_scores(
        d.path(),
        "s.camt",
        &ScoreMap::new(Shape::new(2, 1, 3), vec![1.0, 0.1, 0.0, 0.0, 0.2, 1.0]).unwrap(),
    );
    assert!(camforge(d.path(), &["label", "--scores", &s, "--labels", "0,1", "--out", "l.pgm", "--bg-threshold", "0.3"]).status.success());
    let m = pnm::read_mask(&d.path().join("l.pgm")).unwrap();
    assert_eq!(m.as_slice(), &[1, 0, 2]);
    assert_eq!(code(&camforge(d.path(), &["label", "--scores", &s, "--labels", "0", "--out", "l.pgm", "--bg-threshold", "1"])), 2);
}

#[test]
fn gen_corpus_reproduces_the_shipped_corpus() {
    let d = tempfile::tempdir().unwrap();
    let v = ok(&camforge(d.path(), &["gen-corpus", "c", "--seed", "0"]));
    assert_eq!(v["count"], 20);
    let shipped = fixtures().join("corpus");
    let mut names: Vec<_> = std::fs::read_dir(&shipped).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert_eq!(names.len(), 40);
    for n in &names {
        assert_eq!(std::fs::read(shipped.join(n)).unwrap(), std::fs::read(d.path().join("c").join(n)).unwrap());
        if n.to_str().unwrap().starts_with("mask_") {
            assert!(pnm::read_mask(&shipped.join(n)).unwrap().as_slice().iter().any(|&l| l != 0));
        }
    }
    ok(&camforge(d.path(), &["gen-corpus", "c1", "--seed", "1", "--count", "2"]));
    assert_ne!(
        std::fs::read(d.path().join("c1/img_000.ppm")).unwrap(),
        std::fs::read(shipped.join("img_000.ppm")).unwrap()
    );
}

#[test]
fn one_point_sweep_is_refine_then_eval() {
    let d = tempfile::tempdir().unwrap();
    let src = fixtures().join("corpus");
    std::fs::create_dir(d.path().join("c")).unwrap();
    for n in ["img_000.ppm", "mask_000.pgm", "img_001.ppm", "mask_001.pgm"] {
        std::fs::copy(src.join(n), d.path().join("c").join(n)).unwrap();
    }
    let flags = ["--gating", "binomial", "--step", "100", "--iterations", "40"];
    let mut args = vec!["sweep", "c", "--mu-grid", "2.5", "--sigma-grid", "5", "--csv", "g.csv"];
    args.extend(flags);
    let v = ok(&camforge(d.path(), &args));
    assert_eq!(v["grid"].as_array().unwrap().len(), 1);
    let csv = std::fs::read_to_string(d.path().join("g.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2);

    let mut j = 0.0;
    let mut f = 0.0;
    for k in ["000", "001"] {
        let mask = format!("c/mask_{k}.pgm");
        let mut args = vec!["refine", "--gaussian-from", &mask, "--image"];
        let img = format!("c/img_{k}.ppm");
        args.extend([img.as_str(), "--out", "r.camt", "--mask-out", "m.pgm"]);
        args.extend(flags);
        ok(&camforge(d.path(), &args));
        let r = ok(&camforge(d.path(), &["eval", "m.pgm", &mask]));
        j += r["mean_j"].as_f64().unwrap();
        f += r["mean_f"].as_f64().unwrap();
    }
    assert_eq!(v["grid"][0]["j"].as_f64().unwrap(), j / 2.0);
    assert_eq!(v["grid"][0]["f"].as_f64().unwrap(), f / 2.0);
}

#[test]
fn sweep_results_do_not_depend_on_thread_count() {
    let d = tempfile::tempdir().unwrap();
    let src = fixtures().join("corpus");
    std::fs::create_dir(d.path().join("c")).unwrap();
    for n in ["img_002.ppm", "mask_002.pgm"] {
        std::fs::copy(src.join(n), d.path().join("c").join(n)).unwrap();
    }
    let args = ["sweep", "c", "--mu-grid", "1.5,2.5", "--sigma-grid", "3,5", "--iterations", "10", "--step", "50", "--gating", "binomial"];
    let run = |threads: &str| {
        Command::new(env!("CARGO_BIN_EXE_camforge"))
            .args(args)
            .current_dir(d.path())
            .env("CAMFORGE_THREADS", threads)
            .output()
            .unwrap()
    };
    let one = run("1");
    let three = run("3");
    assert!(one.status.success());
    assert_eq!(one.stdout, three.stdout);
    assert_eq!(code(&run("zero")), 2);
}

#[test]
fn empty_corpus_exits_4() {
    let d = tempfile::tempdir().unwrap();
    std::fs::create_dir(d.path().join("empty")).unwrap();
    assert_eq!(code(&camforge(d.path(), &["sweep", "empty"])), 4);
}

#[test]
fn config_file_is_merged_under_flags() {
    let d = tempfile::tempdir().unwrap();
    let s = write_scores(d.path(), "s.camt", &ScoreMap::from_fn(Shape::new(1, 32, 32), |_, i, _| i as f64 / 32.0 - 0.5).unwrap());
    let img = fixture("circle.ppm");
    std::fs::write(d.path().join("c.json"), r#"{"mu": 1.0, "gating": "raw", "lambda": 0.0}"#).unwrap();
    let base = ["loss", "--scores", &s, "--image", &img, "--labels", "0", "--config", "c.json"];
    let from_file = ok(&camforge(d.path(), &base));
    let mut explicit = base[..7].to_vec();
    explicit.extend(["--mu", "1", "--gating", "raw", "--lambda", "0"]);
    assert_eq!(from_file, ok(&camforge(d.path(), &explicit)));
    let mut overridden = base.to_vec();
    overridden.extend(["--mu", "2.5"]);
    assert_ne!(from_file["fsl_loss"], ok(&camforge(d.path(), &overridden))["fsl_loss"]);
    std::fs::write(d.path().join("bad.json"), r#"{"nu": 1.0}"#).unwrap();
    let mut bad = base[..7].to_vec();
    bad.extend(["--config", "bad.json"]);
    assert_eq!(code(&camforge(d.path(), &bad)), 2);
}

#[test]
fn tensor_round_trip_is_bit_exact() {
    let d = tempfile::tempdir().unwrap();
    let values = [0.0f32, -0.0, 1.5, f32::MIN_POSITIVE, 3.4e38, -1e-40, 0.1];
    let t = Tensor {
        dims: vec![7],
        data: values.to_vec(),
    };
    let p = d.path().join("t.camt");
    t.write(&p).unwrap();
    let back = Tensor::read(&p).unwrap();
    for (a, b) in back.data.iter().zip(&values) {
        assert_eq!(a.to_bits(), b.to_bits());
    }
    assert_eq!(back.encode(), std::fs::read(&p).unwrap());
}
