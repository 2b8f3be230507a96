use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rand::Rng;
use tempfile::TempDir;
use wildisp::flow::{write_flo, FlowField};
use wildisp::image::{read_pgm, read_ppm, write_ppm, RgbImage};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_wildisp"))
}

fn run(dir: &Path, args: &[&str]) -> Output {
    bin().current_dir(dir).args(args).output().expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = run(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

/// Exit code plus the parsed single-line error report.
fn fails(dir: &Path, args: &[&str]) -> (i32, serde_json::Value) {
    let out = run(dir, args);
    let code = out.status.code().expect("exit code");
    let err = String::from_utf8_lossy(&out.stderr);
    let last = err.lines().last().unwrap_or_default();
    let v: serde_json::Value = serde_json::from_str(last).unwrap_or_else(|_| panic!("not json: {err}"));
    assert_eq!(v["code"], code);
    assert!(v["reason"].as_str().is_some_and(|r| !r.is_empty() && !r.contains('\n')));
    (code, v)
}

fn tree(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn random_rgb(seed: u64, h: usize, w: usize) -> RgbImage {
    let mut r = wildisp::rng::seeded(seed);
    RgbImage::from_fn(h, w, |_, _, _| r.gen::<f32>())
}

fn small_dataset(dir: &Path) {
    ok(
        dir,
        &["synth", "--n", "4", "--out", "ds", "--height", "16", "--width", "16", "--val", "0", "--test", "1", "--seed", "5"],
    );
}

const QUICK: [&str; 8] = ["--steps", "3", "--batch", "2", "--crop", "8", "--log-every", "1"];

#[test]
fn synth_is_bitwise_reproducible() {
    let d = TempDir::new().unwrap();
    ok(d.path(), &["synth", "--n", "8", "--seed", "7", "--out", "a", "--height", "16", "--width", "16"]);
    ok(d.path(), &["synth", "--n", "8", "--seed", "7", "--out", "b", "--height", "16", "--width", "16"]);
    let (a, b) = (tree(&d.path().join("a")), tree(&d.path().join("b")));
    assert!(a.len() > 8);
    assert_eq!(a, b);
    ok(d.path(), &["synth", "--n", "8", "--seed", "8", "--out", "c", "--height", "16", "--width", "16"]);
    assert_ne!(a, tree(&d.path().join("c")));
}

#[test]
fn colormap_identity_round_trip() {
    let d = TempDir::new().unwrap();
    let x = random_rgb(1, 12, 12);
    write_ppm(d.path().join("x.ppm"), &x).unwrap();
    for bins in ["1", "5", "15"] {
        ok(
            d.path(),
            &["colormap", "fit", "--x", "x.ppm", "--c", "x.ppm", "--variant", "affine_dep", "--bins", bins, "--out", "m.json"],
        );
        ok(d.path(), &["colormap", "apply", "--x", "x.ppm", "--model", "m.json", "--out", "y.ppm"]);
        let y = read_ppm(d.path().join("y.ppm")).unwrap();
        // PPM quantization bounds the error by half a code value.
        let x8 = read_ppm(d.path().join("x.ppm")).unwrap();
        assert!(y.max_abs_diff(&x8) < 1e-3 + 0.5 / 255.0, "bins {bins}");
    }
}

#[test]
fn colormap_bench_orders_nested_variants() {
    let d = TempDir::new().unwrap();
    let out = ok(d.path(), &["colormap", "bench", "--n", "6", "--size", "12", "--out", "bench.json"]);
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let res = |name: &str| {
        v["rows"]
            .as_array()
            .unwrap()
            .iter()
            .find(|r| r["variant"] == name)
            .unwrap()["residual"]
            .as_f64()
            .unwrap()
    };
    assert!(res("const_val") >= res("affine_indep") - 1e-9);
    assert!(res("affine_indep") >= res("affine_dep") - 1e-9);
    assert!(d.path().join("bench.json").exists());
}

#[test]
fn preprocess_flowmask_and_warp() {
    let d = TempDir::new().unwrap();
    small_dataset(d.path());
    ok(d.path(), &["preprocess", "--raw", "ds/00000/raw.raw4", "--out", "xp.ppm"]);
    assert_eq!(read_ppm(d.path().join("xp.ppm")).unwrap().height(), 16);

    write_flo(d.path().join("f.flo"), &FlowField::constant(6, 7, 1.0, 0.0)).unwrap();
    write_flo(d.path().join("b.flo"), &FlowField::constant(6, 7, -1.0, 0.0)).unwrap();
    write_flo(d.path().join("z.flo"), &FlowField::constant(6, 7, 3.0, 0.0)).unwrap();
    ok(d.path(), &["flowmask", "--fwd", "f.flo", "--bwd", "b.flo", "--out", "m.pgm"]);
    assert_eq!(read_pgm(d.path().join("m.pgm")).unwrap().count(), 42);
    ok(d.path(), &["flowmask", "--fwd", "f.flo", "--bwd", "z.flo", "--out", "m.pgm"]);
    assert_eq!(read_pgm(d.path().join("m.pgm")).unwrap().count(), 0);

    let img = RgbImage::from_fn(6, 7, |c, y, x| (c + y + x) as f32 / 20.0);
    write_ppm(d.path().join("i.ppm"), &img).unwrap();
    write_flo(d.path().join("zero.flo"), &FlowField::zeros(6, 7)).unwrap();
    ok(d.path(), &["warp", "--image", "i.ppm", "--flow", "zero.flo", "--out", "w.ppm"]);
    assert_eq!(read_ppm(d.path().join("w.ppm")).unwrap(), read_ppm(d.path().join("i.ppm")).unwrap());
    std::fs::write(d.path().join("p.json"), "[[0,0,0,0],[5,0,5,0],[0,5,0,5],[5,5,5,5]]").unwrap();
    ok(d.path(), &["warp", "--image", "i.ppm", "--points", "p.json", "--out", "h.ppm"]);
    assert!(read_ppm(d.path().join("h.ppm")).unwrap().max_abs_diff(&read_ppm(d.path().join("i.ppm")).unwrap()) < 1e-6);
}

#[test]
fn crops_write_a_filtered_manifest() {
    let d = TempDir::new().unwrap();
    small_dataset(d.path());
    ok(
        d.path(),
        &[
            "crops", "--raw", "ds/00000/raw.raw4", "--target", "ds/00000/aligned.ppm", "--crop", "8", "--stride", "4",
            "--threshold", "-1", "--out", "cr",
        ],
    );
    let m: serde_json::Value = serde_json::from_slice(&std::fs::read(d.path().join("cr/manifest.json")).unwrap()).unwrap();
    assert_eq!(m["records"].as_array().unwrap().len(), 9);
}

#[test]
fn train_infer_eval_end_to_end() {
    let d = TempDir::new().unwrap();
    small_dataset(d.path());
    let mut args = vec!["train", "isp", "--manifest", "ds/manifest.json", "--out", "ck/f.bin"];
    args.extend(QUICK);
    let out = ok(d.path(), &args);
    let steps: Vec<serde_json::Value> = String::from_utf8_lossy(&out.stdout)
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .filter(|v: &serde_json::Value| v["event"] == "step")
        .collect();
    assert_eq!(steps.len(), 3);
    assert!(steps.iter().all(|s| s["loss"].is_f64() && s["lr"].is_f64()));
    assert!(d.path().join("ck/f.bin.json").exists());

    let mut args = vec!["train", "color", "--manifest", "ds/manifest.json", "--out", "ck/g.bin"];
    args.extend(QUICK);
    ok(d.path(), &args);

    ok(d.path(), &["infer", "--raw", "ds/00000/raw.raw4", "--ckpt", "ck/f.bin", "--color-ckpt", "ck/g.bin", "--out", "inf"]);
    for name in ["xprime", "xtilde", "c", "chat", "yhat"] {
        assert!(d.path().join(format!("inf/{name}.ppm")).exists(), "{name}");
    }
    let y = read_ppm(d.path().join("inf/yhat.ppm")).unwrap();
    assert_eq!((y.height(), y.width()), (32, 32));

    ok(d.path(), &["infer", "--raw", "ds/00000/raw.raw4", "--ckpt", "ck/f.bin", "--color", "ds/00000/aligned.ppm", "--out", "inf2"]);
    assert_eq!(read_ppm(d.path().join("inf2/yhat.ppm")).unwrap().height(), 32);

    let out = ok(d.path(), &["eval", "--manifest", "ds/manifest.json", "--ckpt", "ck/f.bin", "--out", "ev.json"]);
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["count"], 1);
    assert!(v["psnr"].as_f64().unwrap().is_finite());

    let out = ok(d.path(), &["eval", "--pred", "inf/yhat.ppm", "--gt", "inf/yhat.ppm"]);
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!((v["ssim"].as_f64().unwrap() - 1.0).abs() < 1e-12);

    let mut args = vec!["train", "joint", "--manifest", "ds/manifest.json", "--out", "ck/j.bin", "--isp", "ck/f.bin", "--color", "ck/g.bin"];
    args.extend(QUICK);
    ok(d.path(), &args);
    ok(d.path(), &["infer", "--raw", "ds/00000/raw.raw4", "--ckpt", "ck/j.bin", "--out", "inf3"]);
}

#[test]
fn config_file_merges_under_flags() {
    let d = TempDir::new().unwrap();
    small_dataset(d.path());
    std::fs::write(d.path().join("cfg.json"), r#"{"steps": 2, "batch": 1, "crop": 8, "log_every": 1}"#).unwrap();
    let out = ok(d.path(), &["train", "isp", "--config", "cfg.json", "--manifest", "ds/manifest.json", "--out", "a.bin"]);
    assert_eq!(String::from_utf8_lossy(&out.stdout).matches("\"event\":\"step\"").count(), 2);
    let out = ok(
        d.path(),
        &["train", "isp", "--config", "cfg.json", "--steps", "1", "--manifest", "ds/manifest.json", "--out", "b.bin"],
    );
    assert_eq!(String::from_utf8_lossy(&out.stdout).matches("\"event\":\"step\"").count(), 1);
}

#[test]
fn validation_errors_exit_with_one() {
    let d = TempDir::new().unwrap();
    small_dataset(d.path());
    let p = d.path();
    std::fs::write(p.join("bad.ppm"), b"P6\n4 4\n255\nxx").unwrap();
    std::fs::write(p.join("bad.raw4"), b"nope").unwrap();
    std::fs::write(p.join("bad.flo"), [0u8; 12]).unwrap();
    std::fs::write(p.join("bad.json"), "{ not json").unwrap();
    std::fs::write(p.join("unknown.json"), r#"{"stepz": 3}"#).unwrap();
    std::fs::write(p.join("zero.json"), r#"{"batch": 0}"#).unwrap();
    let mut broken = std::fs::read_to_string(p.join("ds/manifest.json")).unwrap();
    broken = broken.replacen("00000/raw.raw4", "missing.raw4", 1);
    std::fs::write(p.join("broken.json"), broken).unwrap();

    let cases: Vec<Vec<&str>> = vec![
        vec!["preprocess", "--raw", "missing.raw4", "--out", "o.ppm"],
        vec!["preprocess", "--raw", "bad.raw4", "--out", "o.ppm"],
        vec!["colormap", "apply", "--x", "bad.ppm", "--model", "bad.json", "--out", "o.ppm"],
        vec!["colormap", "fit", "--x", "ds/00000/aligned.ppm", "--c", "ds/00000/target.ppm", "--variant", "cubic", "--out", "m.json"],
        vec!["flowmask", "--fwd", "bad.flo", "--bwd", "bad.flo", "--out", "m.pgm"],
        vec!["warp", "--image", "bad.ppm", "--flow", "bad.flo", "--out", "w.ppm"],
        vec!["train", "isp", "--config", "bad.json", "--manifest", "ds/manifest.json", "--out", "x.bin"],
        vec!["train", "isp", "--config", "unknown.json", "--manifest", "ds/manifest.json", "--out", "x.bin"],
        vec!["train", "isp", "--config", "zero.json", "--manifest", "ds/manifest.json", "--out", "x.bin"],
        vec!["train", "isp", "--manifest", "broken.json", "--out", "x.bin"],
        vec!["train", "isp", "--manifest", "ds/manifest.json", "--out", "x.bin", "--align", "sideways"],
        vec!["infer", "--raw", "ds/00000/raw.raw4", "--ckpt", "missing.bin", "--out", "o"],
        vec!["eval", "--pred", "bad.ppm", "--gt", "bad.ppm"],
        vec!["synth", "--n", "2", "--out", "s", "--config", "unknown.json"],
        vec!["preprocess", "--raw", "ds/00000/raw.raw4", "--out", "o.ppm", "--config", "zero.json"],
        vec!["--threads", "0", "synth", "--n", "1", "--out", "s"],
        vec!["ablate", "--grid", "nothing", "--out", "ab"],
        vec!["no-such-command"],
        vec!["synth", "--out", "s"],
    ];
    for args in cases {
        let (code, v) = fails(p, &args);
        assert_eq!(code, 1, "{args:?}: {v}");
        assert_eq!(v["error"], "validation");
    }
}

#[test]
fn divergence_is_a_runtime_error() {
    let d = TempDir::new().unwrap();
    small_dataset(d.path());
    let (code, v) = fails(
        d.path(),
        &["train", "isp", "--manifest", "ds/manifest.json", "--out", "x.bin", "--lr", "1e30", "--steps", "20", "--batch", "1", "--crop", "8"],
    );
    assert_eq!(code, 2, "{v}");
    assert_eq!(v["error"], "runtime");
}

#[test]
fn help_lists_every_subcommand() {
    let out = bin().arg("--help").output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    for c in ["preprocess", "colormap", "flowmask", "warp", "synth", "crops", "train", "infer", "eval", "ablate"] {
        assert!(text.contains(c), "{c}");
    }
}

#[test]
fn ablate_writes_json_and_markdown() {
    let d = TempDir::new().unwrap();
    ok(
        d.path(),
        &["ablate", "--grid", "colormap", "--seeds", "0", "--steps", "2", "--train-samples", "2", "--test-samples", "2", "--out", "ab"],
    );
    let v: serde_json::Value = serde_json::from_slice(&std::fs::read(d.path().join("ab/ablation.json")).unwrap()).unwrap();
    let rows = v["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 5);
    let res = |name: &str| rows.iter().find(|r| r["variant"] == name).unwrap()["residual"].as_f64().unwrap();
    assert!(res("const_val") >= res("affine_indep") - 1e-9);
    assert!(res("affine_indep") >= res("affine_dep") - 1e-9);
    let md = std::fs::read_to_string(d.path().join("ab/ablation.md")).unwrap();
    assert_eq!(md.lines().count(), 7);
}
