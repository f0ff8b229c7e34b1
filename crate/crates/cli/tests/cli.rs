//! Behaviour of the `redip` binary: exit codes, reports and file contracts.

use std::path::Path;
use std::process::{Command, Output};

use redip_cli::imgio::{add_awgn, load_image, save_image, ImageFile};
use redip_core::metrics::psnr;
use redip_core::{Tensor32, Tensor64};
use serde_json::Value;

fn redip(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_redip"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn json(path: impl AsRef<Path>) -> Value {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    let out = redip(dir.path(), &["cards", "--size", "32", "--out", "cards"]);
    assert!(out.status.success());
    let out = redip(
        dir.path(),
        &[
            "noise",
            "add",
            "--sigma",
            "0.1",
            "--seed",
            "1",
            "cards/11-composite.png",
            "noisy.png",
        ],
    );
    assert!(out.status.success());
    std::fs::write(dir.path().join("short.cfg"), "outer_iters = 4\ndip_widths = 8, 16\n").unwrap();
    dir
}

const DENOISE: &[&str] = &[
    "denoise",
    "--input",
    "noisy.png",
    "--output",
    "out.png",
    "--report",
    "report.json",
];

fn denoise(dir: &Path, extra: &[&str]) -> Output {
    let args: Vec<&str> = DENOISE.iter().chain(extra).copied().collect();
    redip(dir, &args)
}

#[test]
fn drunet_lite_without_weights_is_a_config_error() {
    let dir = setup();
    let out = denoise(dir.path(), &["--engine", "drunet-lite", "--config", "short.cfg"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--weights"));
}

#[test]
fn exit_codes_per_category() {
    let dir = setup();
    let d = dir.path();
    std::fs::write(d.join("bad.cfg"), "lambda = 0.5\nlambada = 1\n").unwrap();
    assert_eq!(
        denoise(d, &["--engine", "gaussian", "--config", "bad.cfg"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        denoise(d, &["--engine", "gaussian", "--config", "missing.cfg"])
            .status
            .code(),
        Some(3)
    );
    std::fs::write(d.join("broken.pgm"), b"P5\n4 4\n255\nxx").unwrap();
    let out = redip(
        d,
        &[
            "denoise",
            "--input",
            "broken.pgm",
            "--output",
            "o.png",
            "--report",
            "r.json",
            "--engine",
            "gaussian",
            "--config",
            "short.cfg",
        ],
    );
    assert_eq!(out.status.code(), Some(3));

    // an absurd step size overflows the network parameters
    std::fs::write(
        d.join("blowup.cfg"),
        "outer_iters = 3\ndip_widths = 8, 16\ntheta_step_size = 1e300\n",
    )
    .unwrap();
    let out = denoise(d, &["--engine", "gaussian", "--config", "blowup.cfg"]);
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
    let report = json(d.join("report.json"));
    assert!(report["error"].is_string());
    assert_eq!(
        report["executed_iterations"],
        report["history"].as_array().unwrap().len()
    );
}

#[test]
fn zero_iterations_return_the_input() {
    let dir = setup();
    let d = dir.path();
    std::fs::write(d.join("zero.cfg"), "outer_iters = 0\n").unwrap();
    assert!(denoise(d, &["--engine", "gaussian", "--config", "zero.cfg"])
        .status
        .success());
    let a = load_image(d.join("noisy.png")).unwrap();
    let b = load_image(d.join("out.png")).unwrap();
    assert_eq!(a.pixels.data(), b.pixels.data());
    let report = json(d.join("report.json"));
    assert_eq!(report["executed_iterations"], 0);
}

#[test]
fn report_echoes_config_and_history() {
    let dir = setup();
    let d = dir.path();
    let out = denoise(
        d,
        &[
            "--engine",
            "gaussian",
            "--config",
            "short.cfg",
            "--reference",
            "cards/11-composite.png",
            "--no-timestamp",
        ],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let r = json(d.join("report.json"));
    assert_eq!(r["schema_version"], 1);
    assert_eq!(r["config"]["outer_iters"], 4);
    assert_eq!(r["config"]["mu"], 0.5);
    assert_eq!(r["config"]["theta_optimizer"], "adaptive_moment");
    assert_eq!(r["config"].as_object().unwrap().len(), redip_cli::config::KEYS.len());
    let history = r["history"].as_array().unwrap();
    assert_eq!(history.len(), 4);
    assert!(history.iter().all(|h| h["psnr"].is_number() && h["loss"].is_number()));
    assert!(r.get("wall_clock_seconds").is_none());

    // the metrics command on the written pair reports the same final numbers
    assert!(redip(
        d,
        &["metrics", "out.png", "cards/11-composite.png", "--report", "m.json"]
    )
    .status
    .success());
    assert_eq!(json(d.join("m.json"))["metrics"], r["final_metrics"]);

    assert!(denoise(d, &["--engine", "gaussian", "--config", "short.cfg"])
        .status
        .success());
    assert!(json(d.join("report.json"))["wall_clock_seconds"].is_number());
}

#[test]
fn metrics_of_identical_files() {
    let dir = setup();
    let d = dir.path();
    assert!(redip(d, &["metrics", "noisy.png", "noisy.png", "--report", "m.json"])
        .status
        .success());
    let m = json(d.join("m.json"));
    assert_eq!(m["metrics"]["psnr"], "inf");
    assert_eq!(m["metrics"]["ssim"], 1.0);
    assert_eq!(m["metrics"]["mse"], 0.0);
}

#[test]
fn zero_sigma_noise_copies_bytes() {
    let dir = setup();
    let d = dir.path();
    assert!(redip(
        d,
        &["noise", "add", "--sigma", "0", "--seed", "9", "noisy.png", "copy.png"]
    )
    .status
    .success());
    assert_eq!(
        std::fs::read(d.join("noisy.png")).unwrap(),
        std::fs::read(d.join("copy.png")).unwrap()
    );
    assert_eq!(
        redip(d, &["noise", "add", "--sigma", "-1", "noisy.png", "x.png"])
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn verify_policies() {
    let dir = setup();
    let d = dir.path();
    let out = redip(
        d,
        &[
            "verify",
            "--engine",
            "shift",
            "--corpus",
            "cards",
            "--report",
            "shift.json",
            "--no-timestamp",
        ],
    );
    assert_eq!(out.status.code(), Some(0));
    let c = &json(d.join("shift.json"))["certificate"];
    assert_eq!(c["verdicts"]["symmetry"], false);
    assert_eq!(c["patches"], 12);

    assert!(redip(
        d,
        &["verify", "--engine", "gaussian", "--corpus", "cards", "--report", "g.json"]
    )
    .status
    .success());
    let c = &json(d.join("g.json"))["certificate"];
    assert_eq!(c["verdicts"]["symmetry"], true);
    assert!(c["jacobian_symmetry"]["nem"]["mean"].as_f64().unwrap() <= 1e-8);

    std::fs::create_dir(d.join("empty")).unwrap();
    let out = redip(
        d,
        &[
            "verify", "--engine", "gaussian", "--corpus", "empty", "--report", "e.json",
        ],
    );
    assert_eq!(out.status.code(), Some(2));
    let out = redip(
        d,
        &[
            "verify", "--engine", "gaussian", "--corpus", "cards", "--patch", "8", "--report", "e.json",
        ],
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn shipped_weights_certify() {
    let dir = setup();
    let d = dir.path();
    let weights = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../weights/drunet-lite-gray.rdw");
    std::fs::create_dir(d.join("few")).unwrap();
    for f in ["00-gradient-0deg.png", "09-rings-6.png", "11-composite.png"] {
        std::fs::copy(d.join("cards").join(f), d.join("few").join(f)).unwrap();
    }
    let out = redip(
        d,
        &[
            "verify",
            "--engine",
            "drunet-lite",
            "--weights",
            weights.to_str().unwrap(),
            "--corpus",
            "few",
            "--report",
            "c.json",
        ],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(json(d.join("c.json"))["certificate"]["verdicts"]["all"], true);
}

#[test]
fn awgn_psnr_matches_its_expectation() {
    // E[mse] = σ², so PSNR ≈ 10 log10(1/σ²) ≈ 20.17 dB before clamping
    let clean = Tensor32::full(&[1, 512, 512], 0.5).unwrap();
    let sigma = 25.0 / 255.0;
    let noisy = add_awgn(&clean, sigma, 0).unwrap();
    let (a, b): (Tensor64, Tensor64) = (noisy.cast().unwrap(), clean.cast().unwrap());
    let p = psnr(&a, &b, 1.0).unwrap();
    assert!((p - 20.17).abs() < 0.1, "{p}");
    assert_eq!(add_awgn(&clean, sigma, 0).unwrap().data(), noisy.data());
    assert_ne!(add_awgn(&clean, sigma, 1).unwrap().data(), noisy.data());
}

#[test]
fn sixteen_bit_round_trip_and_clamping() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("img.pgm");
    let pixels = Tensor32::from_vec(&[1, 1, 4], vec![-0.5, 0.0, 0.25, 1.5]).unwrap();
    save_image(&path, &ImageFile { pixels, bit_depth: 16 }).unwrap();
    let back = load_image(&path).unwrap();
    assert_eq!(back.bit_depth, 16);
    assert_eq!(back.pixels.data()[0], 0.0);
    assert_eq!(back.pixels.data()[3], 1.0);
    assert!((back.pixels.data()[2] - 0.25).abs() < 1e-4);
}
