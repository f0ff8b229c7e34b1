//! Subcommand implementations.

use std::path::{Path, PathBuf};
use std::time::Instant;

use redip_core::admm::{self, AdmmFailure};
use redip_core::engine::{DenoisingEngine, GaussianBlur, MedianFilter, ShiftFilter};
use redip_core::metrics::MetricReport;
use redip_core::nets::{BiasFreeDenoiser, DrunetConfig};
use redip_core::testcard::standard_cards;
use redip_core::verify::{self, CertifySettings};
use redip_core::{Rng, Scalar, Tensor, Tensor32, Tensor64};

use crate::config::RunConfig;
use crate::failure::{Category, CliError, CliResult};
use crate::imgio::{add_awgn, load_image, save_image, ImageFile};
use crate::report::{self, DenoiseReport, EngineInfo, ImageInfo};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum EngineKind {
    #[value(name = "drunet-lite")]
    DrunetLite,
    Gaussian,
    Median,
    Shift,
}

impl EngineKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EngineKind::DrunetLite => "drunet-lite",
            EngineKind::Gaussian => "gaussian",
            EngineKind::Median => "median",
            EngineKind::Shift => "shift",
        }
    }
}

pub struct EngineSetup<T> {
    pub engine: Box<dyn DenoisingEngine<T>>,
    /// Required channel count, when the engine has one.
    pub channels: Option<usize>,
    pub size_multiple: usize,
}

pub fn build_engine<T: Scalar>(
    kind: EngineKind,
    weights: Option<&Path>,
    blur_sigma: f64,
    median_radius: usize,
) -> CliResult<EngineSetup<T>> {
    let simple = |engine: Box<dyn DenoisingEngine<T>>| EngineSetup {
        engine,
        channels: None,
        size_multiple: 1,
    };
    Ok(match kind {
        EngineKind::DrunetLite => {
            let path = weights.ok_or_else(|| CliError::config("--weights is required for --engine drunet-lite"))?;
            let net = BiasFreeDenoiser::<T>::load(path)
                .map_err(|e| CliError::from(e).context(format!("loading weights {}", path.display())))?;
            let cfg = net.config();
            EngineSetup {
                channels: Some(cfg.in_channels),
                size_multiple: cfg.size_multiple(),
                engine: Box::new(net),
            }
        }
        EngineKind::Gaussian => simple(Box::new(GaussianBlur::new(blur_sigma)?)),
        EngineKind::Median => simple(Box::new(MedianFilter { radius: median_radius })),
        EngineKind::Shift => simple(Box::new(ShiftFilter)),
    })
}

fn lcm(a: usize, b: usize) -> usize {
    fn gcd(a: usize, b: usize) -> usize {
        if b == 0 {
            a
        } else {
            gcd(b, a % b)
        }
    }
    a / gcd(a, b) * b
}

fn load(path: &Path) -> CliResult<ImageFile> {
    load_image(path).map_err(|e| CliError::from(e).context(format!("reading {}", path.display())))
}

fn save(path: &Path, img: &ImageFile) -> CliResult<()> {
    save_image(path, img).map_err(|e| CliError::from(e).context(format!("writing {}", path.display())))
}

fn write_report(path: &Path, value: &impl serde::Serialize) -> CliResult<()> {
    report::write_json(path, value)
        .map_err(|e| CliError::new(Category::Io, e).context(format!("writing report {}", path.display())))
}

fn pad_to(t: &Tensor32, multiple: usize) -> CliResult<Tensor32> {
    let (_, h, w) = t.chw()?;
    let (bottom, right) = (
        (multiple - h % multiple) % multiple,
        (multiple - w % multiple) % multiple,
    );
    if bottom == 0 && right == 0 {
        return Ok(t.clone());
    }
    if bottom >= h || right >= w {
        return Err(CliError::config(format!(
            "image {h}x{w} is too small to pad to a multiple of {multiple}"
        )));
    }
    Ok(t.pad_reflect(bottom, right)?)
}

pub struct DenoiseArgs {
    pub input: PathBuf,
    pub output: PathBuf,
    pub reference: Option<PathBuf>,
    pub engine: EngineKind,
    pub weights: Option<PathBuf>,
    pub config: PathBuf,
    pub report: PathBuf,
    pub certificate: Option<PathBuf>,
    pub no_timestamp: bool,
}

pub fn denoise(args: &DenoiseArgs) -> CliResult<()> {
    let started = Instant::now();
    let cfg = RunConfig::load(&args.config)
        .map_err(|e| CliError::from(e).context(format!("config {}", args.config.display())))?;
    let setup = build_engine::<f32>(args.engine, args.weights.as_deref(), cfg.blur_sigma, cfg.median_radius)?;
    let input = load(&args.input)?;
    let (c, h, w) = input.pixels.chw()?;
    if let Some(need) = setup.channels {
        if need != c {
            return Err(CliError::config(format!(
                "engine expects {need}-channel images, {} has {c}",
                args.input.display()
            )));
        }
    }
    let reference = match &args.reference {
        Some(p) => {
            let r = load(p)?;
            if r.pixels.shape() != input.pixels.shape() {
                return Err(CliError::config(format!(
                    "reference shape {:?} differs from input {:?}",
                    r.pixels.shape(),
                    input.pixels.shape()
                )));
            }
            Some(r)
        }
        None => None,
    };

    let multiple = lcm(cfg.admm.dip_topology.size_multiple(), setup.size_multiple);
    let y = pad_to(&input.pixels, multiple)?;
    let ref_padded = reference.as_ref().map(|r| pad_to(&r.pixels, multiple)).transpose()?;
    let padded_shape = y.shape().to_vec();

    let mut report = DenoiseReport {
        schema_version: report::SCHEMA_VERSION,
        command: "denoise",
        input: args.input.display().to_string(),
        output: args.output.display().to_string(),
        reference: args.reference.as_ref().map(|p| p.display().to_string()),
        engine: EngineInfo {
            kind: args.engine.as_str().into(),
            name: setup.engine.name(),
            weights: args.weights.as_ref().map(|p| p.display().to_string()),
        },
        config: cfg.echo(),
        seed: cfg.admm.seed,
        image: ImageInfo {
            channels: c,
            height: h,
            width: w,
            padded_height: padded_shape[1],
            padded_width: padded_shape[2],
        },
        executed_iterations: 0,
        stopped_early: false,
        history: serde_json::Value::Array(vec![]),
        noisy_metrics: None,
        final_metrics: None,
        certificate: args.certificate.as_ref().map(|p| p.display().to_string()),
        error: None,
        wall_clock_seconds: None,
        timestamp_unix: (!args.no_timestamp).then(report::unix_now),
    };

    let outcome = admm::run_with(&y, setup.engine.as_ref(), &cfg.admm, ref_padded.as_ref(), |r| {
        eprintln!(
            "iter {:>5}  loss {:.6e}  residual {:.3e}{}",
            r.iteration + 1,
            r.loss,
            r.residual,
            r.psnr.map(|p| format!("  psnr {p:.3}")).unwrap_or_default()
        );
    });
    let outcome = match outcome {
        Ok(o) => o,
        Err(AdmmFailure {
            iteration,
            source,
            history,
        }) => {
            report.executed_iterations = history.len();
            report.history = report::history_json(&history);
            report.error = Some(source.to_string());
            if !args.no_timestamp {
                report.wall_clock_seconds = Some(started.elapsed().as_secs_f64());
            }
            write_report(&args.report, &report)?;
            let category = match redip_core::Error::is_numeric(&source) {
                true => Category::Divergence,
                false => crate::failure::core_category(&source),
            };
            return Err(CliError::new(category, source).context(format!("ADMM stopped at iteration {iteration}")));
        }
    };

    let x = outcome.x.crop(0, 0, h, w)?;
    save(
        &args.output,
        &ImageFile {
            pixels: x,
            bit_depth: input.bit_depth,
        },
    )?;
    if let Some(r) = &reference {
        // metrics on the file as written, so they match `metrics OUT REF`
        let saved = load(&args.output)?;
        report.final_metrics = Some(report::metrics_json(&metric_report(&saved.pixels, &r.pixels)?));
        report.noisy_metrics = Some(report::metrics_json(&metric_report(&input.pixels, &r.pixels)?));
    }
    report.executed_iterations = outcome.history.len();
    report.stopped_early = outcome.stopped_early;
    report.history = report::history_json(&outcome.history);
    if !args.no_timestamp {
        report.wall_clock_seconds = Some(started.elapsed().as_secs_f64());
    }
    write_report(&args.report, &report)
}

/// Shared by `metrics` and `denoise --reference`.
pub fn metric_report(a: &Tensor32, b: &Tensor32) -> CliResult<MetricReport> {
    let (a, b): (Tensor64, Tensor64) = (a.cast()?, b.cast()?);
    Ok(MetricReport::compute(&a, &b, 1.0)?)
}

pub fn metrics(input: &Path, reference: &Path, report_path: &Path) -> CliResult<MetricReport> {
    let a = load(input)?;
    let b = load(reference)?;
    if a.pixels.shape() != b.pixels.shape() {
        return Err(CliError::config(format!(
            "shape {:?} differs from reference {:?}",
            a.pixels.shape(),
            b.pixels.shape()
        )));
    }
    let m = metric_report(&a.pixels, &b.pixels)?;
    let doc = serde_json::json!({
        "schema_version": report::SCHEMA_VERSION,
        "command": "metrics",
        "input": input.display().to_string(),
        "reference": reference.display().to_string(),
        "metrics": report::metrics_json(&m),
    });
    write_report(report_path, &doc)?;
    Ok(m)
}

pub fn noise_add(sigma: f64, seed: u64, input: &Path, output: &Path) -> CliResult<()> {
    if !(sigma >= 0.0) {
        return Err(CliError::config(format!("sigma must be >= 0, got {sigma}")));
    }
    let img = load(input)?;
    let noisy = add_awgn(&img.pixels, sigma, seed)?;
    save(
        output,
        &ImageFile {
            pixels: noisy,
            bit_depth: img.bit_depth,
        },
    )
}

pub struct VerifyArgs {
    pub engine: EngineKind,
    pub weights: Option<PathBuf>,
    pub corpus: PathBuf,
    pub epsilon: f64,
    pub rho: f64,
    pub report: PathBuf,
    pub patch: usize,
    pub noise_sigma: f64,
    pub seed: u64,
    pub blur_sigma: f64,
    pub median_radius: usize,
    pub no_timestamp: bool,
}

/// Image files of a corpus directory, sorted by name.
pub fn corpus_files(dir: &Path) -> CliResult<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| CliError::new(Category::Io, e).context(format!("reading corpus {}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "pgm" | "ppm" | "pnm" | "png"))
        })
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(CliError::config(format!("corpus {} contains no images", dir.display())));
    }
    Ok(files)
}

/// Centre crop to `patch x patch`, converting channels to what the engine
/// needs (mean for RGB to gray, replication for gray to RGB).
pub fn make_patch(img: &Tensor32, patch: usize, channels: Option<usize>) -> CliResult<Tensor64> {
    let (c, h, w) = img.chw()?;
    if h < patch || w < patch {
        return Err(CliError::config(format!(
            "image {h}x{w} is smaller than the {patch}x{patch} patch"
        )));
    }
    let crop = img.crop((h - patch) / 2, (w - patch) / 2, patch, patch)?;
    let crop: Tensor64 = crop.cast()?;
    Ok(match (c, channels) {
        (3, Some(1)) => {
            let (r, g, b) = (crop.channel(0)?, crop.channel(1)?, crop.channel(2)?);
            r.add(&g)?.add(&b)?.scale(1.0 / 3.0)?
        }
        (1, Some(3)) => crop.concat_channels(&crop)?.concat_channels(&crop)?,
        _ => crop,
    })
}

pub fn verify(args: &VerifyArgs) -> CliResult<verify::RedCertificate> {
    let started = Instant::now();
    let setup = build_engine::<f64>(
        args.engine,
        args.weights.as_deref(),
        args.blur_sigma,
        args.median_radius,
    )?;
    if args.patch == 0 || args.patch % setup.size_multiple != 0 {
        return Err(CliError::config(format!(
            "patch size {} must be a positive multiple of {}",
            args.patch, setup.size_multiple
        )));
    }
    if args.patch < redip_core::metrics::SSIM_WINDOW {
        return Err(CliError::config(format!(
            "patch size {} is below the {}-pixel SSIM window",
            args.patch,
            redip_core::metrics::SSIM_WINDOW
        )));
    }
    if !(args.noise_sigma >= 0.0) {
        return Err(CliError::config("noise sigma must be >= 0"));
    }
    let files = corpus_files(&args.corpus)?;
    let mut rng = Rng::new(args.seed);
    let mut patches = Vec::with_capacity(files.len());
    for f in &files {
        let mut p = make_patch(&load(f)?.pixels, args.patch, setup.channels)?;
        if args.noise_sigma > 0.0 {
            let n: Tensor64 = rng.normal(p.shape(), args.noise_sigma)?;
            p = p.add(&n)?.map("clamp", |v| v.clamp(0.0, 1.0))?;
        }
        patches.push(p);
    }
    let settings = CertifySettings {
        epsilon: args.epsilon,
        rho: args.rho,
        seed: args.seed,
        ..Default::default()
    };
    let cert = verify::certify(setup.engine.as_ref(), &patches, &settings)?;
    let mut doc = serde_json::json!({
        "schema_version": report::SCHEMA_VERSION,
        "command": "verify",
        "engine_kind": args.engine.as_str(),
        "weights": args.weights.as_ref().map(|p| p.display().to_string()),
        "corpus": files.iter().map(|p| p.display().to_string()).collect::<Vec<_>>(),
        "patch": args.patch,
        "noise_sigma": args.noise_sigma,
        "blur_sigma": args.blur_sigma,
        "median_radius": args.median_radius,
        "certificate": report::certificate_json(&cert),
    });
    if !args.no_timestamp {
        doc["wall_clock_seconds"] = serde_json::json!(started.elapsed().as_secs_f64());
        doc["timestamp_unix"] = serde_json::json!(report::unix_now());
    }
    write_report(&args.report, &doc)?;
    Ok(cert)
}

/// Writes the standard cards as `NN-name.<ext>` and returns the paths.
pub fn write_cards(dir: &Path, size: usize, channels: usize, ext: &str) -> CliResult<Vec<PathBuf>> {
    if channels != 1 && channels != 3 {
        return Err(CliError::config("channels must be 1 or 3"));
    }
    std::fs::create_dir_all(dir)?;
    let mut out = Vec::new();
    for (i, card) in standard_cards().iter().enumerate() {
        let t: Tensor<f32> = card.render(channels, size, size)?;
        let path = dir.join(format!("{i:02}-{}.{ext}", card.name()));
        save(&path, &ImageFile::new(t)?)?;
        out.push(path);
    }
    Ok(out)
}

/// Builds the mirrored desk-scale weights and their topology descriptor.
pub fn build_weights(out: &Path, channels: usize, seed: u64) -> CliResult<()> {
    let net = BiasFreeDenoiser::<f32>::mirrored(DrunetConfig::desk(channels), &mut Rng::new(seed))?;
    net.save(out)
        .map_err(|e| CliError::from(e).context(format!("writing {}", out.display())))
}
