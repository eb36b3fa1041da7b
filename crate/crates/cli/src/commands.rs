//! Subcommand implementations. Each returns what it would print on stdout so
//! the binary and the tests share one code path.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use camforge_core::{
    combined_cls_loss, draw_samples, evaluate, foreground_mask, fsl_loss, gap_bce_loss, isl_loss,
    max_normalize, pseudo_label, refine_cam, sampling_distribution, sigmoid_posterior, softmax_posterior,
    sweep_point, GaussianCamSpec, LabelMask, LabelVector, PosteriorKind, RgbImage, ScoreMap, SweepPoint,
};
use clap::{Args, Subcommand};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{CommonArgs, RunConfig};
use crate::corpus::{self, CorpusSpec};
use crate::error::{CliError, Result};
use crate::json;
use crate::pnm;
use crate::tensor::Tensor;

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Classification and feature similarity losses of a score tensor.
    Loss(LossArgs),
    /// Refine a CAM by gradient descent on the feature similarity loss.
    Refine(RefineArgs),
    /// J, F and J&F of a predicted mask against ground truth.
    Eval(EvalArgs),
    /// Pseudo-label mask from a score tensor.
    Label(LabelArgs),
    /// Refine-and-evaluate a corpus over a grid of (mu, sigma).
    Sweep(SweepArgs),
    /// Write the synthetic shapes corpus.
    GenCorpus(GenCorpusArgs),
}

#[derive(Debug, Args)]
pub struct LossArgs {
    /// Score tensor (CAMT, C x H x W).
    #[arg(long)]
    pub scores: PathBuf,
    /// RGB image (binary PPM).
    #[arg(long)]
    pub image: PathBuf,
    /// Comma-separated indices of the classes present in the image.
    #[arg(long, allow_hyphen_values = true)]
    pub labels: String,
    /// Area-resample the image to the score resolution instead of requiring
    /// equal sizes.
    #[arg(long)]
    pub resample_image: bool,
    /// Write the gradient of `cls_loss + fsl_weight * fsl_loss` here.
    #[arg(long = "grad-out")]
    pub grad_out: Option<PathBuf>,
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Args)]
pub struct RefineArgs {
    /// Initial score tensor.
    #[arg(long, conflicts_with = "gaussian_from", required_unless_present = "gaussian_from")]
    pub scores: Option<PathBuf>,
    /// Start from the Gaussian CAM fitted to this mask (PGM).
    #[arg(long = "gaussian-from")]
    pub gaussian_from: Option<PathBuf>,
    /// Offset `dy,dx` in pixels applied to the fitted Gaussian.
    #[arg(long, requires = "gaussian_from", allow_hyphen_values = true)]
    pub shift: Option<String>,
    #[arg(long)]
    pub image: PathBuf,
    /// Refined score tensor.
    #[arg(long)]
    pub out: PathBuf,
    /// Loss trace CSV: a header and one row per evaluated loss.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    /// Zero-thresholded mask of the refined first channel (PGM).
    #[arg(long = "mask-out")]
    pub mask_out: Option<PathBuf>,
    /// Directory for per-channel min-max scaled PGM heatmaps.
    #[arg(long = "heatmap-dir")]
    pub heatmap_dir: Option<PathBuf>,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Predicted mask (PGM, pixel value = class index).
    pub pred: PathBuf,
    /// Ground-truth mask.
    pub gt: PathBuf,
    /// Number of foreground classes; defaults to the largest label present.
    #[arg(long)]
    pub classes: Option<usize>,
    /// Boundary matching tolerance in pixels.
    #[arg(long)]
    pub tolerance: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Args)]
pub struct LabelArgs {
    #[arg(long)]
    pub scores: PathBuf,
    /// Comma-separated indices of the classes present; mask label = index + 1.
    #[arg(long, allow_hyphen_values = true)]
    pub labels: String,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Directory holding `img_*.ppm` with matching `mask_*.pgm`.
    pub corpus: PathBuf,
    #[arg(long = "mu-grid", default_value = "0.5,1.5,2.5,3.5,4.5")]
    pub mu_grid: String,
    #[arg(long = "sigma-grid", default_value = "1,3,5,7,9")]
    pub sigma_grid: String,
    /// Grid report (JSON).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Grid as CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Args)]
pub struct GenCorpusArgs {
    pub out: PathBuf,
    #[arg(long, default_value_t = corpus::DEFAULT_COUNT)]
    pub count: usize,
    /// Image height and width.
    #[arg(long, default_value_t = corpus::DEFAULT_SIZE)]
    pub size: usize,
    #[command(flatten)]
    pub common: CommonArgs,
}

pub fn run(command: &Command) -> Result<String> {
    match command {
        Command::Loss(a) => loss(a),
        Command::Refine(a) => refine(a),
        Command::Eval(a) => eval(a),
        Command::Label(a) => label(a),
        Command::Sweep(a) => sweep(a),
        Command::GenCorpus(a) => gen_corpus(a),
    }
}

fn emit(out: Option<&Path>, text: String) -> Result<String> {
    match out {
        Some(p) => {
            std::fs::write(p, &text).map_err(|e| CliError::io(p, e))?;
            Ok(String::new())
        }
        None => Ok(text),
    }
}

pub fn parse_labels(text: &str, num_classes: usize) -> Result<LabelVector> {
    let mut indices = Vec::new();
    for part in text.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let k: usize = part
            .parse()
            .map_err(|_| CliError::Usage(format!("label '{part}' is not a class index")))?;
        indices.push(k);
    }
    LabelVector::from_indices(num_classes, &indices).map_err(|e| CliError::Usage(e.to_string()))
}

pub fn parse_list(text: &str, what: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(|p| {
            p.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| CliError::Usage(format!("{what}: '{p}' is not a number")))
        })
        .collect()
}

fn image_at(image: RgbImage, scores: &ScoreMap, resample: bool, path: &Path) -> Result<RgbImage> {
    if image.height() == scores.height() && image.width() == scores.width() {
        return Ok(image);
    }
    if resample {
        return Ok(image.resample_area(scores.height(), scores.width())?);
    }
    Err(CliError::Shape(format!(
        "{} is {}x{} but the scores are {}x{}",
        path.display(),
        image.height(),
        image.width(),
        scores.height(),
        scores.width()
    )))
}

#[derive(Serialize)]
struct LossReport {
    cls_loss: f64,
    ce_loss: f64,
    isl_loss: f64,
    fsl_loss: f64,
    total_loss: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    grad_file: Option<String>,
}

fn loss(a: &LossArgs) -> Result<String> {
    let cfg = RunConfig::resolve(&a.common)?;
    let scores = Tensor::read(&a.scores)?.to_scores(&a.scores)?;
    let image = image_at(pnm::read_ppm(&a.image)?, &scores, a.resample_image, &a.image)?;
    let labels = parse_labels(&a.labels, scores.num_classes())?;
    let post = match cfg.posterior {
        PosteriorKind::Multinomial => softmax_posterior(&scores),
        _ => sigmoid_posterior(&scores),
    };
    let ce = gap_bce_loss(&labels, &scores)?;
    let samples = draw_samples(&sampling_distribution(&post)?, &post, cfg.samples, cfg.seed)?;
    let is = isl_loss(&labels, &samples, &scores, &post)?;
    let cls = combined_cls_loss(&labels, &scores, &post, cfg.samples, cfg.lambda, cfg.seed)?;
    let fsl = fsl_loss(&scores, &image, &cfg.refine.params)?;
    let total = cls.combine(1.0, &fsl, cfg.fsl_weight)?;
    let grad_file = match &a.grad_out {
        Some(p) => {
            let s = scores.shape();
            Tensor::from_values(vec![s.channels as u32, s.height as u32, s.width as u32], &total.grad).write(p)?;
            Some(p.display().to_string())
        }
        None => None,
    };
    let report = LossReport {
        cls_loss: cls.value,
        ce_loss: ce.value,
        isl_loss: is.value,
        fsl_loss: fsl.value,
        total_loss: total.value,
        grad_file,
    };
    emit(a.out.as_deref(), json::to_string(&report))
}

fn parse_shift(text: &str) -> Result<(f64, f64)> {
    match parse_list(text, "shift")?[..] {
        [dy, dx] => Ok((dy, dx)),
        _ => Err(CliError::Usage(format!("shift must be 'dy,dx', got '{text}'"))),
    }
}

#[derive(Serialize)]
struct RefineReport {
    initial_loss: f64,
    final_loss: f64,
    iterations: usize,
    monotone: bool,
}

fn refine(a: &RefineArgs) -> Result<String> {
    let cfg = RunConfig::resolve(&a.common)?;
    let image = pnm::read_ppm(&a.image)?;
    let initial = match (&a.scores, &a.gaussian_from) {
        (Some(p), _) => Tensor::read(p)?.to_scores(p)?,
        (None, Some(p)) => {
            let mask = pnm::read_mask(p)?;
            let mut spec = GaussianCamSpec::fit(&mask, image.height(), image.width())?;
            if let Some(s) = &a.shift {
                let (dy, dx) = parse_shift(s)?;
                spec = spec.shifted(dy, dx);
            }
            spec.render(image.height(), image.width())
        }
        (None, None) => unreachable!("clap requires one initialisation"),
    };
    let result = refine_cam(&initial, &image, &cfg.refine)?;
    if let (0, Some(src)) = (cfg.refine.iterations, &a.scores) {
        // copy the input bytes so a no-op run reproduces the file exactly
        std::fs::copy(src, &a.out).map_err(|e| CliError::io(&a.out, e))?;
    } else {
        Tensor::from_scores(&result.scores).write(&a.out)?;
    }
    if let Some(p) = &a.trace {
        let mut csv = String::from("iteration,loss\n");
        for (k, v) in result.trace.iter().enumerate() {
            writeln!(csv, "{k},{}", json::float(*v)).unwrap();
        }
        std::fs::write(p, csv).map_err(|e| CliError::io(p, e))?;
    }
    if let Some(p) = &a.mask_out {
        let first = ScoreMap::new(
            camforge_core::Shape::new(1, result.scores.height(), result.scores.width()),
            result.scores.channel(0).to_vec(),
        )?;
        pnm::write(p, &pnm::encode_mask(&foreground_mask(&first))?)?;
    }
    if let Some(dir) = &a.heatmap_dir {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        for c in 0..result.scores.num_classes() {
            let p = dir.join(format!("channel_{c:03}.pgm"));
            let bytes = pnm::encode_pgm(
                result.scores.height(),
                result.scores.width(),
                &pnm::heatmap(result.scores.channel(c)),
            );
            pnm::write(&p, &bytes)?;
        }
    }
    let report = RefineReport {
        initial_loss: result.trace[0],
        final_loss: *result.trace.last().unwrap(),
        iterations: cfg.refine.iterations,
        monotone: result.is_monotone(),
    };
    Ok(json::to_string(&report))
}

fn eval(a: &EvalArgs) -> Result<String> {
    RunConfig::resolve(&a.common)?;
    let pred = pnm::read_mask(&a.pred)?;
    let gt = pnm::read_mask(&a.gt)?;
    if pred.height() != gt.height() || pred.width() != gt.width() {
        return Err(CliError::Shape(format!(
            "prediction is {}x{} but ground truth is {}x{}",
            pred.height(),
            pred.width(),
            gt.height(),
            gt.width()
        )));
    }
    let classes = a
        .classes
        .unwrap_or_else(|| pred.max_label().max(gt.max_label()).max(1) as usize);
    let report = evaluate(&pred, &gt, classes, a.tolerance)?;
    emit(a.out.as_deref(), json::to_string(&report))
}

fn label(a: &LabelArgs) -> Result<String> {
    let cfg = RunConfig::resolve(&a.common)?;
    let scores = Tensor::read(&a.scores)?.to_scores(&a.scores)?;
    let present = parse_labels(&a.labels, scores.num_classes())?;
    let mask = pseudo_label(&max_normalize(&scores), &present, cfg.bg_threshold)?;
    pnm::write(&a.out, &pnm::encode_mask(&mask)?)?;
    Ok(String::new())
}

/// `img_*.ppm` files of `dir` in name order, each paired with its `mask_*.pgm`.
pub fn load_corpus(dir: &Path) -> Result<Vec<(RgbImage, LabelMask)>> {
    let entries = std::fs::read_dir(dir).map_err(|e| CliError::io(dir, e))?;
    let mut names: Vec<String> = entries
        .filter_map(|e| e.ok())
        .filter_map(|e| e.file_name().into_string().ok())
        .filter(|n| n.starts_with("img_") && n.ends_with(".ppm"))
        .collect();
    names.sort();
    if names.is_empty() {
        return Err(CliError::Empty(format!("no img_*.ppm files in {}", dir.display())));
    }
    names
        .iter()
        .map(|n| {
            let stem = &n["img_".len()..n.len() - ".ppm".len()];
            let image = pnm::read_ppm(&dir.join(n))?;
            let mask_path = dir.join(format!("mask_{stem}.pgm"));
            let mask = pnm::read_mask(&mask_path)?;
            if mask.height() != image.height() || mask.width() != image.width() {
                return Err(CliError::Shape(format!("{} does not match {n}", mask_path.display())));
            }
            Ok((image, mask))
        })
        .collect()
}

/// Worker count from `CAMFORGE_THREADS`, or `None` for the rayon default.
pub fn thread_limit() -> Result<Option<usize>> {
    match std::env::var("CAMFORGE_THREADS") {
        Err(_) => Ok(None),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(Some(n)),
            _ => Err(CliError::Usage(format!("CAMFORGE_THREADS must be a positive integer, got '{v}'"))),
        },
    }
}

#[derive(Serialize)]
struct SweepSettings {
    step: f64,
    iterations: usize,
    gating: &'static str,
    window: Option<usize>,
    exact_pairs: bool,
}

#[derive(Serialize)]
struct SweepReport {
    samples: usize,
    settings: SweepSettings,
    grid: Vec<SweepPoint>,
    best: SweepPoint,
}

fn sweep(a: &SweepArgs) -> Result<String> {
    let cfg = RunConfig::resolve(&a.common)?;
    let mu_grid = parse_list(&a.mu_grid, "mu-grid")?;
    let sigma_grid = parse_list(&a.sigma_grid, "sigma-grid")?;
    if mu_grid.is_empty() || sigma_grid.is_empty() {
        return Err(CliError::Usage("parameter grids must not be empty".into()));
    }
    for &s in &sigma_grid {
        if s <= 0.0 {
            return Err(CliError::Usage(format!("sigma must be positive, got {s}")));
        }
    }
    let samples = load_corpus(&a.corpus)?;
    let points: Vec<(f64, f64)> = mu_grid
        .iter()
        .flat_map(|&m| sigma_grid.iter().map(move |&s| (m, s)))
        .collect();
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = thread_limit()? {
        pool = pool.num_threads(n);
    }
    let pool = pool
        .build()
        .map_err(|e| CliError::Usage(format!("cannot start worker threads: {e}")))?;
    let grid: Vec<SweepPoint> = pool.install(|| {
        points
            .par_iter()
            .map(|&(m, s)| sweep_point(&samples, &cfg.refine.with_mu_sigma(m, s)))
            .collect::<camforge_core::Result<Vec<_>>>()
    })?;
    let best = camforge_core::best_point(&grid).expect("non-empty grid");
    if let Some(p) = &a.csv {
        let mut csv = String::from("mu,sigma,j,f,jf\n");
        for g in &grid {
            writeln!(
                csv,
                "{},{},{},{},{}",
                json::float(g.mu),
                json::float(g.sigma),
                json::float(g.j),
                json::float(g.f),
                json::float(g.jf)
            )
            .unwrap();
        }
        std::fs::write(p, csv).map_err(|e| CliError::io(p, e))?;
    }
    let params = &cfg.refine.params;
    let report = SweepReport {
        samples: samples.len(),
        settings: SweepSettings {
            step: cfg.refine.step_size,
            iterations: cfg.refine.iterations,
            gating: params.gating_input.name(),
            window: params.window_radius,
            exact_pairs: params.exact_pairs,
        },
        grid,
        best,
    };
    emit(a.out.as_deref(), json::to_string(&report))
}

#[derive(Serialize)]
struct CorpusReport {
    count: usize,
    seed: u64,
    size: usize,
}

fn gen_corpus(a: &GenCorpusArgs) -> Result<String> {
    let cfg = RunConfig::resolve(&a.common)?;
    if a.size < 2 {
        return Err(CliError::Usage("size must be at least 2".into()));
    }
    let spec = CorpusSpec {
        seed: cfg.seed,
        count: a.count,
        height: a.size,
        width: a.size,
        ..CorpusSpec::default()
    };
    std::fs::create_dir_all(&a.out).map_err(|e| CliError::io(&a.out, e))?;
    for (k, s) in corpus::generate(&spec).iter().enumerate() {
        pnm::write(&a.out.join(format!("img_{k:03}.ppm")), &pnm::encode_ppm(&s.image))?;
        pnm::write(&a.out.join(format!("mask_{k:03}.pgm")), &pnm::encode_mask(&s.mask)?)?;
    }
    Ok(json::to_string(&CorpusReport {
        count: a.count,
        seed: cfg.seed,
        size: a.size,
    }))
}
