//! Network-free CAM refinement with the feature similarity loss.
//!
//! An initial single-object CAM is built from a ground-truth mask as an
//! axis-aligned Gaussian, then improved by plain gradient descent on the feature
//! similarity loss alone. Sweeping μ and σ over a small corpus and scoring the
//! zero-thresholded result gives a way to choose those parameters without
//! training a network.

use alloc::format;
use alloc::vec::Vec;

use crate::cam::{RgbImage, ScoreMap, Shape};
use crate::error::{Error, Result};
use crate::fsl::{FslParams, PairKernel};
use crate::metrics::{evaluate, foreground_mask, DatasetSummary, LabelMask, MetricReport};

/// Smallest per-axis variance of a fitted Gaussian, in pixels².
pub const VARIANCE_FLOOR: f64 = 0.25;

/// Axis-aligned Gaussian over pixel coordinates `(row, column)`.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct GaussianCamSpec {
    pub mean: [f64; 2],
    pub variances: [f64; 2],
}

impl GaussianCamSpec {
    /// Centroid and per-axis variance of the foreground pixels of `mask`,
    /// mapped onto a `height × width` grid.
    pub fn fit(mask: &LabelMask, height: usize, width: usize) -> Result<Self> {
        let (mh, mw) = (mask.height(), mask.width());
        let mut n = 0.0;
        let mut sum = [0.0; 2];
        for i in 0..mh {
            for j in 0..mw {
                if mask.get(i, j) != 0 {
                    n += 1.0;
                    sum[0] += i as f64;
                    sum[1] += j as f64;
                }
            }
        }
        if n == 0.0 {
            return Err(Error::EmptyForeground);
        }
        let mean = [sum[0] / n, sum[1] / n];
        let mut var = [0.0; 2];
        for i in 0..mh {
            for j in 0..mw {
                if mask.get(i, j) != 0 {
                    var[0] += (i as f64 - mean[0]) * (i as f64 - mean[0]);
                    var[1] += (j as f64 - mean[1]) * (j as f64 - mean[1]);
                }
            }
        }
        // pixel centres map as (k + 0.5) * scale - 0.5
        let scale = [height as f64 / mh as f64, width as f64 / mw as f64];
        let mut spec = GaussianCamSpec {
            mean: [0.0; 2],
            variances: [0.0; 2],
        };
        for a in 0..2 {
            spec.mean[a] = (mean[a] + 0.5) * scale[a] - 0.5;
            spec.variances[a] = (var[a] / n * scale[a] * scale[a]).max(VARIANCE_FLOOR);
        }
        Ok(spec)
    }

    /// The same Gaussian with its mean moved by `(dy, dx)` pixels.
    pub fn shifted(self, dy: f64, dx: f64) -> Self {
        GaussianCamSpec {
            mean: [self.mean[0] + dy, self.mean[1] + dx],
            ..self
        }
    }

    /// Peak-one Gaussian at `(i, j)`.
    pub fn density(&self, i: f64, j: f64) -> f64 {
        let dy = i - self.mean[0];
        let dx = j - self.mean[1];
        libm::exp(-dy * dy / (2.0 * self.variances[0])) * libm::exp(-dx * dx / (2.0 * self.variances[1]))
    }

    /// Single-channel scores `2 G(i, j) − 1`, within `[−1, 1]`.
    pub fn render(&self, height: usize, width: usize) -> ScoreMap {
        ScoreMap::from_fn(Shape::new(1, height, width), |_, i, j| {
            (2.0 * self.density(i as f64, j as f64) - 1.0).clamp(-1.0, 1.0)
        })
        .expect("gaussian scores are finite")
    }
}

/// Fits a Gaussian CAM to the foreground of `mask` on a `height × width` grid.
pub fn fit_gaussian_cam(mask: &LabelMask, height: usize, width: usize) -> Result<ScoreMap> {
    Ok(GaussianCamSpec::fit(mask, height, width)?.render(height, width))
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RefineConfig {
    pub step_size: f64,
    pub iterations: usize,
    pub params: FslParams,
}

impl Default for RefineConfig {
    /// `η = 0.01`, 500 iterations, default loss parameters.
    fn default() -> Self {
        RefineConfig {
            step_size: 0.01,
            iterations: 500,
            params: FslParams::default(),
        }
    }
}

impl RefineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "step size must be positive, got {}",
                self.step_size
            )));
        }
        self.params.validate()
    }

    /// The same configuration with different `μ` and `σ`.
    pub fn with_mu_sigma(&self, mu: f64, sigma: f64) -> Self {
        let mut out = self.clone();
        out.params.mu = mu;
        out.params.sigma = sigma;
        out
    }
}

/// Result of [`refine_cam`].
#[derive(Debug, Clone, PartialEq)]
pub struct Refinement {
    pub scores: ScoreMap,
    /// Loss before each step plus the final loss: `iterations + 1` entries.
    pub trace: Vec<f64>,
}

impl Refinement {
    /// Whether the loss never increased between consecutive entries.
    pub fn is_monotone(&self) -> bool {
        self.trace.windows(2).all(|w| w[1] <= w[0])
    }
}

/// Gradient descent `s ← s − η ∇L_fs(s)` for `config.iterations` steps.
pub fn refine_cam(initial: &ScoreMap, image: &RgbImage, config: &RefineConfig) -> Result<Refinement> {
    config.validate()?;
    if initial.height() != image.height() || initial.width() != image.width() {
        return Err(Error::Dimension(format!(
            "image is {}x{} but the score map is {}x{}",
            image.height(),
            image.width(),
            initial.height(),
            initial.width()
        )));
    }
    let kernel = PairKernel::for_params(image, &config.params)?;
    refine_with_kernel(initial, &kernel, config)
}

pub(crate) fn refine_with_kernel(
    initial: &ScoreMap,
    kernel: &PairKernel,
    config: &RefineConfig,
) -> Result<Refinement> {
    let gate = config.params.gating_input;
    let mask = config.params.class_mask.as_deref();
    let mut scores = initial.clone();
    let mut trace = Vec::with_capacity(config.iterations + 1);
    for iteration in 0..=config.iterations {
        let loss = kernel.evaluate(&scores, gate, mask)?;
        if !loss.value.is_finite() || loss.grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Divergence { iteration });
        }
        trace.push(loss.value);
        if iteration == config.iterations {
            break;
        }
        scores.descend(config.step_size, &loss.grad);
        if !scores.is_finite() {
            return Err(Error::Divergence {
                iteration: iteration + 1,
            });
        }
    }
    Ok(Refinement { scores, trace })
}

/// Mean metrics of one `(μ, σ)` grid point.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SweepPoint {
    pub mu: f64,
    pub sigma: f64,
    pub j: f64,
    pub f: f64,
    pub jf: f64,
}

/// Refines the fitted Gaussian CAM of one `(image, mask)` sample and scores the
/// zero-thresholded result against the mask.
pub fn refine_and_evaluate(
    image: &RgbImage,
    mask: &LabelMask,
    config: &RefineConfig,
) -> Result<(Refinement, MetricReport)> {
    let labels = mask.foreground_labels();
    match labels.len() {
        0 => return Err(Error::EmptyForeground),
        1 => {}
        _ => return Err(Error::MultiObjectMask),
    }
    if mask.height() != image.height() || mask.width() != image.width() {
        return Err(Error::Dimension(format!(
            "mask is {}x{} but the image is {}x{}",
            mask.height(),
            mask.width(),
            image.height(),
            image.width()
        )));
    }
    let binary = binarize(mask);
    let initial = fit_gaussian_cam(&binary, image.height(), image.width())?;
    let mut single = config.clone();
    single.params.class_mask = None;
    let refined = refine_cam(&initial, image, &single)?;
    let report = evaluate(&foreground_mask(&refined.scores), &binary, 1, None)?;
    Ok((refined, report))
}

/// Collapses every foreground label to 1.
pub fn binarize(mask: &LabelMask) -> LabelMask {
    LabelMask::new(
        mask.height(),
        mask.width(),
        mask.as_slice().iter().map(|&v| u32::from(v != 0)).collect(),
    )
    .expect("same shape")
}

/// Dataset-mean J, F and J&F after refinement at one grid point.
pub fn sweep_point(samples: &[(RgbImage, LabelMask)], config: &RefineConfig) -> Result<SweepPoint> {
    if samples.is_empty() {
        return Err(Error::InvalidParameter("sweep needs at least one sample".into()));
    }
    let mut summary = DatasetSummary::default();
    for (image, mask) in samples {
        let (_, report) = refine_and_evaluate(image, mask, config)?;
        summary.push(&report);
    }
    Ok(SweepPoint {
        mu: config.params.mu,
        sigma: config.params.sigma,
        j: summary.mean_j(),
        f: summary.mean_f(),
        jf: summary.jf(),
    })
}

/// Evaluates every `(μ, σ)` combination, μ-major.
pub fn sweep_mu_sigma(
    samples: &[(RgbImage, LabelMask)],
    mu_grid: &[f64],
    sigma_grid: &[f64],
    config: &RefineConfig,
) -> Result<Vec<SweepPoint>> {
    if mu_grid.is_empty() || sigma_grid.is_empty() {
        return Err(Error::InvalidParameter("empty parameter grid".into()));
    }
    let mut out = Vec::with_capacity(mu_grid.len() * sigma_grid.len());
    for &mu in mu_grid {
        for &sigma in sigma_grid {
            out.push(sweep_point(samples, &config.with_mu_sigma(mu, sigma))?);
        }
    }
    Ok(out)
}

/// Grid point with the highest J&F; ties keep the earliest.
pub fn best_point(points: &[SweepPoint]) -> Option<SweepPoint> {
    points.iter().copied().fold(None, |best: Option<SweepPoint>, p| match best {
        Some(b) if b.jf >= p.jf => Some(b),
        _ => Some(p),
    })
}
