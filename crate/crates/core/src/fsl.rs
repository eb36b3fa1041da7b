//! Feature similarity loss.
//!
//! For every pixel pair the loss multiplies a Gaussian spatial weight `w`, a
//! gating term `g = ½‖u_i − u_j‖²` on the class maps, and a colour dissimilarity
//! `f ∈ [−1, 1]`:
//!
//! ```text
//! L = −1/(HW) · Σ_{i,j} w_ij · g(u_i, u_j) · f(δ(x_i, x_j))
//! ```
//!
//! Similar pixels (`f < 0`) are pulled together and dissimilar pixels pushed
//! apart. Only `g` depends on the scores, so `w · f` is precomputed once per
//! image in a [`PairKernel`] and reused across gradient steps.
//!
//! The gating map `u` is one of the raw scores, the binomial posterior or the
//! max-normalised CAM. For the latter the per-channel maximum is held constant
//! when differentiating.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use crate::cam::{channel_relu_max, RgbImage, ScoreMap};
use crate::error::{Error, Result};
use crate::math::logistic;
use crate::rng::Philox4x32;
use crate::sampling::LossResult;

/// Clamp applied to the colour distance before taking its logit.
pub const DELTA_CLAMP: f64 = 1e-6;

/// Images with more pixels than this use a truncated window by default.
pub const EXACT_PAIR_LIMIT: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum GatingInput {
    /// `u = s`; the gradient grows with the score difference.
    RawScores,
    /// `u = σ(s)`.
    Binomial,
    /// `u = relu(s) / max relu(s)` with the maximum treated as a constant.
    MaxNorm,
}

impl GatingInput {
    pub const fn name(self) -> &'static str {
        match self {
            GatingInput::RawScores => "raw",
            GatingInput::Binomial => "binomial",
            GatingInput::MaxNorm => "maxnorm",
        }
    }

    /// Gating value `u(s)` and `du/ds`. `channel_max` is the channel's maximum
    /// ReLU score and is only read for [`GatingInput::MaxNorm`].
    #[inline]
    pub fn transform(self, s: f64, channel_max: f64) -> (f64, f64) {
        match self {
            GatingInput::RawScores => (s, 1.0),
            GatingInput::Binomial => {
                let b = logistic(s);
                (b, b * (1.0 - b))
            }
            GatingInput::MaxNorm => {
                if channel_max > 0.0 && s > 0.0 {
                    (s / channel_max, 1.0 / channel_max)
                } else {
                    (0.0, 0.0)
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FslParams {
    /// Dissimilarity threshold.
    pub mu: f64,
    /// Spatial scale in pixels.
    pub sigma: f64,
    /// Half-width of the square pair window. `None` picks automatically.
    pub window_radius: Option<usize>,
    /// Enumerate every pixel pair regardless of image size.
    pub exact_pairs: bool,
    pub gating_input: GatingInput,
    /// Channels the loss applies to; `None` means all of them.
    pub class_mask: Option<Vec<bool>>,
}

impl Default for FslParams {
    fn default() -> Self {
        FslParams {
            mu: 2.5,
            sigma: 5.0,
            window_radius: None,
            exact_pairs: false,
            gating_input: GatingInput::MaxNorm,
            class_mask: None,
        }
    }
}

impl FslParams {
    pub fn validate(&self) -> Result<()> {
        if !self.mu.is_finite() {
            return Err(Error::InvalidParameter(format!("mu must be finite, got {}", self.mu)));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "sigma must be positive, got {}",
                self.sigma
            )));
        }
        if self.window_radius == Some(0) {
            return Err(Error::InvalidParameter("window radius must be at least 1".into()));
        }
        Ok(())
    }

    /// Window radius actually used on an `height × width` grid. A radius of at
    /// least `max(height, width) - 1` covers every pair.
    pub fn effective_radius(&self, height: usize, width: usize) -> usize {
        let all = height.max(width).saturating_sub(1).max(1);
        if self.exact_pairs {
            return all;
        }
        match self.window_radius {
            Some(r) => r.min(all),
            None if height * width <= EXACT_PAIR_LIMIT => all,
            None => (libm::ceil(3.0 * self.sigma) as usize).clamp(1, all),
        }
    }

    pub fn is_masked_in(&self, c: usize) -> bool {
        self.class_mask.as_ref().map_or(true, |m| m[c])
    }

    fn check_mask(&self, channels: usize) -> Result<()> {
        match &self.class_mask {
            Some(m) if m.len() != channels => Err(Error::Dimension(format!(
                "class mask has {} entries for {} classes",
                m.len(),
                channels
            ))),
            _ => Ok(()),
        }
    }
}

/// The three factors of a single pair's contribution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairComponents {
    pub w: f64,
    pub g: f64,
    pub f: f64,
}

impl PairComponents {
    /// Contribution `−w·g·f / (HW)` of one ordered pair.
    pub fn contribution(&self, num_pixels: usize) -> f64 {
        -self.w * self.g * self.f / num_pixels as f64
    }
}

/// `exp(−‖pi − pj‖² / (2σ²)) / (2πσ²)`.
pub fn spatial_weight(pi: [f64; 2], pj: [f64; 2], sigma: f64) -> f64 {
    let dy = pi[0] - pj[0];
    let dx = pi[1] - pj[1];
    offset_weight(dy * dy + dx * dx, sigma)
}

#[inline]
fn offset_weight(dist2: f64, sigma: f64) -> f64 {
    let s2 = sigma * sigma;
    libm::exp(-dist2 / (2.0 * s2)) / (2.0 * PI * s2)
}

/// `½ Σ_c (ui_c − uj_c)²` over the channels enabled in `mask`.
pub fn gating(ui: &[f64], uj: &[f64], mask: Option<&[bool]>) -> f64 {
    0.5 * ui
        .iter()
        .zip(uj)
        .enumerate()
        .filter(|(c, _)| mask.map_or(true, |m| m[*c]))
        .map(|(_, (a, b))| (a - b) * (a - b))
        .sum::<f64>()
}

/// `tanh(μ + logit(δ))` with `δ = ‖xi − xj‖₁ / 3`.
///
/// `δ` is clamped to `[1e-6, 1 − 1e-6]` so identical and opposite colours map
/// to finite values within 1e-6 of −1 and +1.
pub fn dissimilarity(xi: [f64; 3], xj: [f64; 3], mu: f64) -> f64 {
    let delta = ((xi[0] - xj[0]).abs() + (xi[1] - xj[1]).abs() + (xi[2] - xj[2]).abs()) / 3.0;
    dissimilarity_from_delta(delta, mu)
}

#[inline]
pub(crate) fn dissimilarity_from_delta(delta: f64, mu: f64) -> f64 {
    let d = delta.clamp(DELTA_CLAMP, 1.0 - DELTA_CLAMP);
    libm::tanh(mu + libm::log(d / (1.0 - d)))
}

/// Components of the pair `(p, q)` (flat pixel indices) under `params`.
pub fn pair_components(
    scores: &ScoreMap,
    image: &RgbImage,
    params: &FslParams,
    p: usize,
    q: usize,
) -> Result<PairComponents> {
    check_sizes(scores, image)?;
    params.check_mask(scores.num_classes())?;
    let w_px = scores.width();
    let (ui, uj): (Vec<f64>, Vec<f64>) = (0..scores.num_classes())
        .map(|c| {
            let ch = scores.channel(c);
            let max = channel_relu_max(ch);
            (
                params.gating_input.transform(ch[p], max).0,
                params.gating_input.transform(ch[q], max).0,
            )
        })
        .unzip();
    Ok(PairComponents {
        w: spatial_weight(
            [(p / w_px) as f64, (p % w_px) as f64],
            [(q / w_px) as f64, (q % w_px) as f64],
            params.sigma,
        ),
        g: gating(&ui, &uj, params.class_mask.as_deref()),
        f: dissimilarity(image.pixel(p), image.pixel(q), params.mu),
    })
}

fn check_sizes(scores: &ScoreMap, image: &RgbImage) -> Result<()> {
    if scores.height() != image.height() || scores.width() != image.width() {
        return Err(Error::Dimension(format!(
            "image is {}x{} but the score map is {}x{}",
            image.height(),
            image.width(),
            scores.height(),
            scores.width()
        )));
    }
    Ok(())
}

/// One half-plane pixel offset and the `w · f` products of every pair it forms.
#[derive(Debug, Clone)]
struct OffsetBlock {
    dy: usize,
    dx: isize,
    /// Columns `j` for which `j + dx` stays inside the image.
    col_start: usize,
    col_end: usize,
    /// Row-major over rows `0..height - dy` and the column range.
    weights: Vec<f64>,
}

/// Precomputed `w_ij · f_ij` for every unordered pixel pair within a window.
///
/// Each unordered pair is stored once; the ordered double sum is twice the
/// stored sum and the diagonal contributes nothing.
#[derive(Debug, Clone)]
pub struct PairKernel {
    height: usize,
    width: usize,
    radius: usize,
    blocks: Vec<OffsetBlock>,
}

impl PairKernel {
    pub fn new(image: &RgbImage, mu: f64, sigma: f64, radius: usize) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) || !mu.is_finite() {
            return Err(Error::InvalidParameter(format!("mu {mu}, sigma {sigma}")));
        }
        let (h, w) = (image.height(), image.width());
        let radius = radius.min(h.max(w).saturating_sub(1));
        let r = radius as isize;
        let mut blocks = Vec::new();
        for dy in 0..=radius {
            let dx_start = if dy == 0 { 1 } else { -r };
            for dx in dx_start..=r {
                if dy >= h || dx.unsigned_abs() >= w {
                    continue;
                }
                let col_start = (-dx).max(0) as usize;
                let col_end = (w as isize - dx.max(0)) as usize;
                let wt = offset_weight((dy * dy) as f64 + (dx * dx) as f64, sigma);
                let mut weights = Vec::with_capacity((h - dy) * (col_end - col_start));
                for i in 0..h - dy {
                    for j in col_start..col_end {
                        let p = i * w + j;
                        let q = (i + dy) * w + (j as isize + dx) as usize;
                        weights.push(wt * dissimilarity(image.pixel(p), image.pixel(q), mu));
                    }
                }
                blocks.push(OffsetBlock {
                    dy,
                    dx,
                    col_start,
                    col_end,
                    weights,
                });
            }
        }
        Ok(PairKernel {
            height: h,
            width: w,
            radius,
            blocks,
        })
    }

    pub fn for_params(image: &RgbImage, params: &FslParams) -> Result<Self> {
        params.validate()?;
        let radius = params.effective_radius(image.height(), image.width());
        Self::new(image, params.mu, params.sigma, radius)
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    /// Number of unordered pairs covered.
    pub fn num_pairs(&self) -> usize {
        self.blocks.iter().map(|b| b.weights.len()).sum()
    }

    /// Loss value and gradient with respect to `scores`.
    ///
    /// Channels are processed in order and pairs in a fixed order, so the result
    /// is bit-reproducible.
    pub fn evaluate(
        &self,
        scores: &ScoreMap,
        gating_input: GatingInput,
        class_mask: Option<&[bool]>,
    ) -> Result<LossResult> {
        let shape = scores.shape();
        if shape.height != self.height || shape.width != self.width {
            return Err(Error::Dimension(format!(
                "kernel is {}x{} but the score map is {}x{}",
                self.height, self.width, shape.height, shape.width
            )));
        }
        if let Some(m) = class_mask {
            if m.len() != shape.channels {
                return Err(Error::Dimension(format!(
                    "class mask has {} entries for {} classes",
                    m.len(),
                    shape.channels
                )));
            }
        }
        let plane = shape.plane();
        let norm = 1.0 / plane as f64;
        let mut grad = vec![0.0; shape.len()];
        let mut value = 0.0;
        let mut u = vec![0.0; plane];
        let mut du = vec![0.0; plane];
        let mut acc = vec![0.0; plane];
        for c in 0..shape.channels {
            if !class_mask.map_or(true, |m| m[c]) {
                continue;
            }
            let ch = scores.channel(c);
            let max = channel_relu_max(ch);
            if gating_input == GatingInput::MaxNorm && max <= 0.0 {
                continue;
            }
            for (k, &s) in ch.iter().enumerate() {
                (u[k], du[k]) = gating_input.transform(s, max);
            }
            acc.fill(0.0);
            let sum = self.accumulate(&u, &mut acc);
            value -= norm * sum;
            let out = &mut grad[c * plane..(c + 1) * plane];
            for ((o, a), d) in out.iter_mut().zip(&acc).zip(&du) {
                *o = -2.0 * norm * a * d;
            }
        }
        Ok(LossResult { value, grad, shape })
    }

    /// Returns `Σ_pairs k · (u_p − u_q)²` and adds `k · (u_p − u_q)` to `acc[p]`
    /// (subtracting it from `acc[q]`).
    fn accumulate(&self, u: &[f64], acc: &mut [f64]) -> f64 {
        let w = self.width;
        let mut total = 0.0;
        for b in &self.blocks {
            let span = b.col_end - b.col_start;
            let shift = b.dy * w;
            let mut block_sum = 0.0;
            for (i, row_k) in b.weights.chunks_exact(span).enumerate() {
                let p0 = i * w + b.col_start;
                let q0 = (p0 + shift) as isize + b.dx;
                let q0 = q0 as usize;
                let up = &u[p0..p0 + span];
                let uq = &u[q0..q0 + span];
                let mut row_sum = 0.0;
                for t in 0..span {
                    let kd = row_k[t] * (up[t] - uq[t]);
                    row_sum += kd * (up[t] - uq[t]);
                    acc[p0 + t] += kd;
                    acc[q0 + t] -= kd;
                }
                block_sum += row_sum;
            }
            total += block_sum;
        }
        total
    }
}

/// Feature similarity loss of `scores` against `image` (already at CAM resolution).
pub fn fsl_loss(scores: &ScoreMap, image: &RgbImage, params: &FslParams) -> Result<LossResult> {
    check_sizes(scores, image)?;
    params.check_mask(scores.num_classes())?;
    let kernel = PairKernel::for_params(image, params)?;
    kernel.evaluate(scores, params.gating_input, params.class_mask.as_deref())
}

/// Outcome of [`verify_gradient_bounds`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BoundReport {
    pub trials: usize,
    /// Pairs where `|∂g(b_i, b_j)/∂s_i| > σ'(s_i)` or `σ'(s_i) > e^{−s_i}`.
    pub binomial_violations: usize,
    /// Largest `|∂g(b_i, b_j)/∂s_i| / σ'(s_i)` seen.
    pub binomial_max_ratio: f64,
    /// Pairs with `s_i ≥ 0` checked against `1 / max_m s_m`.
    pub maxnorm_checked: usize,
    pub maxnorm_violations: usize,
    pub maxnorm_max_ratio: f64,
    /// Pairs with `s_i < 0` whose max-normalised gradient was not exactly zero.
    pub maxnorm_negative_nonzero: usize,
    /// Pairs where the raw-score gradient differed from `s_i − s_j`.
    pub raw_mismatches: usize,
    /// Largest `|s_i − s_j|` seen; the raw gradient grows with it unboundedly.
    pub raw_max_gradient: f64,
}

impl BoundReport {
    pub fn is_clean(&self) -> bool {
        self.binomial_violations == 0
            && self.maxnorm_violations == 0
            && self.maxnorm_negative_nonzero == 0
            && self.raw_mismatches == 0
    }
}

/// Relative slack for floating-point rounding in the bound comparisons.
const BOUND_SLACK: f64 = 1e-12;

/// Derivative of `g(u_i, u_j)` with respect to `s_{i,c}` for a single channel.
#[inline]
fn gating_gradient(gating_input: GatingInput, si: f64, sj: f64, channel_max: f64) -> f64 {
    let (ui, dui) = gating_input.transform(si, channel_max);
    let (uj, _) = gating_input.transform(sj, channel_max);
    (ui - uj) * dui
}

/// Checks the gating-gradient bounds on `trials` random pixel pairs.
///
/// For the binomial gate `|∂g/∂s_i| ≤ e^s/(1+e^s)² ≤ e^{−s}`; for the
/// max-normalised gate `|∂g/∂s_i| ≤ 1/max_m s_m` when `s_i ≥ 0` and exactly zero
/// when `s_i < 0`; for raw scores `∂g/∂s_i = s_i − s_j`. Channels excluded by
/// the class mask are skipped.
pub fn verify_gradient_bounds(
    scores: &ScoreMap,
    params: &FslParams,
    trials: usize,
    seed: u64,
) -> Result<BoundReport> {
    if trials == 0 {
        return Err(Error::InvalidParameter("trials must be at least 1".into()));
    }
    params.check_mask(scores.num_classes())?;
    let channels: Vec<usize> = (0..scores.num_classes())
        .filter(|&c| params.is_masked_in(c))
        .collect();
    if channels.is_empty() {
        return Err(Error::InvalidParameter("class mask excludes every channel".into()));
    }
    let plane = scores.shape().plane() as u32;
    let maxes: Vec<f64> = (0..scores.num_classes())
        .map(|c| channel_relu_max(scores.channel(c)))
        .collect();
    let rng = Philox4x32::from_seed(seed);
    let mut report = BoundReport {
        trials,
        ..BoundReport::default()
    };
    for t in 0..trials {
        let mut stream = rng.stream(t as u64, 0);
        let c = channels[stream.below(channels.len() as u32) as usize];
        let p = stream.below(plane) as usize;
        let q = stream.below(plane) as usize;
        let ch = scores.channel(c);
        let (si, sj) = (ch[p], ch[q]);

        let gb = gating_gradient(GatingInput::Binomial, si, sj, maxes[c]).abs();
        let dsig = logistic_derivative(si);
        if gb > dsig * (1.0 + BOUND_SLACK) || dsig > libm::exp(-si) * (1.0 + BOUND_SLACK) {
            report.binomial_violations += 1;
        }
        if dsig > 0.0 {
            report.binomial_max_ratio = report.binomial_max_ratio.max(gb / dsig);
        }

        let gr = gating_gradient(GatingInput::MaxNorm, si, sj, maxes[c]);
        if si >= 0.0 {
            if maxes[c] > 0.0 {
                report.maxnorm_checked += 1;
                let bound = 1.0 / maxes[c];
                if gr.abs() > bound * (1.0 + BOUND_SLACK) {
                    report.maxnorm_violations += 1;
                }
                report.maxnorm_max_ratio = report.maxnorm_max_ratio.max(gr.abs() / bound);
            }
        } else if gr != 0.0 {
            report.maxnorm_negative_nonzero += 1;
        }

        let graw = gating_gradient(GatingInput::RawScores, si, sj, maxes[c]);
        if graw != si - sj {
            report.raw_mismatches += 1;
        }
        report.raw_max_gradient = report.raw_max_gradient.max(graw.abs());
    }
    Ok(report)
}

/// `e^s / (1 + e^s)²`, evaluated without overflow.
fn logistic_derivative(s: f64) -> f64 {
    let e = libm::exp(-s.abs());
    e / ((1.0 + e) * (1.0 + e))
}
