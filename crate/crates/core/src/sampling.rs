//! Importance sampling over pixels and the image-level classification losses.
//!
//! A posterior channel, normalised over the image, is a probability mass
//! function over pixel coordinates. Drawing a pixel from it and reading the
//! posterior there gives a stochastic image-level prediction; its binary
//! cross-entropy against the image label is the importance sampling loss.
//!
//! Gradients treat the drawn coordinates as constants: only the posterior value
//! at each drawn pixel is differentiated, never the sampling distribution.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::cam::{gap, sigmoid_posterior, PosteriorKind, PosteriorMap, ScoreMap, Shape};
use crate::error::{Error, Result};
use crate::math::{bce_with_logit, clamped_bce};
use crate::rng::Philox4x32;

/// Channels whose posterior mass falls at or below this are not sampled.
pub const MASS_EPSILON: f64 = 1e-12;

/// Image-level labels: `y_c = 1` when class `c` is present anywhere in the image.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LabelVector {
    present: Vec<bool>,
}

impl LabelVector {
    pub fn new(present: Vec<bool>) -> Self {
        LabelVector { present }
    }

    pub fn all(num_classes: usize, present: bool) -> Self {
        LabelVector {
            present: vec![present; num_classes],
        }
    }

    /// Labels with the listed channel indices present.
    pub fn from_indices(num_classes: usize, indices: &[usize]) -> Result<Self> {
        let mut present = vec![false; num_classes];
        for &c in indices {
            if c >= num_classes {
                return Err(Error::OutOfRange(format!(
                    "class index {c} with {num_classes} classes"
                )));
            }
            present[c] = true;
        }
        Ok(LabelVector { present })
    }

    pub fn len(&self) -> usize {
        self.present.len()
    }

    pub fn is_empty(&self) -> bool {
        self.present.is_empty()
    }

    pub fn is_present(&self, c: usize) -> bool {
        self.present[c]
    }

    pub fn target(&self, c: usize) -> f64 {
        if self.present[c] {
            1.0
        } else {
            0.0
        }
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.present
    }

    fn check(&self, shape: Shape) -> Result<()> {
        if self.len() != shape.channels {
            return Err(Error::Dimension(format!(
                "{} labels for {} classes",
                self.len(),
                shape.channels
            )));
        }
        Ok(())
    }
}

/// Loss value and its gradient with respect to the input scores.
#[derive(Debug, Clone, PartialEq)]
pub struct LossResult {
    pub value: f64,
    pub grad: Vec<f64>,
    pub shape: Shape,
}

impl LossResult {
    fn zero(shape: Shape) -> Self {
        LossResult {
            value: 0.0,
            grad: vec![0.0; shape.len()],
            shape,
        }
    }

    /// `a * self + b * other`.
    pub fn combine(&self, a: f64, other: &LossResult, b: f64) -> Result<LossResult> {
        if self.shape != other.shape {
            return Err(Error::Dimension(format!(
                "cannot combine losses over {} and {}",
                self.shape, other.shape
            )));
        }
        Ok(LossResult {
            value: a * self.value + b * other.value,
            grad: self
                .grad
                .iter()
                .zip(&other.grad)
                .map(|(x, y)| a * x + b * y)
                .collect(),
            shape: self.shape,
        })
    }
}

/// Per-channel pixel distributions `p_c(i, j) = post_c(i, j) / Z_c`.
#[derive(Debug, Clone, PartialEq)]
pub struct SamplingDistribution {
    shape: Shape,
    kind: PosteriorKind,
    pmf: Vec<f64>,
    valid: Vec<bool>,
}

impl SamplingDistribution {
    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn pmf(&self) -> &[f64] {
        &self.pmf
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.shape.plane();
        &self.pmf[c * n..(c + 1) * n]
    }

    /// Whether channel `c` had enough mass to be normalised.
    pub fn is_valid(&self, c: usize) -> bool {
        self.valid[c]
    }

    pub fn valid_channels(&self) -> &[bool] {
        &self.valid
    }
}

/// Builds the sampling distribution from a multinomial or binomial posterior.
pub fn sampling_distribution(post: &PosteriorMap) -> Result<SamplingDistribution> {
    if post.kind() == PosteriorKind::MaxNorm {
        return Err(Error::UnsupportedKind {
            expected: "multinomial or binomial",
            found: post.kind().name(),
        });
    }
    let shape = post.shape();
    let mut pmf = Vec::with_capacity(shape.len());
    let mut valid = Vec::with_capacity(shape.channels);
    for c in 0..shape.channels {
        let ch = post.channel(c);
        let z: f64 = ch.iter().sum();
        if z > MASS_EPSILON {
            pmf.extend(ch.iter().map(|v| v / z));
            valid.push(true);
        } else {
            pmf.extend(core::iter::repeat(0.0).take(ch.len()));
            valid.push(false);
        }
    }
    Ok(SamplingDistribution {
        shape,
        kind: post.kind(),
        pmf,
        valid,
    })
}

/// `N × C` drawn pixels and the posterior values found there.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    shape: Shape,
    kind: PosteriorKind,
    num_samples: usize,
    /// Row-major `N × C` flat pixel indices.
    pixels: Vec<usize>,
    values: Vec<f64>,
    valid: Vec<bool>,
}

impl SampleSet {
    pub fn num_samples(&self) -> usize {
        self.num_samples
    }

    pub fn num_classes(&self) -> usize {
        self.shape.channels
    }

    /// Flat pixel index `i * W + j` of draw `n` for class `c`.
    pub fn pixel(&self, n: usize, c: usize) -> usize {
        self.pixels[n * self.shape.channels + c]
    }

    /// Coordinates `(i, j)` of draw `n` for class `c`.
    pub fn coords(&self, n: usize, c: usize) -> (usize, usize) {
        let p = self.pixel(n, c);
        (p / self.shape.width, p % self.shape.width)
    }

    pub fn value(&self, n: usize, c: usize) -> f64 {
        self.values[n * self.shape.channels + c]
    }

    /// False for channels that had no mass; their draws carry the sentinel value 0.
    pub fn is_valid(&self, c: usize) -> bool {
        self.valid[c]
    }

    pub fn has_degenerate_channel(&self) -> bool {
        self.valid.iter().any(|v| !v)
    }
}

/// Draws `n_samples` pixels per class by inverse-CDF sampling.
///
/// Draw `n` of class `c` reads the Philox stream `(n, c)` under key `seed`, so
/// any single draw can be regenerated on its own.
pub fn draw_samples(
    dist: &SamplingDistribution,
    post: &PosteriorMap,
    n_samples: usize,
    seed: u64,
) -> Result<SampleSet> {
    if n_samples == 0 {
        return Err(Error::InvalidParameter("n_samples must be at least 1".into()));
    }
    if dist.shape != post.shape() {
        return Err(Error::Dimension(format!(
            "distribution {} vs posterior {}",
            dist.shape,
            post.shape()
        )));
    }
    if dist.kind != post.kind() {
        return Err(Error::Provenance(format!(
            "distribution built from {} posterior, sampling values from {}",
            dist.kind.name(),
            post.kind().name()
        )));
    }
    let shape = dist.shape;
    let n = shape.plane();
    let cdfs: Vec<Vec<f64>> = (0..shape.channels)
        .map(|c| {
            let mut acc = 0.0;
            dist.channel(c)
                .iter()
                .map(|p| {
                    acc += p;
                    acc
                })
                .collect()
        })
        .collect();
    let rng = Philox4x32::from_seed(seed);
    let mut pixels = Vec::with_capacity(n_samples * shape.channels);
    let mut values = Vec::with_capacity(n_samples * shape.channels);
    for s in 0..n_samples {
        for (c, cdf) in cdfs.iter().enumerate() {
            if !dist.valid[c] {
                pixels.push(0);
                values.push(0.0);
                continue;
            }
            let u = rng.stream(s as u64, c as u32).next_f64();
            let p = invert_cdf(cdf, u);
            pixels.push(p);
            values.push(post.channel(c)[p]);
        }
    }
    debug_assert!(pixels.iter().all(|&p| p < n));
    Ok(SampleSet {
        shape,
        kind: post.kind(),
        num_samples: n_samples,
        pixels,
        values,
        valid: dist.valid.clone(),
    })
}

/// First index whose cumulative mass exceeds `u · total`; zero-mass cells are
/// never selected.
fn invert_cdf(cdf: &[f64], u: f64) -> usize {
    let total = *cdf.last().expect("non-empty channel");
    let target = u * total;
    let idx = cdf.partition_point(|&x| x <= target);
    if idx < cdf.len() {
        idx
    } else {
        // Rounding pushed the target onto the total: take the last cell with mass.
        let mut k = cdf.len() - 1;
        while k > 0 && cdf[k] == cdf[k - 1] {
            k -= 1;
        }
        k
    }
}

/// Multi-sample importance sampling loss,
/// `(1/N) Σ_n -(1/C) Σ_c [y_c log ṽ_nc + (1 - y_c) log(1 - ṽ_nc)]`.
///
/// `post` must be the map the samples were drawn from and `scores` the map it
/// was computed from. Binomial is the primary mode; multinomial reproduces the
/// softmax-based formulation.
pub fn isl_loss(
    labels: &LabelVector,
    samples: &SampleSet,
    scores: &ScoreMap,
    post: &PosteriorMap,
) -> Result<LossResult> {
    let shape = scores.shape();
    labels.check(shape)?;
    if post.shape() != shape || samples.shape != shape {
        return Err(Error::Dimension(format!(
            "scores {shape}, posterior {}, samples {}",
            post.shape(),
            samples.shape
        )));
    }
    if post.kind() == PosteriorKind::MaxNorm {
        return Err(Error::UnsupportedKind {
            expected: "multinomial or binomial",
            found: post.kind().name(),
        });
    }
    if samples.kind != post.kind() {
        return Err(Error::Provenance(format!(
            "samples drawn from a {} posterior, evaluated against {}",
            samples.kind.name(),
            post.kind().name()
        )));
    }
    let classes = shape.channels;
    let plane = shape.plane();
    for nn in 0..samples.num_samples {
        for c in 0..classes {
            if samples.valid[c] && samples.value(nn, c) != post.channel(c)[samples.pixel(nn, c)] {
                return Err(Error::Provenance(format!(
                    "sample {nn} of class {c} does not match the posterior"
                )));
            }
        }
    }

    let scale = 1.0 / (samples.num_samples * classes) as f64;
    let mut out = LossResult::zero(shape);
    let mut total = 0.0;
    for nn in 0..samples.num_samples {
        for c in 0..classes {
            let y = labels.target(c);
            if !samples.valid[c] {
                // All-zero posterior: the prediction is the clamped zero,
                // which carries no gradient.
                total += clamped_bce(y, 0.0).0;
                continue;
            }
            let p = samples.pixel(nn, c);
            let v = samples.value(nn, c);
            let (loss, dv) = clamped_bce(y, v);
            total += loss;
            if dv == 0.0 {
                continue;
            }
            match post.kind() {
                PosteriorKind::Binomial => {
                    out.grad[c * plane + p] += scale * dv * v * (1.0 - v);
                }
                PosteriorKind::Multinomial => {
                    for k in 0..classes {
                        let ak = post.channel(k)[p];
                        let jac = if k == c { v * (1.0 - v) } else { -v * ak };
                        out.grad[k * plane + p] += scale * dv * jac;
                    }
                }
                PosteriorKind::MaxNorm => unreachable!(),
            }
        }
    }
    out.value = total * scale;
    Ok(out)
}

/// Binary cross-entropy on the image-level posterior `B_c = σ(Σ_{i,j} s_c)`.
///
/// The gradient is `(B_c - y_c) / C` at every pixel of channel `c`.
pub fn gap_bce_loss(labels: &LabelVector, scores: &ScoreMap) -> Result<LossResult> {
    let shape = scores.shape();
    labels.check(shape)?;
    let pooled = gap(scores);
    let classes = shape.channels as f64;
    let plane = shape.plane();
    let mut out = LossResult::zero(shape);
    let mut total = 0.0;
    for c in 0..shape.channels {
        let y = labels.target(c);
        total += bce_with_logit(y, pooled.values[c]);
        let g = (pooled.posterior[c] - y) / classes;
        out.grad[c * plane..(c + 1) * plane].fill(g);
    }
    out.value = total / classes;
    Ok(out)
}

/// Defaults for the combined classification loss.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ClsProfile {
    pub kind: PosteriorKind,
    pub lambda: f64,
    pub num_samples: usize,
}

impl ClsProfile {
    /// Sigmoid posterior, `λ = 0.2`, ten samples per class.
    pub const fn binomial() -> Self {
        ClsProfile {
            kind: PosteriorKind::Binomial,
            lambda: 0.2,
            num_samples: 10,
        }
    }

    /// Softmax posterior, `λ = 0.6`, ten samples per class.
    pub const fn multinomial() -> Self {
        ClsProfile {
            kind: PosteriorKind::Multinomial,
            lambda: 0.6,
            num_samples: 10,
        }
    }
}

impl Default for ClsProfile {
    fn default() -> Self {
        Self::binomial()
    }
}

/// `(1 - λ) · L_ce + λ · L_is^N` with the samples drawn from `post`.
///
/// `λ = 0` skips sampling entirely and returns the GAP loss unchanged.
pub fn combined_cls_loss(
    labels: &LabelVector,
    scores: &ScoreMap,
    post: &PosteriorMap,
    n_samples: usize,
    lambda: f64,
    seed: u64,
) -> Result<LossResult> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::InvalidParameter(format!("lambda {lambda} outside [0, 1]")));
    }
    let ce = gap_bce_loss(labels, scores)?;
    if lambda == 0.0 {
        return Ok(ce);
    }
    let dist = sampling_distribution(post)?;
    let samples = draw_samples(&dist, post, n_samples, seed)?;
    let is = isl_loss(labels, &samples, scores, post)?;
    if lambda == 1.0 {
        return Ok(is);
    }
    ce.combine(1.0 - lambda, &is, lambda)
}

/// [`combined_cls_loss`] on the binomial posterior of `scores`.
pub fn binomial_cls_loss(
    labels: &LabelVector,
    scores: &ScoreMap,
    n_samples: usize,
    lambda: f64,
    seed: u64,
) -> Result<LossResult> {
    let post = sigmoid_posterior(scores);
    combined_cls_loss(labels, scores, &post, n_samples, lambda, seed)
}
