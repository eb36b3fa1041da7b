//! Score maps, posteriors and image-level pooling.
//!
//! A [`ScoreMap`] holds raw class scores (logits) `s_c(i, j)` in channel-major
//! order: channel, then row, then column. The three normalisations turn it into
//! a [`PosteriorMap`] tagged with the kind it was produced by.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math::logistic;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Shape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Shape {
    pub const fn new(channels: usize, height: usize, width: usize) -> Self {
        Shape {
            channels,
            height,
            width,
        }
    }

    /// Pixels per channel.
    pub const fn plane(&self) -> usize {
        self.height * self.width
    }

    pub const fn len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub const fn index(&self, c: usize, i: usize, j: usize) -> usize {
        (c * self.height + i) * self.width + j
    }
}

impl core::fmt::Display for Shape {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        write!(f, "{}x{}x{}", self.channels, self.height, self.width)
    }
}

/// C×H×W class scores. All entries are finite.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMap {
    shape: Shape,
    data: Vec<f64>,
}

/// K×H×W feature activations, the input to [`cam_from_features`].
pub type FeatureMap = ScoreMap;

impl ScoreMap {
    pub fn new(shape: Shape, data: Vec<f64>) -> Result<Self> {
        if shape.channels == 0 || shape.height == 0 || shape.width == 0 {
            return Err(Error::Dimension(format!("score map {shape} has an empty axis")));
        }
        if data.len() != shape.len() {
            return Err(Error::Dimension(format!(
                "score map {shape} needs {} values, got {}",
                shape.len(),
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("score map"));
        }
        Ok(ScoreMap { shape, data })
    }

    pub fn zeros(shape: Shape) -> Self {
        assert!(!shape.is_empty(), "score map shape must be non-empty");
        ScoreMap {
            shape,
            data: vec![0.0; shape.len()],
        }
    }

    pub fn from_fn(shape: Shape, mut f: impl FnMut(usize, usize, usize) -> f64) -> Result<Self> {
        let mut data = Vec::with_capacity(shape.len());
        for c in 0..shape.channels {
            for i in 0..shape.height {
                for j in 0..shape.width {
                    data.push(f(c, i, j));
                }
            }
        }
        Self::new(shape, data)
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn num_classes(&self) -> usize {
        self.shape.channels
    }

    pub fn height(&self) -> usize {
        self.shape.height
    }

    pub fn width(&self) -> usize {
        self.shape.width
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn get(&self, c: usize, i: usize, j: usize) -> f64 {
        self.data[self.shape.index(c, i, j)]
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.shape.plane();
        &self.data[c * n..(c + 1) * n]
    }

    /// Returns a copy with `f` applied to every entry.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(self.shape, self.data.iter().map(|&v| f(v)).collect())
    }

    /// `self - step * direction`, used by the gradient descent loop.
    pub(crate) fn descend(&mut self, step: f64, direction: &[f64]) {
        debug_assert_eq!(direction.len(), self.data.len());
        for (s, g) in self.data.iter_mut().zip(direction) {
            *s -= step * g;
        }
    }

    pub(crate) fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum PosteriorKind {
    /// Per-pixel softmax over classes.
    Multinomial,
    /// Per-pixel, per-class logistic.
    Binomial,
    /// ReLU followed by division by the channel maximum.
    MaxNorm,
}

impl PosteriorKind {
    pub const fn name(self) -> &'static str {
        match self {
            PosteriorKind::Multinomial => "multinomial",
            PosteriorKind::Binomial => "binomial",
            PosteriorKind::MaxNorm => "maxnorm",
        }
    }
}

/// C×H×W values in `[0, 1]`, tagged with the normalisation that made them.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorMap {
    shape: Shape,
    kind: PosteriorKind,
    data: Vec<f64>,
}

impl PosteriorMap {
    /// Wraps externally computed values, checking the invariants of `kind`.
    pub fn new(shape: Shape, kind: PosteriorKind, data: Vec<f64>) -> Result<Self> {
        if data.len() != shape.len() || shape.is_empty() {
            return Err(Error::Dimension(format!(
                "posterior {shape} needs {} values, got {}",
                shape.len(),
                data.len()
            )));
        }
        if data.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::OutOfRange("posterior entries must lie in [0, 1]".into()));
        }
        let n = shape.plane();
        match kind {
            PosteriorKind::Multinomial => {
                for p in 0..n {
                    let sum: f64 = (0..shape.channels).map(|c| data[c * n + p]).sum();
                    if (sum - 1.0).abs() > 1e-6 {
                        return Err(Error::OutOfRange(format!(
                            "multinomial pixel {p} sums to {sum}"
                        )));
                    }
                }
            }
            PosteriorKind::MaxNorm => {
                for c in 0..shape.channels {
                    let max = data[c * n..(c + 1) * n].iter().cloned().fold(0.0, f64::max);
                    if max > 0.0 && (max - 1.0).abs() > 1e-6 {
                        return Err(Error::OutOfRange(format!(
                            "max-normalised channel {c} peaks at {max}"
                        )));
                    }
                }
            }
            PosteriorKind::Binomial => {}
        }
        Ok(PosteriorMap { shape, kind, data })
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn kind(&self) -> PosteriorKind {
        self.kind
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, c: usize, i: usize, j: usize) -> f64 {
        self.data[self.shape.index(c, i, j)]
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.shape.plane();
        &self.data[c * n..(c + 1) * n]
    }
}

/// Image-level scores `S_c` and their logistic posteriors `B_c`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageLevelScores {
    pub values: Vec<f64>,
    pub posterior: Vec<f64>,
}

/// H×W×3 colour image with channel values in `[0, 1]`, stored pixel-interleaved.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl RgbImage {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || data.len() != height * width * 3 {
            return Err(Error::Dimension(format!(
                "rgb image {height}x{width} needs {} values, got {}",
                height * width * 3,
                data.len()
            )));
        }
        if data.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::OutOfRange("rgb values must lie in [0, 1]".into()));
        }
        Ok(RgbImage {
            height,
            width,
            data,
        })
    }

    /// Image filled with a single colour.
    pub fn filled(height: usize, width: usize, rgb: [f64; 3]) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width * 3);
        for _ in 0..height * width {
            data.extend_from_slice(&rgb);
        }
        Self::new(height, width, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Colour of the pixel with flat index `p = i * width + j`.
    #[inline]
    pub fn pixel(&self, p: usize) -> [f64; 3] {
        [self.data[3 * p], self.data[3 * p + 1], self.data[3 * p + 2]]
    }

    /// Area-averaging resample to `height × width`.
    ///
    /// Each output pixel is the overlap-weighted mean of the source pixels its
    /// footprint covers, so integer downscale factors reduce to block means.
    pub fn resample_area(&self, height: usize, width: usize) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Dimension("resample target has an empty axis".into()));
        }
        if height == self.height && width == self.width {
            return Ok(self.clone());
        }
        let rows = area_weights(self.height, height);
        let cols = area_weights(self.width, width);
        let mut data = Vec::with_capacity(height * width * 3);
        for row in &rows {
            for col in &cols {
                let mut acc = [0.0; 3];
                for &(si, wi) in row {
                    for &(sj, wj) in col {
                        let px = self.pixel(si * self.width + sj);
                        for k in 0..3 {
                            acc[k] += wi * wj * px[k];
                        }
                    }
                }
                data.extend(acc.iter().map(|v| v.clamp(0.0, 1.0)));
            }
        }
        Self::new(height, width, data)
    }
}

/// For each of `dst` output cells, the source indices it overlaps and the
/// normalised overlap weights.
fn area_weights(src: usize, dst: usize) -> Vec<Vec<(usize, f64)>> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|t| {
            let lo = t as f64 * scale;
            let hi = (t + 1) as f64 * scale;
            let first = libm::floor(lo) as usize;
            let last = (libm::ceil(hi) as usize).min(src);
            let mut out = Vec::new();
            for s in first..last {
                let overlap = (hi.min((s + 1) as f64) - lo.max(s as f64)).max(0.0);
                if overlap > 0.0 {
                    out.push((s, overlap / scale));
                }
            }
            out
        })
        .collect()
}

/// `M_c(i, j) = Σ_k weights[c][k] · features[k](i, j)`.
///
/// `weights` is row-major C×K.
pub fn cam_from_features(features: &FeatureMap, weights: &[f64], num_classes: usize) -> Result<ScoreMap> {
    let k = features.num_classes();
    if num_classes == 0 || weights.len() != num_classes * k {
        return Err(Error::Dimension(format!(
            "weights must be {num_classes}x{k}, got {} values",
            weights.len()
        )));
    }
    if weights.iter().any(|w| !w.is_finite()) {
        return Err(Error::NonFinite("weights"));
    }
    let plane = features.shape().plane();
    let shape = Shape::new(num_classes, features.height(), features.width());
    let mut data = vec![0.0; shape.len()];
    for c in 0..num_classes {
        let out = &mut data[c * plane..(c + 1) * plane];
        for (kk, &w) in weights[c * k..(c + 1) * k].iter().enumerate() {
            for (o, &f) in out.iter_mut().zip(features.channel(kk)) {
                *o += w * f;
            }
        }
    }
    ScoreMap::new(shape, data)
}

/// Global pooling by summation, `S_c = Σ_{i,j} s_c(i, j)`, plus `B_c = σ(S_c)`.
pub fn gap(scores: &ScoreMap) -> ImageLevelScores {
    let values: Vec<f64> = (0..scores.num_classes())
        .map(|c| scores.channel(c).iter().sum())
        .collect();
    let posterior = values.iter().map(|&v| logistic(v)).collect();
    ImageLevelScores { values, posterior }
}

/// Per-pixel softmax over channels, stabilised by subtracting the pixel max.
///
/// Meaningful only when background is one of the channels.
pub fn softmax_posterior(scores: &ScoreMap) -> PosteriorMap {
    let shape = scores.shape();
    let n = shape.plane();
    let src = scores.as_slice();
    let mut data = vec![0.0; shape.len()];
    for p in 0..n {
        let max = (0..shape.channels)
            .map(|c| src[c * n + p])
            .fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for c in 0..shape.channels {
            let e = libm::exp(src[c * n + p] - max);
            data[c * n + p] = e;
            sum += e;
        }
        for c in 0..shape.channels {
            data[c * n + p] /= sum;
        }
    }
    PosteriorMap {
        shape,
        kind: PosteriorKind::Multinomial,
        data,
    }
}

/// Elementwise logistic, `b_c(i, j) = σ(s_c(i, j))`.
pub fn sigmoid_posterior(scores: &ScoreMap) -> PosteriorMap {
    PosteriorMap {
        shape: scores.shape(),
        kind: PosteriorKind::Binomial,
        data: scores.as_slice().iter().map(|&s| logistic(s)).collect(),
    }
}

/// Per-channel `relu(s) / max relu(s)`.
///
/// A channel with no positive score maps to all zeros.
pub fn max_normalize(scores: &ScoreMap) -> PosteriorMap {
    let shape = scores.shape();
    let mut data = Vec::with_capacity(shape.len());
    for c in 0..shape.channels {
        let ch = scores.channel(c);
        let max = channel_relu_max(ch);
        if max > 0.0 {
            data.extend(ch.iter().map(|&s| s.max(0.0) / max));
        } else {
            data.extend(core::iter::repeat(0.0).take(ch.len()));
        }
    }
    PosteriorMap {
        shape,
        kind: PosteriorKind::MaxNorm,
        data,
    }
}

pub(crate) fn channel_relu_max(channel: &[f64]) -> f64 {
    channel.iter().fold(0.0, |m, &s| m.max(s))
}
