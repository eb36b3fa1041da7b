//! Pseudo-labels and segmentation metrics.
//!
//! J is the per-class Jaccard index averaged over classes (background
//! included). F is the boundary F-score: boundary pixels of each foreground
//! class are matched against the other mask's boundary dilated by a disc of
//! radius θ. J&F is their mean.
//!
//! Boundaries use 4-connectivity; a foreground pixel on the image border is a
//! boundary pixel. The disc holds the offsets whose Euclidean length rounds to
//! at most θ, i.e. `dy² + dx² ≤ θ² + θ`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::cam::{PosteriorKind, PosteriorMap, ScoreMap};
use crate::error::{Error, Result};
use crate::sampling::LabelVector;

/// H×W class indices, 0 for background and `c + 1` for score channel `c`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct LabelMask {
    height: usize,
    width: usize,
    data: Vec<u32>,
}

impl LabelMask {
    pub fn new(height: usize, width: usize, data: Vec<u32>) -> Result<Self> {
        if height == 0 || width == 0 || data.len() != height * width {
            return Err(Error::Dimension(format!(
                "mask {height}x{width} needs {} labels, got {}",
                height * width,
                data.len()
            )));
        }
        Ok(LabelMask {
            height,
            width,
            data,
        })
    }

    pub fn background(height: usize, width: usize) -> Self {
        assert!(height > 0 && width > 0);
        LabelMask {
            height,
            width,
            data: vec![0; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> u32) -> Result<Self> {
        let mut data = Vec::with_capacity(height * width);
        for i in 0..height {
            for j in 0..width {
                data.push(f(i, j));
            }
        }
        Self::new(height, width, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn as_slice(&self) -> &[u32] {
        &self.data
    }

    pub fn get(&self, i: usize, j: usize) -> u32 {
        self.data[i * self.width + j]
    }

    pub fn max_label(&self) -> u32 {
        self.data.iter().copied().max().unwrap_or(0)
    }

    pub fn count(&self, label: u32) -> usize {
        self.data.iter().filter(|&&v| v == label).count()
    }

    /// Distinct foreground labels, ascending.
    pub fn foreground_labels(&self) -> Vec<u32> {
        let mut labels: Vec<u32> = self.data.iter().copied().filter(|&v| v > 0).collect();
        labels.sort_unstable();
        labels.dedup();
        labels
    }

    fn binary(&self, label: u32) -> Vec<bool> {
        self.data.iter().map(|&v| v == label).collect()
    }

    fn check_labels(&self, num_classes: usize) -> Result<()> {
        let max = self.max_label();
        if max as usize > num_classes {
            return Err(Error::OutOfRange(format!(
                "label {max} exceeds {num_classes} classes"
            )));
        }
        Ok(())
    }
}

/// Per-class scores indexed by label `0..=C` plus their mean.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ClassScores {
    /// `None` for classes that were not evaluated.
    pub per_class: Vec<Option<f64>>,
    pub mean: f64,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MetricReport {
    /// Indexed by label, background at 0.
    pub per_class_j: Vec<Option<f64>>,
    /// Indexed by label; entry 0 is always `None`.
    pub per_class_f: Vec<Option<f64>>,
    pub mean_j: f64,
    pub mean_f: f64,
    pub jf: f64,
}

fn check_pair(pred: &LabelMask, gt: &LabelMask, num_classes: usize) -> Result<()> {
    if pred.height != gt.height || pred.width != gt.width {
        return Err(Error::Dimension(format!(
            "prediction is {}x{} but ground truth is {}x{}",
            pred.height, pred.width, gt.height, gt.width
        )));
    }
    pred.check_labels(num_classes)?;
    gt.check_labels(num_classes)
}

/// Jaccard index per label `0..=num_classes`; labels absent from both masks
/// are left out of the mean.
pub fn region_similarity(pred: &LabelMask, gt: &LabelMask, num_classes: usize) -> Result<ClassScores> {
    check_pair(pred, gt, num_classes)?;
    let mut inter = vec![0usize; num_classes + 1];
    let mut union = vec![0usize; num_classes + 1];
    for (&p, &g) in pred.data.iter().zip(&gt.data) {
        if p == g {
            inter[p as usize] += 1;
            union[p as usize] += 1;
        } else {
            union[p as usize] += 1;
            union[g as usize] += 1;
        }
    }
    let per_class: Vec<Option<f64>> = inter
        .iter()
        .zip(&union)
        .map(|(&i, &u)| (u > 0).then(|| i as f64 / u as f64))
        .collect();
    Ok(ClassScores {
        mean: mean_of_present(&per_class, 1.0),
        per_class,
    })
}

fn mean_of_present(values: &[Option<f64>], empty: f64) -> f64 {
    let present: Vec<f64> = values.iter().flatten().copied().collect();
    if present.is_empty() {
        empty
    } else {
        present.iter().sum::<f64>() / present.len() as f64
    }
}

/// `⌈0.008 · diagonal⌉`, at least one pixel.
pub fn default_tolerance(height: usize, width: usize) -> usize {
    let diag = libm::sqrt((height * height + width * width) as f64);
    (libm::ceil(0.008 * diag) as usize).max(1)
}

/// Pixels of a binary mask that touch a different value through a 4-neighbour
/// or lie on the image border.
pub fn boundary(mask: &[bool], height: usize, width: usize) -> Vec<bool> {
    let mut out = vec![false; mask.len()];
    for i in 0..height {
        for j in 0..width {
            let p = i * width + j;
            if !mask[p] {
                continue;
            }
            out[p] = i == 0
                || j == 0
                || i + 1 == height
                || j + 1 == width
                || !mask[p - width]
                || !mask[p + width]
                || !mask[p - 1]
                || !mask[p + 1];
        }
    }
    out
}

/// Dilation by the rounded Euclidean disc of radius `radius`.
pub fn dilate_disc(mask: &[bool], height: usize, width: usize, radius: usize) -> Vec<bool> {
    let r = radius as isize;
    let limit = r * r + r;
    let offsets: Vec<(isize, isize)> = (-r..=r)
        .flat_map(|dy| (-r..=r).map(move |dx| (dy, dx)))
        .filter(|(dy, dx)| dy * dy + dx * dx <= limit)
        .collect();
    let (h, w) = (height as isize, width as isize);
    let mut out = vec![false; mask.len()];
    for i in 0..h {
        for j in 0..w {
            if !mask[(i * w + j) as usize] {
                continue;
            }
            for &(dy, dx) in &offsets {
                let (y, x) = (i + dy, j + dx);
                if y >= 0 && y < h && x >= 0 && x < w {
                    out[(y * w + x) as usize] = true;
                }
            }
        }
    }
    out
}

fn boundary_f(pred: &[bool], gt: &[bool], height: usize, width: usize, tolerance: usize) -> f64 {
    let bp = boundary(pred, height, width);
    let bg = boundary(gt, height, width);
    let np = bp.iter().filter(|&&b| b).count();
    let ng = bg.iter().filter(|&&b| b).count();
    if np == 0 || ng == 0 {
        return 0.0;
    }
    let bg_dil = dilate_disc(&bg, height, width, tolerance);
    let bp_dil = dilate_disc(&bp, height, width, tolerance);
    let matched_p = bp.iter().zip(&bg_dil).filter(|(a, b)| **a && **b).count();
    let matched_g = bg.iter().zip(&bp_dil).filter(|(a, b)| **a && **b).count();
    let precision = matched_p as f64 / np as f64;
    let recall = matched_g as f64 / ng as f64;
    if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    }
}

/// Boundary F-score per foreground label `1..=num_classes` with matching
/// tolerance `tolerance_px` (default [`default_tolerance`]).
///
/// Labels absent from both masks are `None`; the mean runs over the rest and
/// is 1 when neither mask has any foreground.
pub fn contour_quality(
    pred: &LabelMask,
    gt: &LabelMask,
    num_classes: usize,
    tolerance_px: Option<usize>,
) -> Result<ClassScores> {
    check_pair(pred, gt, num_classes)?;
    let (h, w) = (pred.height, pred.width);
    let tol = tolerance_px.unwrap_or_else(|| default_tolerance(h, w));
    let mut per_class = vec![None; num_classes + 1];
    for label in 1..=num_classes as u32 {
        let p = pred.binary(label);
        let g = gt.binary(label);
        if !p.iter().any(|&v| v) && !g.iter().any(|&v| v) {
            continue;
        }
        per_class[label as usize] = Some(boundary_f(&p, &g, h, w, tol));
    }
    Ok(ClassScores {
        mean: mean_of_present(&per_class, 1.0),
        per_class,
    })
}

/// Combines J and F reports for the same mask pair.
pub fn jf_score(j: &ClassScores, f: &ClassScores) -> MetricReport {
    MetricReport {
        per_class_j: j.per_class.clone(),
        per_class_f: f.per_class.clone(),
        mean_j: j.mean,
        mean_f: f.mean,
        jf: (j.mean + f.mean) / 2.0,
    }
}

/// J, F and J&F of one prediction.
pub fn evaluate(
    pred: &LabelMask,
    gt: &LabelMask,
    num_classes: usize,
    tolerance_px: Option<usize>,
) -> Result<MetricReport> {
    let j = region_similarity(pred, gt, num_classes)?;
    let f = contour_quality(pred, gt, num_classes, tolerance_px)?;
    Ok(jf_score(&j, &f))
}

/// Dataset aggregation: per-image means, then the mean over images.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DatasetSummary {
    pub images: usize,
    sum_j: f64,
    sum_f: f64,
}

impl DatasetSummary {
    pub fn push(&mut self, report: &MetricReport) {
        self.images += 1;
        self.sum_j += report.mean_j;
        self.sum_f += report.mean_f;
    }

    pub fn mean_j(&self) -> f64 {
        self.sum_j / self.images.max(1) as f64
    }

    pub fn mean_f(&self) -> f64 {
        self.sum_f / self.images.max(1) as f64
    }

    pub fn jf(&self) -> f64 {
        (self.mean_j() + self.mean_f()) / 2.0
    }
}

/// Labels each pixel with the winner among background (scored at
/// `bg_threshold`) and the present classes of a max-normalised map.
///
/// Ties go to background, then to the lowest class index. Channel `c` becomes
/// label `c + 1`.
pub fn pseudo_label(post: &PosteriorMap, present: &LabelVector, bg_threshold: f64) -> Result<LabelMask> {
    if post.kind() != PosteriorKind::MaxNorm {
        return Err(Error::UnsupportedKind {
            expected: "maxnorm",
            found: post.kind().name(),
        });
    }
    if !(bg_threshold > 0.0 && bg_threshold < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "background threshold {bg_threshold} outside (0, 1)"
        )));
    }
    let shape = post.shape();
    if present.len() != shape.channels {
        return Err(Error::Dimension(format!(
            "{} labels for {} classes",
            present.len(),
            shape.channels
        )));
    }
    let plane = shape.plane();
    let mut data = vec![0u32; plane];
    for (p, label) in data.iter_mut().enumerate() {
        let mut best = bg_threshold;
        for c in (0..shape.channels).filter(|&c| present.is_present(c)) {
            let v = post.channel(c)[p];
            if v > best {
                best = v;
                *label = c as u32 + 1;
            }
        }
    }
    LabelMask::new(shape.height, shape.width, data)
}

/// Labels each pixel with `1 + argmax_c s_c` when that score is positive, else
/// background. For a single channel this thresholds the scores at zero.
pub fn foreground_mask(scores: &ScoreMap) -> LabelMask {
    let shape = scores.shape();
    let plane = shape.plane();
    let data = (0..plane)
        .map(|p| {
            let mut best = 0.0;
            let mut label = 0;
            for c in 0..shape.channels {
                let v = scores.channel(c)[p];
                if v > best {
                    best = v;
                    label = c as u32 + 1;
                }
            }
            label
        })
        .collect();
    LabelMask {
        height: shape.height,
        width: shape.width,
        data,
    }
}
