//! Seeded synthetic corpus: one coloured shape per image on a contrasting,
//! noisy background, with its ground-truth mask.
//!
//! Every random choice reads a Philox stream keyed by the seed and addressed by
//! the image index, so sample `k` is the same whatever the corpus size.

use camforge_core::rng::{Philox4x32, PhiloxStream};
use camforge_core::{LabelMask, RgbImage};

pub const DEFAULT_COUNT: usize = 20;
pub const DEFAULT_SIZE: usize = 32;

/// Generation parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusSpec {
    pub seed: u64,
    pub count: usize,
    pub height: usize,
    pub width: usize,
    /// Range of the mean absolute per-channel colour difference between object
    /// and background.
    pub contrast: (f64, f64),
    /// Standard deviation of the per-channel pixel noise.
    pub noise: f64,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        CorpusSpec {
            seed: 0,
            count: DEFAULT_COUNT,
            height: DEFAULT_SIZE,
            width: DEFAULT_SIZE,
            contrast: (0.10, 0.35),
            noise: 0.03,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShapeKind {
    Disk,
    Ellipse,
    Rectangle,
    Triangle,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub image: RgbImage,
    pub mask: LabelMask,
    pub shape: ShapeKind,
}

pub fn generate(spec: &CorpusSpec) -> Vec<Sample> {
    (0..spec.count).map(|k| generate_one(spec, k)).collect()
}

/// Sample `index` of the corpus described by `spec`.
pub fn generate_one(spec: &CorpusSpec, index: usize) -> Sample {
    let rng = Philox4x32::from_seed(spec.seed);
    let mut layout = rng.stream(index as u64, 0);
    let (h, w) = (spec.height as f64, spec.width as f64);
    let kind = match layout.below(4) {
        0 => ShapeKind::Disk,
        1 => ShapeKind::Ellipse,
        2 => ShapeKind::Rectangle,
        _ => ShapeKind::Triangle,
    };
    let small = h.min(w);
    let cy = h / 2.0 + uniform(&mut layout, -0.12, 0.12) * h;
    let cx = w / 2.0 + uniform(&mut layout, -0.12, 0.12) * w;
    let ry = uniform(&mut layout, 0.2, 0.32) * small;
    let rx = match kind {
        ShapeKind::Disk => ry,
        _ => uniform(&mut layout, 0.2, 0.32) * small,
    };
    let angle = uniform(&mut layout, 0.0, core::f64::consts::TAU);

    let background: [f64; 3] = core::array::from_fn(|_| uniform(&mut layout, 0.2, 0.8));
    let contrast = uniform(&mut layout, spec.contrast.0, spec.contrast.1);
    // split the contrast budget unevenly over the channels, with random signs
    let weights: [f64; 3] = core::array::from_fn(|_| uniform(&mut layout, 0.3, 1.0));
    let total: f64 = weights.iter().sum();
    let object: [f64; 3] = core::array::from_fn(|c| {
        let d = 3.0 * contrast * weights[c] / total;
        let up = layout.below(2) == 0;
        let v = if up { background[c] + d } else { background[c] - d };
        if (0.0..=1.0).contains(&v) {
            v
        } else {
            // flip direction rather than clip, so the contrast is kept
            if up {
                background[c] - d
            } else {
                background[c] + d
            }
        }
        .clamp(0.0, 1.0)
    });

    let inside = |i: usize, j: usize| -> bool {
        let y = i as f64 + 0.5 - cy;
        let x = j as f64 + 0.5 - cx;
        match kind {
            ShapeKind::Disk | ShapeKind::Ellipse => {
                let (s, c) = libm::sincos(angle);
                let u = c * x + s * y;
                let v = -s * x + c * y;
                (u / rx) * (u / rx) + (v / ry) * (v / ry) <= 1.0
            }
            ShapeKind::Rectangle => {
                let (s, c) = libm::sincos(angle * 0.25);
                let u = c * x + s * y;
                let v = -s * x + c * y;
                u.abs() <= rx * 0.85 && v.abs() <= ry * 0.85
            }
            ShapeKind::Triangle => {
                // isosceles, apex up, inscribed in the (rx, ry) box
                let t = (y + ry) / (2.0 * ry);
                (0.0..=1.0).contains(&t) && x.abs() <= rx * t
            }
        }
    };

    let mut noise = rng.stream(index as u64, 1);
    let mut pixels = Vec::with_capacity(spec.height * spec.width * 3);
    let mut labels = Vec::with_capacity(spec.height * spec.width);
    for i in 0..spec.height {
        for j in 0..spec.width {
            let fg = inside(i, j);
            labels.push(u32::from(fg));
            let base = if fg { object } else { background };
            for v in base {
                let x = (v + spec.noise * noise.next_gaussian()).clamp(0.0, 1.0);
                // quantise to 8 bits so the in-memory corpus equals the PPM files
                pixels.push(libm::round(x * 255.0) / 255.0);
            }
        }
    }
    let mut mask = LabelMask::new(spec.height, spec.width, labels).expect("mask shape");
    if mask.count(1) == 0 {
        // degenerate draw on tiny grids: mark the centre pixel
        let mut data = mask.as_slice().to_vec();
        let ci = (cy as usize).min(spec.height - 1);
        let cj = (cx as usize).min(spec.width - 1);
        data[ci * spec.width + cj] = 1;
        mask = LabelMask::new(spec.height, spec.width, data).expect("mask shape");
    }
    Sample {
        image: RgbImage::new(spec.height, spec.width, pixels).expect("pixels in range"),
        mask,
        shape: kind,
    }
}

/// Fixed 32 × 32 disk of radius 8 at the centre, with the corpus noise model.
pub fn circle_fixture() -> Sample {
    let n = DEFAULT_SIZE;
    let mask = LabelMask::from_fn(n, n, |i, j| {
        let dy = i as f64 + 0.5 - 16.0;
        let dx = j as f64 + 0.5 - 16.0;
        u32::from(dy * dy + dx * dx <= 64.0)
    })
    .expect("mask shape");
    let mut noise = Philox4x32::from_seed(0).stream(u64::MAX, 0);
    let mut pixels = Vec::with_capacity(n * n * 3);
    for &l in mask.as_slice() {
        let base = if l != 0 { [0.75, 0.3, 0.3] } else { [0.35, 0.45, 0.6] };
        for v in base {
            let x: f64 = (v + 0.03 * noise.next_gaussian()).clamp(0.0, 1.0);
            pixels.push(libm::round(x * 255.0) / 255.0);
        }
    }
    Sample {
        image: RgbImage::new(n, n, pixels).expect("pixels in range"),
        mask,
        shape: ShapeKind::Disk,
    }
}

fn uniform(stream: &mut PhiloxStream, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * stream.next_f64()
}
