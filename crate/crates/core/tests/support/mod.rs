//! Brute-force reference implementations written directly from the loss and
//! metric definitions, without sharing code with the library.
#![allow(dead_code)]

/// Small deterministic generator for test inputs.
pub struct SplitMix(pub u64);

impl SplitMix {
    pub fn next_u64(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    pub fn unit(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }

    pub fn range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.unit()
    }

    pub fn below(&mut self, n: usize) -> usize {
        (self.next_u64() % n as u64) as usize
    }

    pub fn vec(&mut self, n: usize, lo: f64, hi: f64) -> Vec<f64> {
        (0..n).map(|_| self.range(lo, hi)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Gate {
    Raw,
    Binomial,
    MaxNorm,
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `Σ_{i,j} −w·g·f / (HW)` over every ordered pixel pair, one channel at a time.
///
/// `frozen_max` replaces the per-channel maximum of the max-normalised gate, so
/// finite differences see the maximum as a constant.
#[allow(clippy::too_many_arguments)]
pub fn brute_fsl(
    scores: &[f64],
    channels: usize,
    height: usize,
    width: usize,
    rgb: &[f64],
    mu: f64,
    sigma: f64,
    gate: Gate,
    frozen_max: Option<&[f64]>,
    class_mask: Option<&[bool]>,
) -> f64 {
    let n = height * width;
    let mut u = vec![0.0; channels * n];
    for c in 0..channels {
        let ch = &scores[c * n..(c + 1) * n];
        let max = match frozen_max {
            Some(m) => m[c],
            None => ch.iter().fold(0.0f64, |a, &b| a.max(b)),
        };
        for k in 0..n {
            u[c * n + k] = match gate {
                Gate::Raw => ch[k],
                Gate::Binomial => sigmoid(ch[k]),
                Gate::MaxNorm => {
                    if max > 0.0 {
                        ch[k].max(0.0) / max
                    } else {
                        0.0
                    }
                }
            };
        }
    }
    let mut total = 0.0;
    for p in 0..n {
        for q in 0..n {
            let (yi, xi) = ((p / width) as f64, (p % width) as f64);
            let (yj, xj) = ((q / width) as f64, (q % width) as f64);
            let d2 = (yi - yj).powi(2) + (xi - xj).powi(2);
            let w = (-d2 / (2.0 * sigma * sigma)).exp() / (2.0 * std::f64::consts::PI * sigma * sigma);
            let mut delta = 0.0;
            for k in 0..3 {
                delta += (rgb[p * 3 + k] - rgb[q * 3 + k]).abs();
            }
            let delta = (delta / 3.0).clamp(1e-6, 1.0 - 1e-6);
            let f = (mu + (delta / (1.0 - delta)).ln()).tanh();
            let mut g = 0.0;
            for c in 0..channels {
                if class_mask.map_or(true, |m| m[c]) {
                    g += 0.5 * (u[c * n + p] - u[c * n + q]).powi(2);
                }
            }
            total -= w * g * f;
        }
    }
    total / n as f64
}

fn bce(y: f64, p: f64) -> f64 {
    let p = p.clamp(1e-7, 1.0 - 1e-7);
    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
}

/// GAP BCE: `(1/C) Σ_c BCE(y_c, σ(Σ s_c))`, evaluated through log-sum-exp so
/// large pooled scores stay exact.
pub fn brute_gap_bce(labels: &[bool], scores: &[f64], plane: usize) -> f64 {
    let c = labels.len();
    let mut total = 0.0;
    for k in 0..c {
        let x: f64 = scores[k * plane..(k + 1) * plane].iter().sum();
        let y = if labels[k] { 1.0 } else { 0.0 };
        // −y log σ(x) − (1−y) log(1−σ(x)) = log(1+e^x) − y x
        let softplus = if x > 0.0 { x + (-x).exp().ln_1p() } else { x.exp().ln_1p() };
        total += softplus - y * x;
    }
    total / c as f64
}

/// Per-pixel posterior of `scores`: channelwise softmax or elementwise sigmoid.
pub fn posterior(scores: &[f64], channels: usize, plane: usize, softmax: bool) -> Vec<f64> {
    if !softmax {
        return scores.iter().map(|&s| sigmoid(s)).collect();
    }
    let mut out = vec![0.0; scores.len()];
    for p in 0..plane {
        let z: f64 = (0..channels).map(|c| scores[c * plane + p].exp()).sum();
        for c in 0..channels {
            out[c * plane + p] = scores[c * plane + p].exp() / z;
        }
    }
    out
}

/// ISL at fixed sampled pixels `pixels[n * C + c]`.
pub fn brute_isl(
    labels: &[bool],
    scores: &[f64],
    plane: usize,
    softmax: bool,
    pixels: &[usize],
    valid: &[bool],
) -> f64 {
    let c = labels.len();
    let post = posterior(scores, c, plane, softmax);
    let n = pixels.len() / c;
    let mut total = 0.0;
    for s in 0..n {
        for k in 0..c {
            let y = if labels[k] { 1.0 } else { 0.0 };
            if valid[k] {
                total += bce(y, post[k * plane + pixels[s * c + k]]);
            } else {
                total += bce(y, 0.0);
            }
        }
    }
    total / (n * c) as f64
}

/// Boundary pixels (4-neighbourhood, border counts) of label `l`.
pub fn boundary_points(mask: &[u32], height: usize, width: usize, l: u32) -> Vec<(i64, i64)> {
    let mut out = Vec::new();
    for i in 0..height {
        for j in 0..width {
            if mask[i * width + j] != l {
                continue;
            }
            let edge = i == 0 || j == 0 || i == height - 1 || j == width - 1;
            let touches = [(0i64, 1i64), (0, -1), (1, 0), (-1, 0)].iter().any(|&(dy, dx)| {
                let y = i as i64 + dy;
                let x = j as i64 + dx;
                y >= 0
                    && x >= 0
                    && (y as usize) < height
                    && (x as usize) < width
                    && mask[y as usize * width + x as usize] != l
            });
            if edge || touches {
                out.push((i as i64, j as i64));
            }
        }
    }
    out
}

/// Boundary F by nearest-boundary-point distance: a point is matched when the
/// nearest boundary point of the other mask rounds to at most `tol` pixels.
pub fn brute_f(pred: &[u32], gt: &[u32], height: usize, width: usize, classes: u32, tol: usize) -> f64 {
    let matched = |a: &[(i64, i64)], b: &[(i64, i64)]| -> usize {
        a.iter()
            .filter(|p| {
                b.iter().any(|q| {
                    let d = (((p.0 - q.0).pow(2) + (p.1 - q.1).pow(2)) as f64).sqrt();
                    d.round() as usize <= tol
                })
            })
            .count()
    };
    let mut scores = Vec::new();
    for l in 1..=classes {
        let in_p = pred.contains(&l);
        let in_g = gt.contains(&l);
        if !in_p && !in_g {
            continue;
        }
        let bp = boundary_points(pred, height, width, l);
        let bg = boundary_points(gt, height, width, l);
        if bp.is_empty() || bg.is_empty() {
            scores.push(0.0);
            continue;
        }
        let precision = matched(&bp, &bg) as f64 / bp.len() as f64;
        let recall = matched(&bg, &bp) as f64 / bg.len() as f64;
        scores.push(if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        });
    }
    if scores.is_empty() {
        1.0
    } else {
        scores.iter().sum::<f64>() / scores.len() as f64
    }
}

/// Random mask of blobs: a few rectangles of random labels over background.
pub fn random_mask(rng: &mut SplitMix, height: usize, width: usize, classes: u32) -> Vec<u32> {
    let mut m = vec![0u32; height * width];
    let blobs = 1 + rng.below(3);
    for _ in 0..blobs {
        let l = 1 + rng.below(classes as usize) as u32;
        let (y0, x0) = (rng.below(height), rng.below(width));
        let (y1, x1) = (y0 + rng.below(height - y0) + 1, x0 + rng.below(width - x0) + 1);
        for i in y0..y1 {
            for j in x0..x1 {
                m[i * width + j] = l;
            }
        }
    }
    // salt noise so boundaries are not only straight lines
    for _ in 0..rng.below(height * width / 4 + 1) {
        let p = rng.below(height * width);
        m[p] = rng.below(classes as usize + 1) as u32;
    }
    m
}
