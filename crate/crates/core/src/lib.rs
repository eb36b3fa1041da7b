//! Class-activation-map losses, refinement and evaluation.
//!
//! The crate is `no_std` (it needs `alloc`) and contains only pure numerical
//! code: score/posterior tensors, the binomial importance sampling loss, the
//! feature similarity loss with analytic gradients, network-free CAM
//! refinement, pseudo-labels and the J / F segmentation metrics. File formats
//! and the command line live in the `camforge` crate.
//!
//! All computation is done in `f64`. Every function is pure and may be called
//! concurrently from several threads.
#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;

mod error;
mod math;

pub mod cam;
pub mod fsl;
pub mod metrics;
pub mod numdiff;
pub mod refine;
pub mod rng;
pub mod sampling;

pub use cam::{
    cam_from_features, gap, max_normalize, sigmoid_posterior, softmax_posterior, FeatureMap,
    ImageLevelScores, PosteriorKind, PosteriorMap, RgbImage, ScoreMap, Shape,
};
pub use error::{Error, Result};
pub use fsl::{
    dissimilarity, fsl_loss, gating, pair_components, spatial_weight, verify_gradient_bounds, BoundReport,
    FslParams, GatingInput, PairComponents, PairKernel,
};
pub use math::logistic;
pub use metrics::{
    contour_quality, default_tolerance, evaluate, foreground_mask, jf_score, pseudo_label,
    region_similarity, ClassScores, DatasetSummary, LabelMask, MetricReport,
};
pub use refine::{
    best_point, binarize, fit_gaussian_cam, refine_and_evaluate, refine_cam, sweep_mu_sigma, sweep_point, GaussianCamSpec, RefineConfig,
    Refinement, SweepPoint,
};
pub use rng::Philox4x32;
pub use sampling::{
    binomial_cls_loss, combined_cls_loss, draw_samples, gap_bce_loss, isl_loss, sampling_distribution, ClsProfile,
    LabelVector, LossResult, SampleSet, SamplingDistribution,
};
