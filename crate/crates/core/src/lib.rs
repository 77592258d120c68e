//! Augmentation-driven re-adaptation of code-region segmenters.
//!
//! The crate covers the whole desk-scale pipeline:
//!
//! - [`augment`]: a versioned pool of seeded, composable image augmentations.
//! - [`moments`]: mask orientation from image moments and angle-adaptive crops.
//! - [`segment`]: the segmenter contract, a classical baseline and a reference oracle.
//! - [`classify`]: a dot-density factory classifier.
//! - [`metrics`]: IoU/Dice, crop screening and dataset evaluation.
//! - [`eap`]: the loop that grows the augmentation pool from failure cases.
//! - [`synth`]: a generator of labelled code-like images.

pub mod augment;
pub mod classify;
pub mod dataset;
pub mod eap;
pub mod error;
pub mod metrics;
pub mod moments;
pub mod raster;
pub mod seed;
pub mod segment;
pub mod synth;
pub mod warp;

pub use augment::{apply_pipeline, default_pool, AugmentationMethod, AugmentationParams, AugmentationPool, MethodKind};
pub use classify::{stub_classify, stub_fit, ClassifierAdapter, StubClassifier, StubClassifierConfig};
pub use dataset::{DatasetManifest, Factory, SampleRecord, Split};
pub use eap::{run_amrf, AmrfInputs, AmrfSettings, CandidateSpec, CandidateVerdict, EvolutionHistory};
pub use error::{Error, Result};
pub use metrics::{dice, evaluate_dataset, iou, EvalOptions, EvaluationReport, ScreeningThresholds};
pub use moments::{angle_adaptive_crop, compute_moments, orientation_angle, CropResult, MomentSet};
pub use raster::{load_image, load_mask, save_image, save_mask, BinaryMask, ImageBuffer};
pub use seed::derive_seed;
pub use segment::{BaselineSegmenter, OracleSegmenter, SegmentRequest, SegmenterAdapter, SegmenterConfig};
pub use synth::{generate_synthetic, SynthSpec};
