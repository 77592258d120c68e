//! Mask overlap metrics, crop screening and dataset evaluation.
//!
//! A sample passes when its predicted mask yields a crop that is aligned,
//! complete and sharp (and, when ground truth is available, overlaps it
//! well enough). Cropping accuracy is the pass rate; classification accuracy
//! is measured on the crops that passed.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classify::ClassifierAdapter;
use crate::dataset::{DatasetManifest, Factory};
use crate::error::{Error, Result};
use crate::moments::{angle_adaptive_crop, compute_moments, orientation_angle, CropResult};
use crate::raster::{load_image, load_mask, BinaryMask, ImageBuffer};
use crate::segment::{SegmentRequest, SegmenterAdapter};

fn overlap(a: &BinaryMask, b: &BinaryMask) -> Result<(u64, u64, u64)> {
    b.check_same_dims(a.width(), a.height())?;
    let (mut inter, mut ca, mut cb) = (0u64, 0u64, 0u64);
    for (&x, &y) in a.bits().iter().zip(b.bits()) {
        inter += (x && y) as u64;
        ca += x as u64;
        cb += y as u64;
    }
    Ok((inter, ca, cb))
}

/// `|a ∩ b| / |a ∪ b|`; two empty masks score 1.
pub fn iou(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    let (inter, ca, cb) = overlap(a, b)?;
    let union = ca + cb - inter;
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

/// `2|a ∩ b| / (|a| + |b|)`; two empty masks score 1.
pub fn dice(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    let (inter, ca, cb) = overlap(a, b)?;
    Ok(if ca + cb == 0 {
        1.0
    } else {
        2.0 * inter as f64 / (ca + cb) as f64
    })
}

/// Variance of the 3x3 Laplacian of the luma. With `valid`, only pixels whose
/// whole neighborhood is valid contribute.
pub fn laplacian_variance(image: &ImageBuffer, valid: Option<&BinaryMask>) -> f64 {
    let (w, h) = (image.width() as usize, image.height() as usize);
    if w < 3 || h < 3 {
        return 0.0;
    }
    let gray = image.luma();
    let ok = |x: usize, y: usize| valid.map_or(true, |v| v.bits()[y * w + x]);
    let (mut n, mut sum, mut sum_sq) = (0u64, 0f64, 0f64);
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            if valid.is_some()
                && !(ok(x, y) && ok(x - 1, y) && ok(x + 1, y) && ok(x, y - 1) && ok(x, y + 1))
            {
                continue;
            }
            let c = gray[y * w + x] as f64;
            let lap = gray[y * w + x - 1] as f64
                + gray[y * w + x + 1] as f64
                + gray[(y - 1) * w + x] as f64
                + gray[(y + 1) * w + x] as f64
                - 4.0 * c;
            n += 1;
            sum += lap;
            sum_sq += lap * lap;
        }
    }
    if n == 0 {
        return 0.0;
    }
    let mean = sum / n as f64;
    (sum_sq / n as f64 - mean * mean).max(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScreeningThresholds {
    /// Maximum residual tilt of the cropped mask, degrees.
    pub align_deg: f64,
    /// Minimum fraction of mask pixels kept by the crop window.
    pub complete: f64,
    /// Minimum Laplacian variance of the crop.
    pub sharpness: f64,
}

impl Default for ScreeningThresholds {
    fn default() -> Self {
        Self {
            align_deg: 2.0,
            complete: 0.99,
            sharpness: DEFAULT_SHARPNESS,
        }
    }
}

/// Clarity floor calibrated on the synthetic fixture: crops blurred with
/// kernels up to 5x5 sit above it, a 7x7 blur pushes part of the
/// unzoomed codes below.
pub const DEFAULT_SHARPNESS: f64 = 40.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScreeningResult {
    pub pass: bool,
    pub alignment_ok: bool,
    pub completeness_ok: bool,
    pub clarity_ok: bool,
    pub residual_angle: f64,
    pub completeness: f64,
    pub sharpness: f64,
}

fn touches_border(mask: &BinaryMask) -> bool {
    let (w, h) = mask.dimensions();
    (0..w).any(|x| mask.get(x, 0) || mask.get(x, h - 1)) || (0..h).any(|y| mask.get(0, y) || mask.get(w - 1, y))
}

/// Alignment, completeness and clarity checks on a crop.
pub fn screen_crop(crop: &CropResult, thresholds: &ScreeningThresholds) -> ScreeningResult {
    let residual_angle = compute_moments(&crop.crop_mask)
        .and_then(|m| orientation_angle(&m))
        .unwrap_or(90.0);
    let alignment_ok = residual_angle.abs() <= thresholds.align_deg;
    let completeness = if crop.mask_pixels_before_crop == 0 {
        0.0
    } else {
        crop.crop_mask.count() as f64 / crop.mask_pixels_before_crop as f64
    };
    let completeness_ok = completeness >= thresholds.complete && !touches_border(&crop.crop_mask);
    let sharpness = laplacian_variance(&crop.crop, Some(&crop.valid));
    let clarity_ok = sharpness >= thresholds.sharpness;
    ScreeningResult {
        pass: alignment_ok && completeness_ok && clarity_ok,
        alignment_ok,
        completeness_ok,
        clarity_ok,
        residual_angle,
        completeness,
        sharpness,
    }
}

/// Which samples the classification accuracy is computed over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClsDenominator {
    /// Only crops that passed screening; the default.
    #[default]
    Passing,
    /// Every sample; a failed crop counts as misclassified.
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalOptions {
    pub margin: u32,
    pub screening: ScreeningThresholds,
    /// With ground truth available, a sample whose predicted mask has IoU
    /// below this value fails. `None` disables the check.
    pub iou_fail: Option<f64>,
    pub cls_denominator: ClsDenominator,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            margin: 8,
            screening: ScreeningThresholds::default(),
            iou_fail: Some(0.5),
            cls_denominator: ClsDenominator::Passing,
        }
    }
}

/// A sample ready for evaluation.
#[derive(Debug, Clone)]
pub struct EvalSample {
    pub id: String,
    pub factory: Factory,
    pub image: ImageBuffer,
    pub ground_truth: Option<BinaryMask>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "detail", rename_all = "snake_case")]
pub enum FailureReason {
    Segmentation(String),
    Crop(String),
    Screening,
    LowIou,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleOutcome {
    pub id: String,
    pub factory: Factory,
    pub passed: bool,
    pub failure: Option<FailureReason>,
    pub screening: Option<ScreeningResult>,
    pub iou: Option<f64>,
    pub predicted: Option<Factory>,
}

impl SampleOutcome {
    pub fn correct(&self) -> bool {
        self.passed && self.predicted == Some(self.factory)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FailCount {
    pub fail: u64,
    pub total: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub dataset: String,
    pub pool_version: u32,
    pub per_factory: BTreeMap<Factory, FailCount>,
    pub crop_accuracy: f64,
    pub cls_accuracy: f64,
    pub failures: Vec<String>,
}

impl EvaluationReport {
    /// Cropping accuracy in percent from fail/total counts.
    pub fn crop_accuracy_from(counts: &BTreeMap<Factory, FailCount>) -> f64 {
        let fail: u64 = counts.values().map(|c| c.fail).sum();
        let total: u64 = counts.values().map(|c| c.total).sum();
        if total == 0 {
            return 100.0;
        }
        100.0 * (1.0 - fail as f64 / total as f64)
    }

    pub fn total_failures(&self) -> u64 {
        self.per_factory.values().map(|c| c.fail).sum()
    }

    pub fn total(&self) -> u64 {
        self.per_factory.values().map(|c| c.total).sum()
    }

    /// `dataset  F1 fail/total  F2 fail/total  (crop, cls)` row.
    pub fn table_row(&self) -> String {
        let cell = |f: Factory| {
            self.per_factory
                .get(&f)
                .map(|c| format!("{}/{}", c.fail, c.total))
                .unwrap_or_else(|| "-".into())
        };
        format!(
            "{:<16} F1 {:>11}  F2 {:>11}  ({:.2}, {:.2})",
            self.dataset,
            cell(Factory::F1),
            cell(Factory::F2),
            self.crop_accuracy,
            self.cls_accuracy
        )
    }
}

/// Reduces per-sample outcomes into a report. The result does not depend on
/// the order of `outcomes`.
pub fn aggregate(dataset: &str, pool_version: u32, outcomes: &[SampleOutcome], cls: ClsDenominator) -> EvaluationReport {
    let mut per_factory: BTreeMap<Factory, FailCount> = BTreeMap::new();
    let mut failures = Vec::new();
    let (mut passed, mut correct) = (0u64, 0u64);
    for o in outcomes {
        let c = per_factory.entry(o.factory).or_default();
        c.total += 1;
        if o.passed {
            passed += 1;
            correct += o.correct() as u64;
        } else {
            c.fail += 1;
            failures.push(o.id.clone());
        }
    }
    failures.sort();
    let denom = match cls {
        ClsDenominator::Passing => passed,
        ClsDenominator::All => outcomes.len() as u64,
    };
    EvaluationReport {
        dataset: dataset.to_string(),
        pool_version,
        crop_accuracy: EvaluationReport::crop_accuracy_from(&per_factory),
        cls_accuracy: if denom == 0 { 0.0 } else { 100.0 * correct as f64 / denom as f64 },
        per_factory,
        failures,
    }
}

fn is_abort(e: &Error) -> bool {
    matches!(e, Error::Io(_))
}

/// Segment, crop, screen and classify one sample. Segmentation and crop
/// errors become failures; I/O errors abort.
pub fn evaluate_sample(
    segmenter: &dyn SegmenterAdapter,
    classifier: &dyn ClassifierAdapter,
    sample: &EvalSample,
    options: &EvalOptions,
) -> Result<SampleOutcome> {
    let mut outcome = SampleOutcome {
        id: sample.id.clone(),
        factory: sample.factory,
        passed: false,
        failure: None,
        screening: None,
        iou: None,
        predicted: None,
    };
    let request = SegmentRequest {
        id: &sample.id,
        image: &sample.image,
        prompt: sample.ground_truth.as_ref(),
    };
    let predicted = match segmenter.segment(&request) {
        Ok(m) => m,
        Err(e) if is_abort(&e) => return Err(e.in_sample(&sample.id)),
        Err(e) => {
            outcome.failure = Some(FailureReason::Segmentation(e.to_string()));
            return Ok(outcome);
        }
    };
    if let Some(gt) = &sample.ground_truth {
        outcome.iou = Some(iou(&predicted, gt).map_err(|e| e.in_sample(&sample.id))?);
    }
    let crop = match angle_adaptive_crop(&sample.image, &predicted, options.margin) {
        Ok(c) => c,
        Err(e) => {
            outcome.failure = Some(FailureReason::Crop(e.to_string()));
            return Ok(outcome);
        }
    };
    let screening = screen_crop(&crop, &options.screening);
    outcome.screening = Some(screening);
    if !screening.pass {
        outcome.failure = Some(FailureReason::Screening);
        return Ok(outcome);
    }
    if let (Some(limit), Some(v)) = (options.iou_fail, outcome.iou) {
        if v < limit {
            outcome.failure = Some(FailureReason::LowIou);
            return Ok(outcome);
        }
    }
    outcome.passed = true;
    outcome.predicted = Some(classifier.classify(&crop.crop).map_err(|e| e.in_sample(&sample.id))?);
    Ok(outcome)
}

/// Evaluates in-memory samples in parallel; outcomes keep input order.
pub fn evaluate_samples(
    segmenter: &dyn SegmenterAdapter,
    classifier: &dyn ClassifierAdapter,
    samples: &[EvalSample],
    options: &EvalOptions,
) -> Result<Vec<SampleOutcome>> {
    samples
        .par_iter()
        .map(|s| evaluate_sample(segmenter, classifier, s, options))
        .collect()
}

/// Loads the image and (if listed) ground-truth mask of every record.
pub fn load_samples(manifest: &DatasetManifest) -> Result<Vec<EvalSample>> {
    manifest
        .records
        .par_iter()
        .map(|r| {
            let load = || -> Result<EvalSample> {
                let image = load_image(&r.image)?;
                let ground_truth = r.mask.as_ref().map(load_mask).transpose()?;
                if let Some(gt) = &ground_truth {
                    gt.check_same_dims(image.width(), image.height())?;
                }
                Ok(EvalSample {
                    id: r.id.clone(),
                    factory: r.factory,
                    image,
                    ground_truth,
                })
            };
            load().map_err(|e| e.in_sample(&r.id))
        })
        .collect()
}

/// Evaluates every record of a manifest.
pub fn evaluate_dataset(
    segmenter: &dyn SegmenterAdapter,
    classifier: &dyn ClassifierAdapter,
    manifest: &DatasetManifest,
    pool_version: u32,
    options: &EvalOptions,
) -> Result<(EvaluationReport, Vec<SampleOutcome>)> {
    if manifest.is_empty() {
        return Err(Error::Manifest("cannot evaluate an empty manifest".into()));
    }
    let outcomes: Vec<SampleOutcome> = manifest
        .records
        .par_iter()
        .map(|r| {
            let image = load_image(&r.image).map_err(|e| e.in_sample(&r.id))?;
            let ground_truth = r
                .mask
                .as_ref()
                .map(load_mask)
                .transpose()
                .map_err(|e| e.in_sample(&r.id))?;
            let sample = EvalSample {
                id: r.id.clone(),
                factory: r.factory,
                image,
                ground_truth,
            };
            evaluate_sample(segmenter, classifier, &sample, options)
        })
        .collect::<Result<_>>()?;
    let report = aggregate(&manifest.name, pool_version, &outcomes, options.cls_denominator);
    Ok((report, outcomes))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn row(bits: &[bool]) -> BinaryMask {
        BinaryMask::new(bits.len() as u32, 1, bits.to_vec()).unwrap()
    }

    #[test]
    fn hand_counted_overlap() {
        let a = row(&[true, true, false]);
        let b = row(&[false, true, true]);
        assert!((iou(&a, &b).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert!((dice(&a, &b).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn identical_and_disjoint() {
        let a = row(&[true, false, true]);
        assert_eq!(iou(&a, &a).unwrap(), 1.0);
        assert_eq!(dice(&a, &a).unwrap(), 1.0);
        let b = row(&[false, true, false]);
        assert_eq!(iou(&a, &b).unwrap(), 0.0);
        assert_eq!(dice(&a, &b).unwrap(), 0.0);
        let e = row(&[false, false, false]);
        assert_eq!(iou(&e, &e).unwrap(), 1.0);
        assert_eq!(dice(&e, &e).unwrap(), 1.0);
    }

    #[test]
    fn mismatched_dims() {
        assert!(matches!(
            iou(&row(&[true]), &row(&[true, false])),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn published_fail_counts_give_reported_accuracy() {
        let counts = BTreeMap::from([
            (Factory::F1, FailCount { fail: 46, total: 1389 }),
            (Factory::F2, FailCount { fail: 15, total: 327 }),
        ]);
        let acc = EvaluationReport::crop_accuracy_from(&counts);
        assert!((acc - 96.45).abs() <= 0.01, "{acc}");
    }

    fn outcome(id: &str, factory: Factory, passed: bool, predicted: Option<Factory>) -> SampleOutcome {
        SampleOutcome {
            id: id.into(),
            factory,
            passed,
            failure: (!passed).then_some(FailureReason::Screening),
            screening: None,
            iou: None,
            predicted,
        }
    }

    #[test]
    fn aggregation_semantics() {
        let outs = vec![
            outcome("c", Factory::F1, true, Some(Factory::F1)),
            outcome("a", Factory::F2, false, None),
            outcome("b", Factory::F1, true, Some(Factory::F2)),
            outcome("d", Factory::F2, true, Some(Factory::F2)),
        ];
        let r = aggregate("x", 3, &outs, ClsDenominator::Passing);
        assert_eq!(r.per_factory[&Factory::F1], FailCount { fail: 0, total: 2 });
        assert_eq!(r.per_factory[&Factory::F2], FailCount { fail: 1, total: 2 });
        assert_eq!(r.crop_accuracy, 75.0);
        assert!((r.cls_accuracy - 200.0 / 3.0).abs() < 1e-12);
        assert_eq!(r.failures, vec!["a".to_string()]);
        let all = aggregate("x", 3, &outs, ClsDenominator::All);
        assert_eq!(all.cls_accuracy, 50.0);

        let mut rev = outs.clone();
        rev.reverse();
        assert_eq!(aggregate("x", 3, &rev, ClsDenominator::Passing), r);
    }

    #[test]
    fn all_pass_all_correct() {
        let outs = vec![
            outcome("a", Factory::F1, true, Some(Factory::F1)),
            outcome("b", Factory::F2, true, Some(Factory::F2)),
        ];
        let r = aggregate("x", 1, &outs, ClsDenominator::Passing);
        assert_eq!((r.crop_accuracy, r.cls_accuracy), (100.0, 100.0));
        assert!(r.failures.is_empty());
    }

    #[test]
    fn laplacian_of_flat_image_is_zero() {
        assert_eq!(laplacian_variance(&ImageBuffer::filled(8, 8, [90; 3]), None), 0.0);
        let checker = ImageBuffer::from_fn(8, 8, |x, y| if (x + y) % 2 == 0 { [0; 3] } else { [255; 3] });
        assert!(laplacian_variance(&checker, None) > 1000.0);
    }

    fn crop_fixture(tilt_deg: f64, touch: bool) -> CropResult {
        let (w, h) = (120u32, 50u32);
        let center = (59.5, 24.5);
        let mask = BinaryMask::from_fn(w, h, |x, y| {
            let (u, v) = crate::warp::rotate_point((x as f64, y as f64), -tilt_deg, center);
            (u - center.0).abs() <= 45.0 && (v - center.1).abs() <= 8.0
                || (touch && x == 0 && (20..30).contains(&y))
        });
        let crop = ImageBuffer::from_fn(w, h, |x, y| if (x / 2 + y / 2) % 2 == 0 { [20; 3] } else { [230; 3] });
        CropResult {
            valid: BinaryMask::from_fn(w, h, |_, _| true),
            mask_pixels_before_crop: mask.count(),
            crop,
            crop_mask: mask,
            alpha: tilt_deg,
            applied_angle: 0.0,
            margin: 0,
            bbox: (0, 0, w - 1, h - 1),
        }
    }

    #[test]
    fn screening_rules_fire() {
        let t = ScreeningThresholds::default();
        let ok = screen_crop(&crop_fixture(0.0, false), &t);
        assert!(ok.pass, "{ok:?}");
        let tilted = screen_crop(&crop_fixture(10.0, false), &t);
        assert!(!tilted.alignment_ok && !tilted.pass);
        assert!((tilted.residual_angle - 10.0).abs() < 1.0);
        let clipped = screen_crop(&crop_fixture(0.0, true), &t);
        assert!(!clipped.completeness_ok && !clipped.pass);
        let blurry = ScreeningThresholds {
            sharpness: 1e9,
            ..t
        };
        assert!(!screen_crop(&crop_fixture(0.0, false), &blurry).clarity_ok);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn iou_le_dice_and_symmetric(bits in prop::collection::vec(any::<(bool, bool)>(), 1..200)) {
            let a = row(&bits.iter().map(|p| p.0).collect::<Vec<_>>());
            let b = row(&bits.iter().map(|p| p.1).collect::<Vec<_>>());
            let (i, d) = (iou(&a, &b).unwrap(), dice(&a, &b).unwrap());
            prop_assert!(i <= d + 1e-15);
            prop_assert_eq!(i, iou(&b, &a).unwrap());
            prop_assert_eq!(d, dice(&b, &a).unwrap());
            prop_assert_eq!(i == 1.0, a == b);
            prop_assert_eq!(d == 1.0, a == b);
        }
    }
}
