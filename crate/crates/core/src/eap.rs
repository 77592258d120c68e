//! The evolving augmentation pool loop.
//!
//! Each iteration refits the segmenter on pool-augmented training pairs and
//! evaluates it. A small random share of the failures is then augmented with
//! every candidate method; a candidate that lifts both cropping and
//! classification accuracy on those variants by more than `epsilon`, without
//! degrading a frozen reference segmenter, qualifies. The best qualified
//! candidate joins the pool and the loop repeats.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::augment::{apply_pipeline, AugmentationMethod, AugmentationPool, MethodKind};
use crate::classify::ClassifierAdapter;
use crate::error::{Error, Result};
use crate::metrics::{aggregate, evaluate_samples, iou, EvalOptions, EvalSample, EvaluationReport};
use crate::raster::{BinaryMask, ImageBuffer};
use crate::seed::{derive_seed, rng_from_seed};
use crate::segment::{SegmentRequest, SegmenterAdapter};

/// A method proposed for the pool: a new kind, or a wider range of a kind
/// already present.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CandidateSpec {
    pub method: AugmentationMethod,
}

impl CandidateSpec {
    pub fn new(method: AugmentationMethod) -> Self {
        Self { method }
    }

    pub fn kind(&self) -> MethodKind {
        self.method.kind
    }

    /// Whether admitting this candidate would change `pool`.
    pub fn is_new_for(&self, pool: &AugmentationPool) -> bool {
        match pool.get(self.kind()) {
            None => true,
            Some(existing) => self.method.strictly_covers(existing),
        }
    }
}

/// Blur kernel in [1, 11], contrast in [0.1, 1.5] and zoom in [0.5, 2].
pub fn default_candidates() -> Vec<CandidateSpec> {
    let m = |kind, min, max| CandidateSpec::new(AugmentationMethod::new(kind, min, max).expect("valid candidate"));
    vec![
        m(MethodKind::GaussianBlur, 1.0, 11.0),
        m(MethodKind::Contrast, 0.1, 1.5),
        m(MethodKind::Zoom, 0.5, 2.0),
    ]
}

/// Cropping and classification accuracy, in percent.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DualScore {
    pub crop: f64,
    pub cls: f64,
}

impl DualScore {
    pub fn of(report: &EvaluationReport) -> Self {
        Self {
            crop: report.crop_accuracy,
            cls: report.cls_accuracy,
        }
    }

    pub fn minus(self, other: DualScore) -> DualScore {
        DualScore {
            crop: self.crop - other.crop,
            cls: self.cls - other.cls,
        }
    }
}

/// Both margins must exceed `epsilon`.
pub fn margins_qualify(margin: DualScore, epsilon: f64) -> bool {
    margin.crop > epsilon && margin.cls > epsilon
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateVerdict {
    pub candidate: CandidateSpec,
    /// Pool version the verdict was computed against.
    pub pool_version: u32,
    pub baseline: DualScore,
    pub with_candidate: DualScore,
    pub margin: DualScore,
    /// Share (percent) of plain and augmented samples on which the reference
    /// segmenter still finds the region.
    pub reference_baseline: f64,
    pub reference_with_candidate: f64,
    pub reference_ok: bool,
    pub qualified: bool,
}

impl CandidateVerdict {
    pub fn judge(
        candidate: CandidateSpec,
        pool_version: u32,
        baseline: DualScore,
        with_candidate: DualScore,
        reference: (f64, f64),
        epsilon: f64,
    ) -> Self {
        let margin = with_candidate.minus(baseline);
        let reference_ok = reference.1 >= reference.0;
        Self {
            candidate,
            pool_version,
            baseline,
            with_candidate,
            margin,
            reference_baseline: reference.0,
            reference_with_candidate: reference.1,
            reference_ok,
            qualified: reference_ok && margins_qualify(margin, epsilon),
        }
    }
}

/// `ceil(fraction * n)` ids drawn without replacement, returned sorted.
pub fn select_failures(failure_ids: &[String], fraction: f64, seed: u64) -> Result<Vec<String>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Config(format!("fraction must lie in (0, 1], got {fraction}")));
    }
    let mut ids = failure_ids.to_vec();
    ids.sort();
    ids.dedup();
    let take = ((fraction * ids.len() as f64).ceil() as usize).min(ids.len());
    ids.shuffle(&mut rng_from_seed(seed));
    ids.truncate(take);
    ids.sort();
    Ok(ids)
}

/// Everything pseudo re-adaptation needs besides the samples and candidates.
pub struct Assessors<'a> {
    pub trained: &'a dyn SegmenterAdapter,
    pub reference: &'a dyn SegmenterAdapter,
    pub classifier: &'a dyn ClassifierAdapter,
    pub options: &'a EvalOptions,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReadaptSettings {
    pub trials_per_candidate: usize,
    pub epsilon: f64,
    pub seed: u64,
    pub pool_version: u32,
}

fn variants(candidate: &CandidateSpec, samples: &[EvalSample], trials: usize, seed: u64) -> Result<Vec<EvalSample>> {
    let pool = AugmentationPool::new(0, vec![candidate.method])?;
    let jobs: Vec<(&EvalSample, usize)> = samples.iter().flat_map(|s| (0..trials).map(move |t| (s, t))).collect();
    jobs.par_iter()
        .map(|(s, t)| {
            let vseed = derive_seed(seed, &format!("{}/{}/{t}", candidate.kind(), s.id));
            let placeholder;
            let mask = match &s.ground_truth {
                Some(m) => m,
                None => {
                    placeholder = BinaryMask::empty(s.image.width(), s.image.height());
                    &placeholder
                }
            };
            let (image, mask, _) = apply_pipeline(&pool, vseed, &s.image, mask).map_err(|e| e.in_sample(&s.id))?;
            Ok(EvalSample {
                id: format!("{}#{}", s.id, t),
                factory: s.factory,
                image,
                ground_truth: s.ground_truth.as_ref().map(|_| mask),
            })
        })
        .collect()
}

/// Whether the reference still finds the region: it segments without error
/// and, with ground truth, reaches the failure IoU. Crop screening is left
/// to the trained adapter's scores.
fn reference_finds(reference: &dyn SegmenterAdapter, sample: &EvalSample, iou_fail: Option<f64>) -> Result<bool> {
    let request = SegmentRequest {
        id: &sample.id,
        image: &sample.image,
        prompt: sample.ground_truth.as_ref(),
    };
    let predicted = match reference.segment(&request) {
        Ok(m) => m,
        Err(e @ Error::Io(_)) => return Err(e.in_sample(&sample.id)),
        Err(_) => return Ok(false),
    };
    if predicted.is_empty() {
        return Ok(false);
    }
    Ok(match (&sample.ground_truth, iou_fail) {
        (Some(gt), Some(limit)) => iou(&predicted, gt).map_err(|e| e.in_sample(&sample.id))? >= limit,
        _ => true,
    })
}

fn reference_rate(reference: &dyn SegmenterAdapter, samples: &[EvalSample], iou_fail: Option<f64>) -> Result<f64> {
    let found: Vec<bool> = samples
        .par_iter()
        .map(|s| reference_finds(reference, s, iou_fail))
        .collect::<Result<_>>()?;
    Ok(100.0 * found.iter().filter(|&&p| p).count() as f64 / found.len().max(1) as f64)
}

/// Scores every candidate on augmented copies of the selected samples.
pub fn pseudo_readapt(
    selected: &[EvalSample],
    candidates: &[CandidateSpec],
    assessors: &Assessors<'_>,
    settings: &ReadaptSettings,
) -> Result<Vec<CandidateVerdict>> {
    if selected.is_empty() {
        return Err(Error::Config("pseudo re-adaptation needs at least one sample".into()));
    }
    if candidates.is_empty() {
        return Err(Error::Config("pseudo re-adaptation needs at least one candidate".into()));
    }
    if settings.trials_per_candidate == 0 {
        return Err(Error::Config("trials_per_candidate must be at least 1".into()));
    }
    let Assessors {
        trained,
        reference,
        classifier,
        options,
    } = *assessors;
    let mode = options.cls_denominator;
    let base_outcomes = evaluate_samples(trained, classifier, selected, options)?;
    let baseline = DualScore::of(&aggregate("selected", settings.pool_version, &base_outcomes, mode));
    let reference_baseline = reference_rate(reference, selected, options.iou_fail)?;

    candidates
        .iter()
        .map(|c| {
            let vars = variants(c, selected, settings.trials_per_candidate, settings.seed)?;
            let outcomes = evaluate_samples(trained, classifier, &vars, options)?;
            let with_candidate = DualScore::of(&aggregate("variants", settings.pool_version, &outcomes, mode));
            let reference_with = reference_rate(reference, &vars, options.iou_fail)?;
            Ok(CandidateVerdict::judge(
                *c,
                settings.pool_version,
                baseline,
                with_candidate,
                (reference_baseline, reference_with),
                settings.epsilon,
            ))
        })
        .collect()
}

/// Orders qualified verdicts best first: larger Δcrop, then larger Δcls,
/// then kind name.
fn ranked(verdicts: &[CandidateVerdict]) -> Vec<&CandidateVerdict> {
    let mut q: Vec<&CandidateVerdict> = verdicts.iter().filter(|v| v.qualified).collect();
    q.sort_by(|a, b| {
        b.margin
            .crop
            .total_cmp(&a.margin.crop)
            .then(b.margin.cls.total_cmp(&a.margin.cls))
            .then(a.candidate.kind().name().cmp(b.candidate.kind().name()))
    });
    q
}

/// Adds the best qualified candidate (or all of them with `admit_all`) and
/// bumps the version. Without a qualified candidate the pool is returned
/// unchanged.
pub fn expand_pool(pool: &AugmentationPool, verdicts: &[CandidateVerdict], admit_all: bool) -> Result<AugmentationPool> {
    if let Some(v) = verdicts.iter().find(|v| v.pool_version != pool.version) {
        return Err(Error::StaleVerdicts {
            verdict: v.pool_version,
            current: pool.version,
        });
    }
    let mut chosen = ranked(verdicts);
    if !admit_all {
        chosen.truncate(1);
    }
    let mut methods = pool.methods.clone();
    let mut changed = false;
    for v in chosen {
        let m = v.candidate.method;
        match methods.iter_mut().find(|e| e.kind == m.kind) {
            Some(existing) if m.strictly_covers(existing) => {
                *existing = m;
                changed = true;
            }
            Some(_) => {}
            None => {
                methods.push(m);
                changed = true;
            }
        }
    }
    if !changed {
        return Ok(pool.clone());
    }
    AugmentationPool::new(pool.version + 1, methods)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AmrfSettings {
    pub candidates: Vec<CandidateSpec>,
    pub fraction: f64,
    pub epsilon: f64,
    pub max_iterations: usize,
    pub trials_per_candidate: usize,
    pub admit_all: bool,
    pub seed: u64,
    pub eval: EvalOptions,
}

impl Default for AmrfSettings {
    fn default() -> Self {
        Self {
            candidates: default_candidates(),
            fraction: 0.05,
            epsilon: 0.5,
            max_iterations: 3,
            trials_per_candidate: 4,
            admit_all: false,
            seed: 0,
            eval: EvalOptions::default(),
        }
    }
}

impl AmrfSettings {
    pub fn validate(&self) -> Result<()> {
        let bad = |why: String| Err(Error::Config(why));
        if !(self.fraction > 0.0 && self.fraction <= 1.0) {
            return bad(format!("fraction must lie in (0, 1], got {}", self.fraction));
        }
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return bad(format!("epsilon must be a non-negative number, got {}", self.epsilon));
        }
        if self.trials_per_candidate == 0 {
            return bad("trials_per_candidate must be at least 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    NoFailures,
    NoCandidates,
    NoneQualified,
    MaxIterations,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub iteration: usize,
    pub pool: AugmentationPool,
    /// Configuration of the segmenter fitted under `pool`.
    pub segmenter: serde_json::Value,
    pub reports: Vec<EvaluationReport>,
    /// Failures picked for pseudo re-adaptation, as `dataset/id`.
    pub selected: Vec<String>,
    pub verdicts: Vec<CandidateVerdict>,
    pub stop: Option<StopReason>,
}

impl HistoryEntry {
    pub fn total_failures(&self) -> u64 {
        self.reports.iter().map(|r| r.total_failures()).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvolutionHistory {
    /// Caller-supplied description of the run, embedded verbatim.
    pub config: serde_json::Value,
    pub entries: Vec<HistoryEntry>,
    /// Set when the last entry scores below the first on either metric of
    /// any dataset.
    pub non_improving: bool,
}

impl EvolutionHistory {
    pub fn first(&self) -> &HistoryEntry {
        &self.entries[0]
    }

    pub fn last(&self) -> &HistoryEntry {
        self.entries.last().expect("history has at least one entry")
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    /// Fail/total per factory and accuracies, one block per pool version.
    pub fn summary(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            let kinds: Vec<&str> = e.pool.methods.iter().map(|m| m.kind.name()).collect();
            out.push_str(&format!("pool v{} [{}]\n", e.pool.version, kinds.join(", ")));
            for r in &e.reports {
                out.push_str("  ");
                out.push_str(&r.table_row());
                out.push('\n');
            }
        }
        if self.non_improving {
            out.push_str("NON-IMPROVING\n");
        }
        out
    }
}

/// Training pairs, named evaluation sets and the adapters of a run.
pub struct AmrfInputs<'a> {
    pub train: &'a [EvalSample],
    pub tests: &'a [(String, Vec<EvalSample>)],
    pub segmenter: &'a dyn SegmenterAdapter,
    pub reference: &'a dyn SegmenterAdapter,
    pub classifier: &'a dyn ClassifierAdapter,
    pub initial_pool: AugmentationPool,
}

/// One pass of every training sample through the pool's pipeline, seeded per
/// pool version and sample.
pub fn augmented_pairs(pool: &AugmentationPool, train: &[EvalSample], seed: u64) -> Result<Vec<(ImageBuffer, BinaryMask)>> {
    train
        .par_iter()
        .map(|s| {
            let mask = s
                .ground_truth
                .as_ref()
                .ok_or_else(|| Error::Config(format!("training sample {} has no mask", s.id)))?;
            let pseed = derive_seed(seed, &format!("fit/v{}/{}", pool.version, s.id));
            let (img, msk, _) = apply_pipeline(pool, pseed, &s.image, mask).map_err(|e| e.in_sample(&s.id))?;
            Ok((img, msk))
        })
        .collect()
}

fn regressed(first: &HistoryEntry, last: &HistoryEntry) -> bool {
    first
        .reports
        .iter()
        .zip(&last.reports)
        .any(|(a, b)| b.crop_accuracy < a.crop_accuracy || b.cls_accuracy < a.cls_accuracy)
}

pub fn run_amrf(inputs: &AmrfInputs<'_>, settings: &AmrfSettings, config: serde_json::Value) -> Result<EvolutionHistory> {
    run_amrf_with(inputs, settings, config, &mut |_| {})
}

/// Runs the loop, calling `on_entry` as each entry is completed.
pub fn run_amrf_with(
    inputs: &AmrfInputs<'_>,
    settings: &AmrfSettings,
    config: serde_json::Value,
    on_entry: &mut dyn FnMut(&HistoryEntry),
) -> Result<EvolutionHistory> {
    settings.validate()?;
    if inputs.train.is_empty() {
        return Err(Error::EmptyTrainingSet);
    }
    if inputs.tests.is_empty() {
        return Err(Error::Config("at least one evaluation set is required".into()));
    }
    let mut pool = inputs.initial_pool.clone();
    let mut entries: Vec<HistoryEntry> = Vec::new();
    for iteration in 0.. {
        let step = || -> Result<HistoryEntry> {
            let pairs = augmented_pairs(&pool, inputs.train, settings.seed)?;
            let trained = inputs.segmenter.fit(&pairs)?;
            let mut reports = Vec::new();
            let mut outcomes_by_set = Vec::new();
            for (name, samples) in inputs.tests {
                let outcomes = evaluate_samples(trained.as_ref(), inputs.classifier, samples, &settings.eval)?;
                reports.push(aggregate(name, pool.version, &outcomes, settings.eval.cls_denominator));
                outcomes_by_set.push(outcomes);
            }
            let mut entry = HistoryEntry {
                iteration,
                pool: pool.clone(),
                segmenter: trained.describe(),
                reports,
                selected: Vec::new(),
                verdicts: Vec::new(),
                stop: None,
            };
            let candidates: Vec<CandidateSpec> =
                settings.candidates.iter().filter(|c| c.is_new_for(&pool)).copied().collect();
            if entry.total_failures() == 0 {
                entry.stop = Some(StopReason::NoFailures);
                return Ok(entry);
            }
            if candidates.is_empty() {
                entry.stop = Some(StopReason::NoCandidates);
                return Ok(entry);
            }
            if iteration >= settings.max_iterations {
                entry.stop = Some(StopReason::MaxIterations);
                return Ok(entry);
            }
            let keys: Vec<String> = entry
                .reports
                .iter()
                .flat_map(|r| r.failures.iter().map(move |id| format!("{}/{id}", r.dataset)))
                .collect();
            entry.selected = select_failures(&keys, settings.fraction, derive_seed(settings.seed, &format!("select/{iteration}")))?;
            let selected: Vec<EvalSample> = inputs
                .tests
                .iter()
                .flat_map(|(name, samples)| samples.iter().map(move |s| (format!("{name}/{}", s.id), s)))
                .filter(|(k, _)| entry.selected.binary_search(k).is_ok())
                .map(|(_, s)| s.clone())
                .collect();
            let assessors = Assessors {
                trained: trained.as_ref(),
                reference: inputs.reference,
                classifier: inputs.classifier,
                options: &settings.eval,
            };
            let readapt = ReadaptSettings {
                trials_per_candidate: settings.trials_per_candidate,
                epsilon: settings.epsilon,
                seed: derive_seed(settings.seed, &format!("readapt/{iteration}")),
                pool_version: pool.version,
            };
            entry.verdicts = pseudo_readapt(&selected, &candidates, &assessors, &readapt)?;
            if !entry.verdicts.iter().any(|v| v.qualified) {
                entry.stop = Some(StopReason::NoneQualified);
            }
            Ok(entry)
        };
        let entry = step().map_err(|e| e.in_iteration(iteration))?;
        on_entry(&entry);
        let stop = entry.stop.is_some();
        let next = if stop {
            None
        } else {
            Some(expand_pool(&pool, &entry.verdicts, settings.admit_all).map_err(|e| e.in_iteration(iteration))?)
        };
        entries.push(entry);
        match next {
            Some(p) => pool = p,
            None => break,
        }
    }
    let non_improving = regressed(&entries[0], entries.last().expect("loop ran"));
    Ok(EvolutionHistory {
        config,
        entries,
        non_improving,
    })
}
