//! Segmenter contract and the two desk-scale segmenters.
//!
//! The classical baseline thresholds, closes and keeps the dominant
//! connected region. Its "training" is a grid search over its own
//! hyperparameters. The oracle returns a stored reference mask and stands in
//! for a frozen, prompt-driven assessor.

use std::path::{Path, PathBuf};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::iou;
use crate::moments::oriented_region;
use crate::raster::{load_mask, BinaryMask, ImageBuffer};
use crate::seed::{derive_seed, rng_from_seed};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdMode {
    Otsu,
    Fixed(u8),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Polarity {
    DarkOnLight,
    LightOnDark,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmenterConfig {
    pub threshold_mode: ThresholdMode,
    pub polarity: Polarity,
    pub close_kernel: u32,
    pub min_region_area: u32,
}

/// The fit result on unblurred synthetic codes at nominal scale.
impl Default for SegmenterConfig {
    fn default() -> Self {
        Self {
            threshold_mode: ThresholdMode::Fixed(128),
            polarity: Polarity::DarkOnLight,
            close_kernel: 7,
            min_region_area: 200,
        }
    }
}

impl SegmenterConfig {
    pub fn validate(&self) -> Result<()> {
        if self.close_kernel == 0 || self.close_kernel % 2 == 0 {
            return Err(Error::Config(format!(
                "close_kernel must be odd and >= 1, got {}",
                self.close_kernel
            )));
        }
        if self.min_region_area == 0 {
            return Err(Error::Config("min_region_area must be >= 1".into()));
        }
        Ok(())
    }
}

/// Threshold modes searched by [`baseline_fit`], in tie-break order.
pub const FIT_THRESHOLDS: [ThresholdMode; 3] =
    [ThresholdMode::Otsu, ThresholdMode::Fixed(80), ThresholdMode::Fixed(128)];
/// Closing kernel sizes searched by [`baseline_fit`].
pub const FIT_CLOSE_KERNELS: [u32; 5] = [3, 5, 7, 9, 11];
/// Minimum region areas searched by [`baseline_fit`].
pub const FIT_MIN_AREAS: [u32; 3] = [50, 200, 800];

/// One segmentation call. `prompt` carries a reference mask for adapters
/// that are driven by one (the oracle); trained adapters ignore it.
#[derive(Debug, Clone, Copy)]
pub struct SegmentRequest<'a> {
    pub id: &'a str,
    pub image: &'a ImageBuffer,
    pub prompt: Option<&'a BinaryMask>,
}

pub trait SegmenterAdapter: Send + Sync {
    fn name(&self) -> &str;

    /// Returns a mask with the image's dimensions.
    fn segment(&self, request: &SegmentRequest<'_>) -> Result<BinaryMask>;

    /// A refitted adapter. Adapters that do not learn return a copy of themselves.
    fn fit(&self, pairs: &[(ImageBuffer, BinaryMask)]) -> Result<Box<dyn SegmenterAdapter>>;

    /// Configuration snapshot for reports.
    fn describe(&self) -> serde_json::Value;
}

#[derive(Debug, Clone, PartialEq)]
pub struct BaselineSegmenter {
    pub config: SegmenterConfig,
}

impl BaselineSegmenter {
    pub fn new(config: SegmenterConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { config })
    }
}

impl SegmenterAdapter for BaselineSegmenter {
    fn name(&self) -> &str {
        "baseline"
    }

    fn segment(&self, request: &SegmentRequest<'_>) -> Result<BinaryMask> {
        baseline_segment(&self.config, request.image)
    }

    fn fit(&self, pairs: &[(ImageBuffer, BinaryMask)]) -> Result<Box<dyn SegmenterAdapter>> {
        Ok(Box::new(BaselineSegmenter::new(baseline_fit(&self.config, pairs)?)?))
    }

    fn describe(&self) -> serde_json::Value {
        serde_json::json!({ "adapter": "baseline", "config": self.config })
    }
}

/// Otsu threshold of an 8-bit histogram: the level `t` maximizing the
/// between-class variance of `{<= t}` and `{> t}`. Ties keep the lowest level.
pub fn otsu_threshold(gray: &[u8]) -> u8 {
    let mut hist = [0u64; 256];
    for &g in gray {
        hist[g as usize] += 1;
    }
    let total = gray.len() as f64;
    let sum_all: f64 = hist.iter().enumerate().map(|(i, &c)| i as f64 * c as f64).sum();
    let (mut w0, mut sum0) = (0.0, 0.0);
    let (mut best, mut best_t) = (-1.0, 0u8);
    for t in 0..256 {
        w0 += hist[t] as f64;
        sum0 += t as f64 * hist[t] as f64;
        let w1 = total - w0;
        if w0 == 0.0 || w1 == 0.0 {
            continue;
        }
        let m0 = sum0 / w0;
        let m1 = (sum_all - sum0) / w1;
        let between = w0 * w1 * (m0 - m1) * (m0 - m1);
        if between > best {
            best = between;
            best_t = t as u8;
        }
    }
    best_t
}

fn foreground(gray: &[u8], width: u32, height: u32, mode: ThresholdMode, polarity: Polarity) -> BinaryMask {
    let bits: Vec<bool> = match mode {
        ThresholdMode::Otsu => {
            let t = otsu_threshold(gray);
            match polarity {
                Polarity::DarkOnLight => gray.iter().map(|&g| g <= t).collect(),
                Polarity::LightOnDark => gray.iter().map(|&g| g > t).collect(),
            }
        }
        ThresholdMode::Fixed(v) => match polarity {
            Polarity::DarkOnLight => gray.iter().map(|&g| g < v).collect(),
            Polarity::LightOnDark => gray.iter().map(|&g| g > v).collect(),
        },
    };
    BinaryMask::new(width, height, bits).expect("same dimensions")
}

/// 1-D running "any"/"all" over a window of `2r+1`. Positions outside the
/// line read as `outside`.
fn line_filter(line: &[bool], r: usize, any: bool, outside: bool, out: &mut Vec<bool>) {
    let n = line.len() as isize;
    let r = r as isize;
    let window = 2 * r + 1;
    let at = |i: isize| if i < 0 || i >= n { outside } else { line[i as usize] } as usize;
    out.clear();
    // count of true values in [i - r, i + r], slid one step at a time
    let mut trues: usize = (-r..=r).map(at).sum();
    for i in 0..n {
        if i > 0 {
            trues = trues + at(i + r) - at(i - r - 1);
        }
        out.push(if any { trues > 0 } else { trues as isize == window });
    }
}

fn separable(mask: &BinaryMask, r: usize, any: bool, outside: bool) -> BinaryMask {
    if r == 0 {
        return mask.clone();
    }
    let (w, h) = (mask.width() as usize, mask.height() as usize);
    let mut rows = vec![false; w * h];
    let mut buf = Vec::new();
    for y in 0..h {
        line_filter(&mask.bits()[y * w..(y + 1) * w], r, any, outside, &mut buf);
        rows[y * w..(y + 1) * w].copy_from_slice(&buf);
    }
    // column pass: one running count per column, rows visited in order
    let (hi, ri) = (h as isize, r as isize);
    let window = 2 * r + 1;
    let row = |y: isize| (y >= 0 && y < hi).then(|| &rows[y as usize * w..(y as usize + 1) * w]);
    let mut counts = vec![0usize; w];
    for y in -ri..=ri {
        match row(y) {
            Some(line) => counts.iter_mut().zip(line).for_each(|(c, &b)| *c += b as usize),
            None if outside => counts.iter_mut().for_each(|c| *c += 1),
            None => {}
        }
    }
    let mut out = vec![false; w * h];
    for y in 0..hi {
        if y > 0 {
            for (yy, sign) in [(y + ri, true), (y - ri - 1, false)] {
                let add = |c: &mut usize, b: bool| {
                    if b {
                        if sign {
                            *c += 1
                        } else {
                            *c -= 1
                        }
                    }
                };
                match row(yy) {
                    Some(line) => counts.iter_mut().zip(line).for_each(|(c, &b)| add(c, b)),
                    None => counts.iter_mut().for_each(|c| add(c, outside)),
                }
            }
        }
        let dst = &mut out[y as usize * w..(y as usize + 1) * w];
        for (o, &c) in dst.iter_mut().zip(&counts) {
            *o = if any { c > 0 } else { c == window };
        }
    }
    BinaryMask::new(mask.width(), mask.height(), out).expect("same dimensions")
}

/// Dilation by a `(2r+1)` square.
pub fn dilate(mask: &BinaryMask, r: usize) -> BinaryMask {
    separable(mask, r, true, false)
}

/// Erosion by a `(2r+1)` square; the outside of the image counts as set so
/// regions touching the border are not eaten.
pub fn erode(mask: &BinaryMask, r: usize) -> BinaryMask {
    separable(mask, r, false, true)
}

/// Morphological closing with a `k x k` square (`k` odd).
pub fn close(mask: &BinaryMask, k: u32) -> BinaryMask {
    let r = (k / 2) as usize;
    erode(&dilate(mask, r), r)
}

/// 8-connected component labels (0 = background, 1.. in raster order of
/// first pixel) and the area of each label.
pub fn label_components(mask: &BinaryMask) -> (Vec<u32>, Vec<u64>) {
    let (w, h) = (mask.width() as i64, mask.height() as i64);
    let bits = mask.bits();
    let mut labels = vec![0u32; bits.len()];
    let mut areas = vec![0u64];
    let mut stack = Vec::new();
    for start in 0..bits.len() {
        if !bits[start] || labels[start] != 0 {
            continue;
        }
        let label = areas.len() as u32;
        areas.push(0);
        labels[start] = label;
        stack.push(start);
        while let Some(i) = stack.pop() {
            areas[label as usize] += 1;
            let (x, y) = ((i as i64) % w, (i as i64) / w);
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let (nx, ny) = (x + dx, y + dy);
                    if nx < 0 || ny < 0 || nx >= w || ny >= h {
                        continue;
                    }
                    let j = (ny * w + nx) as usize;
                    if bits[j] && labels[j] == 0 {
                        labels[j] = label;
                        stack.push(j);
                    }
                }
            }
        }
    }
    (labels, areas)
}

/// Labels of components that reach the outermost pixel ring.
fn border_labels(labels: &[u32], width: u32, height: u32, count: usize) -> Vec<bool> {
    let (w, h) = (width as usize, height as usize);
    let mut touches = vec![false; count];
    for x in 0..w {
        touches[labels[x] as usize] = true;
        touches[labels[(h - 1) * w + x] as usize] = true;
    }
    for y in 0..h {
        touches[labels[y * w] as usize] = true;
        touches[labels[y * w + w - 1] as usize] = true;
    }
    touches
}

/// Label of the dominant component: the largest of at least `min_area`
/// pixels, preferring components that stay clear of the canvas edge (fill
/// from geometric transforms, vignetting). `edge` flags edge-touching labels.
fn main_label(areas: &[u64], edge: &[bool], min_area: u32) -> Option<u32> {
    // rev + max_by_key keeps the lowest label among equal areas
    let largest = |interior: bool| {
        areas
            .iter()
            .enumerate()
            .skip(1)
            .filter(|&(l, &a)| a >= min_area as u64 && (!interior || !edge[l]))
            .rev()
            .max_by_key(|(_, &a)| a)
            .map(|(l, _)| l as u32)
    };
    largest(true).or_else(|| largest(false))
}

/// The main component plus every component within touching distance of it
/// after dilation by the closing kernel. An interior main component does not
/// pull in edge-touching ones.
fn grow_region(closed: &BinaryMask, labels: &[u32], areas: &[u64], edge: &[bool], main: u32, k: u32) -> BinaryMask {
    let interior = !edge[main as usize];
    let core = BinaryMask::new(
        closed.width(),
        closed.height(),
        labels.iter().map(|&l| l == main).collect(),
    )
    .expect("same dimensions");
    let reach = dilate(&core, (k / 2) as usize + 1);
    let mut keep = vec![false; areas.len()];
    keep[main as usize] = true;
    for (i, &l) in labels.iter().enumerate() {
        if l != 0 && reach.bits()[i] && !(interior && edge[l as usize]) {
            keep[l as usize] = true;
        }
    }
    BinaryMask::new(
        closed.width(),
        closed.height(),
        labels.iter().map(|&l| keep[l as usize] && l != 0).collect(),
    )
    .expect("same dimensions")
}

/// `None` when no component reaches `min_area`.
fn select_region(closed: &BinaryMask, labels: &[u32], areas: &[u64], k: u32, min_area: u32) -> Option<BinaryMask> {
    let edge = border_labels(labels, closed.width(), closed.height(), areas.len());
    let main = main_label(areas, &edge, min_area)?;
    Some(grow_region(closed, labels, areas, &edge, main, k))
}

/// The filled oriented bounding rectangle of a region: every pixel whose
/// center lies strictly inside the derotated bounding box of the region's
/// pixel squares.
pub fn oriented_box(mask: &BinaryMask) -> Result<BinaryMask> {
    let r = oriented_region(mask)?;
    let (s, c) = (-r.alpha).to_radians().sin_cos();
    let (u0, v0, u1, v1) = r.derotated_bbox;
    let (cx, cy) = r.centroid;
    // axis-aligned bounds of the rectangle on the image
    let (mut x0, mut y0, mut x1, mut y1) = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for (u, v) in [(u0, v0), (u1, v0), (u0, v1), (u1, v1)] {
        let x = cx + c * u + s * v;
        let y = cy - s * u + c * v;
        x0 = x0.min(x);
        y0 = y0.min(y);
        x1 = x1.max(x);
        y1 = y1.max(y);
    }
    let (w, h) = mask.dimensions();
    let mut out = BinaryMask::empty(w, h);
    let xs = (x0.floor().max(0.0) as u32)..=(x1.ceil().min((w - 1) as f64) as u32);
    let ys = (y0.floor().max(0.0) as u32)..=(y1.ceil().min((h - 1) as f64) as u32);
    for y in ys {
        for x in xs.clone() {
            let dx = x as f64 - cx;
            let dy = y as f64 - cy;
            let u = c * dx - s * dy;
            let v = s * dx + c * dy;
            if u > u0 && u < u1 && v > v0 && v < v1 {
                out.set(x, y, true);
            }
        }
    }
    Ok(out)
}

/// Grayscale, threshold, close, keep the dominant region and report its
/// oriented bounding rectangle.
pub fn baseline_segment(config: &SegmenterConfig, image: &ImageBuffer) -> Result<BinaryMask> {
    config.validate()?;
    let gray = image.luma_u8();
    let fg = foreground(&gray, image.width(), image.height(), config.threshold_mode, config.polarity);
    let closed = close(&fg, config.close_kernel);
    let (labels, areas) = label_components(&closed);
    let region = select_region(&closed, &labels, &areas, config.close_kernel, config.min_region_area)
        .ok_or(Error::NoRegionFound)?;
    oriented_box(&region)
}

/// Every grid cell of [`baseline_fit`] in lexicographic order.
pub fn fit_grid(polarity: Polarity) -> Vec<SegmenterConfig> {
    let mut grid = Vec::new();
    for &threshold_mode in &FIT_THRESHOLDS {
        for &close_kernel in &FIT_CLOSE_KERNELS {
            for &min_region_area in &FIT_MIN_AREAS {
                grid.push(SegmenterConfig {
                    threshold_mode,
                    polarity,
                    close_kernel,
                    min_region_area,
                });
            }
        }
    }
    grid
}

/// IoU of every grid cell on one pair; a failed segmentation scores 0.
fn grid_scores(image: &ImageBuffer, target: &BinaryMask, polarity: Polarity) -> Result<Vec<f64>> {
    target.check_same_dims(image.width(), image.height())?;
    let gray = image.luma_u8();
    let mut scores = Vec::with_capacity(FIT_THRESHOLDS.len() * FIT_CLOSE_KERNELS.len() * FIT_MIN_AREAS.len());
    for &mode in &FIT_THRESHOLDS {
        let fg = foreground(&gray, image.width(), image.height(), mode, polarity);
        for &k in &FIT_CLOSE_KERNELS {
            let closed = close(&fg, k);
            let (labels, areas) = label_components(&closed);
            let edge = border_labels(&labels, closed.width(), closed.height(), areas.len());
            // area floors often agree on the main component
            let mut seen: Vec<(u32, f64)> = Vec::new();
            for &min_area in &FIT_MIN_AREAS {
                let s = match main_label(&areas, &edge, min_area) {
                    Some(main) => match seen.iter().find(|(l, _)| *l == main) {
                        Some(&(_, s)) => s,
                        None => {
                            let region = grow_region(&closed, &labels, &areas, &edge, main, k);
                            let s = iou(&oriented_box(&region)?, target)?;
                            seen.push((main, s));
                            s
                        }
                    },
                    None => 0.0,
                };
                scores.push(s);
            }
        }
    }
    Ok(scores)
}

/// Grid search for the configuration with the best mean IoU on the pairs.
/// Polarity is taken from `config`; ties keep the earliest grid cell.
pub fn baseline_fit(config: &SegmenterConfig, pairs: &[(ImageBuffer, BinaryMask)]) -> Result<SegmenterConfig> {
    if pairs.is_empty() {
        return Err(Error::EmptyTrainingSet);
    }
    let grid = fit_grid(config.polarity);
    let per_pair: Vec<Vec<f64>> = pairs
        .par_iter()
        .map(|(img, mask)| grid_scores(img, mask, config.polarity))
        .collect::<Result<_>>()?;
    let mut best = (f64::NEG_INFINITY, 0usize);
    for (cell, _) in grid.iter().enumerate() {
        let mean = per_pair.iter().map(|s| s[cell]).sum::<f64>() / pairs.len() as f64;
        if mean > best.0 {
            best = (mean, cell);
        }
    }
    Ok(grid[best.1])
}

/// Mean IoU of a configuration over pairs (failures score 0).
pub fn mean_iou(config: &SegmenterConfig, pairs: &[(ImageBuffer, BinaryMask)]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::EmptyTrainingSet);
    }
    let scores: Vec<f64> = pairs
        .par_iter()
        .map(|(img, mask)| match baseline_segment(config, img) {
            Ok(m) => iou(&m, mask),
            Err(Error::NoRegionFound) => Ok(0.0),
            Err(e) => Err(e),
        })
        .collect::<Result<_>>()?;
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

/// Reads the stored mask `<mask_dir>/<sample_id>.png`.
pub fn oracle_segment(mask_dir: impl AsRef<Path>, sample_id: &str) -> Result<BinaryMask> {
    let path = mask_dir.as_ref().join(format!("{sample_id}.png"));
    if !path.exists() {
        return Err(Error::MaskNotFound(sample_id.to_string()));
    }
    load_mask(path)
}

/// Grows (positive) or shrinks (negative) a mask's boundary by a seeded
/// amount in `[-max_px, max_px]`.
pub fn perturb_mask(mask: &BinaryMask, max_px: u32, seed: u64, sample_id: &str) -> BinaryMask {
    if max_px == 0 {
        return mask.clone();
    }
    let mut rng = rng_from_seed(derive_seed(seed, sample_id));
    let d: i64 = rng.gen_range(-(max_px as i64)..=max_px as i64);
    match d {
        0 => mask.clone(),
        d if d > 0 => dilate(mask, d as usize),
        d => separable(mask, (-d) as usize, false, false),
    }
}

/// Reference segmenter that returns stored or prompted masks.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct OracleSegmenter {
    /// Directory of `<id>.png` masks, used when a request carries no prompt.
    pub mask_dir: Option<PathBuf>,
    /// Maximum boundary perturbation in pixels (0 = exact).
    pub perturb: u32,
    pub seed: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleConfig {
    pub mask_dir: Option<PathBuf>,
    pub perturb: u32,
    pub seed: u64,
}

impl From<OracleConfig> for OracleSegmenter {
    fn from(c: OracleConfig) -> Self {
        Self {
            mask_dir: c.mask_dir,
            perturb: c.perturb,
            seed: c.seed,
        }
    }
}

impl SegmenterAdapter for OracleSegmenter {
    fn name(&self) -> &str {
        "oracle"
    }

    fn segment(&self, request: &SegmentRequest<'_>) -> Result<BinaryMask> {
        let mask = match (request.prompt, &self.mask_dir) {
            (Some(m), _) => m.clone(),
            (None, Some(dir)) => oracle_segment(dir, request.id)?,
            (None, None) => return Err(Error::MaskNotFound(request.id.to_string())),
        };
        mask.check_same_dims(request.image.width(), request.image.height())?;
        Ok(perturb_mask(&mask, self.perturb, self.seed, request.id))
    }

    fn fit(&self, _pairs: &[(ImageBuffer, BinaryMask)]) -> Result<Box<dyn SegmenterAdapter>> {
        Ok(Box::new(self.clone()))
    }

    fn describe(&self) -> serde_json::Value {
        serde_json::json!({ "adapter": "oracle", "perturb": self.perturb, "seed": self.seed })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::save_mask;

    fn dark_rect_image(w: u32, h: u32) -> (ImageBuffer, BinaryMask) {
        let inside = |x: u32, y: u32| (20..60).contains(&x) && (30..40).contains(&y);
        let img = ImageBuffer::from_fn(w, h, |x, y| if inside(x, y) { [30; 3] } else { [200; 3] });
        (img, BinaryMask::from_fn(w, h, inside))
    }

    #[test]
    fn otsu_splits_bimodal() {
        let gray: Vec<u8> = (0..100).map(|i| if i < 30 { 40 } else { 210 }).collect();
        let t = otsu_threshold(&gray);
        assert!((40..210).contains(&t));
    }

    #[test]
    fn closing_bridges_small_gaps() {
        let m = BinaryMask::from_fn(20, 5, |x, y| y == 2 && (x < 5 || x >= 9));
        assert_eq!(label_components(&close(&m, 3)).1.len() - 1, 2);
        let closed = close(&m, 5);
        assert_eq!(label_components(&closed).1.len() - 1, 1);
        assert!(closed.get(7, 2));
    }

    #[test]
    fn erosion_treats_outside_as_set() {
        let m = BinaryMask::from_fn(6, 6, |_, _| true);
        assert_eq!(erode(&m, 2), m);
    }

    #[test]
    fn labels_use_eight_connectivity() {
        let m = BinaryMask::from_fn(4, 4, |x, y| x == y);
        let (labels, areas) = label_components(&m);
        assert_eq!(areas, vec![0, 4]);
        assert_eq!(labels[0], 1);
    }

    #[test]
    fn segments_a_dark_rectangle() {
        let (img, gt) = dark_rect_image(80, 64);
        let m = baseline_segment(&SegmenterConfig::default(), &img).unwrap();
        assert_eq!(m, gt);
    }

    #[test]
    fn uniform_image_has_no_region() {
        let img = ImageBuffer::filled(64, 64, [128; 3]);
        let err = baseline_segment(&SegmenterConfig::default(), &img).unwrap_err();
        assert!(matches!(err, Error::NoRegionFound));
    }

    #[test]
    fn nearby_fragment_is_merged() {
        // main bar plus a small stripe 4 px away: merged only when the
        // dilated footprint reaches it
        let inside = |x: u32, y: u32| ((10..50).contains(&x) || (54..56).contains(&x)) && (20..30).contains(&y);
        let img = ImageBuffer::from_fn(70, 50, |x, y| if inside(x, y) { [20; 3] } else { [220; 3] });
        let cfg = SegmenterConfig {
            close_kernel: 1,
            min_region_area: 50,
            ..SegmenterConfig::default()
        };
        assert_eq!(baseline_segment(&cfg, &img).unwrap().count(), 400);
        let cfg = SegmenterConfig {
            close_kernel: 3,
            ..cfg
        };
        // a 3x3 close does not bridge 4 px, the footprint rule (1 + 1 px) does not reach either
        assert_eq!(baseline_segment(&cfg, &img).unwrap().count(), 400);
        let cfg = SegmenterConfig {
            close_kernel: 7,
            ..cfg
        };
        assert!(baseline_segment(&cfg, &img).unwrap().count() >= 420);
    }

    #[test]
    fn edge_fill_is_passed_over() {
        // a black band along the left edge outweighs the interior bar
        let bar = |x: u32, y: u32| (40..70).contains(&x) && (20..30).contains(&y);
        let img = ImageBuffer::from_fn(80, 50, |x, y| {
            if x < 12 || bar(x, y) {
                [0; 3]
            } else {
                [210; 3]
            }
        });
        let m = baseline_segment(&SegmenterConfig::default(), &img).unwrap();
        assert_eq!(m, BinaryMask::from_fn(80, 50, bar));
        // with nothing inside, the edge component is still reported
        let img = ImageBuffer::from_fn(80, 50, |x, _| if x < 12 { [0; 3] } else { [210; 3] });
        assert_eq!(baseline_segment(&SegmenterConfig::default(), &img).unwrap().count(), 12 * 50);
    }

    #[test]
    fn config_validation() {
        let cfg = SegmenterConfig {
            close_kernel: 4,
            ..SegmenterConfig::default()
        };
        assert!(cfg.validate().is_err());
        let cfg = SegmenterConfig {
            min_region_area: 0,
            ..SegmenterConfig::default()
        };
        assert!(BaselineSegmenter::new(cfg).is_err());
    }

    #[test]
    fn config_json_shape() {
        let v = serde_json::to_value(SegmenterConfig {
            threshold_mode: ThresholdMode::Fixed(96),
            ..SegmenterConfig::default()
        })
        .unwrap();
        assert_eq!(v["threshold_mode"]["fixed"], 96);
        assert_eq!(v["polarity"], "dark_on_light");
        let otsu: SegmenterConfig =
            serde_json::from_str(r#"{"threshold_mode":"otsu","polarity":"light_on_dark","close_kernel":3,"min_region_area":9}"#)
                .unwrap();
        assert_eq!(otsu.threshold_mode, ThresholdMode::Otsu);
        assert_eq!(otsu.polarity, Polarity::LightOnDark);
    }

    #[test]
    fn fit_requires_pairs() {
        assert!(matches!(
            baseline_fit(&SegmenterConfig::default(), &[]),
            Err(Error::EmptyTrainingSet)
        ));
    }

    #[test]
    fn single_pair_fit_takes_first_best_cell() {
        let (img, gt) = dark_rect_image(80, 64);
        let fitted = baseline_fit(&SegmenterConfig::default(), &[(img.clone(), gt.clone())]).unwrap();
        // every cell segments the clean rectangle exactly, so the first cell wins
        assert_eq!(fitted, fit_grid(Polarity::DarkOnLight)[0]);
        let scores = grid_scores(&img, &gt, Polarity::DarkOnLight).unwrap();
        let best = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let first = scores.iter().position(|&s| s == best).unwrap();
        assert_eq!(fit_grid(Polarity::DarkOnLight)[first], fitted);
    }

    #[test]
    fn fit_is_in_grid_and_repeatable() {
        let (img, gt) = dark_rect_image(80, 64);
        let mut noisy = img.clone();
        for i in 0..40 {
            noisy.put_pixel(5 + i % 7, 5 + (i * 3) % 11, [25; 3]);
        }
        let pairs = vec![(img, gt.clone()), (noisy, gt)];
        let a = baseline_fit(&SegmenterConfig::default(), &pairs).unwrap();
        let b = baseline_fit(&SegmenterConfig::default(), &pairs).unwrap();
        assert_eq!(a, b);
        assert!(fit_grid(Polarity::DarkOnLight).contains(&a));
    }

    #[test]
    fn oracle_reads_stored_masks() {
        let dir = tempfile::tempdir().unwrap();
        let mask = BinaryMask::from_fn(10, 8, |x, y| x > y);
        save_mask(&mask, dir.path().join("abc.png")).unwrap();
        assert_eq!(oracle_segment(dir.path(), "abc").unwrap(), mask);
        assert!(matches!(oracle_segment(dir.path(), "nope"), Err(Error::MaskNotFound(_))));

        let adapter = OracleSegmenter {
            mask_dir: Some(dir.path().to_path_buf()),
            ..OracleSegmenter::default()
        };
        let img = ImageBuffer::filled(10, 8, [0; 3]);
        let req = SegmentRequest {
            id: "abc",
            image: &img,
            prompt: None,
        };
        assert_eq!(adapter.segment(&req).unwrap(), mask);
    }

    #[test]
    fn perturbation_is_seeded() {
        let mask = BinaryMask::from_fn(40, 40, |x, y| (10..30).contains(&x) && (12..28).contains(&y));
        let a = perturb_mask(&mask, 2, 9, "id");
        let b = perturb_mask(&mask, 2, 9, "id");
        assert_eq!(a, b);
        let changed = (0..50).any(|s| perturb_mask(&mask, 2, s, "id") != mask);
        assert!(changed);
        assert_eq!(perturb_mask(&mask, 0, 9, "id"), mask);
    }

    fn naive_window(mask: &BinaryMask, r: i64, any: bool, outside: bool) -> BinaryMask {
        let (w, h) = (mask.width() as i64, mask.height() as i64);
        BinaryMask::from_fn(mask.width(), mask.height(), |x, y| {
            let mut vals = (-r..=r).flat_map(|dy| (-r..=r).map(move |dx| (x as i64 + dx, y as i64 + dy))).map(|(sx, sy)| {
                if sx < 0 || sy < 0 || sx >= w || sy >= h {
                    outside
                } else {
                    mask.get(sx as u32, sy as u32)
                }
            });
            if any {
                vals.any(|v| v)
            } else {
                vals.all(|v| v)
            }
        })
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(48))]
        #[test]
        fn morphology_matches_brute_force(
            w in 1u32..24,
            h in 1u32..24,
            r in 0usize..4,
            bits in proptest::collection::vec(proptest::bool::weighted(0.3), 24 * 24),
        ) {
            let mask = BinaryMask::from_fn(w, h, |x, y| bits[(y * 24 + x) as usize]);
            proptest::prop_assert_eq!(dilate(&mask, r), naive_window(&mask, r as i64, true, false));
            proptest::prop_assert_eq!(erode(&mask, r), naive_window(&mask, r as i64, false, true));
        }
    }
}
