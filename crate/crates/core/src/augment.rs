//! Augmentation catalogue, parameter sampling and pipeline application.
//!
//! A pool holds at most one [`AugmentationMethod`] per [`MethodKind`]. Each
//! pipeline run draws one value per method uniformly from its range and
//! applies the methods in a fixed canonical order, geometric first:
//! Zoom, Rotation, GaussianBlur, Brightness, Contrast, Saturation, Hue.

use std::fmt;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{luma, BinaryMask, ImageBuffer};
use crate::seed::rng_from_seed;
use crate::warp::{self, InverseAffine};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MethodKind {
    Rotation,
    Zoom,
    Brightness,
    Saturation,
    Contrast,
    Hue,
    GaussianBlur,
}

impl MethodKind {
    pub const ALL: [MethodKind; 7] = [
        MethodKind::Rotation,
        MethodKind::Zoom,
        MethodKind::Brightness,
        MethodKind::Saturation,
        MethodKind::Contrast,
        MethodKind::Hue,
        MethodKind::GaussianBlur,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MethodKind::Rotation => "Rotation",
            MethodKind::Zoom => "Zoom",
            MethodKind::Brightness => "Brightness",
            MethodKind::Saturation => "Saturation",
            MethodKind::Contrast => "Contrast",
            MethodKind::Hue => "Hue",
            MethodKind::GaussianBlur => "GaussianBlur",
        }
    }

    /// Position in the canonical application order.
    pub fn canonical_rank(self) -> u8 {
        match self {
            MethodKind::Zoom => 0,
            MethodKind::Rotation => 1,
            MethodKind::GaussianBlur => 2,
            MethodKind::Brightness => 3,
            MethodKind::Contrast => 4,
            MethodKind::Saturation => 5,
            MethodKind::Hue => 6,
        }
    }

    pub fn is_geometric(self) -> bool {
        matches!(self, MethodKind::Zoom | MethodKind::Rotation)
    }

    /// The parameter value that leaves the input unchanged.
    pub fn identity_value(self) -> f64 {
        match self {
            MethodKind::Rotation | MethodKind::Hue => 0.0,
            MethodKind::Zoom
            | MethodKind::Brightness
            | MethodKind::Saturation
            | MethodKind::Contrast
            | MethodKind::GaussianBlur => 1.0,
        }
    }
}

impl fmt::Display for MethodKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMethod")]
pub struct AugmentationMethod {
    pub kind: MethodKind,
    pub min: f64,
    pub max: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMethod {
    kind: MethodKind,
    min: f64,
    max: f64,
}

impl TryFrom<RawMethod> for AugmentationMethod {
    type Error = Error;

    fn try_from(r: RawMethod) -> Result<Self> {
        AugmentationMethod::new(r.kind, r.min, r.max)
    }
}

impl AugmentationMethod {
    pub fn new(kind: MethodKind, min: f64, max: f64) -> Result<Self> {
        let bad = |why: &str| Err(Error::InvalidMethod(format!("{kind} [{min}, {max}]: {why}")));
        if !min.is_finite() || !max.is_finite() {
            return bad("bounds must be finite");
        }
        if min > max {
            return bad("min exceeds max");
        }
        match kind {
            MethodKind::Zoom | MethodKind::Brightness | MethodKind::Saturation | MethodKind::Contrast
                if min <= 0.0 =>
            {
                return bad("factor ranges must be positive");
            }
            MethodKind::Hue if min < -0.5 || max > 0.5 => {
                return bad("hue shift is a fraction of the hue circle in [-0.5, 0.5]");
            }
            MethodKind::GaussianBlur => {
                let odd = |v: f64| v.fract() == 0.0 && v >= 1.0 && (v as i64) % 2 == 1;
                if !odd(min) || !odd(max) {
                    return bad("blur bounds must be odd kernel sizes >= 1");
                }
            }
            _ => {}
        }
        Ok(Self { kind, min, max })
    }

    pub fn contains(&self, value: f64) -> bool {
        value >= self.min && value <= self.max
    }

    /// True when `self` covers `other`'s range and is strictly larger.
    pub fn strictly_covers(&self, other: &AugmentationMethod) -> bool {
        self.kind == other.kind
            && self.min <= other.min
            && self.max >= other.max
            && (self.min < other.min || self.max > other.max)
    }

    /// Odd kernel sizes in a blur range.
    fn odd_values(&self) -> Vec<u32> {
        (self.min as u32..=self.max as u32).filter(|k| k % 2 == 1).collect()
    }

    fn sample(&self, rng: &mut impl Rng) -> f64 {
        match self.kind {
            MethodKind::GaussianBlur => {
                let choices = self.odd_values();
                choices[rng.gen_range(0..choices.len())] as f64
            }
            _ if self.min == self.max => self.min,
            _ => rng.gen_range(self.min..=self.max),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawPool")]
pub struct AugmentationPool {
    pub version: u32,
    pub methods: Vec<AugmentationMethod>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPool {
    version: u32,
    methods: Vec<AugmentationMethod>,
}

impl TryFrom<RawPool> for AugmentationPool {
    type Error = Error;

    fn try_from(r: RawPool) -> Result<Self> {
        AugmentationPool::new(r.version, r.methods)
    }
}

impl AugmentationPool {
    pub fn new(version: u32, methods: Vec<AugmentationMethod>) -> Result<Self> {
        for (i, m) in methods.iter().enumerate() {
            if methods[..i].iter().any(|o| o.kind == m.kind) {
                return Err(Error::InvalidPool(format!("duplicate method kind {}", m.kind)));
            }
        }
        Ok(Self { version, methods })
    }

    pub fn empty() -> Self {
        Self {
            version: 1,
            methods: Vec::new(),
        }
    }

    pub fn get(&self, kind: MethodKind) -> Option<&AugmentationMethod> {
        self.methods.iter().find(|m| m.kind == kind)
    }

    pub fn contains_kind(&self, kind: MethodKind) -> bool {
        self.get(kind).is_some()
    }

    pub fn kinds(&self) -> Vec<MethodKind> {
        self.methods.iter().map(|m| m.kind).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(Error::FileNotFound(path.to_path_buf()));
        }
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// The starting pool: rotation in [-180, 180] degrees, brightness,
/// saturation and contrast factors in [0.5, 1.5], hue shift in [-0.5, 0.5].
pub fn default_pool() -> AugmentationPool {
    let m = |kind, min, max| AugmentationMethod::new(kind, min, max).expect("valid default range");
    AugmentationPool {
        version: 1,
        methods: vec![
            m(MethodKind::Rotation, -180.0, 180.0),
            m(MethodKind::Brightness, 0.5, 1.5),
            m(MethodKind::Saturation, 0.5, 1.5),
            m(MethodKind::Contrast, 0.5, 1.5),
            m(MethodKind::Hue, -0.5, 0.5),
        ],
    }
}

/// One sampled value per pool method, in pool order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentationParams {
    pub values: Vec<ParamValue>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamValue {
    pub kind: MethodKind,
    pub value: f64,
}

impl AugmentationParams {
    pub fn get(&self, kind: MethodKind) -> Option<f64> {
        self.values.iter().find(|p| p.kind == kind).map(|p| p.value)
    }
}

pub fn sample_params(pool: &AugmentationPool, seed: u64) -> AugmentationParams {
    let mut rng = rng_from_seed(seed);
    AugmentationParams {
        values: pool
            .methods
            .iter()
            .map(|m| ParamValue {
                kind: m.kind,
                value: m.sample(&mut rng),
            })
            .collect(),
    }
}

/// Applies one method. Geometric kinds move image and mask together;
/// photometric kinds leave the mask untouched. Identity values return the
/// inputs unchanged.
pub fn apply(
    method: &AugmentationMethod,
    value: f64,
    image: &ImageBuffer,
    mask: Option<&BinaryMask>,
) -> Result<(ImageBuffer, Option<BinaryMask>)> {
    if !method.contains(value) || !value.is_finite() {
        return Err(Error::ValueOutOfRange {
            kind: method.kind.name().to_string(),
            value,
            min: method.min,
            max: method.max,
        });
    }
    if method.kind == MethodKind::GaussianBlur && (value.fract() != 0.0 || (value as i64) % 2 == 0) {
        return Err(Error::ValueOutOfRange {
            kind: method.kind.name().to_string(),
            value,
            min: method.min,
            max: method.max,
        });
    }
    if let Some(m) = mask {
        m.check_same_dims(image.width(), image.height())?;
    }
    apply_unchecked(method.kind, value, image, mask)
}

fn apply_unchecked(
    kind: MethodKind,
    value: f64,
    image: &ImageBuffer,
    mask: Option<&BinaryMask>,
) -> Result<(ImageBuffer, Option<BinaryMask>)> {
    if value == kind.identity_value() {
        return Ok((image.clone(), mask.cloned()));
    }
    let (w, h) = image.dimensions();
    let center = ((w - 1) as f64 / 2.0, (h - 1) as f64 / 2.0);
    let geometric = |map: InverseAffine| {
        (
            warp::warp_image(image, w, h, &map),
            mask.map(|m| warp::warp_mask(m, w, h, &map)),
        )
    };
    Ok(match kind {
        MethodKind::Zoom => geometric(InverseAffine::scale(value, center)),
        MethodKind::Rotation => geometric(InverseAffine::rotation(value, center, (0.0, 0.0))),
        MethodKind::GaussianBlur => (gaussian_blur(image, value as usize), mask.cloned()),
        MethodKind::Brightness => (brightness(image, value), mask.cloned()),
        MethodKind::Contrast => (contrast(image, value), mask.cloned()),
        MethodKind::Saturation => (saturation(image, value), mask.cloned()),
        MethodKind::Hue => (hue_shift(image, value), mask.cloned()),
    })
}

/// Applies already-sampled parameters in canonical order.
pub fn apply_params(
    pool: &AugmentationPool,
    params: &AugmentationParams,
    image: &ImageBuffer,
    mask: &BinaryMask,
) -> Result<(ImageBuffer, BinaryMask)> {
    mask.check_same_dims(image.width(), image.height())?;
    let mut steps: Vec<(&AugmentationMethod, f64)> = params
        .values
        .iter()
        .map(|p| {
            pool.get(p.kind)
                .map(|m| (m, p.value))
                .ok_or_else(|| Error::InvalidPool(format!("no {} method in pool", p.kind)))
        })
        .collect::<Result<_>>()?;
    steps.sort_by_key(|(m, _)| m.kind.canonical_rank());
    let mut img = image.clone();
    let mut msk = mask.clone();
    for (method, value) in steps {
        let (i, m) = apply(method, value, &img, Some(&msk))?;
        img = i;
        msk = m.expect("mask passed through");
    }
    Ok((img, msk))
}

/// Samples parameters from the pool and applies them to an image/mask pair.
pub fn apply_pipeline(
    pool: &AugmentationPool,
    seed: u64,
    image: &ImageBuffer,
    mask: &BinaryMask,
) -> Result<(ImageBuffer, BinaryMask, AugmentationParams)> {
    let params = sample_params(pool, seed);
    let (img, msk) = apply_params(pool, &params, image, mask)?;
    Ok((img, msk, params))
}

#[inline]
fn to_u8(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

fn map_pixels(image: &ImageBuffer, mut f: impl FnMut([u8; 3]) -> [u8; 3]) -> ImageBuffer {
    let mut out = image.clone();
    for px in out.data_mut().chunks_exact_mut(3) {
        let r = f([px[0], px[1], px[2]]);
        px.copy_from_slice(&r);
    }
    out
}

fn brightness(image: &ImageBuffer, factor: f64) -> ImageBuffer {
    map_pixels(image, |p| p.map(|c| to_u8(c as f64 * factor)))
}

fn contrast(image: &ImageBuffer, factor: f64) -> ImageBuffer {
    let n = image.width() as f64 * image.height() as f64;
    let mean = image
        .data()
        .chunks_exact(3)
        .map(|p| luma(p[0], p[1], p[2]) as f64)
        .sum::<f64>()
        / n;
    map_pixels(image, |p| p.map(|c| to_u8((c as f64 - mean) * factor + mean)))
}

fn saturation(image: &ImageBuffer, factor: f64) -> ImageBuffer {
    map_pixels(image, |p| {
        let g = luma(p[0], p[1], p[2]) as f64;
        p.map(|c| to_u8(g + factor * (c as f64 - g)))
    })
}

fn hue_shift(image: &ImageBuffer, shift: f64) -> ImageBuffer {
    map_pixels(image, |p| {
        let (h, s, v) = rgb_to_hsv(p);
        hsv_to_rgb((h + shift * 360.0).rem_euclid(360.0), s, v)
    })
}

fn rgb_to_hsv(p: [u8; 3]) -> (f64, f64, f64) {
    let [r, g, b] = p.map(|c| c as f64 / 255.0);
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let d = max - min;
    let h = if d == 0.0 {
        0.0
    } else if max == r {
        60.0 * ((g - b) / d).rem_euclid(6.0)
    } else if max == g {
        60.0 * ((b - r) / d + 2.0)
    } else {
        60.0 * ((r - g) / d + 4.0)
    };
    let s = if max == 0.0 { 0.0 } else { d / max };
    (h, s, max)
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [u8; 3] {
    let c = v * s;
    let hp = h / 60.0;
    let x = c * (1.0 - (hp.rem_euclid(2.0) - 1.0).abs());
    let (r, g, b) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r, g, b].map(|ch| to_u8((ch + m) * 255.0))
}

/// Gaussian standard deviation used for a kernel of `size` taps.
pub fn blur_sigma(size: usize) -> f64 {
    0.3 * ((size as f64 - 1.0) / 2.0 - 1.0) + 0.8
}

/// Normalized 1-D Gaussian kernel of odd `size`.
pub fn gaussian_kernel(size: usize) -> Vec<f64> {
    assert!(size % 2 == 1, "kernel size must be odd");
    if size == 1 {
        return vec![1.0];
    }
    let sigma = blur_sigma(size);
    let half = (size / 2) as i64;
    let raw: Vec<f64> = (-half..=half)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / sum).collect()
}

/// Mirror index without repeating the edge sample (`dcb|abcd|cba`).
#[inline]
fn reflect101(i: i64, len: i64) -> usize {
    if len == 1 {
        return 0;
    }
    let period = 2 * (len - 1);
    let mut j = i.rem_euclid(period);
    if j >= len {
        j = period - j;
    }
    j as usize
}

/// Separable Gaussian blur with mirrored borders.
pub fn gaussian_blur(image: &ImageBuffer, size: usize) -> ImageBuffer {
    if size <= 1 {
        return image.clone();
    }
    let kernel = gaussian_kernel(size);
    let half = (size / 2) as i64;
    let (w, h) = (image.width() as usize, image.height() as usize);
    let src = image.data();
    let mut tmp = vec![0f64; w * h * 3];
    for y in 0..h {
        for x in 0..w {
            let mut acc = [0f64; 3];
            for (k, wt) in kernel.iter().enumerate() {
                let sx = reflect101(x as i64 + k as i64 - half, w as i64);
                let i = (y * w + sx) * 3;
                for c in 0..3 {
                    acc[c] += wt * src[i + c] as f64;
                }
            }
            tmp[(y * w + x) * 3..(y * w + x) * 3 + 3].copy_from_slice(&acc);
        }
    }
    let mut out = vec![0u8; w * h * 3];
    for y in 0..h {
        for x in 0..w {
            let mut acc = [0f64; 3];
            for (k, wt) in kernel.iter().enumerate() {
                let sy = reflect101(y as i64 + k as i64 - half, h as i64);
                let i = (sy * w + x) * 3;
                for c in 0..3 {
                    acc[c] += wt * tmp[i + c];
                }
            }
            for c in 0..3 {
                out[(y * w + x) * 3 + c] = to_u8(acc[c]);
            }
        }
    }
    ImageBuffer::new(image.width(), image.height(), out).expect("same dimensions")
}
