//! Synthetic code-region images with exact ground-truth masks.
//!
//! Each image shows one dark printed code on a lighter, unevenly textured
//! surface. The code is laid out along its own horizontal axis as a block of
//! dots, a row of seven-segment glyphs of varying height, a few lines of dots
//! and a trailing vertical stripe of dots. All parts share a common height
//! and are centered on the axis, so the region is symmetric about it and its
//! principal axis is the code axis.
//!
//! The ground-truth mask is the union of the part rectangles. Factory style
//! F1 prints larger dots than F2, which makes the dark-pixel density of a
//! crop a usable factory cue.
//!
//! Code geometry is in pixels at zoom 1 (roughly 97 x 24), independent of
//! the canvas size.

use std::path::{Path, PathBuf};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::augment::gaussian_blur;
use crate::dataset::{DatasetManifest, Factory, SampleRecord, Split};
use crate::error::{Error, Result};
use crate::raster::{save_image, save_mask, BinaryMask, ImageBuffer};
use crate::seed::{derive_seed, rng_from_seed};

const DOT_PITCH: f64 = 5.0;
const PART_HALF_HEIGHT: f64 = 12.0;
const PART_GAP: f64 = 3.0;
const DOT_PAD: f64 = 2.0;
const GLYPH_WIDTH: f64 = 8.0;
const GLYPH_GAP: f64 = 3.0;
const GLYPH_COUNT: usize = 4;
const BOX_COLS: usize = 4;
const LINE_COLS: usize = 5;
const STROKE: f64 = 2.0;
const FAR_STRIPE_GAP: f64 = 7.0;
const FAR_STRIPE_PROB: f64 = 0.15;
const LOOSE_STAINS: usize = 6;
/// Distance range from the code region to the edge of each end stain.
const END_STAIN_GAP: (f64, f64) = (4.0, 10.0);
const LOOSE_STAIN_GAP: f64 = 12.0;
const STAIN_HALO: f64 = 20.0;
const SUPERSAMPLE: usize = 3;

// dots are printed darker than the glyphs; only dots fall below the
// classifier's default dark cutoff
const DOT_INK: [f64; 3] = [30.0, 28.0, 36.0];
const STROKE_INK: [f64; 3] = [88.0, 84.0, 90.0];
const STAIN: [f64; 3] = [96.0, 90.0, 84.0];
const SURFACE: [f64; 3] = [196.0, 186.0, 170.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub count: usize,
    pub width: u32,
    pub height: u32,
    /// Code orientation range in degrees (same convention as [`crate::moments`]).
    pub angle_range: (f64, f64),
    /// Scale of the code relative to its nominal size.
    pub zoom_range: (f64, f64),
    /// Global contrast factor applied about the mean gray level.
    pub contrast_range: (f64, f64),
    /// Odd Gaussian kernel sizes; 1 means no blur.
    pub blur_range: (u32, u32),
    /// Probability that a sample is printed in the F1 style.
    pub style_mix: f64,
    pub seed: u64,
    pub split: Split,
    pub id_prefix: String,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            count: 16,
            width: 512,
            height: 512,
            angle_range: (-30.0, 30.0),
            zoom_range: (0.9, 1.1),
            contrast_range: (1.0, 1.0),
            blur_range: (1, 1),
            style_mix: 0.5,
            seed: 0,
            split: Split::Test,
            id_prefix: "s".to_string(),
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |why: String| Err(Error::Config(format!("synth spec: {why}")));
        if self.count == 0 {
            return bad("count must be at least 1".into());
        }
        if self.width < 32 || self.height < 32 {
            return bad("canvas must be at least 32x32".into());
        }
        for (name, (lo, hi)) in [
            ("angle_range", self.angle_range),
            ("zoom_range", self.zoom_range),
            ("contrast_range", self.contrast_range),
        ] {
            if !(lo.is_finite() && hi.is_finite()) || lo > hi {
                return bad(format!("{name} must satisfy min <= max"));
            }
        }
        if self.zoom_range.0 <= 0.0 || self.contrast_range.0 < 0.0 {
            return bad("zoom must be positive and contrast non-negative".into());
        }
        let (b0, b1) = self.blur_range;
        if b0 > b1 || b0 % 2 == 0 || b1 % 2 == 0 {
            return bad("blur_range must hold odd kernel sizes with min <= max".into());
        }
        if !(0.0..=1.0).contains(&self.style_mix) {
            return bad("style_mix must lie in [0, 1]".into());
        }
        Ok(())
    }

    pub fn sample_id(&self, index: usize) -> String {
        format!("{}{index:05}", self.id_prefix)
    }
}

/// Ground truth written next to every generated image as `<id>.meta.json`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleMeta {
    pub angle_deg: f64,
    pub zoom: f64,
    pub style: Factory,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct SynthSample {
    pub id: String,
    pub image: ImageBuffer,
    pub mask: BinaryMask,
    pub meta: SampleMeta,
}

#[derive(Debug, Clone, Copy)]
struct Rect {
    u0: f64,
    v0: f64,
    u1: f64,
    v1: f64,
}

impl Rect {
    fn contains(&self, u: f64, v: f64) -> bool {
        u >= self.u0 && u <= self.u1 && v >= self.v0 && v <= self.v1
    }
}

#[derive(Debug, Clone, Copy)]
struct Disc {
    u: f64,
    v: f64,
    r: f64,
}

/// A code laid out in its own frame, centered at the origin.
#[derive(Debug, Clone)]
struct CodeLayout {
    parts: Vec<Rect>,
    dots: Vec<Disc>,
    strokes: Vec<Rect>,
    stains: Vec<Disc>,
    /// Half-extent including the stain halo.
    reach: (f64, f64),
}

// segments a..g of a seven-segment digit
const DIGIT_SEGMENTS: [u8; 10] = [
    0b0111111, 0b0000110, 0b1011011, 0b1001111, 0b1100110, 0b1101101, 0b1111101, 0b0000111, 0b1111111,
    0b1101111,
];

fn glyph_strokes(digit: usize, u0: f64, height: f64) -> Vec<Rect> {
    let (w, t) = (GLYPH_WIDTH, STROKE);
    let top = -height / 2.0;
    let bot = height / 2.0;
    let mid = 0.0;
    let segs = [
        Rect { u0, v0: top, u1: u0 + w, v1: top + t },                         // a
        Rect { u0: u0 + w - t, v0: top, u1: u0 + w, v1: mid },                 // b
        Rect { u0: u0 + w - t, v0: mid, u1: u0 + w, v1: bot },                 // c
        Rect { u0, v0: bot - t, u1: u0 + w, v1: bot },                         // d
        Rect { u0, v0: mid, u1: u0 + t, v1: bot },                             // e
        Rect { u0, v0: top, u1: u0 + t, v1: mid },                             // f
        Rect { u0, v0: mid - t / 2.0, u1: u0 + w, v1: mid + t / 2.0 },         // g
    ];
    let bits = DIGIT_SEGMENTS[digit];
    segs.iter()
        .enumerate()
        .filter(|(i, _)| bits & (1 << i) != 0)
        .map(|(_, r)| *r)
        .collect()
}

fn dot_grid(u_start: f64, cols: usize, rows: &[f64], r: f64, dots: &mut Vec<Disc>) -> Rect {
    for c in 0..cols {
        for &v in rows {
            dots.push(Disc {
                u: u_start + DOT_PAD + c as f64 * DOT_PITCH,
                v,
                r,
            });
        }
    }
    Rect {
        u0: u_start,
        v0: -PART_HALF_HEIGHT,
        u1: u_start + 2.0 * DOT_PAD + (cols - 1) as f64 * DOT_PITCH,
        v1: PART_HALF_HEIGHT,
    }
}

fn layout(style: Factory, rng: &mut ChaCha8Rng) -> CodeLayout {
    let dot_r = match style {
        Factory::F1 => 1.8,
        Factory::F2 => 0.8,
    };
    let mut dots = Vec::new();
    let mut parts = Vec::new();
    let mut strokes = Vec::new();

    let box_rows: Vec<f64> = (0..5).map(|i| -10.0 + 5.0 * i as f64).collect();
    let mut u = 0.0;
    let block = dot_grid(u, BOX_COLS, &box_rows, dot_r, &mut dots);
    u = block.u1 + PART_GAP;
    parts.push(block);

    let glyph_start = u;
    for g in 0..GLYPH_COUNT {
        let height = rng.gen_range(16.0..=2.0 * PART_HALF_HEIGHT);
        // no "1": its narrow shape leaves a wide gap to the previous glyph
        let digit = [0, 2, 3, 4, 5, 6, 7, 8, 9][rng.gen_range(0..9)];
        strokes.extend(glyph_strokes(digit, u, height));
        u += GLYPH_WIDTH;
        if g + 1 < GLYPH_COUNT {
            u += GLYPH_GAP;
        }
    }
    parts.push(Rect {
        u0: glyph_start,
        v0: -PART_HALF_HEIGHT,
        u1: u,
        v1: PART_HALF_HEIGHT,
    });
    u += PART_GAP;

    let line_rows = [-9.0, -3.0, 3.0, 9.0];
    let lines = dot_grid(u, LINE_COLS, &line_rows, dot_r, &mut dots);
    u = lines.u1;
    parts.push(lines);

    u += if rng.gen_bool(FAR_STRIPE_PROB) { FAR_STRIPE_GAP } else { PART_GAP };
    let stripe = dot_grid(u, 1, &box_rows, dot_r, &mut dots);
    parts.push(stripe);

    // center the layout on the origin
    let shift = stripe.u1 / 2.0;
    for r in parts.iter_mut().chain(strokes.iter_mut()) {
        r.u0 -= shift;
        r.u1 -= shift;
    }
    for d in dots.iter_mut() {
        d.u -= shift;
    }

    // one stain just beyond each end of the code, then loose stains further out
    let mut stains = Vec::with_capacity(2 + LOOSE_STAINS);
    for side in [-1.0, 1.0] {
        let r = rng.gen_range(1.5..=2.2);
        let gap = rng.gen_range(END_STAIN_GAP.0..=END_STAIN_GAP.1);
        stains.push(Disc {
            u: side * (shift + gap + r),
            v: rng.gen_range(-8.0..=8.0),
            r,
        });
    }
    while stains.len() < 2 + LOOSE_STAINS {
        let su = rng.gen_range(-shift - STAIN_HALO..=shift + STAIN_HALO);
        let sv = rng.gen_range(-PART_HALF_HEIGHT - STAIN_HALO..=PART_HALF_HEIGHT + STAIN_HALO);
        let r = rng.gen_range(1.0..=2.2);
        let du = (su.abs() - shift).max(0.0);
        let dv = (sv.abs() - PART_HALF_HEIGHT).max(0.0);
        if du.max(dv) - r >= LOOSE_STAIN_GAP {
            stains.push(Disc { u: su, v: sv, r });
        }
    }

    CodeLayout {
        parts,
        dots,
        strokes,
        stains,
        reach: (shift + STAIN_HALO + 3.0, PART_HALF_HEIGHT + STAIN_HALO + 3.0),
    }
}

impl CodeLayout {
    fn in_region(&self, u: f64, v: f64) -> bool {
        self.parts.iter().any(|r| r.contains(u, v))
    }

    fn dot(&self, u: f64, v: f64) -> bool {
        self.dots
            .iter()
            .any(|d| (u - d.u).powi(2) + (v - d.v).powi(2) <= d.r * d.r)
    }

    fn stroke(&self, u: f64, v: f64) -> bool {
        self.strokes.iter().any(|r| r.contains(u, v))
    }

    fn stain(&self, u: f64, v: f64) -> bool {
        self.stains
            .iter()
            .any(|d| (u - d.u).powi(2) + (v - d.v).powi(2) <= d.r * d.r)
    }
}

/// Smooth value noise in [0, 1] on a lattice of the given cell size.
struct ValueNoise {
    cell: f64,
    cols: usize,
    lattice: Vec<f64>,
}

impl ValueNoise {
    fn new(width: u32, height: u32, cell: f64, rng: &mut ChaCha8Rng) -> Self {
        let cols = (width as f64 / cell).ceil() as usize + 2;
        let rows = (height as f64 / cell).ceil() as usize + 2;
        let lattice = (0..cols * rows).map(|_| rng.gen::<f64>()).collect();
        Self { cell, cols, lattice }
    }

    fn at(&self, x: f64, y: f64) -> f64 {
        let gx = x / self.cell;
        let gy = y / self.cell;
        let (ix, iy) = (gx.floor() as usize, gy.floor() as usize);
        let smooth = |t: f64| t * t * (3.0 - 2.0 * t);
        let (fx, fy) = (smooth(gx.fract()), smooth(gy.fract()));
        let l = |i: usize, j: usize| self.lattice[j * self.cols + i];
        let top = l(ix, iy) * (1.0 - fx) + l(ix + 1, iy) * fx;
        let bot = l(ix, iy + 1) * (1.0 - fx) + l(ix + 1, iy + 1) * fx;
        top * (1.0 - fy) + bot * fy
    }
}

/// Renders sample `index` of `spec` in memory.
pub fn render_sample(spec: &SynthSpec, index: usize) -> SynthSample {
    let id = spec.sample_id(index);
    let seed = derive_seed(spec.seed, &id);
    let mut rng = rng_from_seed(seed);

    let angle = uniform(&mut rng, spec.angle_range);
    let zoom = uniform(&mut rng, spec.zoom_range);
    let contrast = uniform(&mut rng, spec.contrast_range);
    let blur = {
        let odd: Vec<u32> = (spec.blur_range.0..=spec.blur_range.1).filter(|k| k % 2 == 1).collect();
        odd[rng.gen_range(0..odd.len())]
    };
    let style = if rng.gen_bool(spec.style_mix) { Factory::F1 } else { Factory::F2 };
    let code = layout(style, &mut rng);

    let (w, h) = (spec.width, spec.height);
    let (s, c) = angle.to_radians().sin_cos();
    // keep the code (and its stain halo) inside the frame when possible
    let ext_x = zoom * (code.reach.0 * c.abs() + code.reach.1 * s.abs());
    let ext_y = zoom * (code.reach.0 * s.abs() + code.reach.1 * c.abs());
    let slack_x = ((w as f64 - 1.0) / 2.0 - ext_x - 4.0).max(0.0);
    let slack_y = ((h as f64 - 1.0) / 2.0 - ext_y - 4.0).max(0.0);
    let center = (
        (w as f64 - 1.0) / 2.0 + rng.gen_range(-slack_x..=slack_x),
        (h as f64 - 1.0) / 2.0 + rng.gen_range(-slack_y..=slack_y),
    );

    let coarse = ValueNoise::new(w, h, 48.0, &mut rng);
    let fine = ValueNoise::new(w, h, 9.0, &mut rng);
    let tint: [f64; 3] = [rng.gen_range(-12.0..12.0), rng.gen_range(-12.0..12.0), rng.gen_range(-12.0..12.0)];
    let grain_seed = rng.gen::<u64>();

    let to_local = |x: f64, y: f64| {
        let dx = x - center.0;
        let dy = y - center.1;
        ((c * dx + s * dy) / zoom, (-s * dx + c * dy) / zoom)
    };

    let mut mask = BinaryMask::empty(w, h);
    let mut grain = rng_from_seed(grain_seed);
    let sub: Vec<f64> = (0..SUPERSAMPLE)
        .map(|i| (i as f64 + 0.5) / SUPERSAMPLE as f64 - 0.5)
        .collect();
    let image = ImageBuffer::from_fn(w, h, |x, y| {
        let (xf, yf) = (x as f64, y as f64);
        let surface = 0.8 + 0.15 * coarse.at(xf, yf) + 0.05 * fine.at(xf, yf);
        let g: f64 = grain.gen_range(-4.0..4.0);
        let mut px = [0.0; 3];
        for ch in 0..3 {
            px[ch] = (SURFACE[ch] + tint[ch]) * surface + g;
        }
        let (u, v) = to_local(xf, yf);
        if u.abs() <= code.reach.0 && v.abs() <= code.reach.1 {
            if code.in_region(u, v) {
                mask.set(x, y, true);
            }
            let (mut dot, mut stroke, mut stain) = (0usize, 0usize, 0usize);
            for &oy in &sub {
                for &ox in &sub {
                    let (su, sv) = to_local(xf + ox, yf + oy);
                    if code.dot(su, sv) {
                        dot += 1;
                    } else if code.stroke(su, sv) {
                        stroke += 1;
                    } else if code.stain(su, sv) {
                        stain += 1;
                    }
                }
            }
            let n = (SUPERSAMPLE * SUPERSAMPLE) as f64;
            let (dot, stroke, stain) = (dot as f64 / n, stroke as f64 / n, stain as f64 / n);
            for ch in 0..3 {
                px[ch] = px[ch] * (1.0 - dot - stroke - stain)
                    + DOT_INK[ch] * dot
                    + STROKE_INK[ch] * stroke
                    + STAIN[ch] * stain;
            }
        }
        px.map(|v| v.round().clamp(0.0, 255.0) as u8)
    });

    let image = adjust_contrast(image, contrast);
    let image = if blur > 1 { gaussian_blur(&image, blur as usize) } else { image };

    SynthSample {
        id,
        image,
        mask,
        meta: SampleMeta {
            angle_deg: angle,
            zoom,
            style,
            seed,
        },
    }
}

fn uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.gen_range(lo..=hi)
    }
}

fn adjust_contrast(image: ImageBuffer, factor: f64) -> ImageBuffer {
    if factor == 1.0 {
        return image;
    }
    let mean = image.luma().iter().map(|&v| v as f64).sum::<f64>() / (image.width() as f64 * image.height() as f64);
    let (w, h) = image.dimensions();
    let data = image
        .into_data()
        .into_iter()
        .map(|c| ((c as f64 - mean) * factor + mean).round().clamp(0.0, 255.0) as u8)
        .collect();
    ImageBuffer::new(w, h, data).expect("same dimensions")
}

/// File layout produced by [`generate_synthetic`] under `out_dir`:
/// `manifest.jsonl`, `images/<id>.png`, `images/<id>.meta.json`,
/// `masks/<id>.png`. The file stores paths relative to `out_dir`; the
/// returned manifest has them joined onto `out_dir`.
pub fn generate_synthetic(spec: &SynthSpec, out_dir: impl AsRef<Path>) -> Result<DatasetManifest> {
    spec.validate()?;
    let out_dir = out_dir.as_ref();
    std::fs::create_dir_all(out_dir.join("images"))?;
    std::fs::create_dir_all(out_dir.join("masks"))?;

    let records: Vec<SampleRecord> = (0..spec.count)
        .into_par_iter()
        .map(|i| -> Result<SampleRecord> {
            let sample = render_sample(spec, i);
            let image_rel = PathBuf::from("images").join(format!("{}.png", sample.id));
            let mask_rel = PathBuf::from("masks").join(format!("{}.png", sample.id));
            save_image(&sample.image, out_dir.join(&image_rel))?;
            save_mask(&sample.mask, out_dir.join(&mask_rel))?;
            let meta = serde_json::to_string_pretty(&sample.meta)?;
            std::fs::write(out_dir.join("images").join(format!("{}.meta.json", sample.id)), meta + "\n")?;
            Ok(SampleRecord {
                id: sample.id,
                image: image_rel,
                mask: Some(mask_rel),
                factory: sample.meta.style,
                split: spec.split,
            })
        })
        .collect::<Result<_>>()?;

    let mut manifest = DatasetManifest::new(
        out_dir
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "synthetic".into()),
        records,
    )?;
    manifest.save(out_dir.join("manifest.jsonl"))?;
    for r in &mut manifest.records {
        r.image = out_dir.join(&r.image);
        r.mask = r.mask.as_ref().map(|m| out_dir.join(m));
    }
    Ok(manifest)
}

/// Reads the `<id>.meta.json` sidecar next to an image.
pub fn load_meta(image_path: impl AsRef<Path>) -> Result<SampleMeta> {
    let image_path = image_path.as_ref();
    let stem = image_path
        .file_stem()
        .ok_or_else(|| Error::Config(format!("bad image path {}", image_path.display())))?;
    let path = image_path.with_file_name(format!("{}.meta.json", stem.to_string_lossy()));
    if !path.exists() {
        return Err(Error::FileNotFound(path));
    }
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}

/// Mask area of a code at zoom 1, in pixels. The region area does not depend
/// on style, glyphs or stripe placement.
pub fn nominal_area() -> f64 {
    let box_w = 2.0 * DOT_PAD + (BOX_COLS - 1) as f64 * DOT_PITCH;
    let glyph_w = GLYPH_COUNT as f64 * GLYPH_WIDTH + (GLYPH_COUNT - 1) as f64 * GLYPH_GAP;
    let lines_w = 2.0 * DOT_PAD + (LINE_COLS - 1) as f64 * DOT_PITCH;
    let stripe_w = 2.0 * DOT_PAD;
    (box_w + glyph_w + lines_w + stripe_w) * 2.0 * PART_HALF_HEIGHT
}
