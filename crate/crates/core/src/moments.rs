//! Image moments, principal-axis orientation, and angle-adaptive cropping.
//!
//! # Orientation convention
//!
//! Coordinates are pixel indices with the origin at the top-left, `x` to the
//! right and `y` downward. The orientation of a mask is the angle of its
//! principal axis measured from the `+x` axis, positive when the axis turns
//! from `+x` towards `+y`. On a screen (where `y` points down) a positive
//! angle therefore looks clockwise. Angles are reported in degrees in
//! `(-90, 90]`.
//!
//! The angle is derived from the second central moments:
//!
//! ```text
//! alpha = 1/2 * atan2(2 * mu11, mu20 - mu02)
//! ```
//!
//! An isotropic distribution (`mu11 = 0`, `mu20 = mu02`) has no principal
//! axis; it reports `0` because `atan2(0, 0) = 0`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{BinaryMask, ImageBuffer};
use crate::warp::{self, InverseAffine};

/// Raw moments up to second order plus the derived centroid and central
/// second moments (normalized by `m00`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentSet {
    pub m00: u64,
    pub m10: u64,
    pub m01: u64,
    pub m11: u64,
    pub m20: u64,
    pub m02: u64,
    pub mu_x: f64,
    pub mu_y: f64,
    pub cmu11: f64,
    pub cmu20: f64,
    pub cmu02: f64,
}

/// Exact integer raw moments of the true pixels.
///
/// Central moments are evaluated from exact integer numerators, e.g.
/// `cmu20 = (m00*m20 - m10^2) / m00^2`, which is `m20/m00 - mu_x^2` without
/// the cancellation error of the floating-point form.
pub fn compute_moments(mask: &BinaryMask) -> Result<MomentSet> {
    let (mut m00, mut m10, mut m01, mut m11, mut m20, mut m02) = (0u64, 0u64, 0u64, 0u64, 0u64, 0u64);
    let w = mask.width() as usize;
    for (row, bits) in mask.bits().chunks_exact(w).enumerate() {
        let y = row as u64;
        // per-row sums keep the inner loop to additions
        let (mut n, mut sx, mut sxx) = (0u64, 0u64, 0u64);
        for (col, &b) in bits.iter().enumerate() {
            if b {
                let x = col as u64;
                n += 1;
                sx += x;
                sxx += x * x;
            }
        }
        m00 += n;
        m10 += sx;
        m01 += n * y;
        m11 += sx * y;
        m20 += sxx;
        m02 += n * y * y;
    }
    if m00 == 0 {
        return Err(Error::EmptyMask);
    }
    let n = m00 as i128;
    let denom = (m00 as f64) * (m00 as f64);
    let cmu20 = (n * m20 as i128 - (m10 as i128) * (m10 as i128)) as f64 / denom;
    let cmu02 = (n * m02 as i128 - (m01 as i128) * (m01 as i128)) as f64 / denom;
    let cmu11 = (n * m11 as i128 - (m10 as i128) * (m01 as i128)) as f64 / denom;
    Ok(MomentSet {
        m00,
        m10,
        m01,
        m11,
        m20,
        m02,
        mu_x: m10 as f64 / m00 as f64,
        mu_y: m01 as f64 / m00 as f64,
        cmu11,
        cmu20,
        cmu02,
    })
}

/// Principal-axis angle in degrees, in `(-90, 90]`.
pub fn orientation_angle(moments: &MomentSet) -> Result<f64> {
    if moments.m00 == 0 {
        return Err(Error::EmptyMask);
    }
    let alpha = 0.5 * (2.0 * moments.cmu11).atan2(moments.cmu20 - moments.cmu02);
    Ok(normalize_half_turn(alpha.to_degrees()))
}

/// Folds an axis angle (defined modulo 180 degrees) into `(-90, 90]`.
pub fn normalize_half_turn(deg: f64) -> f64 {
    let mut a = deg % 180.0;
    if a > 90.0 {
        a -= 180.0;
    } else if a <= -90.0 {
        a += 180.0;
    }
    a + 0.0
}

/// Signed difference between two axis angles, folded into `(-90, 90]`.
pub fn axis_angle_diff(a: f64, b: f64) -> f64 {
    normalize_half_turn(a - b)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrientedRegion {
    pub centroid: (f64, f64),
    pub alpha: f64,
    /// `(x_min, y_min, x_max, y_max)` of the pixel squares after derotating by
    /// `alpha` about the centroid, relative to the centroid.
    pub derotated_bbox: (f64, f64, f64, f64),
}

impl OrientedRegion {
    pub fn extent(&self) -> (f64, f64) {
        let (x0, y0, x1, y1) = self.derotated_bbox;
        (x1 - x0, y1 - y0)
    }
}

fn derotated_bbox(mask: &BinaryMask, alpha: f64, centroid: (f64, f64)) -> (f64, f64, f64, f64) {
    let (s, c) = (-alpha).to_radians().sin_cos();
    let mut bb = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for (x, y) in mask.iter_true() {
        let dx = x as f64 - centroid.0;
        let dy = y as f64 - centroid.1;
        let u = c * dx - s * dy;
        let v = s * dx + c * dy;
        bb.0 = bb.0.min(u);
        bb.1 = bb.1.min(v);
        bb.2 = bb.2.max(u);
        bb.3 = bb.3.max(v);
    }
    (bb.0 - 0.5, bb.1 - 0.5, bb.2 + 0.5, bb.3 + 0.5)
}

/// Orientation of the mask, resolved so the derotated region is at least as
/// wide as it is tall (codes are wider than tall).
pub fn oriented_region(mask: &BinaryMask) -> Result<OrientedRegion> {
    let m = compute_moments(mask)?;
    let centroid = (m.mu_x, m.mu_y);
    let mut alpha = orientation_angle(&m)?;
    let mut bbox = derotated_bbox(mask, alpha, centroid);
    if bbox.3 - bbox.1 > bbox.2 - bbox.0 {
        alpha = normalize_half_turn(alpha + 90.0);
        bbox = derotated_bbox(mask, alpha, centroid);
    }
    Ok(OrientedRegion {
        centroid,
        alpha,
        derotated_bbox: bbox,
    })
}

/// A derotated, cropped code region.
#[derive(Debug, Clone, PartialEq)]
pub struct CropResult {
    pub crop: ImageBuffer,
    pub crop_mask: BinaryMask,
    /// Crop pixels whose source position lies inside the input image.
    pub valid: BinaryMask,
    /// Orientation measured on the input mask.
    pub alpha: f64,
    /// Rotation applied to the content (`-alpha`).
    pub applied_angle: f64,
    pub margin: u32,
    /// Crop window `(x_min, y_min, x_max, y_max)`, inclusive, on the rotated canvas.
    pub bbox: (u32, u32, u32, u32),
    /// True pixels of the rotated mask over the whole canvas, before cropping.
    pub mask_pixels_before_crop: u64,
}

/// Derotates `image` and `mask` about the mask centroid so the code lies
/// horizontal, then crops the mask's bounding box grown by `margin`.
///
/// The rotated canvas holds the whole input image, so no mask pixel is lost.
/// The image is resampled bilinearly, the mask by nearest neighbor; area
/// outside the input is black / false.
pub fn angle_adaptive_crop(image: &ImageBuffer, mask: &BinaryMask, margin: u32) -> Result<CropResult> {
    mask.check_same_dims(image.width(), image.height())?;
    let region = oriented_region(mask)?;
    let applied = -region.alpha + 0.0;
    let center = region.centroid;
    let (w, h) = image.dimensions();

    let corners = [
        (0.0, 0.0),
        ((w - 1) as f64, 0.0),
        (0.0, (h - 1) as f64),
        ((w - 1) as f64, (h - 1) as f64),
    ];
    let (mut x0, mut y0, mut x1, mut y1) = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for p in corners {
        let (x, y) = warp::rotate_point(p, applied, center);
        x0 = x0.min(x);
        y0 = y0.min(y);
        x1 = x1.max(x);
        y1 = y1.max(y);
    }
    // snap near-integers so a zero rotation keeps the original grid
    let snap = |v: f64| if (v - v.round()).abs() < 1e-9 { v.round() } else { v };
    let origin = (snap(x0).floor(), snap(y0).floor());
    let canvas_w = (snap(x1).ceil() - origin.0) as u32 + 1;
    let canvas_h = (snap(y1).ceil() - origin.1) as u32 + 1;

    let full_map = InverseAffine::rotation(applied, center, origin);
    let rotated = warp::warp_mask(mask, canvas_w, canvas_h, &full_map);
    let (bx0, by0, bx1, by1) = rotated.bounding_box().ok_or(Error::EmptyMask)?;
    let cx0 = bx0.saturating_sub(margin);
    let cy0 = by0.saturating_sub(margin);
    let cx1 = (bx1 + margin).min(canvas_w - 1);
    let cy1 = (by1 + margin).min(canvas_h - 1);
    let cw = cx1 - cx0 + 1;
    let ch = cy1 - cy0 + 1;

    let crop_map = InverseAffine::rotation(
        applied,
        center,
        (origin.0 + cx0 as f64, origin.1 + cy0 as f64),
    );
    let crop = warp::warp_image(image, cw, ch, &crop_map);
    let crop_mask = BinaryMask::from_fn(cw, ch, |x, y| rotated.get(cx0 + x, cy0 + y));
    let valid = warp::warp_validity(w, h, cw, ch, &crop_map);

    Ok(CropResult {
        crop,
        crop_mask,
        valid,
        alpha: region.alpha,
        applied_angle: applied,
        margin,
        bbox: (cx0, cy0, cx1, cy1),
        mask_pixels_before_crop: rotated.count(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    /// Two-pass oracle: raw sums by double loop, central moments around the
    /// explicit mean.
    fn oracle(mask: &BinaryMask) -> (u64, u64, u64, u64, u64, u64, f64, f64, f64) {
        let (mut m00, mut m10, mut m01, mut m11, mut m20, mut m02) = (0, 0, 0, 0, 0, 0);
        for y in 0..mask.height() as u64 {
            for x in 0..mask.width() as u64 {
                if mask.get(x as u32, y as u32) {
                    m00 += 1;
                    m10 += x;
                    m01 += y;
                    m11 += x * y;
                    m20 += x * x;
                    m02 += y * y;
                }
            }
        }
        let mx = m10 as f64 / m00 as f64;
        let my = m01 as f64 / m00 as f64;
        let (mut c20, mut c02, mut c11) = (0.0, 0.0, 0.0);
        for (x, y) in mask.iter_true() {
            let dx = x as f64 - mx;
            let dy = y as f64 - my;
            c20 += dx * dx;
            c02 += dy * dy;
            c11 += dx * dy;
        }
        let n = m00 as f64;
        (m00, m10, m01, m11, m20, m02, c20 / n, c02 / n, c11 / n)
    }

    fn close_rel(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * a.abs().max(b.abs()).max(1e-300) || (a - b).abs() < 1e-15
    }

    #[test]
    fn single_pixel() {
        let mut mask = BinaryMask::empty(8, 8);
        mask.set(3, 5, true);
        let m = compute_moments(&mask).unwrap();
        assert_eq!((m.m00, m.m10, m.m01, m.m11, m.m20, m.m02), (1, 3, 5, 15, 9, 25));
        assert_eq!((m.mu_x, m.mu_y), (3.0, 5.0));
        assert_eq!((m.cmu11, m.cmu20, m.cmu02), (0.0, 0.0, 0.0));
    }

    #[test]
    fn two_by_two_block() {
        let mask = BinaryMask::from_fn(4, 4, |x, y| x < 2 && y < 2);
        let m = compute_moments(&mask).unwrap();
        assert_eq!((m.m00, m.m10, m.m01), (4, 2, 2));
        assert_eq!((m.mu_x, m.mu_y), (0.5, 0.5));
        assert_eq!((m.cmu20, m.cmu02, m.cmu11), (0.25, 0.25, 0.0));
    }

    #[test]
    fn empty_mask_errors() {
        let mask = BinaryMask::empty(4, 4);
        assert!(matches!(compute_moments(&mask), Err(Error::EmptyMask)));
        assert!(matches!(angle_adaptive_crop(&ImageBuffer::filled(4, 4, [0; 3]), &mask, 0), Err(Error::EmptyMask)));
    }

    #[test]
    fn random_masks_match_oracle() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let w = rng.gen_range(1..=64);
            let h = rng.gen_range(1..=64);
            let p: f64 = rng.gen_range(0.05..0.95);
            let mut mask = BinaryMask::from_fn(w, h, |_, _| rng.gen_bool(p));
            if mask.is_empty() {
                mask.set(0, 0, true);
            }
            let m = compute_moments(&mask).unwrap();
            let o = oracle(&mask);
            assert_eq!((m.m00, m.m10, m.m01, m.m11, m.m20, m.m02), (o.0, o.1, o.2, o.3, o.4, o.5));
            assert!(close_rel(m.cmu20, o.6, 1e-12));
            assert!(close_rel(m.cmu02, o.7, 1e-12));
            assert!(close_rel(m.cmu11, o.8, 1e-9));
        }
    }

    #[test]
    fn horizontal_rectangle_is_zero_degrees() {
        let mask = BinaryMask::from_fn(64, 64, |x, y| (10..50).contains(&x) && (20..30).contains(&y));
        let a = orientation_angle(&compute_moments(&mask).unwrap()).unwrap();
        assert_eq!(a, 0.0);
    }

    #[test]
    fn square_is_zero_by_convention() {
        let mask = BinaryMask::from_fn(16, 16, |x, y| (4..12).contains(&x) && (4..12).contains(&y));
        let m = compute_moments(&mask).unwrap();
        assert_eq!(m.cmu11, 0.0);
        assert_eq!(m.cmu20, m.cmu02);
        assert_eq!(orientation_angle(&m).unwrap(), 0.0);
    }

    #[test]
    fn sign_convention() {
        // a diagonal going right and down: +x turning towards +y is positive
        let mask = BinaryMask::from_fn(32, 32, |x, y| (x as i32 - y as i32).abs() <= 1);
        let a = orientation_angle(&compute_moments(&mask).unwrap()).unwrap();
        assert!((a - 45.0).abs() < 1e-9, "{a}");
        let mask = BinaryMask::from_fn(32, 32, |x, y| (x as i32 + y as i32 - 31).abs() <= 1);
        let a = orientation_angle(&compute_moments(&mask).unwrap()).unwrap();
        assert!((a + 45.0).abs() < 1e-9, "{a}");
    }

    #[test]
    fn vertical_bar_reports_ninety() {
        let mask = BinaryMask::from_fn(32, 32, |x, y| (14..18).contains(&x) && (2..30).contains(&y));
        let a = orientation_angle(&compute_moments(&mask).unwrap()).unwrap();
        assert_eq!(a, 90.0);
    }

    #[test]
    fn normalization_range() {
        assert_eq!(normalize_half_turn(90.0), 90.0);
        assert_eq!(normalize_half_turn(-90.0), 90.0);
        assert_eq!(normalize_half_turn(135.0), -45.0);
        assert_eq!(normalize_half_turn(-135.0), 45.0);
        assert_eq!(normalize_half_turn(270.0), 90.0);
        assert_eq!(axis_angle_diff(89.0, -89.0), -2.0);
    }

    #[test]
    fn translation_invariance() {
        let shape = |x: i64, y: i64| (0..40).contains(&x) && (0..12).contains(&y) && (x + 2 * y) % 7 != 0;
        let a = BinaryMask::from_fn(80, 60, |x, y| shape(x as i64 - 5, y as i64 - 9));
        let b = BinaryMask::from_fn(80, 60, |x, y| shape(x as i64 - 31, y as i64 - 40));
        let ma = compute_moments(&a).unwrap();
        let mb = compute_moments(&b).unwrap();
        assert_eq!(orientation_angle(&ma).unwrap(), orientation_angle(&mb).unwrap());
        assert!((mb.mu_x - ma.mu_x - 26.0).abs() < 1e-12);
        assert!((mb.mu_y - ma.mu_y - 31.0).abs() < 1e-12);
    }

    #[test]
    fn tall_region_is_turned_horizontal() {
        let mask = BinaryMask::from_fn(64, 64, |x, y| (28..36).contains(&x) && (5..60).contains(&y));
        let r = oriented_region(&mask).unwrap();
        assert_eq!(r.alpha, 90.0);
        let (wd, ht) = r.extent();
        assert!(wd > ht);
    }

    #[test]
    fn horizontal_mask_crop_is_tight_bbox() {
        let img = ImageBuffer::from_fn(50, 40, |x, y| [x as u8, y as u8, 7]);
        let mask = BinaryMask::from_fn(50, 40, |x, y| (10..30).contains(&x) && (15..20).contains(&y));
        let c = angle_adaptive_crop(&img, &mask, 0).unwrap();
        assert_eq!(c.applied_angle, 0.0);
        assert_eq!(c.crop.dimensions(), (20, 5));
        assert_eq!(c.crop_mask.count(), 100);
        assert_eq!(c.crop.pixel(0, 0), img.pixel(10, 15));
        assert_eq!(c.crop.pixel(19, 4), img.pixel(29, 19));
        assert_eq!(c.bbox, (10, 15, 29, 19));
    }

    #[test]
    fn margin_is_clipped_to_canvas() {
        let img = ImageBuffer::filled(20, 20, [200; 3]);
        let mask = BinaryMask::from_fn(20, 20, |x, y| x < 12 && (8..11).contains(&y));
        let c = angle_adaptive_crop(&img, &mask, 4).unwrap();
        assert_eq!(c.bbox, (0, 4, 15, 14));
        assert_eq!(c.crop_mask.count(), c.mask_pixels_before_crop);
    }

    #[test]
    fn dimension_mismatch() {
        let img = ImageBuffer::filled(4, 4, [0; 3]);
        let mask = BinaryMask::from_fn(5, 4, |_, _| true);
        assert!(matches!(angle_adaptive_crop(&img, &mask, 0), Err(Error::DimensionMismatch { .. })));
    }
}
