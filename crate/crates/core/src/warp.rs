//! Inverse-mapped affine resampling.
//!
//! Pixel centers sit on integer coordinates. An output pixel whose source
//! position falls outside `[0, w-1] x [0, h-1]` is filled with black (images)
//! or `false` (masks).

use crate::raster::{BinaryMask, ImageBuffer};

const EDGE_EPS: f64 = 1e-9;

/// Affine map from output coordinates to source coordinates:
/// `src = linear * dst + offset`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InverseAffine {
    pub linear: [[f64; 2]; 2],
    pub offset: [f64; 2],
}

impl InverseAffine {
    #[inline]
    pub fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        let l = &self.linear;
        (
            l[0][0] * x + l[0][1] * y + self.offset[0],
            l[1][0] * x + l[1][1] * y + self.offset[1],
        )
    }

    /// Inverse map of a rotation of the content by `angle_deg` about `center`,
    /// with the output canvas shifted so that output `(0, 0)` corresponds to
    /// `origin` in the rotated frame.
    ///
    /// Positive angles turn `+x` towards `+y` (clockwise on screen, since `y`
    /// grows downward), matching the orientation convention in
    /// [`crate::moments`].
    pub fn rotation(angle_deg: f64, center: (f64, f64), origin: (f64, f64)) -> Self {
        let (s, c) = angle_deg.to_radians().sin_cos();
        // dst = R(a) (src - center) + center  =>  src = R(-a) (dst - center) + center
        let (ox, oy) = (origin.0 - center.0, origin.1 - center.1);
        Self {
            linear: [[c, s], [-s, c]],
            offset: [
                c * ox + s * oy + center.0,
                -s * ox + c * oy + center.1,
            ],
        }
    }

    /// Inverse map of scaling the content by `factor` about `center`.
    pub fn scale(factor: f64, center: (f64, f64)) -> Self {
        let inv = 1.0 / factor;
        Self {
            linear: [[inv, 0.0], [0.0, inv]],
            offset: [center.0 - center.0 * inv, center.1 - center.1 * inv],
        }
    }
}

/// Rotates a point forward (the inverse of what [`InverseAffine::rotation`] maps).
pub fn rotate_point(p: (f64, f64), angle_deg: f64, center: (f64, f64)) -> (f64, f64) {
    let (s, c) = angle_deg.to_radians().sin_cos();
    let (dx, dy) = (p.0 - center.0, p.1 - center.1);
    (center.0 + c * dx - s * dy, center.1 + s * dx + c * dy)
}

#[inline]
fn inside(v: f64, len: u32) -> bool {
    v >= -EDGE_EPS && v <= (len - 1) as f64 + EDGE_EPS
}

/// Bilinear sample; `None` outside the image.
#[inline]
pub fn sample_bilinear(img: &ImageBuffer, x: f64, y: f64) -> Option<[u8; 3]> {
    let (w, h) = img.dimensions();
    if !inside(x, w) || !inside(y, h) {
        return None;
    }
    let x = x.clamp(0.0, (w - 1) as f64);
    let y = y.clamp(0.0, (h - 1) as f64);
    let x0 = x.floor() as u32;
    let y0 = y.floor() as u32;
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let fx = x - x0 as f64;
    let fy = y - y0 as f64;
    let p00 = img.pixel(x0, y0);
    let p10 = img.pixel(x1, y0);
    let p01 = img.pixel(x0, y1);
    let p11 = img.pixel(x1, y1);
    let mut out = [0u8; 3];
    for c in 0..3 {
        let top = p00[c] as f64 * (1.0 - fx) + p10[c] as f64 * fx;
        let bottom = p01[c] as f64 * (1.0 - fx) + p11[c] as f64 * fx;
        out[c] = (top * (1.0 - fy) + bottom * fy).round().clamp(0.0, 255.0) as u8;
    }
    Some(out)
}

/// Nearest-neighbor sample; `None` outside the mask.
#[inline]
pub fn sample_nearest(mask: &BinaryMask, x: f64, y: f64) -> Option<bool> {
    let (w, h) = mask.dimensions();
    let xr = x.round();
    let yr = y.round();
    if xr < 0.0 || yr < 0.0 || xr > (w - 1) as f64 || yr > (h - 1) as f64 {
        return None;
    }
    Some(mask.get(xr as u32, yr as u32))
}

pub fn warp_image(img: &ImageBuffer, width: u32, height: u32, map: &InverseAffine) -> ImageBuffer {
    ImageBuffer::from_fn(width, height, |x, y| {
        let (sx, sy) = map.apply(x as f64, y as f64);
        sample_bilinear(img, sx, sy).unwrap_or([0, 0, 0])
    })
}

pub fn warp_mask(mask: &BinaryMask, width: u32, height: u32, map: &InverseAffine) -> BinaryMask {
    BinaryMask::from_fn(width, height, |x, y| {
        let (sx, sy) = map.apply(x as f64, y as f64);
        sample_nearest(mask, sx, sy).unwrap_or(false)
    })
}

/// Output pixels whose source position lies inside the source canvas.
pub fn warp_validity(src_w: u32, src_h: u32, width: u32, height: u32, map: &InverseAffine) -> BinaryMask {
    BinaryMask::from_fn(width, height, |x, y| {
        let (sx, sy) = map.apply(x as f64, y as f64);
        inside(sx, src_w) && inside(sy, src_h)
    })
}
