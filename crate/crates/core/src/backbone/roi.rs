//! Fixed-size bilinear ROI sampling of page regions.

use crate::document::{roi_pixel_rect, BoundingBox};
use crate::image::{PixelRect, RasterImage};

/// Samples the pixel rectangle of `bbox` to an `h x w x 3` patch in `[0, 1]`.
pub fn roi_crop(image: &RasterImage, bbox: &BoundingBox, patch: (usize, usize)) -> Vec<f32> {
    roi_crop_rect(image, roi_pixel_rect(bbox, image.width(), image.height()), patch)
}

/// Bilinear resampling of `rect` onto a `patch = (h, w)` grid, sampling at pixel
/// centers. An empty rectangle yields its nearest pixel replicated.
pub fn roi_crop_rect(image: &RasterImage, rect: PixelRect, patch: (usize, usize)) -> Vec<f32> {
    let (ph, pw) = patch;
    let mut out = Vec::with_capacity(ph * pw * 3);
    let (iw, ih) = (image.width(), image.height());
    if iw == 0 || ih == 0 {
        out.resize(ph * pw * 3, 0.0);
        return out;
    }
    let r = rect.clamp_to(iw, ih);
    if r.is_empty() {
        let px = image.get(r.left.min(iw - 1), r.top.min(ih - 1));
        for _ in 0..ph * pw {
            out.extend(px.iter().map(|&c| c as f32 / 255.0));
        }
        return out;
    }
    let axis = |i: usize, n: usize, lo: u32, hi: u32| -> (u32, u32, f32) {
        let span = (hi - lo) as f64;
        let s = lo as f64 + (i as f64 + 0.5) * span / n as f64 - 0.5;
        let s = s.clamp(lo as f64, (hi - 1) as f64);
        let a = s.floor() as u32;
        let b = (a + 1).min(hi - 1);
        (a, b, (s - a as f64) as f32)
    };
    for i in 0..ph {
        let (y0, y1, fy) = axis(i, ph, r.top, r.bottom);
        for j in 0..pw {
            let (x0, x1, fx) = axis(j, pw, r.left, r.right);
            let (p00, p01, p10, p11) = (image.get(x0, y0), image.get(x1, y0), image.get(x0, y1), image.get(x1, y1));
            for c in 0..3 {
                let top = p00[c] as f32 * (1.0 - fx) + p01[c] as f32 * fx;
                let bottom = p10[c] as f32 * (1.0 - fx) + p11[c] as f32 * fx;
                out.push((top * (1.0 - fy) + bottom * fy) / 255.0);
            }
        }
    }
    out
}
