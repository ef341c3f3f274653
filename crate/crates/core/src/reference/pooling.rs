//! Mask average pooling over a feature map, with the mask bilinearly resized
//! to the feature grid first.

use super::ReferenceError;
use crate::tensor::{FeatureMap, SoftMask};

fn source_index(dst: usize, scale: f64, src_len: usize) -> (usize, usize, f64) {
    // Half-pixel centers, clamped at the border (`align_corners = false`).
    let pos = ((dst as f64 + 0.5) * scale - 0.5).max(0.0);
    let lo = (pos.floor() as usize).min(src_len - 1);
    let hi = (lo + 1).min(src_len - 1);
    (lo, hi, pos - lo as f64)
}

/// Bilinear resize of mask weights to `out_h × out_w`. Soft weights are kept.
pub fn resize_bilinear(mask: &SoftMask, out_h: usize, out_w: usize) -> Vec<f64> {
    let (in_h, in_w) = (mask.height(), mask.width());
    if (in_h, in_w) == (out_h, out_w) {
        return mask.weights().iter().map(|&w| f64::from(w)).collect();
    }
    let sy = in_h as f64 / out_h as f64;
    let sx = in_w as f64 / out_w as f64;
    let cols: Vec<_> = (0..out_w).map(|c| source_index(c, sx, in_w)).collect();
    let mut out = Vec::with_capacity(out_h * out_w);
    for r in 0..out_h {
        let (y0, y1, fy) = source_index(r, sy, in_h);
        for &(x0, x1, fx) in &cols {
            let top = f64::from(mask.weight(y0, x0)) * (1.0 - fx) + f64::from(mask.weight(y0, x1)) * fx;
            let bottom = f64::from(mask.weight(y1, x0)) * (1.0 - fx) + f64::from(mask.weight(y1, x1)) * fx;
            out.push(top * (1.0 - fy) + bottom * fy);
        }
    }
    out
}

/// Weighted mean of feature vectors under the resized mask.
pub fn mask_average_pool(features: &FeatureMap, mask: &SoftMask) -> Result<Vec<f64>, ReferenceError> {
    let weights = resize_bilinear(mask, features.height(), features.width());
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return Err(ReferenceError::EmptyPooledMask);
    }
    let mut acc = vec![0.0f64; features.dim()];
    for (i, &w) in weights.iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        let pixel = features.pixel(i / features.width(), i % features.width());
        for (a, &f) in acc.iter_mut().zip(pixel) {
            *a += w * f64::from(f);
        }
    }
    Ok(acc.into_iter().map(|a| a / total).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn fm(h: usize, w: usize, d: usize, data: Vec<f32>) -> FeatureMap {
        FeatureMap::new(h, w, d, data).unwrap()
    }

    #[test]
    fn all_ones_is_global_average() {
        let f = fm(2, 2, 2, vec![1.0, 0.0, 3.0, 2.0, 5.0, 4.0, 7.0, 6.0]);
        let mask = SoftMask::filled(8, 8, 1.0).unwrap();
        assert_eq!(mask_average_pool(&f, &mask).unwrap(), vec![4.0, 3.0]);
    }

    #[test]
    fn one_hot_selects_pixel() {
        let f = fm(2, 3, 1, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let mut w = vec![0.0; 6];
        w[4] = 1.0;
        let mask = SoftMask::new(2, 3, w).unwrap();
        assert_eq!(mask_average_pool(&f, &mask).unwrap(), vec![5.0]);
    }

    #[test]
    fn top_row_mask_averages_top_row() {
        let (a, b, c, d) = (0.25f32, -1.5, 8.0, 3.0);
        let f = fm(2, 2, 1, vec![a, b, c, d]);
        let mask = SoftMask::new(2, 2, vec![1.0, 1.0, 0.0, 0.0]).unwrap();
        let pooled = mask_average_pool(&f, &mask).unwrap();
        assert_eq!(pooled, vec![(f64::from(a) + f64::from(b)) / 2.0]);
    }

    #[test]
    fn empty_mask_is_error() {
        let f = fm(1, 1, 1, vec![1.0]);
        let mask = SoftMask::filled(3, 3, 0.0).unwrap();
        assert_eq!(mask_average_pool(&f, &mask), Err(ReferenceError::EmptyPooledMask));
    }

    #[test]
    fn downsample_by_two_is_block_average() {
        // Half-pixel sampling at exactly 2x lands between source pixels.
        let mut w = vec![0.0; 16];
        for r in 0..2 {
            for c in 0..2 {
                w[r * 4 + c] = 1.0;
            }
        }
        w[2] = 1.0;
        let mask = SoftMask::new(4, 4, w).unwrap();
        let out = resize_bilinear(&mask, 2, 2);
        assert_eq!(out, vec![1.0, 0.25, 0.0, 0.0]);
    }

    #[test]
    fn upsample_interpolates() {
        let mask = SoftMask::new(1, 2, vec![0.0, 1.0]).unwrap();
        let out = resize_bilinear(&mask, 1, 4);
        assert_eq!(out, vec![0.0, 0.25, 0.75, 1.0]);
    }

    proptest! {
        #[test]
        fn invariant_to_mask_scale(
            weights in prop::collection::vec(0.0f32..=1.0, 16),
            feats in prop::collection::vec(-10.0f32..10.0, 4 * 4 * 3),
            exponent in 0i32..8,
            scale in 0.01f32..1.0,
        ) {
            prop_assume!(weights.iter().any(|&w| w > 0.01));
            let f = fm(4, 4, 3, feats);
            let mask = SoftMask::new(4, 4, weights.clone()).unwrap();
            let a = mask_average_pool(&f, &mask).unwrap();
            // Power-of-two scaling is exact in f32, so only pooling arithmetic differs.
            let c = 2f32.powi(-exponent);
            let exact = SoftMask::new(4, 4, weights.iter().map(|w| w * c).collect()).unwrap();
            let b = mask_average_pool(&f, &exact).unwrap();
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() < 1e-9, "{x} vs {y}");
            }
            // Arbitrary factors also round each f32 weight.
            let rounded = SoftMask::new(4, 4, weights.iter().map(|w| w * scale).collect()).unwrap();
            let b = mask_average_pool(&f, &rounded).unwrap();
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() < 1e-5, "{x} vs {y}");
            }
        }
    }
}
