//! Saliency field to bounding box: 8-bit quantization, Otsu threshold,
//! foreground mask and its extent scaled to image pixels.

use std::cmp::Ordering;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gbvs::{min_max, SaliencyField};
use crate::geom::BBox2D;
use crate::imageio::{self, ImageError};

#[derive(Debug, Error)]
pub enum RoiError {
    #[error("histogram is empty")]
    EmptyHistogram,
    #[error("mask has no foreground pixel")]
    EmptyMask,
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Image(#[from] ImageError),
}

pub type Histogram = [u64; 256];

pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8
}

pub fn histogram(levels: &[u8]) -> Histogram {
    let mut h = [0u64; 256];
    for &l in levels {
        h[l as usize] += 1;
    }
    h
}

/// `a_num / a_den` against `b_num / b_den`, exact while the products fit.
fn cmp_ratio(a_num: u128, a_den: u128, b_num: u128, b_den: u128) -> Ordering {
    match (a_num.checked_mul(b_den), b_num.checked_mul(a_den)) {
        (Some(l), Some(r)) => l.cmp(&r),
        _ => (a_num as f64 / a_den as f64).total_cmp(&(b_num as f64 / b_den as f64)),
    }
}

/// Threshold `t` maximizing the between-class variance of `{<= t}` and
/// `{> t}`; the lowest maximizer wins. A histogram with a single occupied
/// bin returns that bin.
pub fn otsu_threshold(hist: &Histogram) -> Result<u8, RoiError> {
    let occupied: Vec<usize> = (0..256).filter(|&i| hist[i] > 0).collect();
    match occupied.len() {
        0 => return Err(RoiError::EmptyHistogram),
        1 => return Ok(occupied[0] as u8),
        _ => {}
    }
    let n: u128 = hist.iter().map(|&c| c as u128).sum();
    let s: u128 = hist.iter().enumerate().map(|(i, &c)| i as u128 * c as u128).sum();
    // Between-class variance is (S0 N - S n0)^2 / (N^2 n0 n1); N^2 is shared.
    let mut best: Option<(u8, u128, u128)> = None;
    let (mut n0, mut s0) = (0u128, 0u128);
    for t in 0..255usize {
        n0 += hist[t] as u128;
        s0 += t as u128 * hist[t] as u128;
        let n1 = n - n0;
        if n0 == 0 || n1 == 0 {
            continue;
        }
        let x = (s0 * n).abs_diff(s * n0);
        let num = x.checked_mul(x).unwrap_or(u128::MAX);
        let den = n0 * n1;
        if best.is_none_or(|(_, bn, bd)| cmp_ratio(num, den, bn, bd) == Ordering::Greater) {
            best = Some((t as u8, num, den));
        }
    }
    Ok(best.expect("two occupied bins admit a separating threshold").0)
}

/// Foreground is `level > threshold`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    pub width: usize,
    pub height: usize,
    pub threshold: u8,
    pub bits: Vec<bool>,
}

impl BinaryMask {
    pub fn from_levels(levels: &[u8], width: usize, height: usize, threshold: u8) -> Self {
        Self {
            width,
            height,
            threshold,
            bits: levels.iter().map(|&l| l > threshold).collect(),
        }
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    /// Tight `(x1, y1, x2, y2)` cell extent of the foreground.
    pub fn extent(&self) -> Option<[usize; 4]> {
        let mut e: Option<[usize; 4]> = None;
        for (i, _) in self.bits.iter().enumerate().filter(|(_, b)| **b) {
            let (x, y) = (i % self.width, i / self.width);
            e = Some(match e {
                None => [x, y, x, y],
                Some([x1, y1, x2, y2]) => [x1.min(x), y1.min(y), x2.max(x), y2.max(y)],
            });
        }
        e
    }

    /// Keeps only the largest 4-connected foreground component; equal sizes
    /// keep the one reached first in raster order.
    pub fn largest_component(&self) -> Self {
        let mut label = vec![usize::MAX; self.bits.len()];
        let mut best: (usize, usize) = (0, usize::MAX);
        let mut stack = Vec::new();
        let mut next = 0;
        for start in 0..self.bits.len() {
            if !self.bits[start] || label[start] != usize::MAX {
                continue;
            }
            let mut size = 0;
            label[start] = next;
            stack.push(start);
            while let Some(i) = stack.pop() {
                size += 1;
                let (x, y) = (i % self.width, i / self.width);
                let mut visit = |j: usize| {
                    if self.bits[j] && label[j] == usize::MAX {
                        label[j] = next;
                        stack.push(j);
                    }
                };
                if x > 0 {
                    visit(i - 1);
                }
                if x + 1 < self.width {
                    visit(i + 1);
                }
                if y > 0 {
                    visit(i - self.width);
                }
                if y + 1 < self.height {
                    visit(i + self.width);
                }
            }
            if size > best.0 {
                best = (size, next);
            }
            next += 1;
        }
        Self {
            bits: label.iter().map(|&l| l == best.1).collect(),
            ..self.clone()
        }
    }

    pub fn write_png(&self, path: &Path) -> Result<(), RoiError> {
        Ok(imageio::write_mask(path, self.width, self.height, &self.bits)?)
    }
}

/// Foreground extent in image pixels. Cell `c` spans pixels
/// `c * s ..= (c + 1) * s - 1` with `s` the image-to-mask scale.
pub fn mask_to_bbox(mask: &BinaryMask, image_width: usize, image_height: usize) -> Result<BBox2D, RoiError> {
    let [c1, r1, c2, r2] = mask.extent().ok_or(RoiError::EmptyMask)?;
    let sx = image_width as f64 / mask.width as f64;
    let sy = image_height as f64 / mask.height as f64;
    BBox2D::new(
        c1 as f64 * sx,
        r1 as f64 * sy,
        (c2 + 1) as f64 * sx - 1.0,
        (r2 + 1) as f64 * sy - 1.0,
    )
    .map_err(|e| RoiError::Invalid(e.to_string()))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoiOptions {
    /// Restrict the box to the largest connected foreground region.
    pub largest_component: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Roi {
    pub bbox: BBox2D,
    pub mask: BinaryMask,
}

pub fn extract_roi(field: &SaliencyField, opts: RoiOptions) -> Result<Roi, RoiError> {
    let levels: Vec<u8> = min_max(&field.map).into_iter().map(quantize).collect();
    let t = otsu_threshold(&histogram(&levels))?;
    let mut mask = BinaryMask::from_levels(&levels, field.map_width, field.map_height, t);
    if opts.largest_component {
        mask = mask.largest_component();
    }
    let bbox = mask_to_bbox(&mask, field.image_width, field.image_height)?;
    Ok(Roi { bbox, mask })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    // Textbook between-class variance per threshold from direct class sums,
    // compared as exact rationals: w0 w1 (mu0 - mu1)^2 * N^2.
    pub(crate) fn otsu_oracle(h: &Histogram) -> u8 {
        let occupied: Vec<usize> = (0..256).filter(|&i| h[i] > 0).collect();
        if occupied.len() == 1 {
            return occupied[0] as u8;
        }
        let mut best: Option<(usize, u128, u128)> = None;
        for t in 0..256 {
            let n0: u128 = (0..=t).map(|i| h[i] as u128).sum();
            let n1: u128 = (t + 1..256).map(|i| h[i] as u128).sum();
            if n0 == 0 || n1 == 0 {
                continue;
            }
            let s0: u128 = (0..=t).map(|i| i as u128 * h[i] as u128).sum();
            let s1: u128 = (t + 1..256).map(|i| i as u128 * h[i] as u128).sum();
            // mu0 - mu1 = (s0 n1 - s1 n0) / (n0 n1); variance * N^2 = d^2 / (n0 n1).
            let d = (s0 * n1).abs_diff(s1 * n0);
            let (num, den) = (d * d, n0 * n1);
            if best.is_none_or(|(_, bn, bd)| num * bd > bn * den) {
                best = Some((t, num, den));
            }
        }
        best.unwrap().0 as u8
    }

    #[test]
    fn otsu_examples() {
        let mut h = [0u64; 256];
        h[77] = 10;
        assert_eq!(otsu_threshold(&h).unwrap(), 77);
        let mut two = [0u64; 256];
        two[0] = 5;
        two[255] = 9;
        assert_eq!(otsu_threshold(&two).unwrap(), 0);
        let mut mixed = [0u64; 256];
        mixed[10] = 12;
        mixed[200] = 4;
        assert_eq!(otsu_threshold(&mixed).unwrap(), otsu_oracle(&mixed));
        assert!(matches!(otsu_threshold(&[0; 256]), Err(RoiError::EmptyHistogram)));
    }

    #[test]
    fn otsu_random_histograms() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..300 {
            let mut h = [0u64; 256];
            let bins = rng.random_range(1..40);
            for _ in 0..bins {
                h[rng.random_range(0..256)] += rng.random_range(1..5000);
            }
            assert_eq!(otsu_threshold(&h).unwrap(), otsu_oracle(&h));
        }
    }

    fn mask(w: usize, h: usize, on: &[(usize, usize)]) -> BinaryMask {
        let mut bits = vec![false; w * h];
        for &(x, y) in on {
            bits[y * w + x] = true;
        }
        BinaryMask { width: w, height: h, threshold: 0, bits }
    }

    #[test]
    fn bbox_examples() {
        let m = mask(10, 10, &[(3, 5)]);
        assert_eq!(mask_to_bbox(&m, 10, 10).unwrap(), BBox2D::new(3.0, 5.0, 3.0, 5.0).unwrap());
        let full = BinaryMask { width: 4, height: 3, threshold: 0, bits: vec![true; 12] };
        assert_eq!(mask_to_bbox(&full, 40, 30).unwrap(), BBox2D::new(0.0, 0.0, 39.0, 29.0).unwrap());
        assert!(matches!(mask_to_bbox(&mask(3, 3, &[]), 3, 3), Err(RoiError::EmptyMask)));
        // Scaled: cell 1 of 4 over 40 px spans pixels 10..=19.
        assert_eq!(mask_to_bbox(&mask(4, 4, &[(1, 2)]), 40, 40).unwrap(), BBox2D::new(10.0, 20.0, 19.0, 29.0).unwrap());
    }

    #[test]
    fn largest_component_flag() {
        let m = mask(8, 4, &[(0, 0), (1, 0), (5, 2), (6, 2), (6, 3)]);
        let l = m.largest_component();
        assert_eq!(l.extent(), Some([5, 2, 6, 3]));
        let tie = mask(6, 1, &[(0, 0), (4, 0)]);
        assert_eq!(tie.largest_component().extent(), Some([0, 0, 0, 0]));
    }

    fn field(w: usize, h: usize, values: Vec<f64>) -> SaliencyField {
        SaliencyField { map_width: w, map_height: h, map: values, image_width: w, image_height: h }
    }

    #[test]
    fn disk_field() {
        let (w, h) = (32, 32);
        let (cx, cy, r) = (15.5, 15.5, 6.0);
        let v: Vec<f64> = (0..w * h)
            .map(|i| {
                let d2 = ((i % w) as f64 - cx).powi(2) + ((i / w) as f64 - cy).powi(2);
                if d2 <= r * r { 0.9 } else { 0.1 }
            })
            .collect();
        let roi = extract_roi(&field(w, h, v), RoiOptions::default()).unwrap();
        let square = [cx - r, cy - r, cx + r, cy + r];
        let got = [roi.bbox.x1, roi.bbox.y1, roi.bbox.x2, roi.bbox.y2];
        for (g, s) in got.iter().zip(square) {
            assert!((g - s).abs() <= 2.0, "{got:?} vs {square:?}");
        }
    }

    #[test]
    fn uniform_field_is_empty_mask() {
        assert!(matches!(extract_roi(&field(4, 4, vec![0.3; 16]), RoiOptions::default()), Err(RoiError::EmptyMask)));
    }

    #[test]
    fn intensity_scaling_keeps_mask() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let v: Vec<f64> = (0..400).map(|_| rng.random::<f64>().powi(3)).collect();
        let half: Vec<f64> = v.iter().map(|x| x * 0.5).collect();
        let a = extract_roi(&field(20, 20, v), RoiOptions::default()).unwrap();
        let b = extract_roi(&field(20, 20, half), RoiOptions::default()).unwrap();
        assert_eq!(a, b);
    }

    proptest! {
        #[test]
        fn bbox_is_tight(seed in 0u64..10_000, w in 1usize..20, h in 1usize..20) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let bits: Vec<bool> = (0..w * h).map(|_| rng.random_bool(0.1)).collect();
            let m = BinaryMask { width: w, height: h, threshold: 0, bits: bits.clone() };
            let on: Vec<(usize, usize)> = (0..w * h).filter(|&i| bits[i]).map(|i| (i % w, i / w)).collect();
            match mask_to_bbox(&m, w, h) {
                Err(RoiError::EmptyMask) => prop_assert!(on.is_empty()),
                Ok(b) => {
                    let xs = on.iter().map(|p| p.0 as f64);
                    let ys = on.iter().map(|p| p.1 as f64);
                    prop_assert_eq!(b.x1, xs.clone().fold(f64::INFINITY, f64::min));
                    prop_assert_eq!(b.x2, xs.fold(f64::NEG_INFINITY, f64::max));
                    prop_assert_eq!(b.y1, ys.clone().fold(f64::INFINITY, f64::min));
                    prop_assert_eq!(b.y2, ys.fold(f64::NEG_INFINITY, f64::max));
                }
                Err(e) => prop_assert!(false, "{e}"),
            }
        }
    }
}
