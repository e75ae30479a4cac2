//! Gaze-based distillation of location proposals and sufficiency statistics.

use serde::{Deserialize, Serialize};

use crate::geom::{iou2d, BBox2D};

pub const SUFFICIENT_IOU: f64 = 0.7;

/// Proposals containing the gaze point (inclusive), in their original order,
/// with their original 0-based positions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Distilled {
    pub indices: Vec<usize>,
    pub boxes: Vec<BBox2D>,
}

pub fn distill(proposals: &[BBox2D], g: [f64; 2]) -> Distilled {
    let (indices, boxes) = proposals
        .iter()
        .enumerate()
        .filter(|(_, b)| b.contains(g[0], g[1]))
        .map(|(i, b)| (i, *b))
        .unzip();
    Distilled { indices, boxes }
}

/// Proposals containing every gaze point.
pub fn distill_multi(proposals: &[BBox2D], gaze: &[[f64; 2]]) -> Distilled {
    let (indices, boxes) = proposals
        .iter()
        .enumerate()
        .filter(|(_, b)| gaze.iter().all(|g| b.contains(g[0], g[1])))
        .map(|(i, b)| (i, *b))
        .unzip();
    Distilled { indices, boxes }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sufficiency {
    pub tau: f64,
    pub total: usize,
    pub sufficient: usize,
    pub precision: f64,
    /// 1-based position of the highest-IoU box; the first one on ties.
    pub best_index: Option<usize>,
    pub best_iou: f64,
    /// 1-based position of the first box with IoU >= tau.
    pub first_sufficient: Option<usize>,
}

pub fn sufficiency_report(boxes: &[BBox2D], gt: &BBox2D, tau: f64) -> Sufficiency {
    let ious: Vec<f64> = boxes.iter().map(|b| iou2d(b, gt)).collect();
    let sufficient = ious.iter().filter(|&&v| v >= tau).count();
    let mut best: Option<(usize, f64)> = None;
    for (i, &v) in ious.iter().enumerate() {
        if v > 0.0 && best.is_none_or(|(_, b)| v > b) {
            best = Some((i, v));
        }
    }
    Sufficiency {
        tau,
        total: boxes.len(),
        sufficient,
        precision: if boxes.is_empty() { 0.0 } else { sufficient as f64 / boxes.len() as f64 },
        best_index: best.map(|(i, _)| i + 1),
        best_iou: best.map_or(0.0, |(_, v)| v),
        first_sufficient: ious.iter().position(|&v| v >= tau).map(|i| i + 1),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdStats {
    pub before: Sufficiency,
    pub after: Sufficiency,
    /// Share of the full list's sufficient boxes that survive distillation.
    pub recall: Option<f64>,
    pub f1: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistillReport {
    pub gaze: Vec<[f64; 2]>,
    pub total: usize,
    pub distilled: Distilled,
    /// Original 1-based position of the best box after distillation.
    pub best_original_index: Option<usize>,
    pub thresholds: Vec<ThresholdStats>,
}

pub fn report(proposals: &[BBox2D], gaze: &[[f64; 2]], gt: &BBox2D, taus: &[f64]) -> DistillReport {
    let d = distill_multi(proposals, gaze);
    let thresholds: Vec<ThresholdStats> = taus
        .iter()
        .map(|&tau| {
            let before = sufficiency_report(proposals, gt, tau);
            let after = sufficiency_report(&d.boxes, gt, tau);
            let recall = (before.sufficient > 0).then(|| after.sufficient as f64 / before.sufficient as f64);
            let f1 = recall.map(|r| {
                let p = after.precision;
                if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 }
            });
            ThresholdStats { before, after, recall, f1 }
        })
        .collect();
    let best_original_index = sufficiency_report(&d.boxes, gt, SUFFICIENT_IOU)
        .best_index
        .map(|i| d.indices[i - 1] + 1);
    DistillReport {
        gaze: gaze.to_vec(),
        total: proposals.len(),
        distilled: d,
        best_original_index,
        thresholds,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn b(x1: f64, y1: f64, x2: f64, y2: f64) -> BBox2D {
        BBox2D::new(x1, y1, x2, y2).unwrap()
    }

    #[test]
    fn examples() {
        let boxes = vec![b(0.0, 0.0, 10.0, 10.0), b(20.0, 20.0, 30.0, 30.0), b(5.0, 5.0, 6.0, 6.0)];
        assert_eq!(distill(&boxes, [5.0, 5.0]).indices, vec![0, 2]);
        assert!(distill(&boxes, [100.0, 5.0]).boxes.is_empty());
        let all = vec![b(0.0, 0.0, 10.0, 10.0), b(4.0, 4.0, 6.0, 6.0)];
        assert_eq!(distill(&all, [5.0, 5.0]).boxes, all);
        // Boundary counts as inside.
        assert_eq!(distill(&boxes, [10.0, 0.0]).indices, vec![0]);
        assert_eq!(distill_multi(&boxes, &[[5.0, 5.0], [9.0, 9.0]]).indices, vec![0]);
    }

    #[test]
    fn sufficiency_examples() {
        let gt = b(10.0, 10.0, 20.0, 20.0);
        let same = vec![gt; 3];
        let s = sufficiency_report(&same, &gt, 0.7);
        assert_eq!((s.precision, s.first_sufficient, s.best_index), (1.0, Some(1), Some(1)));
        let far = vec![b(50.0, 50.0, 60.0, 60.0)];
        let s = sufficiency_report(&far, &gt, 0.7);
        assert_eq!((s.precision, s.first_sufficient, s.best_index), (0.0, None, None));
    }

    #[test]
    fn planted_sufficient_boxes() {
        let gt = b(100.0, 100.0, 200.0, 200.0);
        let mut boxes: Vec<BBox2D> = (0..20).map(|i| b(300.0 + i as f64, 0.0, 320.0 + i as f64, 40.0)).collect();
        boxes[4] = b(100.0, 100.0, 200.0, 200.0);
        boxes[9] = b(105.0, 100.0, 205.0, 200.0);
        boxes[15] = b(100.0, 110.0, 200.0, 210.0);
        boxes[16] = b(100.0, 100.0, 150.0, 150.0);
        let s = sufficiency_report(&boxes, &gt, 0.7);
        let oracle: Vec<usize> = (0..20).filter(|&i| iou2d(&boxes[i], &gt) >= 0.7).collect();
        assert_eq!(oracle, vec![4, 9, 15]);
        assert_eq!(s.sufficient, 3);
        assert_eq!(s.first_sufficient, Some(5));
        assert_eq!(s.best_index, Some(5));
        assert!((s.precision - 0.15).abs() < 1e-15);

        let r = report(&boxes, &[[150.0, 150.0]], &gt, &[0.5, 0.7]);
        // Box 16 touches the gaze point with its corner.
        assert_eq!(r.distilled.indices, vec![4, 9, 15, 16]);
        assert_eq!(r.thresholds[1].recall, Some(1.0));
        assert_eq!(r.thresholds[1].after.precision, 0.75);
        assert_eq!(r.best_original_index, Some(5));
    }

    fn arb_boxes() -> impl Strategy<Value = Vec<BBox2D>> {
        prop::collection::vec((0.0f64..100.0, 0.0f64..100.0, 0.0f64..50.0, 0.0f64..50.0), 0..60)
            .prop_map(|v| v.into_iter().map(|(x, y, w, h)| b(x, y, x + w, y + h)).collect())
    }

    proptest! {
        #[test]
        fn matches_containment_filter(boxes in arb_boxes(), gx in 0.0f64..150.0, gy in 0.0f64..150.0) {
            let d = distill(&boxes, [gx, gy]);
            let oracle: Vec<usize> = (0..boxes.len())
                .filter(|&i| boxes[i].x1 <= gx && gx <= boxes[i].x2 && boxes[i].y1 <= gy && gy <= boxes[i].y2)
                .collect();
            prop_assert_eq!(&d.indices, &oracle);
            prop_assert!(d.indices.windows(2).all(|w| w[0] < w[1]));
            prop_assert_eq!(distill(&d.boxes, [gx, gy]).boxes, d.boxes.clone());
        }

        #[test]
        fn recall_kept_when_sufficient_boxes_contain_gaze(boxes in arb_boxes(), gx in 40.0f64..60.0, gy in 40.0f64..60.0) {
            let gt = b(30.0, 30.0, 70.0, 70.0);
            // Keep only sufficient boxes that contain g, plus any others.
            let kept: Vec<BBox2D> = boxes.into_iter()
                .filter(|bx| iou2d(bx, &gt) < 0.7 || bx.contains(gx, gy))
                .chain(std::iter::once(gt))
                .collect();
            let r = report(&kept, &[[gx, gy]], &gt, &[0.7]);
            prop_assert_eq!(r.thresholds[0].recall, Some(1.0));
        }
    }
}
