//! COCO-style detection metrics: greedy matching, 101-point interpolated
//! AP, AR at 1/10/100 detections and curve tables.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{iou2d, BBox2D};

pub const RECALL_POINTS: usize = 101;
pub const MAX_DETS: [usize; 3] = [1, 10, 100];

/// 0.50, 0.55, ..., 0.95, computed from integers so they print cleanly.
pub fn iou_thresholds() -> Vec<f64> {
    (0..10).map(|i| (50 + 5 * i) as f64 / 100.0).collect()
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("confidence {0} outside [0, 1]")]
    Confidence(f64),
    #[error("bad box: {0}")]
    Box(String),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub image_id: u64,
    pub class: u64,
    pub bbox: BBox2D,
    pub confidence: f64,
}

impl Detection {
    pub fn new(image_id: u64, class: u64, bbox: BBox2D, confidence: f64) -> Result<Self, EvalError> {
        if !(0.0..=1.0).contains(&confidence) {
            return Err(EvalError::Confidence(confidence));
        }
        Ok(Self { image_id, class, bbox, confidence })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub image_id: u64,
    pub class: u64,
    pub bbox: BBox2D,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CocoImage {
    pub id: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub file_name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub width: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub height: Option<u32>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CocoAnnotation {
    pub id: u64,
    pub image_id: u64,
    pub category_id: u64,
    /// `[x, y, w, h]`.
    pub bbox: [f64; 4],
    #[serde(default)]
    pub iscrowd: u8,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CocoCategory {
    pub id: u64,
    pub name: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CocoDataset {
    pub images: Vec<CocoImage>,
    pub annotations: Vec<CocoAnnotation>,
    pub categories: Vec<CocoCategory>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CocoDetection {
    pub image_id: u64,
    pub category_id: u64,
    pub bbox: [f64; 4],
    pub score: f64,
}

fn xywh(b: [f64; 4]) -> Result<BBox2D, EvalError> {
    BBox2D::from_xywh(b[0], b[1], b[2], b[3]).map_err(|e| EvalError::Box(e.to_string()))
}

pub fn to_xywh(b: &BBox2D) -> [f64; 4] {
    [b.x1, b.y1, b.width(), b.height()]
}

impl CocoDataset {
    pub fn load(path: &Path) -> Result<Self, EvalError> {
        Ok(serde_json::from_slice(&fs::read(path)?)?)
    }

    /// Non-crowd annotations; crowd regions are dropped.
    pub fn ground_truth(&self) -> Result<Vec<GroundTruth>, EvalError> {
        self.annotations
            .iter()
            .filter(|a| a.iscrowd == 0)
            .map(|a| {
                Ok(GroundTruth {
                    image_id: a.image_id,
                    class: a.category_id,
                    bbox: xywh(a.bbox)?,
                })
            })
            .collect()
    }
}

pub fn load_detections(path: &Path) -> Result<Vec<Detection>, EvalError> {
    let raw: Vec<CocoDetection> = serde_json::from_slice(&fs::read(path)?)?;
    raw.into_iter()
        .map(|d| Detection::new(d.image_id, d.category_id, xywh(d.bbox)?, d.score))
        .collect()
}

pub fn save_detections(path: &Path, dets: &[Detection]) -> Result<(), EvalError> {
    let raw: Vec<CocoDetection> = dets
        .iter()
        .map(|d| CocoDetection {
            image_id: d.image_id,
            category_id: d.class,
            bbox: to_xywh(&d.bbox),
            score: d.confidence,
        })
        .collect();
    fs::write(path, serde_json::to_vec_pretty(&raw)?)?;
    Ok(())
}

/// Detection `det` (input position) at its rank, with the matched ground
/// truth if any.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Match {
    pub det: usize,
    pub score: f64,
    pub gt: Option<usize>,
}

/// Indices sorted by confidence, highest first; ties keep input order.
pub fn rank(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    order
}

/// Greedy matching for one image and class. Each detection, in rank order,
/// takes the unmatched ground truth of highest IoU at or above the
/// threshold; equal IoUs go to the lower index.
pub fn match_detections(dets: &[(BBox2D, f64)], gts: &[BBox2D], iou_threshold: f64) -> Vec<Match> {
    let scores: Vec<f64> = dets.iter().map(|d| d.1).collect();
    let mut taken = vec![false; gts.len()];
    rank(&scores)
        .into_iter()
        .map(|i| {
            let mut best: Option<(usize, f64)> = None;
            for (g, gt) in gts.iter().enumerate() {
                if taken[g] {
                    continue;
                }
                let v = iou2d(&dets[i].0, gt);
                if v >= iou_threshold && best.is_none_or(|(_, b)| v > b) {
                    best = Some((g, v));
                }
            }
            if let Some((g, _)) = best {
                taken[g] = true;
            }
            Match {
                det: i,
                score: dets[i].1,
                gt: best.map(|b| b.0),
            }
        })
        .collect()
}

/// Raw precision/recall after each ranked detection.
pub fn pr_points(tp: &[bool], n_gt: usize) -> Vec<(f64, f64)> {
    let mut hits = 0usize;
    tp.iter()
        .enumerate()
        .map(|(i, &t)| {
            hits += t as usize;
            (hits as f64 / n_gt as f64, hits as f64 / (i + 1) as f64)
        })
        .collect()
}

/// Interpolated precision at recall `r / 100` for `r` in 0..=100; the
/// envelope takes the best precision at any recall at or beyond the point.
pub fn interpolated_precision(tp: &[bool], n_gt: usize) -> Vec<f64> {
    if n_gt == 0 {
        return vec![0.0; RECALL_POINTS];
    }
    let pts = pr_points(tp, n_gt);
    let mut env: Vec<f64> = pts.iter().map(|p| p.1).collect();
    for i in (0..env.len().saturating_sub(1)).rev() {
        env[i] = env[i].max(env[i + 1]);
    }
    (0..RECALL_POINTS)
        .map(|r| {
            let at = r as f64 / 100.0;
            let i = pts.partition_point(|p| p.0 < at);
            env.get(i).copied().unwrap_or(0.0)
        })
        .collect()
}

/// 101-point interpolated AP of a ranked hit sequence.
pub fn average_precision(tp: &[bool], n_gt: usize) -> f64 {
    interpolated_precision(tp, n_gt).iter().sum::<f64>() / RECALL_POINTS as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReportOptions {
    /// Counts classes without ground truth, at zero, in the class means.
    pub include_empty_classes: bool,
}

impl Default for ReportOptions {
    fn default() -> Self {
        Self { include_empty_classes: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: u64,
    pub name: String,
    pub gt_count: usize,
    pub det_count: usize,
    pub ap50: f64,
    pub ap75: f64,
    pub ap: f64,
    pub ar1: f64,
    pub ar10: f64,
    pub ar100: f64,
    /// AP at each IoU threshold.
    pub ap_iou: Vec<f64>,
    /// Recall at 100 detections at each IoU threshold.
    pub recall_iou: Vec<f64>,
    /// Interpolated precision at the 101 recall points, IoU 0.5.
    pub pr50: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub options: ReportOptions,
    pub iou_thresholds: Vec<f64>,
    pub classes: Vec<ClassMetrics>,
    /// Detection classes missing from the category list.
    pub unknown_classes: Vec<u64>,
    pub map50: f64,
    pub map75: f64,
    pub map: f64,
    pub mar1: f64,
    pub mar10: f64,
    pub mar100: f64,
    /// Class-mean AP and recall per IoU threshold.
    pub ap_iou: Vec<f64>,
    pub recall_iou: Vec<f64>,
}

type ImageGroup = (Vec<(BBox2D, f64)>, Vec<BBox2D>);

/// Ranked hit flags pooled over images, keeping each image's top `max_dets`.
fn pooled_hits(groups: &BTreeMap<u64, ImageGroup>, thr: f64, max_dets: usize) -> Vec<bool> {
    let mut pooled: Vec<(f64, bool)> = Vec::new();
    for (dets, gts) in groups.values() {
        let ranked = match_detections(dets, gts, thr);
        pooled.extend(ranked.iter().take(max_dets).map(|m| (m.score, m.gt.is_some())));
    }
    let scores: Vec<f64> = pooled.iter().map(|p| p.0).collect();
    rank(&scores).into_iter().map(|i| pooled[i].1).collect()
}

fn class_metrics(class: u64, name: String, dets: &[&Detection], gts: &[&GroundTruth]) -> ClassMetrics {
    let mut groups: BTreeMap<u64, ImageGroup> = BTreeMap::new();
    for d in dets {
        groups.entry(d.image_id).or_default().0.push((d.bbox, d.confidence));
    }
    for g in gts {
        groups.entry(g.image_id).or_default().1.push(g.bbox);
    }
    let n_gt = gts.len();
    let thresholds = iou_thresholds();
    let recall_at = |hits: &[bool]| {
        if n_gt == 0 {
            0.0
        } else {
            hits.iter().filter(|&&h| h).count() as f64 / n_gt as f64
        }
    };
    let mut ap_iou = Vec::new();
    let mut recall_iou = Vec::new();
    let mut ar = [0.0; 3];
    let mut pr50 = Vec::new();
    for (t, &thr) in thresholds.iter().enumerate() {
        let hits = pooled_hits(&groups, thr, MAX_DETS[2]);
        if t == 0 {
            pr50 = interpolated_precision(&hits, n_gt);
        }
        ap_iou.push(average_precision(&hits, n_gt));
        recall_iou.push(recall_at(&hits));
        for (k, &md) in MAX_DETS.iter().enumerate() {
            ar[k] += recall_at(&pooled_hits(&groups, thr, md));
        }
    }
    let nt = thresholds.len() as f64;
    ClassMetrics {
        class,
        name,
        gt_count: n_gt,
        det_count: dets.len(),
        ap50: ap_iou[0],
        ap75: ap_iou[5],
        ap: ap_iou.iter().sum::<f64>() / nt,
        ar1: ar[0] / nt,
        ar10: ar[1] / nt,
        ar100: ar[2] / nt,
        ap_iou,
        recall_iou,
        pr50,
    }
}

/// Full metric grid. `categories` names the known classes; detections of
/// other classes are still scored and are listed as unknown.
pub fn report(
    dets: &[Detection],
    gts: &[GroundTruth],
    categories: &[(u64, String)],
    options: ReportOptions,
) -> MetricReport {
    let names: BTreeMap<u64, String> = categories.iter().cloned().collect();
    let mut classes: BTreeSet<u64> = names.keys().copied().collect();
    classes.extend(gts.iter().map(|g| g.class));
    let unknown: BTreeSet<u64> = dets.iter().map(|d| d.class).filter(|c| !classes.contains(c)).collect();
    classes.extend(&unknown);

    let per_class: Vec<ClassMetrics> = classes
        .into_iter()
        .collect::<Vec<_>>()
        .par_iter()
        .map(|&c| {
            let d: Vec<&Detection> = dets.iter().filter(|d| d.class == c).collect();
            let g: Vec<&GroundTruth> = gts.iter().filter(|g| g.class == c).collect();
            let name = names.get(&c).cloned().unwrap_or_else(|| c.to_string());
            class_metrics(c, name, &d, &g)
        })
        .collect();

    let counted: Vec<&ClassMetrics> = per_class
        .iter()
        .filter(|c| options.include_empty_classes || c.gt_count > 0)
        .collect();
    let mean = |f: &dyn Fn(&ClassMetrics) -> f64| {
        if counted.is_empty() {
            0.0
        } else {
            counted.iter().map(|c| f(c)).sum::<f64>() / counted.len() as f64
        }
    };
    let thresholds = iou_thresholds();
    MetricReport {
        options,
        ap_iou: (0..thresholds.len()).map(|t| mean(&|c| c.ap_iou[t])).collect(),
        recall_iou: (0..thresholds.len()).map(|t| mean(&|c| c.recall_iou[t])).collect(),
        iou_thresholds: thresholds,
        map50: mean(&|c| c.ap50),
        map75: mean(&|c| c.ap75),
        map: mean(&|c| c.ap),
        mar1: mean(&|c| c.ar1),
        mar10: mean(&|c| c.ar10),
        mar100: mean(&|c| c.ar100),
        unknown_classes: unknown.into_iter().collect(),
        classes: per_class,
    }
}

pub fn report_coco(dataset: &CocoDataset, dets: &[Detection], options: ReportOptions) -> Result<MetricReport, EvalError> {
    let cats: Vec<(u64, String)> = dataset.categories.iter().map(|c| (c.id, c.name.clone())).collect();
    Ok(report(dets, &dataset.ground_truth()?, &cats, options))
}

impl MetricReport {
    /// `report.json`, `classes.csv`, `pr50.csv` and `iou_curves.csv`.
    pub fn write(&self, dir: &Path) -> Result<(), EvalError> {
        fs::create_dir_all(dir)?;
        let mut f = fs::File::create(dir.join("report.json"))?;
        f.write_all(&serde_json::to_vec_pretty(self)?)?;
        f.write_all(b"\n")?;

        let mut w = csv::Writer::from_path(dir.join("classes.csv"))?;
        w.write_record(["class", "name", "gt", "dets", "ap50", "ap75", "ap", "ar1", "ar10", "ar100"])?;
        for c in &self.classes {
            w.write_record([
                c.class.to_string(),
                c.name.clone(),
                c.gt_count.to_string(),
                c.det_count.to_string(),
                c.ap50.to_string(),
                c.ap75.to_string(),
                c.ap.to_string(),
                c.ar1.to_string(),
                c.ar10.to_string(),
                c.ar100.to_string(),
            ])?;
        }
        w.flush()?;

        let mut w = csv::Writer::from_path(dir.join("pr50.csv"))?;
        w.write_record(["class", "recall", "precision"])?;
        for c in &self.classes {
            for (r, p) in c.pr50.iter().enumerate() {
                w.write_record([c.class.to_string(), (r as f64 / 100.0).to_string(), p.to_string()])?;
            }
        }
        w.flush()?;

        let mut w = csv::Writer::from_path(dir.join("iou_curves.csv"))?;
        w.write_record(["iou", "ap", "recall"])?;
        for (t, thr) in self.iou_thresholds.iter().enumerate() {
            w.write_record([thr.to_string(), self.ap_iou[t].to_string(), self.recall_iou[t].to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}
