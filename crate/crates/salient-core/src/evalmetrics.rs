//! Detection evaluation: mAP over IoU thresholds 0.50..0.95, mAR with one
//! detection per image, and set-level F1/precision/recall averaged over the
//! same thresholds.
//!
//! Matching follows the standard COCO protocol: detections are processed in
//! descending score order (ties by input order) and each greedily takes the
//! highest-IoU unmatched ground truth of its image and category with IoU at
//! or above the threshold. AP uses 101-point interpolation.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::datasetio::{DetectionRecord, GroundTruthRecord};
use crate::geometry::iou_bbox;

/// The ten thresholds behind every `*_50_95` metric.
pub const IOU_THRESHOLDS: [f64; 10] = [0.50, 0.55, 0.60, 0.65, 0.70, 0.75, 0.80, 0.85, 0.90, 0.95];

pub const DEFAULT_SCORE_CUTOFF: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub map_50_95: f64,
    pub mar_1: f64,
    pub f1_50_95: f64,
    pub precision_50_95: f64,
    pub recall_50_95: f64,
    pub per_category: BTreeMap<String, CategoryMetrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryMetrics {
    pub ap_50_95: f64,
    /// `None` when the category has no ground truth (recall is undefined).
    pub ar_1: Option<f64>,
}

/// Detection indices sorted by descending score, ties by input order.
fn score_order(dets: &[DetectionRecord]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| {
        dets[b]
            .score
            .partial_cmp(&dets[a].score)
            .expect("scores are finite")
            .then(a.cmp(&b))
    });
    order
}

fn greedy_match(
    dets: &[DetectionRecord],
    order: &[usize],
    gts: &[GroundTruthRecord],
    iou_thr: f64,
) -> Vec<Option<usize>> {
    let mut taken = vec![false; gts.len()];
    let mut matches = vec![None; dets.len()];
    for &d in order {
        let det = &dets[d];
        let mut best: Option<(f64, usize)> = None;
        for (g, gt) in gts.iter().enumerate() {
            if taken[g] || gt.image_id != det.image_id || gt.category_id != det.category_id {
                continue;
            }
            let iou = iou_bbox(&det.bbox, &gt.bbox);
            if iou >= iou_thr && best.map_or(true, |(b, _)| iou > b) {
                best = Some((iou, g));
            }
        }
        if let Some((_, g)) = best {
            taken[g] = true;
            matches[d] = Some(g);
        }
    }
    matches
}

/// Greedy one-to-one matching per image and category. The result is aligned
/// to the input detection order.
pub fn match_detections(
    dets: &[DetectionRecord],
    gts: &[GroundTruthRecord],
    iou_thr: f64,
) -> Vec<Option<usize>> {
    greedy_match(dets, &score_order(dets), gts, iou_thr)
}

/// 101-point interpolated AP at one threshold. `None` when neither
/// detections nor ground truths exist (undefined, excluded from means);
/// 0 when ground truths exist and nothing matches, or when detections have
/// no ground truth to hit.
pub fn average_precision(
    dets: &[DetectionRecord],
    gts: &[GroundTruthRecord],
    iou_thr: f64,
) -> Option<f64> {
    if gts.is_empty() {
        return if dets.is_empty() { None } else { Some(0.0) };
    }
    if dets.is_empty() {
        return Some(0.0);
    }
    let order = score_order(dets);
    let matches = greedy_match(dets, &order, gts, iou_thr);
    let mut points = Vec::with_capacity(order.len());
    let mut tp = 0usize;
    for (rank, &d) in order.iter().enumerate() {
        if matches[d].is_some() {
            tp += 1;
        }
        let recall = tp as f64 / gts.len() as f64;
        let precision = tp as f64 / (rank + 1) as f64;
        points.push((recall, precision));
    }
    Some(interpolated_ap_101(&points))
}

/// `points` are (recall, precision) along the detection ranking, recall
/// non-decreasing. The interpolated precision at recall `r` is the maximum
/// precision among points with recall >= r.
fn interpolated_ap_101(points: &[(f64, f64)]) -> f64 {
    // Running maximum of precision from the right.
    let mut best_from: Vec<f64> = vec![0.0; points.len() + 1];
    for i in (0..points.len()).rev() {
        best_from[i] = best_from[i + 1].max(points[i].1);
    }
    let mut total = 0.0;
    for k in 0..=100u32 {
        let r = k as f64 / 100.0;
        let idx = points.partition_point(|(recall, _)| *recall < r);
        total += best_from[idx];
    }
    total / 101.0
}

fn recall_top1(dets: &[DetectionRecord], gts: &[GroundTruthRecord], iou_thr: f64) -> f64 {
    // Keep only the highest-scored detection per image (ties by input order).
    let mut best_per_image: BTreeMap<i64, usize> = BTreeMap::new();
    for (i, det) in dets.iter().enumerate() {
        let slot = best_per_image.entry(det.image_id).or_insert(i);
        if dets[*slot].score < det.score {
            *slot = i;
        }
    }
    let kept: Vec<DetectionRecord> = best_per_image
        .values()
        .map(|&i| dets[i].clone())
        .collect();
    let matches = match_detections(&kept, gts, iou_thr);
    let tp = matches.iter().filter(|m| m.is_some()).count();
    tp as f64 / gts.len() as f64
}

/// Evaluate the full metric set. Set-level precision/recall/F1 consider only
/// detections with `score >= score_cutoff`, pooled over every image and
/// category; mAP and mAR@1 are category means, threshold-averaged.
pub fn evaluate(
    dets: &[DetectionRecord],
    gts: &[GroundTruthRecord],
    score_cutoff: f64,
) -> MetricsReport {
    let categories: BTreeSet<i64> = dets
        .iter()
        .map(|d| d.category_id)
        .chain(gts.iter().map(|g| g.category_id))
        .collect();

    let det_by_cat: BTreeMap<i64, Vec<DetectionRecord>> = categories
        .iter()
        .map(|&c| {
            (
                c,
                dets.iter().filter(|d| d.category_id == c).cloned().collect(),
            )
        })
        .collect();
    let gt_by_cat: BTreeMap<i64, Vec<GroundTruthRecord>> = categories
        .iter()
        .map(|&c| {
            (
                c,
                gts.iter().filter(|g| g.category_id == c).cloned().collect(),
            )
        })
        .collect();

    let mut ap_sum_per_cat: BTreeMap<i64, f64> = BTreeMap::new();
    let mut ar_sum_per_cat: BTreeMap<i64, f64> = BTreeMap::new();
    let mut map_sum = 0.0;
    let mut mar_sum = 0.0;
    let mut precision_sum = 0.0;
    let mut recall_sum = 0.0;
    let mut f1_sum = 0.0;

    let cut: Vec<DetectionRecord> = dets
        .iter()
        .filter(|d| d.score >= score_cutoff)
        .cloned()
        .collect();

    for &thr in &IOU_THRESHOLDS {
        // Mean AP over categories with a defined AP at this threshold.
        let mut ap_sum = 0.0;
        let mut ap_count = 0usize;
        for &c in &categories {
            if let Some(ap) = average_precision(&det_by_cat[&c], &gt_by_cat[&c], thr) {
                ap_sum += ap;
                ap_count += 1;
                *ap_sum_per_cat.entry(c).or_insert(0.0) += ap;
            }
        }
        map_sum += if ap_count == 0 { 0.0 } else { ap_sum / ap_count as f64 };

        // Mean top-1 recall over categories that have ground truth.
        let mut ar_sum = 0.0;
        let mut ar_count = 0usize;
        for &c in &categories {
            if gt_by_cat[&c].is_empty() {
                continue;
            }
            let ar = recall_top1(&det_by_cat[&c], &gt_by_cat[&c], thr);
            ar_sum += ar;
            ar_count += 1;
            *ar_sum_per_cat.entry(c).or_insert(0.0) += ar;
        }
        mar_sum += if ar_count == 0 { 0.0 } else { ar_sum / ar_count as f64 };

        // Pooled set-level precision / recall / F1 at the score cutoff.
        let matches = match_detections(&cut, gts, thr);
        let tp = matches.iter().filter(|m| m.is_some()).count();
        let precision = if cut.is_empty() { 0.0 } else { tp as f64 / cut.len() as f64 };
        let recall = if gts.is_empty() { 0.0 } else { tp as f64 / gts.len() as f64 };
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        precision_sum += precision;
        recall_sum += recall;
        f1_sum += f1;
    }

    let n_thr = IOU_THRESHOLDS.len() as f64;
    let per_category = categories
        .iter()
        .map(|&c| {
            (
                c.to_string(),
                CategoryMetrics {
                    ap_50_95: ap_sum_per_cat.get(&c).copied().unwrap_or(0.0) / n_thr,
                    ar_1: if gt_by_cat[&c].is_empty() {
                        None
                    } else {
                        Some(ar_sum_per_cat.get(&c).copied().unwrap_or(0.0) / n_thr)
                    },
                },
            )
        })
        .collect();

    MetricsReport {
        map_50_95: map_sum / n_thr,
        mar_1: mar_sum / n_thr,
        f1_50_95: f1_sum / n_thr,
        precision_50_95: precision_sum / n_thr,
        recall_50_95: recall_sum / n_thr,
        per_category,
    }
}
