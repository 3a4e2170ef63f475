//! Localization and detection metrics plus the annotation-time model.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::config;
use crate::geometry::{iou, BBox};
use crate::mil::Supervision;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub image_id: String,
    pub class: String,
    #[serde(rename = "box")]
    pub bbox: BBox,
    pub score: f64,
}

/// Fraction of positive images (the keys of `gt`) whose selected box
/// overlaps one of their ground-truth boxes with IoU >= `iou_thresh`.
/// Images without a selection count as failures.
pub fn corloc(
    selections: &BTreeMap<String, BBox>,
    gt: &BTreeMap<String, Vec<BBox>>,
    iou_thresh: f64,
) -> f64 {
    if gt.is_empty() {
        return 0.0;
    }
    let hits = gt
        .iter()
        .filter(|(id, boxes)| {
            selections
                .get(*id)
                .is_some_and(|s| boxes.iter().any(|g| iou(s, g) >= iou_thresh))
        })
        .count();
    hits as f64 / gt.len() as f64
}

/// Greedy per-image NMS, highest score first; ties keep input order.
pub fn nms(detections: &[Detection], iou_thresh: f64) -> Vec<Detection> {
    let mut order: Vec<usize> = (0..detections.len()).collect();
    order.sort_by(|&a, &b| {
        detections[b]
            .score
            .total_cmp(&detections[a].score)
            .then(a.cmp(&b))
    });
    let mut kept: Vec<&Detection> = Vec::new();
    for i in order {
        let d = &detections[i];
        let suppressed = kept
            .iter()
            .any(|k| k.image_id == d.image_id && iou(&k.bbox, &d.bbox) >= iou_thresh);
        if !suppressed {
            kept.push(d);
        }
    }
    kept.into_iter().cloned().collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ApMode {
    /// PASCAL VOC 2007 protocol: mean of interpolated precision at recall 0, 0.1, ..., 1.
    #[default]
    ElevenPoint,
    /// Area under the interpolated precision-recall curve.
    AllPoint,
}

/// Precision/recall after each detection, in descending score order.
///
/// Each detection is matched to its highest-IoU ground-truth box in the
/// same image; it is a true positive if that overlap reaches `iou_thresh`
/// and the box was not already claimed.
pub fn precision_recall(
    detections: &[Detection],
    gt: &BTreeMap<String, Vec<BBox>>,
    iou_thresh: f64,
) -> Vec<(f64, f64)> {
    let n_gt: usize = gt.values().map(Vec::len).sum();
    let mut order: Vec<usize> = (0..detections.len()).collect();
    order.sort_by(|&a, &b| {
        detections[b]
            .score
            .total_cmp(&detections[a].score)
            .then(a.cmp(&b))
    });
    let mut claimed: BTreeMap<&str, Vec<bool>> = gt
        .iter()
        .map(|(k, v)| (k.as_str(), vec![false; v.len()]))
        .collect();
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut curve = Vec::with_capacity(detections.len());
    for i in order {
        let d = &detections[i];
        let mut matched = false;
        if let (Some(boxes), Some(flags)) = (gt.get(&d.image_id), claimed.get_mut(d.image_id.as_str())) {
            let mut best: Option<(usize, f64)> = None;
            for (j, g) in boxes.iter().enumerate() {
                let o = iou(&d.bbox, g);
                if best.is_none_or(|(_, b)| o > b) {
                    best = Some((j, o));
                }
            }
            if let Some((j, o)) = best {
                if o >= iou_thresh && !flags[j] {
                    flags[j] = true;
                    matched = true;
                }
            }
        }
        if matched {
            tp += 1;
        } else {
            fp += 1;
        }
        let recall = if n_gt == 0 { 0.0 } else { tp as f64 / n_gt as f64 };
        curve.push((recall, tp as f64 / (tp + fp) as f64));
    }
    curve
}

pub fn average_precision(
    detections: &[Detection],
    gt: &BTreeMap<String, Vec<BBox>>,
    iou_thresh: f64,
    mode: ApMode,
) -> f64 {
    let curve = precision_recall(detections, gt, iou_thresh);
    match mode {
        ApMode::ElevenPoint => {
            (0..=10)
                .map(|t| {
                    let r = t as f64 / 10.0;
                    curve
                        .iter()
                        .filter(|(rec, _)| *rec >= r - 1e-12)
                        .map(|(_, p)| *p)
                        .fold(0.0, f64::max)
                })
                .sum::<f64>()
                / 11.0
        }
        ApMode::AllPoint => {
            let mut recalls = vec![0.0];
            let mut precisions = vec![0.0];
            for (r, p) in &curve {
                recalls.push(*r);
                precisions.push(*p);
            }
            recalls.push(1.0);
            precisions.push(0.0);
            for i in (0..precisions.len() - 1).rev() {
                precisions[i] = precisions[i].max(precisions[i + 1]);
            }
            (1..recalls.len())
                .map(|i| (recalls[i] - recalls[i - 1]) * precisions[i])
                .sum()
        }
    }
}

/// How positive image-class pairs are annotated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnnotationMode {
    /// Image-level labels only; no extra localization effort.
    ImageLevel,
    OneClick,
    TwoClick,
    /// Manually drawn and verified boxes.
    DrawnBox,
}

impl AnnotationMode {
    pub fn seconds_per_pair(&self) -> f64 {
        match self {
            AnnotationMode::ImageLevel => 0.0,
            AnnotationMode::OneClick => config::CLICK_SECONDS,
            AnnotationMode::TwoClick => 2.0 * config::CLICK_SECONDS,
            AnnotationMode::DrawnBox => config::BOX_SECONDS,
        }
    }
}

impl From<Supervision> for AnnotationMode {
    fn from(s: Supervision) -> Self {
        match s {
            Supervision::None => AnnotationMode::ImageLevel,
            Supervision::OneClick => AnnotationMode::OneClick,
            Supervision::TwoClick => AnnotationMode::TwoClick,
        }
    }
}

/// Localization annotation time, in hours, for `positive_pairs` image-class pairs.
pub fn annotation_time(positive_pairs: usize, mode: AnnotationMode) -> f64 {
    positive_pairs as f64 * mode.seconds_per_pair() / 3600.0
}

pub const METRICS_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub schema_version: u32,
    pub supervision: Supervision,
    pub corloc: f64,
    pub per_class_corloc: BTreeMap<String, f64>,
    pub per_class_ap: BTreeMap<String, f64>,
    pub map: f64,
    pub annotation_time_hours: f64,
    pub positive_pairs: usize,
    pub deep_mil_surrogate: bool,
}

impl MetricReport {
    /// Assemble a report; `map` is the arithmetic mean of `per_class_ap`.
    pub fn new(
        supervision: Supervision,
        per_class_corloc: BTreeMap<String, f64>,
        per_class_ap: BTreeMap<String, f64>,
        corloc: f64,
        positive_pairs: usize,
        deep_mil_surrogate: bool,
    ) -> Self {
        let map = if per_class_ap.is_empty() {
            0.0
        } else {
            per_class_ap.values().sum::<f64>() / per_class_ap.len() as f64
        };
        MetricReport {
            schema_version: METRICS_SCHEMA_VERSION,
            supervision,
            corloc,
            per_class_corloc,
            per_class_ap,
            map,
            annotation_time_hours: annotation_time(positive_pairs, supervision.into()),
            positive_pairs,
            deep_mil_surrogate,
        }
    }
}
