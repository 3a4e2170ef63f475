//! Default constants shared across the pipeline.
//!
//! Every value that matters for reproducing the annotation protocol lives
//! here so a single snapshot test can pin them.

use serde::{Deserialize, Serialize};

/// Mean click error (px) strictly below which an annotator passes.
pub const QUALIFICATION_THRESHOLD_PX: f64 = 20.0;
/// Polygons per qualification attempt.
pub const QUALIFICATION_POLYGONS: usize = 20;
/// Qualification canvas size (px).
pub const QUALIFICATION_CANVAS: (f64, f64) = (500.0, 375.0);

/// Distance (px) beyond which two clicks are assumed to target different instances.
pub const D_MAX_PX: f64 = 70.0;
/// Percentile used when `d_max` is fitted instead of pinned.
pub const D_MAX_PERCENTILE: f64 = 99.5;
/// Lower bound on the area-score width, in log-area units.
pub const SIGMA_BA_FLOOR: f64 = 1e-3;
/// Default polynomial degree of the click-distance to log-area regressor.
pub const MU_DEGREE: usize = 2;
/// Default degree of the area to click-error law.
pub const SIM_LAW_DEGREE: usize = 2;
pub const MIN_SIGMA_BC_SAMPLES: usize = 30;
pub const MIN_MU_PAIRS: usize = 50;

/// Images per annotation batch, golden items included.
pub const BATCH_SIZE: usize = 20;
/// Golden items hidden in every batch.
pub const GOLDEN_PER_BATCH: usize = 2;
/// Distinct annotators asked to click each image-class pair.
pub const CLICKS_PER_OBJECT: usize = 2;
/// Pacing shown in the instructions; not enforced.
pub const SUGGESTED_SECONDS_PER_CLICK: f64 = 3.0;

pub const MIL_FOLDS: usize = 10;
pub const MIL_ITERATIONS: usize = 10;
/// Extra iterations standing in for the CNN re-training rounds.
pub const DEEP_MIL_SURROGATE_ITERATIONS: usize = 2;
pub const NEGATIVES_PER_IMAGE: usize = 50;
pub const SVM_LAMBDA: f64 = 1e-4;
pub const SVM_TOLERANCE: f64 = 1e-6;
pub const SVM_MAX_EPOCHS: usize = 200;

pub const CORLOC_IOU: f64 = 0.5;
pub const AP_IOU: f64 = 0.5;
pub const NMS_IOU: f64 = 0.3;

/// Mean measured response time for one center click (s).
pub const CLICK_SECONDS: f64 = 1.87;
/// Drawing a box (25.5 s) plus verifying it (9.0 s).
pub const BOX_DRAW_SECONDS: f64 = 25.5;
pub const BOX_VERIFY_SECONDS: f64 = 9.0;
pub const BOX_SECONDS: f64 = BOX_DRAW_SECONDS + BOX_VERIFY_SECONDS;

/// Serializable view of the defaults, written into provenance records and
/// compared by the configuration snapshot test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Defaults {
    pub qualification_threshold_px: f64,
    pub qualification_polygons: usize,
    pub d_max_px: f64,
    pub batch_size: usize,
    pub golden_per_batch: usize,
    pub clicks_per_object: usize,
    pub mil_folds: usize,
    pub mil_iterations: usize,
    pub deep_mil_surrogate_iterations: usize,
    pub click_seconds: f64,
    pub box_seconds: f64,
    pub corloc_iou: f64,
    pub nms_iou: f64,
}

impl Default for Defaults {
    fn default() -> Self {
        Defaults {
            qualification_threshold_px: QUALIFICATION_THRESHOLD_PX,
            qualification_polygons: QUALIFICATION_POLYGONS,
            d_max_px: D_MAX_PX,
            batch_size: BATCH_SIZE,
            golden_per_batch: GOLDEN_PER_BATCH,
            clicks_per_object: CLICKS_PER_OBJECT,
            mil_folds: MIL_FOLDS,
            mil_iterations: MIL_ITERATIONS,
            deep_mil_surrogate_iterations: DEEP_MIL_SURROGATE_ITERATIONS,
            click_seconds: CLICK_SECONDS,
            box_seconds: BOX_SECONDS,
            corloc_iou: CORLOC_IOU,
            nms_iou: NMS_IOU,
        }
    }
}
