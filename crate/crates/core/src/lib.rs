//! Center-click supervision for weakly supervised object localization.
//!
//! The crate is organized around the pipeline:
//!
//! * [`geometry`]: points, boxes, polygons and overlap measures.
//! * [`annotator`]: qualification polygons, annotator error models and click simulation.
//! * [`mil`]: multi-fold Multiple Instance Learning with click-derived scores.
//! * [`eval`]: CorLoc, NMS, average precision and the annotation-time model.
//! * [`datastore`]: on-disk formats, the synthetic benchmark generator and the click log.
//! * [`config`]: default constants shared by every stage.

pub mod annotator;
pub mod config;
pub mod datastore;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod mil;
pub mod pipeline;
pub mod poly;

pub use error::{Error, Result};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
pub use geometry::{euclidean, iou, max_window_at, polygon_bbox_center, BBox, Point, Polygon};
