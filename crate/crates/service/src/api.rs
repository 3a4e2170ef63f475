//! Request and response bodies. Every response carries `schema_version`.

use clickmil::Point;
use serde::{Deserialize, Serialize};

pub const API_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionState {
    Untrained,
    Qualified,
    Annotating,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct NewSession {
    pub annotator_id: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SessionCreated {
    pub schema_version: u32,
    pub session_id: String,
    pub annotator_id: String,
    pub token: String,
    pub state: SessionState,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Canvas {
    pub width: f64,
    pub height: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PolygonTask {
    pub polygon_id: String,
    pub vertices: Vec<Point>,
}

/// Answer to `GET /qualification`. A qualified session gets no polygons.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QualificationTest {
    pub schema_version: u32,
    pub state: SessionState,
    pub attempt_id: Option<String>,
    pub canvas: Canvas,
    pub polygons: Vec<PolygonTask>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PolygonClick {
    pub polygon_id: String,
    pub x: f64,
    pub y: f64,
    pub time_ms: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QualificationSubmission {
    pub attempt_id: String,
    pub clicks: Vec<PolygonClick>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeedbackRow {
    pub polygon_id: String,
    pub center: Point,
    pub click: Point,
    pub distance: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QualificationOutcome {
    pub schema_version: u32,
    pub passed: bool,
    pub mean_error: f64,
    pub threshold: f64,
    pub state: SessionState,
    pub attempts: u32,
    pub feedback: Vec<FeedbackRow>,
}

/// One image to click. Golden and regular items share this exact shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchItem {
    pub item_id: String,
    pub image_id: String,
    pub width: f64,
    pub height: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BatchPayload {
    pub schema_version: u32,
    /// `None` with an empty item list when no work is left.
    pub batch_id: Option<String>,
    pub class: Option<String>,
    pub items: Vec<BatchItem>,
    pub suggested_seconds_per_click: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ItemClick {
    pub item_id: String,
    pub x: f64,
    pub y: f64,
    pub time_ms: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BatchSubmission {
    pub batch_id: String,
    pub clicks: Vec<ItemClick>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BatchOutcome {
    pub schema_version: u32,
    pub accepted: bool,
    pub golden_mean_error: f64,
    pub threshold: f64,
    pub mean_response_time_ms: f64,
    pub persisted: usize,
    pub message: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Instructions {
    pub schema_version: u32,
    pub title: String,
    pub task: String,
    pub rules: Vec<String>,
    pub qualification: String,
    pub suggested_seconds_per_click: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ErrorBody {
    pub schema_version: u32,
    pub error: String,
}
