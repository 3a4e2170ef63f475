//! Python bindings: geometry, scores, error-model fitting, the synthetic
//! benchmark, click simulation, MIL training and evaluation.
//!
//!     import clickmil
//!     ds = clickmil.Dataset.synthetic(seed=0, positive_images=100, negative_images=100)
//!     model = clickmil.ErrorModel.replica()
//!     clicks = clickmil.simulate_clicks(ds, model, clicks_per_object=1, seed=0)
//!     result = clickmil.train(ds, clicks, supervision="one-click", error_model=model)
//!     print(result.evaluate(ds)["corloc"])

use std::collections::BTreeMap;
use std::path::PathBuf;

use pyo3::exceptions::{PyOSError, PyValueError};
use pyo3::prelude::*;

use clickmil::annotator::{self, ErrorModel, FitOptions};
use clickmil::datastore::{ClickEntry, Dataset, Split, SyntheticConfig, TraceRecord};
use clickmil::eval::{AnnotationMode, ApMode};
use clickmil::mil::{AppearanceModel, MilConfig, Selection, Supervision};
use clickmil::{config, pipeline, BBox, Point, Polygon};

fn err(e: clickmil::Error) -> PyErr {
    match e {
        clickmil::Error::Io { .. } | clickmil::Error::MissingFile(_) => PyOSError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn parse_split(split: &str) -> PyResult<Split> {
    match split {
        "train" => Ok(Split::Train),
        "test" => Ok(Split::Test),
        _ => Err(PyValueError::new_err(format!("split must be 'train' or 'test', got {split:?}"))),
    }
}

#[pyclass(name = "Point", frozen, from_py_object)]
#[derive(Clone, Copy)]
struct PyPoint(Point);

#[pymethods]
impl PyPoint {
    #[new]
    fn new(x: f64, y: f64) -> Self {
        PyPoint(Point::new(x, y))
    }

    #[getter]
    fn x(&self) -> f64 {
        self.0.x
    }

    #[getter]
    fn y(&self) -> f64 {
        self.0.y
    }

    fn __repr__(&self) -> String {
        format!("Point({}, {})", self.0.x, self.0.y)
    }
}

/// Axis-aligned box; `(x, y)` is the top-left corner.
#[pyclass(name = "BBox", frozen, eq, from_py_object)]
#[derive(Clone, Copy, PartialEq)]
struct PyBBox(BBox);

#[pymethods]
impl PyBBox {
    #[new]
    fn new(x: f64, y: f64, w: f64, h: f64) -> PyResult<Self> {
        BBox::new(x, y, w, h).map(PyBBox).map_err(err)
    }

    #[getter]
    fn x(&self) -> f64 {
        self.0.x()
    }

    #[getter]
    fn y(&self) -> f64 {
        self.0.y()
    }

    #[getter]
    fn w(&self) -> f64 {
        self.0.w()
    }

    #[getter]
    fn h(&self) -> f64 {
        self.0.h()
    }

    fn center(&self) -> PyPoint {
        PyPoint(self.0.center())
    }

    fn area(&self) -> f64 {
        self.0.area()
    }

    fn iou(&self, other: &PyBBox) -> f64 {
        clickmil::iou(&self.0, &other.0)
    }

    fn __repr__(&self) -> String {
        format!("BBox({}, {}, {}, {})", self.0.x(), self.0.y(), self.0.w(), self.0.h())
    }
}

#[pyclass(name = "ErrorModel", from_py_object)]
#[derive(Clone)]
struct PyErrorModel(ErrorModel);

#[pymethods]
impl PyErrorModel {
    /// The model fitted on the built-in replica qualification corpus.
    #[staticmethod]
    #[pyo3(signature = (seed = pipeline::REPLICA_SEED))]
    fn replica(seed: u64) -> PyResult<Self> {
        pipeline::replica_error_model(seed, &FitOptions::default())
            .map(PyErrorModel)
            .map_err(err)
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        ErrorModel::from_json(text).map(PyErrorModel).map_err(err)
    }

    fn to_json(&self) -> PyResult<String> {
        self.0.to_json().map_err(err)
    }

    #[getter]
    fn sigma_bc(&self) -> f64 {
        self.0.sigma_bc
    }

    #[setter]
    fn set_sigma_bc(&mut self, v: f64) -> PyResult<()> {
        let mut m = self.0.clone();
        m.sigma_bc = v;
        m.validate().map_err(err)?;
        self.0 = m;
        Ok(())
    }

    #[getter]
    fn d_max(&self) -> f64 {
        self.0.d_max
    }

    #[getter]
    fn sigma_ba(&self) -> f64 {
        self.0.sigma_ba
    }

    #[getter]
    fn mu_coeffs(&self) -> Vec<f64> {
        self.0.mu_coeffs.coeffs().to_vec()
    }

    #[getter]
    fn sim_distance_coeffs(&self) -> Vec<f64> {
        self.0.sim_distance_coeffs.coeffs().to_vec()
    }

    fn log_area_estimate(&self, click_distance: f64, image_area: f64) -> f64 {
        self.0.log_area_estimate(click_distance, image_area)
    }

    fn expected_click_error(&self, sqrt_area: f64) -> f64 {
        self.0.expected_click_error(sqrt_area)
    }

    fn __repr__(&self) -> String {
        format!(
            "ErrorModel(sigma_bc={:.3}, d_max={}, sigma_ba={:.4})",
            self.0.sigma_bc, self.0.d_max, self.0.sigma_ba
        )
    }
}

#[pyclass(name = "Click", frozen, from_py_object)]
#[derive(Clone)]
struct PyClick(ClickEntry);

#[pymethods]
impl PyClick {
    #[new]
    #[pyo3(signature = (image_id, class_name, x, y, annotator_id = "python".to_string(), time_ms = 0.0))]
    fn new(image_id: String, class_name: String, x: f64, y: f64, annotator_id: String, time_ms: f64) -> Self {
        PyClick(ClickEntry {
            seq: 0,
            image_id,
            class: class_name,
            annotator_id,
            x,
            y,
            time_ms,
            supersedes: None,
        })
    }

    #[getter]
    fn image_id(&self) -> &str {
        &self.0.image_id
    }

    #[getter]
    fn class_name(&self) -> &str {
        &self.0.class
    }

    #[getter]
    fn annotator_id(&self) -> &str {
        &self.0.annotator_id
    }

    #[getter]
    fn x(&self) -> f64 {
        self.0.x
    }

    #[getter]
    fn y(&self) -> f64 {
        self.0.y
    }

    #[getter]
    fn time_ms(&self) -> f64 {
        self.0.time_ms
    }

    fn __repr__(&self) -> String {
        format!("Click({:?}, {:?}, {}, {})", self.0.image_id, self.0.class, self.0.x, self.0.y)
    }
}

#[pyclass(name = "Dataset")]
struct PyDataset(Dataset);

#[pymethods]
impl PyDataset {
    /// Seeded synthetic benchmark dataset.
    #[staticmethod]
    #[pyo3(signature = (
        seed = 0,
        positive_images = 500,
        negative_images = 500,
        test_images = 200,
        proposals_per_image = 30,
        overlap = 0.5,
        classes = None,
    ))]
    fn synthetic(
        seed: u64,
        positive_images: usize,
        negative_images: usize,
        test_images: usize,
        proposals_per_image: usize,
        overlap: f64,
        classes: Option<Vec<String>>,
    ) -> PyResult<Self> {
        let d = SyntheticConfig::default();
        let cfg = SyntheticConfig {
            seed,
            positive_images,
            negative_images,
            test_images,
            proposals_per_image,
            overlap,
            classes: classes.unwrap_or(d.classes.clone()),
            ..d
        };
        clickmil::datastore::generate_synthetic(&cfg).map(PyDataset).map_err(err)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Dataset::load(&path).map(PyDataset).map_err(err)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.0.save(&path).map_err(err)
    }

    #[getter]
    fn classes(&self) -> Vec<String> {
        self.0.manifest.classes.clone()
    }

    #[getter]
    fn feature_dim(&self) -> usize {
        self.0.manifest.feature_dim
    }

    #[pyo3(signature = (split = "train"))]
    fn positive_pairs(&self, split: &str) -> PyResult<usize> {
        Ok(self.0.positive_pairs(parse_split(split)?))
    }

    /// Ground-truth boxes of one class, keyed by image id.
    #[pyo3(signature = (class_name, split = "train"))]
    fn gt_boxes(&self, class_name: &str, split: &str) -> PyResult<BTreeMap<String, Vec<PyBBox>>> {
        Ok(self
            .0
            .gt_boxes(class_name, parse_split(split)?)
            .into_iter()
            .map(|(k, v)| (k, v.into_iter().map(PyBBox).collect()))
            .collect())
    }

    fn __len__(&self) -> usize {
        self.0.manifest.images.len()
    }
}

#[pyclass(name = "TrainResult")]
struct PyTrainResult {
    selections: Vec<Selection>,
    models: BTreeMap<String, AppearanceModel>,
    trace: Vec<TraceRecord>,
    mil: MilConfig,
}

#[pymethods]
impl PyTrainResult {
    /// `(image_id, class, box, score)` per positive training image.
    #[getter]
    fn selections(&self) -> Vec<(String, String, PyBBox, f64)> {
        self.selections
            .iter()
            .map(|s| (s.image_id.clone(), s.class.clone(), PyBBox(s.bbox), s.score))
            .collect()
    }

    /// `(class, iteration, corloc)` for the initialization and every iteration.
    #[getter]
    fn trace(&self) -> Vec<(String, usize, Option<f64>)> {
        self.trace
            .iter()
            .map(|t| (t.class.clone(), t.stats.iteration, t.stats.corloc))
            .collect()
    }

    #[getter]
    fn supervision(&self) -> String {
        self.mil.supervision.to_string()
    }

    fn corloc(&self, dataset: &PyDataset) -> BTreeMap<String, f64> {
        pipeline::corloc_per_class(&dataset.0, &self.selections)
    }

    /// Metric report as a dict.
    #[pyo3(signature = (dataset, all_point = false))]
    fn evaluate<'py>(&self, py: Python<'py>, dataset: &PyDataset, all_point: bool) -> PyResult<Bound<'py, PyAny>> {
        let mode = if all_point { ApMode::AllPoint } else { ApMode::ElevenPoint };
        let report = pipeline::evaluate(&dataset.0, &self.selections, &self.models, &self.mil, mode);
        let text = serde_json::to_string(&report).map_err(|e| PyValueError::new_err(e.to_string()))?;
        py.import("json")?.call_method1("loads", (text,))
    }
}

#[pyfunction]
fn euclidean(a: PyPoint, b: PyPoint) -> f64 {
    clickmil::euclidean(&a.0, &b.0)
}

#[pyfunction]
fn iou(a: PyBBox, b: PyBBox) -> f64 {
    clickmil::iou(&a.0, &b.0)
}

/// Largest window centered on `click` that fits in the image.
#[pyfunction]
fn max_window_at(click: PyPoint, width: f64, height: f64) -> PyResult<PyBBox> {
    clickmil::max_window_at(&click.0, width, height).map(PyBBox).map_err(err)
}

/// Tight box and its center for a polygon given as `[(x, y), ...]`.
#[pyfunction]
fn polygon_bbox_center(vertices: Vec<(f64, f64)>) -> PyResult<(PyBBox, PyPoint)> {
    let poly = Polygon::new(vertices.into_iter().map(|(x, y)| Point::new(x, y)).collect()).map_err(err)?;
    let (b, c) = clickmil::polygon_bbox_center(&poly);
    Ok((PyBBox(b), PyPoint(c)))
}

#[pyfunction]
#[pyo3(signature = (center, clicks, sigma_bc, d_max = config::D_MAX_PX))]
fn score_s_bc(center: PyPoint, clicks: Vec<PyPoint>, sigma_bc: f64, d_max: f64) -> f64 {
    let clicks: Vec<Point> = clicks.into_iter().map(|p| p.0).collect();
    clickmil::mil::score_s_bc(&center.0, &clicks, sigma_bc, d_max)
}

#[pyfunction]
fn score_s_ba(bbox: PyBBox, c1: PyPoint, c2: PyPoint, model: &PyErrorModel, image_area: f64) -> f64 {
    clickmil::mil::score_s_ba(&bbox.0, &c1.0, &c2.0, &model.0, image_area)
}

#[pyfunction]
fn score_s_ap(calibrated_appearance: f64, objectness: f64) -> f64 {
    clickmil::mil::score_s_ap(calibrated_appearance, objectness)
}

#[pyfunction]
fn fit_sigma_bc(errors: Vec<f64>) -> PyResult<f64> {
    annotator::fit_sigma_bc(&errors).map_err(err)
}

/// Coefficients, lowest order first.
#[pyfunction]
#[pyo3(signature = (pairs, degree = config::MU_DEGREE))]
fn fit_mu(pairs: Vec<(f64, f64)>, degree: usize) -> PyResult<Vec<f64>> {
    annotator::fit_mu(&pairs, degree).map(|p| p.coeffs().to_vec()).map_err(err)
}

/// `(passed, mean_error, per_polygon_errors)`; `clicks[i]` answers `polygons[i]`.
#[pyfunction]
#[pyo3(signature = (clicks, polygons, threshold = config::QUALIFICATION_THRESHOLD_PX))]
fn evaluate_qualification(
    clicks: Vec<PyPoint>,
    polygons: Vec<Vec<(f64, f64)>>,
    threshold: f64,
) -> PyResult<(bool, f64, Vec<f64>)> {
    let polys = polygons
        .into_iter()
        .map(|v| Polygon::new(v.into_iter().map(|(x, y)| Point::new(x, y)).collect()))
        .collect::<clickmil::Result<Vec<_>>>()
        .map_err(err)?;
    let records: Vec<annotator::ClickRecord> = clicks
        .iter()
        .enumerate()
        .map(|(i, p)| annotator::ClickRecord {
            target_id: format!("p{i}"),
            annotator_id: "python".into(),
            position: p.0,
            response_time_ms: 0.0,
        })
        .collect();
    let r = annotator::evaluate_qualification(&records, &polys, threshold).map_err(err)?;
    Ok((r.passed, r.mean_error, r.per_polygon_errors))
}

#[pyfunction]
#[pyo3(signature = (dataset, model, clicks_per_object = config::CLICKS_PER_OBJECT, seed = 0))]
fn simulate_clicks(dataset: &PyDataset, model: &PyErrorModel, clicks_per_object: usize, seed: u64) -> Vec<PyClick> {
    pipeline::simulate_dataset_clicks(&dataset.0, &model.0, clicks_per_object, seed)
        .into_iter()
        .map(PyClick)
        .collect()
}

/// Multi-fold MIL over every class. `supervision` is none, one-click or two-click.
#[pyfunction]
#[pyo3(signature = (
    dataset,
    clicks = None,
    supervision = "none",
    error_model = None,
    seed = 0,
    folds = config::MIL_FOLDS,
    iterations = config::MIL_ITERATIONS,
    deep_mil_iterations = config::DEEP_MIL_SURROGATE_ITERATIONS,
))]
#[allow(clippy::too_many_arguments)]
fn train(
    py: Python<'_>,
    dataset: &PyDataset,
    clicks: Option<Vec<PyClick>>,
    supervision: &str,
    error_model: Option<PyErrorModel>,
    seed: u64,
    folds: usize,
    iterations: usize,
    deep_mil_iterations: usize,
) -> PyResult<PyTrainResult> {
    let supervision: Supervision = supervision.parse().map_err(err)?;
    let entries: Vec<ClickEntry> = clicks
        .unwrap_or_default()
        .into_iter()
        .enumerate()
        .map(|(i, c)| ClickEntry { seq: i as u64, ..c.0 })
        .collect();
    let error_model = match (error_model, supervision) {
        (Some(m), _) => Some(m.0),
        (None, Supervision::None) => None,
        (None, _) => Some(pipeline::replica_error_model(pipeline::REPLICA_SEED, &FitOptions::default()).map_err(err)?),
    };
    let mil = MilConfig {
        folds,
        iterations,
        deep_mil_surrogate_iterations: deep_mil_iterations,
        supervision,
        error_model,
        seed,
        ..MilConfig::default()
    };
    let ds = &dataset.0;
    let out = py
        .detach(|| pipeline::train(ds, &entries, &mil))
        .map_err(err)?;
    Ok(PyTrainResult {
        selections: out.selections,
        models: out.models,
        trace: out.trace,
        mil,
    })
}

/// Localization annotation hours for `positive_pairs` image-class pairs.
#[pyfunction]
#[pyo3(signature = (positive_pairs, mode = "one_click"))]
fn annotation_time(positive_pairs: usize, mode: &str) -> PyResult<f64> {
    let mode = match mode.replace('-', "_").as_str() {
        "image_level" | "none" => AnnotationMode::ImageLevel,
        "one_click" => AnnotationMode::OneClick,
        "two_click" => AnnotationMode::TwoClick,
        "drawn_box" => AnnotationMode::DrawnBox,
        other => return Err(PyValueError::new_err(format!("unknown annotation mode {other:?}"))),
    };
    Ok(clickmil::eval::annotation_time(positive_pairs, mode))
}

#[pymodule]
#[pyo3(name = "clickmil")]
fn clickmil_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", clickmil::VERSION)?;
    m.add("D_MAX_PX", config::D_MAX_PX)?;
    m.add("QUALIFICATION_THRESHOLD_PX", config::QUALIFICATION_THRESHOLD_PX)?;
    m.add("CLICK_SECONDS", config::CLICK_SECONDS)?;
    m.add("BOX_SECONDS", config::BOX_SECONDS)?;
    m.add_class::<PyPoint>()?;
    m.add_class::<PyBBox>()?;
    m.add_class::<PyErrorModel>()?;
    m.add_class::<PyClick>()?;
    m.add_class::<PyDataset>()?;
    m.add_class::<PyTrainResult>()?;
    m.add_function(wrap_pyfunction!(euclidean, m)?)?;
    m.add_function(wrap_pyfunction!(iou, m)?)?;
    m.add_function(wrap_pyfunction!(max_window_at, m)?)?;
    m.add_function(wrap_pyfunction!(polygon_bbox_center, m)?)?;
    m.add_function(wrap_pyfunction!(score_s_bc, m)?)?;
    m.add_function(wrap_pyfunction!(score_s_ba, m)?)?;
    m.add_function(wrap_pyfunction!(score_s_ap, m)?)?;
    m.add_function(wrap_pyfunction!(fit_sigma_bc, m)?)?;
    m.add_function(wrap_pyfunction!(fit_mu, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate_qualification, m)?)?;
    m.add_function(wrap_pyfunction!(simulate_clicks, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(annotation_time, m)?)?;
    Ok(())
}
