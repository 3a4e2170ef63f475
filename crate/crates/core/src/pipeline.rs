//! End-to-end stages shared by the command line, the Python bindings and
//! the benchmark: error-model fitting on replica clicks, click simulation
//! over a dataset, per-class training and evaluation.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::annotator::{
    fit_error_model, generate_polygon_corpus, simulate_click, ErrorModel, FitOptions, ReplicaAnnotator,
};
use crate::config;
use crate::datastore::{effective_clicks, ClickEntry, Dataset, Split, TraceRecord};
use crate::eval::{average_precision, corloc, ApMode, MetricReport};
use crate::geometry::BBox;
use crate::mil::{detect, run_mil, AppearanceModel, MilConfig, Selection};
use crate::Result;

/// Polygons in the replica qualification corpus used when no real clicks exist.
pub const REPLICA_POLYGONS: usize = 2000;
pub const REPLICA_SEED: u64 = 2024;

/// Error model fitted on clicks from the replica annotator.
pub fn replica_error_model(seed: u64, opts: &FitOptions) -> Result<ErrorModel> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let corpus = generate_polygon_corpus(
        &mut rng,
        REPLICA_POLYGONS,
        config::CLICKS_PER_OBJECT,
        config::QUALIFICATION_CANVAS,
        &ReplicaAnnotator::default(),
    )?;
    fit_error_model(&corpus, opts)
}

/// `clicks_per_object` simulated clicks on every ground-truth box of the
/// training split, from annotators `sim-0`, `sim-1`, ...
pub fn simulate_dataset_clicks(
    dataset: &Dataset,
    model: &ErrorModel,
    clicks_per_object: usize,
    seed: u64,
) -> Vec<ClickEntry> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for g in &dataset.gt {
        let Some(img) = dataset.image(&g.image_id) else { continue };
        if img.split != Split::Train {
            continue;
        }
        for k in 0..clicks_per_object {
            let c = simulate_click(
                &mut rng,
                &g.image_id,
                &format!("sim-{k}"),
                &g.bbox,
                img.width,
                img.height,
                model,
            );
            out.push(ClickEntry {
                seq: out.len() as u64,
                image_id: g.image_id.clone(),
                class: g.class.clone(),
                annotator_id: c.annotator_id,
                x: c.position.x,
                y: c.position.y,
                time_ms: c.response_time_ms,
                supersedes: None,
            });
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutput {
    pub selections: Vec<Selection>,
    pub models: BTreeMap<String, AppearanceModel>,
    pub trace: Vec<TraceRecord>,
    /// Positive bags without proposals, per class.
    pub skipped: Vec<(String, String)>,
}

/// MIL over every class of the training split.
pub fn train(dataset: &Dataset, clicks: &[ClickEntry], mil: &MilConfig) -> Result<TrainOutput> {
    let index = effective_clicks(clicks);
    let mut out = TrainOutput {
        selections: Vec::new(),
        models: BTreeMap::new(),
        trace: Vec::new(),
        skipped: Vec::new(),
    };
    for class in &dataset.manifest.classes {
        let bags = dataset.bags(class, Split::Train, &index);
        let outcome = run_mil(&bags, mil)?;
        out.selections.extend(outcome.selections);
        out.models.insert(class.clone(), outcome.model);
        out.trace.extend(outcome.trace.into_iter().map(|stats| TraceRecord {
            class: class.clone(),
            stats,
        }));
        out.skipped.extend(outcome.skipped.into_iter().map(|id| (class.clone(), id)));
    }
    Ok(out)
}

/// CorLoc of the selections on the training split, per class.
pub fn corloc_per_class(dataset: &Dataset, selections: &[Selection]) -> BTreeMap<String, f64> {
    dataset
        .manifest
        .classes
        .iter()
        .map(|class| {
            let sel: BTreeMap<String, BBox> = selections
                .iter()
                .filter(|s| &s.class == class)
                .map(|s| (s.image_id.clone(), s.bbox))
                .collect();
            let gt = dataset.gt_boxes(class, Split::Train);
            (class.clone(), corloc(&sel, &gt, config::CORLOC_IOU))
        })
        .collect()
}

/// Average precision of each class model on the test split.
pub fn ap_per_class(
    dataset: &Dataset,
    models: &BTreeMap<String, AppearanceModel>,
    mode: ApMode,
) -> BTreeMap<String, f64> {
    let no_clicks = BTreeMap::new();
    models
        .par_iter()
        .map(|(class, model)| {
            let bags = dataset.bags(class, Split::Test, &no_clicks);
            let dets = detect(&bags, model, config::NMS_IOU);
            let gt = dataset.gt_boxes(class, Split::Test);
            (class.clone(), average_precision(&dets, &gt, config::AP_IOU, mode))
        })
        .collect()
}

pub fn evaluate(
    dataset: &Dataset,
    selections: &[Selection],
    models: &BTreeMap<String, AppearanceModel>,
    mil: &MilConfig,
    mode: ApMode,
) -> MetricReport {
    let per_class_corloc = corloc_per_class(dataset, selections);
    let per_class_ap = ap_per_class(dataset, models, mode);
    let corloc = if per_class_corloc.is_empty() {
        0.0
    } else {
        per_class_corloc.values().sum::<f64>() / per_class_corloc.len() as f64
    };
    MetricReport::new(
        mil.supervision,
        per_class_corloc,
        per_class_ap,
        corloc,
        dataset.positive_pairs(Split::Train),
        mil.deep_mil_surrogate_iterations > 0,
    )
}
