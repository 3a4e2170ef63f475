//! On-disk datasets, artifacts and the click log.
//!
//! Every interchange file is line-delimited JSON whose first line is a
//! `{"schema_version": 1, "kind": ...}` header; single documents
//! (`manifest.json`, `error_model.json`, `metrics.json`) carry a
//! `schema_version` field instead. All writes go through a temporary file
//! and a rename.

mod clicklog;
mod io;
mod synthetic;

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::value::RawValue;

use crate::annotator::{ClickRecord, ErrorModel};
use crate::eval::MetricReport;
use crate::geometry::{BBox, Point, Polygon};
use crate::mil::{Bag, IterationStats, Proposal, Selection};
use crate::{Error, Result};

pub use clicklog::{append_click, effective_clicks, read_clicks, write_clicks, ClickEntry, ClickLog, NewClick};
pub use io::{read_json, read_jsonl, write_atomic, write_json, write_jsonl, Header, SCHEMA_VERSION};
pub use synthetic::{generate_synthetic, quantize, SyntheticConfig};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const PROPOSALS_FILE: &str = "proposals.jsonl";
pub const GT_FILE: &str = "gt.jsonl";
pub const CLICKS_FILE: &str = "clicks.jsonl";
pub const SELECTIONS_FILE: &str = "selections.jsonl";
pub const TRACE_FILE: &str = "iterations.jsonl";
pub const ERROR_MODEL_FILE: &str = "error_model.json";
pub const METRICS_FILE: &str = "metrics.json";
pub const POLYGONS_FILE: &str = "polygons.jsonl";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub id: String,
    pub width: f64,
    pub height: f64,
    pub split: Split,
    /// Classes present in the image; an image is a negative for every other class.
    pub labels: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestFiles {
    pub proposals: String,
    pub gt: String,
    pub clicks: Option<String>,
}

impl Default for ManifestFiles {
    fn default() -> Self {
        ManifestFiles {
            proposals: PROPOSALS_FILE.into(),
            gt: GT_FILE.into(),
            clicks: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub schema_version: u32,
    pub name: String,
    pub classes: Vec<String>,
    pub feature_dim: usize,
    pub images: Vec<ImageRecord>,
    pub files: ManifestFiles,
    /// Generator settings when the dataset is synthetic.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GtRecord {
    pub image_id: String,
    pub class: String,
    #[serde(rename = "box")]
    pub bbox: BBox,
}

#[derive(Serialize)]
struct ProposalLineOut<'a> {
    image_id: &'a str,
    #[serde(rename = "box")]
    bbox: &'a BBox,
    objectness: f64,
    feature: Vec<Box<RawValue>>,
}

#[derive(Deserialize)]
struct ProposalLineIn {
    image_id: String,
    #[serde(rename = "box")]
    bbox: BBox,
    objectness: f64,
    feature: Vec<f64>,
}

/// Six significant digits in exponent notation, e.g. `-1.23456e-2`.
fn format_feature(v: f64) -> Box<RawValue> {
    RawValue::from_string(format!("{v:.5e}")).expect("exponent notation is a JSON number")
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    /// Proposals per image id.
    pub proposals: BTreeMap<String, Vec<Proposal>>,
    pub gt: Vec<GtRecord>,
}

impl Dataset {
    pub fn validate(&self) -> Result<()> {
        let m = &self.manifest;
        let mut ids = BTreeSet::new();
        for img in &m.images {
            if !ids.insert(img.id.as_str()) {
                return Err(Error::invalid(format!("duplicate image id `{}`", img.id)));
            }
            if !(img.width > 0.0 && img.height > 0.0) {
                return Err(Error::invalid(format!("image `{}` has no area", img.id)));
            }
        }
        for (id, props) in &self.proposals {
            if !ids.contains(id.as_str()) {
                return Err(Error::invalid(format!("proposals reference unknown image `{id}`")));
            }
            if let Some(p) = props.iter().find(|p| p.feature.len() != m.feature_dim) {
                return Err(Error::invalid(format!(
                    "image `{id}`: feature of length {} but feature_dim is {}",
                    p.feature.len(),
                    m.feature_dim
                )));
            }
        }
        for g in &self.gt {
            if !ids.contains(g.image_id.as_str()) {
                return Err(Error::invalid(format!("ground truth references unknown image `{}`", g.image_id)));
            }
        }
        Ok(())
    }

    pub fn image(&self, id: &str) -> Option<&ImageRecord> {
        self.manifest.images.iter().find(|i| i.id == id)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        self.validate()?;
        let files = &self.manifest.files;
        let props_path = dir.join(&files.proposals);
        write_atomic(&props_path, |w| {
            let io = |e| Error::io(&props_path, e);
            serde_json::to_writer(&mut *w, &Header::new("proposals"))?;
            w.write_all(b"\n").map_err(io)?;
            // manifest order, so the file layout does not depend on map order
            for img in &self.manifest.images {
                for p in self.proposals.get(&img.id).into_iter().flatten() {
                    let line = ProposalLineOut {
                        image_id: &img.id,
                        bbox: &p.bbox,
                        objectness: p.objectness,
                        feature: p.feature.iter().map(|&v| format_feature(v)).collect(),
                    };
                    serde_json::to_writer(&mut *w, &line)?;
                    w.write_all(b"\n").map_err(io)?;
                }
            }
            Ok(())
        })?;
        write_jsonl(&dir.join(&files.gt), "gt", &self.gt)?;
        write_json(&dir.join(MANIFEST_FILE), &self.manifest)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest_path = dir.join(MANIFEST_FILE);
        let manifest: DatasetManifest = read_json(&manifest_path)?;
        if manifest.schema_version != SCHEMA_VERSION {
            return Err(Error::SchemaVersion {
                path: manifest_path,
                found: manifest.schema_version,
                expected: SCHEMA_VERSION,
            });
        }
        let lines: Vec<ProposalLineIn> = read_jsonl(&dir.join(&manifest.files.proposals), "proposals")?;
        let mut proposals: BTreeMap<String, Vec<Proposal>> = BTreeMap::new();
        for l in lines {
            let p = Proposal::new(l.bbox, l.feature, l.objectness)?;
            proposals.entry(l.image_id).or_default().push(p);
        }
        let gt = read_jsonl(&dir.join(&manifest.files.gt), "gt")?;
        let ds = Dataset {
            manifest,
            proposals,
            gt,
        };
        ds.validate()?;
        Ok(ds)
    }

    /// Ground-truth boxes of `class` per image, for images of `split`.
    pub fn gt_boxes(&self, class: &str, split: Split) -> BTreeMap<String, Vec<BBox>> {
        let in_split: BTreeSet<&str> = self
            .manifest
            .images
            .iter()
            .filter(|i| i.split == split)
            .map(|i| i.id.as_str())
            .collect();
        let mut out: BTreeMap<String, Vec<BBox>> = BTreeMap::new();
        for g in self.gt.iter().filter(|g| g.class == class && in_split.contains(g.image_id.as_str())) {
            out.entry(g.image_id.clone()).or_default().push(g.bbox);
        }
        out
    }

    /// Number of (image, class) pairs where the class is present.
    pub fn positive_pairs(&self, split: Split) -> usize {
        self.manifest
            .images
            .iter()
            .filter(|i| i.split == split)
            .map(|i| i.labels.len())
            .sum()
    }

    /// One bag per image of `split` for `class`, in manifest order. Clicks are
    /// looked up by (image id, class).
    pub fn bags(
        &self,
        class: &str,
        split: Split,
        clicks: &BTreeMap<(String, String), Vec<ClickRecord>>,
    ) -> Vec<Bag> {
        let gt = self.gt_boxes(class, split);
        self.manifest
            .images
            .iter()
            .filter(|i| i.split == split)
            .map(|img| {
                let positive = img.labels.iter().any(|l| l == class);
                Bag {
                    image_id: img.id.clone(),
                    class: class.to_string(),
                    width: img.width,
                    height: img.height,
                    proposals: self.proposals.get(&img.id).cloned().unwrap_or_default(),
                    positive,
                    clicks: if positive {
                        clicks
                            .get(&(img.id.clone(), class.to_string()))
                            .cloned()
                            .unwrap_or_default()
                    } else {
                        Vec::new()
                    },
                    gt_boxes: gt.get(&img.id).cloned().unwrap_or_default(),
                }
            })
            .collect()
    }
}

pub fn save_selections(path: &Path, selections: &[Selection]) -> Result<()> {
    write_jsonl(path, "selections", selections)
}

pub fn load_selections(path: &Path) -> Result<Vec<Selection>> {
    read_jsonl(path, "selections")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub class: String,
    #[serde(flatten)]
    pub stats: IterationStats,
}

pub fn save_trace(path: &Path, trace: &[TraceRecord]) -> Result<()> {
    write_jsonl(path, "iterations", trace)
}

pub fn load_trace(path: &Path) -> Result<Vec<TraceRecord>> {
    read_jsonl(path, "iterations")
}

pub fn save_metrics(path: &Path, report: &MetricReport) -> Result<()> {
    write_json(path, report)
}

pub fn load_metrics(path: &Path) -> Result<MetricReport> {
    read_json(path)
}

pub fn save_error_model(path: &Path, model: &ErrorModel) -> Result<()> {
    model.validate()?;
    write_json(path, model)
}

pub fn load_error_model(path: &Path) -> Result<ErrorModel> {
    let m: ErrorModel = read_json(path)?;
    m.validate()?;
    Ok(m)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolygonRecord {
    pub polygon_id: String,
    pub canvas: (f64, f64),
    pub vertices: Vec<Point>,
}

pub fn save_polygons(path: &Path, canvas: (f64, f64), polygons: &[(String, Polygon)]) -> Result<()> {
    let recs: Vec<PolygonRecord> = polygons
        .iter()
        .map(|(id, p)| PolygonRecord {
            polygon_id: id.clone(),
            canvas,
            vertices: p.vertices().to_vec(),
        })
        .collect();
    write_jsonl(path, "polygons", &recs)
}

pub fn load_polygons(path: &Path) -> Result<((f64, f64), Vec<(String, Polygon)>)> {
    let recs: Vec<PolygonRecord> = read_jsonl(path, "polygons")?;
    let canvas = recs.first().map(|r| r.canvas).unwrap_or(crate::config::QUALIFICATION_CANVAS);
    let mut out = Vec::with_capacity(recs.len());
    for r in recs {
        if r.canvas != canvas {
            return Err(Error::invalid("polygons drawn on different canvases"));
        }
        out.push((r.polygon_id, Polygon::new(r.vertices)?));
    }
    Ok((canvas, out))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> Dataset {
        generate_synthetic(&SyntheticConfig {
            positive_images: 12,
            negative_images: 8,
            test_images: 6,
            ..SyntheticConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn dataset_round_trip() {
        let ds = small();
        let dir = tempfile::tempdir().unwrap();
        ds.save(dir.path()).unwrap();
        assert_eq!(Dataset::load(dir.path()).unwrap(), ds);
    }

    #[test]
    fn missing_proposal_file_is_named() {
        let ds = small();
        let dir = tempfile::tempdir().unwrap();
        ds.save(dir.path()).unwrap();
        std::fs::remove_file(dir.path().join(PROPOSALS_FILE)).unwrap();
        let err = Dataset::load(dir.path()).unwrap_err();
        assert!(matches!(err, Error::MissingFile(_)));
        assert!(err.to_string().contains(PROPOSALS_FILE), "{err}");
    }

    #[test]
    fn unknown_image_rejected() {
        let mut ds = small();
        ds.proposals.insert("ghost".into(), vec![]);
        assert!(ds.validate().is_err());
    }

    #[test]
    fn bags_split_by_label() {
        let ds = small();
        let bags = ds.bags("object", Split::Train, &BTreeMap::new());
        assert_eq!(bags.len(), 20);
        assert_eq!(bags.iter().filter(|b| b.positive).count(), 12);
        assert!(bags.iter().filter(|b| b.positive).all(|b| b.gt_boxes.len() == 1));
        assert!(bags.iter().filter(|b| !b.positive).all(|b| b.gt_boxes.is_empty()));
    }

    #[test]
    fn polygons_round_trip() {
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(1);
        let polys: Vec<(String, Polygon)> = (0..5)
            .map(|i| (format!("p{i}"), crate::annotator::generate_polygon(&mut rng, 500.0, 375.0).unwrap()))
            .collect();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join(POLYGONS_FILE);
        save_polygons(&p, (500.0, 375.0), &polys).unwrap();
        assert_eq!(load_polygons(&p).unwrap(), ((500.0, 375.0), polys));
    }
}
