//! Seeded synthetic localization benchmark.
//!
//! Every image holds one object box. Its proposal set contains one jittered
//! copy of the object box (IoU at least `iou_floor`) and distractors that
//! overlap it by less than 0.5 IoU: concentric context and core boxes,
//! displaced part boxes and random background boxes.
//!
//! A proposal feature is `a * m_class + (1 - a) * m_bg + noise`, with unit
//! prototypes `m_class` per class and `m_bg` drawn from a small background
//! pool. The object proposal of a positive image has `a = 1`; a distractor
//! has `a = u^((1 - rho) / rho)` with `u ~ U(0, 1)`, so `rho = 0` leaves
//! distractors pure background and `rho = 1` makes them indistinguishable
//! from the object. Negative images use `a = 0` throughout.
//!
//! Objectness is a clamped noisy indicator of overlap with the object box:
//! the mean of IoU and the fraction of the object covered, plus Gaussian
//! noise.

use std::f64::consts::TAU;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Dataset, DatasetManifest, GtRecord, ImageRecord, ManifestFiles, Split, SCHEMA_VERSION};
use crate::geometry::{iou, BBox};
use crate::mil::Proposal;
use crate::{Error, Result};

const BACKGROUND_PROTOTYPES: usize = 8;
const WIDTH_RANGE: (u32, u32) = (320, 500);
const HEIGHT_RANGE: (u32, u32) = (240, 500);
const DISTRACTOR_MAX_IOU: f64 = 0.5;
const MIN_SIDE: f64 = 4.0;
const OBJECT_AREA: (f64, f64) = (0.02, 0.9);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub name: String,
    pub seed: u64,
    pub classes: Vec<String>,
    /// Training images containing an object, spread round-robin over classes.
    pub positive_images: usize,
    /// Training images containing no class.
    pub negative_images: usize,
    /// Held-out images, half positive and half negative.
    pub test_images: usize,
    pub proposals_per_image: usize,
    pub feature_dim: usize,
    /// Per-dimension standard deviation of feature noise.
    pub feature_noise: f64,
    /// Minimum IoU between the object proposal and the object box.
    pub iou_floor: f64,
    /// Distractor feature overlap in [0, 1].
    pub overlap: f64,
    pub objectness_noise: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            name: "synthetic".into(),
            seed: 0,
            classes: vec!["object".into()],
            positive_images: 500,
            negative_images: 500,
            test_images: 200,
            proposals_per_image: 30,
            feature_dim: 16,
            feature_noise: 0.5,
            iou_floor: 0.7,
            overlap: 0.5,
            objectness_noise: 0.4,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.iou_floor > 0.0 && self.iou_floor <= 1.0) {
            return Err(Error::config("iou_floor", "must lie in (0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.overlap) {
            return Err(Error::config("overlap", "must lie in [0, 1]"));
        }
        if self.classes.is_empty() {
            return Err(Error::config("classes", "at least one class is required"));
        }
        if self.proposals_per_image == 0 {
            return Err(Error::config("proposals_per_image", "must be positive"));
        }
        if self.feature_dim == 0 {
            return Err(Error::config("feature_dim", "must be positive"));
        }
        if !(self.feature_noise >= 0.0 && self.feature_noise.is_finite()) {
            return Err(Error::config("feature_noise", "must be finite and >= 0"));
        }
        if !(self.objectness_noise >= 0.0 && self.objectness_noise.is_finite()) {
            return Err(Error::config("objectness_noise", "must be finite and >= 0"));
        }
        Ok(())
    }
}

/// Round to six significant digits, the precision features are stored with.
pub fn quantize(v: f64) -> f64 {
    format!("{v:.5e}").parse().expect("formatted float parses")
}

fn unit_vector(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-9 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

fn class_strength(rng: &mut ChaCha8Rng, overlap: f64) -> f64 {
    let u: f64 = rng.random();
    if overlap <= 0.0 {
        0.0
    } else if overlap >= 1.0 {
        1.0
    } else {
        u.powf((1.0 - overlap) / overlap)
    }
}

fn clipped(x: f64, y: f64, w: f64, h: f64, width: f64, height: f64) -> Option<BBox> {
    let b = BBox::new(x, y, w, h).ok()?.clip_to(width, height)?;
    (b.w() >= MIN_SIDE && b.h() >= MIN_SIDE).then_some(b)
}

fn random_box(rng: &mut ChaCha8Rng, width: f64, height: f64, area: (f64, f64), aspect: f64) -> BBox {
    loop {
        let rel = rng.random_range(area.0.ln()..area.1.ln()).exp();
        let ar = rng.random_range(-aspect..aspect).exp();
        let w = (rel * width * height * ar).sqrt().min(width * 0.95);
        let h = (rel * width * height / w).min(height * 0.95);
        let x = rng.random_range(0.0..=width - w);
        let y = rng.random_range(0.0..=height - h);
        if let Some(b) = clipped(x, y, w, h, width, height) {
            return b;
        }
    }
}

/// Object boxes follow the relative-area law of the qualification polygons,
/// so an area regressor fitted on polygon clicks transfers.
fn object_box(rng: &mut ChaCha8Rng, width: f64, height: f64) -> BBox {
    loop {
        let rel = rng.random_range(OBJECT_AREA.0..OBJECT_AREA.1);
        let ar = rng.random_range(-0.5f64..0.5).exp();
        let w = (rel * width * height * ar).sqrt();
        let h = rel * width * height / w;
        if w > width || h > height {
            continue;
        }
        let x = rng.random_range(0.0..=width - w);
        let y = rng.random_range(0.0..=height - h);
        if let Some(b) = clipped(x, y, w, h, width, height) {
            return b;
        }
    }
}

fn jittered_object(rng: &mut ChaCha8Rng, obj: &BBox, floor: f64, width: f64, height: f64) -> BBox {
    if floor >= 1.0 {
        return *obj;
    }
    let s = 0.15 * (1.0 - floor);
    let nx = Normal::new(0.0, s * obj.w()).expect("finite sigma");
    let ny = Normal::new(0.0, s * obj.h()).expect("finite sigma");
    for _ in 0..10_000 {
        let x0 = obj.x() + nx.sample(rng);
        let y0 = obj.y() + ny.sample(rng);
        let x1 = obj.right() + nx.sample(rng);
        let y1 = obj.bottom() + ny.sample(rng);
        if x1 - x0 < MIN_SIDE || y1 - y0 < MIN_SIDE {
            continue;
        }
        if let Some(b) = clipped(x0, y0, x1 - x0, y1 - y0, width, height) {
            if iou(&b, obj) >= floor {
                return b;
            }
        }
    }
    *obj
}

fn distractor(rng: &mut ChaCha8Rng, obj: &BBox, width: f64, height: f64) -> BBox {
    let c = obj.center();
    loop {
        let kind: f64 = rng.random();
        let candidate = if kind < 0.15 {
            // concentric: context around the object or its core
            let s = if rng.random_bool(2.0 / 3.0) {
                rng.random_range(1.5..2.3)
            } else {
                rng.random_range(0.4..0.62)
            };
            let (w, h) = (obj.w() * s * rng.random_range(0.9..1.1), obj.h() * s * rng.random_range(0.9..1.1));
            let cx = c.x + rng.random_range(-0.2..0.2) * obj.w();
            let cy = c.y + rng.random_range(-0.2..0.2) * obj.h();
            clipped(cx - w / 2.0, cy - h / 2.0, w, h, width, height)
        } else if kind < 0.45 {
            // part or neighbour, displaced from the object center
            let (w, h) = (obj.w() * rng.random_range(0.4..1.1), obj.h() * rng.random_range(0.4..1.1));
            let theta = rng.random_range(0.0..TAU);
            let r = rng.random_range(0.5..1.2);
            let cx = c.x + r * obj.w() * theta.cos();
            let cy = c.y + r * obj.h() * theta.sin();
            clipped(cx - w / 2.0, cy - h / 2.0, w, h, width, height)
        } else {
            Some(random_box(rng, width, height, (0.005, 0.6), 0.7))
        };
        if let Some(b) = candidate {
            if iou(&b, obj) < DISTRACTOR_MAX_IOU {
                return b;
            }
        }
    }
}

struct Prototypes {
    class: Vec<Vec<f64>>,
    background: Vec<Vec<f64>>,
}

fn feature(
    rng: &mut ChaCha8Rng,
    protos: &Prototypes,
    class: Option<usize>,
    a: f64,
    noise: f64,
) -> Vec<f64> {
    let bg = &protos.background[rng.random_range(0..protos.background.len())];
    let dim = bg.len();
    (0..dim)
        .map(|d| {
            let fg = class.map_or(0.0, |c| protos.class[c][d]);
            let z: f64 = StandardNormal.sample(rng);
            quantize(a * fg + (1.0 - a) * bg[d] + noise * z)
        })
        .collect()
}

fn objectness(rng: &mut ChaCha8Rng, b: &BBox, obj: &BBox, noise: f64) -> f64 {
    let kappa = 0.5 * iou(b, obj) + 0.5 * b.intersection_area(obj) / obj.area();
    let z: f64 = StandardNormal.sample(rng);
    (kappa + noise * z).clamp(0.0, 1.0)
}

fn image(
    rng: &mut ChaCha8Rng,
    cfg: &SyntheticConfig,
    protos: &Prototypes,
    id: String,
    split: Split,
    class: Option<usize>,
) -> Result<(ImageRecord, Vec<Proposal>, Option<GtRecord>)> {
    let width = rng.random_range(WIDTH_RANGE.0..=WIDTH_RANGE.1) as f64;
    let height = rng.random_range(HEIGHT_RANGE.0..=HEIGHT_RANGE.1) as f64;
    let obj = object_box(rng, width, height);

    let mut boxes = Vec::with_capacity(cfg.proposals_per_image);
    boxes.push((jittered_object(rng, &obj, cfg.iou_floor, width, height), true));
    for _ in 1..cfg.proposals_per_image {
        boxes.push((distractor(rng, &obj, width, height), false));
    }
    boxes.shuffle(rng);

    let mut proposals = Vec::with_capacity(boxes.len());
    for (b, is_object) in boxes {
        if is_object && iou(&b, &obj) < cfg.iou_floor {
            return Err(Error::invalid(format!("{id}: object proposal below the IoU floor")));
        }
        let a = match (class, is_object) {
            (None, _) => 0.0,
            (Some(_), true) => 1.0,
            (Some(_), false) => class_strength(rng, cfg.overlap),
        };
        let f = feature(rng, protos, class, a, cfg.feature_noise);
        let o = objectness(rng, &b, &obj, cfg.objectness_noise);
        proposals.push(Proposal::new(b, f, o)?);
    }

    let labels = class.map(|c| vec![cfg.classes[c].clone()]).unwrap_or_default();
    let gt = class.map(|c| GtRecord {
        image_id: id.clone(),
        class: cfg.classes[c].clone(),
        bbox: obj,
    });
    let record = ImageRecord {
        id,
        width,
        height,
        split,
        labels,
    };
    Ok((record, proposals, gt))
}

pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<Dataset> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let protos = Prototypes {
        class: (0..cfg.classes.len()).map(|_| unit_vector(&mut rng, cfg.feature_dim)).collect(),
        background: (0..BACKGROUND_PROTOTYPES)
            .map(|_| unit_vector(&mut rng, cfg.feature_dim))
            .collect(),
    };
    let k = cfg.classes.len();
    let test_pos = cfg.test_images.div_ceil(2);
    let mut plan: Vec<(String, Split, Option<usize>)> = Vec::new();
    for i in 0..cfg.positive_images + cfg.negative_images {
        let class = (i < cfg.positive_images).then_some(i % k);
        plan.push((format!("train-{i:05}"), Split::Train, class));
    }
    for i in 0..cfg.test_images {
        let class = (i < test_pos).then_some(i % k);
        plan.push((format!("test-{i:05}"), Split::Test, class));
    }

    let mut images = Vec::with_capacity(plan.len());
    let mut proposals = std::collections::BTreeMap::new();
    let mut gt = Vec::new();
    for (id, split, class) in plan {
        let (rec, props, g) = image(&mut rng, cfg, &protos, id, split, class)?;
        proposals.insert(rec.id.clone(), props);
        gt.extend(g);
        images.push(rec);
    }
    Ok(Dataset {
        manifest: DatasetManifest {
            schema_version: SCHEMA_VERSION,
            name: cfg.name.clone(),
            classes: cfg.classes.clone(),
            feature_dim: cfg.feature_dim,
            images,
            files: ManifestFiles::default(),
            synthetic: Some(cfg.clone()),
        },
        proposals,
        gt,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datastore::Split;

    fn cfg() -> SyntheticConfig {
        SyntheticConfig {
            positive_images: 40,
            negative_images: 20,
            test_images: 10,
            ..SyntheticConfig::default()
        }
    }

    #[test]
    fn quantize_is_idempotent() {
        for v in [0.1, -1.234567891, 3.0e-7, 12345.678, 0.0] {
            let q = quantize(v);
            assert_eq!(quantize(q), q);
            assert!((q - v).abs() <= 5e-6 * v.abs());
        }
    }

    #[test]
    fn each_positive_has_one_object_proposal() {
        for floor in [0.5, 0.7, 0.9, 1.0] {
            let ds = generate_synthetic(&SyntheticConfig { iou_floor: floor, ..cfg() }).unwrap();
            for g in &ds.gt {
                let props = &ds.proposals[&g.image_id];
                assert_eq!(props.len(), 30);
                let hits: Vec<f64> = props.iter().map(|p| iou(&p.bbox, &g.bbox)).filter(|&v| v >= 0.5).collect();
                assert_eq!(hits.len(), 1, "{}", g.image_id);
                assert!(hits[0] >= floor);
            }
            assert_eq!(ds.gt.len(), 45);
        }
    }

    #[test]
    fn same_seed_same_dataset() {
        assert_eq!(generate_synthetic(&cfg()).unwrap(), generate_synthetic(&cfg()).unwrap());
        assert_ne!(
            generate_synthetic(&cfg()).unwrap(),
            generate_synthetic(&SyntheticConfig { seed: 1, ..cfg() }).unwrap()
        );
    }

    #[test]
    fn splits_and_labels() {
        let ds = generate_synthetic(&SyntheticConfig {
            classes: vec!["a".into(), "b".into()],
            ..cfg()
        })
        .unwrap();
        let train: Vec<_> = ds.manifest.images.iter().filter(|i| i.split == Split::Train).collect();
        assert_eq!(train.len(), 60);
        assert_eq!(train.iter().filter(|i| i.labels == ["a"]).count(), 20);
        assert_eq!(train.iter().filter(|i| i.labels == ["b"]).count(), 20);
        assert_eq!(ds.positive_pairs(Split::Test), 5);
    }

    #[test]
    fn invalid_config_rejected() {
        assert!(generate_synthetic(&SyntheticConfig { iou_floor: 0.0, ..cfg() }).is_err());
        assert!(generate_synthetic(&SyntheticConfig { overlap: 1.5, ..cfg() }).is_err());
    }
}
