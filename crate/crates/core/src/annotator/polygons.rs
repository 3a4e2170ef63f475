use std::f64::consts::TAU;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::simulate::{rayleigh_scale_for_mean, sample_rayleigh};
use super::ClickRecord;
use crate::config;
use crate::geometry::{polygon_bbox_center, Point, Polygon};
use crate::poly::Polynomial;
use crate::{Error, Result};

const MIN_REL_AREA: f64 = 0.02;
const MAX_REL_AREA: f64 = 0.9;

/// Random qualification polygon on a `canvas_w x canvas_h` canvas.
///
/// Star-shaped around an origin with 6 to 12 jittered angles. Half of the
/// shapes get one vertex pushed inside the chord of its neighbours, which
/// makes them concave. The shape is then stretched so its bounding box
/// covers a uniformly drawn fraction in [0.02, 0.9] of the canvas.
pub fn generate_polygon<R: Rng + ?Sized>(
    rng: &mut R,
    canvas_w: f64,
    canvas_h: f64,
) -> Result<Polygon> {
    if !(canvas_w >= 100.0 && canvas_h >= 100.0) {
        return Err(Error::invalid(format!(
            "canvas must be at least 100x100, got {canvas_w}x{canvas_h}"
        )));
    }
    let n: usize = rng.random_range(6..=12);
    // jitter keeps any two consecutive gaps below 2 * 1.45 * TAU / 6 < PI: the star
    // stays simple and the dented vertex's neighbour chord crosses its ray
    let angles: Vec<f64> = (0..n)
        .map(|i| (i as f64 + rng.random_range(0.0..0.45)) * TAU / n as f64)
        .collect();
    let mut radii: Vec<f64> = (0..n).map(|_| rng.random_range(0.3..1.0)).collect();

    if rng.random_bool(0.5) {
        let i = rng.random_range(0..n);
        let prev = (i + n - 1) % n;
        let next = (i + 1) % n;
        let p = Point::new(radii[prev] * angles[prev].cos(), radii[prev] * angles[prev].sin());
        let q = Point::new(radii[next] * angles[next].cos(), radii[next] * angles[next].sin());
        let (ux, uy) = (angles[i].cos(), angles[i].sin());
        let (dx, dy) = (q.x - p.x, q.y - p.y);
        // distance along the ray where it crosses the neighbour chord
        let chord = (p.x * dy - p.y * dx) / (ux * dy - uy * dx);
        let dent = 1.0 - rng.random_range(0.4..0.7);
        radii[i] = (radii[i] * dent).min(chord * dent);
    }

    let raw: Vec<Point> = angles
        .iter()
        .zip(&radii)
        .map(|(a, r)| Point::new(r * a.cos(), r * a.sin()))
        .collect();
    let (min_x, max_x) = min_max(raw.iter().map(|p| p.x));
    let (min_y, max_y) = min_max(raw.iter().map(|p| p.y));
    let (w0, h0) = (max_x - min_x, max_y - min_y);

    let rel_area = rng.random_range(MIN_REL_AREA..MAX_REL_AREA);
    let target = rel_area * canvas_w * canvas_h;
    let aspect = w0 / h0;
    let (mut bw, mut bh) = ((target * aspect).sqrt(), (target / aspect).sqrt());
    if bw > canvas_w {
        bw = canvas_w;
        bh = target / canvas_w;
    }
    if bh > canvas_h {
        bh = canvas_h;
        bw = target / canvas_h;
    }
    let (sx, sy) = (bw / w0, bh / h0);
    let ox = rng.random_range(0.0..=(canvas_w - bw));
    let oy = rng.random_range(0.0..=(canvas_h - bh));
    let vertices = raw
        .iter()
        .map(|p| Point::new(ox + (p.x - min_x) * sx, oy + (p.y - min_y) * sy))
        .collect();
    Polygon::new(vertices)
}

fn min_max(it: impl Iterator<Item = f64>) -> (f64, f64) {
    it.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
}

/// Stand-in for trained annotators clicking qualification polygons.
///
/// Error distance is Rayleigh with mean `law(sqrt(bbox area))`, truncated at
/// `max_error` by resampling (qualified annotators never exceed it).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicaAnnotator {
    pub law: Polynomial,
    pub max_error: f64,
    pub response_time_ms: f64,
}

impl Default for ReplicaAnnotator {
    fn default() -> Self {
        ReplicaAnnotator {
            law: Polynomial::new(vec![4.0, 0.07]),
            max_error: config::D_MAX_PX,
            response_time_ms: config::CLICK_SECONDS * 1000.0,
        }
    }
}

impl ReplicaAnnotator {
    pub fn click<R: Rng + ?Sized>(
        &self,
        rng: &mut R,
        target_id: &str,
        annotator_id: &str,
        polygon: &Polygon,
    ) -> ClickRecord {
        let (bbox, center) = polygon_bbox_center(polygon);
        let mean = self.law.eval(bbox.area().sqrt()).max(0.0);
        let scale = rayleigh_scale_for_mean(mean);
        let r = loop {
            let r = sample_rayleigh(rng, scale);
            if r <= self.max_error {
                break r;
            }
        };
        let theta = rng.random_range(0.0..TAU);
        ClickRecord {
            target_id: target_id.to_string(),
            annotator_id: annotator_id.to_string(),
            position: Point::new(center.x + r * theta.cos(), center.y + r * theta.sin()),
            response_time_ms: self.response_time_ms,
        }
    }
}

/// Polygons plus the clicks collected on them.
#[derive(Debug, Clone, PartialEq)]
pub struct PolygonCorpus {
    pub canvas: (f64, f64),
    pub polygons: Vec<(String, Polygon)>,
    pub clicks: Vec<ClickRecord>,
}

impl PolygonCorpus {
    pub fn polygon(&self, id: &str) -> Option<&Polygon> {
        self.polygons.iter().find(|(pid, _)| pid == id).map(|(_, p)| p)
    }
}

/// `count` polygons, each clicked by `clicks_per_polygon` distinct replica annotators.
pub fn generate_polygon_corpus<R: Rng + ?Sized>(
    rng: &mut R,
    count: usize,
    clicks_per_polygon: usize,
    canvas: (f64, f64),
    annotator: &ReplicaAnnotator,
) -> Result<PolygonCorpus> {
    let mut polygons = Vec::with_capacity(count);
    let mut clicks = Vec::with_capacity(count * clicks_per_polygon);
    for i in 0..count {
        let id = format!("poly-{i:05}");
        let poly = generate_polygon(rng, canvas.0, canvas.1)?;
        for k in 0..clicks_per_polygon {
            clicks.push(annotator.click(rng, &id, &format!("replica-{k}"), &poly));
        }
        polygons.push((id, poly));
    }
    Ok(PolygonCorpus {
        canvas,
        polygons,
        clicks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::euclidean;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use sha2::{Digest, Sha256};

    fn digest(p: &Polygon) -> String {
        let mut h = Sha256::new();
        for v in p.vertices() {
            h.update(v.x.to_le_bytes());
            h.update(v.y.to_le_bytes());
        }
        hex::encode(h.finalize())
    }

    #[test]
    fn deterministic_under_seed() {
        let a = generate_polygon(&mut ChaCha8Rng::seed_from_u64(7), 500.0, 375.0).unwrap();
        let b = generate_polygon(&mut ChaCha8Rng::seed_from_u64(7), 500.0, 375.0).unwrap();
        let c = generate_polygon(&mut ChaCha8Rng::seed_from_u64(8), 500.0, 375.0).unwrap();
        assert_eq!(digest(&a), digest(&b));
        assert_ne!(digest(&a), digest(&c));
    }

    #[test]
    fn small_canvas_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(generate_polygon(&mut rng, 99.0, 300.0).is_err());
    }

    #[test]
    fn relative_area_uniform_and_shapes_valid() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (w, h) = (500.0, 375.0);
        let mut rel = Vec::new();
        let mut concave = 0;
        let mut center_outside = 0;
        for _ in 0..1000 {
            let p = generate_polygon(&mut rng, w, h).unwrap();
            assert!(p.len() >= 6);
            let (b, c) = polygon_bbox_center(&p);
            assert!(b.x() >= -1e-9 && b.y() >= -1e-9);
            assert!(b.right() <= w + 1e-9 && b.bottom() <= h + 1e-9);
            rel.push(b.area() / (w * h));
            concave += usize::from(!p.is_convex());
            center_outside += usize::from(!p.contains(&c));
        }
        // Kolmogorov-Smirnov distance to U(0.02, 0.9)
        rel.sort_by(f64::total_cmp);
        let n = rel.len() as f64;
        let ks = rel
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let cdf = ((v - MIN_REL_AREA) / (MAX_REL_AREA - MIN_REL_AREA)).clamp(0.0, 1.0);
                (cdf - i as f64 / n).abs().max((cdf - (i + 1) as f64 / n).abs())
            })
            .fold(0.0, f64::max);
        assert!(ks < 0.1, "KS distance {ks}");
        assert!(rel[0] >= MIN_REL_AREA - 1e-9 && rel[rel.len() - 1] <= MAX_REL_AREA + 1e-9);
        assert!(concave >= 400, "only {concave} concave shapes");
        assert!(center_outside > 0, "{center_outside}");
    }

    #[test]
    fn replica_errors_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let ann = ReplicaAnnotator::default();
        let corpus = generate_polygon_corpus(&mut rng, 200, 2, (500.0, 375.0), &ann).unwrap();
        assert_eq!(corpus.clicks.len(), 400);
        for c in &corpus.clicks {
            let p = corpus.polygon(&c.target_id).unwrap();
            assert!(euclidean(&c.position, &polygon_bbox_center(p).1) <= ann.max_error);
        }
    }
}
