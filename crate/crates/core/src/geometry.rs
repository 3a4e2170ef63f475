//! Pixel-space primitives.
//!
//! All coordinates are continuous and measured in pixels with the origin at
//! the top-left corner and `y` growing downward, matching click coordinates
//! delivered by the annotation UI.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn midpoint(&self, other: &Point) -> Point {
        Point::new(0.5 * (self.x + other.x), 0.5 * (self.y + other.y))
    }
}

pub fn euclidean(a: &Point, b: &Point) -> f64 {
    (a.x - b.x).hypot(a.y - b.y)
}

/// Axis-aligned box given by its top-left corner and a strictly positive size.
///
/// Serialized as `[x, y, w, h]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct BBox {
    x: f64,
    y: f64,
    w: f64,
    h: f64,
}

impl BBox {
    /// Zero-area and non-finite boxes are rejected: the area score takes
    /// the logarithm of the area.
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Result<Self> {
        if !(x.is_finite() && y.is_finite() && w.is_finite() && h.is_finite()) {
            return Err(Error::invalid(format!("non-finite box [{x}, {y}, {w}, {h}]")));
        }
        if w <= 0.0 || h <= 0.0 {
            return Err(Error::invalid(format!("box must have positive size, got w={w} h={h}")));
        }
        Ok(BBox { x, y, w, h })
    }

    pub fn from_corners(x0: f64, y0: f64, x1: f64, y1: f64) -> Result<Self> {
        BBox::new(x0, y0, x1 - x0, y1 - y0)
    }

    pub fn centered_at(c: Point, w: f64, h: f64) -> Result<Self> {
        BBox::new(c.x - 0.5 * w, c.y - 0.5 * h, w, h)
    }

    pub fn x(&self) -> f64 {
        self.x
    }
    pub fn y(&self) -> f64 {
        self.y
    }
    pub fn w(&self) -> f64 {
        self.w
    }
    pub fn h(&self) -> f64 {
        self.h
    }
    pub fn right(&self) -> f64 {
        self.x + self.w
    }
    pub fn bottom(&self) -> f64 {
        self.y + self.h
    }

    pub fn center(&self) -> Point {
        Point::new(self.x + 0.5 * self.w, self.y + 0.5 * self.h)
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    /// Natural logarithm of the area.
    pub fn log_area(&self) -> f64 {
        self.area().ln()
    }

    pub fn intersection_area(&self, other: &BBox) -> f64 {
        let iw = self.right().min(other.right()) - self.x.max(other.x);
        let ih = self.bottom().min(other.bottom()) - self.y.max(other.y);
        if iw <= 0.0 || ih <= 0.0 {
            0.0
        } else {
            iw * ih
        }
    }

    pub fn contains_point(&self, p: &Point) -> bool {
        p.x >= self.x && p.x <= self.right() && p.y >= self.y && p.y <= self.bottom()
    }

    pub fn contains_box(&self, other: &BBox) -> bool {
        other.x >= self.x
            && other.y >= self.y
            && other.right() <= self.right()
            && other.bottom() <= self.bottom()
    }

    /// Clip to `[0, width] x [0, height]`. `None` when nothing is left.
    pub fn clip_to(&self, width: f64, height: f64) -> Option<BBox> {
        let x0 = self.x.max(0.0);
        let y0 = self.y.max(0.0);
        let x1 = self.right().min(width);
        let y1 = self.bottom().min(height);
        BBox::from_corners(x0, y0, x1, y1).ok()
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.x, self.y, self.w, self.h]
    }
}

impl TryFrom<[f64; 4]> for BBox {
    type Error = Error;

    fn try_from(v: [f64; 4]) -> Result<Self> {
        BBox::new(v[0], v[1], v[2], v[3])
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        b.to_array()
    }
}

pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let inter = a.intersection_area(b);
    if inter <= 0.0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

pub fn box_center(b: &BBox) -> Point {
    b.center()
}

/// Simple polygon with at least three vertices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Point>", into = "Vec<Point>")]
pub struct Polygon {
    vertices: Vec<Point>,
}

impl Polygon {
    pub fn new(vertices: Vec<Point>) -> Result<Self> {
        if vertices.len() < 3 {
            return Err(Error::invalid(format!(
                "polygon needs at least 3 vertices, got {}",
                vertices.len()
            )));
        }
        if let Some(p) = vertices.iter().find(|p| !p.is_finite()) {
            return Err(Error::invalid(format!("non-finite polygon vertex {p:?}")));
        }
        if !is_simple(&vertices) {
            return Err(Error::invalid("polygon is self-intersecting"));
        }
        let poly = Polygon { vertices };
        poly.try_bbox()?;
        Ok(poly)
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    fn try_bbox(&self) -> Result<BBox> {
        let (mut x0, mut y0) = (f64::INFINITY, f64::INFINITY);
        let (mut x1, mut y1) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
        for p in &self.vertices {
            x0 = x0.min(p.x);
            y0 = y0.min(p.y);
            x1 = x1.max(p.x);
            y1 = y1.max(p.y);
        }
        BBox::from_corners(x0, y0, x1, y1)
    }

    /// Tight axis-aligned bounding box of the vertices.
    pub fn bbox(&self) -> BBox {
        self.try_bbox().expect("validated at construction")
    }

    /// Even-odd point-in-polygon test.
    pub fn contains(&self, p: &Point) -> bool {
        let n = self.vertices.len();
        let mut inside = false;
        let mut j = n - 1;
        for i in 0..n {
            let (a, b) = (self.vertices[i], self.vertices[j]);
            if (a.y > p.y) != (b.y > p.y) {
                let x_cross = a.x + (p.y - a.y) * (b.x - a.x) / (b.y - a.y);
                if p.x < x_cross {
                    inside = !inside;
                }
            }
            j = i;
        }
        inside
    }

    /// Signed shoelace area, positive for counter-clockwise order in a y-up frame.
    pub fn signed_area(&self) -> f64 {
        let n = self.vertices.len();
        (0..n)
            .map(|i| {
                let (a, b) = (self.vertices[i], self.vertices[(i + 1) % n]);
                a.x * b.y - b.x * a.y
            })
            .sum::<f64>()
            * 0.5
    }

    pub fn is_convex(&self) -> bool {
        let n = self.vertices.len();
        let mut sign = 0.0f64;
        for i in 0..n {
            let (a, b, c) = (
                self.vertices[i],
                self.vertices[(i + 1) % n],
                self.vertices[(i + 2) % n],
            );
            let cross = (b.x - a.x) * (c.y - b.y) - (b.y - a.y) * (c.x - b.x);
            if cross.abs() < 1e-12 {
                continue;
            }
            if sign == 0.0 {
                sign = cross.signum();
            } else if cross.signum() != sign {
                return false;
            }
        }
        true
    }
}

impl TryFrom<Vec<Point>> for Polygon {
    type Error = Error;

    fn try_from(v: Vec<Point>) -> Result<Self> {
        Polygon::new(v)
    }
}

impl From<Polygon> for Vec<Point> {
    fn from(p: Polygon) -> Self {
        p.vertices
    }
}

fn orientation(a: &Point, b: &Point, c: &Point) -> f64 {
    (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x)
}

fn on_segment(a: &Point, b: &Point, p: &Point) -> bool {
    p.x >= a.x.min(b.x) && p.x <= a.x.max(b.x) && p.y >= a.y.min(b.y) && p.y <= a.y.max(b.y)
}

fn segments_intersect(p1: &Point, p2: &Point, q1: &Point, q2: &Point) -> bool {
    let d1 = orientation(q1, q2, p1);
    let d2 = orientation(q1, q2, p2);
    let d3 = orientation(p1, p2, q1);
    let d4 = orientation(p1, p2, q2);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
    {
        return true;
    }
    (d1 == 0.0 && on_segment(q1, q2, p1))
        || (d2 == 0.0 && on_segment(q1, q2, p2))
        || (d3 == 0.0 && on_segment(p1, p2, q1))
        || (d4 == 0.0 && on_segment(p1, p2, q2))
}

/// O(n^2) check that no two non-adjacent edges touch.
fn is_simple(v: &[Point]) -> bool {
    let n = v.len();
    for i in 0..n {
        let (a1, a2) = (&v[i], &v[(i + 1) % n]);
        if a1 == a2 {
            return false;
        }
        for j in (i + 1)..n {
            let adjacent = j == i + 1 || (i == 0 && j == n - 1);
            if adjacent {
                continue;
            }
            let (b1, b2) = (&v[j], &v[(j + 1) % n]);
            if segments_intersect(a1, a2, b1, b2) {
                return false;
            }
        }
    }
    // collinear fold-backs between adjacent edges
    for i in 0..n {
        let (a, b, c) = (&v[i], &v[(i + 1) % n], &v[(i + 2) % n]);
        if orientation(a, b, c) == 0.0 {
            let dot = (b.x - a.x) * (c.x - b.x) + (b.y - a.y) * (c.y - b.y);
            if dot < 0.0 {
                return false;
            }
        }
    }
    true
}

/// Tight bounding box of the polygon and the center of that box.
///
/// This is the "true center" an annotator is asked to click, which differs
/// from the polygon's center of mass for irregular shapes.
pub fn polygon_bbox_center(p: &Polygon) -> (BBox, Point) {
    let b = p.bbox();
    (b, b.center())
}

/// Largest box centered exactly at `c` that fits inside the image.
pub fn max_window_at(c: &Point, img_w: f64, img_h: f64) -> Result<BBox> {
    if !c.is_finite() || c.x <= 0.0 || c.y <= 0.0 || c.x >= img_w || c.y >= img_h {
        return Err(Error::invalid(format!(
            "point ({}, {}) is not strictly inside the {img_w}x{img_h} image",
            c.x, c.y
        )));
    }
    let half_w = c.x.min(img_w - c.x);
    let half_h = c.y.min(img_h - c.y);
    BBox::new(c.x - half_w, c.y - half_h, 2.0 * half_w, 2.0 * half_h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bx(x: f64, y: f64, w: f64, h: f64) -> BBox {
        BBox::new(x, y, w, h).unwrap()
    }

    fn pts(v: &[(f64, f64)]) -> Vec<Point> {
        v.iter().map(|&(x, y)| Point::new(x, y)).collect()
    }

    #[test]
    fn iou_examples() {
        let a = bx(0.0, 0.0, 10.0, 10.0);
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&a, &bx(20.0, 20.0, 5.0, 5.0)), 0.0);
        // touching edges share no area
        assert_eq!(iou(&a, &bx(10.0, 0.0, 10.0, 10.0)), 0.0);
        // intersection 50, union 150
        assert!((iou(&a, &bx(5.0, 0.0, 10.0, 10.0)) - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_boxes_rejected() {
        assert!(BBox::new(0.0, 0.0, 0.0, 5.0).is_err());
        assert!(BBox::new(0.0, 0.0, 5.0, -1.0).is_err());
        assert!(BBox::new(f64::NAN, 0.0, 5.0, 5.0).is_err());
        assert!(serde_json::from_str::<BBox>("[0, 0, 0, 1]").is_err());
    }

    #[test]
    fn box_center_examples() {
        assert_eq!(box_center(&bx(0.0, 0.0, 10.0, 10.0)), Point::new(5.0, 5.0));
        assert_eq!(box_center(&bx(2.0, 4.0, 6.0, 8.0)), Point::new(5.0, 8.0));
        assert_eq!(box_center(&bx(0.0, 0.0, 1.0, 1.0)), Point::new(0.5, 0.5));
    }

    #[test]
    fn euclidean_examples() {
        assert_eq!(euclidean(&Point::new(0.0, 0.0), &Point::new(3.0, 4.0)), 5.0);
        assert_eq!(euclidean(&Point::new(7.0, 1.0), &Point::new(7.0, 1.0)), 0.0);
        let d = euclidean(&Point::new(1.0, 1.0), &Point::new(2.0, 2.0));
        assert!((d - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn polygon_bbox_center_examples() {
        let square = Polygon::new(pts(&[(0.0, 0.0), (10.0, 0.0), (10.0, 10.0), (0.0, 10.0)])).unwrap();
        let (b, c) = polygon_bbox_center(&square);
        assert_eq!(b, bx(0.0, 0.0, 10.0, 10.0));
        assert_eq!(c, Point::new(5.0, 5.0));

        let l_shape = Polygon::new(pts(&[
            (0.0, 0.0),
            (10.0, 0.0),
            (10.0, 4.0),
            (4.0, 4.0),
            (4.0, 10.0),
            (0.0, 10.0),
        ]))
        .unwrap();
        let (_, c) = polygon_bbox_center(&l_shape);
        assert_eq!(c, Point::new(5.0, 5.0));
        // the box center falls in the notch, outside the shape itself
        assert!(!l_shape.contains(&c));
        assert!(!l_shape.is_convex());

        let tri = Polygon::new(pts(&[(0.0, 0.0), (8.0, 0.0), (0.0, 6.0)])).unwrap();
        let (b, c) = polygon_bbox_center(&tri);
        assert_eq!(b, bx(0.0, 0.0, 8.0, 6.0));
        assert_eq!(c, Point::new(4.0, 3.0));
    }

    #[test]
    fn polygon_validation() {
        assert!(Polygon::new(pts(&[(0.0, 0.0), (1.0, 1.0)])).is_err());
        // bow-tie
        let bowtie = pts(&[(0.0, 0.0), (10.0, 10.0), (10.0, 0.0), (0.0, 10.0)]);
        assert!(Polygon::new(bowtie).is_err());
        // collinear: zero-height bbox
        assert!(Polygon::new(pts(&[(0.0, 0.0), (5.0, 0.0), (10.0, 0.0)])).is_err());
    }

    #[test]
    fn max_window_examples() {
        assert_eq!(max_window_at(&Point::new(50.0, 30.0), 100.0, 60.0).unwrap(), bx(0.0, 0.0, 100.0, 60.0));
        assert_eq!(max_window_at(&Point::new(10.0, 30.0), 100.0, 60.0).unwrap(), bx(0.0, 0.0, 20.0, 60.0));
        assert_eq!(max_window_at(&Point::new(90.0, 10.0), 100.0, 60.0).unwrap(), bx(80.0, 0.0, 20.0, 20.0));
        assert!(max_window_at(&Point::new(120.0, 10.0), 100.0, 60.0).is_err());
        assert!(max_window_at(&Point::new(0.0, 10.0), 100.0, 60.0).is_err());
    }

    fn arb_box() -> impl Strategy<Value = BBox> {
        (-500.0..500.0f64, -500.0..500.0f64, 0.01..400.0f64, 0.01..400.0f64)
            .prop_map(|(x, y, w, h)| bx(x, y, w, h))
    }

    proptest! {
        #[test]
        fn iou_symmetric_and_bounded(a in arb_box(), b in arb_box()) {
            let ab = iou(&a, &b);
            prop_assert!((0.0..=1.0).contains(&ab));
            prop_assert_eq!(ab, iou(&b, &a));
            prop_assert!((iou(&a, &a) - 1.0).abs() < 1e-12);
        }

        #[test]
        fn max_window_is_centered_contained_and_maximal(
            w in 2.0..2000.0f64, h in 2.0..2000.0f64, fx in 0.001..0.999f64, fy in 0.001..0.999f64,
        ) {
            let c = Point::new(fx * w, fy * h);
            let win = max_window_at(&c, w, h).unwrap();
            prop_assert!(euclidean(&win.center(), &c) < 1e-9);
            let eps = 1e-9 * w.max(h);
            prop_assert!(win.x() >= -eps && win.y() >= -eps);
            prop_assert!(win.right() <= w + eps && win.bottom() <= h + eps);
            // growing either side by any amount leaves the image
            let touches_x = win.x().abs() < eps || (win.right() - w).abs() < eps;
            let touches_y = win.y().abs() < eps || (win.bottom() - h).abs() < eps;
            prop_assert!(touches_x && touches_y);
        }

        #[test]
        fn polygon_center_matches_vertex_extremes(
            n in 3usize..12, seed_r in proptest::collection::vec(0.2..1.0f64, 12), cx in 0.0..100.0f64, cy in 0.0..100.0f64,
        ) {
            // star-shaped around (cx, cy) with evenly spaced angles is always simple
            let verts: Vec<Point> = (0..n).map(|i| {
                let t = std::f64::consts::TAU * i as f64 / n as f64;
                Point::new(cx + 50.0 * seed_r[i] * t.cos(), cy + 50.0 * seed_r[i] * t.sin())
            }).collect();
            let poly = Polygon::new(verts.clone()).unwrap();
            let x0 = verts.iter().map(|p| p.x).fold(f64::INFINITY, f64::min);
            let x1 = verts.iter().map(|p| p.x).fold(f64::NEG_INFINITY, f64::max);
            let y0 = verts.iter().map(|p| p.y).fold(f64::INFINITY, f64::min);
            let y1 = verts.iter().map(|p| p.y).fold(f64::NEG_INFINITY, f64::max);
            let (_, c) = polygon_bbox_center(&poly);
            prop_assert_eq!(c, box_center(&BBox::from_corners(x0, y0, x1, y1).unwrap()));
        }
    }
}
