//! Proposal scores used during re-localization.
//!
//! * `S_ap`: equal-weight mix of calibrated appearance and objectness.
//! * `S_bc`: Gaussian in the distance between proposal center and click.
//! * `S_ba`: Gaussian in the log ratio of proposal area to the area
//!   predicted from the distance between two clicks.

use crate::annotator::ErrorModel;
use crate::geometry::{euclidean, BBox, Point};

/// Per-image min-max normalization of raw appearance margins to [0, 1].
///
/// Rank preserving; a constant image maps to 0.5 everywhere.
pub fn calibrate_margins(margins: &[f64]) -> Vec<f64> {
    let lo = margins.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = margins.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return vec![0.5; margins.len()];
    }
    margins.iter().map(|m| (m - lo) / (hi - lo)).collect()
}

pub fn score_s_ap(calibrated_appearance: f64, objectness: f64) -> f64 {
    0.5 * calibrated_appearance + 0.5 * objectness
}

/// The click a proposal centered at `center` is compared against, or
/// `None` without clicks.
///
/// Two clicks closer than `d_max` are averaged. Farther apart they are
/// taken to mark different instances and each proposal uses the nearer one.
pub fn effective_click(center: &Point, clicks: &[Point], d_max: f64) -> Option<Point> {
    match clicks {
        [] => None,
        [c] => Some(*c),
        [a, b, ..] => {
            if euclidean(a, b) <= d_max {
                Some(a.midpoint(b))
            } else if euclidean(center, a) <= euclidean(center, b) {
                Some(*a)
            } else {
                Some(*b)
            }
        }
    }
}

/// `ln S_bc`; kept in log space so tiny `sigma_bc` does not underflow.
pub fn log_s_bc(center: &Point, clicks: &[Point], sigma_bc: f64, d_max: f64) -> f64 {
    match effective_click(center, clicks, d_max) {
        None => 0.0,
        Some(c) => {
            let d = euclidean(center, &c);
            -(d * d) / (2.0 * sigma_bc * sigma_bc)
        }
    }
}

pub fn score_s_bc(center: &Point, clicks: &[Point], sigma_bc: f64, d_max: f64) -> f64 {
    log_s_bc(center, clicks, sigma_bc, d_max).exp()
}

pub fn log_s_ba(bbox: &BBox, c1: &Point, c2: &Point, model: &ErrorModel, image_area: f64) -> f64 {
    let estimate = model.log_area_estimate(euclidean(c1, c2), image_area);
    let dev = bbox.log_area() - estimate;
    -(dev * dev) / (2.0 * model.sigma_ba * model.sigma_ba)
}

pub fn score_s_ba(bbox: &BBox, c1: &Point, c2: &Point, model: &ErrorModel, image_area: f64) -> f64 {
    log_s_ba(bbox, c1, c2, model, image_area).exp()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotator::{AreaConvention, ERROR_MODEL_SCHEMA_VERSION};
    use crate::poly::Polynomial;

    fn model() -> ErrorModel {
        ErrorModel {
            schema_version: ERROR_MODEL_SCHEMA_VERSION,
            sigma_bc: 12.0,
            d_max: 70.0,
            mu_coeffs: Polynomial::new(vec![-3.0, 0.02]),
            mu_range: (0.0, 150.0),
            sigma_ba: 0.7,
            sim_distance_coeffs: Polynomial::new(vec![5.0, 0.08]),
            area_convention: AreaConvention::RelativeToImage,
        }
    }

    #[test]
    fn s_ap_is_equal_weight_mix() {
        assert!((score_s_ap(0.4, 0.6) - 0.5).abs() < 1e-12);
        assert_eq!(score_s_ap(1.0, 1.0), 1.0);
    }

    #[test]
    fn calibration_is_rank_preserving() {
        let raw = [0.3, -2.0, 5.0, 1.0, 1.0];
        let cal = calibrate_margins(&raw);
        assert_eq!(cal[1], 0.0);
        assert_eq!(cal[2], 1.0);
        for i in 0..raw.len() {
            for j in 0..raw.len() {
                assert_eq!(raw[i] < raw[j], cal[i] < cal[j]);
            }
        }
        assert_eq!(calibrate_margins(&[2.0, 2.0]), vec![0.5, 0.5]);
    }

    #[test]
    fn s_bc_closed_forms() {
        let c = Point::new(100.0, 80.0);
        assert_eq!(score_s_bc(&c, &[c], 10.0, 70.0), 1.0);
        let p = Point::new(106.0, 88.0); // 10 px away
        assert!((score_s_bc(&p, &[c], 10.0, 70.0) - (-0.5f64).exp()).abs() < 1e-12);
        assert!((score_s_bc(&p, &[c], 10.0, 70.0) - 0.60653).abs() < 1e-5);
        assert_eq!(score_s_bc(&p, &[], 10.0, 70.0), 1.0);
    }

    #[test]
    fn s_bc_two_clicks() {
        let a = Point::new(0.0, 0.0);
        let near = Point::new(10.0, 0.0);
        // within d_max: midpoint is used
        let mid = Point::new(5.0, 0.0);
        assert_eq!(score_s_bc(&mid, &[a, near], 4.0, 70.0), 1.0);
        // coincident clicks reduce to the one-click score
        let p = Point::new(3.0, 4.0);
        assert_eq!(score_s_bc(&p, &[a, a], 4.0, 70.0), score_s_bc(&p, &[a], 4.0, 70.0));
        // 80 px apart with d_max = 70: each proposal uses its nearest click
        let far = Point::new(80.0, 0.0);
        assert_eq!(score_s_bc(&a, &[a, far], 4.0, 70.0), 1.0);
        assert_eq!(score_s_bc(&far, &[a, far], 4.0, 70.0), 1.0);
        assert!(score_s_bc(&Point::new(40.0, 0.0), &[a, far], 4.0, 70.0) < 1e-10);
    }

    #[test]
    fn s_ba_closed_forms() {
        let m = model();
        let (c1, c2) = (Point::new(0.0, 0.0), Point::new(30.0, 40.0));
        let image_area = 500.0 * 400.0;
        let est = m.log_area_estimate(50.0, image_area);
        let side = (est / 2.0).exp();
        let exact = BBox::new(0.0, 0.0, side, side).unwrap();
        assert!((score_s_ba(&exact, &c1, &c2, &m, image_area) - 1.0).abs() < 1e-9);
        // one sigma in log area
        let side = ((est + m.sigma_ba) / 2.0).exp();
        let off = BBox::new(0.0, 0.0, side, side).unwrap();
        assert!((score_s_ba(&off, &c1, &c2, &m, image_area) - (-0.5f64).exp()).abs() < 1e-9);

        let mut prev = 1.1;
        for k in 0..20 {
            let side = ((est + 0.1 * k as f64) / 2.0).exp();
            let b = BBox::new(0.0, 0.0, side, side).unwrap();
            let s = score_s_ba(&b, &c1, &c2, &m, image_area);
            assert!(s < prev);
            prev = s;
        }
    }
}
