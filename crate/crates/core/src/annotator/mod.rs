//! Annotator behavior: qualification polygons, error-model fitting and
//! click simulation.

mod fit;
mod polygons;
mod simulate;

use serde::{Deserialize, Serialize};

use crate::config;
use crate::geometry::{euclidean, polygon_bbox_center, Point, Polygon};
use crate::poly::Polynomial;
use crate::{Error, Result};

pub use fit::{
    compute_sigma_ba, fit_d_max, fit_error_model, fit_mu, fit_sigma_bc, fit_sim_distance_law,
    percentile, DmaxPolicy, FitOptions,
};
pub use polygons::{generate_polygon, generate_polygon_corpus, PolygonCorpus, ReplicaAnnotator};
pub use simulate::{rayleigh_scale_for_mean, sample_rayleigh, simulate_click, simulate_two_clicks};

pub const ERROR_MODEL_SCHEMA_VERSION: u32 = 1;

/// One click on a target (a polygon or an image-class pair).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClickRecord {
    pub target_id: String,
    pub annotator_id: String,
    pub position: Point,
    /// Time from the target appearing until the click.
    pub response_time_ms: f64,
}

impl ClickRecord {
    pub fn new(
        target_id: impl Into<String>,
        annotator_id: impl Into<String>,
        position: Point,
        response_time_ms: f64,
    ) -> Result<Self> {
        if !position.is_finite() {
            return Err(Error::invalid("click position must be finite"));
        }
        if !(response_time_ms >= 0.0 && response_time_ms.is_finite()) {
            return Err(Error::invalid(format!(
                "response time must be a finite non-negative value, got {response_time_ms}"
            )));
        }
        Ok(ClickRecord {
            target_id: target_id.into(),
            annotator_id: annotator_id.into(),
            position,
            response_time_ms,
        })
    }
}

/// How the area regressor's output relates to absolute proposal area.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AreaConvention {
    /// `mu` predicts log(object area / image area).
    RelativeToImage,
    /// `mu` predicts log(object area in px^2).
    Absolute,
}

/// Learned annotator parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorModel {
    pub schema_version: u32,
    /// Width of the box-center score, px.
    pub sigma_bc: f64,
    /// Click distance beyond which two clicks count as different instances, px.
    pub d_max: f64,
    /// Click distance (px) to log relative area.
    pub mu_coeffs: Polynomial,
    /// Distance range the regressor was fitted on; evaluation clamps to it.
    pub mu_range: (f64, f64),
    /// Width of the box-area score, log-area units.
    pub sigma_ba: f64,
    /// sqrt(object area) (px) to expected click error (px).
    pub sim_distance_coeffs: Polynomial,
    pub area_convention: AreaConvention,
}

impl ErrorModel {
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != ERROR_MODEL_SCHEMA_VERSION {
            return Err(Error::config(
                "schema_version",
                format!("expected {ERROR_MODEL_SCHEMA_VERSION}, got {}", self.schema_version),
            ));
        }
        if !(self.sigma_bc > 0.0 && self.sigma_bc.is_finite()) {
            return Err(Error::config("sigma_bc", "must be finite and > 0"));
        }
        if !(self.sigma_ba > 0.0 && self.sigma_ba.is_finite()) {
            return Err(Error::config("sigma_ba", "must be finite and > 0"));
        }
        if !(self.d_max > 0.0 && self.d_max.is_finite()) {
            return Err(Error::config("d_max", "must be finite and > 0"));
        }
        if !self.mu_coeffs.is_finite() || !self.sim_distance_coeffs.is_finite() {
            return Err(Error::config("mu_coeffs", "coefficients must be finite"));
        }
        let (lo, hi) = self.mu_range;
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return Err(Error::config("mu_range", "must be a finite, ordered interval"));
        }
        if !self.mu_coeffs.is_nondecreasing_on(lo, hi) {
            return Err(Error::config("mu_coeffs", "must be non-decreasing over mu_range"));
        }
        Ok(())
    }

    /// Estimated natural-log object area (px^2) from the distance between two clicks.
    pub fn log_area_estimate(&self, click_distance: f64, image_area: f64) -> f64 {
        let d = click_distance.clamp(self.mu_range.0, self.mu_range.1);
        let mu = self.mu_coeffs.eval(d);
        match self.area_convention {
            AreaConvention::RelativeToImage => mu + image_area.ln(),
            AreaConvention::Absolute => mu,
        }
    }

    /// Expected click error (px) for an object of the given sqrt-area.
    pub fn expected_click_error(&self, sqrt_area: f64) -> f64 {
        self.sim_distance_coeffs.eval(sqrt_area).max(0.0)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let m: ErrorModel = serde_json::from_str(s)?;
        m.validate()?;
        Ok(m)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualificationResult {
    pub per_polygon_errors: Vec<f64>,
    pub mean_error: f64,
    pub passed: bool,
}

/// Score one qualification attempt. `clicks[i]` answers `polygons[i]`.
///
/// The pass criterion is strict: a mean error equal to the threshold fails.
pub fn evaluate_qualification(
    clicks: &[ClickRecord],
    polygons: &[Polygon],
    pass_threshold: f64,
) -> Result<QualificationResult> {
    if clicks.len() != polygons.len() {
        return Err(Error::invalid(format!(
            "expected one click per polygon: {} clicks for {} polygons",
            clicks.len(),
            polygons.len()
        )));
    }
    if polygons.is_empty() {
        return Err(Error::invalid("qualification needs at least one polygon"));
    }
    let per_polygon_errors: Vec<f64> = clicks
        .iter()
        .zip(polygons)
        .map(|(c, p)| euclidean(&c.position, &polygon_bbox_center(p).1))
        .collect();
    let mean_error = per_polygon_errors.iter().sum::<f64>() / per_polygon_errors.len() as f64;
    Ok(QualificationResult {
        passed: mean_error < pass_threshold,
        per_polygon_errors,
        mean_error,
    })
}

/// [`evaluate_qualification`] with the default 20 px threshold.
pub fn evaluate_qualification_default(
    clicks: &[ClickRecord],
    polygons: &[Polygon],
) -> Result<QualificationResult> {
    evaluate_qualification(clicks, polygons, config::QUALIFICATION_THRESHOLD_PX)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn polys(n: usize, seed: u64) -> Vec<Polygon> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| generate_polygon(&mut rng, 500.0, 375.0).unwrap())
            .collect()
    }

    fn click_at(p: Point) -> ClickRecord {
        ClickRecord::new("t", "a", p, 100.0).unwrap()
    }

    #[test]
    fn clicks_at_centers_pass() {
        let ps = polys(20, 1);
        let clicks: Vec<_> = ps.iter().map(|p| click_at(polygon_bbox_center(p).1)).collect();
        let r = evaluate_qualification_default(&clicks, &ps).unwrap();
        assert_eq!(r.mean_error, 0.0);
        assert!(r.passed);
    }

    #[test]
    fn threshold_is_strict() {
        let ps = polys(20, 2);
        let offset = |d: f64| -> Vec<ClickRecord> {
            ps.iter()
                .map(|p| {
                    let c = polygon_bbox_center(p).1;
                    click_at(Point::new(c.x + d, c.y))
                })
                .collect()
        };
        let r = evaluate_qualification(&offset(19.0), &ps, 20.0).unwrap();
        assert!((r.mean_error - 19.0).abs() < 1e-9);
        assert!(r.passed);
        let r = evaluate_qualification(&offset(20.0), &ps, 20.0).unwrap();
        assert_eq!(r.mean_error, 20.0);
        assert!(!r.passed);
    }

    #[test]
    fn click_count_mismatch_rejected() {
        let ps = polys(3, 3);
        let clicks = vec![click_at(Point::new(1.0, 1.0)); 2];
        assert!(evaluate_qualification_default(&clicks, &ps).is_err());
    }

    #[test]
    fn permutation_invariant() {
        let ps = polys(20, 4);
        let clicks: Vec<_> = ps
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let c = polygon_bbox_center(p).1;
                click_at(Point::new(c.x + i as f64, c.y - 0.5 * i as f64))
            })
            .collect();
        let base = evaluate_qualification_default(&clicks, &ps).unwrap();
        let mut order: Vec<usize> = (0..20).collect();
        order.reverse();
        order.swap(3, 11);
        let ps2: Vec<_> = order.iter().map(|&i| ps[i].clone()).collect();
        let cl2: Vec<_> = order.iter().map(|&i| clicks[i].clone()).collect();
        let r = evaluate_qualification_default(&cl2, &ps2).unwrap();
        assert!((r.mean_error - base.mean_error).abs() < 1e-12);
        assert_eq!(r.passed, base.passed);
    }

    #[test]
    fn click_record_validation() {
        assert!(ClickRecord::new("t", "a", Point::new(f64::NAN, 0.0), 1.0).is_err());
        assert!(ClickRecord::new("t", "a", Point::new(0.0, 0.0), -1.0).is_err());
    }

    #[test]
    fn error_model_validation_names_field() {
        let mut m = ErrorModel {
            schema_version: ERROR_MODEL_SCHEMA_VERSION,
            sigma_bc: 10.0,
            d_max: 70.0,
            mu_coeffs: Polynomial::new(vec![-4.0, 0.05]),
            mu_range: (0.0, 100.0),
            sigma_ba: 0.5,
            sim_distance_coeffs: Polynomial::new(vec![5.0, 0.1]),
            area_convention: AreaConvention::RelativeToImage,
        };
        m.validate().unwrap();
        let back = ErrorModel::from_json(&m.to_json().unwrap()).unwrap();
        assert_eq!(back, m);
        m.sigma_ba = 0.0;
        match m.validate() {
            Err(Error::InvalidConfig { field, .. }) => assert_eq!(field, "sigma_ba"),
            other => panic!("unexpected {other:?}"),
        }
        m.sigma_ba = 0.5;
        m.mu_coeffs = Polynomial::new(vec![0.0, -1.0]);
        assert!(m.validate().is_err());
    }
}
