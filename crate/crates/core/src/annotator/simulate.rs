use std::f64::consts::{FRAC_PI_2, TAU};

use rand::Rng;

use super::{ClickRecord, ErrorModel};
use crate::config;
use crate::geometry::{BBox, Point};

/// Rayleigh scale whose distribution has the given mean.
pub fn rayleigh_scale_for_mean(mean: f64) -> f64 {
    mean / FRAC_PI_2.sqrt()
}

/// Inverse-CDF Rayleigh draw.
pub fn sample_rayleigh<R: Rng + ?Sized>(rng: &mut R, scale: f64) -> f64 {
    if scale <= 0.0 {
        return 0.0;
    }
    let u: f64 = rng.random();
    scale * (-2.0 * (1.0 - u).ln()).sqrt()
}

/// Noisy center click on a ground-truth box inside an `image_w x image_h` image.
///
/// The error direction is uniform and its length is Rayleigh distributed
/// with mean `model.expected_click_error(sqrt(area))`. Clicks that land
/// outside the image are clamped to its border.
pub fn simulate_click<R: Rng + ?Sized>(
    rng: &mut R,
    target_id: &str,
    annotator_id: &str,
    gt: &BBox,
    image_w: f64,
    image_h: f64,
    model: &ErrorModel,
) -> ClickRecord {
    let center = gt.center();
    let mean = model.expected_click_error(gt.area().sqrt());
    let r = sample_rayleigh(rng, rayleigh_scale_for_mean(mean));
    let theta = rng.random_range(0.0..TAU);
    let position = Point::new(
        (center.x + r * theta.cos()).clamp(0.0, image_w),
        (center.y + r * theta.sin()).clamp(0.0, image_h),
    );
    ClickRecord {
        target_id: target_id.to_string(),
        annotator_id: annotator_id.to_string(),
        position,
        response_time_ms: config::CLICK_SECONDS * 1000.0,
    }
}

/// Two independent simulated annotators clicking the same box.
pub fn simulate_two_clicks<R: Rng + ?Sized>(
    rng: &mut R,
    target_id: &str,
    gt: &BBox,
    image_w: f64,
    image_h: f64,
    model: &ErrorModel,
) -> (ClickRecord, ClickRecord) {
    let a = simulate_click(rng, target_id, "sim-0", gt, image_w, image_h, model);
    let b = simulate_click(rng, target_id, "sim-1", gt, image_w, image_h, model);
    (a, b)
}
