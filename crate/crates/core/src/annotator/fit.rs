use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{AreaConvention, ErrorModel, PolygonCorpus, ERROR_MODEL_SCHEMA_VERSION};
use crate::config;
use crate::geometry::{euclidean, polygon_bbox_center};
use crate::poly::{fit_polynomial, Polynomial};
use crate::{Error, Result};

/// Maximum-likelihood scale of a Rayleigh law, i.e. the per-axis standard
/// deviation of an isotropic 2-D Gaussian click error:
/// `sigma^2 = sum(d^2) / (2 N)`.
pub fn fit_sigma_bc(errors: &[f64]) -> Result<f64> {
    if errors.is_empty() {
        return Err(Error::invalid("no click errors to fit sigma_bc"));
    }
    if errors.len() < config::MIN_SIGMA_BC_SAMPLES {
        return Err(Error::invalid(format!(
            "need at least {} click errors to fit sigma_bc, got {}",
            config::MIN_SIGMA_BC_SAMPLES,
            errors.len()
        )));
    }
    if errors.iter().any(|d| !(d.is_finite() && *d >= 0.0)) {
        return Err(Error::invalid("click errors must be finite and non-negative"));
    }
    let sum_sq: f64 = errors.iter().map(|d| d * d).sum();
    let sigma = (sum_sq / (2.0 * errors.len() as f64)).sqrt();
    if sigma <= 0.0 {
        return Err(Error::invalid(
            "all click errors are zero; sigma_bc would be degenerate",
        ));
    }
    Ok(sigma)
}

/// Linearly interpolated percentile (`p` in [0, 100]) of a sample.
pub fn percentile(values: &[f64], p: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::invalid("percentile of an empty sample"));
    }
    if !(0.0..=100.0).contains(&p) {
        return Err(Error::invalid(format!("percentile {p} outside [0, 100]")));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = p / 100.0 * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    Ok(v[lo] + (pos - lo as f64) * (v[hi] - v[lo]))
}

/// Robust maximum of the qualification errors (99.5th percentile).
pub fn fit_d_max(errors: &[f64]) -> Result<f64> {
    let d = percentile(errors, config::D_MAX_PERCENTILE)?;
    if d <= 0.0 {
        return Err(Error::invalid("fitted d_max is not positive"));
    }
    Ok(d)
}

/// Least-squares regressor from two-click distance to log relative area.
pub fn fit_mu(pairs: &[(f64, f64)], degree: usize) -> Result<Polynomial> {
    if pairs.len() < config::MIN_MU_PAIRS {
        return Err(Error::invalid(format!(
            "need at least {} (distance, log area) pairs, got {}",
            config::MIN_MU_PAIRS,
            pairs.len()
        )));
    }
    fit_polynomial(pairs, degree)
}

/// Root-mean-square residual of `mu` on its fitting pairs, floored at
/// [`config::SIGMA_BA_FLOOR`].
pub fn compute_sigma_ba(pairs: &[(f64, f64)], mu: &Polynomial) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::invalid("no pairs to compute sigma_ba"));
    }
    let mse = pairs
        .iter()
        .map(|(d, a)| (mu.eval(*d) - a).powi(2))
        .sum::<f64>()
        / pairs.len() as f64;
    Ok(mse.sqrt().max(config::SIGMA_BA_FLOOR))
}

/// Least-squares law from sqrt(object area) to expected click error.
pub fn fit_sim_distance_law(pairs: &[(f64, f64)], degree: usize) -> Result<Polynomial> {
    if pairs.len() < config::MIN_MU_PAIRS {
        return Err(Error::invalid(format!(
            "need at least {} (sqrt area, error) pairs, got {}",
            config::MIN_MU_PAIRS,
            pairs.len()
        )));
    }
    fit_polynomial(pairs, degree)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "value")]
pub enum DmaxPolicy {
    /// Use a fixed value regardless of the data.
    Pinned(f64),
    /// 99.5th percentile of the observed errors.
    Percentile,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub mu_degree: usize,
    pub sim_law_degree: usize,
    pub d_max: DmaxPolicy,
    pub area_convention: AreaConvention,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            mu_degree: config::MU_DEGREE,
            sim_law_degree: config::SIM_LAW_DEGREE,
            d_max: DmaxPolicy::Pinned(config::D_MAX_PX),
            area_convention: AreaConvention::RelativeToImage,
        }
    }
}

/// Fit every error-model parameter from clicks on qualification polygons.
///
/// Polygons clicked by at least two annotators contribute one
/// (click distance, log area) pair built from their first two clicks. If
/// the regressor comes out decreasing somewhere on the observed distance
/// range, its degree is lowered until it is monotone.
pub fn fit_error_model(corpus: &PolygonCorpus, opts: &FitOptions) -> Result<ErrorModel> {
    let canvas_area = corpus.canvas.0 * corpus.canvas.1;
    let mut by_polygon: BTreeMap<&str, Vec<&super::ClickRecord>> = BTreeMap::new();
    let mut errors = Vec::with_capacity(corpus.clicks.len());
    let mut law_pairs = Vec::with_capacity(corpus.clicks.len());
    for click in &corpus.clicks {
        let poly = corpus.polygon(&click.target_id).ok_or_else(|| {
            Error::invalid(format!("click references unknown polygon {}", click.target_id))
        })?;
        let (bbox, center) = polygon_bbox_center(poly);
        let err = euclidean(&click.position, &center);
        errors.push(err);
        law_pairs.push((bbox.area().sqrt(), err));
        by_polygon.entry(click.target_id.as_str()).or_default().push(click);
    }

    let mut mu_pairs = Vec::new();
    for (id, clicks) in &by_polygon {
        if clicks.len() < 2 {
            continue;
        }
        let area = corpus.polygon(id).expect("checked above").bbox().area();
        let log_area = match opts.area_convention {
            AreaConvention::RelativeToImage => (area / canvas_area).ln(),
            AreaConvention::Absolute => area.ln(),
        };
        mu_pairs.push((euclidean(&clicks[0].position, &clicks[1].position), log_area));
    }

    let sigma_bc = fit_sigma_bc(&errors)?;
    let d_max = match opts.d_max {
        DmaxPolicy::Pinned(v) => v,
        DmaxPolicy::Percentile => fit_d_max(&errors)?,
    };
    let lo = mu_pairs.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let hi = mu_pairs.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
    let mut mu = None;
    for degree in (0..=opts.mu_degree).rev() {
        let candidate = fit_mu(&mu_pairs, degree)?;
        if candidate.is_nondecreasing_on(lo, hi) {
            mu = Some(candidate);
            break;
        }
    }
    let mu = mu.expect("a constant regressor is always non-decreasing");
    let sigma_ba = compute_sigma_ba(&mu_pairs, &mu)?;
    let sim = fit_sim_distance_law(&law_pairs, opts.sim_law_degree)?;

    let model = ErrorModel {
        schema_version: ERROR_MODEL_SCHEMA_VERSION,
        sigma_bc,
        d_max,
        mu_coeffs: mu,
        mu_range: (lo, hi),
        sigma_ba,
        sim_distance_coeffs: sim,
        area_convention: opts.area_convention,
    };
    model.validate()?;
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotator::{generate_polygon_corpus, ReplicaAnnotator};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Box-Muller pair, independent of the crate's Rayleigh sampler.
    fn gauss_pair(rng: &mut ChaCha8Rng) -> (f64, f64) {
        let u1: f64 = 1.0 - rng.random::<f64>();
        let u2: f64 = rng.random();
        let r = (-2.0 * u1.ln()).sqrt();
        (r * (std::f64::consts::TAU * u2).cos(), r * (std::f64::consts::TAU * u2).sin())
    }

    #[test]
    fn sigma_bc_monte_carlo() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let errors: Vec<f64> = (0..10_000)
            .map(|_| {
                let (a, b) = gauss_pair(&mut rng);
                (10.0 * a).hypot(10.0 * b)
            })
            .collect();
        let s = fit_sigma_bc(&errors).unwrap();
        assert!((9.7..=10.3).contains(&s), "{s}");
    }

    #[test]
    fn sigma_bc_closed_forms() {
        assert!(fit_sigma_bc(&[0.0; 40]).is_err());
        assert!(fit_sigma_bc(&[]).is_err());
        assert!(fit_sigma_bc(&[1.0; 10]).is_err());
        assert!(fit_sigma_bc(&[-1.0; 40]).is_err());
        let s = fit_sigma_bc(&[7.0; 40]).unwrap();
        assert!((s - 7.0 / 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn sigma_bc_scale_equivariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let errors: Vec<f64> = (0..100).map(|_| rng.random_range(0.0..50.0)).collect();
        let base = fit_sigma_bc(&errors).unwrap();
        for k in [0.5, 3.0, 17.0] {
            let scaled: Vec<f64> = errors.iter().map(|e| e * k).collect();
            assert!((fit_sigma_bc(&scaled).unwrap() - k * base).abs() < 1e-9 * k * base);
        }
    }

    #[test]
    fn d_max_order_statistic() {
        let grid: Vec<f64> = (1..=100).map(f64::from).collect();
        let d = fit_d_max(&grid).unwrap();
        assert!((d - 99.5).abs() < 0.01, "{d}");
        assert_eq!(fit_d_max(&[12.5; 9]).unwrap(), 12.5);
        assert!(fit_d_max(&[]).is_err());
    }

    #[test]
    fn mu_exact_linear_law_recovered() {
        let pairs: Vec<_> = (0..80)
            .map(|i| {
                let d = 1.5 * i as f64;
                (d, 0.05 * d - 4.0)
            })
            .collect();
        let mu = fit_mu(&pairs, 2).unwrap();
        let want = [-4.0, 0.05, 0.0];
        for (g, w) in mu.coeffs().iter().zip(want) {
            assert!((g - w).abs() < 1e-6, "{:?}", mu.coeffs());
        }
        assert_eq!(compute_sigma_ba(&pairs, &mu).unwrap(), config::SIGMA_BA_FLOOR);
    }

    #[test]
    fn mu_constant_and_rank_deficient() {
        let pairs: Vec<_> = (0..60).map(|i| (i as f64, -2.5)).collect();
        let mu = fit_mu(&pairs, 2).unwrap();
        assert!((mu.coeffs()[0] + 2.5).abs() < 1e-9);
        assert!(mu.coeffs()[1].abs() < 1e-9 && mu.coeffs()[2].abs() < 1e-9);

        let flat: Vec<_> = (0..60).map(|i| (30.0, i as f64)).collect();
        assert!(fit_mu(&flat, 2).is_err());
        assert!(fit_mu(&pairs[..10], 2).is_err());
    }

    #[test]
    fn mu_residual_mean_zero_with_symmetric_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let pairs: Vec<_> = (0..500)
            .map(|_| {
                let d = rng.random_range(0.0..100.0);
                let noise = if rng.random_bool(0.5) { 0.3 } else { -0.3 };
                (d, -5.0 + 0.03 * d + noise)
            })
            .collect();
        let mu = fit_mu(&pairs, 2).unwrap();
        let mean: f64 = pairs.iter().map(|(d, a)| a - mu.eval(*d)).sum::<f64>() / 500.0;
        assert!(mean.abs() < 1e-9);
    }

    #[test]
    fn sigma_ba_closed_forms() {
        let mu = Polynomial::new(vec![1.0]);
        let pairs: Vec<_> = (0..100)
            .map(|i| (i as f64, if i % 2 == 0 { 1.4 } else { 0.6 }))
            .collect();
        assert!((compute_sigma_ba(&pairs, &mu).unwrap() - 0.4).abs() < 1e-12);

        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let pairs: Vec<_> = (0..10_000)
            .map(|i| (i as f64, 1.0 + 0.5 * gauss_pair(&mut rng).0))
            .collect();
        let s = compute_sigma_ba(&pairs, &mu).unwrap();
        assert!((0.48..=0.52).contains(&s), "{s}");
    }

    #[test]
    fn sim_law_recovery_and_constant() {
        let pairs: Vec<_> = (0..60)
            .map(|i| {
                let s = 20.0 + 5.0 * i as f64;
                (s, 3.0 + 0.08 * s - 1e-4 * s * s)
            })
            .collect();
        let law = fit_sim_distance_law(&pairs, 2).unwrap();
        for (g, w) in law.coeffs().iter().zip([3.0, 0.08, -1e-4]) {
            assert!((g - w).abs() < 1e-6);
        }
        let flat: Vec<_> = (0..60).map(|i| (i as f64 + 1.0, 12.0)).collect();
        let law = fit_sim_distance_law(&flat, 2).unwrap();
        assert!((law.eval(50.0) - 12.0).abs() < 1e-9);
        assert!(law.coeffs()[1].abs() < 1e-9);
    }

    #[test]
    fn full_fit_on_replica_corpus() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let ann = ReplicaAnnotator::default();
        let corpus = generate_polygon_corpus(&mut rng, 2000, 2, (500.0, 375.0), &ann).unwrap();
        let model = fit_error_model(&corpus, &FitOptions::default()).unwrap();
        assert_eq!(model.d_max, 70.0);
        assert!(model.sigma_bc > 5.0 && model.sigma_bc < 30.0, "{}", model.sigma_bc);
        assert!(model.mu_coeffs.is_nondecreasing_on(model.mu_range.0, model.mu_range.1));
        // more spread-out clicks mean larger objects
        assert!(model.mu_coeffs.eval(model.mu_range.1) > model.mu_coeffs.eval(model.mu_range.0));

        let fitted = fit_error_model(
            &corpus,
            &FitOptions {
                d_max: DmaxPolicy::Percentile,
                ..FitOptions::default()
            },
        )
        .unwrap();
        assert!(fitted.d_max <= 70.0 && fitted.d_max > 40.0, "{}", fitted.d_max);
    }
}
