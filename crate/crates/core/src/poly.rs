//! Univariate polynomials and their least-squares fit.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Polynomial with coefficients in ascending order of degree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Polynomial {
    coeffs: Vec<f64>,
}

impl Polynomial {
    pub fn new(coeffs: Vec<f64>) -> Self {
        Polynomial { coeffs }
    }

    pub fn zero() -> Self {
        Polynomial { coeffs: vec![0.0] }
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn degree(&self) -> usize {
        self.coeffs.len().saturating_sub(1)
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, &c| acc * x + c)
    }

    pub fn derivative(&self) -> Polynomial {
        if self.coeffs.len() <= 1 {
            return Polynomial::zero();
        }
        Polynomial::new(
            self.coeffs
                .iter()
                .enumerate()
                .skip(1)
                .map(|(i, c)| i as f64 * c)
                .collect(),
        )
    }

    /// True when the derivative is non-negative on `[lo, hi]`.
    ///
    /// Checked on a dense grid plus both endpoints; exact for degree <= 2
    /// where the derivative is affine.
    pub fn is_nondecreasing_on(&self, lo: f64, hi: f64) -> bool {
        let d = self.derivative();
        let tol = 1e-12 * (1.0 + self.coeffs.iter().map(|c| c.abs()).fold(0.0, f64::max));
        (0..=256).all(|i| {
            let x = lo + (hi - lo) * i as f64 / 256.0;
            d.eval(x) >= -tol
        })
    }

    pub fn is_finite(&self) -> bool {
        self.coeffs.iter().all(|c| c.is_finite())
    }
}

/// Least-squares polynomial of the given degree through `(x, y)` pairs.
///
/// Columns of the Vandermonde matrix are normalized before the SVD solve so
/// the fit stays well conditioned for pixel-scale inputs. A design whose
/// rank is below `degree + 1` (for example, all `x` equal) is rejected.
pub fn fit_polynomial(pairs: &[(f64, f64)], degree: usize) -> Result<Polynomial> {
    let cols = degree + 1;
    if pairs.len() < cols {
        return Err(Error::invalid(format!(
            "need at least {cols} points for a degree-{degree} fit, got {}",
            pairs.len()
        )));
    }
    if pairs.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
        return Err(Error::invalid("non-finite regression pair"));
    }
    let n = pairs.len();
    let mut design = DMatrix::from_fn(n, cols, |r, c| pairs[r].0.powi(c as i32));
    let mut scale = vec![1.0; cols];
    for (c, s) in scale.iter_mut().enumerate() {
        let norm = design.column(c).norm();
        if norm > 0.0 {
            *s = norm;
            design.column_mut(c).unscale_mut(norm);
        }
    }
    let rhs = DVector::from_iterator(n, pairs.iter().map(|p| p.1));
    let svd = design.svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if smax <= 0.0 || smin / smax < 1e-10 {
        return Err(Error::invalid(format!(
            "rank-deficient design for degree-{degree} polynomial fit"
        )));
    }
    let sol = svd
        .solve(&rhs, 0.0)
        .map_err(|e| Error::invalid(format!("least-squares solve failed: {e}")))?;
    Ok(Polynomial::new(
        sol.iter().zip(&scale).map(|(v, s)| v / s).collect(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eval_and_derivative() {
        let p = Polynomial::new(vec![1.0, -2.0, 3.0]);
        assert_eq!(p.eval(2.0), 1.0 - 4.0 + 12.0);
        assert_eq!(p.derivative().coeffs(), &[-2.0, 6.0]);
        assert!(!p.is_nondecreasing_on(0.0, 1.0));
        assert!(p.is_nondecreasing_on(1.0, 5.0));
    }

    #[test]
    fn exact_quadratic_recovered() {
        let pairs: Vec<_> = (0..60)
            .map(|i| {
                let x = i as f64 * 2.5;
                (x, 0.3 - 0.02 * x + 0.001 * x * x)
            })
            .collect();
        let p = fit_polynomial(&pairs, 2).unwrap();
        for (got, want) in p.coeffs().iter().zip([0.3, -0.02, 0.001]) {
            assert!((got - want).abs() < 1e-9, "{got} vs {want}");
        }
    }

    #[test]
    fn constant_x_rejected() {
        let pairs: Vec<_> = (0..60).map(|i| (5.0, i as f64)).collect();
        assert!(fit_polynomial(&pairs, 2).is_err());
        assert!(fit_polynomial(&pairs, 0).is_ok());
    }
}
