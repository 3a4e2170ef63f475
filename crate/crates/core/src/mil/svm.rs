//! Linear SVM trained by dual coordinate descent.
//!
//! Objective, with the bias folded into the weights through a constant
//! feature of 1:
//!
//! ```text
//! lambda/2 |w|^2 + 1/(2 N+) sum_{i in +} hinge_i + 1/(2 N-) sum_{i in -} hinge_i
//! ```
//!
//! Each class carries half of the loss, so duplicating the whole training
//! set leaves the objective, and therefore the model, unchanged.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AppearanceModel {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl AppearanceModel {
    pub fn zeros(dim: usize) -> Self {
        AppearanceModel {
            weights: vec![0.0; dim],
            bias: 0.0,
        }
    }

    /// Raw margin `w . x + b`.
    pub fn margin(&self, feature: &[f64]) -> f64 {
        self.weights
            .iter()
            .zip(feature)
            .map(|(w, x)| w * x)
            .sum::<f64>()
            + self.bias
    }

    pub fn is_finite(&self) -> bool {
        self.bias.is_finite() && self.weights.iter().all(|w| w.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SvmParams {
    pub lambda: f64,
    pub tolerance: f64,
    pub max_epochs: usize,
}

impl Default for SvmParams {
    fn default() -> Self {
        SvmParams {
            lambda: config::SVM_LAMBDA,
            tolerance: config::SVM_TOLERANCE,
            max_epochs: config::SVM_MAX_EPOCHS,
        }
    }
}

/// Primal objective of `model` on the given data.
pub fn svm_objective<P: AsRef<[f64]>, N: AsRef<[f64]>>(
    model: &AppearanceModel,
    positives: &[P],
    negatives: &[N],
    lambda: f64,
) -> f64 {
    let reg = 0.5
        * lambda
        * (model.weights.iter().map(|w| w * w).sum::<f64>() + model.bias * model.bias);
    let mean_hinge = |margins: Vec<f64>| -> f64 {
        let n = margins.len() as f64;
        margins.into_iter().map(|m| (1.0 - m).max(0.0)).sum::<f64>() / n
    };
    let pos = mean_hinge(positives.iter().map(|x| model.margin(x.as_ref())).collect());
    let neg = mean_hinge(negatives.iter().map(|x| -model.margin(x.as_ref())).collect());
    reg + 0.5 * pos + 0.5 * neg
}

pub fn train_svm<P: AsRef<[f64]>, N: AsRef<[f64]>>(
    positives: &[P],
    negatives: &[N],
    params: &SvmParams,
    seed: u64,
) -> Result<AppearanceModel> {
    if positives.is_empty() || negatives.is_empty() {
        return Err(Error::invalid(format!(
            "svm needs both classes: {} positives, {} negatives",
            positives.len(),
            negatives.len()
        )));
    }
    if !(params.lambda > 0.0 && params.lambda.is_finite()) {
        return Err(Error::config("lambda", "must be finite and > 0"));
    }
    let dim = positives[0].as_ref().len();
    let rows: Vec<(&[f64], f64)> = positives
        .iter()
        .map(|x| (x.as_ref(), 1.0))
        .chain(negatives.iter().map(|x| (x.as_ref(), -1.0)))
        .collect();
    if let Some((x, _)) = rows.iter().find(|(x, _)| x.len() != dim) {
        return Err(Error::invalid(format!(
            "feature dimension mismatch: expected {dim}, got {}",
            x.len()
        )));
    }
    if rows.iter().any(|(x, _)| x.iter().any(|v| !v.is_finite())) {
        return Err(Error::invalid("non-finite feature value"));
    }

    let upper_pos = 1.0 / (2.0 * positives.len() as f64 * params.lambda);
    let upper_neg = 1.0 / (2.0 * negatives.len() as f64 * params.lambda);
    let sq_norm: Vec<f64> = rows
        .iter()
        .map(|(x, _)| x.iter().map(|v| v * v).sum::<f64>() + 1.0)
        .collect();

    let mut model = AppearanceModel::zeros(dim);
    let mut alpha = vec![0.0; rows.len()];
    let mut index: Vec<usize> = (0..rows.len()).collect();
    let mut active = rows.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut prev = 0.0;
    // Shrinking: a coordinate at a bound whose gradient points further out
    // than anything seen in the previous epoch is parked until the active
    // set converges, then everything is re-checked.
    let (mut pg_max_old, mut pg_min_old) = (f64::INFINITY, f64::NEG_INFINITY);

    for _ in 0..params.max_epochs {
        index[..active].shuffle(&mut rng);
        let (mut pg_max, mut pg_min) = (f64::NEG_INFINITY, f64::INFINITY);
        let mut s = 0;
        while s < active {
            let i = index[s];
            let (x, y) = rows[i];
            let upper = if y > 0.0 { upper_pos } else { upper_neg };
            let grad = y * model.margin(x) - 1.0;
            let projected = if alpha[i] <= 0.0 {
                if grad > pg_max_old {
                    active -= 1;
                    index.swap(s, active);
                    continue;
                }
                grad.min(0.0)
            } else if alpha[i] >= upper {
                if grad < pg_min_old {
                    active -= 1;
                    index.swap(s, active);
                    continue;
                }
                grad.max(0.0)
            } else {
                grad
            };
            pg_max = pg_max.max(projected);
            pg_min = pg_min.min(projected);
            s += 1;
            if projected == 0.0 {
                continue;
            }
            let next = (alpha[i] - grad / sq_norm[i]).clamp(0.0, upper);
            let step = (next - alpha[i]) * y;
            if step != 0.0 {
                for (w, v) in model.weights.iter_mut().zip(x) {
                    *w += step * v;
                }
                model.bias += step;
                alpha[i] = next;
            }
        }
        // dual objective, monotone under coordinate descent
        let sq_w = model.weights.iter().map(|w| w * w).sum::<f64>() + model.bias * model.bias;
        let obj = alpha.iter().sum::<f64>() - 0.5 * sq_w;
        let settled = (obj - prev).abs() <= params.tolerance * obj.abs().max(f64::MIN_POSITIVE);
        prev = obj;
        if settled {
            if active == rows.len() {
                break;
            }
            active = rows.len();
            pg_max_old = f64::INFINITY;
            pg_min_old = f64::NEG_INFINITY;
            continue;
        }
        pg_max_old = if pg_max <= 0.0 { f64::INFINITY } else { pg_max };
        pg_min_old = if pg_min >= 0.0 { f64::NEG_INFINITY } else { pg_min };
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn params() -> SvmParams {
        SvmParams {
            lambda: 1e-3,
            ..SvmParams::default()
        }
    }

    #[test]
    fn separable_toy_set_has_zero_hinge_loss() {
        let pos = vec![vec![2.0, 2.5], vec![3.0, 1.5], vec![2.5, 3.0], vec![4.0, 2.0]];
        let neg = vec![vec![-2.0, -1.0], vec![-1.5, -3.0], vec![-3.0, -2.0], vec![-1.0, -2.5]];
        let m = train_svm(&pos, &neg, &params(), 1).unwrap();
        for x in &pos {
            assert!(m.margin(x) >= 1.0 - 1e-6, "{}", m.margin(x));
        }
        for x in &neg {
            assert!(m.margin(x) <= -1.0 + 1e-6, "{}", m.margin(x));
        }
        let hinge: f64 = pos
            .iter()
            .map(|x| (1.0 - m.margin(x)).max(0.0))
            .chain(neg.iter().map(|x| (1.0 + m.margin(x)).max(0.0)))
            .sum();
        assert!(hinge < 1e-6, "{hinge}");
    }

    #[test]
    fn identical_classes_give_zero_model() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let data: Vec<Vec<f64>> = (0..40)
            .map(|_| (0..5).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let m = train_svm(&data, &data, &params(), 2).unwrap();
        assert!(m.weights.iter().all(|w| w.abs() < 1e-3), "{:?}", m.weights);
        assert!(m.bias.abs() < 1e-3);
    }

    #[test]
    fn duplicating_the_dataset_keeps_the_model() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let pos: Vec<Vec<f64>> = (0..30)
            .map(|_| vec![rng.random_range(0.0..2.0), rng.random_range(-1.0..1.0)])
            .collect();
        let neg: Vec<Vec<f64>> = (0..50)
            .map(|_| vec![rng.random_range(-1.5..0.5), rng.random_range(-1.0..1.0)])
            .collect();
        let p = SvmParams {
            lambda: 1e-2,
            tolerance: 1e-12,
            max_epochs: 5000,
        };
        let a = train_svm(&pos, &neg, &p, 5).unwrap();
        let pos2: Vec<_> = pos.iter().chain(&pos).cloned().collect();
        let neg2: Vec<_> = neg.iter().chain(&neg).cloned().collect();
        let b = train_svm(&pos2, &neg2, &p, 5).unwrap();
        let oa = svm_objective(&a, &pos, &neg, p.lambda);
        let ob = svm_objective(&b, &pos, &neg, p.lambda);
        assert!((oa - ob).abs() < 1e-6 * oa, "{oa} vs {ob}");
        for (x, y) in a.weights.iter().zip(&b.weights) {
            assert!((x - y).abs() < 1e-2, "{:?} vs {:?}", a.weights, b.weights);
        }
    }

    #[test]
    fn deterministic_under_seed() {
        let pos = vec![vec![1.0, 0.2], vec![0.8, -0.1], vec![0.1, 0.0]];
        let neg = vec![vec![-1.0, 0.3], vec![-0.2, 0.1], vec![0.2, 0.05]];
        let a = train_svm(&pos, &neg, &params(), 9).unwrap();
        let b = train_svm(&pos, &neg, &params(), 9).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn empty_class_rejected() {
        let pos = vec![vec![1.0]];
        let neg: Vec<Vec<f64>> = vec![];
        assert!(train_svm(&pos, &neg, &params(), 0).is_err());
        assert!(train_svm(&neg, &pos, &params(), 0).is_err());
        assert!(train_svm(&[vec![1.0]], &[vec![1.0, 2.0]], &params(), 0).is_err());
    }
}
