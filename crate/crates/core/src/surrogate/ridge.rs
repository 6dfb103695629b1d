//! Linear ridge-regression baseline on the same scaled inputs and
//! standardized targets as the networks.

use nalgebra::{DMatrix, DVector};
use ndarray::Array2;

use super::dataset::{Dataset, Split, Target};
use super::network::mse;
use super::scalarizer::Scalarizer;
use crate::convsim::Range;
use crate::error::{Error, Result};

pub const RIDGE_LAMBDA: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct RidgeModel {
    pub targets: Vec<Target>,
    pub scalarizer: Scalarizer,
    feature_mean: Vec<f64>,
    feature_std: Vec<f64>,
    /// `(n_features + 1) × n_targets`, intercept last.
    coef: DMatrix<f64>,
}

impl RidgeModel {
    /// Closed-form fit `(XᵀX + λI) β = Xᵀy` on standardized features; the
    /// intercept is not penalized.
    pub fn fit(data: &Dataset, targets: &[Target], ranges: &[Range], lambda: f64) -> Result<Self> {
        let x_raw = data.inputs(Split::Train);
        let n = x_raw.nrows();
        if n < 2 {
            return Err(Error::Config("ridge fit needs at least two training rows".into()));
        }
        let y_raw = data.targets(Split::Train, targets);
        let scalarizer = Scalarizer::fit(ranges, &y_raw)?;
        let x = scalarizer.scale_inputs(&x_raw);
        let y = scalarizer.standardize(&y_raw);
        let d = x.ncols();
        let mut feature_mean = vec![0.0; d];
        let mut feature_std = vec![1.0; d];
        for j in 0..d {
            let col = x.column(j);
            let m = col.mean().unwrap_or(0.0);
            let s = (col.mapv(|v| (v - m).powi(2)).sum() / n as f64).sqrt();
            feature_mean[j] = m;
            feature_std[j] = if s > 0.0 { s } else { 1.0 };
        }
        let design = Self::design(&x, &feature_mean, &feature_std);
        let yt = DMatrix::from_fn(n, targets.len(), |i, j| y[[i, j]]);
        let mut gram = design.transpose() * &design;
        for j in 0..d {
            gram[(j, j)] += lambda;
        }
        let rhs = design.transpose() * yt;
        let chol = gram
            .cholesky()
            .ok_or_else(|| Error::Config("ridge normal equations are not positive definite".into()))?;
        Ok(RidgeModel {
            targets: targets.to_vec(),
            scalarizer,
            feature_mean,
            feature_std,
            coef: chol.solve(&rhs),
        })
    }

    fn design(x: &Array2<f64>, mean: &[f64], std: &[f64]) -> DMatrix<f64> {
        let d = x.ncols();
        DMatrix::from_fn(x.nrows(), d + 1, |i, j| {
            if j == d {
                1.0
            } else {
                (x[[i, j]] - mean[j]) / std[j]
            }
        })
    }

    /// Raw inputs to standardized-scale predictions.
    pub fn predict_standardized(&self, x_raw: &Array2<f64>) -> Array2<f64> {
        let x = self.scalarizer.scale_inputs(x_raw);
        let p = Self::design(&x, &self.feature_mean, &self.feature_std) * &self.coef;
        Array2::from_shape_fn((p.nrows(), p.ncols()), |(i, j)| p[(i, j)])
    }

    pub fn split_mse(&self, data: &Dataset, split: Split) -> Option<f64> {
        let x = data.inputs(split);
        if x.nrows() == 0 {
            return None;
        }
        let y = self.scalarizer.standardize(&data.targets(split, &self.targets));
        Some(mse(&self.predict_standardized(&x), &y))
    }

    /// Coefficient vector for one target, intercept last.
    pub fn coefficients(&self, target: usize) -> DVector<f64> {
        self.coef.column(target).into_owned()
    }
}
