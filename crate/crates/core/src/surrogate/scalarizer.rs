use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::convsim::Range;
use crate::error::{Error, Result};

/// Transform applied to a target before standardization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputTransform {
    Identity,
    /// Natural log; chosen for strictly positive targets spanning decades.
    Log,
}

impl OutputTransform {
    fn forward(self, y: f64) -> f64 {
        match self {
            OutputTransform::Identity => y,
            OutputTransform::Log => y.ln(),
        }
    }

    fn inverse(self, z: f64) -> f64 {
        match self {
            OutputTransform::Identity => z,
            OutputTransform::Log => z.exp(),
        }
    }
}

/// Ratio `max / min` above which a positive target is log-transformed.
pub const LOG_SPAN: f64 = 10.0;

/// Input min-max scaling to `[0, 1]` and output standardization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scalarizer {
    pub in_min: Vec<f64>,
    pub in_max: Vec<f64>,
    pub out_transform: Vec<OutputTransform>,
    pub out_mean: Vec<f64>,
    pub out_std: Vec<f64>,
    /// Outputs that were constant on the training split.
    #[serde(default)]
    pub constant: Vec<bool>,
}

impl Scalarizer {
    /// Input bounds from `ranges`; output statistics from the training targets.
    /// Positive targets spanning at least [`LOG_SPAN`] are log-transformed first.
    pub fn fit(ranges: &[Range], train_targets: &Array2<f64>) -> Result<Self> {
        if ranges.iter().any(|r| !(r.max > r.min)) {
            return Err(Error::Config("scalarizer input ranges need max > min".into()));
        }
        if train_targets.nrows() == 0 {
            return Err(Error::Config("cannot fit output scaling without training rows".into()));
        }
        let k = train_targets.ncols();
        let mut out_transform = Vec::with_capacity(k);
        let mut out_mean = Vec::with_capacity(k);
        let mut out_std = Vec::with_capacity(k);
        let mut constant = Vec::with_capacity(k);
        for col in train_targets.axis_iter(Axis(1)) {
            let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let tf = if lo > 0.0 && hi / lo >= LOG_SPAN {
                OutputTransform::Log
            } else {
                OutputTransform::Identity
            };
            let z: Vec<f64> = col.iter().map(|&y| tf.forward(y)).collect();
            let mean = z.iter().sum::<f64>() / z.len() as f64;
            let var = z.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / z.len() as f64;
            let std = var.sqrt();
            out_transform.push(tf);
            out_mean.push(mean);
            let flat = std <= 1e-12 * mean.abs().max(1.0);
            out_std.push(if flat { 1.0 } else { std });
            constant.push(flat);
        }
        Ok(Scalarizer {
            in_min: ranges.iter().map(|r| r.min).collect(),
            in_max: ranges.iter().map(|r| r.max).collect(),
            out_transform,
            out_mean,
            out_std,
            constant,
        })
    }

    pub fn n_inputs(&self) -> usize {
        self.in_min.len()
    }

    pub fn n_outputs(&self) -> usize {
        self.out_mean.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.in_min.len();
        let k = self.out_mean.len();
        if self.in_max.len() != n || self.out_std.len() != k || self.out_transform.len() != k {
            return Err(Error::Format("scalarizer dimensions disagree".into()));
        }
        if self.in_min.iter().zip(&self.in_max).any(|(a, b)| !(b > a)) {
            return Err(Error::Format("scalarizer input range with max <= min".into()));
        }
        if self.out_std.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::Format("scalarizer output std must be positive".into()));
        }
        Ok(())
    }

    /// Scales raw inputs to `[0, 1]`, clamping values outside the domain.
    pub fn scale_inputs(&self, x: &Array2<f64>) -> Array2<f64> {
        let mut clamped = 0usize;
        let out = Array2::from_shape_fn(x.dim(), |(i, j)| {
            let (lo, hi) = (self.in_min[j], self.in_max[j]);
            let v = x[[i, j]];
            if v < lo || v > hi {
                clamped += 1;
            }
            (v.clamp(lo, hi) - lo) / (hi - lo)
        });
        if clamped > 0 {
            log::warn!("{clamped} surrogate input value(s) outside the training domain were clamped");
        }
        out
    }

    /// Raw targets to the standardized training scale.
    pub fn standardize(&self, y: &Array2<f64>) -> Array2<f64> {
        Array2::from_shape_fn(y.dim(), |(i, j)| {
            (self.out_transform[j].forward(y[[i, j]]) - self.out_mean[j]) / self.out_std[j]
        })
    }

    /// Standardized outputs back to raw target units.
    pub fn destandardize(&self, z: &Array2<f64>) -> Array2<f64> {
        Array2::from_shape_fn(z.dim(), |(i, j)| {
            self.out_transform[j].inverse(z[[i, j]] * self.out_std[j] + self.out_mean[j])
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn ranges() -> Vec<Range> {
        vec![Range::new(20e3, 200e3), Range::new(30.0, 2000.0), Range::new(20.0, 1000.0)]
    }

    #[test]
    fn min_max_endpoints_and_midpoint() {
        let s = Scalarizer::fit(&ranges(), &array![[1.0], [2.0]]).unwrap();
        let x = s.scale_inputs(&array![[20e3, 30.0, 20.0], [110e3, 1015.0, 510.0], [200e3, 2000.0, 1000.0]]);
        assert_eq!(x.row(0).to_vec(), vec![0.0, 0.0, 0.0]);
        assert_abs_diff_eq!(x[[1, 0]], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(x[[1, 1]], 0.5, epsilon = 1e-15);
        assert_eq!(x.row(2).to_vec(), vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn out_of_domain_inputs_clamp() {
        let s = Scalarizer::fit(&ranges(), &array![[1.0], [2.0]]).unwrap();
        let x = s.scale_inputs(&array![[1e6, 0.0, 500.0]]);
        assert_eq!(x[[0, 0]], 1.0);
        assert_eq!(x[[0, 1]], 0.0);
    }

    #[test]
    fn output_round_trip_and_transform_choice() {
        let y = array![[0.5, -1.0, 3.0, 1.0], [2.0, 1.0, 3.0, 2.0], [8.0, 4.0, 3.0, 4.0]];
        let s = Scalarizer::fit(&ranges(), &y).unwrap();
        assert_eq!(
            s.out_transform,
            vec![
                OutputTransform::Log,
                OutputTransform::Identity,
                OutputTransform::Identity,
                OutputTransform::Identity
            ]
        );
        // constant column falls back to unit std
        assert_eq!(s.out_std[2], 1.0);
        assert_eq!(s.constant, vec![false, false, true, false]);
        let z = s.standardize(&y);
        let m: f64 = z.column(0).sum() / 3.0;
        assert_abs_diff_eq!(m, 0.0, epsilon = 1e-12);
        let back = s.destandardize(&z);
        for (a, b) in back.iter().zip(y.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }
}
