//! Fully connected network with batch normalization in every hidden block.
//!
//! Hidden block: `z = x Wᵀ + b`, batch normalization of `z`, then the
//! activation. The output layer is linear. Matrices hold one sample per row.

use ndarray::{Array1, Array2, Axis, Zip};
use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const BN_EPSILON: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
    /// `ln(1 + e^x)`, smooth everywhere.
    Softplus,
}

impl Activation {
    fn apply(self, y: f64) -> f64 {
        match self {
            Activation::Relu => y.max(0.0),
            Activation::Softplus => {
                if y > 30.0 {
                    y + (-y).exp().ln_1p()
                } else {
                    y.exp().ln_1p()
                }
            }
        }
    }

    fn derivative(self, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Softplus => 1.0 / (1.0 + (-y).exp()),
        }
    }
}

/// Forward modes of a traced pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics; running statistics updated.
    Train,
    /// Batch statistics; running statistics untouched.
    TrainFrozen,
    /// Running statistics, as in [`Network::predict`]; each block is a fixed
    /// affine map, so any batch size works.
    Infer,
}

/// Affine map followed by batch normalization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BnLayer {
    /// `n_out × fan_in`.
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
    pub running_mean: Array1<f64>,
    pub running_var: Array1<f64>,
    pub epsilon: f64,
    pub momentum: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearLayer {
    /// `n_out × fan_in`.
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub hidden: Vec<BnLayer>,
    pub output: LinearLayer,
    pub activation: Activation,
}

/// Intermediate values of a batch-statistics forward pass.
#[derive(Debug, Clone)]
pub struct Trace {
    /// Input of each hidden block.
    pub inputs: Vec<Array2<f64>>,
    /// Batch-normalized pre-activations before scale and shift, per block.
    pub normalized: Vec<Array2<f64>>,
    pre_activation: Vec<Array2<f64>>,
    inv_std: Vec<Array1<f64>>,
    last_hidden: Array2<f64>,
    batch_stats: bool,
}

/// Parameter gradients in [`Network::params_mut`] order.
#[derive(Debug, Clone)]
pub struct Gradients(pub Vec<Vec<f64>>);

fn glorot<R: Rng + ?Sized>(n_out: usize, fan_in: usize, rng: &mut R) -> Array2<f64> {
    let a = (6.0 / (fan_in + n_out) as f64).sqrt();
    let dist = Uniform::new_inclusive(-a, a).expect("valid bounds");
    Array2::from_shape_simple_fn((n_out, fan_in), || dist.sample(rng))
}

impl BnLayer {
    fn new<R: Rng + ?Sized>(fan_in: usize, n_out: usize, rng: &mut R) -> Self {
        BnLayer {
            weight: glorot(n_out, fan_in, rng),
            bias: Array1::zeros(n_out),
            gamma: Array1::ones(n_out),
            beta: Array1::zeros(n_out),
            running_mean: Array1::zeros(n_out),
            running_var: Array1::ones(n_out),
            epsilon: BN_EPSILON,
            momentum: BN_MOMENTUM,
        }
    }
}

impl Network {
    /// Glorot-uniform weights, unit scale, zero shifts and biases.
    pub fn new<R: Rng + ?Sized>(
        n_in: usize,
        hidden_layers: usize,
        width: usize,
        n_out: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        if n_in == 0 || hidden_layers == 0 || width == 0 || n_out == 0 {
            return Err(Error::Config("network dimensions must be positive".into()));
        }
        let mut hidden = Vec::with_capacity(hidden_layers);
        let mut fan_in = n_in;
        for _ in 0..hidden_layers {
            hidden.push(BnLayer::new(fan_in, width, rng));
            fan_in = width;
        }
        Ok(Network {
            hidden,
            output: LinearLayer {
                weight: glorot(n_out, width, rng),
                bias: Array1::zeros(n_out),
            },
            activation,
        })
    }

    pub fn n_inputs(&self) -> usize {
        self.hidden[0].weight.ncols()
    }

    pub fn n_outputs(&self) -> usize {
        self.output.weight.nrows()
    }

    pub fn parameter_count(&self) -> usize {
        self.hidden
            .iter()
            .map(|l| l.weight.len() + 3 * l.bias.len())
            .sum::<usize>()
            + self.output.weight.len()
            + self.output.bias.len()
    }

    /// Checks shapes and batch-norm constants after deserialization.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Format(m));
        if self.hidden.is_empty() {
            return bad("network has no hidden layers".into());
        }
        let mut fan_in = self.hidden[0].weight.ncols();
        for (i, l) in self.hidden.iter().enumerate() {
            let n = l.weight.nrows();
            if l.weight.ncols() != fan_in
                || [l.bias.len(), l.gamma.len(), l.beta.len(), l.running_mean.len(), l.running_var.len()]
                    .iter()
                    .any(|&k| k != n)
            {
                return bad(format!("hidden layer {i} has inconsistent shapes"));
            }
            if !(l.epsilon > 0.0) || l.running_var.iter().any(|v| !(*v >= 0.0)) {
                return bad(format!("hidden layer {i} has invalid batch-norm statistics"));
            }
            fan_in = n;
        }
        if self.output.weight.ncols() != fan_in || self.output.bias.len() != self.output.weight.nrows() {
            return bad("output layer has inconsistent shapes".into());
        }
        Ok(())
    }

    /// Inference with running statistics. Row-wise independent.
    pub fn predict(&self, x: &Array2<f64>) -> Array2<f64> {
        let mut a = x.to_owned();
        for l in &self.hidden {
            let mut z = a.dot(&l.weight.t()) + &l.bias;
            let scale = Zip::from(&l.gamma)
                .and(&l.running_var)
                .map_collect(|g, v| g / (v + l.epsilon).sqrt());
            let shift = Zip::from(&l.beta)
                .and(&l.running_mean)
                .and(&scale)
                .map_collect(|b, m, s| b - m * s);
            z *= &scale;
            z += &shift;
            z.mapv_inplace(|y| self.activation.apply(y));
            a = z;
        }
        a.dot(&self.output.weight.t()) + &self.output.bias
    }

    /// Traced forward pass; batch statistics unless `mode` is [`Mode::Infer`].
    pub fn forward_batch(&mut self, x: &Array2<f64>, mode: Mode) -> Result<(Array2<f64>, Trace)> {
        let n = x.nrows();
        let batch_stats = mode != Mode::Infer;
        if batch_stats && n < 2 {
            return Err(Error::BatchTooSmall(n));
        }
        let mut trace = Trace {
            inputs: Vec::with_capacity(self.hidden.len()),
            normalized: Vec::with_capacity(self.hidden.len()),
            pre_activation: Vec::with_capacity(self.hidden.len()),
            inv_std: Vec::with_capacity(self.hidden.len()),
            last_hidden: Array2::zeros((0, 0)),
            batch_stats,
        };
        let activation = self.activation;
        let mut a = x.to_owned();
        for l in &mut self.hidden {
            let z = a.dot(&l.weight.t()) + &l.bias;
            let (mean, var) = if batch_stats {
                let mean = z.mean_axis(Axis(0)).expect("non-empty batch");
                let var = (&z - &mean).mapv(|v| v * v).mean_axis(Axis(0)).expect("non-empty batch");
                (mean, var)
            } else {
                (l.running_mean.clone(), l.running_var.clone())
            };
            let centered = &z - &mean;
            let inv_std = var.mapv(|v| 1.0 / (v + l.epsilon).sqrt());
            let x_hat = &centered * &inv_std;
            let y = &x_hat * &l.gamma + &l.beta;
            if mode == Mode::Train {
                let unbiased = n as f64 / (n - 1) as f64;
                let m = l.momentum;
                l.running_mean = &l.running_mean * m + &mean * (1.0 - m);
                l.running_var = &l.running_var * m + &var * ((1.0 - m) * unbiased);
            }
            trace.inputs.push(a);
            a = y.mapv(|v| activation.apply(v));
            trace.normalized.push(x_hat);
            trace.pre_activation.push(y);
            trace.inv_std.push(inv_std);
        }
        let out = a.dot(&self.output.weight.t()) + &self.output.bias;
        trace.last_hidden = a;
        Ok((out, trace))
    }

    /// Sets each block's running statistics to the exact mean and unbiased
    /// variance of its pre-normalization values over `x`, block by block.
    pub fn recalibrate(&mut self, x: &Array2<f64>) -> Result<()> {
        let n = x.nrows();
        if n < 2 {
            return Err(Error::BatchTooSmall(n));
        }
        let activation = self.activation;
        let mut a = x.to_owned();
        for l in &mut self.hidden {
            let z = a.dot(&l.weight.t()) + &l.bias;
            let mean = z.mean_axis(Axis(0)).expect("non-empty batch");
            let var = (&z - &mean).mapv(|v| v * v).sum_axis(Axis(0)) / (n - 1) as f64;
            let scale = Zip::from(&l.gamma).and(&var).map_collect(|g, v| g / (v + l.epsilon).sqrt());
            a = Zip::from(&z).and_broadcast(&mean).and_broadcast(&scale).and_broadcast(&l.beta)
                .map_collect(|z, m, s, b| activation.apply((z - m) * s + b));
            l.running_mean = mean;
            l.running_var = var;
        }
        Ok(())
    }

    /// Backpropagates `d_out = dLoss/dOutput` through a traced pass.
    pub fn backward(&self, trace: &Trace, d_out: &Array2<f64>) -> Gradients {
        let n = d_out.nrows() as f64;
        let mut grads: Vec<Vec<f64>> = Vec::with_capacity(4 * self.hidden.len() + 2);
        let d_wo = d_out.t().dot(&trace.last_hidden);
        let d_bo = d_out.sum_axis(Axis(0));
        let mut da = d_out.dot(&self.output.weight);
        let mut rev: Vec<[Vec<f64>; 4]> = Vec::with_capacity(self.hidden.len());
        for (k, l) in self.hidden.iter().enumerate().rev() {
            let y = &trace.pre_activation[k];
            let x_hat = &trace.normalized[k];
            let dy = Zip::from(&da).and(y).map_collect(|g, v| g * self.activation.derivative(*v));
            let d_gamma = (&dy * x_hat).sum_axis(Axis(0));
            let d_beta = dy.sum_axis(Axis(0));
            let dx_hat = &dy * &l.gamma;
            let dz = if trace.batch_stats {
                let sum_dxh = dx_hat.sum_axis(Axis(0));
                let sum_dxh_xh = (&dx_hat * x_hat).sum_axis(Axis(0));
                (&dx_hat * n - &sum_dxh - &(x_hat * &sum_dxh_xh)) * &(&trace.inv_std[k] / n)
            } else {
                &dx_hat * &trace.inv_std[k]
            };
            let d_w = dz.t().dot(&trace.inputs[k]);
            let d_b = dz.sum_axis(Axis(0));
            da = dz.dot(&l.weight);
            rev.push([flat2(d_w), d_b.to_vec(), d_gamma.to_vec(), d_beta.to_vec()]);
        }
        for block in rev.into_iter().rev() {
            grads.extend(block);
        }
        grads.push(flat2(d_wo));
        grads.push(d_bo.to_vec());
        Gradients(grads)
    }

    /// Trainable tensors as flat slices: per hidden block weight, bias, gamma,
    /// beta; then output weight and bias.
    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::with_capacity(4 * self.hidden.len() + 2);
        for l in &mut self.hidden {
            out.push(l.weight.as_slice_mut().expect("standard layout"));
            out.push(l.bias.as_slice_mut().expect("standard layout"));
            out.push(l.gamma.as_slice_mut().expect("standard layout"));
            out.push(l.beta.as_slice_mut().expect("standard layout"));
        }
        out.push(self.output.weight.as_slice_mut().expect("standard layout"));
        out.push(self.output.bias.as_slice_mut().expect("standard layout"));
        out
    }
}

fn flat2(a: Array2<f64>) -> Vec<f64> {
    if a.is_standard_layout() {
        a.into_raw_vec_and_offset().0
    } else {
        a.iter().copied().collect()
    }
}

/// Mean squared error over all entries and its gradient.
pub fn mse_and_grad(pred: &Array2<f64>, target: &Array2<f64>) -> (f64, Array2<f64>) {
    let diff = pred - target;
    let m = diff.len() as f64;
    let loss = diff.iter().map(|d| d * d).sum::<f64>() / m;
    (loss, diff * (2.0 / m))
}

pub fn mse(pred: &Array2<f64>, target: &Array2<f64>) -> f64 {
    let m = pred.len() as f64;
    Zip::from(pred).and(target).fold(0.0, |acc, p, t| acc + (p - t) * (p - t)) / m
}

/// Outcome of a passed gradient check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradientReport {
    pub max_rel_error: f64,
    pub parameters: usize,
}

/// Finite-difference step on the standardized scale.
pub const FD_STEP: f64 = 1e-3;

/// Compares backpropagated gradients of the batch MSE against central finite
/// differences. Use a smooth activation; ReLU kinks break the comparison.
pub fn gradient_check(net: &Network, x: &Array2<f64>, y: &Array2<f64>, tolerance: f64) -> Result<GradientReport> {
    gradient_check_with(net, x, y, tolerance, |_| {})
}

/// [`gradient_check`] with a hook that may alter the analytic gradients
/// before comparison.
pub fn gradient_check_with(
    net: &Network,
    x: &Array2<f64>,
    y: &Array2<f64>,
    tolerance: f64,
    hook: impl FnOnce(&mut Gradients),
) -> Result<GradientReport> {
    let mut work = net.clone();
    let (pred, trace) = work.forward_batch(x, Mode::TrainFrozen)?;
    let (_, d_out) = mse_and_grad(&pred, y);
    let mut grads = work.backward(&trace, &d_out);
    hook(&mut grads);

    let loss_at = |w: &mut Network| -> Result<f64> {
        let (p, _) = w.forward_batch(x, Mode::TrainFrozen)?;
        Ok(mse(&p, y))
    };
    let mut worst: f64 = 0.0;
    let mut count = 0;
    for t in 0..grads.0.len() {
        for i in 0..grads.0[t].len() {
            let orig = work.params_mut()[t][i];
            let mut at = |k: f64| -> Result<f64> {
                work.params_mut()[t][i] = orig + k * FD_STEP;
                loss_at(&mut work)
            };
            // Five-point central difference.
            let numeric = (8.0 * (at(1.0)? - at(-1.0)?) - (at(2.0)? - at(-2.0)?)) / (12.0 * FD_STEP);
            work.params_mut()[t][i] = orig;
            let analytic = grads.0[t][i];
            let denom = analytic.abs().max(numeric.abs()).max(1e-6);
            worst = worst.max((analytic - numeric).abs() / denom);
            count += 1;
        }
    }
    if worst > tolerance || !worst.is_finite() {
        return Err(Error::GradientCheck {
            max_rel_error: worst,
            tolerance,
        });
    }
    Ok(GradientReport {
        max_rel_error: worst,
        parameters: count,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn batch(n: usize, d: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_simple_fn((n, d), || rng.random::<f64>())
    }

    fn net(act: Activation) -> Network {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        Network::new(3, 3, 6, 2, act, &mut rng).unwrap()
    }

    #[test]
    fn train_mode_statistics_are_normalized() {
        let mut n = net(Activation::Relu);
        let x = batch(64, 3, 1) * 50.0;
        let (_, tr) = n.forward_batch(&x, Mode::Train).unwrap();
        for xh in &tr.normalized {
            for col in xh.axis_iter(Axis(1)) {
                let m = col.mean().unwrap();
                let v = col.mapv(|c| (c - m).powi(2)).mean().unwrap();
                assert!(m.abs() < 1e-6, "{m}");
                assert!((v - 1.0).abs() < 1e-4, "{v}");
            }
        }
    }

    #[test]
    fn batch_of_one_is_rejected_in_train_mode() {
        let mut n = net(Activation::Relu);
        assert!(matches!(n.forward_batch(&batch(1, 3, 1), Mode::Train), Err(Error::BatchTooSmall(1))));
    }

    #[test]
    fn running_stats_update_with_momentum() {
        let mut n = net(Activation::Relu);
        let x = batch(8, 3, 2);
        let z = x.dot(&n.hidden[0].weight.t());
        let mean = z.mean_axis(Axis(0)).unwrap();
        n.forward_batch(&x, Mode::Train).unwrap();
        for (r, m) in n.hidden[0].running_mean.iter().zip(mean.iter()) {
            assert!((r - 0.1 * m).abs() < 1e-14);
        }
        let before = n.hidden[0].running_mean.clone();
        n.forward_batch(&x, Mode::TrainFrozen).unwrap();
        assert_eq!(n.hidden[0].running_mean, before);
    }

    #[test]
    fn inference_is_batch_size_invariant() {
        let mut n = net(Activation::Relu);
        n.forward_batch(&batch(32, 3, 3), Mode::Train).unwrap();
        let x = batch(10, 3, 4);
        let all = n.predict(&x);
        for i in 0..10 {
            let one = n.predict(&x.slice(ndarray::s![i..i + 1, ..]).to_owned());
            assert_eq!(one.row(0), all.row(i));
        }
        assert_eq!(n.predict(&x), all);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let n = net(Activation::Softplus);
        let x = batch(16, 3, 5);
        let y = batch(16, 2, 6);
        let r = gradient_check(&n, &x, &y, 1e-4).unwrap();
        assert_eq!(r.parameters, n.parameter_count());
        assert!(r.max_rel_error < 1e-4);
    }

    #[test]
    fn corrupted_gradient_fails_check() {
        let n = net(Activation::Softplus);
        let x = batch(16, 3, 5);
        let y = batch(16, 2, 6);
        let r = gradient_check_with(&n, &x, &y, 1e-4, |g| g.0[0][0] += 0.1);
        assert!(matches!(r, Err(Error::GradientCheck { .. })));
    }

    #[test]
    fn zero_weights_and_constant_input_give_zero_gradients() {
        let mut n = net(Activation::Softplus);
        for p in n.params_mut() {
            p.fill(0.0);
        }
        let x = Array2::from_elem((8, 3), 0.5);
        let y = Array2::zeros((8, 2));
        let mut w = n.clone();
        let (p, tr) = w.forward_batch(&x, Mode::TrainFrozen).unwrap();
        let (_, d) = mse_and_grad(&p, &y);
        let g = w.backward(&tr, &d);
        assert!(g.0.iter().flatten().all(|v| *v == 0.0));
        let r = gradient_check(&n, &x, &y, 1e-4).unwrap();
        assert!(r.max_rel_error < 1e-8);
    }
}
