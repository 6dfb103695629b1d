use std::path::Path;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dataset::{Dataset, Split, Target};
use super::network::{mse, mse_and_grad, Activation, Mode, Network};
use super::scalarizer::Scalarizer;
use crate::convsim::Range;
use crate::error::{Error, Result};
use crate::rng;

/// Model file schema.
pub const MODEL_SCHEMA: u32 = 1;

/// Hidden depth `H` and width `N_h`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Structure {
    pub hidden_layers: usize,
    pub width: usize,
}

impl Structure {
    pub const fn new(hidden_layers: usize, width: usize) -> Self {
        Structure { hidden_layers, width }
    }

    /// `H ∈ {1,2,3,4} × N_h ∈ {5,10,20,40}`.
    pub fn default_grid() -> Vec<Structure> {
        let mut out = Vec::with_capacity(16);
        for h in 1..=4 {
            for w in [5, 10, 20, 40] {
                out.push(Structure::new(h, w));
            }
        }
        out
    }

    /// Trainable parameters for `n_in` inputs and `n_out` outputs.
    pub fn parameter_count(&self, n_in: usize, n_out: usize) -> usize {
        let (h, w) = (self.hidden_layers, self.width);
        (n_in * w + 3 * w) + (h - 1) * (w * w + 3 * w) + (w * n_out + n_out)
    }
}

impl std::fmt::Display for Structure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({}, {})", self.hidden_layers, self.width)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    /// Learning rate is multiplied by `decay_factor` every `decay_every` epochs.
    pub decay_every: usize,
    pub decay_factor: f64,
    pub seed: u64,
    pub activation: Activation,
    /// Epochs of inference-mode refinement after the main schedule, at a
    /// constant learning rate.
    pub finetune_epochs: usize,
    /// Learning rate of the refinement phase.
    pub finetune_learning_rate: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 1000,
            batch_size: 64,
            learning_rate: 1e-2,
            momentum: 0.9,
            decay_every: 200,
            decay_factor: 0.5,
            seed: 0,
            activation: Activation::Relu,
            finetune_epochs: 1000,
            finetune_learning_rate: 1e-2,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size < 2 || self.decay_every == 0 {
            return Err(Error::Config("training needs epochs >= 1, batch_size >= 2, decay_every >= 1".into()));
        }
        if !(self.learning_rate > 0.0) || !(0.0..1.0).contains(&self.momentum) || !(self.decay_factor > 0.0) {
            return Err(Error::Config("learning rate, momentum or decay factor out of range".into()));
        }
        if self.finetune_epochs > 0 && !(self.finetune_learning_rate > 0.0) {
            return Err(Error::Config("refinement learning rate must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub seed: u64,
    pub epochs: usize,
    pub structure: Structure,
    /// Standardized-scale mean squared errors.
    pub train_mse: f64,
    pub val_mse: Option<f64>,
    pub test_mse: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurrogateModel {
    pub schema: u32,
    pub targets: Vec<Target>,
    pub scalarizer: Scalarizer,
    pub network: Network,
    pub meta: TrainingMeta,
}

impl SurrogateModel {
    /// Raw `(fs, L, C)` rows to raw target values.
    pub fn predict(&self, x: &Array2<f64>) -> Array2<f64> {
        self.scalarizer.destandardize(&self.predict_standardized(x))
    }

    /// Raw inputs to predictions on the standardized target scale.
    pub fn predict_standardized(&self, x: &Array2<f64>) -> Array2<f64> {
        self.network.predict(&self.scalarizer.scale_inputs(x))
    }

    /// Standardized MSE on one split, `None` if the split is empty.
    pub fn split_mse(&self, data: &Dataset, split: Split) -> Option<f64> {
        let x = data.inputs(split);
        if x.nrows() == 0 {
            return None;
        }
        let y = self.scalarizer.standardize(&data.targets(split, &self.targets));
        Some(mse(&self.predict_standardized(&x), &y))
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema != MODEL_SCHEMA {
            return Err(Error::Format(format!(
                "model schema {} not supported (expected {MODEL_SCHEMA})",
                self.schema
            )));
        }
        self.scalarizer.validate()?;
        self.network.validate()?;
        if self.network.n_outputs() != self.targets.len() || self.scalarizer.n_outputs() != self.targets.len() {
            return Err(Error::Format("output dimension does not match target names".into()));
        }
        if self.network.n_inputs() != self.scalarizer.n_inputs() {
            return Err(Error::Format("input dimension does not match scalarizer".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let value: serde_json::Value =
            serde_json::from_str(s).map_err(|e| Error::Format(format!("model file is not valid JSON: {e}")))?;
        check_schema(&value, MODEL_SCHEMA, "model")?;
        let model: SurrogateModel =
            serde_json::from_value(value).map_err(|e| Error::Format(format!("model file: {e}")))?;
        model.validate()?;
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

pub(crate) fn check_schema(value: &serde_json::Value, expected: u32, what: &str) -> Result<()> {
    match value.get("schema").and_then(|v| v.as_u64()) {
        Some(v) if v == u64::from(expected) => Ok(()),
        other => Err(Error::Format(format!(
            "{what} schema {other:?} not supported (expected {expected})"
        ))),
    }
}

/// Trains one network on the training split by mini-batch gradient descent
/// with momentum.
pub fn train(
    data: &Dataset,
    targets: &[Target],
    ranges: &[Range],
    structure: Structure,
    cfg: &TrainConfig,
) -> Result<SurrogateModel> {
    cfg.validate()?;
    if targets.is_empty() || structure.hidden_layers == 0 || structure.width == 0 {
        return Err(Error::Config("need at least one target and a positive structure".into()));
    }
    let x_raw = data.inputs(Split::Train);
    if x_raw.nrows() < 2 {
        return Err(Error::Config("training split needs at least two rows".into()));
    }
    let y_raw = data.targets(Split::Train, targets);
    let scalarizer = Scalarizer::fit(ranges, &y_raw)?;
    let x = scalarizer.scale_inputs(&x_raw);
    let y = scalarizer.standardize(&y_raw);

    let mut rng = rng::stream(cfg.seed, rng::TRAINING);
    let mut net = Network::new(x.ncols(), structure.hidden_layers, structure.width, targets.len(), cfg.activation, &mut rng)?;
    let mut velocity: Vec<Vec<f64>> = net.params_mut().iter().map(|p| vec![0.0; p.len()]).collect();
    let mut order: Vec<usize> = (0..x.nrows()).collect();
    let mut lr = cfg.learning_rate;

    for epoch in 0..cfg.epochs {
        if epoch > 0 && epoch % cfg.decay_every == 0 {
            lr *= cfg.decay_factor;
        }
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            if batch.len() < 2 {
                continue;
            }
            let xb = x.select(Axis(0), batch);
            let yb = y.select(Axis(0), batch);
            let (pred, trace) = net.forward_batch(&xb, Mode::Train)?;
            let (loss, d_out) = mse_and_grad(&pred, &yb);
            if !loss.is_finite() {
                return Err(Error::Divergence { epoch });
            }
            epoch_loss += loss;
            let grads = net.backward(&trace, &d_out);
            for ((p, g), v) in net.params_mut().into_iter().zip(&grads.0).zip(&mut velocity) {
                for ((pi, gi), vi) in p.iter_mut().zip(g).zip(v.iter_mut()) {
                    *vi = cfg.momentum * *vi - lr * gi;
                    *pi += *vi;
                }
            }
        }
        if !epoch_loss.is_finite() {
            return Err(Error::Divergence { epoch });
        }
    }

    // Refine the network exactly as it predicts: population statistics, then
    // descent with each block's normalization held fixed.
    if cfg.finetune_epochs > 0 {
        net.recalibrate(&x)?;
        velocity.iter_mut().for_each(|v| v.fill(0.0));
        for epoch in 0..cfg.finetune_epochs {
            order.shuffle(&mut rng);
            for batch in order.chunks(cfg.batch_size) {
                let xb = x.select(Axis(0), batch);
                let yb = y.select(Axis(0), batch);
                let (pred, trace) = net.forward_batch(&xb, Mode::Infer)?;
                let (loss, d_out) = mse_and_grad(&pred, &yb);
                if !loss.is_finite() {
                    return Err(Error::Divergence { epoch: cfg.epochs + epoch });
                }
                let grads = net.backward(&trace, &d_out);
                for ((p, g), v) in net.params_mut().into_iter().zip(&grads.0).zip(&mut velocity) {
                    for ((pi, gi), vi) in p.iter_mut().zip(g).zip(v.iter_mut()) {
                        *vi = cfg.momentum * *vi - cfg.finetune_learning_rate * gi;
                        *pi += *vi;
                    }
                }
            }
        }
    }

    // A constant target is predicted exactly by a zero output row.
    for (j, _) in scalarizer.constant.iter().enumerate().filter(|(_, c)| **c) {
        net.output.weight.row_mut(j).fill(0.0);
        net.output.bias[j] = 0.0;
    }

    let mut model = SurrogateModel {
        schema: MODEL_SCHEMA,
        targets: targets.to_vec(),
        scalarizer,
        network: net,
        meta: TrainingMeta {
            seed: cfg.seed,
            epochs: cfg.epochs,
            structure,
            train_mse: 0.0,
            val_mse: None,
            test_mse: None,
        },
    };
    model.meta.train_mse = model.split_mse(data, Split::Train).expect("training rows present");
    model.meta.val_mse = model.split_mse(data, Split::Val);
    model.meta.test_mse = model.split_mse(data, Split::Test);
    if !model.meta.train_mse.is_finite() {
        return Err(Error::Divergence { epoch: cfg.epochs });
    }
    Ok(model)
}

/// Result of one candidate in a structure search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateScore {
    pub structure: Structure,
    pub val_mse: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct Selection {
    pub model: SurrogateModel,
    pub scores: Vec<CandidateScore>,
}

/// Trains every candidate with the same seed and keeps the one with the least
/// validation MSE; ties go to fewer parameters, then to the earlier candidate.
pub fn select_structure(
    data: &Dataset,
    targets: &[Target],
    ranges: &[Range],
    candidates: &[Structure],
    cfg: &TrainConfig,
) -> Result<Selection> {
    if candidates.len() < 2 {
        return Err(Error::Config("structure selection needs at least two candidates".into()));
    }
    if data.split_len(Split::Val) == 0 {
        return Err(Error::Config("structure selection needs a validation split".into()));
    }
    let results: Vec<Result<SurrogateModel>> = candidates
        .par_iter()
        .map(|s| train(data, targets, ranges, *s, cfg))
        .collect();

    let n_in = ranges.len();
    let mut best: Option<(usize, f64)> = None;
    let mut scores = Vec::with_capacity(candidates.len());
    let mut last_err = None;
    for (i, (s, r)) in candidates.iter().zip(&results).enumerate() {
        match r {
            Ok(m) => {
                let v = m.meta.val_mse.expect("validation split present");
                scores.push(CandidateScore {
                    structure: *s,
                    val_mse: Some(v),
                    error: None,
                });
                let better = match best {
                    None => true,
                    Some((j, bv)) => {
                        v < bv
                            || (v == bv
                                && s.parameter_count(n_in, targets.len())
                                    < candidates[j].parameter_count(n_in, targets.len()))
                    }
                };
                if better && v.is_finite() {
                    best = Some((i, v));
                }
            }
            Err(e) => {
                scores.push(CandidateScore {
                    structure: *s,
                    val_mse: None,
                    error: Some(e.to_string()),
                });
                last_err = Some(i);
            }
        }
    }
    let mut results = results;
    match best {
        Some((i, _)) => Ok(Selection {
            model: results.swap_remove(i).expect("chosen candidate trained"),
            scores,
        }),
        None => {
            let i = last_err.expect("no candidate succeeded, so one failed");
            Err(results.swap_remove(i).expect_err("failed candidate"))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::super::dataset::DataRow;
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ranges() -> Vec<Range> {
        vec![Range::new(0.0, 1.0), Range::new(0.0, 1.0), Range::new(0.0, 1.0)]
    }

    /// Rows with `P_Ls1 = f(x)` and all other targets constant.
    fn synthetic(n: usize, f: impl Fn(f64, f64, f64) -> f64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let splits = super::super::dataset::assign_splits(n, &mut rng);
        let rows = splits
            .into_iter()
            .map(|split| {
                let (a, b, c) = (rng.random::<f64>(), rng.random::<f64>(), rng.random::<f64>());
                DataRow {
                    fs_hz: a,
                    l_uh: b,
                    c_uf: c,
                    targets: [f(a, b, c), 1.0, 1.0, 1.0, 1.0, 1.0, 1.0],
                    vol_cm3: 1.0,
                    ccm: true,
                    split,
                }
            })
            .collect();
        Dataset::new(rows)
    }

    fn full_batch(n_train: usize) -> TrainConfig {
        TrainConfig {
            epochs: 500,
            batch_size: n_train,
            learning_rate: 0.1,
            ..TrainConfig::default()
        }
    }

    fn quick(epochs: usize) -> TrainConfig {
        TrainConfig {
            epochs,
            decay_every: (epochs / 5).max(1),
            ..TrainConfig::default()
        }
    }

    #[test]
    fn learns_a_linear_function() {
        // Full-batch steps: with batches of 64 the batch-statistics noise
        // holds this small network near 1e-3.
        let d = synthetic(600, |a, b, c| 2.0 + a - 0.5 * b + 0.25 * c);
        let cfg = full_batch(420);
        let m = train(&d, &[Target::PLs1], &ranges(), Structure::new(1, 4), &cfg).unwrap();
        assert!(m.meta.test_mse.unwrap() < 1e-4, "{:?}", m.meta);
    }

    #[test]
    fn constant_target_is_reproduced() {
        let d = synthetic(200, |_, _, _| 3.5);
        let m = train(&d, &[Target::PLs2], &ranges(), Structure::new(1, 4), &quick(50)).unwrap();
        assert!(m.meta.test_mse.unwrap() < 1e-8, "{:?}", m.meta);
        let p = m.predict(&d.inputs(Split::Test));
        assert!(p.iter().all(|v| (v - 1.0).abs() < 1e-4));
    }

    #[test]
    fn training_is_deterministic() {
        let d = synthetic(200, |a, b, _| 1.0 + a * b);
        let a = train(&d, &[Target::PLs1], &ranges(), Structure::new(2, 5), &quick(20)).unwrap();
        let b = train(&d, &[Target::PLs1], &ranges(), Structure::new(2, 5), &quick(20)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn selection_picks_least_validation_error() {
        let d = synthetic(300, |a, b, c| 1.0 + (3.0 * a).sin().abs() + b * c);
        let cands = [Structure::new(1, 5), Structure::new(2, 10), Structure::new(1, 20)];
        let sel = select_structure(&d, &[Target::PLs1], &ranges(), &cands, &quick(30)).unwrap();
        let best = sel.model.meta.val_mse.unwrap();
        assert!(sel.scores.iter().all(|s| best <= s.val_mse.unwrap()));
    }

    #[test]
    fn identical_candidates_return_the_first() {
        let d = synthetic(200, |a, _, _| 1.0 + a);
        let s = Structure::new(1, 5);
        let sel = select_structure(&d, &[Target::PLs1], &ranges(), &[s, s], &quick(10)).unwrap();
        assert_eq!(sel.model.meta.structure, s);
        assert_eq!(sel.scores[0].val_mse, sel.scores[1].val_mse);
    }

    #[test]
    fn divergence_is_reported() {
        let d = synthetic(200, |a, _, _| 1.0 + a);
        let cfg = TrainConfig {
            learning_rate: 1e300,
            ..quick(5)
        };
        assert!(matches!(
            train(&d, &[Target::PLs1], &ranges(), Structure::new(1, 4), &cfg),
            Err(Error::Divergence { .. })
        ));
    }

    #[test]
    fn json_round_trip_is_bit_identical() {
        let d = synthetic(200, |a, b, c| 1.0 + a + b * c);
        let m = train(&d, &[Target::PLs1, Target::PLs2], &ranges(), Structure::new(2, 5), &quick(10)).unwrap();
        let back = SurrogateModel::from_json(&m.to_json().unwrap()).unwrap();
        assert_eq!(back, m);
        let x = d.inputs(Split::Test);
        assert_eq!(back.predict(&x), m.predict(&x));
        let text = m.to_json().unwrap();
        assert!(matches!(SurrogateModel::from_json(&text[..text.len() / 2]), Err(Error::Format(_))));
        let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
        v["schema"] = 99.into();
        assert!(matches!(SurrogateModel::from_json(&v.to_string()), Err(Error::Format(_))));
    }

    #[test]
    fn parameter_count_matches_network() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for s in Structure::default_grid() {
            let n = Network::new(3, s.hidden_layers, s.width, 2, Activation::Relu, &mut rng).unwrap();
            assert_eq!(s.parameter_count(3, 2), n.parameter_count());
        }
    }
}
