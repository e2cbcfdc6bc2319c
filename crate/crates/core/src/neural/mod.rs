//! Sequence-to-one regression from precision points to link lengths.
//!
//! An expert is a stacked LSTM whose affine head emits four raw values. The
//! type-specifying layer maps them to `T` parameters with the sign pattern of
//! the expert's linkage type, so every prediction belongs to that type.

mod adam;
mod checkpoint;
mod network;
mod train;

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datagen::{DatagenError, Sample, MAX_POINTS};
use crate::kinematics::{dims_from_t_unchecked, normalize_angle, LinkageDims, TParams, TypeConfig, T_MATRIX};
use crate::points::PrecisionPointSequence;

pub use adam::Adam;
pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint, TrainState, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use network::{backward, forward, ForwardCache, LstmLayer, Weights};
pub use train::{default_gen_config, lr_at_epoch, score_samples, train_expert, TrainReport, Trainer};

/// Features per time step: input and output angle in radians.
pub const INPUT_WIDTH: usize = 2;

#[derive(Debug, Error)]
pub enum NeuralError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("predicted dims {0:?} are not a valid linkage")]
    InvalidPrediction([f64; 4]),
    #[error("non-finite loss at epoch {epoch}, batch {batch}: {loss}")]
    NanLoss { epoch: usize, batch: usize, loss: f64 },
    #[error("invalid hyperparameters: {0}")]
    Hyper(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Data(#[from] DatagenError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpertHyperParams {
    pub layers: usize,
    pub hidden: usize,
    pub dropout_p: f64,
    pub lr: f64,
    pub weight_decay: f64,
    pub schedule_milestones: Vec<usize>,
    pub gamma: f64,
    pub epochs: usize,
    pub samples_per_epoch: usize,
    pub batch_size: usize,
    /// Held-out samples scored after every epoch.
    pub probe_size: usize,
    /// Upper bound for generated `T` parameters.
    pub m: f64,
    /// Inclusive range of training sequence lengths.
    pub n_range: (usize, usize),
    pub seed: u64,
}

impl Default for ExpertHyperParams {
    fn default() -> Self {
        Self {
            layers: 7,
            hidden: 128,
            dropout_p: 0.3,
            lr: 1e-4,
            weight_decay: 2e-3,
            schedule_milestones: vec![200],
            gamma: 0.8,
            epochs: 2000,
            samples_per_epoch: 1024,
            batch_size: 32,
            probe_size: 64,
            m: crate::datagen::DEFAULT_M,
            n_range: (3, MAX_POINTS),
            seed: 0,
        }
    }
}

impl ExpertHyperParams {
    /// Desk-scale settings: 300 epochs of 256 samples with 64 hidden units.
    pub fn smoke() -> Self {
        Self {
            layers: 2,
            hidden: 64,
            dropout_p: 0.0,
            lr: 2e-2,
            weight_decay: 5e-4,
            schedule_milestones: vec![100, 200, 250],
            gamma: 0.3,
            epochs: 300,
            samples_per_epoch: 256,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), NeuralError> {
        let fail = |msg: String| Err(NeuralError::Hyper(msg));
        if self.layers == 0 || self.hidden == 0 {
            return fail("layers and hidden must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return fail(format!("dropout_p {} must lie in [0, 1)", self.dropout_p));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) || self.weight_decay < 0.0 {
            return fail("lr must be positive and weight_decay non-negative".into());
        }
        if self.schedule_milestones.windows(2).any(|w| w[0] >= w[1]) {
            return fail("milestones must be strictly ascending".into());
        }
        if self.batch_size == 0 || self.samples_per_epoch == 0 {
            return fail("batch_size and samples_per_epoch must be positive".into());
        }
        let (lo, hi) = self.n_range;
        if lo < 1 || lo > hi || hi > MAX_POINTS {
            return fail(format!("n_range [{lo}, {hi}] must satisfy 1 <= lo <= hi <= {MAX_POINTS}"));
        }
        Ok(())
    }
}

/// A trained (or untrained) expert for one configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpertModel {
    pub cfg: TypeConfig,
    pub hyper: ExpertHyperParams,
    pub weights: Weights,
}

impl ExpertModel {
    /// Fresh model with initial weights drawn from `rng`.
    pub fn init<R: Rng + ?Sized>(cfg: TypeConfig, hyper: ExpertHyperParams, rng: &mut R) -> Self {
        let weights = Weights::init(hyper.layers, hyper.hidden, INPUT_WIDTH, rng);
        Self { cfg, hyper, weights }
    }
}

/// `ln(1 + e^x)`, stable for large `|x|`.
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Derivative of [`softplus`].
fn softplus_grad(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Signs applied to `softplus(h)`: the type's pattern for `T1..T3`, positive `T4`.
fn type_signs(cfg: TypeConfig) -> [f64; 4] {
    let s = cfg.linkage_type.signs();
    [s[0], s[1], s[2], 1.0]
}

/// Maps raw head outputs to link lengths of the configuration's type.
pub fn type_layer(h: [f64; 4], cfg: TypeConfig) -> LinkageDims {
    let signs = type_signs(cfg);
    let t: [f64; 4] = std::array::from_fn(|j| softplus(h[j]) * signs[j]);
    dims_from_t_unchecked(&TParams::from_array(t))
}

/// Backpropagates `dL/dr` through the type layer to `dL/dh`.
fn type_layer_grad(h: [f64; 4], cfg: TypeConfig, d_r: [f64; 4]) -> [f64; 4] {
    let signs = type_signs(cfg);
    std::array::from_fn(|j| {
        let d_t: f64 = 0.25 * (0..4).map(|i| T_MATRIX[j][i] * d_r[i]).sum::<f64>();
        d_t * signs[j] * softplus_grad(h[j])
    })
}

/// `1/4 sum (r_i - r_pred_i)^2`.
pub fn mse_loss(r_pred: &LinkageDims, r_true: &LinkageDims) -> f64 {
    let (p, t) = (r_pred.to_array(), r_true.to_array());
    0.25 * p.iter().zip(&t).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
}

/// Time-major feature matrix for sequences of equal length.
///
/// Input angles are copied as given. Output angles are unwrapped along each
/// sequence, so consecutive rows never differ by more than pi.
pub fn encode_batch(seqs: &[&PrecisionPointSequence]) -> Result<(Array2<f64>, usize), NeuralError> {
    let Some(first) = seqs.first() else {
        return Err(NeuralError::Shape("empty batch".into()));
    };
    let steps = first.len();
    if steps == 0 || steps > MAX_POINTS {
        return Err(NeuralError::Shape(format!("sequence length {steps} outside 1..={MAX_POINTS}")));
    }
    if seqs.iter().any(|s| s.len() != steps) {
        return Err(NeuralError::Shape("sequences in a batch must share one length".into()));
    }
    let batch = seqs.len();
    let mut xs = Array2::from_shape_fn((steps * batch, INPUT_WIDTH), |(row, j)| {
        let p = seqs[row % batch].points[row / batch];
        if j == 0 {
            p.theta_in
        } else {
            p.theta_out
        }
    });
    for row in batch..steps * batch {
        let prev = xs[[row - batch, 1]];
        xs[[row, 1]] = prev + normalize_angle(xs[[row, 1]] - prev);
    }
    Ok((xs, steps))
}

/// Raw head outputs for a single feature matrix (`n x width`).
///
/// With `rng` set the network runs in training mode (dropout active);
/// otherwise it is deterministic.
pub fn forward_features<R: Rng + ?Sized>(
    model: &ExpertModel,
    features: &Array2<f64>,
    rng: Option<&mut R>,
) -> Result<[f64; 4], NeuralError> {
    if features.ncols() != INPUT_WIDTH {
        return Err(NeuralError::Shape(format!(
            "feature width {} != {INPUT_WIDTH}",
            features.ncols()
        )));
    }
    let steps = features.nrows();
    if steps == 0 || steps > MAX_POINTS {
        return Err(NeuralError::Shape(format!("sequence length {steps} outside 1..={MAX_POINTS}")));
    }
    let dropout = rng.map(|r| (model.hyper.dropout_p, r));
    let (raw, _) = forward(&model.weights, features, 1, steps, dropout, false);
    Ok([raw[[0, 0]], raw[[0, 1]], raw[[0, 2]], raw[[0, 3]]])
}

/// Raw head outputs `h1..h4` for one sequence.
pub fn forward_points<R: Rng + ?Sized>(
    model: &ExpertModel,
    points: &PrecisionPointSequence,
    rng: Option<&mut R>,
) -> Result<[f64; 4], NeuralError> {
    let (xs, _) = encode_batch(&[points])?;
    forward_features(model, &xs, rng)
}

/// Type-layer output without the validity check.
pub fn predict_unchecked(model: &ExpertModel, points: &PrecisionPointSequence) -> Result<LinkageDims, NeuralError> {
    let h = forward_points::<rand_chacha::ChaCha8Rng>(model, points, None)?;
    Ok(type_layer(h, model.cfg))
}

/// Predicted link lengths; rejects predictions that are not a closed linkage.
pub fn predict(model: &ExpertModel, points: &PrecisionPointSequence) -> Result<LinkageDims, NeuralError> {
    let r = predict_unchecked(model, points)?;
    if r.is_valid() {
        Ok(r)
    } else {
        Err(NeuralError::InvalidPrediction(r.to_array()))
    }
}

/// Type-layer outputs for a batch of equal-length sequences, inference mode.
pub fn predict_batch_unchecked(
    model: &ExpertModel,
    seqs: &[&PrecisionPointSequence],
) -> Result<Vec<LinkageDims>, NeuralError> {
    let (xs, steps) = encode_batch(seqs)?;
    let (raw, _) = forward::<rand_chacha::ChaCha8Rng>(&model.weights, &xs, seqs.len(), steps, None, false);
    Ok(raw
        .rows()
        .into_iter()
        .map(|row| type_layer([row[0], row[1], row[2], row[3]], model.cfg))
        .collect())
}

/// Mean MSE over a batch of samples and its gradient with respect to every
/// weight (without weight decay). With `rng` set, dropout is active.
pub fn batch_loss_and_grad<R: Rng + ?Sized>(
    model: &ExpertModel,
    samples: &[Sample],
    rng: Option<&mut R>,
) -> Result<(f64, Weights), NeuralError> {
    let seqs: Vec<&PrecisionPointSequence> = samples.iter().map(|s| &s.points).collect();
    let (xs, steps) = encode_batch(&seqs)?;
    let batch = samples.len();
    let dropout = rng.map(|r| (model.hyper.dropout_p, r));
    let (raw, cache) = forward(&model.weights, &xs, batch, steps, dropout, true);
    let cache = cache.expect("cache requested");

    let mut loss = 0.0;
    let mut d_raw = Array2::<f64>::zeros((batch, 4));
    for (b, sample) in samples.iter().enumerate() {
        let h = [raw[[b, 0]], raw[[b, 1]], raw[[b, 2]], raw[[b, 3]]];
        let r_pred = type_layer(h, model.cfg);
        loss += mse_loss(&r_pred, &sample.r);
        let (p, t) = (r_pred.to_array(), sample.r.to_array());
        let d_r: [f64; 4] = std::array::from_fn(|i| 0.5 * (p[i] - t[i]) / batch as f64);
        let d_h = type_layer_grad(h, model.cfg, d_r);
        for j in 0..4 {
            d_raw[[b, j]] = d_h[j];
        }
    }
    let grads = backward(&model.weights, &cache, &d_raw);
    Ok((loss / batch as f64, grads))
}

/// Mean MSE of a batch, forward only.
pub fn batch_loss<R: Rng + ?Sized>(
    model: &ExpertModel,
    samples: &[Sample],
    rng: Option<&mut R>,
) -> Result<f64, NeuralError> {
    let seqs: Vec<&PrecisionPointSequence> = samples.iter().map(|s| &s.points).collect();
    let (xs, steps) = encode_batch(&seqs)?;
    let dropout = rng.map(|r| (model.hyper.dropout_p, r));
    let (raw, _) = forward(&model.weights, &xs, samples.len(), steps, dropout, false);
    let total: f64 = samples
        .iter()
        .enumerate()
        .map(|(b, s)| mse_loss(&type_layer([raw[[b, 0]], raw[[b, 1]], raw[[b, 2]], raw[[b, 3]]], model.cfg), &s.r))
        .sum();
    Ok(total / samples.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinematics::{classify, Inversion, LinkageType, DEFAULT_FOLD_TOL};

    #[test]
    fn type_layer_at_zero_is_ln2() {
        let cfg = TypeConfig::new(LinkageType::CrankRocker, Inversion::Plus);
        let r = type_layer([0.0; 4], cfg);
        let ln2 = std::f64::consts::LN_2;
        // 1/4 M^T (ln2, ln2, ln2, ln2)
        let expected = [0.5 * ln2, -0.5 * ln2, 0.5 * ln2, 0.5 * ln2];
        for (a, b) in r.to_array().iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn softplus_stays_positive() {
        assert!(softplus(-50.0) > 0.0);
        assert!(softplus(-700.0) > 0.0);
        assert_eq!(softplus(800.0), 800.0);
        assert!((softplus(0.0) - std::f64::consts::LN_2).abs() < 1e-16);
    }

    #[test]
    fn type_layer_signs_for_every_config() {
        for cfg in TypeConfig::all() {
            let r = type_layer([1.0, -2.0, 0.5, 6.0], cfg);
            let t = crate::kinematics::t_params(&r);
            let signs = cfg.linkage_type.signs();
            for (tj, s) in t.to_array().iter().zip(signs) {
                assert_eq!(tj.signum(), s);
            }
            if r.is_valid() {
                assert_eq!(classify(&r, DEFAULT_FOLD_TOL).unwrap(), cfg.linkage_type);
            }
        }
    }

    #[test]
    fn mse_examples() {
        let a = LinkageDims::new(1.0, 1.0, 1.0, 1.0);
        let b = LinkageDims::new(2.0, 2.0, 2.0, 2.0);
        assert_eq!(mse_loss(&a, &a), 0.0);
        assert_eq!(mse_loss(&a, &b), 1.0);
        assert_eq!(mse_loss(&b, &a), mse_loss(&a, &b));
    }

    #[test]
    fn hyper_validation() {
        let mut h = ExpertHyperParams::default();
        assert!(h.validate().is_ok());
        h.dropout_p = 1.0;
        assert!(h.validate().is_err());
        h.dropout_p = 0.3;
        h.schedule_milestones = vec![300, 200];
        assert!(h.validate().is_err());
    }

    #[test]
    fn wrong_feature_width_is_a_shape_error() {
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(1);
        let hyper = ExpertHyperParams { layers: 1, hidden: 4, ..Default::default() };
        let model = ExpertModel::init(TypeConfig::new(LinkageType::CrankRocker, Inversion::Plus), hyper, &mut rng);
        let bad = Array2::zeros((3, 3));
        assert!(matches!(
            forward_features::<rand_chacha::ChaCha8Rng>(&model, &bad, None),
            Err(NeuralError::Shape(_))
        ));
        let empty = PrecisionPointSequence::default();
        assert!(matches!(predict(&model, &empty), Err(NeuralError::Shape(_))));
    }
}
