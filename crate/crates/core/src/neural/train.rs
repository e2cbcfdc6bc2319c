//! Online training of one expert.

use std::collections::BTreeMap;
use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    batch_loss_and_grad, predict_batch_unchecked, Adam, ExpertHyperParams, ExpertModel, NeuralError, TrainState,
};
use crate::datagen::{GenConfig, PointCount, Sample, SampleStream};
use crate::kinematics::{LinkageDims, TypeConfig};
use crate::metrics::simulation_metric;
use crate::points::PrecisionPointSequence;

/// Per-epoch training trace.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epoch_loss: Vec<f64>,
    /// Mean simulation metric on the held-out probe set (invalid predictions count as 2).
    pub probe_s_simul: Vec<f64>,
    pub lr: Vec<f64>,
}

impl TrainReport {
    pub fn len(&self) -> usize {
        self.epoch_loss.len()
    }

    pub fn is_empty(&self) -> bool {
        self.epoch_loss.is_empty()
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "epoch,loss,probe_s_simul,lr")?;
        for e in 0..self.len() {
            writeln!(out, "{},{:e},{:e},{:e}", e + 1, self.epoch_loss[e], self.probe_s_simul[e], self.lr[e])?;
        }
        Ok(())
    }
}

/// Learning rate during `epoch` (0-based): multiplied by `gamma` once for
/// every milestone already reached.
pub fn lr_at_epoch(hyper: &ExpertHyperParams, epoch: usize) -> f64 {
    let passed = hyper.schedule_milestones.iter().filter(|&&m| m <= epoch).count();
    hyper.lr * hyper.gamma.powi(passed as i32)
}

pub(crate) fn sub_seed(seed: u64, tag: u64) -> u64 {
    seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Data stream implied by an expert's hyperparameters.
pub fn default_gen_config(cfg: TypeConfig, hyper: &ExpertHyperParams) -> GenConfig {
    let mut gen = GenConfig::new(cfg, hyper.seed);
    gen.m = hyper.m;
    gen.n_points = PointCount::Range(hyper.n_range.0, hyper.n_range.1);
    gen
}

fn probe_set(cfg: TypeConfig, hyper: &ExpertHyperParams) -> Result<Vec<Sample>, NeuralError> {
    let mut gen = default_gen_config(cfg, hyper);
    gen.seed = sub_seed(hyper.seed, 3);
    let mut stream = SampleStream::new(gen)?;
    (0..hyper.probe_size).map(|_| Ok(stream.next_sample()?)).collect()
}

/// Simulation metric of every sample's prediction, with invalid predictions
/// scored 2. Sequences are batched by length.
pub fn score_samples(model: &ExpertModel, samples: &[Sample]) -> Result<Vec<f64>, NeuralError> {
    let mut by_len: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, s) in samples.iter().enumerate() {
        by_len.entry(s.points.len()).or_default().push(i);
    }
    let mut scores = vec![2.0; samples.len()];
    for idx in by_len.values() {
        let seqs: Vec<&PrecisionPointSequence> = idx.iter().map(|&i| &samples[i].points).collect();
        let preds: Vec<LinkageDims> = predict_batch_unchecked(model, &seqs)?;
        for (&i, r) in idx.iter().zip(preds) {
            if let Ok(eval) = simulation_metric(&r, model.cfg, &samples[i].points) {
                scores[i] = eval.s_simul;
            }
        }
    }
    Ok(scores)
}

/// Owns everything needed to continue training deterministically.
pub struct Trainer {
    pub model: ExpertModel,
    adam: Adam,
    stream: SampleStream,
    dropout_rng: ChaCha8Rng,
    probe: Vec<Sample>,
    epoch: usize,
    report: TrainReport,
}

impl Trainer {
    /// Fresh trainer drawing data from the stream implied by `hyper`.
    pub fn new(cfg: TypeConfig, hyper: ExpertHyperParams) -> Result<Self, NeuralError> {
        let stream = SampleStream::new(default_gen_config(cfg, &hyper))?;
        Self::with_stream(cfg, hyper, stream)
    }

    pub fn with_stream(cfg: TypeConfig, hyper: ExpertHyperParams, stream: SampleStream) -> Result<Self, NeuralError> {
        hyper.validate()?;
        if stream.config().type_cfg != cfg {
            return Err(NeuralError::Hyper(format!(
                "stream generates {} samples, expert is {cfg}",
                stream.config().type_cfg
            )));
        }
        let mut init_rng = ChaCha8Rng::seed_from_u64(sub_seed(hyper.seed, 1));
        let model = ExpertModel::init(cfg, hyper.clone(), &mut init_rng);
        let adam = Adam::new(&model.weights, hyper.weight_decay);
        let dropout_rng = ChaCha8Rng::seed_from_u64(sub_seed(hyper.seed, 2));
        let probe = probe_set(cfg, &hyper)?;
        Ok(Self { model, adam, stream, dropout_rng, probe, epoch: 0, report: TrainReport::default() })
    }

    /// Rebuilds a trainer from a saved model and training state.
    pub fn from_state(model: ExpertModel, state: TrainState) -> Result<Self, NeuralError> {
        model.hyper.validate()?;
        let probe = probe_set(model.cfg, &model.hyper)?;
        Ok(Self {
            adam: state.adam,
            stream: state.stream,
            dropout_rng: state.dropout_rng,
            probe,
            epoch: state.epoch,
            report: state.report,
            model,
        })
    }

    pub fn state(&self) -> TrainState {
        TrainState {
            epoch: self.epoch,
            adam: self.adam.clone(),
            stream: self.stream.clone(),
            dropout_rng: self.dropout_rng.clone(),
            report: self.report.clone(),
        }
    }

    /// Epochs completed so far.
    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn report(&self) -> &TrainReport {
        &self.report
    }

    pub fn is_done(&self) -> bool {
        self.epoch >= self.model.hyper.epochs
    }

    pub fn run_epoch(&mut self) -> Result<(), NeuralError> {
        let hyper = self.model.hyper.clone();
        let lr = lr_at_epoch(&hyper, self.epoch);
        let mut remaining = hyper.samples_per_epoch;
        let mut loss_sum = 0.0;
        let mut batch_idx = 0;
        while remaining > 0 {
            let size = remaining.min(hyper.batch_size);
            let samples = self.stream.next_batch(size)?;
            let (loss, grads) = batch_loss_and_grad(&self.model, &samples, Some(&mut self.dropout_rng))?;
            if !loss.is_finite() {
                return Err(NeuralError::NanLoss { epoch: self.epoch, batch: batch_idx, loss });
            }
            self.adam.step(&mut self.model.weights, &grads, lr);
            loss_sum += loss * size as f64;
            remaining -= size;
            batch_idx += 1;
        }
        let probe = if self.probe.is_empty() {
            f64::NAN
        } else {
            let scores = score_samples(&self.model, &self.probe)?;
            scores.iter().sum::<f64>() / scores.len() as f64
        };
        self.report.epoch_loss.push(loss_sum / hyper.samples_per_epoch as f64);
        self.report.probe_s_simul.push(probe);
        self.report.lr.push(lr);
        self.epoch += 1;
        Ok(())
    }

    /// Trains until `hyper.epochs`, calling `after_epoch` once per finished epoch.
    pub fn run<F>(&mut self, mut after_epoch: F) -> Result<(), NeuralError>
    where
        F: FnMut(&Trainer) -> Result<(), NeuralError>,
    {
        while !self.is_done() {
            self.run_epoch()?;
            after_epoch(self)?;
        }
        Ok(())
    }

    pub fn into_parts(self) -> (ExpertModel, TrainReport) {
        (self.model, self.report)
    }
}

/// Trains one expert on an online sample stream of its configuration.
pub fn train_expert(
    cfg: TypeConfig,
    hyper: ExpertHyperParams,
    stream: SampleStream,
) -> Result<(ExpertModel, TrainReport), NeuralError> {
    let mut trainer = Trainer::with_stream(cfg, hyper, stream)?;
    trainer.run(|_| Ok(()))?;
    Ok(trainer.into_parts())
}
