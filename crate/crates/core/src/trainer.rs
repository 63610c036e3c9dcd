//! Optimization loop: sample, forward, objective, backward, update.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AutodiffError, Graph, Tensor2};
use crate::checkpoint::Checkpoint;
use crate::data::{sample_batches, Batch, DataError, PairedDataset, Split};
use crate::eval::{evaluate, EvalError, EvalReport};
use crate::losses::{total_loss, LossBreakdown, LossConfig, LossError, LossWeights};
use crate::model::{forward, BoundParams, ModelDims, ModelError, ModelParams};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub base_lr: f64,
    /// Multiplicative learning-rate decay applied every `lr_decay_every` epochs.
    pub lr_decay: f64,
    pub lr_decay_every: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Fraction of audio clips held out for validation when the manifest
    /// does not designate them.
    pub val_fraction: f64,
    pub hidden: usize,
    pub embed_dim: usize,
    pub seed: u64,
    pub loss: LossWeights,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            base_lr: 1e-4,
            lr_decay: 0.1,
            lr_decay_every: 20,
            batch_size: 32,
            optimizer: OptimizerKind::Adam,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            val_fraction: 0.1,
            hidden: 256,
            embed_dim: 1024,
            seed: 0,
            loss: LossWeights::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let fail = |field: &str, msg: String| Err(TrainError::Config(format!("{field}: {msg}")));
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return fail("base_lr", format!("must be > 0, got {}", self.base_lr));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return fail("lr_decay", format!("must be in (0, 1], got {}", self.lr_decay));
        }
        if self.lr_decay_every == 0 {
            return fail("lr_decay_every", "must be >= 1".into());
        }
        if self.batch_size < 2 {
            return fail("batch_size", format!("must be >= 2, got {}", self.batch_size));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return fail("adam_beta1/adam_beta2", "must be in [0, 1)".into());
        }
        if self.adam_eps.is_nan() || self.adam_eps <= 0.0 {
            return fail("adam_eps", "must be > 0".into());
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return fail("val_fraction", format!("must be in [0, 1), got {}", self.val_fraction));
        }
        if self.hidden == 0 || self.embed_dim == 0 {
            return fail("hidden/embed_dim", "must be > 0".into());
        }
        self.loss
            .validate()
            .map_err(|e| TrainError::Config(format!("loss: {e}")))
    }

    pub fn model_dims(&self, data: &PairedDataset) -> ModelDims {
        ModelDims {
            d_a: data.audio_dim(),
            d_t: data.text_dim(),
            hidden: self.hidden,
            embed_dim: self.embed_dim,
        }
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        lr_at(epoch, self.base_lr, self.lr_decay, self.lr_decay_every)
    }
}

/// Step schedule: `base_lr * decay^floor(epoch / every)`.
pub fn lr_at(epoch: usize, base_lr: f64, decay: f64, every: usize) -> f64 {
    base_lr * decay.powi((epoch / every) as i32)
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("non-finite value in the objective at epoch {epoch} step {step}: {detail}")]
    NonFiniteLoss {
        epoch: usize,
        step: usize,
        detail: String,
        last_good: Box<Checkpoint>,
    },
    #[error("non-finite gradient in {tensor} at epoch {epoch} step {step}")]
    NonFiniteGradient {
        tensor: String,
        epoch: usize,
        step: usize,
        last_good: Box<Checkpoint>,
    },
    #[error("training split has {pairs} pairs, fewer than one batch of {batch_size}")]
    NoBatches { pairs: usize, batch_size: usize },
}

/// First-order optimizers over [`ModelParams`].
#[derive(Clone, Debug)]
pub struct Optimizer {
    kind: OptimizerKind,
    beta1: f64,
    beta2: f64,
    eps: f64,
    steps: u64,
    first_moment: Vec<Tensor2<f64>>,
    second_moment: Vec<Tensor2<f64>>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, beta1: f64, beta2: f64, eps: f64, params: &ModelParams<f32>) -> Self {
        let zeros = || -> Vec<Tensor2<f64>> {
            match kind {
                OptimizerKind::Adam => params
                    .tensors()
                    .iter()
                    .map(|t| Tensor2::zeros(t.rows(), t.cols()))
                    .collect(),
                OptimizerKind::Sgd => Vec::new(),
            }
        };
        Self {
            kind,
            beta1,
            beta2,
            eps,
            steps: 0,
            first_moment: zeros(),
            second_moment: zeros(),
        }
    }

    pub fn from_config(config: &TrainConfig, params: &ModelParams<f32>) -> Self {
        Self::new(config.optimizer, config.adam_beta1, config.adam_beta2, config.adam_eps, params)
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Applies one update. Gradients are screened first, so on error the
    /// parameters and state are untouched; the error names the offending
    /// tensor.
    pub fn step(&mut self, params: &mut ModelParams<f32>, grads: &[Tensor2<f32>], lr: f64) -> Result<(), String> {
        let names = ModelParams::<f32>::tensor_names();
        assert_eq!(grads.len(), names.len(), "one gradient per parameter tensor");
        for (name, g) in names.iter().zip(grads) {
            if g.data().iter().any(|v| !v.is_finite()) {
                return Err(name.clone());
            }
        }
        self.steps += 1;
        let t = self.steps as i32;
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        for (k, (p, g)) in params.tensors_mut().into_iter().zip(grads).enumerate() {
            assert_eq!(p.shape(), g.shape(), "gradient shape for {}", names[k]);
            match self.kind {
                OptimizerKind::Sgd => {
                    for (w, &d) in p.data_mut().iter_mut().zip(g.data()) {
                        *w = (*w as f64 - lr * d as f64) as f32;
                    }
                }
                OptimizerKind::Adam => {
                    let m = self.first_moment[k].data_mut();
                    let v = self.second_moment[k].data_mut();
                    let (c1, c2) = (1.0 - b1.powi(t), 1.0 - b2.powi(t));
                    for (((w, &d), m), v) in p.data_mut().iter_mut().zip(g.data()).zip(m).zip(v) {
                        let d = d as f64;
                        *m = b1 * *m + (1.0 - b1) * d;
                        *v = b2 * *v + (1.0 - b2) * d * d;
                        let update = (*m / c1) / ((*v / c2).sqrt() + eps);
                        *w = (*w as f64 - lr * update) as f32;
                    }
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub epoch: usize,
    /// Global step, starting at 1.
    pub step: usize,
    pub loss: LossBreakdown,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochSummary {
    pub epoch: usize,
    pub lr: f64,
    pub steps: usize,
    /// Pairs left out by the short last batch.
    pub dropped: usize,
    pub mean_total: f64,
    pub tau_min: f64,
    pub tau_mean: f64,
    pub tau_max: f64,
    pub val: Option<EvalReport>,
}

pub enum TrainEvent<'a> {
    Step(&'a StepRecord),
    Epoch(&'a EpochSummary),
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: ModelParams<f32>,
    pub log: Vec<StepRecord>,
    pub epochs: Vec<EpochSummary>,
    /// Highest summed validation R@1 (both directions); earliest wins ties.
    pub best: Option<Checkpoint>,
    pub split: Split,
    pub loss_config: LossConfig,
}

impl TrainOutcome {
    pub fn final_checkpoint(&self, seed: u64) -> Checkpoint {
        Checkpoint {
            params: self.params.clone(),
            seed,
            epoch: self.epochs.len(),
            score: self.epochs.last().and_then(|e| e.val.as_ref()).map(EvalReport::r1_sum),
        }
    }
}

fn non_finite_detail(err: &AutodiffError) -> Option<String> {
    matches!(err, AutodiffError::NonFinite { .. }).then(|| err.to_string())
}

/// One optimization step on a batch. Returns the loss breakdown before the
/// update.
pub fn train_step(
    params: &mut ModelParams<f32>,
    optimizer: &mut Optimizer,
    batch: &Batch,
    loss_config: &LossConfig,
    lr: f64,
) -> Result<LossBreakdown, StepError> {
    let mut graph = Graph::new();
    let bound = BoundParams::bind(&mut graph, params);
    let audio = graph.constant(batch.audio.clone());
    let text = graph.constant(batch.text.clone());
    let state = forward(&mut graph, &bound, audio, text).map_err(|e| match e {
        ModelError::Autodiff(ref inner) => match non_finite_detail(inner) {
            Some(d) => StepError::NonFinite(d),
            None => StepError::Model(e),
        },
        other => StepError::Model(other),
    })?;
    let (root, breakdown) = total_loss(&mut graph, &state, loss_config).map_err(|e| match e {
        LossError::Autodiff(ref inner) => match non_finite_detail(inner) {
            Some(d) => StepError::NonFinite(d),
            None => StepError::Loss(e),
        },
        other => StepError::Loss(other),
    })?;
    if let Err(e) = graph.backward(root) {
        return Err(match non_finite_detail(&e) {
            Some(d) => StepError::NonFinite(d),
            None => StepError::Loss(e.into()),
        });
    }
    let grads = bound.gradients(&graph);
    optimizer
        .step(params, &grads, lr)
        .map_err(StepError::NonFiniteGradient)?;
    Ok(breakdown)
}

#[derive(Debug)]
pub enum StepError {
    NonFinite(String),
    NonFiniteGradient(String),
    Model(ModelError),
    Loss(LossError),
}

pub fn train(config: &TrainConfig, data: &PairedDataset, loss_config: &LossConfig) -> Result<TrainOutcome, TrainError> {
    train_with_observer(config, data, loss_config, |_| {})
}

/// Runs the full loop, reporting every step and epoch to `observer`.
pub fn train_with_observer(
    config: &TrainConfig,
    data: &PairedDataset,
    loss_config: &LossConfig,
    mut observer: impl FnMut(TrainEvent<'_>),
) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    let split = data.split(config.val_fraction, config.seed);
    let mut params = ModelParams::<f32>::init(config.model_dims(data), config.seed)?;
    let mut optimizer = Optimizer::from_config(config, &params);
    let mut log = Vec::new();
    let mut epochs = Vec::with_capacity(config.epochs);
    let mut best: Option<Checkpoint> = None;
    let mut global_step = 0;

    for epoch in 0..config.epochs {
        let lr = config.lr_at(epoch);
        let plan = sample_batches(&split.train, config.batch_size, config.seed, epoch)?;
        if plan.batches.is_empty() {
            return Err(TrainError::NoBatches {
                pairs: split.train.len(),
                batch_size: config.batch_size,
            });
        }
        let first_record = log.len();
        for indices in &plan.batches {
            global_step += 1;
            let batch = Batch::gather(data, indices);
            let last_good = |p: &ModelParams<f32>| {
                Box::new(Checkpoint {
                    params: p.clone(),
                    seed: config.seed,
                    epoch,
                    score: None,
                })
            };
            let loss = match train_step(&mut params, &mut optimizer, &batch, loss_config, lr) {
                Ok(loss) => loss,
                Err(StepError::NonFinite(detail)) => {
                    return Err(TrainError::NonFiniteLoss {
                        epoch,
                        step: global_step,
                        detail,
                        last_good: last_good(&params),
                    })
                }
                Err(StepError::NonFiniteGradient(tensor)) => {
                    return Err(TrainError::NonFiniteGradient {
                        tensor,
                        epoch,
                        step: global_step,
                        last_good: last_good(&params),
                    })
                }
                Err(StepError::Model(e)) => return Err(e.into()),
                Err(StepError::Loss(e)) => return Err(e.into()),
            };
            if !loss.total.is_finite() {
                return Err(TrainError::NonFiniteLoss {
                    epoch,
                    step: global_step,
                    detail: format!("total = {}", loss.total),
                    last_good: last_good(&params),
                });
            }
            let record = StepRecord {
                epoch,
                step: global_step,
                loss,
            };
            observer(TrainEvent::Step(&record));
            log.push(record);
        }

        let records = &log[first_record..];
        let taus = records.iter().map(|r| r.loss.tau);
        let n = records.len() as f64;
        let val = if split.val.is_empty() {
            None
        } else {
            Some(evaluate(&params, data, &split.val)?)
        };
        let summary = EpochSummary {
            epoch,
            lr,
            steps: records.len(),
            dropped: plan.dropped,
            mean_total: records.iter().map(|r| r.loss.total).sum::<f64>() / n,
            tau_min: taus.clone().fold(f64::INFINITY, f64::min),
            tau_mean: taus.clone().sum::<f64>() / n,
            tau_max: taus.fold(f64::NEG_INFINITY, f64::max),
            val,
        };
        if let Some(score) = summary.val.as_ref().map(EvalReport::r1_sum) {
            if best.as_ref().and_then(|b| b.score).is_none_or(|s| score > s) {
                best = Some(Checkpoint {
                    params: params.clone(),
                    seed: config.seed,
                    epoch: epoch + 1,
                    score: Some(score),
                });
            }
        }
        observer(TrainEvent::Epoch(&summary));
        epochs.push(summary);
    }

    Ok(TrainOutcome {
        params,
        log,
        epochs,
        best,
        split,
        loss_config: *loss_config,
    })
}

pub const STEP_LOG_HEADER: &str = "epoch,step,a2t,t2a,a2a,t2t,sem,rec,total,tau,confidence";

/// Per-step training log as CSV.
pub fn write_step_log(log: &[StepRecord], mut out: impl Write) -> io::Result<()> {
    writeln!(out, "{STEP_LOG_HEADER}")?;
    for r in log {
        let l = &r.loss;
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{}",
            r.epoch, r.step, l.a2t, l.t2a, l.a2a, l.t2t, l.sem, l.rec, l.total, l.tau, l.confidence
        )?;
    }
    Ok(())
}

pub fn write_epoch_log(epochs: &[EpochSummary], mut out: impl Write) -> io::Result<()> {
    writeln!(
        out,
        "epoch,lr,steps,dropped,mean_total,tau_min,tau_mean,tau_max,val_a2t_r1,val_t2a_r1"
    )?;
    for e in epochs {
        let (a, t) = e
            .val
            .as_ref()
            .map_or((String::new(), String::new()), |v| (v.a2t.r1.to_string(), v.t2a.r1.to_string()));
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            e.epoch, e.lr, e.steps, e.dropped, e.mean_total, e.tau_min, e.tau_mean, e.tau_max, a, t
        )?;
    }
    Ok(())
}
