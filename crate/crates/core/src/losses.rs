//! The four-part objective and the confidence-driven temperature.
//!
//! `total = con + alpha * sem + beta * rec` where
//!
//! * `con = a2t + t2a + a2a + t2t`; each term is an InfoNCE cross-entropy
//!   over the in-batch similarity matrix divided by the temperature. For the
//!   intra-modal terms the positive of item `i` is item `i` itself, so the
//!   terms only push distinct items of one modality apart;
//! * `sem = ||S - S^T||_F^2` with `S = cos(Z_a, Z_t)`;
//! * `rec = ||F_t - H_t||_F^2 + ||F_a - H_a||_F^2`.
//!
//! The temperature is `tau0 * gamma^c` with `c` the mean matched-pair cosine
//! of the batch. It is evaluated from the forward values and enters the
//! graph as a constant.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{check_gradients, AutodiffError, GradCheckConfig, GradCheckReport, Graph, NodeId, Scalar, Tensor2};
use crate::model::{forward, BoundParams, ForwardState, ModelError, ModelParams, NORM_EPS};

#[derive(Debug, Error)]
pub enum LossError {
    #[error("invalid loss weights: {0}")]
    InvalidWeights(String),
    #[error("contrastive loss needs at least 2 rows, got {0}")]
    TooFewRows(usize),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub tau0: f64,
    pub gamma: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 0.1,
            tau0: 0.07,
            gamma: 1.2,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<(), LossError> {
        let ok = |v: f64| v.is_finite();
        if !(ok(self.alpha) && self.alpha >= 0.0 && ok(self.beta) && self.beta >= 0.0) {
            return Err(LossError::InvalidWeights(format!(
                "alpha ({}) and beta ({}) must be finite and >= 0",
                self.alpha, self.beta
            )));
        }
        if !(ok(self.tau0) && self.tau0 > 0.0 && ok(self.gamma) && self.gamma > 0.0) {
            return Err(LossError::InvalidWeights(format!(
                "tau0 ({}) and gamma ({}) must be finite and > 0",
                self.tau0, self.gamma
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Temperature {
    /// `tau0 * gamma^confidence`, recomputed per batch.
    Adaptive { tau0: f64, gamma: f64 },
    Fixed(f64),
}

/// Which terms are active and how they are weighted.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub alpha: f64,
    pub beta: f64,
    pub temperature: Temperature,
    pub intra_modal: bool,
}

impl LossConfig {
    pub fn full(weights: &LossWeights) -> Self {
        Self {
            alpha: weights.alpha,
            beta: weights.beta,
            temperature: Temperature::Adaptive {
                tau0: weights.tau0,
                gamma: weights.gamma,
            },
            intra_modal: true,
        }
    }
}

/// Per-term values of one evaluation. Terms that are switched off (zero
/// weight or disabled intra-modal part) are not evaluated and read 0.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub a2t: f64,
    pub t2a: f64,
    pub a2a: f64,
    pub t2t: f64,
    pub con: f64,
    pub sem: f64,
    pub rec: f64,
    pub total: f64,
    pub tau: f64,
    pub confidence: f64,
}

impl LossBreakdown {
    /// Largest violation of `con = a2t + t2a + a2a + t2t` and
    /// `total = con + alpha * sem + beta * rec`.
    pub fn reconciliation_error(&self, alpha: f64, beta: f64) -> f64 {
        let con = (self.con - (self.a2t + self.t2a + self.a2a + self.t2t)).abs();
        let total = (self.total - (self.con + alpha * self.sem + beta * self.rec)).abs();
        con.max(total)
    }
}

/// `S[i][j] = cos(x_i, y_j)`.
pub fn cosine_sim_matrix<T: Scalar>(g: &mut Graph<T>, x: NodeId, y: NodeId) -> Result<NodeId, LossError> {
    let xn = g.l2_normalize_rows(x, NORM_EPS)?;
    let yn = g.l2_normalize_rows(y, NORM_EPS)?;
    let yt = g.transpose(yn)?;
    Ok(g.matmul(xn, yt)?)
}

/// Mean cosine of matched rows, `Tr(cos(X, Y)) / b`.
pub fn alignment_confidence<T: Scalar>(x: &Tensor2<T>, y: &Tensor2<T>) -> Result<f64, LossError> {
    if x.shape() != y.shape() {
        return Err(AutodiffError::ShapeMismatch {
            op: "alignment_confidence",
            left: x.shape(),
            right: y.shape(),
        }
        .into());
    }
    if x.rows() == 0 {
        return Ok(0.0);
    }
    let total: f64 = x
        .iter_rows()
        .zip(y.iter_rows())
        .map(|(a, b)| {
            let dot: f64 = a.iter().zip(b).map(|(p, q)| p.widen() * q.widen()).sum();
            let na = a.iter().map(|p| p.widen().powi(2)).sum::<f64>().sqrt().max(NORM_EPS);
            let nb = b.iter().map(|q| q.widen().powi(2)).sum::<f64>().sqrt().max(NORM_EPS);
            dot / (na * nb)
        })
        .sum();
    Ok(total / x.rows() as f64)
}

pub fn temperature_from_confidence(tau0: f64, gamma: f64, confidence: f64) -> f64 {
    tau0 * gamma.powf(confidence)
}

/// Returns `(tau, confidence)`.
pub fn adaptive_temperature<T: Scalar>(
    z_a: &Tensor2<T>,
    z_t: &Tensor2<T>,
    tau0: f64,
    gamma: f64,
) -> Result<(f64, f64), LossError> {
    LossWeights {
        tau0,
        gamma,
        ..LossWeights::default()
    }
    .validate()?;
    let confidence = alignment_confidence(z_a, z_t)?;
    Ok((temperature_from_confidence(tau0, gamma, confidence), confidence))
}

/// `-(1/b) sum_i log softmax_i(q_i K^T / tau)[i]`, stabilized by row-max
/// subtraction. Rows of `q` and `k` are expected to be unit-norm.
pub fn contrastive_directional<T: Scalar>(
    g: &mut Graph<T>,
    q: NodeId,
    k: NodeId,
    tau: f64,
) -> Result<NodeId, LossError> {
    let (qs, ks) = (g.value(q).shape(), g.value(k).shape());
    if qs != ks {
        return Err(AutodiffError::ShapeMismatch {
            op: "contrastive_directional",
            left: qs,
            right: ks,
        }
        .into());
    }
    if qs.0 < 2 {
        return Err(LossError::TooFewRows(qs.0));
    }
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(LossError::InvalidWeights(format!("temperature {tau} must be > 0")));
    }
    let kt = g.transpose(k)?;
    let sims = g.matmul(q, kt)?;
    let logits = g.scale(sims, 1.0 / tau)?;
    let lse = g.row_logsumexp(logits)?;
    let positives = g.diag(logits)?;
    let per_row = g.sub(lse, positives)?;
    Ok(g.mean(per_row)?)
}

#[derive(Clone, Copy, Debug)]
pub struct ContrastiveTerms {
    pub con: NodeId,
    pub a2t: NodeId,
    pub t2a: NodeId,
    pub a2a: Option<NodeId>,
    pub t2t: Option<NodeId>,
}

pub fn contrastive_total<T: Scalar>(
    g: &mut Graph<T>,
    z_a: NodeId,
    z_t: NodeId,
    tau: f64,
    intra_modal: bool,
) -> Result<ContrastiveTerms, LossError> {
    let a2t = contrastive_directional(g, z_a, z_t, tau)?;
    let t2a = contrastive_directional(g, z_t, z_a, tau)?;
    let mut terms = vec![(a2t, 1.0), (t2a, 1.0)];
    let (a2a, t2t) = if intra_modal {
        let a2a = contrastive_directional(g, z_a, z_a, tau)?;
        let t2t = contrastive_directional(g, z_t, z_t, tau)?;
        terms.extend([(a2a, 1.0), (t2t, 1.0)]);
        (Some(a2a), Some(t2t))
    } else {
        (None, None)
    };
    let con = g.weighted_sum(&terms)?;
    Ok(ContrastiveTerms {
        con,
        a2t,
        t2a,
        a2a,
        t2t,
    })
}

/// `||cos(Z_a, Z_t) - cos(Z_t, Z_a)||_F^2`.
pub fn semantic_consistency<T: Scalar>(g: &mut Graph<T>, z_a: NodeId, z_t: NodeId) -> Result<NodeId, LossError> {
    let s = cosine_sim_matrix(g, z_a, z_t)?;
    let st = g.transpose(s)?;
    let diff = g.sub(s, st)?;
    Ok(g.frobenius_sq(diff)?)
}

/// `||F_t - H_t||_F^2 + ||F_a - H_a||_F^2`.
pub fn reconstruction<T: Scalar>(
    g: &mut Graph<T>,
    f_a: NodeId,
    f_t: NodeId,
    h_a: NodeId,
    h_t: NodeId,
) -> Result<NodeId, LossError> {
    let dt = g.sub(f_t, h_t)?;
    let da = g.sub(f_a, h_a)?;
    let et = g.frobenius_sq(dt)?;
    let ea = g.frobenius_sq(da)?;
    Ok(g.weighted_sum(&[(et, 1.0), (ea, 1.0)])?)
}

/// Builds the full objective on top of a forward pass.
pub fn total_loss<T: Scalar>(
    g: &mut Graph<T>,
    state: &ForwardState,
    config: &LossConfig,
) -> Result<(NodeId, LossBreakdown), LossError> {
    if !(config.alpha >= 0.0 && config.beta >= 0.0) {
        return Err(LossError::InvalidWeights(format!(
            "alpha ({}) and beta ({}) must be >= 0",
            config.alpha, config.beta
        )));
    }
    let confidence = alignment_confidence(g.value(state.z_a), g.value(state.z_t))?;
    let tau = match config.temperature {
        Temperature::Adaptive { tau0, gamma } => {
            LossWeights {
                tau0,
                gamma,
                ..LossWeights::default()
            }
            .validate()?;
            temperature_from_confidence(tau0, gamma, confidence)
        }
        Temperature::Fixed(tau) => tau,
    };

    let con = contrastive_total(g, state.z_a, state.z_t, tau, config.intra_modal)?;
    let mut terms = vec![(con.con, 1.0)];
    let sem = if config.alpha > 0.0 {
        let sem = semantic_consistency(g, state.z_a, state.z_t)?;
        terms.push((sem, config.alpha));
        Some(sem)
    } else {
        None
    };
    let rec = if config.beta > 0.0 {
        let rec = reconstruction(g, state.f_a, state.f_t, state.h_a, state.h_t)?;
        terms.push((rec, config.beta));
        Some(rec)
    } else {
        None
    };
    let total = g.weighted_sum(&terms)?;

    let read = |id: Option<NodeId>| id.map_or(0.0, |id| g.scalar_value(id));
    let mut b = LossBreakdown {
        a2t: read(Some(con.a2t)),
        t2a: read(Some(con.t2a)),
        a2a: read(con.a2a),
        t2t: read(con.t2t),
        sem: read(sem),
        rec: read(rec),
        tau,
        confidence,
        ..LossBreakdown::default()
    };
    b.con = b.a2t + b.t2a + b.a2a + b.t2t;
    b.total = b.con + config.alpha * b.sem + config.beta * b.rec;
    Ok((total, b))
}

fn objective_at(
    params: &ModelParams<f64>,
    audio: &Tensor2<f64>,
    text: &Tensor2<f64>,
    config: &LossConfig,
) -> Result<(Graph<f64>, BoundParams, LossBreakdown), ObjectiveError> {
    let mut g = Graph::<f64>::new();
    let bound = BoundParams::bind(&mut g, params);
    let a = g.constant(audio.clone());
    let t = g.constant(text.clone());
    let state = forward(&mut g, &bound, a, t)?;
    let (root, breakdown) = total_loss(&mut g, &state, config)?;
    g.backward(root)?;
    Ok((g, bound, breakdown))
}

#[derive(Debug, Error)]
pub enum ObjectiveError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

/// Checks every parameter gradient of the full objective on one batch
/// against finite differences, evaluated in 64 bits. The temperature
/// realized at the base point is held fixed while perturbing, as it is
/// during training.
pub fn check_objective_gradients(
    params: &ModelParams<f64>,
    audio: &Tensor2<f64>,
    text: &Tensor2<f64>,
    config: &LossConfig,
    check: &GradCheckConfig,
) -> Result<GradCheckReport, ObjectiveError> {
    let (g, bound, base) = objective_at(params, audio, text, config)?;
    let analytic = bound.gradients(&g);
    let frozen = LossConfig {
        temperature: Temperature::Fixed(base.tau),
        ..*config
    };
    let tensors: Vec<Tensor2<f64>> = params.tensors().into_iter().cloned().collect();
    let mut failure = None;
    let report = check_gradients(&tensors, &analytic, check, |p| {
        let at = ModelParams::from_tensors(params.dims, p.to_vec())
            .map_err(ObjectiveError::from)
            .and_then(|p| objective_at(&p, audio, text, &frozen));
        match at {
            Ok((g, _, b)) => Ok((b.total, g.relu_pattern())),
            Err(e) => {
                failure = Some(e);
                Err(AutodiffError::InvalidArgument {
                    op: "objective",
                    reason: "evaluation failed".into(),
                })
            }
        }
    });
    match (report, failure) {
        (_, Some(e)) => Err(e),
        (r, None) => Ok(r?),
    }
}
