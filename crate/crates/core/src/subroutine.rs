//! Incremental learners and the online-to-batch conversions that turn a
//! learner's update trajectory into an output hypothesis.
//!
//! Three learners are provided: a logistic classifier trained by plain
//! stochastic gradient steps, a Gaussian naive Bayes keeping one running mean
//! per class, and an exact empirical-risk minimizer over a finite hypothesis
//! list. Conversions: `last` (current state), `averaging` (arithmetic mean of
//! the post-update parameter vectors; convex losses), and `score_based`
//! (pick the snapshot minimizing held-out loss plus a confidence penalty;
//! general losses).

use serde::{Deserialize, Serialize};

use crate::error::{CrmError, Result};
use crate::process::Observation;

/// Losses take values in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    ZeroOne,
    Logistic,
}

/// Scale constant for clipping the logistic loss into `[0, 1]`: losses stay
/// un-saturated while the predicted probability of the true class is at
/// least 1/100.
pub fn logistic_loss_scale() -> f64 {
    100.0_f64.ln()
}

pub fn zero_one_loss(prediction: usize, label: usize) -> f64 {
    if prediction == label {
        0.0
    } else {
        1.0
    }
}

/// Clipped logistic loss of a predicted probability for the true class.
pub fn clipped_logistic_loss(prob_true: f64) -> f64 {
    let p = prob_true.max(f64::MIN_POSITIVE);
    (-p.ln() / logistic_loss_scale()).min(1.0)
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn dot_with_bias(weights: &[f64], x: &[f64]) -> f64 {
    debug_assert_eq!(weights.len(), x.len() + 1);
    weights[..x.len()]
        .iter()
        .zip(x)
        .map(|(w, v)| w * v)
        .sum::<f64>()
        + weights[x.len()]
}

/// Unclipped logistic loss of binary weights on one observation; convex in
/// the weights, used by the averaging-conversion checks.
pub fn raw_logistic_loss(weights: &[f64], x: &[f64], label: usize) -> f64 {
    let margin = dot_with_bias(weights, x);
    // log(1 + exp(-margin)) for label 1, log(1 + exp(margin)) for label 0,
    // computed in the overflow-safe form.
    let signed = if label == 1 { margin } else { -margin };
    if signed > 0.0 {
        (-signed).exp().ln_1p()
    } else {
        -signed + signed.exp().ln_1p()
    }
}

/// A fixed hypothesis for the finite-ERM learner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Hypothesis {
    /// Always predicts the given class.
    Constant(usize),
    /// Binary linear rule on the bias-extended features: predicts 1 iff
    /// `w . [x, 1] > 0`.
    Linear(Vec<f64>),
}

impl Hypothesis {
    pub fn predict(&self, x: &[f64]) -> usize {
        match self {
            Hypothesis::Constant(c) => *c,
            Hypothesis::Linear(w) => (dot_with_bias(w, x) > 0.0) as usize,
        }
    }

    fn loss(&self, z: &Observation, loss: LossKind) -> f64 {
        match (self, loss) {
            (Hypothesis::Linear(w), LossKind::Logistic) => {
                let p1 = sigmoid(dot_with_bias(w, &z.features));
                let p_true = if z.label == 1 { p1 } else { 1.0 - p1 };
                clipped_logistic_loss(p_true)
            }
            _ => zero_one_loss(self.predict(&z.features), z.label),
        }
    }
}

/// Configuration for one learner kind.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "subroutine", rename_all = "snake_case")]
pub enum SubroutineKind {
    SgdLogistic {
        #[serde(default = "default_learning_rate")]
        learning_rate: f64,
    },
    GaussianNb,
    FiniteErm { hypotheses: Vec<Hypothesis> },
}

fn default_learning_rate() -> f64 {
    0.1
}

/// Logistic classifier updated by constant-rate stochastic gradient steps on
/// bias-extended features. Binary uses one weight vector; `K > 2` is realized
/// one-vs-rest with one block per class.
#[derive(Debug, Clone, PartialEq)]
pub struct SgdLogistic {
    weights: Vec<f64>,
    learning_rate: f64,
    num_classes: usize,
    feature_dim: usize,
}

impl SgdLogistic {
    pub fn new(learning_rate: f64, num_classes: usize, feature_dim: usize) -> Result<Self> {
        if learning_rate <= 0.0 {
            return Err(CrmError::Config("learning rate must be > 0".into()));
        }
        let blocks = if num_classes <= 2 { 1 } else { num_classes };
        Ok(SgdLogistic {
            weights: vec![0.0; blocks * (feature_dim + 1)],
            learning_rate,
            num_classes,
            feature_dim,
        })
    }

    /// Rebuilds a predictor around explicit parameters (averaged weights).
    pub fn with_weights(
        weights: Vec<f64>,
        learning_rate: f64,
        num_classes: usize,
        feature_dim: usize,
    ) -> Self {
        SgdLogistic {
            weights,
            learning_rate,
            num_classes,
            feature_dim,
        }
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    fn block(&self, c: usize) -> &[f64] {
        let stride = self.feature_dim + 1;
        &self.weights[c * stride..(c + 1) * stride]
    }

    fn update(&mut self, z: &Observation) -> Result<()> {
        if z.features.len() != self.feature_dim {
            return Err(CrmError::Precondition(format!(
                "feature dimension mismatch: learner expects {}, observation has {}",
                self.feature_dim,
                z.features.len()
            )));
        }
        let stride = self.feature_dim + 1;
        let blocks = self.weights.len() / stride;
        for c in 0..blocks {
            let target = if blocks == 1 {
                (z.label == 1) as usize as f64
            } else {
                (z.label == c) as usize as f64
            };
            let p = sigmoid(dot_with_bias(self.block(c), &z.features));
            let step = self.learning_rate * (target - p);
            let block = &mut self.weights[c * stride..(c + 1) * stride];
            for (w, x) in block[..z.features.len()].iter_mut().zip(&z.features) {
                *w += step * x;
            }
            block[stride - 1] += step;
        }
        Ok(())
    }

    fn predict(&self, x: &[f64]) -> usize {
        let stride = self.feature_dim + 1;
        let blocks = self.weights.len() / stride;
        if blocks == 1 {
            (dot_with_bias(self.block(0), x) > 0.0) as usize
        } else {
            let mut best = 0;
            let mut best_margin = f64::NEG_INFINITY;
            for c in 0..blocks {
                let margin = dot_with_bias(self.block(c), x);
                if margin > best_margin {
                    best = c;
                    best_margin = margin;
                }
            }
            best
        }
    }

    /// Predicted probability of the true label; one-vs-rest sigmoids are
    /// normalized in the multiclass case.
    fn prob_true(&self, z: &Observation) -> f64 {
        let stride = self.feature_dim + 1;
        let blocks = self.weights.len() / stride;
        if blocks == 1 {
            let p1 = sigmoid(dot_with_bias(self.block(0), &z.features));
            if z.label == 1 {
                p1
            } else {
                1.0 - p1
            }
        } else {
            let probs: Vec<f64> = (0..blocks)
                .map(|c| sigmoid(dot_with_bias(self.block(c), &z.features)))
                .collect();
            let total: f64 = probs.iter().sum();
            probs[z.label.min(blocks - 1)] / total
        }
    }
}

/// Gaussian naive Bayes reduced to per-class running means, predicting the
/// class with the closest mean. With no features it degenerates into the
/// prior-only classifier and predicts the most frequently seen class.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianNb {
    means: Vec<Vec<f64>>,
    counts: Vec<u64>,
    feature_dim: usize,
}

impl GaussianNb {
    pub fn new(num_classes: usize, feature_dim: usize) -> Self {
        GaussianNb {
            means: vec![vec![0.0; feature_dim]; num_classes],
            counts: vec![0; num_classes],
            feature_dim,
        }
    }

    pub fn class_mean(&self, class: usize) -> (&[f64], u64) {
        (&self.means[class], self.counts[class])
    }

    fn update(&mut self, z: &Observation) -> Result<()> {
        if z.features.len() != self.feature_dim {
            return Err(CrmError::Precondition(format!(
                "feature dimension mismatch: learner expects {}, observation has {}",
                self.feature_dim,
                z.features.len()
            )));
        }
        if z.label >= self.counts.len() {
            return Err(CrmError::Precondition(format!(
                "label {} out of range for {} classes",
                z.label,
                self.counts.len()
            )));
        }
        self.counts[z.label] += 1;
        let n = self.counts[z.label] as f64;
        for (m, x) in self.means[z.label].iter_mut().zip(&z.features) {
            *m += (x - *m) / n;
        }
        Ok(())
    }

    fn predict(&self, x: &[f64]) -> usize {
        if self.counts.iter().all(|&c| c == 0) {
            return 0;
        }
        if self.feature_dim == 0 {
            // Constant-predictor regime: all means coincide, so fall back to
            // the class prior and predict the most frequent seen class.
            let mut best = 0;
            let mut best_count = 0;
            for (c, &count) in self.counts.iter().enumerate() {
                if count > best_count {
                    best = c;
                    best_count = count;
                }
            }
            return best;
        }
        let mut best = 0;
        let mut best_dist = f64::INFINITY;
        for (c, mean) in self.means.iter().enumerate() {
            if self.counts[c] == 0 {
                continue;
            }
            let dist: f64 = mean
                .iter()
                .zip(x)
                .map(|(m, v)| (m - v) * (m - v))
                .sum();
            if dist < best_dist {
                best = c;
                best_dist = dist;
            }
        }
        best
    }
}

/// Exact empirical risk minimization over a finite hypothesis list: updates
/// add each hypothesis's loss, prediction applies the current minimizer.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteErm {
    hypotheses: Vec<Hypothesis>,
    cumulative: Vec<f64>,
    loss: LossKind,
}

impl FiniteErm {
    pub fn new(hypotheses: Vec<Hypothesis>, loss: LossKind) -> Result<Self> {
        if hypotheses.is_empty() {
            return Err(CrmError::Config(
                "finite_erm requires a nonempty hypothesis list".into(),
            ));
        }
        let cumulative = vec![0.0; hypotheses.len()];
        Ok(FiniteErm {
            hypotheses,
            cumulative,
            loss,
        })
    }

    /// Index of the current minimizer; ties resolve to the smallest index.
    pub fn best_index(&self) -> usize {
        let mut best = 0;
        for (i, &l) in self.cumulative.iter().enumerate() {
            if l < self.cumulative[best] {
                best = i;
            }
        }
        best
    }

    fn update(&mut self, z: &Observation) {
        for (h, c) in self.hypotheses.iter().zip(self.cumulative.iter_mut()) {
            *c += h.loss(z, self.loss);
        }
    }

    fn predict(&self, x: &[f64]) -> usize {
        self.hypotheses[self.best_index()].predict(x)
    }
}

/// A pooled learner's state; prediction is defined from the start (untrained
/// learners predict class 0).
#[derive(Debug, Clone, PartialEq)]
pub enum Learner {
    SgdLogistic(SgdLogistic),
    GaussianNb(GaussianNb),
    FiniteErm(FiniteErm),
}

impl Learner {
    pub fn new(
        kind: &SubroutineKind,
        loss: LossKind,
        num_classes: usize,
        feature_dim: usize,
    ) -> Result<Self> {
        Ok(match kind {
            SubroutineKind::SgdLogistic { learning_rate } => Learner::SgdLogistic(
                SgdLogistic::new(*learning_rate, num_classes, feature_dim)?,
            ),
            SubroutineKind::GaussianNb => {
                Learner::GaussianNb(GaussianNb::new(num_classes, feature_dim))
            }
            SubroutineKind::FiniteErm { hypotheses } => {
                Learner::FiniteErm(FiniteErm::new(hypotheses.clone(), loss)?)
            }
        })
    }

    pub fn update(&mut self, z: &Observation) -> Result<()> {
        match self {
            Learner::SgdLogistic(l) => l.update(z),
            Learner::GaussianNb(l) => l.update(z),
            Learner::FiniteErm(l) => {
                l.update(z);
                Ok(())
            }
        }
    }

    pub fn predict(&self, x: &[f64]) -> usize {
        match self {
            Learner::SgdLogistic(l) => l.predict(x),
            Learner::GaussianNb(l) => l.predict(x),
            Learner::FiniteErm(l) => l.predict(x),
        }
    }

    /// Flat parameter vector for parameter-linear learners.
    pub fn parameters(&self) -> Option<&[f64]> {
        match self {
            Learner::SgdLogistic(l) => Some(l.weights()),
            _ => None,
        }
    }

    /// Realized loss of this hypothesis on one observation.
    pub fn loss_on(&self, z: &Observation, loss: LossKind) -> f64 {
        match (self, loss) {
            (Learner::SgdLogistic(l), LossKind::Logistic) => {
                clipped_logistic_loss(l.prob_true(z))
            }
            _ => zero_one_loss(self.predict(&z.features), z.label),
        }
    }
}

/// How a subroutine's trajectory is turned into the output hypothesis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConversionMode {
    Last,
    Averaging,
    ScoreBased,
}

/// Default confidence for the score-based conversion.
pub const DEFAULT_SCORE_DELTA: f64 = 0.05;

/// Future-loss accumulator of one snapshot: losses of `h_i` on the update
/// points that arrived after snapshot `i` was taken.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SnapshotLoss {
    pub count: u64,
    pub sum: f64,
}

/// Running mean of the post-update parameter vectors.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AveragingState {
    mean: Vec<f64>,
    count: u64,
}

impl AveragingState {
    /// Arithmetic mean of the snapshots, or the learner's current (initial)
    /// parameters while no update has happened.
    pub fn parameters<'a>(&'a self, learner: &'a Learner) -> &'a [f64] {
        if self.count == 0 {
            learner.parameters().unwrap_or(&[])
        } else {
            &self.mean
        }
    }

    pub fn count(&self) -> u64 {
        self.count
    }
}

/// Snapshot scores and held-out loss accumulators for the score-based
/// conversion.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreState {
    snapshots: Vec<Learner>,
    future: Vec<SnapshotLoss>,
    delta: f64,
}

impl ScoreState {
    pub fn future_losses(&self) -> &[SnapshotLoss] {
        &self.future
    }

    pub fn snapshot_count(&self) -> usize {
        self.snapshots.len()
    }
}

/// Conversion state advanced alongside its learner.
#[derive(Debug, Clone, PartialEq)]
pub enum Conversion {
    Last,
    Averaging(AveragingState),
    ScoreBased(ScoreState),
}

impl Conversion {
    pub fn new(mode: ConversionMode, delta: f64) -> Result<Self> {
        Ok(match mode {
            ConversionMode::Last => Conversion::Last,
            ConversionMode::Averaging => Conversion::Averaging(AveragingState::default()),
            ConversionMode::ScoreBased => {
                if delta <= 0.0 || delta > 1.0 {
                    return Err(CrmError::Config(format!(
                        "score-based confidence delta must lie in (0, 1], got {delta}"
                    )));
                }
                Conversion::ScoreBased(ScoreState {
                    snapshots: Vec::new(),
                    future: Vec::new(),
                    delta,
                })
            }
        })
    }

    /// Validates mode/learner compatibility at configuration time.
    pub fn check_learner(mode: ConversionMode, kind: &SubroutineKind) -> Result<()> {
        if mode == ConversionMode::Averaging
            && !matches!(kind, SubroutineKind::SgdLogistic { .. })
        {
            return Err(CrmError::Config(
                "averaging conversion requires a parameter-linear learner (sgd_logistic)".into(),
            ));
        }
        Ok(())
    }

    /// Feeds the arriving observation to the held-out accumulators of the
    /// existing snapshots. Must run before the learner's own update.
    pub fn before_update(&mut self, z: &Observation, loss: LossKind) {
        if let Conversion::ScoreBased(state) = self {
            for (snapshot, acc) in state.snapshots.iter().zip(state.future.iter_mut()) {
                acc.count += 1;
                acc.sum += snapshot.loss_on(z, loss);
            }
        }
    }

    /// Records the post-update state. Must run after the learner's update.
    pub fn after_update(&mut self, learner: &Learner) {
        match self {
            Conversion::Last => {}
            Conversion::Averaging(state) => {
                let params = learner
                    .parameters()
                    .expect("averaging requires a parameter-linear learner");
                if state.mean.is_empty() {
                    state.mean = vec![0.0; params.len()];
                }
                state.count += 1;
                let n = state.count as f64;
                for (m, p) in state.mean.iter_mut().zip(params) {
                    *m += (p - *m) / n;
                }
            }
            Conversion::ScoreBased(state) => {
                state.snapshots.push(learner.clone());
                state.future.push(SnapshotLoss::default());
            }
        }
    }

    /// Applies the conversion's output hypothesis to a feature vector.
    pub fn predict(&self, learner: &Learner, x: &[f64]) -> usize {
        self.output_hypothesis(learner).predict(x)
    }

    /// Materializes the output hypothesis as a standalone predictor.
    pub fn output_hypothesis(&self, learner: &Learner) -> Learner {
        match self {
            Conversion::Last => learner.clone(),
            Conversion::Averaging(state) => match learner {
                Learner::SgdLogistic(l) => Learner::SgdLogistic(SgdLogistic::with_weights(
                    state.parameters(learner).to_vec(),
                    1.0,
                    l.num_classes,
                    l.feature_dim,
                )),
                _ => learner.clone(),
            },
            Conversion::ScoreBased(state) => {
                if state.snapshots.is_empty() {
                    learner.clone()
                } else {
                    let idx = score_based_select(&state.future, state.delta)
                        .expect("score state is nonempty");
                    state.snapshots[idx - 1].clone()
                }
            }
        }
    }
}

/// Confidence penalty of a snapshot validated on `t_remaining` later points:
/// `sqrt(log(s^3 (s+1) / delta) / (2 (t_remaining + 1)))`. A log argument
/// below one is clamped to one (value zero) with a warning.
pub fn confidence_term(s: u64, t_remaining: u64, delta: f64) -> Result<f64> {
    if delta <= 0.0 {
        return Err(CrmError::Config(format!(
            "confidence delta must be > 0, got {delta}"
        )));
    }
    if s == 0 {
        return Err(CrmError::Precondition(
            "confidence term requires at least one snapshot".into(),
        ));
    }
    let s = s as f64;
    let arg = s.powi(3) * (s + 1.0) / delta;
    if arg < 1.0 {
        log::warn!("confidence term log argument {arg} < 1; clamping to 0");
        return Ok(0.0);
    }
    Ok((arg.ln() / (2.0 * (t_remaining as f64 + 1.0))).sqrt())
}

/// Scores `u(i)` of the eligible snapshots `i = 1..s-1` (the final snapshot
/// has no held-out points and is excluded).
pub fn score_values(future: &[SnapshotLoss], delta: f64) -> Result<Vec<f64>> {
    if future.is_empty() {
        return Ok(Vec::new());
    }
    let s = future.len() as u64;
    let mut scores = Vec::with_capacity(future.len() - 1);
    for (idx, acc) in future[..future.len() - 1].iter().enumerate() {
        let i = idx as u64 + 1;
        let remaining = s - i;
        debug_assert_eq!(acc.count, remaining);
        let mean = acc.sum / acc.count.max(1) as f64;
        scores.push(mean + confidence_term(s, remaining, delta)?);
    }
    Ok(scores)
}

/// Snapshot index (1-based) selected by the score-based conversion: the
/// argmin of `u` over `1..s-1`, ties to the smallest index; index 1 when a
/// single snapshot exists.
pub fn score_based_select(future: &[SnapshotLoss], delta: f64) -> Result<usize> {
    if future.is_empty() {
        return Err(CrmError::Precondition(
            "score-based selection requires at least one snapshot".into(),
        ));
    }
    if future.len() == 1 {
        return Ok(1);
    }
    let scores = score_values(future, delta)?;
    let mut best = 0;
    for (i, &u) in scores.iter().enumerate() {
        if u < scores[best] {
            best = i;
        }
    }
    Ok(best + 1)
}

/// Realized-loss regret against a precomputed oracle loss stream. Negative
/// values (possible with an approximate oracle) are flagged.
pub fn empirical_regret(loss_stream: &[f64], oracle_losses: &[f64]) -> Result<f64> {
    if loss_stream.len() != oracle_losses.len() {
        return Err(CrmError::Precondition(format!(
            "loss streams differ in length: {} vs {}",
            loss_stream.len(),
            oracle_losses.len()
        )));
    }
    let regret = loss_stream.iter().sum::<f64>() - oracle_losses.iter().sum::<f64>();
    if regret < 0.0 {
        log::warn!("empirical regret {regret} is negative; oracle is approximate");
    }
    Ok(regret)
}
