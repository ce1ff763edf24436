//! The meta-algorithm loop: per step, choose the serving subroutine among the
//! ε-close pool members (creating one when none qualifies), output its
//! conversion hypothesis, observe the revealed step, and update every ε-close
//! subroutine.
//!
//! The pool only grows. Anchors are pairwise more than ε apart at creation
//! time, and every step is served by a record within ε of it (or created at
//! it), which sandwiches the pool size between the ε- and ε/2-covering
//! numbers of the step set whenever the bound behaves like a pseudometric.

use serde::{Deserialize, Serialize};

use crate::discrepancy::{BoundConfig, DiscrepancyBound};
use crate::error::{CrmError, Result};
use crate::process::Chunk;
use crate::subroutine::{
    Conversion, ConversionMode, Learner, LossKind, SubroutineKind, DEFAULT_SCORE_DELTA,
};

/// Threshold sequence: a constant ε or a slowly decaying ε·n^(-γ).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "schedule", rename_all = "snake_case")]
pub enum EpsilonSchedule {
    Constant { epsilon: f64 },
    Decaying { epsilon0: f64, gamma: f64 },
}

/// Decay exponent used when none is configured.
pub const DEFAULT_DECAY_GAMMA: f64 = 0.25;

impl EpsilonSchedule {
    pub fn constant(epsilon: f64) -> Self {
        EpsilonSchedule::Constant { epsilon }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            EpsilonSchedule::Constant { epsilon } => {
                if !epsilon.is_finite() || *epsilon <= 0.0 {
                    return Err(CrmError::Config(format!(
                        "threshold epsilon must be > 0, got {epsilon}"
                    )));
                }
            }
            EpsilonSchedule::Decaying { epsilon0, gamma } => {
                if !epsilon0.is_finite() || *epsilon0 <= 0.0 {
                    return Err(CrmError::Config(format!(
                        "epsilon0 must be > 0, got {epsilon0}"
                    )));
                }
                if !(*gamma > 0.0 && *gamma <= 1.0) {
                    return Err(CrmError::Config(format!(
                        "decay exponent gamma must lie in (0, 1], got {gamma}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Threshold in force at step `n` (1-based).
    pub fn value_at(&self, n: u64) -> f64 {
        match self {
            EpsilonSchedule::Constant { epsilon } => *epsilon,
            EpsilonSchedule::Decaying { epsilon0, gamma } => {
                epsilon0 * (n as f64).powf(-gamma)
            }
        }
    }
}

/// Full configuration of one run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MacroConfig {
    pub subroutine: SubroutineKind,
    pub conversion: ConversionMode,
    #[serde(default = "default_delta")]
    pub conversion_delta: f64,
    pub loss: LossKind,
    pub schedule: EpsilonSchedule,
    /// New subroutines copy the parameters of the closest pool record.
    #[serde(default = "default_true")]
    pub warm_start: bool,
    /// Retain per-record update step lists in the summary.
    #[serde(default)]
    pub diagnostics: bool,
    pub num_classes: usize,
    #[serde(default)]
    pub feature_dim: usize,
}

fn default_delta() -> f64 {
    DEFAULT_SCORE_DELTA
}

fn default_true() -> bool {
    true
}

impl MacroConfig {
    pub fn validate(&self) -> Result<()> {
        self.schedule.validate()?;
        Conversion::check_learner(self.conversion, &self.subroutine)?;
        if self.num_classes == 0 {
            return Err(CrmError::Config("num_classes must be >= 1".into()));
        }
        Ok(())
    }
}

/// One pooled learner with its anchor and conversion state.
#[derive(Debug, Clone)]
pub struct SubroutineRecord {
    /// 1-based id in creation order.
    pub id: u32,
    /// Step at which this record was created.
    pub anchor: u64,
    pub learner: Learner,
    pub conversion: Conversion,
    /// Number of observations this record has been updated with.
    pub update_count: u64,
    /// Steps at which updates happened; kept only with diagnostics enabled.
    pub update_steps: Option<Vec<u64>>,
}

/// Per-step trace record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepTrace {
    pub step: u64,
    pub chosen_id: u32,
    pub created: bool,
    pub pool_size: usize,
    pub prediction: usize,
    pub label: usize,
    pub loss: f64,
    pub epsilon: f64,
}

/// Summary of one finished run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSummary {
    pub n: u64,
    pub error_rate: f64,
    pub pool_size: usize,
    pub k_support: usize,
    pub m_min_updates: u64,
    pub subroutine_updates: Vec<u64>,
    pub anchors: Vec<u64>,
}

struct PendingStep {
    t: u64,
    epsilon: f64,
    update_set: Vec<usize>,
    active: usize,
    created: bool,
    hypothesis: Learner,
    predictions: Vec<usize>,
}

/// State of one run; steps are strictly sequential and owned by one driver.
pub struct MacroState {
    config: MacroConfig,
    bound: DiscrepancyBound,
    pool: Vec<SubroutineRecord>,
    completed_steps: u64,
    pending: Option<PendingStep>,
    traces: Vec<StepTrace>,
}

impl MacroState {
    pub fn new(config: MacroConfig, bound_config: BoundConfig) -> Result<Self> {
        config.validate()?;
        let bound = DiscrepancyBound::new(bound_config, config.num_classes)?;
        Ok(MacroState {
            config,
            bound,
            pool: Vec::new(),
            completed_steps: 0,
            pending: None,
            traces: Vec::new(),
        })
    }

    pub fn pool(&self) -> &[SubroutineRecord] {
        &self.pool
    }

    pub fn traces(&self) -> &[StepTrace] {
        &self.traces
    }

    pub fn current_step(&self) -> u64 {
        self.completed_steps
    }

    fn create_record(&mut self, t: u64, donor: Option<usize>) -> Result<usize> {
        let learner = match donor.filter(|_| self.config.warm_start) {
            Some(j) => self.pool[j].learner.clone(),
            None => Learner::new(
                &self.config.subroutine,
                self.config.loss,
                self.config.num_classes,
                self.config.feature_dim,
            )?,
        };
        let conversion = Conversion::new(self.config.conversion, self.config.conversion_delta)?;
        self.bound.register_anchor(t);
        self.pool.push(SubroutineRecord {
            id: self.pool.len() as u32 + 1,
            anchor: t,
            learner,
            conversion,
            update_count: 0,
            update_steps: self.config.diagnostics.then(Vec::new),
        });
        Ok(self.pool.len() - 1)
    }

    /// Choose-and-output phase for the next step: identifies the ε-close
    /// records, creates one if none qualifies, and returns the active
    /// hypothesis's predictions for the supplied feature vectors.
    pub fn macro_step(&mut self, features_next: &[Vec<f64>]) -> Result<Vec<usize>> {
        if self.pending.is_some() {
            return Err(CrmError::Protocol(
                "macro_step called twice without observe_and_update".into(),
            ));
        }
        let t = self.completed_steps + 1;
        let epsilon = self.config.schedule.value_at(t);

        let mut update_set: Vec<usize> = Vec::new();
        let active;
        let mut created = false;

        if self.pool.is_empty() {
            active = self.create_record(t, None)?;
            update_set.push(active);
            created = true;
        } else {
            let anchors: Vec<u64> = self.pool.iter().map(|r| r.anchor).collect();
            let values = self.bound.evaluate_many(t, &anchors, epsilon)?;
            let mut best_any: Option<(usize, f64)> = None;
            let mut best_close: Option<(usize, f64)> = None;
            for (j, &value) in values.iter().enumerate() {
                // ties resolve toward the smallest anchor, i.e. first in pool order
                if best_any.is_none_or(|(_, v)| value < v) {
                    best_any = Some((j, value));
                }
                if value <= epsilon {
                    update_set.push(j);
                    if best_close.is_none_or(|(_, v)| value < v) {
                        best_close = Some((j, value));
                    }
                }
            }
            match best_close {
                Some((j, _)) => active = j,
                None => {
                    let donor = best_any.map(|(j, _)| j);
                    active = self.create_record(t, donor)?;
                    update_set.push(active);
                    created = true;
                }
            }
        }

        let record = &self.pool[active];
        let hypothesis = record.conversion.output_hypothesis(&record.learner);
        let predictions: Vec<usize> = features_next
            .iter()
            .map(|x| hypothesis.predict(x))
            .collect();

        self.pending = Some(PendingStep {
            t,
            epsilon,
            update_set,
            active,
            created,
            hypothesis,
            predictions: predictions.clone(),
        });
        Ok(predictions)
    }

    /// Observe phase: scores the pending prediction against the revealed
    /// chunk, updates every ε-close record with each member, and advances the
    /// bound's windows.
    pub fn observe_and_update(&mut self, chunk: &Chunk) -> Result<()> {
        let pending = self.pending.take().ok_or_else(|| {
            CrmError::Protocol("observe_and_update called without a pending macro_step".into())
        })?;
        let members = chunk.members();
        if pending.predictions.len() != members.len() {
            self.pending = Some(pending);
            return Err(CrmError::Protocol(
                "observed chunk size differs from the predicted feature batch".into(),
            ));
        }

        let loss = members
            .iter()
            .map(|z| pending.hypothesis.loss_on(z, self.config.loss))
            .sum::<f64>()
            / members.len() as f64;

        for &j in &pending.update_set {
            let record = &mut self.pool[j];
            for z in members {
                record.conversion.before_update(z, self.config.loss);
                record.learner.update(z)?;
                record.conversion.after_update(&record.learner);
                record.update_count += 1;
            }
            if let Some(steps) = record.update_steps.as_mut() {
                steps.push(pending.t);
            }
        }

        self.bound.advance(members);
        self.traces.push(StepTrace {
            step: pending.t,
            chosen_id: self.pool[pending.active].id,
            created: pending.created,
            pool_size: self.pool.len(),
            prediction: pending.predictions[0],
            label: members[0].label,
            loss,
            epsilon: pending.epsilon,
        });
        self.completed_steps = pending.t;
        Ok(())
    }

    /// Drives one full prequential pass and summarizes it.
    pub fn run(&mut self, chunks: &[Chunk]) -> Result<(Vec<StepTrace>, RunSummary)> {
        if chunks.is_empty() {
            return Err(CrmError::Precondition("sequence must be nonempty".into()));
        }
        for chunk in chunks {
            let features: Vec<Vec<f64>> =
                chunk.members().iter().map(|m| m.features.clone()).collect();
            self.macro_step(&features)?;
            self.observe_and_update(chunk)?;
        }
        let summary = self.summary();
        Ok((self.traces.clone(), summary))
    }

    /// Summary of the steps completed so far.
    pub fn summary(&self) -> RunSummary {
        let counts: Vec<u64> = self.pool.iter().map(|r| r.update_count).collect();
        let (k, m) = diagnostics_k_m(&self.traces, &counts);
        RunSummary {
            n: self.completed_steps,
            error_rate: mean_loss(&self.traces),
            pool_size: self.pool.len(),
            k_support: k,
            m_min_updates: m,
            subroutine_updates: counts,
            anchors: self.pool.iter().map(|r| r.anchor).collect(),
        }
    }
}

fn mean_loss(traces: &[StepTrace]) -> f64 {
    if traces.is_empty() {
        return 0.0;
    }
    traces.iter().map(|t| t.loss).sum::<f64>() / traces.len() as f64
}

/// Support diagnostics of a finished run: `k` is the number of distinct
/// subroutines that ever served, `m` the minimum final update count over that
/// support.
pub fn diagnostics_k_m(traces: &[StepTrace], update_counts: &[u64]) -> (usize, u64) {
    let mut seen = vec![false; update_counts.len()];
    for trace in traces {
        let idx = trace.chosen_id as usize - 1;
        if idx < seen.len() {
            seen[idx] = true;
        }
    }
    let support: Vec<usize> = (0..seen.len()).filter(|&i| seen[i]).collect();
    let k = support.len();
    let m = support
        .iter()
        .map(|&i| update_counts[i])
        .min()
        .unwrap_or(0);
    (k, m)
}

/// Prequential run of a single bare learner over the sequence: the marginal
/// baseline with no pooling. Trace columns mirror the meta-algorithm's with a
/// fixed pool of one and a zero ε column.
pub fn marginal_run(
    chunks: &[Chunk],
    config: &MacroConfig,
) -> Result<(Vec<StepTrace>, RunSummary)> {
    if chunks.is_empty() {
        return Err(CrmError::Precondition("sequence must be nonempty".into()));
    }
    config.validate()?;
    let mut learner = Learner::new(
        &config.subroutine,
        config.loss,
        config.num_classes,
        config.feature_dim,
    )?;
    let mut conversion = Conversion::new(config.conversion, config.conversion_delta)?;
    let mut traces = Vec::with_capacity(chunks.len());
    let mut updates = 0u64;
    for chunk in chunks {
        let t = chunk.time_index();
        let members = chunk.members();
        let hypothesis = conversion.output_hypothesis(&learner);
        let loss = members
            .iter()
            .map(|z| hypothesis.loss_on(z, config.loss))
            .sum::<f64>()
            / members.len() as f64;
        let prediction = hypothesis.predict(&members[0].features);
        for z in members {
            conversion.before_update(z, config.loss);
            learner.update(z)?;
            conversion.after_update(&learner);
            updates += 1;
        }
        traces.push(StepTrace {
            step: t,
            chosen_id: 1,
            created: traces.is_empty(),
            pool_size: 1,
            prediction,
            label: members[0].label,
            loss,
            epsilon: 0.0,
        });
    }
    let (k, m) = diagnostics_k_m(&traces, &[updates]);
    let summary = RunSummary {
        n: traces.len() as u64,
        error_rate: mean_loss(&traces),
        pool_size: 1,
        k_support: k,
        m_min_updates: m,
        subroutine_updates: vec![updates],
        anchors: vec![1],
    };
    Ok((traces, summary))
}
