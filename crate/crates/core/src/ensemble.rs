//! Parameter-free threshold selection: several runs with different thresholds
//! advance in parallel and a combiner — Follow The Leader or an exponentially
//! weighted average — picks or votes the step's prediction. Combiner feedback
//! is each member's chunk-level realized loss, observed strictly before the
//! current step.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::discrepancy::BoundConfig;
use crate::error::{CrmError, Result};
use crate::macro_core::{EpsilonSchedule, MacroConfig, MacroState, RunSummary, StepTrace};
use crate::process::Chunk;

/// How member predictions are combined.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum CombineRule {
    Ftl,
    Ewa {
        eta: f64,
        /// Sample one member per step in proportion to the weights instead of
        /// the deterministic weighted vote.
        #[serde(default)]
        sample: bool,
        #[serde(default)]
        sample_seed: u64,
    },
}

/// Learning rate used when none is configured: `sqrt(8 ln K / n)` for a known
/// horizon, 1.0 otherwise.
pub fn default_eta(grid_size: usize, horizon: Option<u64>) -> f64 {
    match horizon {
        Some(n) if n > 0 && grid_size > 1 => {
            (8.0 * (grid_size as f64).ln() / n as f64).sqrt()
        }
        _ => 1.0,
    }
}

/// Threshold grids used by the two window-distance families when no grid is
/// supplied.
pub fn default_d1_grid() -> Vec<f64> {
    vec![0.15, 0.17, 0.19, 0.22, 0.25, 0.28, 0.31, 0.34, 0.37, 0.40, 0.45, 0.47]
}

pub fn default_d2_grid() -> Vec<f64> {
    vec![0.005, 0.01, 0.05, 0.1, 0.2, 0.3, 0.4, 0.5]
}

/// Index with minimal cumulative loss; ties resolve to the smallest index.
pub fn ftl_choose(cumulative_losses: &[f64]) -> usize {
    let mut best = 0;
    for (i, &l) in cumulative_losses.iter().enumerate() {
        if l < cumulative_losses[best] {
            best = i;
        }
    }
    best
}

/// Normalized weights `w_i ∝ exp(-eta * L_i)`, computed with max-subtraction
/// stabilization.
pub fn ewa_weights(cumulative_losses: &[f64], eta: f64) -> Result<Vec<f64>> {
    if eta <= 0.0 {
        return Err(CrmError::Config(format!(
            "EWA learning rate must be > 0, got {eta}"
        )));
    }
    let min_loss = cumulative_losses
        .iter()
        .fold(f64::INFINITY, |a, &b| a.min(b));
    let raw: Vec<f64> = cumulative_losses
        .iter()
        .map(|&l| (-eta * (l - min_loss)).exp())
        .collect();
    let total: f64 = raw.iter().sum();
    Ok(raw.into_iter().map(|w| w / total).collect())
}

/// Per-step FTL choices over a loss table (rows = steps, columns = members),
/// each made from the losses of strictly earlier steps.
pub fn ftl_replay(loss_table: &[Vec<f64>]) -> Vec<usize> {
    let mut cumulative = vec![0.0; loss_table.first().map_or(0, |r| r.len())];
    let mut choices = Vec::with_capacity(loss_table.len());
    for row in loss_table {
        choices.push(ftl_choose(&cumulative));
        for (c, &l) in cumulative.iter_mut().zip(row) {
            *c += l;
        }
    }
    choices
}

/// Cumulative loss of the exponentially-weighted-average forecaster over a
/// loss table: at each step it pays the weight-averaged member loss, with
/// weights from strictly earlier losses.
pub fn ewa_forecaster_loss(loss_table: &[Vec<f64>], eta: f64) -> Result<f64> {
    let members = loss_table.first().map_or(0, |r| r.len());
    let mut cumulative = vec![0.0; members];
    let mut total = 0.0;
    for row in loss_table {
        let weights = ewa_weights(&cumulative, eta)?;
        total += weights.iter().zip(row).map(|(w, l)| w * l).sum::<f64>();
        for (c, &l) in cumulative.iter_mut().zip(row) {
            *c += l;
        }
    }
    Ok(total)
}

/// Combiner information recorded per ensemble step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CombinerInfo {
    /// FTL: index of the member that served the step.
    Choice(usize),
    /// EWA: heaviest member and its weight at service time.
    TopWeight { member: usize, weight: f64 },
}

/// One row of the ensemble trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleTraceRow {
    pub step: u64,
    pub prediction: usize,
    pub label: usize,
    pub loss: f64,
    pub combiner: CombinerInfo,
}

/// Summary of an ensemble run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnsembleSummary {
    pub n: u64,
    pub error_rate: f64,
    pub rule: String,
    pub eta: Option<f64>,
    pub grid: Vec<f64>,
    pub member_error_rates: Vec<f64>,
}

/// Output of [`run_ensemble`]: the combiner trace plus every member's own
/// trace and summary.
pub struct EnsembleRun {
    pub trace: Vec<EnsembleTraceRow>,
    pub members: Vec<(Vec<StepTrace>, RunSummary)>,
    pub summary: EnsembleSummary,
}

/// Runs one instance per grid threshold over the same sequence and combines
/// their predictions prequentially. Member feedback to the combiner is the
/// chunk-level realized loss; the ensemble's own trace loss is the fraction
/// of misclassified chunk members.
pub fn run_ensemble(
    chunks: &[Chunk],
    grid: &[f64],
    config: &MacroConfig,
    bound: &BoundConfig,
    rule: CombineRule,
) -> Result<EnsembleRun> {
    if grid.is_empty() {
        return Err(CrmError::Config("threshold grid must be nonempty".into()));
    }
    if chunks.is_empty() {
        return Err(CrmError::Precondition("sequence must be nonempty".into()));
    }
    let mut members: Vec<MacroState> = grid
        .iter()
        .map(|&epsilon| {
            let mut member_config = config.clone();
            member_config.schedule = EpsilonSchedule::constant(epsilon);
            MacroState::new(member_config, bound.clone())
        })
        .collect::<Result<_>>()?;

    let mut sampler = match rule {
        CombineRule::Ewa {
            sample: true,
            sample_seed,
            ..
        } => Some(ChaCha12Rng::seed_from_u64(sample_seed)),
        _ => None,
    };

    let mut cumulative = vec![0.0; grid.len()];
    let mut trace = Vec::with_capacity(chunks.len());
    for chunk in chunks {
        let features: Vec<Vec<f64>> =
            chunk.members().iter().map(|m| m.features.clone()).collect();
        let mut member_predictions = Vec::with_capacity(members.len());
        for member in members.iter_mut() {
            member_predictions.push(member.macro_step(&features)?);
        }

        let (predictions, info) = match rule {
            CombineRule::Ftl => {
                let choice = ftl_choose(&cumulative);
                (member_predictions[choice].clone(), CombinerInfo::Choice(choice))
            }
            CombineRule::Ewa { eta, .. } => {
                let weights = ewa_weights(&cumulative, eta)?;
                let top = weights
                    .iter()
                    .enumerate()
                    .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))
                    .map(|(i, _)| i)
                    .unwrap_or(0);
                let predictions = match sampler.as_mut() {
                    Some(rng) => {
                        let u: f64 = rng.gen();
                        let mut acc = 0.0;
                        let mut picked = weights.len() - 1;
                        for (i, w) in weights.iter().enumerate() {
                            acc += w;
                            if u < acc {
                                picked = i;
                                break;
                            }
                        }
                        member_predictions[picked].clone()
                    }
                    None => weighted_vote(&member_predictions, &weights, config.num_classes),
                };
                (
                    predictions,
                    CombinerInfo::TopWeight {
                        member: top,
                        weight: weights[top],
                    },
                )
            }
        };

        let members_obs = chunk.members();
        let ensemble_loss = predictions
            .iter()
            .zip(members_obs)
            .map(|(&p, z)| if p == z.label { 0.0 } else { 1.0 })
            .sum::<f64>()
            / members_obs.len() as f64;

        for (member, cum) in members.iter_mut().zip(cumulative.iter_mut()) {
            member.observe_and_update(chunk)?;
            *cum += member.traces().last().expect("member just advanced").loss;
        }

        trace.push(EnsembleTraceRow {
            step: chunk.time_index(),
            prediction: predictions[0],
            label: members_obs[0].label,
            loss: ensemble_loss,
            combiner: info,
        });
    }

    let member_results: Vec<(Vec<StepTrace>, RunSummary)> = members
        .iter()
        .map(|m| (m.traces().to_vec(), m.summary()))
        .collect();
    let error_rate = trace.iter().map(|r| r.loss).sum::<f64>() / trace.len() as f64;
    let summary = EnsembleSummary {
        n: trace.len() as u64,
        error_rate,
        rule: match rule {
            CombineRule::Ftl => "ftl".into(),
            CombineRule::Ewa { .. } => "ewa".into(),
        },
        eta: match rule {
            CombineRule::Ewa { eta, .. } => Some(eta),
            CombineRule::Ftl => None,
        },
        grid: grid.to_vec(),
        member_error_rates: member_results.iter().map(|(_, s)| s.error_rate).collect(),
    };
    Ok(EnsembleRun {
        trace,
        members: member_results,
        summary,
    })
}

/// Weighted majority vote per chunk member; vote ties resolve to the smallest
/// class index.
fn weighted_vote(
    member_predictions: &[Vec<usize>],
    weights: &[f64],
    num_classes: usize,
) -> Vec<usize> {
    let batch = member_predictions.first().map_or(0, |p| p.len());
    (0..batch)
        .map(|m| {
            let mut votes = vec![0.0; num_classes];
            for (preds, &w) in member_predictions.iter().zip(weights) {
                votes[preds[m].min(num_classes - 1)] += w;
            }
            let mut best = 0;
            for (c, &v) in votes.iter().enumerate() {
                if v > votes[best] {
                    best = c;
                }
            }
            best
        })
        .collect()
}
