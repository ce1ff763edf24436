//! Computable upper bounds on the pairwise discrepancy between the
//! conditional distributions at two time steps.
//!
//! A bound value for the pair `(t, tau)` is a function of the data observed
//! strictly before step `t` and strictly before step `tau`: it compares the
//! history window ending at `t - 1` with the window ending at `tau - 1`, so it
//! can be evaluated before the value at step `t` is revealed. The one
//! exception is the window of an anchor created at step 1, which has no
//! history at all: its cache fills with the first arriving observations and
//! then freezes (see [`DiscrepancyBound::advance`]). Without that rule no
//! anchor could ever match step 1's subroutine again.
//!
//! Available bounds:
//! - `Zero` — the constant 0; the i.i.d. case.
//! - `MarkovIndicator` — 0 iff the previous labels coincide; exact for
//!   discrete Markov chains over the label sequence.
//! - `FeatureWindowD1` — class-split approximate bottleneck distance between
//!   feature sets of two history windows (variable-size chunks).
//! - `LabelWindowD2` — squared Euclidean distance between class-fraction
//!   vectors of two windows.
//! - `AlignedWindow` — mean positionwise Euclidean distance between two
//!   fixed-length windows.
//! - `PrecomputedMatrix` — a dense step-by-step matrix, for oracle-driven
//!   verification runs.

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::{CrmError, Result};
use crate::process::Observation;

/// Window length used by the history distances unless configured otherwise.
pub const DEFAULT_WINDOW_LEN: usize = 5;

/// The most recent fully observed steps before a query point, flattened into
/// a single observation list (chunked steps contribute all their members).
#[derive(Debug, Clone, PartialEq)]
pub struct HistoryWindow {
    entries: Vec<Observation>,
}

impl HistoryWindow {
    pub fn new(entries: Vec<Observation>) -> Self {
        HistoryWindow { entries }
    }

    pub fn entries(&self) -> &[Observation] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Selects and parameterizes a discrepancy bound.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "bound", rename_all = "snake_case")]
pub enum BoundConfig {
    Zero,
    MarkovIndicator,
    FeatureWindowD1 {
        #[serde(default = "default_window_len")]
        window_len: usize,
        /// When set (the default), a class present in exactly one window
        /// contributes a penalty of `epsilon + 1`, forcing dissimilarity.
        #[serde(default = "default_true")]
        missing_class_penalty: bool,
    },
    LabelWindowD2 {
        #[serde(default = "default_window_len")]
        window_len: usize,
    },
    AlignedWindow {
        #[serde(default = "default_window_len")]
        window_len: usize,
    },
    PrecomputedMatrix {
        #[serde(skip)]
        matrix: Vec<Vec<f64>>,
    },
}

fn default_window_len() -> usize {
    DEFAULT_WINDOW_LEN
}

fn default_true() -> bool {
    true
}

impl BoundConfig {
    /// Steps of history the bound keeps; zero for the stateless kinds.
    pub fn window_len(&self) -> usize {
        match self {
            BoundConfig::Zero | BoundConfig::PrecomputedMatrix { .. } => 0,
            BoundConfig::MarkovIndicator => 1,
            BoundConfig::FeatureWindowD1 { window_len, .. }
            | BoundConfig::LabelWindowD2 { window_len }
            | BoundConfig::AlignedWindow { window_len } => *window_len,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            BoundConfig::FeatureWindowD1 { window_len, .. }
            | BoundConfig::LabelWindowD2 { window_len }
            | BoundConfig::AlignedWindow { window_len } => {
                if *window_len == 0 {
                    return Err(CrmError::Config("window length must be >= 1".into()));
                }
            }
            BoundConfig::PrecomputedMatrix { matrix }
                if matrix.is_empty() || matrix.iter().any(|row| row.len() != matrix.len()) =>
            {
                return Err(CrmError::Config(
                    "precomputed bound matrix must be square and nonempty".into(),
                ));
            }
            _ => {}
        }
        Ok(())
    }
}

/// The trivial bound, valid for i.i.d. data.
pub fn zero_bound(_t: u64, _tau: u64) -> f64 {
    0.0
}

/// Indicator bound for discrete Markov chains: 0 iff the labels preceding the
/// two steps coincide.
pub fn markov_indicator(prev_label_t: usize, prev_label_tau: usize) -> f64 {
    if prev_label_t == prev_label_tau {
        0.0
    } else {
        1.0
    }
}

/// Squared Euclidean distance between the class-fraction vectors of two
/// windows. Ranges over `[0, 2]`.
pub fn label_fraction_distance(
    s: &HistoryWindow,
    t: &HistoryWindow,
    num_classes: usize,
) -> Result<f64> {
    fraction_distance_entries(s.entries(), t.entries(), num_classes)
}

fn fraction_distance_entries(
    s: &[Observation],
    t: &[Observation],
    num_classes: usize,
) -> Result<f64> {
    let p_s = class_fractions(s, num_classes)?;
    let p_t = class_fractions(t, num_classes)?;
    Ok(p_s
        .iter()
        .zip(&p_t)
        .map(|(a, b)| (a - b) * (a - b))
        .sum())
}

fn class_fractions(entries: &[Observation], num_classes: usize) -> Result<Vec<f64>> {
    if entries.is_empty() {
        return Err(CrmError::Precondition(
            "fraction distance requires a nonempty window".into(),
        ));
    }
    let mut counts = vec![0.0; num_classes];
    for obs in entries {
        if obs.label >= num_classes {
            return Err(CrmError::Precondition(format!(
                "label {} out of range for {} classes",
                obs.label, num_classes
            )));
        }
        counts[obs.label] += 1.0;
    }
    let total = entries.len() as f64;
    Ok(counts.into_iter().map(|c| c / total).collect())
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Approximate bottleneck distance between two sets of feature vectors: all
/// pairwise Euclidean distances are computed, and the smallest
/// `max(|S|, |T|)` of them are averaged.
pub fn bottleneck_distance(s: &[&[f64]], t: &[&[f64]]) -> Result<f64> {
    if s.is_empty() || t.is_empty() {
        return Err(CrmError::Precondition(
            "bottleneck distance requires nonempty sets".into(),
        ));
    }
    let dim = s[0].len();
    if s.iter().chain(t.iter()).any(|v| v.len() != dim) {
        return Err(CrmError::Precondition(
            "bottleneck distance requires equal feature dimensions".into(),
        ));
    }
    let mut pairwise = Vec::with_capacity(s.len() * t.len());
    for a in s {
        for b in t {
            pairwise.push(euclidean(a, b));
        }
    }
    pairwise.sort_by(|a, b| a.total_cmp(b));
    let keep = s.len().max(t.len()).min(pairwise.len());
    Ok(pairwise[..keep].iter().sum::<f64>() / keep as f64)
}

/// Class-split bottleneck distance between two windows: the per-class
/// bottleneck distances are averaged with equal weight over every class
/// present in at least one window. A class present in exactly one window
/// contributes `missing_class_penalty` when set, and is an evaluation error
/// otherwise unless some class is present in both.
pub fn feature_window_d1(
    s: &HistoryWindow,
    t: &HistoryWindow,
    num_classes: usize,
    missing_class_penalty: Option<f64>,
) -> Result<f64> {
    d1_entries(s.entries(), t.entries(), num_classes, missing_class_penalty)
}

fn d1_entries(
    s: &[Observation],
    t: &[Observation],
    num_classes: usize,
    missing_class_penalty: Option<f64>,
) -> Result<f64> {
    if s.is_empty() || t.is_empty() {
        return Err(CrmError::Precondition(
            "feature window distance requires nonempty windows".into(),
        ));
    }
    fn split(entries: &[Observation], class: usize) -> Vec<&[f64]> {
        entries
            .iter()
            .filter(|o| o.label == class)
            .map(|o| o.features.as_slice())
            .collect()
    }
    let mut total = 0.0;
    let mut contributing = 0usize;
    let mut joint = 0usize;
    for class in 0..num_classes {
        let s_c = split(s, class);
        let t_c = split(t, class);
        match (s_c.is_empty(), t_c.is_empty()) {
            (true, true) => {}
            (false, false) => {
                total += bottleneck_distance(&s_c, &t_c)?;
                contributing += 1;
                joint += 1;
            }
            _ => {
                if let Some(penalty) = missing_class_penalty {
                    total += penalty;
                    contributing += 1;
                }
            }
        }
    }
    if joint == 0 && missing_class_penalty.is_none() {
        return Err(CrmError::Evaluation(
            "no class is present in both windows and the missing-class penalty is disabled"
                .into(),
        ));
    }
    Ok(total / contributing as f64)
}

/// Mean positionwise Euclidean distance between two equal-length windows.
/// The bound's bootstrap path relaxes the length precondition by comparing
/// the shorter prefix of both windows instead.
pub fn aligned_window_distance(s: &HistoryWindow, t: &HistoryWindow) -> Result<f64> {
    if s.len() != t.len() {
        return Err(CrmError::Precondition(format!(
            "aligned distance requires equal window lengths, got {} and {}",
            s.len(),
            t.len()
        )));
    }
    aligned_entries(s.entries(), t.entries())
}

fn aligned_entries(s: &[Observation], t: &[Observation]) -> Result<f64> {
    if s.is_empty() || t.is_empty() {
        return Err(CrmError::Precondition(
            "aligned distance requires nonempty windows".into(),
        ));
    }
    let len = s.len().min(t.len());
    let dim = s[0].features.len();
    let mut total = 0.0;
    for k in 0..len {
        let a = &s[k].features;
        let b = &t[k].features;
        if a.len() != dim || b.len() != dim {
            return Err(CrmError::Precondition(
                "aligned distance requires equal feature dimensions".into(),
            ));
        }
        total += euclidean(a, b);
    }
    Ok(total / len as f64)
}

/// Evaluates a window-based bound on two explicit windows. `epsilon` feeds
/// the missing-class penalty of the D1 bound; stateless kinds ignore it.
pub fn window_distance(
    config: &BoundConfig,
    num_classes: usize,
    s: &HistoryWindow,
    t: &HistoryWindow,
    epsilon: f64,
) -> Result<f64> {
    entries_distance(config, num_classes, s.entries(), t.entries(), epsilon)
}

fn entries_distance(
    config: &BoundConfig,
    num_classes: usize,
    s: &[Observation],
    t: &[Observation],
    epsilon: f64,
) -> Result<f64> {
    match config {
        BoundConfig::Zero => Ok(0.0),
        BoundConfig::MarkovIndicator => {
            let (a, b) = match (s.last(), t.last()) {
                (Some(a), Some(b)) => (a.label, b.label),
                _ => {
                    return Err(CrmError::Precondition(
                        "markov indicator requires nonempty windows".into(),
                    ))
                }
            };
            Ok(markov_indicator(a, b))
        }
        BoundConfig::FeatureWindowD1 {
            missing_class_penalty,
            ..
        } => {
            let penalty = missing_class_penalty.then_some(epsilon + 1.0);
            d1_entries(s, t, num_classes, penalty)
        }
        BoundConfig::LabelWindowD2 { .. } => fraction_distance_entries(s, t, num_classes),
        BoundConfig::AlignedWindow { .. } => aligned_entries(s, t),
        BoundConfig::PrecomputedMatrix { .. } => Err(CrmError::Precondition(
            "precomputed bounds are indexed by step, not by window".into(),
        )),
    }
}

#[derive(Debug, Clone)]
struct AnchorCache {
    entries: Vec<Observation>,
    steps_cached: usize,
    backfilling: bool,
}

/// Stateful bound evaluator owned by one run: maintains the rolling query
/// window and one frozen window per anchor.
#[derive(Debug, Clone)]
pub struct DiscrepancyBound {
    config: BoundConfig,
    num_classes: usize,
    rolling: VecDeque<Vec<Observation>>,
    anchors: BTreeMap<u64, AnchorCache>,
}

impl DiscrepancyBound {
    pub fn new(config: BoundConfig, num_classes: usize) -> Result<Self> {
        config.validate()?;
        Ok(DiscrepancyBound {
            config,
            num_classes,
            rolling: VecDeque::new(),
            anchors: BTreeMap::new(),
        })
    }

    pub fn config(&self) -> &BoundConfig {
        &self.config
    }

    /// Caches the current query window as the anchor window for `tau`. An
    /// anchor registered before any observation exists starts backfilling.
    pub fn register_anchor(&mut self, tau: u64) {
        if self.config.window_len() == 0 {
            return;
        }
        let entries: Vec<Observation> = self.rolling.iter().flatten().cloned().collect();
        let steps_cached = self.rolling.len();
        let backfilling = steps_cached == 0;
        self.anchors.insert(
            tau,
            AnchorCache {
                entries,
                steps_cached,
                backfilling,
            },
        );
    }

    /// Advances the rolling window with the observations of a completed step
    /// and feeds any anchor still backfilling its bootstrap window.
    pub fn advance(&mut self, step_members: &[Observation]) {
        let w = self.config.window_len();
        if w == 0 {
            return;
        }
        for cache in self.anchors.values_mut() {
            if cache.backfilling {
                cache.entries.extend_from_slice(step_members);
                cache.steps_cached += 1;
                if cache.steps_cached >= w {
                    cache.backfilling = false;
                }
            }
        }
        self.rolling.push_back(step_members.to_vec());
        while self.rolling.len() > w {
            self.rolling.pop_front();
        }
    }

    fn query_entries(&self) -> Vec<Observation> {
        self.rolling.iter().flatten().cloned().collect()
    }

    /// Bound value for querying step `t` against the anchor at `tau`.
    pub fn evaluate(&self, t: u64, tau: u64, epsilon: f64) -> Result<f64> {
        match &self.config {
            BoundConfig::Zero | BoundConfig::PrecomputedMatrix { .. } => {
                self.evaluate_stateless(t, tau)
            }
            _ => {
                let query = self.query_entries();
                self.evaluate_window(&query, tau, epsilon)
            }
        }
    }

    /// Bound values of one query step against many anchors; the query window
    /// is materialized once.
    pub fn evaluate_many(&self, t: u64, taus: &[u64], epsilon: f64) -> Result<Vec<f64>> {
        match &self.config {
            BoundConfig::Zero | BoundConfig::PrecomputedMatrix { .. } => taus
                .iter()
                .map(|&tau| self.evaluate_stateless(t, tau))
                .collect(),
            _ => {
                let query = self.query_entries();
                taus.iter()
                    .map(|&tau| self.evaluate_window(&query, tau, epsilon))
                    .collect()
            }
        }
    }

    fn evaluate_stateless(&self, t: u64, tau: u64) -> Result<f64> {
        match &self.config {
            BoundConfig::Zero => Ok(zero_bound(t, tau)),
            BoundConfig::PrecomputedMatrix { matrix } => {
                let (i, j) = (t as usize - 1, tau as usize - 1);
                matrix
                    .get(i)
                    .and_then(|row| row.get(j))
                    .copied()
                    .ok_or_else(|| {
                        CrmError::Precondition(format!(
                            "step pair ({t}, {tau}) outside the {}x{} bound matrix",
                            matrix.len(),
                            matrix.len()
                        ))
                    })
            }
            _ => unreachable!("window bounds are evaluated against anchors"),
        }
    }

    fn evaluate_window(&self, query: &[Observation], tau: u64, epsilon: f64) -> Result<f64> {
        let anchor = self.anchors.get(&tau).ok_or_else(|| {
            CrmError::Protocol(format!("no anchor window registered for step {tau}"))
        })?;
        entries_distance(&self.config, self.num_classes, query, &anchor.entries, epsilon)
    }
}

/// Replays the per-step query windows over a finished sequence: entry `t - 1`
/// holds the window a bound would use when serving step `t`. Step 1 gets the
/// backfilled bootstrap window.
pub fn replay_windows(config: &BoundConfig, steps: &[crate::process::Chunk]) -> Vec<HistoryWindow> {
    let w = config.window_len().max(1);
    let flatten = |range: std::ops::Range<usize>| -> HistoryWindow {
        HistoryWindow::new(
            steps[range]
                .iter()
                .flat_map(|c| c.members().iter().cloned())
                .collect(),
        )
    };
    (1..=steps.len())
        .map(|t| {
            if t == 1 {
                flatten(0..w.min(steps.len()))
            } else {
                flatten((t - 1).saturating_sub(w)..t - 1)
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::process::{Chunk, Observation};
    use proptest::prelude::*;

    fn window(labels: &[usize]) -> HistoryWindow {
        HistoryWindow::new(
            labels
                .iter()
                .enumerate()
                .map(|(i, &l)| Observation::new(vec![], l, i as u64 + 1))
                .collect(),
        )
    }

    fn feature_window(points: &[(&[f64], usize)]) -> HistoryWindow {
        HistoryWindow::new(
            points
                .iter()
                .enumerate()
                .map(|(i, (f, l))| Observation::new(f.to_vec(), *l, i as u64 + 1))
                .collect(),
        )
    }

    #[test]
    fn zero_bound_is_constant() {
        assert_eq!(zero_bound(5, 1), 0.0);
        assert_eq!(zero_bound(1, 1), 0.0);
        assert_eq!(zero_bound(1_000_000, 3), 0.0);
    }

    #[test]
    fn markov_indicator_matches_label_equality() {
        assert_eq!(markov_indicator(0, 0), 0.0);
        assert_eq!(markov_indicator(0, 1), 1.0);
        // sequence [A,B,A]: t=3 has previous B, tau=2 has previous A
        let seq = [0usize, 1, 0];
        assert_eq!(markov_indicator(seq[1], seq[0]), 1.0);
    }

    #[test]
    fn label_fraction_distance_hand_values() {
        let s = window(&[0, 0, 1, 1]);
        let t = window(&[0, 1, 1, 1]);
        let d = label_fraction_distance(&s, &t, 2).unwrap();
        assert!((d - 0.125).abs() < 1e-12);
        assert_eq!(label_fraction_distance(&s, &s, 2).unwrap(), 0.0);
        let all0 = window(&[0, 0]);
        let all1 = window(&[1, 1]);
        assert!((label_fraction_distance(&all0, &all1, 2).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn label_fraction_distance_rejects_empty() {
        let empty = HistoryWindow::new(vec![]);
        assert!(label_fraction_distance(&empty, &window(&[0]), 2).is_err());
    }

    #[test]
    fn bottleneck_distance_hand_values() {
        let s: Vec<&[f64]> = vec![&[0.0, 0.0], &[1.0, 0.0]];
        let t: Vec<&[f64]> = vec![&[0.0, 0.0]];
        assert!((bottleneck_distance(&s, &t).unwrap() - 0.5).abs() < 1e-12);
        let single: Vec<&[f64]> = vec![&[3.0, 4.0]];
        assert_eq!(bottleneck_distance(&single, &single).unwrap(), 0.0);
    }

    #[test]
    fn bottleneck_distance_rejects_dimension_mismatch() {
        let s: Vec<&[f64]> = vec![&[0.0, 0.0]];
        let t: Vec<&[f64]> = vec![&[0.0]];
        assert!(bottleneck_distance(&s, &t).is_err());
    }

    #[test]
    fn feature_window_d1_hand_values() {
        // S0={(0,)}, T0={(1,)}, S1={(0,)}, T1={(0,)} -> 0.5*1 + 0.5*0
        let s = feature_window(&[(&[0.0], 0), (&[0.0], 1)]);
        let t = feature_window(&[(&[1.0], 0), (&[0.0], 1)]);
        let d = feature_window_d1(&s, &t, 2, None).unwrap();
        assert!((d - 0.5).abs() < 1e-12);
        assert_eq!(feature_window_d1(&s, &s, 2, None).unwrap(), 0.0);
    }

    #[test]
    fn feature_window_d1_single_class_reduces_to_bottleneck() {
        let s = feature_window(&[(&[0.0], 0), (&[2.0], 0)]);
        let t = feature_window(&[(&[1.0], 0)]);
        let d1 = feature_window_d1(&s, &t, 1, None).unwrap();
        let sv: Vec<&[f64]> = s.entries().iter().map(|o| o.features.as_slice()).collect();
        let tv: Vec<&[f64]> = t.entries().iter().map(|o| o.features.as_slice()).collect();
        assert_eq!(d1, bottleneck_distance(&sv, &tv).unwrap());
    }

    #[test]
    fn feature_window_d1_missing_class_penalty_and_error() {
        let s = feature_window(&[(&[0.0], 0)]);
        let t = feature_window(&[(&[0.0], 1)]);
        // no joint class, penalty disabled -> evaluation error
        assert!(matches!(
            feature_window_d1(&s, &t, 2, None),
            Err(CrmError::Evaluation(_))
        ));
        // penalty applies per one-sided class: classes 0 and 1 both one-sided
        let d = feature_window_d1(&s, &t, 2, Some(1.5)).unwrap();
        assert!((d - 1.5).abs() < 1e-12);
    }

    #[test]
    fn aligned_window_hand_values() {
        let s = feature_window(&[(&[0.0], 0), (&[0.0], 0)]);
        let t = feature_window(&[(&[3.0], 0), (&[4.0], 0)]);
        assert!((aligned_window_distance(&s, &t).unwrap() - 3.5).abs() < 1e-12);
        assert_eq!(aligned_window_distance(&s, &s).unwrap(), 0.0);
        let shorter = feature_window(&[(&[3.0], 0)]);
        assert!(matches!(
            aligned_window_distance(&s, &shorter),
            Err(CrmError::Precondition(_))
        ));
        // the bound path compares the shorter prefix instead
        let d = entries_distance(
            &BoundConfig::AlignedWindow { window_len: 2 },
            1,
            s.entries(),
            shorter.entries(),
            0.0,
        )
        .unwrap();
        assert!((d - 3.0).abs() < 1e-12);
    }

    #[test]
    fn aligned_window_scales_with_features() {
        let s = feature_window(&[(&[1.0], 0), (&[2.0], 0)]);
        let t = feature_window(&[(&[4.0], 0), (&[0.5], 0)]);
        let base = aligned_window_distance(&s, &t).unwrap();
        let scale = |w: &HistoryWindow, c: f64| {
            HistoryWindow::new(
                w.entries()
                    .iter()
                    .map(|o| {
                        Observation::new(
                            o.features.iter().map(|x| c * x).collect(),
                            o.label,
                            o.time_index,
                        )
                    })
                    .collect(),
            )
        };
        let scaled = aligned_window_distance(&scale(&s, 3.0), &scale(&t, 3.0)).unwrap();
        assert!((scaled - 3.0 * base).abs() < 1e-9);
    }

    #[test]
    fn bound_state_markov_bootstrap_backfills_first_anchor() {
        let mut bound = DiscrepancyBound::new(BoundConfig::MarkovIndicator, 2).unwrap();
        bound.register_anchor(1); // created with no history
        let z1 = Observation::new(vec![], 0, 1);
        bound.advance(std::slice::from_ref(&z1));
        // step 2: previous label 0, anchor 1 backfilled with label 0
        assert_eq!(bound.evaluate(2, 1, 0.5).unwrap(), 0.0);
        let z2 = Observation::new(vec![], 1, 2);
        bound.advance(std::slice::from_ref(&z2));
        // step 3: previous label 1 differs from anchor 1's window
        assert_eq!(bound.evaluate(3, 1, 0.5).unwrap(), 1.0);
    }

    #[test]
    fn bound_state_caches_anchor_windows_independently() {
        let mut bound = DiscrepancyBound::new(BoundConfig::MarkovIndicator, 3).unwrap();
        bound.register_anchor(1);
        for (t, label) in [(1u64, 0usize), (2, 1)] {
            bound.advance(&[Observation::new(vec![], label, t)]);
        }
        bound.register_anchor(3); // window ends at step 2, label 1
        bound.advance(&[Observation::new(vec![], 2, 3)]);
        // step 4: previous label 2; anchors keep their frozen contexts
        assert_eq!(bound.evaluate(4, 1, 0.5).unwrap(), 1.0);
        assert_eq!(bound.evaluate(4, 3, 0.5).unwrap(), 1.0);
        bound.advance(&[Observation::new(vec![], 1, 4)]);
        // step 5: previous label 1 matches anchor 3's context
        assert_eq!(bound.evaluate(5, 3, 0.5).unwrap(), 0.0);
        assert_eq!(bound.evaluate(5, 1, 0.5).unwrap(), 1.0);
        // batched evaluation agrees with the scalar path
        assert_eq!(bound.evaluate_many(5, &[1, 3], 0.5).unwrap(), vec![1.0, 0.0]);
    }

    #[test]
    fn window_bound_backfills_up_to_window_length() {
        let config = BoundConfig::LabelWindowD2 { window_len: 3 };
        let mut bound = DiscrepancyBound::new(config, 2).unwrap();
        bound.register_anchor(1);
        for (t, label) in [(1u64, 0usize), (2, 0), (3, 1), (4, 1), (5, 1)] {
            bound.advance(&[Observation::new(vec![], label, t)]);
        }
        // anchor 1 froze at the first three labels [0,0,1]; the query window
        // before step 6 is [1,1,1]
        let d = bound.evaluate(6, 1, 0.1).unwrap();
        let expect = (2.0f64 / 3.0).powi(2) * 2.0;
        assert!((d - expect).abs() < 1e-12, "{d} vs {expect}");
    }

    #[test]
    fn precomputed_matrix_is_indexed_by_step() {
        let matrix = vec![
            vec![0.0, 2.0, 3.0],
            vec![2.0, 0.0, 1.0],
            vec![3.0, 1.0, 0.0],
        ];
        let bound =
            DiscrepancyBound::new(BoundConfig::PrecomputedMatrix { matrix }, 2).unwrap();
        assert_eq!(bound.evaluate(2, 1, 0.0).unwrap(), 2.0);
        assert_eq!(bound.evaluate(3, 2, 0.0).unwrap(), 1.0);
        assert!(bound.evaluate(4, 1, 0.0).is_err());
    }

    #[test]
    fn replay_windows_match_runtime_semantics() {
        let chunks: Vec<Chunk> = (1..=4u64)
            .map(|t| Chunk::singleton(Observation::new(vec![], t as usize % 2, t)))
            .collect();
        let config = BoundConfig::MarkovIndicator;
        let windows = replay_windows(&config, &chunks);
        assert_eq!(windows.len(), 4);
        // step 1 backfills with the first observation, the rest end at t-1
        assert_eq!(windows[0].entries()[0].time_index, 1);
        assert_eq!(windows[1].entries().last().unwrap().time_index, 1);
        assert_eq!(windows[3].entries().last().unwrap().time_index, 3);
    }

    proptest! {
        #[test]
        fn window_distances_are_symmetric_and_nonnegative(
            s_labels in proptest::collection::vec(0usize..3, 1..6),
            t_labels in proptest::collection::vec(0usize..3, 1..6),
            s_feats in proptest::collection::vec(-5.0f64..5.0, 1..6),
            t_feats in proptest::collection::vec(-5.0f64..5.0, 1..6),
        ) {
            let build = |labels: &[usize], feats: &[f64]| {
                HistoryWindow::new(
                    labels
                        .iter()
                        .enumerate()
                        .map(|(i, &l)| {
                            Observation::new(vec![feats[i % feats.len()]], l, i as u64 + 1)
                        })
                        .collect(),
                )
            };
            let s = build(&s_labels, &s_feats);
            let t = build(&t_labels, &t_feats);

            let d2_st = label_fraction_distance(&s, &t, 3).unwrap();
            let d2_ts = label_fraction_distance(&t, &s, 3).unwrap();
            prop_assert!((0.0..=2.0).contains(&d2_st));
            prop_assert!((d2_st - d2_ts).abs() < 1e-12);

            let d1_st = feature_window_d1(&s, &t, 3, Some(2.0)).unwrap();
            let d1_ts = feature_window_d1(&t, &s, 3, Some(2.0)).unwrap();
            prop_assert!(d1_st >= 0.0);
            prop_assert!((d1_st - d1_ts).abs() < 1e-9);

            let len = s.len().min(t.len());
            let s_cut = HistoryWindow::new(s.entries()[..len].to_vec());
            let t_cut = HistoryWindow::new(t.entries()[..len].to_vec());
            let al_st = aligned_window_distance(&s_cut, &t_cut).unwrap();
            let al_ts = aligned_window_distance(&t_cut, &s_cut).unwrap();
            prop_assert!(al_st >= 0.0);
            prop_assert!((al_st - al_ts).abs() < 1e-9);
        }

        #[test]
        fn self_distance_is_zero(
            labels in proptest::collection::vec(0usize..4, 1..8),
        ) {
            let w = HistoryWindow::new(
                labels
                    .iter()
                    .enumerate()
                    .map(|(i, &l)| Observation::new(vec![l as f64], l, i as u64 + 1))
                    .collect(),
            );
            prop_assert_eq!(label_fraction_distance(&w, &w, 4).unwrap(), 0.0);
            prop_assert_eq!(feature_window_d1(&w, &w, 4, Some(1.0)).unwrap(), 0.0);
            prop_assert_eq!(aligned_window_distance(&w, &w).unwrap(), 0.0);
        }

        #[test]
        fn bottleneck_symmetry(
            s in proptest::collection::vec(
                proptest::collection::vec(-3.0f64..3.0, 2), 1..5),
            t in proptest::collection::vec(
                proptest::collection::vec(-3.0f64..3.0, 2), 1..5),
        ) {
            let sv: Vec<&[f64]> = s.iter().map(|v| v.as_slice()).collect();
            let tv: Vec<&[f64]> = t.iter().map(|v| v.as_slice()).collect();
            let ab = bottleneck_distance(&sv, &tv).unwrap();
            let ba = bottleneck_distance(&tv, &sv).unwrap();
            prop_assert!((ab - ba).abs() < 1e-12);
            prop_assert!(ab >= 0.0);
        }
    }
}
