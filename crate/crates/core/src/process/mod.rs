//! Stream sources: seeded synthetic processes and CSV ingestion.
//!
//! Every generator is a pure function of `(descriptor, n)`: the same seed
//! yields bit-identical sequences, which the reproducibility contracts of the
//! runner and the CLI rely on. Randomness comes from ChaCha12, a counter-based
//! generator with identical output on every platform.

mod csv;

pub use csv::{ingest_csv, CsvSchema};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CrmError, Result};

/// Tolerance for probability vectors and transition rows summing to one.
const PROB_SUM_TOL: f64 = 1e-9;

/// One step of the process: a feature vector plus a class label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    /// Feature vector; may be empty for label-only processes.
    pub features: Vec<f64>,
    /// Class index in `0..num_classes`.
    pub label: usize,
    /// 1-based step index.
    pub time_index: u64,
}

impl Observation {
    pub fn new(features: Vec<f64>, label: usize, time_index: u64) -> Self {
        Observation {
            features,
            label,
            time_index,
        }
    }
}

/// A nonempty group of observations sharing one time step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Chunk {
    members: Vec<Observation>,
}

impl Chunk {
    /// Builds a chunk, checking that it is nonempty and time-aligned.
    pub fn new(members: Vec<Observation>) -> Result<Self> {
        if members.is_empty() {
            return Err(CrmError::Precondition("chunk must be nonempty".into()));
        }
        let t = members[0].time_index;
        if members.iter().any(|m| m.time_index != t) {
            return Err(CrmError::Precondition(
                "all chunk members must share one time_index".into(),
            ));
        }
        Ok(Chunk { members })
    }

    pub fn singleton(obs: Observation) -> Self {
        Chunk {
            members: vec![obs],
        }
    }

    pub fn members(&self) -> &[Observation] {
        &self.members
    }

    pub fn time_index(&self) -> u64 {
        self.members[0].time_index
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// Wraps each observation into its own chunk.
pub fn into_chunks(observations: Vec<Observation>) -> Vec<Chunk> {
    observations.into_iter().map(Chunk::singleton).collect()
}

/// Kind-specific parameters of a process source.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProcessKind {
    /// Independent draws from a fixed distribution: labels from `class_probs`,
    /// features (when `feature_dim > 0`) Gaussian around the label's mean.
    Iid {
        class_probs: Vec<f64>,
        #[serde(default)]
        class_means: Option<Vec<Vec<f64>>>,
        #[serde(default = "default_noise_std")]
        noise_std: f64,
    },
    /// Labels follow a discrete Markov chain; the first label is `start_state`.
    /// With `label_feature` set, features carry a one-hot encoding of the label.
    MarkovLabel {
        transition: Vec<Vec<f64>>,
        #[serde(default)]
        start_state: usize,
        #[serde(default)]
        label_feature: bool,
    },
    /// Labels drawn i.i.d. from `class_probs`; features come from the active
    /// regime's class-conditional Gaussian. The regime rotates every `period`
    /// steps through `regimes`, each a `num_classes x feature_dim` mean table.
    RegimeDrift {
        regimes: Vec<Vec<Vec<f64>>>,
        period: u64,
        class_probs: Vec<f64>,
        #[serde(default = "default_noise_std")]
        noise_std: f64,
    },
    /// Rows of a CSV file, grouped into chunks by an optional key column.
    Csv { path: String, schema: CsvSchema },
}

fn default_noise_std() -> f64 {
    1.0
}

/// Full specification of a stream source.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProcessDescriptor {
    #[serde(flatten)]
    pub kind: ProcessKind,
    pub num_classes: usize,
    #[serde(default)]
    pub feature_dim: usize,
    #[serde(default)]
    pub seed: u64,
}

impl ProcessDescriptor {
    /// Checks all probability and shape constraints.
    pub fn validate(&self) -> Result<()> {
        if self.num_classes == 0 {
            return Err(CrmError::Config("num_classes must be >= 1".into()));
        }
        match &self.kind {
            ProcessKind::Iid {
                class_probs,
                class_means,
                noise_std,
            } => {
                validate_probs(class_probs, self.num_classes, "class_probs")?;
                if let Some(means) = class_means {
                    validate_means(means, self.num_classes, self.feature_dim, "class_means")?;
                }
                validate_noise(*noise_std)?;
            }
            ProcessKind::MarkovLabel {
                transition,
                start_state,
                ..
            } => {
                if transition.len() != self.num_classes {
                    return Err(CrmError::Config(format!(
                        "transition matrix must have {} rows, got {}",
                        self.num_classes,
                        transition.len()
                    )));
                }
                for row in transition {
                    validate_probs(row, self.num_classes, "transition row")?;
                }
                if *start_state >= self.num_classes {
                    return Err(CrmError::Config(format!(
                        "start_state {} out of range for {} states",
                        start_state, self.num_classes
                    )));
                }
            }
            ProcessKind::RegimeDrift {
                regimes,
                period,
                class_probs,
                noise_std,
            } => {
                if *period == 0 {
                    return Err(CrmError::Config("regime period must be > 0".into()));
                }
                if regimes.is_empty() {
                    return Err(CrmError::Config("at least one regime is required".into()));
                }
                for (i, regime) in regimes.iter().enumerate() {
                    validate_means(regime, self.num_classes, self.feature_dim, "regime")?;
                    let _ = i;
                }
                validate_probs(class_probs, self.num_classes, "class_probs")?;
                validate_noise(*noise_std)?;
            }
            ProcessKind::Csv { .. } => {}
        }
        Ok(())
    }

    /// Materializes the stream as chunks. Generators emit exactly `n`
    /// singleton chunks; the CSV source reads the whole file and then keeps
    /// the first `n` chunks when `n > 0`.
    pub fn generate(&self, n: usize) -> Result<Vec<Chunk>> {
        match &self.kind {
            ProcessKind::Iid { .. } => Ok(into_chunks(gen_iid(self, n)?)),
            ProcessKind::MarkovLabel { .. } => Ok(into_chunks(gen_markov_label(self, n)?)),
            ProcessKind::RegimeDrift { .. } => Ok(into_chunks(gen_regime_drift(self, n)?)),
            ProcessKind::Csv { path, schema } => {
                let mut chunks = ingest_csv(std::path::Path::new(path), schema)?;
                if n > 0 && chunks.len() > n {
                    chunks.truncate(n);
                }
                for chunk in &chunks {
                    if let Some(bad) = chunk.members().iter().find(|m| m.label >= self.num_classes)
                    {
                        return Err(CrmError::Config(format!(
                            "label {} at step {} exceeds the declared {} classes",
                            bad.label,
                            chunk.time_index(),
                            self.num_classes
                        )));
                    }
                }
                Ok(chunks)
            }
        }
    }
}

fn validate_probs(probs: &[f64], expected_len: usize, what: &str) -> Result<()> {
    if probs.len() != expected_len {
        return Err(CrmError::Config(format!(
            "{what} must have length {expected_len}, got {}",
            probs.len()
        )));
    }
    if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
        return Err(CrmError::Config(format!(
            "{what} entries must lie in [0, 1]"
        )));
    }
    let sum: f64 = probs.iter().sum();
    if (sum - 1.0).abs() > PROB_SUM_TOL {
        return Err(CrmError::Config(format!(
            "{what} must sum to 1 within {PROB_SUM_TOL:e}, got {sum}"
        )));
    }
    Ok(())
}

fn validate_means(means: &[Vec<f64>], classes: usize, dim: usize, what: &str) -> Result<()> {
    if means.len() != classes {
        return Err(CrmError::Config(format!(
            "{what} must have one mean per class ({classes}), got {}",
            means.len()
        )));
    }
    if means.iter().any(|m| m.len() != dim) {
        return Err(CrmError::Config(format!(
            "{what} vectors must have length {dim}"
        )));
    }
    Ok(())
}

fn validate_noise(noise_std: f64) -> Result<()> {
    if !(noise_std >= 0.0 && noise_std.is_finite()) {
        return Err(CrmError::Config("noise_std must be a finite value >= 0".into()));
    }
    Ok(())
}

fn rng_for(seed: u64) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(seed)
}

/// Draws a class index from a probability vector via one uniform variate.
fn sample_categorical(rng: &mut ChaCha12Rng, probs: &[f64]) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// Box-Muller standard normal from two uniforms; platform-stable.
fn sample_standard_normal(rng: &mut ChaCha12Rng) -> f64 {
    let u1: f64 = rng.gen::<f64>().max(f64::MIN_POSITIVE);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

fn gaussian_features(
    rng: &mut ChaCha12Rng,
    mean: Option<&[f64]>,
    dim: usize,
    noise_std: f64,
) -> Vec<f64> {
    (0..dim)
        .map(|d| {
            let mu = mean.map(|m| m[d]).unwrap_or(0.0);
            mu + noise_std * sample_standard_normal(rng)
        })
        .collect()
}

/// Independent draws from the descriptor's fixed distribution.
pub fn gen_iid(descriptor: &ProcessDescriptor, n: usize) -> Result<Vec<Observation>> {
    descriptor.validate()?;
    let (class_probs, class_means, noise_std) = match &descriptor.kind {
        ProcessKind::Iid {
            class_probs,
            class_means,
            noise_std,
        } => (class_probs, class_means, *noise_std),
        _ => return Err(CrmError::Config("descriptor kind must be iid".into())),
    };
    let mut rng = rng_for(descriptor.seed);
    let mut out = Vec::with_capacity(n);
    for t in 1..=n as u64 {
        let label = sample_categorical(&mut rng, class_probs);
        let mean = class_means.as_ref().map(|m| m[label].as_slice());
        let features = gaussian_features(&mut rng, mean, descriptor.feature_dim, noise_std);
        out.push(Observation::new(features, label, t));
    }
    Ok(out)
}

/// Labels follow the configured Markov chain; the first label is the start state.
pub fn gen_markov_label(descriptor: &ProcessDescriptor, n: usize) -> Result<Vec<Observation>> {
    descriptor.validate()?;
    let (transition, start_state, label_feature) = match &descriptor.kind {
        ProcessKind::MarkovLabel {
            transition,
            start_state,
            label_feature,
        } => (transition, *start_state, *label_feature),
        _ => {
            return Err(CrmError::Config(
                "descriptor kind must be markov_label".into(),
            ))
        }
    };
    let mut rng = rng_for(descriptor.seed);
    let mut out = Vec::with_capacity(n);
    let mut state = start_state;
    for t in 1..=n as u64 {
        if t > 1 {
            state = sample_categorical(&mut rng, &transition[state]);
        }
        let features = if label_feature && descriptor.feature_dim > 0 {
            let mut f = vec![0.0; descriptor.feature_dim];
            if state < descriptor.feature_dim {
                f[state] = 1.0;
            }
            f
        } else {
            vec![0.0; descriptor.feature_dim]
        };
        out.push(Observation::new(features, state, t));
    }
    Ok(out)
}

/// Gaussian class-conditional features whose means rotate through the
/// configured regimes every `period` steps.
pub fn gen_regime_drift(descriptor: &ProcessDescriptor, n: usize) -> Result<Vec<Observation>> {
    descriptor.validate()?;
    let (regimes, period, class_probs, noise_std) = match &descriptor.kind {
        ProcessKind::RegimeDrift {
            regimes,
            period,
            class_probs,
            noise_std,
        } => (regimes, *period, class_probs, *noise_std),
        _ => {
            return Err(CrmError::Config(
                "descriptor kind must be regime_drift".into(),
            ))
        }
    };
    let mut rng = rng_for(descriptor.seed);
    let mut out = Vec::with_capacity(n);
    for t in 1..=n as u64 {
        let regime = (((t - 1) / period) as usize) % regimes.len();
        let label = sample_categorical(&mut rng, class_probs);
        let features = gaussian_features(
            &mut rng,
            Some(regimes[regime][label].as_slice()),
            descriptor.feature_dim,
            noise_std,
        );
        out.push(Observation::new(features, label, t));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn iid_descriptor(probs: Vec<f64>, seed: u64) -> ProcessDescriptor {
        ProcessDescriptor {
            num_classes: probs.len(),
            feature_dim: 0,
            seed,
            kind: ProcessKind::Iid {
                class_probs: probs,
                class_means: None,
                noise_std: 1.0,
            },
        }
    }

    fn markov_descriptor(
        transition: Vec<Vec<f64>>,
        start: usize,
        seed: u64,
    ) -> ProcessDescriptor {
        ProcessDescriptor {
            num_classes: transition.len(),
            feature_dim: 0,
            seed,
            kind: ProcessKind::MarkovLabel {
                transition,
                start_state: start,
                label_feature: false,
            },
        }
    }

    #[test]
    fn iid_point_mass_on_class_zero() {
        let desc = iid_descriptor(vec![1.0, 0.0], 7);
        let obs = gen_iid(&desc, 3).unwrap();
        assert_eq!(obs.iter().map(|o| o.label).collect::<Vec<_>>(), [0, 0, 0]);
    }

    #[test]
    fn iid_bernoulli_frequency_matches() {
        let desc = iid_descriptor(vec![0.5, 0.5], 42);
        let obs = gen_iid(&desc, 10_000).unwrap();
        let ones = obs.iter().filter(|o| o.label == 1).count() as f64;
        let freq = ones / obs.len() as f64;
        assert!((freq - 0.5).abs() < 0.02, "frequency {freq}");
    }

    #[test]
    fn iid_same_seed_same_sequence() {
        let desc = iid_descriptor(vec![0.25, 0.75], 99);
        let a = gen_iid(&desc, 500).unwrap();
        let b = gen_iid(&desc, 500).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn iid_rejects_bad_probabilities() {
        let desc = iid_descriptor(vec![0.6, 0.6], 1);
        assert!(matches!(gen_iid(&desc, 1), Err(CrmError::Config(_))));
    }

    #[test]
    fn markov_identity_chain_is_absorbing() {
        let desc = markov_descriptor(vec![vec![1.0, 0.0], vec![0.0, 1.0]], 1, 3);
        let obs = gen_markov_label(&desc, 5).unwrap();
        assert_eq!(obs.iter().map(|o| o.label).collect::<Vec<_>>(), [1; 5]);
    }

    #[test]
    fn markov_cyclic_permutation() {
        let desc = markov_descriptor(
            vec![
                vec![0.0, 1.0, 0.0],
                vec![0.0, 0.0, 1.0],
                vec![1.0, 0.0, 0.0],
            ],
            0,
            11,
        );
        let obs = gen_markov_label(&desc, 6).unwrap();
        assert_eq!(
            obs.iter().map(|o| o.label).collect::<Vec<_>>(),
            [0, 1, 2, 0, 1, 2]
        );
    }

    #[test]
    fn markov_symmetric_chain_statistics() {
        let desc = markov_descriptor(vec![vec![0.8, 0.2], vec![0.2, 0.8]], 0, 2024);
        let obs = gen_markov_label(&desc, 50_000).unwrap();
        let labels: Vec<usize> = obs.iter().map(|o| o.label).collect();
        let stays = labels.windows(2).filter(|w| w[0] == w[1]).count() as f64;
        let stay_freq = stays / (labels.len() - 1) as f64;
        assert!((stay_freq - 0.8).abs() < 0.01, "stay frequency {stay_freq}");
        let ones = labels.iter().filter(|&&l| l == 1).count() as f64;
        let one_freq = ones / labels.len() as f64;
        assert!((one_freq - 0.5).abs() < 0.01, "stationary frequency {one_freq}");
    }

    #[test]
    fn markov_empirical_transition_matrix_converges() {
        let transition = vec![vec![0.7, 0.2, 0.1], vec![0.3, 0.3, 0.4], vec![0.05, 0.8, 0.15]];
        let desc = markov_descriptor(transition.clone(), 0, 5);
        let obs = gen_markov_label(&desc, 50_000).unwrap();
        let labels: Vec<usize> = obs.iter().map(|o| o.label).collect();
        let mut counts = vec![vec![0u64; 3]; 3];
        for w in labels.windows(2) {
            counts[w[0]][w[1]] += 1;
        }
        for i in 0..3 {
            let row_total: u64 = counts[i].iter().sum();
            for j in 0..3 {
                let freq = counts[i][j] as f64 / row_total as f64;
                assert!(
                    (freq - transition[i][j]).abs() < 0.02,
                    "entry ({i},{j}): {freq} vs {}",
                    transition[i][j]
                );
            }
        }
    }

    #[test]
    fn markov_rejects_non_stochastic_matrix() {
        let desc = markov_descriptor(vec![vec![0.5, 0.4], vec![0.2, 0.8]], 0, 1);
        assert!(matches!(
            gen_markov_label(&desc, 1),
            Err(CrmError::Config(_))
        ));
    }

    fn drift_descriptor(regimes: Vec<Vec<Vec<f64>>>, period: u64, seed: u64) -> ProcessDescriptor {
        ProcessDescriptor {
            num_classes: 2,
            feature_dim: 1,
            seed,
            kind: ProcessKind::RegimeDrift {
                regimes,
                period,
                class_probs: vec![0.5, 0.5],
                noise_std: 0.1,
            },
        }
    }

    #[test]
    fn regime_drift_single_regime_is_stationary() {
        let desc = drift_descriptor(vec![vec![vec![-1.0], vec![1.0]]], 10, 8);
        let obs = gen_regime_drift(&desc, 400).unwrap();
        // Per-class means in the two halves agree: no drift with one regime.
        for half in [&obs[..200], &obs[200..]] {
            for class in 0..2 {
                let vals: Vec<f64> = half
                    .iter()
                    .filter(|o| o.label == class)
                    .map(|o| o.features[0])
                    .collect();
                let mean = vals.iter().sum::<f64>() / vals.len() as f64;
                let expect = if class == 0 { -1.0 } else { 1.0 };
                assert!((mean - expect).abs() < 0.1, "class {class} mean {mean}");
            }
        }
    }

    #[test]
    fn regime_drift_swapped_means_flip_between_periods() {
        let desc = drift_descriptor(
            vec![vec![vec![-1.0], vec![1.0]], vec![vec![1.0], vec![-1.0]]],
            100,
            8,
        );
        let obs = gen_regime_drift(&desc, 200).unwrap();
        let class0_first: Vec<f64> = obs[..100]
            .iter()
            .filter(|o| o.label == 0)
            .map(|o| o.features[0])
            .collect();
        let class0_second: Vec<f64> = obs[100..]
            .iter()
            .filter(|o| o.label == 0)
            .map(|o| o.features[0])
            .collect();
        let m1 = class0_first.iter().sum::<f64>() / class0_first.len() as f64;
        let m2 = class0_second.iter().sum::<f64>() / class0_second.len() as f64;
        assert!((m1 - -1.0).abs() < 0.1, "first half class-0 mean {m1}");
        assert!((m2 - 1.0).abs() < 0.1, "second half class-0 mean {m2}");
    }

    #[test]
    fn regime_drift_rejects_zero_period() {
        let desc = drift_descriptor(vec![vec![vec![0.0], vec![0.0]]], 0, 8);
        assert!(matches!(
            gen_regime_drift(&desc, 1),
            Err(CrmError::Config(_))
        ));
    }

    #[test]
    fn regime_drift_deterministic_under_seed() {
        let desc = drift_descriptor(
            vec![vec![vec![-1.0], vec![1.0]], vec![vec![1.0], vec![-1.0]]],
            50,
            77,
        );
        assert_eq!(
            gen_regime_drift(&desc, 300).unwrap(),
            gen_regime_drift(&desc, 300).unwrap()
        );
    }

    #[test]
    fn chunk_requires_consistent_time_index() {
        let a = Observation::new(vec![], 0, 1);
        let b = Observation::new(vec![], 1, 2);
        assert!(Chunk::new(vec![a.clone(), b]).is_err());
        assert!(Chunk::new(vec![]).is_err());
        assert_eq!(Chunk::new(vec![a]).unwrap().len(), 1);
    }
}
