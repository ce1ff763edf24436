//! Shared fixtures for the benchmark targets.

use crm_core::{
    ConversionMode, EpsilonSchedule, LossKind, MacroConfig, ProcessDescriptor, ProcessKind,
    SubroutineKind,
};

/// Gaussian naive Bayes runner configuration for the given problem shape.
pub fn gnb_config(num_classes: usize, feature_dim: usize, epsilon: f64) -> MacroConfig {
    MacroConfig {
        subroutine: SubroutineKind::GaussianNb,
        conversion: ConversionMode::Last,
        conversion_delta: 0.05,
        loss: LossKind::ZeroOne,
        schedule: EpsilonSchedule::constant(epsilon),
        warm_start: true,
        diagnostics: false,
        num_classes,
        feature_dim,
    }
}

/// Symmetric two-state chain with the given stay probability.
pub fn chain_descriptor(stay: f64, seed: u64) -> ProcessDescriptor {
    ProcessDescriptor {
        num_classes: 2,
        feature_dim: 0,
        seed,
        kind: ProcessKind::MarkovLabel {
            transition: vec![vec![stay, 1.0 - stay], vec![1.0 - stay, stay]],
            start_state: 0,
            label_feature: false,
        },
    }
}

/// Two-regime swapped-means drift process.
pub fn drift_descriptor(period: u64, seed: u64) -> ProcessDescriptor {
    ProcessDescriptor {
        num_classes: 2,
        feature_dim: 1,
        seed,
        kind: ProcessKind::RegimeDrift {
            regimes: vec![vec![vec![-1.0], vec![1.0]], vec![vec![1.0], vec![-1.0]]],
            period,
            class_probs: vec![0.5, 0.5],
            noise_std: 0.3,
        },
    }
}
