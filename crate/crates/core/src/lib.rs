//! Streaming conditional-risk minimization.
//!
//! The library maintains a pool of incremental learners ("subroutines"), each
//! anchored at the time step that created it. Every incoming observation is
//! routed to all subroutines whose anchor is ε-close under a computable
//! discrepancy bound, and a prediction hypothesis is emitted at every step via
//! an online-to-batch conversion. Threshold selection can be made
//! parameter-free by combining several instances with Follow The Leader or an
//! exponentially weighted average.
//!
//! Module map:
//! - [`process`] — synthetic stream generators and CSV ingestion
//! - [`discrepancy`] — computable bounds on pairwise distribution drift
//! - [`subroutine`] — incremental learners and online-to-batch conversions
//! - [`macro_core`] — the per-step choose / output / observe / update loop
//! - [`ensemble`] — FTL / EWA combination over a threshold grid
//! - [`analysis`] — covering numbers, pseudometric checks, report output

pub mod analysis;
pub mod discrepancy;
pub mod ensemble;
mod error;
pub mod macro_core;
pub mod process;
pub mod subroutine;

pub use error::{CrmError, Result};

pub use discrepancy::{BoundConfig, DiscrepancyBound, HistoryWindow, DEFAULT_WINDOW_LEN};
pub use ensemble::{CombineRule, EnsembleSummary};
pub use macro_core::{
    EpsilonSchedule, MacroConfig, MacroState, RunSummary, StepTrace, SubroutineRecord,
};
pub use process::{Chunk, CsvSchema, Observation, ProcessDescriptor, ProcessKind};
pub use subroutine::{ConversionMode, Hypothesis, Learner, LossKind, SubroutineKind};
