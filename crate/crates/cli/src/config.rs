//! Flag surface, JSON config file, and resolution into a run specification.
//!
//! Every option can come from the command line or from a JSON file passed via
//! `--config` whose keys are the snake_case flag names; flags win.

use std::path::{Path, PathBuf};

use clap::Args;
use serde::Deserialize;

use crm_core::macro_core::DEFAULT_DECAY_GAMMA;
use crm_core::subroutine::DEFAULT_SCORE_DELTA;
use crm_core::{
    BoundConfig, ConversionMode, CrmError, CsvSchema, EpsilonSchedule, Hypothesis, LossKind,
    MacroConfig, ProcessDescriptor, ProcessKind, Result, SubroutineKind, DEFAULT_WINDOW_LEN,
};

/// All run options; unset values fall back to the config file, then to the
/// documented defaults.
#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunOptions {
    /// JSON config file; flags override its values
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,

    /// Process kind: iid | markov | regime-drift | csv
    #[arg(long)]
    pub process: Option<String>,
    /// Number of classes [default: 2; markov: --states]
    #[arg(long)]
    pub classes: Option<usize>,
    /// Feature dimension [default: 0]
    #[arg(long)]
    pub feature_dim: Option<usize>,
    /// Steps to generate (csv: chunks to keep; 0 = all) [default: 1000]
    #[arg(long)]
    pub steps: Option<usize>,
    /// Generator seed [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,

    /// Class probabilities, comma-separated [default: uniform]
    #[arg(long, allow_hyphen_values = true)]
    pub probs: Option<String>,
    /// Per-class feature means: classes split by ';', coordinates by ','
    #[arg(long, allow_hyphen_values = true)]
    pub means: Option<String>,
    /// Gaussian feature noise [default: 1.0]
    #[arg(long)]
    pub noise_std: Option<f64>,

    /// Markov: number of chain states (alias for --classes)
    #[arg(long)]
    pub states: Option<usize>,
    /// Markov: stay probability of the symmetric chain
    #[arg(long)]
    pub stay: Option<f64>,
    /// Markov: CSV file with a row-stochastic transition matrix (no header)
    #[arg(long)]
    pub transition: Option<PathBuf>,
    /// Markov: initial state [default: 0]
    #[arg(long)]
    pub start_state: Option<usize>,
    /// Markov: encode the label as a one-hot feature vector
    #[arg(long)]
    #[serde(default)]
    pub label_feature: bool,

    /// Regime drift: steps per regime
    #[arg(long)]
    pub period: Option<u64>,
    /// Regime drift: mean tables, regimes split by '|', classes by ';',
    /// coordinates by ','
    #[arg(long, allow_hyphen_values = true)]
    pub regimes: Option<String>,

    /// CSV input file
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// CSV label column name
    #[arg(long)]
    pub label_column: Option<String>,
    /// CSV feature column names, comma-separated [default: none]
    #[arg(long)]
    pub feature_columns: Option<String>,
    /// CSV chunk-key column: rows sharing a value form one chunk
    #[arg(long)]
    pub chunk_key: Option<String>,

    /// Bound: zero | markov-indicator | feature-window-d1 | label-window-d2 |
    /// aligned-window | precomputed [default: zero]
    #[arg(long)]
    pub bound: Option<String>,
    /// History window length for the window bounds [default: 5]
    #[arg(long)]
    pub window: Option<usize>,
    /// Precomputed bound: CSV matrix file (n rows of n reals, no header)
    #[arg(long)]
    pub matrix: Option<PathBuf>,
    /// Disable the D1 missing-class penalty (epsilon + 1)
    #[arg(long)]
    #[serde(default)]
    pub no_d1_penalty: bool,

    /// Subroutine: sgd | gnb | erm [default: gnb]
    #[arg(long)]
    pub subroutine: Option<String>,
    /// SGD learning rate [default: 0.1]
    #[arg(long)]
    pub lr: Option<f64>,
    /// ERM hypotheses: entries split by ';', e.g. "const:0;const:1;linear:0.5,-1"
    #[arg(long, allow_hyphen_values = true)]
    pub hypotheses: Option<String>,

    /// Conversion: last | averaging | score-based [default: last]
    #[arg(long)]
    pub conversion: Option<String>,
    /// Score-based confidence delta [default: 0.05]
    #[arg(long)]
    pub delta: Option<f64>,
    /// Loss: zero-one | logistic [default: zero-one]
    #[arg(long)]
    pub loss: Option<String>,

    /// Fixed threshold epsilon (exactly one of --epsilon/--schedule/--grid)
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Decaying threshold "EPS0:GAMMA" for eps0 * n^-gamma; GAMMA optional
    /// [default gamma: 0.25]
    #[arg(long)]
    pub schedule: Option<String>,
    /// Threshold grid, comma-separated (sweep and ensemble)
    /// [default: 0.15..0.47 for feature bounds, 0.005..0.5 otherwise]
    #[arg(long)]
    pub grid: Option<String>,

    /// Ensemble combiner: ftl | ewa
    #[arg(long)]
    pub combiner: Option<String>,
    /// EWA learning rate [default: sqrt(8 ln K / n)]
    #[arg(long)]
    pub eta: Option<f64>,
    /// EWA: sample a member per step instead of the weighted vote
    #[arg(long)]
    #[serde(default)]
    pub ewa_sample: bool,

    /// Disable warm-starting new subroutines from the closest record
    #[arg(long)]
    #[serde(default)]
    pub no_warm_start: bool,
    /// Record per-subroutine update steps in the summary
    #[arg(long)]
    #[serde(default)]
    pub diagnostics: bool,

    /// Trace CSV output [default: trace.csv]
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Summary JSON output [default: summary.json]
    #[arg(long)]
    pub summary: Option<PathBuf>,
    /// Directory for sweep/member outputs [default: .]
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Sweep: error-rate table output [default: sweep_table.csv]
    #[arg(long)]
    pub table: Option<PathBuf>,
    /// Verify: use the greedy covering surrogate (upper side only) when the
    /// sequence is longer than the exact-solver cap
    #[arg(long)]
    #[serde(default)]
    pub greedy: bool,
}

/// Fills in the default threshold grid for sweep/ensemble when none of the
/// threshold options is set: the D1-style grid for feature-window bounds,
/// the D2-style grid otherwise.
pub fn inject_default_grid(options: &mut RunOptions) {
    if options.epsilon.is_none() && options.schedule.is_none() && options.grid.is_none() {
        let grid = match options.bound.as_deref() {
            Some("feature-window-d1") | Some("aligned-window") => {
                crm_core::ensemble::default_d1_grid()
            }
            _ => crm_core::ensemble::default_d2_grid(),
        };
        let rendered: Vec<String> = grid.iter().map(|g| g.to_string()).collect();
        options.grid = Some(rendered.join(","));
    }
}

macro_rules! merge_option {
    ($dst:expr, $src:expr, $($field:ident),+ $(,)?) => {
        $( if $dst.$field.is_none() { $dst.$field = $src.$field.clone(); } )+
    };
}

macro_rules! merge_flag {
    ($dst:expr, $src:expr, $($field:ident),+ $(,)?) => {
        $( $dst.$field = $dst.$field || $src.$field; )+
    };
}

impl RunOptions {
    /// Loads the `--config` file (when given) and fills every unset option
    /// from it.
    pub fn merged_with_config(mut self) -> Result<Self> {
        let Some(path) = self.config.clone() else {
            return Ok(self);
        };
        let text = std::fs::read_to_string(&path)?;
        let file: RunOptions = serde_json::from_str(&text)
            .map_err(|e| CrmError::Config(format!("config file {}: {e}", path.display())))?;
        merge_option!(
            self, file, process, classes, feature_dim, steps, seed, probs, means, noise_std,
            states, stay, transition, start_state, period, regimes, csv, label_column,
            feature_columns, chunk_key, bound, window, matrix, subroutine, lr, hypotheses,
            conversion, delta, loss, epsilon, schedule, grid, combiner, eta, out, summary,
            out_dir, table,
        );
        merge_flag!(
            self, file, label_feature, no_d1_penalty, ewa_sample, no_warm_start, diagnostics,
            greedy,
        );
        Ok(self)
    }
}

/// Threshold selection after validation: exactly one variant is configured.
#[derive(Debug, Clone)]
pub enum ThresholdSpec {
    Fixed(f64),
    Schedule { epsilon0: f64, gamma: f64 },
    Grid(Vec<f64>),
}

/// A fully resolved run specification.
pub struct RunSpec {
    pub descriptor: ProcessDescriptor,
    pub steps: usize,
    pub bound: BoundConfig,
    pub macro_config: MacroConfig,
    pub threshold: ThresholdSpec,
    pub combiner: Option<String>,
    pub eta: Option<f64>,
    pub ewa_sample: bool,
    pub out: PathBuf,
    pub summary: PathBuf,
    /// Explicitly requested member/sweep output directory.
    pub out_dir: Option<PathBuf>,
    pub table: PathBuf,
    pub greedy: bool,
}

fn parse_f64_list(text: &str, what: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| CrmError::Config(format!("{what}: `{s}` is not a number")))
        })
        .collect()
}

fn parse_mean_table(text: &str, what: &str) -> Result<Vec<Vec<f64>>> {
    text.split(';').map(|row| parse_f64_list(row, what)).collect()
}

fn read_matrix_csv(path: &Path) -> Result<Vec<Vec<f64>>> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| parse_f64_list(l, "matrix row"))
        .collect()
}

fn parse_hypotheses(text: &str) -> Result<Vec<Hypothesis>> {
    text.split(';')
        .map(|entry| {
            let entry = entry.trim();
            match entry.split_once(':') {
                Some(("const", c)) => c
                    .trim()
                    .parse::<usize>()
                    .map(Hypothesis::Constant)
                    .map_err(|_| CrmError::Config(format!("hypothesis `{entry}`: bad class"))),
                Some(("linear", w)) => Ok(Hypothesis::Linear(parse_f64_list(w, "hypothesis")?)),
                _ => Err(CrmError::Config(format!(
                    "hypothesis `{entry}` must be const:<class> or linear:<w1,..,wd,bias>"
                ))),
            }
        })
        .collect()
}

impl RunSpec {
    pub fn resolve(options: &RunOptions) -> Result<Self> {
        let classes = options.classes.or(options.states).unwrap_or(2);
        let feature_dim = options.feature_dim.unwrap_or(0);
        let seed = options.seed.unwrap_or(0);
        let steps = options.steps.unwrap_or(1000);

        let process = options
            .process
            .as_deref()
            .ok_or_else(|| CrmError::Config("--process is required".into()))?;
        let kind = match process {
            "iid" => ProcessKind::Iid {
                class_probs: match &options.probs {
                    Some(p) => parse_f64_list(p, "--probs")?,
                    None => vec![1.0 / classes as f64; classes],
                },
                class_means: options
                    .means
                    .as_deref()
                    .map(|m| parse_mean_table(m, "--means"))
                    .transpose()?,
                noise_std: options.noise_std.unwrap_or(1.0),
            },
            "markov" => {
                let transition = match (&options.transition, options.stay) {
                    (Some(path), _) => read_matrix_csv(path)?,
                    (None, Some(stay)) => {
                        if !(0.0..=1.0).contains(&stay) {
                            return Err(CrmError::Config("--stay must lie in [0, 1]".into()));
                        }
                        let off = if classes > 1 {
                            (1.0 - stay) / (classes - 1) as f64
                        } else {
                            0.0
                        };
                        (0..classes)
                            .map(|i| {
                                (0..classes)
                                    .map(|j| if i == j { stay } else { off })
                                    .collect()
                            })
                            .collect()
                    }
                    (None, None) => {
                        return Err(CrmError::Config(
                            "markov process needs --stay or --transition".into(),
                        ))
                    }
                };
                ProcessKind::MarkovLabel {
                    transition,
                    start_state: options.start_state.unwrap_or(0),
                    label_feature: options.label_feature,
                }
            }
            "regime-drift" => ProcessKind::RegimeDrift {
                regimes: options
                    .regimes
                    .as_deref()
                    .ok_or_else(|| CrmError::Config("regime-drift needs --regimes".into()))?
                    .split('|')
                    .map(|r| parse_mean_table(r, "--regimes"))
                    .collect::<Result<_>>()?,
                period: options
                    .period
                    .ok_or_else(|| CrmError::Config("regime-drift needs --period".into()))?,
                class_probs: match &options.probs {
                    Some(p) => parse_f64_list(p, "--probs")?,
                    None => vec![1.0 / classes as f64; classes],
                },
                noise_std: options.noise_std.unwrap_or(1.0),
            },
            "csv" => ProcessKind::Csv {
                path: options
                    .csv
                    .as_ref()
                    .ok_or_else(|| CrmError::Config("csv process needs --csv".into()))?
                    .to_string_lossy()
                    .into_owned(),
                schema: CsvSchema {
                    label_column: options
                        .label_column
                        .clone()
                        .ok_or_else(|| CrmError::Config("csv process needs --label-column".into()))?,
                    feature_columns: options
                        .feature_columns
                        .as_deref()
                        .map(|s| s.split(',').map(|c| c.trim().to_string()).collect())
                        .unwrap_or_default(),
                    chunk_key: options.chunk_key.clone(),
                },
            },
            other => {
                return Err(CrmError::Config(format!(
                    "unknown process kind `{other}` (iid | markov | regime-drift | csv)"
                )))
            }
        };
        let descriptor = ProcessDescriptor {
            kind,
            num_classes: classes,
            feature_dim,
            seed,
        };

        let window_len = options.window.unwrap_or(DEFAULT_WINDOW_LEN);
        let bound = match options.bound.as_deref().unwrap_or("zero") {
            "zero" => BoundConfig::Zero,
            "markov-indicator" => BoundConfig::MarkovIndicator,
            "feature-window-d1" => BoundConfig::FeatureWindowD1 {
                window_len,
                missing_class_penalty: !options.no_d1_penalty,
            },
            "label-window-d2" => BoundConfig::LabelWindowD2 { window_len },
            "aligned-window" => BoundConfig::AlignedWindow { window_len },
            "precomputed" => BoundConfig::PrecomputedMatrix {
                matrix: crm_core::analysis::DistanceMatrix::from_csv(
                    options.matrix.as_ref().ok_or_else(|| {
                        CrmError::Config("precomputed bound needs --matrix".into())
                    })?,
                )?
                .rows()
                .to_vec(),
            },
            other => {
                return Err(CrmError::Config(format!(
                    "unknown bound kind `{other}`"
                )))
            }
        };

        let subroutine = match options.subroutine.as_deref().unwrap_or("gnb") {
            "sgd" => SubroutineKind::SgdLogistic {
                learning_rate: options.lr.unwrap_or(0.1),
            },
            "gnb" => SubroutineKind::GaussianNb,
            "erm" => SubroutineKind::FiniteErm {
                hypotheses: parse_hypotheses(options.hypotheses.as_deref().ok_or_else(|| {
                    CrmError::Config("erm subroutine needs --hypotheses".into())
                })?)?,
            },
            other => {
                return Err(CrmError::Config(format!(
                    "unknown subroutine `{other}` (sgd | gnb | erm)"
                )))
            }
        };

        let conversion = match options.conversion.as_deref().unwrap_or("last") {
            "last" => ConversionMode::Last,
            "averaging" => ConversionMode::Averaging,
            "score-based" => ConversionMode::ScoreBased,
            other => {
                return Err(CrmError::Config(format!(
                    "unknown conversion `{other}` (last | averaging | score-based)"
                )))
            }
        };

        let loss = match options.loss.as_deref().unwrap_or("zero-one") {
            "zero-one" => LossKind::ZeroOne,
            "logistic" => LossKind::Logistic,
            other => {
                return Err(CrmError::Config(format!(
                    "unknown loss `{other}` (zero-one | logistic)"
                )))
            }
        };

        let mut threshold_sources = 0;
        if options.epsilon.is_some() {
            threshold_sources += 1;
        }
        if options.schedule.is_some() {
            threshold_sources += 1;
        }
        if options.grid.is_some() {
            threshold_sources += 1;
        }
        if threshold_sources != 1 {
            return Err(CrmError::Config(
                "exactly one of --epsilon, --schedule, --grid must be set".into(),
            ));
        }
        let threshold = if let Some(eps) = options.epsilon {
            ThresholdSpec::Fixed(eps)
        } else if let Some(sched) = &options.schedule {
            let (eps0, gamma) = match sched.split_once(':') {
                Some((e, g)) => (
                    e.trim().parse::<f64>().map_err(|_| {
                        CrmError::Config(format!("--schedule: `{e}` is not a number"))
                    })?,
                    g.trim().parse::<f64>().map_err(|_| {
                        CrmError::Config(format!("--schedule: `{g}` is not a number"))
                    })?,
                ),
                None => (
                    sched.trim().parse::<f64>().map_err(|_| {
                        CrmError::Config(format!("--schedule: `{sched}` is not a number"))
                    })?,
                    DEFAULT_DECAY_GAMMA,
                ),
            };
            ThresholdSpec::Schedule {
                epsilon0: eps0,
                gamma,
            }
        } else {
            ThresholdSpec::Grid(parse_f64_list(options.grid.as_deref().unwrap(), "--grid")?)
        };

        let schedule = match &threshold {
            ThresholdSpec::Fixed(eps) => EpsilonSchedule::constant(*eps),
            ThresholdSpec::Schedule { epsilon0, gamma } => EpsilonSchedule::Decaying {
                epsilon0: *epsilon0,
                gamma: *gamma,
            },
            // grid members each get their own constant; placeholder for validation
            ThresholdSpec::Grid(grid) => EpsilonSchedule::constant(grid[0].max(f64::MIN_POSITIVE)),
        };

        let macro_config = MacroConfig {
            subroutine,
            conversion,
            conversion_delta: options.delta.unwrap_or(DEFAULT_SCORE_DELTA),
            loss,
            schedule,
            warm_start: !options.no_warm_start,
            diagnostics: options.diagnostics,
            num_classes: classes,
            feature_dim,
        };

        Ok(RunSpec {
            descriptor,
            steps,
            bound,
            macro_config,
            threshold,
            combiner: options.combiner.clone(),
            eta: options.eta,
            ewa_sample: options.ewa_sample,
            out: options.out.clone().unwrap_or_else(|| "trace.csv".into()),
            summary: options
                .summary
                .clone()
                .unwrap_or_else(|| "summary.json".into()),
            out_dir: options.out_dir.clone(),
            table: options
                .table
                .clone()
                .unwrap_or_else(|| "sweep_table.csv".into()),
            greedy: options.greedy,
        })
    }

    pub fn subroutine_name(&self) -> &'static str {
        match self.macro_config.subroutine {
            SubroutineKind::SgdLogistic { .. } => "sgd",
            SubroutineKind::GaussianNb => "gnb",
            SubroutineKind::FiniteErm { .. } => "erm",
        }
    }
}
