//! Offline verification tooling: exact and greedy covering numbers over a
//! step-by-step distance matrix, pseudometric validation, the pool-size
//! sandwich check, and report output.
//!
//! The covering convention is internal with closed balls: centers are drawn
//! from the point set and a point is covered when its distance to a center is
//! at most ε, matching the run-time test `M(t, τ) ≤ ε`.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;

use crate::discrepancy::{replay_windows, window_distance, BoundConfig};
use crate::ensemble::{CombinerInfo, EnsembleSummary, EnsembleTraceRow};
use crate::error::{CrmError, Result};
use crate::macro_core::{RunSummary, StepTrace};
use crate::process::Chunk;

/// Largest matrix the exact covering solver accepts.
pub const EXACT_COVERING_CAP: usize = 20;

/// Dense step-by-step distance matrix. Construction does not require the
/// pseudometric axioms — [`validate_pseudometric`] is the gate for the
/// verification paths — but the matrix must be square.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    data: Vec<Vec<f64>>,
}

impl DistanceMatrix {
    pub fn from_rows(data: Vec<Vec<f64>>) -> Result<Self> {
        if data.is_empty() {
            return Err(CrmError::Precondition(
                "distance matrix must be nonempty".into(),
            ));
        }
        let n = data.len();
        if data.iter().any(|row| row.len() != n) {
            return Err(CrmError::Precondition(format!(
                "distance matrix must be square ({n} rows)"
            )));
        }
        Ok(DistanceMatrix { data })
    }

    /// Euclidean distances between explicit points.
    pub fn from_points(points: &[Vec<f64>]) -> Result<Self> {
        let n = points.len();
        let mut data = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in i + 1..n {
                let d = points[i]
                    .iter()
                    .zip(&points[j])
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                data[i][j] = d;
                data[j][i] = d;
            }
        }
        DistanceMatrix::from_rows(data)
    }

    /// Reads `n` headerless rows of `n` comma-separated reals.
    pub fn from_csv(path: &Path) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .from_path(path)?;
        let mut data = Vec::new();
        for record in reader.records() {
            let record = record?;
            let line = record.position().map(|p| p.line()).unwrap_or(0);
            let row: Vec<f64> = record
                .iter()
                .map(|cell| {
                    cell.trim().parse::<f64>().map_err(|_| CrmError::Row {
                        line,
                        message: format!("cell `{cell}` is not a real number"),
                    })
                })
                .collect::<Result<_>>()?;
            data.push(row);
        }
        DistanceMatrix::from_rows(data)
    }

    pub fn size(&self) -> usize {
        self.data.len()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i][j]
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.data
    }

    pub fn diameter(&self) -> f64 {
        self.data
            .iter()
            .flatten()
            .fold(0.0f64, |acc, &d| acc.max(d))
    }
}

/// First violated pseudometric axiom, if any.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricViolation {
    Negative { i: usize, j: usize },
    Diagonal { i: usize },
    Symmetry { i: usize, j: usize },
    Triangle { i: usize, j: usize, k: usize },
}

/// Result of checking symmetry, zero diagonal, non-negativity, and the
/// triangle inequality over all triples.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PseudometricReport {
    pub valid: bool,
    pub violation: Option<MetricViolation>,
}

const SYMMETRY_TOL: f64 = 1e-12;
const TRIANGLE_TOL: f64 = 1e-9;

pub fn validate_pseudometric(matrix: &DistanceMatrix) -> PseudometricReport {
    let n = matrix.size();
    let invalid = |violation| PseudometricReport {
        valid: false,
        violation: Some(violation),
    };
    for i in 0..n {
        if matrix.get(i, i).abs() > SYMMETRY_TOL {
            return invalid(MetricViolation::Diagonal { i });
        }
        for j in 0..n {
            if matrix.get(i, j) < 0.0 {
                return invalid(MetricViolation::Negative { i, j });
            }
            if j > i && (matrix.get(i, j) - matrix.get(j, i)).abs() > SYMMETRY_TOL {
                return invalid(MetricViolation::Symmetry { i, j });
            }
        }
    }
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                if matrix.get(i, k) > matrix.get(i, j) + matrix.get(j, k) + TRIANGLE_TOL {
                    return invalid(MetricViolation::Triangle { i, j, k });
                }
            }
        }
    }
    PseudometricReport {
        valid: true,
        violation: None,
    }
}

fn ball_masks(matrix: &DistanceMatrix, epsilon: f64) -> Vec<u32> {
    let n = matrix.size();
    (0..n)
        .map(|c| {
            let mut mask = 0u32;
            for p in 0..n {
                if matrix.get(p, c) <= epsilon {
                    mask |= 1 << p;
                }
            }
            mask
        })
        .collect()
}

/// Exact minimal number of centers (chosen among the points) whose closed
/// ε-balls cover all points, together with one optimal center set. Refuses
/// matrices larger than [`EXACT_COVERING_CAP`].
pub fn covering_number_exact_with_cover(
    matrix: &DistanceMatrix,
    epsilon: f64,
) -> Result<(usize, Vec<usize>)> {
    let n = matrix.size();
    if n > EXACT_COVERING_CAP {
        return Err(CrmError::Precondition(format!(
            "exact covering is capped at n = {EXACT_COVERING_CAP} (got {n}); use the greedy solver"
        )));
    }
    let balls = ball_masks(matrix, epsilon);
    let universe: u32 = if n == 32 { u32::MAX } else { (1 << n) - 1 };

    // Every point covers itself (closed balls, zero diagonal), so the greedy
    // size always exists and caps the search depth.
    let greedy_cap = covering_number_greedy(matrix, epsilon);

    fn search(
        uncovered: u32,
        depth_left: usize,
        balls: &[u32],
        chosen: &mut Vec<usize>,
        best: &mut Option<Vec<usize>>,
    ) -> bool {
        if uncovered == 0 {
            *best = Some(chosen.clone());
            return true;
        }
        if depth_left == 0 {
            return false;
        }
        // Branch on the uncovered point with the fewest candidate centers.
        let mut pivot = usize::MAX;
        let mut pivot_candidates = usize::MAX;
        let n = balls.len();
        for p in 0..n {
            if uncovered & (1 << p) == 0 {
                continue;
            }
            let candidates = (0..n).filter(|&c| balls[c] & (1 << p) != 0).count();
            if candidates < pivot_candidates {
                pivot = p;
                pivot_candidates = candidates;
            }
        }
        for c in 0..n {
            if balls[c] & (1 << pivot) == 0 {
                continue;
            }
            chosen.push(c);
            if search(uncovered & !balls[c], depth_left - 1, balls, chosen, best) {
                chosen.pop();
                return true;
            }
            chosen.pop();
        }
        false
    }

    for size in 1..=greedy_cap {
        let mut chosen = Vec::new();
        let mut best = None;
        if search(universe, size, &balls, &mut chosen, &mut best) {
            let cover = best.expect("search succeeded");
            return Ok((size, cover));
        }
    }
    // The greedy cover itself is feasible, so the loop always returns.
    unreachable!("greedy cover bounds the exact search")
}

/// Exact covering number; see [`covering_number_exact_with_cover`].
pub fn covering_number_exact(matrix: &DistanceMatrix, epsilon: f64) -> Result<usize> {
    covering_number_exact_with_cover(matrix, epsilon).map(|(size, _)| size)
}

/// Size of the farthest-first greedy ε-net: starts from point 0 and keeps
/// adding the point farthest from the chosen centers while that distance
/// exceeds ε. Always at least the exact covering number.
pub fn covering_number_greedy(matrix: &DistanceMatrix, epsilon: f64) -> usize {
    let n = matrix.size();
    let mut dist: Vec<f64> = (0..n).map(|p| matrix.get(p, 0)).collect();
    let mut centers = 1;
    loop {
        let mut farthest = 0;
        for p in 1..n {
            if dist[p] > dist[farthest] {
                farthest = p;
            }
        }
        if dist[farthest] <= epsilon {
            return centers;
        }
        centers += 1;
        for (p, d) in dist.iter_mut().enumerate() {
            *d = d.min(matrix.get(p, farthest));
        }
    }
}

/// Which side of the sandwich failed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SandwichSide {
    Lower,
    Upper,
}

/// Certificates of one sandwich check: `lower <= pool_size <= upper`.
#[derive(Debug, Clone, Serialize)]
pub struct Lemma1Report {
    pub pass: bool,
    pub pool_size: usize,
    pub epsilon: f64,
    /// Exact covering number at ε and its witness centers (0-based steps).
    pub lower: usize,
    pub lower_cover: Vec<usize>,
    /// Exact covering number at ε/2 and its witness centers.
    pub upper: usize,
    pub upper_cover: Vec<usize>,
    pub violated: Option<SandwichSide>,
}

/// Checks the pool-size sandwich `N(ε) <= N_n <= N(ε/2)` against the exact
/// covering oracle. Declines matrices that fail pseudometric validation,
/// since the sandwich argument needs metric-like structure.
pub fn verify_lemma1(
    pool_size: usize,
    matrix: &DistanceMatrix,
    epsilon: f64,
) -> Result<Lemma1Report> {
    let report = validate_pseudometric(matrix);
    if !report.valid {
        return Err(CrmError::Evaluation(format!(
            "bound matrix is not a pseudometric: {:?}",
            report.violation
        )));
    }
    let (lower, lower_cover) = covering_number_exact_with_cover(matrix, epsilon)?;
    let (upper, upper_cover) = covering_number_exact_with_cover(matrix, epsilon / 2.0)?;
    let violated = if pool_size < lower {
        Some(SandwichSide::Lower)
    } else if pool_size > upper {
        Some(SandwichSide::Upper)
    } else {
        None
    };
    Ok(Lemma1Report {
        pass: violated.is_none(),
        pool_size,
        epsilon,
        lower,
        lower_cover,
        upper,
        upper_cover,
        violated,
    })
}

/// Replays the bound over a finished sequence into the full step-by-step
/// matrix `M(i, j)`. `epsilon` feeds the D1 missing-class penalty.
pub fn bound_matrix(
    config: &BoundConfig,
    num_classes: usize,
    chunks: &[Chunk],
    epsilon: f64,
) -> Result<DistanceMatrix> {
    if chunks.is_empty() {
        return Err(CrmError::Precondition("sequence must be nonempty".into()));
    }
    if let BoundConfig::PrecomputedMatrix { matrix } = config {
        let mut rows: Vec<Vec<f64>> = matrix.clone();
        rows.truncate(chunks.len());
        for row in rows.iter_mut() {
            row.truncate(chunks.len());
        }
        return DistanceMatrix::from_rows(rows);
    }
    let windows = replay_windows(config, chunks);
    let n = windows.len();
    let mut rows = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let d = window_distance(config, num_classes, &windows[i], &windows[j], epsilon)?;
            rows[i][j] = d;
            rows[j][i] = d;
        }
    }
    DistanceMatrix::from_rows(rows)
}

fn create_writer(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

/// Writes the per-step trace with the header
/// `step,chosen_id,created,pool_size,prediction,label,loss,epsilon`.
pub fn write_trace_csv(path: &Path, traces: &[StepTrace]) -> Result<()> {
    let mut w = create_writer(path)?;
    writeln!(w, "step,chosen_id,created,pool_size,prediction,label,loss,epsilon")?;
    for t in traces {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            t.step,
            t.chosen_id,
            t.created as u8,
            t.pool_size,
            t.prediction,
            t.label,
            t.loss,
            t.epsilon
        )?;
    }
    Ok(())
}

/// Writes a run summary as a JSON document.
pub fn write_summary_json<S: Serialize>(path: &Path, summary: &S) -> Result<()> {
    let mut w = create_writer(path)?;
    serde_json::to_writer_pretty(&mut w, summary)
        .map_err(|e| CrmError::Evaluation(format!("summary serialization failed: {e}")))?;
    writeln!(w)?;
    Ok(())
}

/// Writes trace and summary for one run.
pub fn error_report(
    trace_path: &Path,
    summary_path: &Path,
    traces: &[StepTrace],
    summary: &RunSummary,
) -> Result<()> {
    write_trace_csv(trace_path, traces)?;
    write_summary_json(summary_path, summary)
}

/// Writes the ensemble trace; the combiner columns depend on the rule.
pub fn write_ensemble_trace_csv(path: &Path, trace: &[EnsembleTraceRow]) -> Result<()> {
    let mut w = create_writer(path)?;
    let ftl = matches!(trace.first().map(|r| &r.combiner), Some(CombinerInfo::Choice(_)));
    if ftl {
        writeln!(w, "step,prediction,label,loss,combiner_choice")?;
    } else {
        writeln!(w, "step,prediction,label,loss,top_weight_member,top_weight")?;
    }
    for row in trace {
        match &row.combiner {
            CombinerInfo::Choice(c) => writeln!(
                w,
                "{},{},{},{},{}",
                row.step, row.prediction, row.label, row.loss, c
            )?,
            CombinerInfo::TopWeight { member, weight } => writeln!(
                w,
                "{},{},{},{},{},{}",
                row.step, row.prediction, row.label, row.loss, member, weight
            )?,
        }
    }
    Ok(())
}

/// Writes the ensemble summary as JSON.
pub fn write_ensemble_summary_json(path: &Path, summary: &EnsembleSummary) -> Result<()> {
    write_summary_json(path, summary)
}

/// Error-rate table over a sweep: one row per threshold, one column per
/// subroutine name.
pub fn write_error_table(
    path: &Path,
    thresholds: &[f64],
    subroutines: &[String],
    error_rates: &[Vec<f64>],
) -> Result<()> {
    if error_rates.len() != thresholds.len()
        || error_rates.iter().any(|row| row.len() != subroutines.len())
    {
        return Err(CrmError::Precondition(
            "error table shape must be thresholds x subroutines".into(),
        ));
    }
    let mut w = create_writer(path)?;
    writeln!(w, "epsilon,{}", subroutines.join(","))?;
    for (eps, row) in thresholds.iter().zip(error_rates) {
        let cells: Vec<String> = row.iter().map(|e| e.to_string()).collect();
        writeln!(w, "{},{}", eps, cells.join(","))?;
    }
    Ok(())
}
