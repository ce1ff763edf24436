//! CSV ingestion into the common observation format.
//!
//! The schema is explicit (no inference): one label column, any number of
//! feature columns, and an optional chunk-key column whose values group rows
//! into chunks in first-appearance order.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{CrmError, Result};
use crate::process::{Chunk, Observation};

/// Column mapping for a CSV stream. Feature cells parse as 64-bit reals,
/// label cells as non-negative integers.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CsvSchema {
    pub label_column: String,
    #[serde(default)]
    pub feature_columns: Vec<String>,
    #[serde(default)]
    pub chunk_key: Option<String>,
}

/// Reads a UTF-8, comma-separated file with a header line and groups rows by
/// the chunk-key value (one row per chunk when no key is configured). Each
/// group becomes one time step, ordered by first appearance.
pub fn ingest_csv(path: &Path, schema: &CsvSchema) -> Result<Vec<Chunk>> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let headers = reader.headers()?.clone();
    let column_index = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| CrmError::Schema(name.to_string()))
    };

    let label_idx = column_index(&schema.label_column)?;
    let feature_idx: Vec<usize> = schema
        .feature_columns
        .iter()
        .map(|c| column_index(c))
        .collect::<Result<_>>()?;
    let key_idx = match &schema.chunk_key {
        Some(c) => Some(column_index(c)?),
        None => None,
    };

    // Groups keyed by chunk-key value, kept in first-appearance order.
    let mut groups: Vec<Vec<(Vec<f64>, usize)>> = Vec::new();
    let mut key_to_group: HashMap<String, usize> = HashMap::new();

    for record in reader.records() {
        let record = record?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let cell = |idx: usize| -> Result<&str> {
            record.get(idx).ok_or_else(|| CrmError::Row {
                line,
                message: format!("missing field {idx}"),
            })
        };

        let label: usize = cell(label_idx)?.trim().parse().map_err(|_| CrmError::Row {
            line,
            message: format!(
                "label cell `{}` is not a non-negative integer",
                record.get(label_idx).unwrap_or("")
            ),
        })?;
        let mut features = Vec::with_capacity(feature_idx.len());
        for &idx in &feature_idx {
            let raw = cell(idx)?;
            let value: f64 = raw.trim().parse().map_err(|_| CrmError::Row {
                line,
                message: format!("feature cell `{raw}` is not a real number"),
            })?;
            features.push(value);
        }

        let group = match key_idx {
            Some(idx) => {
                let key = cell(idx)?.to_string();
                match key_to_group.get(&key) {
                    Some(&g) => g,
                    None => {
                        groups.push(Vec::new());
                        key_to_group.insert(key, groups.len() - 1);
                        groups.len() - 1
                    }
                }
            }
            None => {
                groups.push(Vec::new());
                groups.len() - 1
            }
        };
        groups[group].push((features, label));
    }

    groups
        .into_iter()
        .enumerate()
        .map(|(i, rows)| {
            let t = (i + 1) as u64;
            Chunk::new(
                rows.into_iter()
                    .map(|(features, label)| Observation::new(features, label, t))
                    .collect(),
            )
        })
        .collect()
}
