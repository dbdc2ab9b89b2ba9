//! CSV ingestion and emission of [`ExperimentData`].

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::ExperimentData;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("column '{0}' not found in header")]
    MissingColumn(String),
    #[error("row {row}, column '{column}': cannot parse '{value}' as {expected}")]
    Parse { row: usize, column: String, value: String, expected: &'static str },
    #[error("row {row} has {found} fields, header has {expected}")]
    Ragged { row: usize, expected: usize, found: usize },
    #[error("column '{0}' is assigned more than one role")]
    DuplicateRole(String),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Column roles. Unset roles leave the matching field empty.
///
/// When `covariates` is absent, every column without another role is used;
/// an empty list means no adjustment covariates.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Schema {
    pub outcome: Option<String>,
    pub assignment: Option<String>,
    pub block: Option<String>,
    pub design: Vec<String>,
    pub covariates: Option<Vec<String>>,
}

impl Schema {
    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    fn named_roles(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        out.extend(self.outcome.as_deref());
        out.extend(self.assignment.as_deref());
        out.extend(self.block.as_deref());
        out
    }
}

pub fn ingest_csv(path: impl AsRef<Path>, schema: &Schema) -> Result<ExperimentData, IngestError> {
    let file = std::fs::File::open(path)?;
    ingest_reader(file, schema)
}

pub fn ingest_reader<R: Read>(reader: R, schema: &Schema) -> Result<ExperimentData, IngestError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let index: HashMap<&str, usize> = header.iter().enumerate().map(|(i, h)| (h.as_str(), i)).collect();
    let find = |name: &str| index.get(name).copied().ok_or_else(|| IngestError::MissingColumn(name.to_string()));

    let named = schema.named_roles();
    let mut seen: Vec<&str> = Vec::new();
    for name in named.iter().copied().chain(schema.design.iter().map(String::as_str)) {
        if seen.contains(&name) {
            return Err(IngestError::DuplicateRole(name.to_string()));
        }
        seen.push(name);
    }
    let covariates: Vec<String> = match &schema.covariates {
        Some(list) => list.clone(),
        None => header
            .iter()
            .filter(|h| !named.contains(&h.as_str()) && !schema.design.contains(h))
            .cloned()
            .collect(),
    };

    let outcome_col = schema.outcome.as_deref().map(find).transpose()?;
    let assign_col = schema.assignment.as_deref().map(find).transpose()?;
    let block_col = schema.block.as_deref().map(find).transpose()?;
    let design_cols = schema.design.iter().map(|c| find(c)).collect::<Result<Vec<_>, _>>()?;
    let covar_cols = covariates.iter().map(|c| find(c)).collect::<Result<Vec<_>, _>>()?;

    let number = |row: usize, col: usize, raw: &str| -> Result<f64, IngestError> {
        let trimmed = raw.trim();
        trimmed
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| IngestError::Parse {
                row,
                column: header[col].clone(),
                value: raw.to_string(),
                expected: "a finite number",
            })
    };

    let mut x_vals = Vec::new();
    let mut w_vals = Vec::new();
    let mut y = Vec::new();
    let mut z = Vec::new();
    let mut block_of = Vec::new();
    let mut block_names: Vec<String> = Vec::new();
    let mut block_index: HashMap<String, usize> = HashMap::new();

    for (i, record) in rdr.records().enumerate() {
        let record = record?;
        let row = i + 1;
        if record.len() != header.len() {
            return Err(IngestError::Ragged { row, expected: header.len(), found: record.len() });
        }
        for &c in &covar_cols {
            x_vals.push(number(row, c, &record[c])?);
        }
        for &c in &design_cols {
            w_vals.push(number(row, c, &record[c])?);
        }
        if let Some(c) = outcome_col {
            y.push(number(row, c, &record[c])?);
        }
        if let Some(c) = assign_col {
            let value = match record[c].trim() {
                "0" => 0u8,
                "1" => 1u8,
                other => {
                    return Err(IngestError::Parse {
                        row,
                        column: header[c].clone(),
                        value: other.to_string(),
                        expected: "0 or 1",
                    })
                }
            };
            z.push(value);
        }
        let label = block_col.map_or("1", |c| record[c].trim()).to_string();
        let next = block_index.len();
        let idx = *block_index.entry(label.clone()).or_insert_with(|| {
            block_names.push(label);
            next
        });
        block_of.push(idx);
    }

    let n = block_of.len();
    let x = Array2::from_shape_vec((n, covar_cols.len()), x_vals).expect("row-major covariates");
    let w = Array2::from_shape_vec((n, design_cols.len()), w_vals).expect("row-major design covariates");
    Ok(ExperimentData {
        x,
        x_names: covariates,
        w,
        w_names: schema.design.clone(),
        block_of,
        block_names,
        z: assign_col.map(|_| z),
        y: outcome_col.map(|_| y),
    })
}

/// Format used for every floating-point cell: 17 significant digits.
pub fn format_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Writes `data` as CSV with columns block, assignment, outcome, design
/// covariates, covariates (absent fields are skipped). The returned schema
/// reads the file back.
pub fn write_csv<W: Write>(data: &ExperimentData, out: W) -> Result<Schema, IngestError> {
    let mut wtr = csv::Writer::from_writer(out);
    let mut header = vec!["block".to_string()];
    if data.z.is_some() {
        header.push("assignment".into());
    }
    if data.y.is_some() {
        header.push("outcome".into());
    }
    header.extend(data.w_names.iter().cloned());
    header.extend(data.x_names.iter().cloned());
    wtr.write_record(&header)?;
    for i in 0..data.n() {
        let mut rec = vec![data
            .block_names
            .get(data.block_of[i])
            .cloned()
            .unwrap_or_else(|| (data.block_of[i] + 1).to_string())];
        if let Some(z) = &data.z {
            rec.push(z[i].to_string());
        }
        if let Some(y) = &data.y {
            rec.push(format_f64(y[i]));
        }
        rec.extend(data.w.row(i).iter().map(|&v| format_f64(v)));
        rec.extend(data.x.row(i).iter().map(|&v| format_f64(v)));
        wtr.write_record(&rec)?;
    }
    wtr.flush()?;
    Ok(Schema {
        outcome: data.y.as_ref().map(|_| "outcome".into()),
        assignment: data.z.as_ref().map(|_| "assignment".into()),
        block: Some("block".into()),
        design: data.w_names.clone(),
        covariates: Some(data.x_names.clone()),
    })
}
